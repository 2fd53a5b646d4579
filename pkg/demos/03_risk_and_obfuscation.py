"""
Risk scores and obfuscation plans
=================================

Risk is the posterior time spent in sensitive states, summed and capped at
five events. Under the generator's own model every disease query is
unambiguous, so the score climbs in steps of 0.2. We then obfuscate one
home and print the substitutions the greedy planner made.
"""

import numpy as np

from smarthome_ldp import simgen
from smarthome_ldp.evaluation import risk_by_event_count
from smarthome_ldp.ldp import PerturbedReport
from smarthome_ldp.pipeline import ReportStore, build_sequences
from smarthome_ldp.risk import ObfuscationPolicy, obfuscate_sequence, sequence_risk

cfg = simgen.ScenarioConfig()
ds = simgen.generate_dataset(cfg)
domain, topics = ds.query_domain, ds.query_topics
oracle, sens = simgen.oracle_model(cfg)

# ground truth as sequences (no perturbation here, we want the clean curve)
raw = [PerturbedReport(e.pseudonym, e.slot, e.symbol, 1.0)
       for e in sorted(ds.queries, key=lambda e: (e.pseudonym, e.slot))]
seqs = build_sequences(ReportStore.replay(raw, domain), cfg.horizon)
sensitive_syms = {domain.obs_index(s) for s, t in topics.items() if t != simgen.GENERAL}

home = max(seqs, key=lambda s: sum(int(o) in sensitive_syms for o in s.obs))
curve = risk_by_event_count(oracle, home, sens, sensitive_syms, 5, (domain.null_index,))
print("risk after each sensitive query:", np.round(curve[:8], 2))

risks = [sequence_risk(oracle, s, sens, 5, (domain.null_index,)).aggregate_risk for s in seqs]
print(f"homes at risk 1.0: {sum(r == 1.0 for r in risks)} of {len(seqs)}")

# obfuscate a moderately exposed home
mid = min((s for s, r in zip(seqs, risks) if 0.4 < r), key=lambda s: sum(
    int(o) in sensitive_syms for o in s.obs))
policy = ObfuscationPolicy(ignore=(domain.null_index,))
out, plan = obfuscate_sequence(oracle, mid, sens, 0.4, policy)
print(f"\nrisk {plan.original_risk:.2f} -> {plan.residual_risk:.2f}, "
      f"utility loss {plan.utility_loss:.2f}, unmet={plan.unmet_threshold}")
for rec in plan.records():
    print(f"  slot {rec['slot']:2d}: {rec['original']:>16s} -> {rec['chosen']:<10s} "
          f"loss={rec['utility_loss']:.2f} risk {rec['risk_before']:.2f}->{rec['risk_after']:.2f}")
