"""
Learning activity regimes from perturbed reports
================================================

The aggregator stitches each pseudonym's reports into a slot-ordered
sequence (empty slots hold the null symbol) and fits an HMM with
Baum-Welch. Hidden states end up tracking activity regimes; the ones whose
emissions lean on disease-related terms are marked sensitive.
"""

import numpy as np

from smarthome_ldp import simgen
from smarthome_ldp.pipeline import (
    PipelineConfig,
    ReportStore,
    build_sequences,
    fit_hmm,
    label_states,
    sensitive_states,
)

ds = simgen.generate_dataset(simgen.ScenarioConfig())
domain, topics = ds.query_domain, ds.query_topics
print(f"{len(ds.queries)} query events, {len(ds.metadata['users'])} users, "
      f"topic users {ds.metadata['topic_user_counts']}")

cfg = PipelineConfig()
reports = simgen.perturb_events(ds.queries, domain, cfg.epsilon_ldp, cfg.seed)
seqs = build_sequences(ReportStore.replay(reports, domain))
print(f"{len(seqs)} sequences of length {len(seqs[0])}")

params, trace, _ = fit_hmm(cfg, seqs, domain)
print(f"log-likelihood {trace[0]:.1f} -> {trace[-1]:.1f} in {len(trace)} iterations")

labels = label_states(params, domain, topics)
sens = sensitive_states(params, domain, topics, cfg.sensitive_topics)
for j, lab in enumerate(labels):
    top = np.argsort(-params.emit[j, :domain.k])[:4]
    flag = "sensitive" if sens and j in sens.state_indices else ""
    print(f"state {j} [{lab:9s}] {flag:9s} null={params.emit[j, -1]:.2f} "
          + ", ".join(domain.symbols[i] for i in top))
