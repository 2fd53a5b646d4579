"""Command-line front end.

Every subcommand writes under ``--out`` and exits 0 on success, 1 with a
stage-tagged message on failure, 2 on bad usage (argparse's default).
Configuration files are JSON with optional ``scenario`` and ``pipeline``
sections.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import simgen
from .dp_noise import NoiseConfig, privatize_hmm
from .exceptions import ConfigError, SmartHomeLDPError, StageError
from .hmm import ExpectedCounts, load_model, save_model, sequence_log_likelihoods, total_log_likelihood
from .ldp import CategoryDomain, PrivacyBudget, estimate_frequencies, verify_ldp
from .pipeline import (
    PipelineConfig,
    ReportStore,
    build_sequences,
    fit_hmm,
    read_reports,
    run_pipeline,
    sensitive_states,
    sequences_to_reports,
    write_reports,
    write_run_report,
    write_table,
)
from .risk import (
    PLAN_COLUMNS,
    ObfuscationPolicy,
    SensitiveStateSet,
    emission_similarity,
    load_similarity,
    obfuscate_sequence,
    sequence_risk,
)


# -- config ----------------------------------------------------------------------

def load_config(path, seed=None) -> tuple[simgen.ScenarioConfig, PipelineConfig]:
    doc = {}
    if path:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict) or set(doc) - {"scenario", "pipeline"}:
            raise ConfigError("config must be an object with 'scenario' and/or 'pipeline'")
    scen = dict(doc.get("scenario", {}))
    pipe = dict(doc.get("pipeline", {}))
    if seed is not None:
        scen["seed"] = seed
        pipe["seed"] = seed
    try:
        return simgen.ScenarioConfig.from_dict(scen), PipelineConfig.from_dict(pipe)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _domain_for(data: Path, explicit=None):
    """Explicit domain file, else ``<stem>_domain.json`` or ``domain.json`` next to the data."""
    if explicit:
        return simgen.read_domain(explicit)
    for cand in (data.with_name(data.stem + "_domain.json"), data.with_name("domain.json")):
        if cand.exists():
            return simgen.read_domain(cand)
    raise ConfigError(f"no domain file found beside {data}; pass --domain")


def _sequences(data: Path, domain, horizon=None):
    store = ReportStore.replay(read_reports(data), domain)
    return store, build_sequences(store, horizon)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sensitive(args, params, domain, topics, pcfg):
    if args.sensitive_states:
        return SensitiveStateSet(tuple(int(s) for s in args.sensitive_states.split(",")))
    sens = sensitive_states(params, domain, topics, pcfg.sensitive_topics, pcfg.state_cutoff)
    if sens is None:
        raise ConfigError("no state is dominated by sensitive topics; pass --sensitive-states")
    return sens


def _policy(pcfg, domain):
    return ObfuscationPolicy(pcfg.saturation, pcfg.flag_threshold, pcfg.n_candidates,
                             (domain.null_index,))


# -- subcommands -----------------------------------------------------------------

def cmd_simulate(args) -> int:
    scen, pcfg = load_config(args.config, args.seed)
    out = _out(args)
    ds = _stage("generate", simgen.generate_dataset, scen)
    simgen.write_dataset(out / "ground_truth", ds)
    domain, topics = ds.domain(pcfg.dataset)
    sim = load_similarity(pcfg.similarity_path, domain) if pcfg.similarity_path else None
    report = run_pipeline(pcfg, domain, topics, dataset=ds, similarity=sim)
    reports = simgen.perturb_events(ds.events(pcfg.dataset), domain, pcfg.epsilon_ldp, pcfg.seed)
    write_reports(out / "reports.jsonl", reports)
    simgen.write_domain(out / "domain.json", domain, topics)
    (out / "config.json").write_text(
        json.dumps({"scenario": scen.to_dict(), "pipeline": pcfg.to_dict()}, indent=2) + "\n",
        encoding="utf-8")
    write_run_report(report, out, domain, args.format)
    m = report.metrics
    print(f"homes={m['homes']} reports={m['reports']} substitutions={m['substitutions']} "
          f"above_threshold={m['fraction_above_threshold_before']:.3f}->"
          f"{m['fraction_above_threshold_after']:.3f} frequency_mae={m['frequency_mae']:.4f}")
    return 0


def cmd_generate(args) -> int:
    scen, _ = load_config(args.config, args.seed)
    ds = _stage("generate", simgen.generate_dataset, scen)
    paths = simgen.write_dataset(_out(args), ds)
    print(f"wrote {len(ds.queries)} query and {len(ds.appliances)} appliance events "
          f"to {paths['queries'].parent}")
    return 0


def cmd_perturb(args) -> int:
    _, pcfg = load_config(args.config, args.seed)
    data = Path(args.data)
    domain, topics = _domain_for(data, args.domain)
    eps = args.epsilon if args.epsilon is not None else pcfg.epsilon_ldp
    events = _stage("perturb", simgen.read_events, data)
    reports = _stage("perturb", simgen.perturb_events, events, domain, eps, pcfg.seed)
    out = _out(args)
    write_reports(out / "reports.jsonl", reports)
    simgen.write_domain(out / "domain.json", domain, topics)
    print(f"perturbed {len(reports)} events at epsilon={eps}")
    return 0


def cmd_train(args) -> int:
    _, pcfg = load_config(args.config, args.seed)
    data = Path(args.data)
    domain, _ = _domain_for(data, args.domain)
    _, seqs = _stage("ingest", _sequences, data, domain, pcfg.horizon)
    params, trace, counts = _stage("train", fit_hmm, pcfg, seqs, domain)
    out = _out(args)
    model_out = Path(args.model_out) if args.model_out else out / "model.json"
    save_model(params, model_out, {"log_likelihood": trace[-1], "iterations": len(trace)})
    counts_path = model_out.with_name("counts.json")
    counts_path.write_text(json.dumps(counts.to_dict(), indent=2) + "\n", encoding="utf-8")
    write_table(out / "train_trace", [{"iteration": i + 1, "log_likelihood": v}
                                      for i, v in enumerate(trace)],
                ("iteration", "log_likelihood"), args.format)
    print(f"iterations={len(trace)} log_likelihood={trace[-1]!r}")
    return 0


def cmd_evaluate(args) -> int:
    _, pcfg = load_config(args.config, args.seed)
    data = Path(args.data)
    domain, _ = _domain_for(data, args.domain)
    params = _stage("evaluate", load_model, args.model)
    _, seqs = _stage("ingest", _sequences, data, domain, pcfg.horizon)
    lls = _stage("evaluate", sequence_log_likelihoods, params, seqs)
    total = total_log_likelihood(params, seqs)
    write_table(_out(args) / "evaluation",
                [{"pseudonym": s.pseudonym, "log_likelihood": float(v)} for s, v in zip(seqs, lls)],
                ("pseudonym", "log_likelihood"), args.format)
    print(f"log_likelihood={total!r}")
    return 0


def cmd_risk(args) -> int:
    _, pcfg = load_config(args.config, args.seed)
    data = Path(args.data)
    domain, topics = _domain_for(data, args.domain)
    params = _stage("risk", load_model, args.model)
    _, seqs = _stage("ingest", _sequences, data, domain, pcfg.horizon)
    sens = _stage("risk", _sensitive, args, params, domain, topics, pcfg)
    rows = []
    for s in seqs:
        r = _stage("risk", sequence_risk, params, s, sens, pcfg.saturation, (domain.null_index,))
        rows.append({"pseudonym": s.pseudonym, "risk": r.aggregate_risk,
                     "flagged_events": int(np.sum(r.per_event_sensitivity > pcfg.flag_threshold))})
    write_table(_out(args) / "risk", rows, ("pseudonym", "risk", "flagged_events"), args.format)
    above = sum(r["risk"] > pcfg.risk_threshold for r in rows)
    print(f"homes={len(rows)} above_threshold={above} sensitive_states={list(sens.state_indices)}")
    return 0


def cmd_obfuscate(args) -> int:
    _, pcfg = load_config(args.config, args.seed)
    data = Path(args.data)
    domain, topics = _domain_for(data, args.domain)
    params = _stage("obfuscate", load_model, args.model)
    _, seqs = _stage("ingest", _sequences, data, domain, pcfg.horizon)
    sens = _stage("risk", _sensitive, args, params, domain, topics, pcfg)
    threshold = args.threshold if args.threshold is not None else pcfg.risk_threshold
    sim = (load_similarity(pcfg.similarity_path, domain) if pcfg.similarity_path
           else emission_similarity(params))
    policy = _policy(pcfg, domain)
    outs, plans = [], []
    for s in seqs:
        o, p = _stage("obfuscate", obfuscate_sequence, params, s, sens, threshold, policy, sim)
        outs.append(o)
        plans.append(p)
    out = _out(args)
    write_reports(out / "obfuscated_reports.jsonl", sequences_to_reports(outs, domain, pcfg.epsilon_ldp))
    write_table(out / "plan", [r for p in plans for r in p.records()], PLAN_COLUMNS, args.format)
    write_table(out / "homes", [{"pseudonym": p.pseudonym, "risk_before": p.original_risk,
                                 "risk_after": p.residual_risk, "utility_loss": p.utility_loss}
                                for p in plans],
                ("pseudonym", "risk_before", "risk_after", "utility_loss"), args.format)
    unmet = sum(p.unmet_threshold for p in plans)
    print(f"homes={len(plans)} substitutions={sum(len(p.substitutions) for p in plans)} "
          f"unmet_threshold={unmet}")
    return 0


def cmd_release(args) -> int:
    _, pcfg = load_config(args.config, args.seed)
    try:
        counts = ExpectedCounts.from_dict(json.loads(Path(args.counts).read_text(encoding="utf-8")))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise StageError("release", f"cannot read counts: {exc}") from exc
    eps = args.epsilon_cdp if args.epsilon_cdp is not None else pcfg.epsilon_cdp
    sens = args.sensitivity if args.sensitivity is not None else pcfg.sensitivity
    symbols = None
    if args.domain:
        symbols = simgen.read_domain(args.domain)[0].observation_symbols
    cfg = _stage("release", NoiseConfig, eps, sens, pcfg.probability_floor)
    released = _stage("release", privatize_hmm, counts, cfg,
                      np.random.default_rng([pcfg.seed, 3]), symbols)
    path = _out(args) / "released_model.json"
    save_model(released.params, path, released.metadata())
    print(f"released epsilon_cdp={eps} scale={cfg.scale} repaired={released.repaired}")
    return 0


def cmd_verify_ldp(args) -> int:
    budget = _stage("verify-ldp", PrivacyBudget, args.epsilon)
    domain = _stage("verify-ldp", CategoryDomain, tuple(f"c{i}" for i in range(args.k)))
    ratio = _stage("verify-ldp", verify_ldp, domain, budget)
    bound = math.exp(args.epsilon)
    ok = ratio <= bound * (1 + 1e-12)
    print(f"k={args.k} epsilon={args.epsilon} ratio={ratio:.4f} bound={bound:.4f} "
          f"{'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_estimate_freq(args) -> int:
    data = Path(args.data)
    domain, _ = _domain_for(data, args.domain)
    reports = _stage("ingest", read_reports, data)
    budget = PrivacyBudget(args.epsilon) if args.epsilon is not None else None
    est = _stage("estimate_frequencies", estimate_frequencies, reports, domain, budget)
    rows = [{"symbol": s, "est_freq": float(est[i])} for i, s in enumerate(domain.symbols)]
    write_table(_out(args) / "frequencies", rows, ("symbol", "est_freq"), args.format)
    for r in rows:
        print(f"{r['symbol']}\t{r['est_freq']:.4f}")
    return 0


def _stage(name, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except StageError:
        raise
    except (SmartHomeLDPError, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        raise StageError(name, exc) from exc


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    def global_flags(suppress: bool) -> argparse.ArgumentParser:
        # subcommand copies must not overwrite values given before the subcommand
        g = argparse.ArgumentParser(add_help=False)
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        g.add_argument("--config", default=d(None),
                       help="JSON config with 'scenario'/'pipeline' sections")
        g.add_argument("--seed", type=int, default=d(None), help="overrides both config seeds")
        g.add_argument("--out", default=d("out"), help="output directory (default: out)")
        g.add_argument("--format", choices=("csv", "jsonl"), default=d("csv"),
                       help="table format (default: csv)")
        return g

    common = global_flags(True)
    p = argparse.ArgumentParser(prog="smarthome-ldp", parents=[global_flags(False)],
                                description="Double-privacy smart-home telemetry toolkit.")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_, argument_default=argparse.SUPPRESS)
        sp.set_defaults(func=fn)
        return sp

    add("simulate", cmd_simulate, "generate, perturb and run the full aggregator pipeline")
    add("generate", cmd_generate, "write a ground-truth synthetic dataset")

    sp = add("perturb", cmd_perturb, "k-RR perturb a ground-truth event file")
    sp.add_argument("--data", required=True)
    sp.add_argument("--domain")
    sp.add_argument("--epsilon", type=float)

    sp = add("train", cmd_train, "fit an HMM to perturbed reports")
    sp.add_argument("--data", required=True)
    sp.add_argument("--domain")
    sp.add_argument("--model-out")

    for name, fn, help_ in (("evaluate", cmd_evaluate, "log-likelihood of reports under a model"),
                            ("risk", cmd_risk, "per-home privacy risk"),
                            ("obfuscate", cmd_obfuscate, "risk-driven symbol substitution")):
        sp = add(name, fn, help_)
        sp.add_argument("--model", required=True)
        sp.add_argument("--data", required=True)
        sp.add_argument("--domain")
        if name != "evaluate":
            sp.add_argument("--sensitive-states", help="comma-separated state indices")
        if name == "obfuscate":
            sp.add_argument("--threshold", type=float)

    sp = add("release", cmd_release, "Laplace-noised model from training counts")
    sp.add_argument("--counts", required=True)
    sp.add_argument("--epsilon-cdp", type=float)
    sp.add_argument("--sensitivity", type=float)
    sp.add_argument("--domain")

    sp = add("verify-ldp", cmd_verify_ldp, "check the k-RR likelihood ratio against e^epsilon")
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--epsilon", type=float, required=True)

    sp = add("estimate-freq", cmd_estimate_freq, "debiased symbol frequencies from reports")
    sp.add_argument("--data", required=True)
    sp.add_argument("--domain")
    sp.add_argument("--epsilon", type=float)
    return p


def _merge_defaults(args) -> argparse.Namespace:
    # subcommand flags are suppressed when absent so top-level values survive
    for name in ("threshold", "epsilon", "epsilon_cdp", "sensitivity", "domain", "model_out",
                 "sensitive_states"):
        if not hasattr(args, name):
            setattr(args, name, None)
    return args


def main(argv=None) -> int:
    parser = build_parser()
    args = _merge_defaults(parser.parse_args(argv))
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"error: stage 'config' failed: {exc}", file=sys.stderr)
        return 1
    except SmartHomeLDPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
