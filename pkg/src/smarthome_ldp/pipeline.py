"""Aggregator: ingest perturbed reports, train the HMM, score and obfuscate,
then release a noisy model.

Stage order is fixed::

    perturb (simulation only) -> ingest -> build_sequences -> train -> risk
    -> obfuscate -> release -> estimate_frequencies

Everything is seeded from ``PipelineConfig.seed``; wall-clock timings are the
only non-deterministic output and are kept out of the serialized report.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dp_noise import NoiseConfig, ReleasedModel, privatize_hmm
from .exceptions import ConfigError, DomainError, IngestRejected, StageError
from .hmm import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    HmmParams,
    ObservationSequence,
    random_params,
    train,
    uniform_params,
)
from .ldp import CategoryDomain, PerturbedReport, estimate_frequencies, true_frequencies
from .risk import (
    ObfuscationPlan,
    PLAN_COLUMNS,
    ObfuscationPolicy,
    SensitiveStateSet,
    emission_similarity,
    obfuscate_sequence,
)
from .simgen import perturb_events

logger = logging.getLogger(__name__)

STAGES = ("perturb", "ingest", "build_sequences", "train", "risk", "obfuscate", "release",
          "estimate_frequencies")

# independent RNG streams derived from the run seed
_STREAM_PERTURB, _STREAM_INIT, _STREAM_RELEASE = 1, 2, 3


# -- report store ----------------------------------------------------------------

class ReportStore:
    """Append-only log of perturbed reports with a per-pseudonym slot index.

    Appends are serialised by a lock, so concurrent ``ingest`` calls commit in
    some order and the log records exactly that order.
    """

    def __init__(self, domain: CategoryDomain, epoch: str = "0"):
        self.domain = domain
        self.epoch = epoch
        self.log: list[PerturbedReport] = []
        self.index: dict[str, dict[int, str]] = {}
        self._last_slot: dict[str, int] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.log)

    def append(self, report: PerturbedReport) -> None:
        if report.symbol != self.domain.null_symbol and report.symbol not in self.domain:
            raise DomainError(f"symbol {report.symbol!r} is not in the domain")
        if not (isinstance(report.epsilon_used, (int, float)) and report.epsilon_used > 0):
            raise IngestRejected(f"bad epsilon_used {report.epsilon_used!r}")
        if report.time_slot < 1:
            raise IngestRejected(f"slot {report.time_slot} < 1")
        with self._lock:
            last = self._last_slot.get(report.pseudonym)
            if last is not None and report.time_slot <= last:
                reason = "duplicate" if report.time_slot in self.index[report.pseudonym] \
                    else "out-of-order"
                raise IngestRejected(
                    f"{reason} slot {report.time_slot} for {report.pseudonym} (last {last})")
            self.log.append(report)
            self.index.setdefault(report.pseudonym, {})[report.time_slot] = report.symbol
            self._last_slot[report.pseudonym] = report.time_slot

    @property
    def max_slot(self) -> int:
        return max(self._last_slot.values(), default=0)

    def write_log(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.log:
                fh.write(json.dumps(r.to_dict()) + "\n")

    @classmethod
    def replay(cls, reports: Iterable[PerturbedReport], domain: CategoryDomain,
               epoch: str = "0") -> "ReportStore":
        store = cls(domain, epoch)
        for r in reports:
            store.append(r)
        return store


def ingest(report: PerturbedReport, store: ReportStore) -> ReportStore:
    store.append(report)
    return store


def read_reports(path) -> list[PerturbedReport]:
    with open(path, encoding="utf-8") as fh:
        return [PerturbedReport.from_dict(json.loads(line)) for line in fh if line.strip()]


def write_reports(path, reports: Iterable[PerturbedReport]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(json.dumps(r.to_dict()) + "\n")


def build_sequences(store: ReportStore, horizon: int | None = None) -> list[ObservationSequence]:
    """One sequence per pseudonym (sorted), covering slots ``1..horizon``.

    Missing slots hold the null symbol; ``horizon`` defaults to the largest
    slot seen in the store.
    """
    if not store.index:
        return []
    T = store.max_slot if horizon is None else horizon
    if T < store.max_slot:
        raise ValueError(f"horizon {T} is shorter than the last observed slot {store.max_slot}")
    dom = store.domain
    seqs = []
    for p in sorted(store.index):
        obs = np.full(T, dom.null_index, dtype=np.int64)
        for slot, sym in store.index[p].items():
            obs[slot - 1] = dom.obs_index(sym)
        seqs.append(ObservationSequence(p, obs))
    return seqs


def sequences_to_reports(seqs: Sequence[ObservationSequence], domain: CategoryDomain,
                         epsilon: float) -> list[PerturbedReport]:
    """Inverse of :func:`build_sequences` (null slots are dropped)."""
    out = []
    for s in seqs:
        for t, o in enumerate(s.obs):
            if o != domain.null_index:
                out.append(PerturbedReport(s.pseudonym, t + 1, domain.observation_symbols[o], epsilon))
    return out


# -- state labelling -----------------------------------------------------------

def label_states(params: HmmParams, domain: CategoryDomain, topics: dict) -> list[str]:
    """Dominant topic of each state's non-null emission mass."""
    labels = []
    for j in range(params.n_states):
        mass: dict[str, float] = {}
        for i, s in enumerate(domain.symbols):
            t = topics.get(s, "unknown")
            mass[t] = mass.get(t, 0.0) + params.emit[j, i]
        labels.append(max(sorted(mass), key=lambda t: mass[t]))
    return labels


def sensitive_states(params: HmmParams, domain: CategoryDomain, topics: dict,
                     sensitive_topics: Sequence[str], cutoff: float = 0.5) -> SensitiveStateSet | None:
    """States whose non-null emission mass is mostly on sensitive-topic symbols."""
    sens_cols = [i for i, s in enumerate(domain.symbols) if topics.get(s) in set(sensitive_topics)]
    body = params.emit[:, :domain.k]
    share = body[:, sens_cols].sum(axis=1) / np.maximum(body.sum(axis=1), 1e-300)
    idx = tuple(int(j) for j in np.flatnonzero(share > cutoff))
    if not idx:
        return None
    labels = label_states(params, domain, topics)
    return SensitiveStateSet(idx, tuple(labels[j] for j in idx))


# -- config and report ---------------------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    epsilon_ldp: float = 4.0
    epsilon_cdp: float = 1.0
    sensitivity: float = 1.0
    probability_floor: float = 1e-6
    saturation: int = 5
    risk_threshold: float = 0.4
    flag_threshold: float = 0.5
    n_candidates: int = 5
    sensitive_topics: tuple = ("cancer", "diabetes")
    state_cutoff: float = 0.5
    n_states: int = 4
    init: str = "random"
    n_restarts: int = 3
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    horizon: int | None = None
    seed: int = 0
    dataset: str = "queries"
    domain_path: str | None = None
    similarity_path: str | None = None
    dataset_path: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "sensitive_topics", tuple(self.sensitive_topics))
        self.validate()

    def validate(self) -> None:
        for name in ("epsilon_ldp", "epsilon_cdp", "sensitivity", "probability_floor", "tol"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be positive and finite")
        if self.n_states < 1 or self.max_iter < 1 or self.n_restarts < 1:
            raise ConfigError("n_states, max_iter and n_restarts must be >= 1")
        if not 0 < self.risk_threshold <= 1:
            raise ConfigError("risk_threshold must lie in (0, 1]")
        if self.saturation < 1:
            raise ConfigError("saturation must be >= 1")
        if self.init not in ("random", "uniform"):
            raise ConfigError(f"unknown init {self.init!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sensitive_topics"] = list(self.sensitive_topics)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown pipeline fields {sorted(unknown)}")
        return cls(**data)


@dataclass
class HomeResult:
    pseudonym: str
    risk_before: float
    risk_after: float
    utility_loss: float
    substitutions: int
    unmet_threshold: bool


@dataclass
class RunReport:
    epsilon_ldp: float
    epsilon_cdp: float
    released: ReleasedModel
    trained: HmmParams
    trace: list
    sensitive: SensitiveStateSet | None
    state_labels: list
    homes: list[HomeResult]
    plans: list[ObfuscationPlan]
    obfuscated: list[ObservationSequence]
    frequencies: list[dict]
    metrics: dict
    timings: list[tuple[str, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        """Deterministic summary; wall-clock timings are excluded."""
        return {
            "privacy": {
                "epsilon_ldp": self.epsilon_ldp,
                "epsilon_cdp": self.epsilon_cdp,
                "epsilon_cdp_total": self.released.epsilon_cdp,
            },
            "released_model": {**self.released.params.to_dict(), "metadata": self.released.metadata()},
            "training": {"iterations": len(self.trace),
                         "final_log_likelihood": self.trace[-1] if self.trace else None},
            "state_labels": self.state_labels,
            "sensitive_states": list(self.sensitive.state_indices) if self.sensitive else [],
            "metrics": self.metrics,
            "homes": [asdict(h) for h in self.homes],
            "frequencies": self.frequencies,
        }


# -- stages ----------------------------------------------------------------------

class _Stages:
    def __init__(self):
        self.timings: list[tuple[str, float]] = []

    def run(self, name, fn, *args, **kwargs):
        start = time.perf_counter()
        try:
            out = fn(*args, **kwargs)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc
        self.timings.append((name, (time.perf_counter() - start) * 1000.0))
        return out


def _initial_params(cfg: PipelineConfig, seqs, M: int, symbols, rng) -> HmmParams:
    if cfg.init == "uniform":
        return uniform_params(cfg.n_states, M, symbols)
    freq = np.bincount(np.concatenate([s.obs for s in seqs]), minlength=M).astype(float)
    freq = (freq + 1.0) / (freq.sum() + M)
    return random_params(cfg.n_states, M, rng, base_emission=freq, symbols=symbols)


def fit_hmm(cfg: PipelineConfig, seqs: Sequence[ObservationSequence], domain: CategoryDomain):
    """Best-of-``n_restarts`` Baum-Welch. Returns ``(params, trace, counts)``."""
    rng = np.random.default_rng([cfg.seed, _STREAM_INIT])
    M = domain.k + 1
    best = None
    restarts = 1 if cfg.init == "uniform" else cfg.n_restarts
    for _ in range(restarts):
        init = _initial_params(cfg, seqs, M, domain.observation_symbols, rng)
        params, trace, counts = train(init, seqs, cfg.tol, cfg.max_iter, return_counts=True)
        if best is None or trace[-1] > best[1][-1]:
            best = (params, trace, counts)
    return best


def _score_and_obfuscate(cfg, params, seqs, sensitive, null_index, sim):
    homes, plans, outs = [], [], []
    policy = ObfuscationPolicy(cfg.saturation, cfg.flag_threshold, cfg.n_candidates, (null_index,))
    for s in seqs:
        if sensitive is None:
            plan = ObfuscationPlan(s.pseudonym, 0.0, 0.0, cfg.risk_threshold)
            out = s
        else:
            out, plan = obfuscate_sequence(params, s, sensitive, cfg.risk_threshold, policy, sim)
        plans.append(plan)
        outs.append(out)
        homes.append(HomeResult(s.pseudonym, plan.original_risk, plan.residual_risk,
                                plan.utility_loss, len(plan.substitutions), plan.unmet_threshold))
    return homes, plans, outs


def run_pipeline(cfg: PipelineConfig, domain: CategoryDomain, topics: dict,
                 reports: Sequence[PerturbedReport] | None = None, dataset=None,
                 similarity: np.ndarray | None = None) -> RunReport:
    """Run every aggregator stage and return the report.

    Pass either already-perturbed ``reports`` or a ground-truth ``dataset``
    (a :class:`~smarthome_ldp.simgen.GroundTruthDataset`); in the latter case
    the client-side perturbation is simulated first and only its pseudonymous
    output is used afterwards. Nothing is returned if any stage fails.
    """
    stages = _Stages()
    true_freq = None
    if dataset is not None:
        events = dataset.events(cfg.dataset)
        true_freq = true_frequencies([e.symbol for e in events], domain)
        reports = stages.run("perturb", perturb_events, events, domain, cfg.epsilon_ldp,
                             cfg.seed)
    elif reports is None:
        raise ConfigError("run_pipeline needs reports or a dataset")
    else:
        stages.timings.append(("perturb", 0.0))

    def _ingest():
        store = ReportStore(domain)
        for r in reports:
            ingest(r, store)
        return store

    store = stages.run("ingest", _ingest)
    seqs = stages.run("build_sequences", build_sequences, store, cfg.horizon)
    if not seqs:
        raise StageError("build_sequences", "no reports ingested")
    params, trace, counts = stages.run("train", fit_hmm, cfg, seqs, domain)

    def _risk():
        sens = sensitive_states(params, domain, topics, cfg.sensitive_topics, cfg.state_cutoff)
        sim = similarity if similarity is not None else emission_similarity(params)
        return sens, sim

    sensitive, sim = stages.run("risk", _risk)
    homes, plans, outs = stages.run("obfuscate", _score_and_obfuscate, cfg, params, seqs,
                                    sensitive, domain.null_index, sim)
    noise = NoiseConfig(cfg.epsilon_cdp, cfg.sensitivity, cfg.probability_floor)
    released = stages.run("release", privatize_hmm, counts, noise,
                          np.random.default_rng([cfg.seed, _STREAM_RELEASE]),
                          domain.observation_symbols)
    est = stages.run("estimate_frequencies", estimate_frequencies, store.log, domain)

    freqs = [{"symbol": s,
              "true_freq": float(true_freq[i]) if true_freq is not None else None,
              "est_freq": float(est[i])} for i, s in enumerate(domain.symbols)]
    losses = [sub.utility_loss for p in plans for sub in p.substitutions]
    n = len(homes)
    metrics = {
        "homes": n,
        "reports": len(store),
        "horizon": len(seqs[0]),
        "mean_utility_loss": float(np.mean(losses)) if losses else 0.0,
        "substitutions": len(losses),
        "fraction_above_threshold_before": sum(h.risk_before > cfg.risk_threshold for h in homes) / n,
        "fraction_above_threshold_after": sum(h.risk_after > cfg.risk_threshold for h in homes) / n,
        "unmet_threshold": sum(h.unmet_threshold for h in homes),
        "mean_risk_before": float(np.mean([h.risk_before for h in homes])),
        "mean_risk_after": float(np.mean([h.risk_after for h in homes])),
        "frequency_mae": (float(np.mean(np.abs(est - true_freq))) if true_freq is not None else None),
    }
    return RunReport(cfg.epsilon_ldp, cfg.epsilon_cdp, released, params, trace, sensitive,
                     label_states(params, domain, topics), homes, plans, outs, freqs, metrics,
                     stages.timings)


# -- output ----------------------------------------------------------------------

def write_table(path, rows: Sequence[dict], columns: Sequence[str], fmt: str = "csv") -> Path:
    """Write rows with a fixed column order as CSV or JSON lines."""
    path = Path(path).with_suffix("." + fmt)
    if fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow(["" if r[c] is None else r[c] for c in columns])
    elif fmt == "jsonl":
        with open(path, "w", encoding="utf-8") as fh:
            for r in rows:
                fh.write(json.dumps({c: r[c] for c in columns}) + "\n")
    else:
        raise ValueError(f"unknown table format {fmt!r}")
    return path


def write_run_report(report: RunReport, out_dir, domain: CategoryDomain, fmt: str = "csv") -> dict:
    """Write the report document, metric tables, released model and obfuscated log.

    ``timings.<fmt>`` is the only file that differs between same-seed runs.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"report": out / "run_report.json", "released_model": out / "released_model.json",
             "obfuscated": out / "obfuscated_reports.jsonl"}
    paths["report"].write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    doc = {**report.released.params.to_dict(), "metadata": report.released.metadata()}
    paths["released_model"].write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    write_reports(paths["obfuscated"],
                  sequences_to_reports(report.obfuscated, domain, report.epsilon_ldp))
    paths["homes"] = write_table(out / "homes", [asdict(h) for h in report.homes],
                                 ("pseudonym", "risk_before", "risk_after", "utility_loss"), fmt)
    paths["frequencies"] = write_table(out / "frequencies", report.frequencies,
                                       ("symbol", "true_freq", "est_freq"), fmt)
    paths["plan"] = write_table(out / "plan", [r for p in report.plans for r in p.records()],
                                PLAN_COLUMNS, fmt)
    paths["trace"] = write_table(out / "train_trace",
                                 [{"iteration": i + 1, "log_likelihood": v}
                                  for i, v in enumerate(report.trace)],
                                 ("iteration", "log_likelihood"), fmt)
    paths["timings"] = write_table(out / "timings",
                                   [{"stage": s, "wall_ms": round(ms, 3)} for s, ms in report.timings],
                                   ("stage", "wall_ms"), fmt)
    return paths
