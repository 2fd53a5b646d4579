"""Per-home privacy risk from HMM posteriors, and greedy obfuscation of
high-risk events with plausible low-risk substitutes.

Risk of a sequence is the posterior mass spent in sensitive hidden states,
summed over events and capped: ``min(1, sum_t s_t / R)``. With the default
``R = 5`` five unambiguous sensitive events saturate the score.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import DomainError
from .hmm import HmmParams, ObservationSequence, leave_one_out_posterior, posteriors

DEFAULT_SATURATION = 5
DEFAULT_FLAG_THRESHOLD = 0.5
DEFAULT_CANDIDATES = 5


@dataclass(frozen=True)
class SensitiveStateSet:
    state_indices: tuple[int, ...]
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        idx = tuple(sorted(set(int(i) for i in self.state_indices)))
        if not idx:
            raise ValueError("sensitive state set must not be empty")
        object.__setattr__(self, "state_indices", idx)
        object.__setattr__(self, "labels", tuple(self.labels))

    def mask(self, n_states: int) -> np.ndarray:
        if self.state_indices[0] < 0 or self.state_indices[-1] >= n_states:
            raise ValueError(f"sensitive state index out of range for N={n_states}")
        m = np.zeros(n_states, dtype=bool)
        m[list(self.state_indices)] = True
        return m


def capped_risk(sensitivities: Iterable[float], saturation: int = DEFAULT_SATURATION) -> float:
    if saturation < 1:
        raise ValueError("saturation count must be >= 1")
    # fsum is exactly rounded, so appending a zero never moves the total
    return min(1.0, math.fsum(float(x) for x in sensitivities) / saturation)


@dataclass
class RiskAssessment:
    per_event_sensitivity: np.ndarray
    aggregate_risk: float
    saturation: int = DEFAULT_SATURATION

    def extend(self, sensitivity: float) -> "RiskAssessment":
        """Append one event while holding earlier sensitivities fixed."""
        if not 0.0 <= sensitivity <= 1.0:
            raise ValueError("sensitivity must lie in [0, 1]")
        s = np.append(self.per_event_sensitivity, sensitivity)
        return RiskAssessment(s, capped_risk(s, self.saturation), self.saturation)


def event_sensitivity(params: HmmParams, seq: ObservationSequence,
                      sensitive: SensitiveStateSet, ignore: Iterable[int] = ()) -> np.ndarray:
    """Posterior probability of being in a sensitive state at each slot.

    Slots whose observation is in ``ignore`` (typically the null symbol, i.e.
    no event happened) score 0.
    """
    post = posteriors(params, seq).state
    mask = sensitive.mask(params.n_states)
    sens, free = post[:, mask].sum(axis=1), post[:, ~mask].sum(axis=1)
    # share of the row rather than the raw mass: exact 0 and 1 at the extremes
    s = np.clip(sens / (sens + free), 0.0, 1.0)
    ignore = list(ignore)
    if ignore:
        s[np.isin(seq.obs, ignore)] = 0.0
    return s


def sequence_risk(params: HmmParams, seq: ObservationSequence, sensitive: SensitiveStateSet,
                  saturation: int = DEFAULT_SATURATION, ignore: Iterable[int] = ()) -> RiskAssessment:
    s = event_sensitivity(params, seq, sensitive, ignore)
    return RiskAssessment(s, capped_risk(s, saturation), saturation)


# -- similarity ----------------------------------------------------------------

def emission_similarity(params: HmmParams) -> np.ndarray:
    """Cosine similarity between emission columns, shape ``(M, M)``.

    Symbols emitted by the same states in the same proportions score 1.
    """
    cols = params.emit.T
    norms = np.linalg.norm(cols, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = cols / safe[:, None]
    sim = np.clip(unit @ unit.T, 0.0, 1.0)
    np.fill_diagonal(sim, 1.0)
    return sim


def validate_similarity(sim: np.ndarray, atol: float = 1e-9) -> np.ndarray:
    sim = np.asarray(sim, dtype=float)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise ValueError("similarity matrix must be square")
    if np.any(sim < 0) or np.any(sim > 1):
        raise ValueError("similarity entries must lie in [0, 1]")
    if not np.allclose(sim, sim.T, atol=atol, rtol=0):
        raise ValueError("similarity matrix must be symmetric")
    if not np.allclose(np.diag(sim), 1.0, atol=atol, rtol=0):
        raise ValueError("similarity diagonal must be 1")
    return sim


def utility_loss(domain, sim: np.ndarray, original: str, replacement: str) -> float:
    """``1 - sim(original, replacement)``; ``sim`` is indexed by the observation alphabet."""
    i, j = domain.obs_index(original), domain.obs_index(replacement)
    if max(i, j) >= sim.shape[0]:
        raise DomainError("similarity matrix does not cover the symbol")
    return float(1.0 - sim[i, j])


def load_similarity(path: str | Path, domain) -> np.ndarray:
    """Read a square CSV (header row of symbol ids) into observation-alphabet order.

    A null symbol missing from the file is treated as dissimilar to everything.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    table = np.array([[float(x) for x in r] for r in body if r])
    if table.shape != (len(header), len(header)):
        raise ValueError(f"similarity table is {table.shape}, header has {len(header)} ids")
    validate_similarity(table)
    pos = {s: i for i, s in enumerate(header)}
    missing = [s for s in domain.symbols if s not in pos]
    if missing:
        raise DomainError(f"similarity file lacks symbols {missing}")
    order = [pos.get(s, -1) for s in domain.observation_symbols]
    sim = np.eye(len(order))
    for a, ia in enumerate(order):
        for b, ib in enumerate(order):
            if ia >= 0 and ib >= 0:
                sim[a, b] = table[ia, ib]
    return sim


def write_similarity(path: str | Path, sim: np.ndarray, symbols: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(symbols)
        for row in np.asarray(sim):
            w.writerow([repr(float(x)) for x in row])


# -- candidates and obfuscation -----------------------------------------------

@dataclass(frozen=True)
class Candidate:
    symbol: int
    name: str
    score: float
    candidate_risk: float
    utility_loss: float


def _name(params: HmmParams, i: int) -> str:
    return params.symbols[i] if params.symbols is not None else str(i)


def _tie_key(params: HmmParams, i: int):
    return params.symbols[i] if params.symbols is not None else i


def plausibility_scores(params: HmmParams, state_posterior: np.ndarray,
                        sensitive: SensitiveStateSet) -> np.ndarray | None:
    """``score(o) = sum_{j not sensitive} g_j b_j(o)`` with ``g`` the posterior
    renormalised over non-sensitive states; None if they carry no mass."""
    free = ~sensitive.mask(params.n_states)
    mass = state_posterior[free]
    total = mass.sum()
    if not free.any() or total <= 0:
        return None
    return (mass / total) @ params.emit[free]


def generate_candidates(params: HmmParams, seq: ObservationSequence, t: int, n_candidates: int,
                        sensitive: SensitiveStateSet, sim: np.ndarray,
                        saturation: int = DEFAULT_SATURATION,
                        ignore: Iterable[int] = ()) -> list[Candidate]:
    """Top-``n_candidates`` substitutes for slot ``t`` drawn from non-sensitive paths.

    The state belief at ``t`` comes from every other slot (the observed symbol
    itself is left out, otherwise a symbol only sensitive states emit would
    leave no non-sensitive mass to rank by). Ranked by plausibility score,
    ties to the smallest symbol id. The original symbol, ignored symbols and
    zero-score symbols are never proposed.
    """
    ignore = set(int(i) for i in ignore)
    post = leave_one_out_posterior(params, seq, t)
    scores = plausibility_scores(params, post, sensitive)
    if scores is None:
        return []
    original = int(seq.obs[t])
    pool = [o for o in range(params.n_symbols)
            if o != original and o not in ignore and scores[o] > 0]
    pool.sort(key=lambda o: (-scores[o], _tie_key(params, o)))
    out = []
    for o in pool[:n_candidates]:
        risk = sequence_risk(params, seq.replace(t, o), sensitive, saturation, ignore)
        out.append(Candidate(o, _name(params, o), float(scores[o]), risk.aggregate_risk,
                             float(1.0 - sim[original, o])))
    return out


@dataclass(frozen=True)
class ObfuscationPolicy:
    saturation: int = DEFAULT_SATURATION
    flag_threshold: float = DEFAULT_FLAG_THRESHOLD
    n_candidates: int = DEFAULT_CANDIDATES
    ignore: tuple[int, ...] = ()


@dataclass
class Substitution:
    position: int
    original: int
    chosen: int
    original_name: str
    chosen_name: str
    utility_loss: float
    risk_before: float
    risk_after: float
    candidates: list[Candidate] = field(default_factory=list)


@dataclass
class ObfuscationPlan:
    pseudonym: str
    original_risk: float
    residual_risk: float
    threshold: float
    substitutions: list[Substitution] = field(default_factory=list)
    unmet_threshold: bool = False

    @property
    def utility_loss(self) -> float:
        return float(sum(s.utility_loss for s in self.substitutions))

    def records(self, slot_offset: int = 1) -> list[dict]:
        """Flat export rows; ``slot`` is the sequence position plus ``slot_offset``."""
        return [
            {
                "pseudonym": self.pseudonym,
                "slot": s.position + slot_offset,
                "original": s.original_name,
                "chosen": s.chosen_name,
                "utility_loss": s.utility_loss,
                "risk_before": s.risk_before,
                "risk_after": s.risk_after,
            }
            for s in self.substitutions
        ]


PLAN_COLUMNS = ("pseudonym", "slot", "original", "chosen", "utility_loss", "risk_before", "risk_after")


def apply_plan(seq: ObservationSequence, plan: ObfuscationPlan) -> ObservationSequence:
    obs = seq.obs.copy()
    for s in plan.substitutions:
        if obs[s.position] != s.original:
            raise ValueError(f"plan expects symbol {s.original} at position {s.position}")
        obs[s.position] = s.chosen
    return ObservationSequence(seq.pseudonym, obs)


def obfuscate_sequence(params: HmmParams, seq: ObservationSequence, sensitive: SensitiveStateSet,
                       risk_threshold: float, policy: ObfuscationPolicy = ObfuscationPolicy(),
                       sim: np.ndarray | None = None):
    """Greedily substitute high-sensitivity events until risk <= ``risk_threshold``.

    Each round takes the untried flagged slot of highest sensitivity (earliest
    slot on ties) and applies the admissible candidate (risk not above the
    current risk) with the smallest utility loss. Returns
    ``(obfuscated_sequence, plan)``.
    """
    if not 0 < risk_threshold <= 1:
        raise ValueError("risk_threshold must lie in (0, 1]")
    if sim is None:
        sim = emission_similarity(params)
    R, ignore = policy.saturation, policy.ignore
    current = seq
    assess = sequence_risk(params, current, sensitive, R, ignore)
    plan = ObfuscationPlan(seq.pseudonym, assess.aggregate_risk, assess.aggregate_risk,
                           risk_threshold)
    tried: set[int] = set()
    while assess.aggregate_risk > risk_threshold:
        s = assess.per_event_sensitivity
        open_slots = [t for t in np.argsort(-s, kind="stable")
                      if t not in tried and s[t] > policy.flag_threshold]
        if not open_slots:
            break
        t = int(open_slots[0])
        tried.add(t)
        cands = generate_candidates(params, current, t, policy.n_candidates, sensitive, sim, R, ignore)
        admissible = [c for c in cands if c.candidate_risk <= assess.aggregate_risk]
        if not admissible:
            continue
        best = min(admissible, key=lambda c: (c.utility_loss, _tie_key(params, c.symbol)))
        before = assess.aggregate_risk
        current = current.replace(t, best.symbol)
        assess = sequence_risk(params, current, sensitive, R, ignore)
        plan.substitutions.append(Substitution(
            t, int(seq.obs[t]), best.symbol, _name(params, int(seq.obs[t])), best.name,
            best.utility_loss, before, assess.aggregate_risk, cands))
    plan.residual_risk = assess.aggregate_risk
    plan.unmet_threshold = assess.aggregate_risk > risk_threshold
    return current, plan
