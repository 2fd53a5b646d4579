"""Aggregator-side Laplace noise on HMM expected counts.

Only aggregated count statistics pass through here; raw per-home sequences
never do. Noisy counts are repaired into valid stochastic rows by
clamp -> normalise -> floor -> renormalise, which is post-processing and
costs no extra budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import BudgetError
from .hmm import ExpectedCounts, HmmParams


@dataclass(frozen=True)
class NoiseConfig:
    epsilon_cdp: float
    sensitivity: float = 1.0
    probability_floor: float = 1e-6

    def __post_init__(self):
        for name in ("epsilon_cdp", "sensitivity", "probability_floor"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v <= 0:
                raise BudgetError(f"{name} must be positive and finite, got {v!r}")
            object.__setattr__(self, name, v)

    @property
    def scale(self) -> float:
        """Laplace scale ``S / epsilon``."""
        return self.sensitivity / self.epsilon_cdp


def laplace_inverse_cdf(u, scale: float):
    """Quantile function of a zero-mean Laplace distribution with scale ``b``."""
    u = np.asarray(u, dtype=float)
    d = u - 0.5
    # -b * sign(d) * log(1 - 2|d|), written so u=0.5 gives exactly 0
    return -scale * np.sign(d) * np.log1p(-2.0 * np.abs(d))


def laplace_sample(scale: float, rng: np.random.Generator, size=None):
    """Laplace(0, scale) variates by inverse-CDF from ``rng``.

    Returns a float when ``size`` is None, else an array.
    """
    if not scale > 0:
        raise ValueError("scale must be positive")
    u = rng.random(size)
    # rng.random() can return exactly 0, whose quantile is -inf
    u = np.where(u == 0.0, np.finfo(float).tiny, u)
    x = laplace_inverse_cdf(u, scale)
    return float(x) if size is None else x


def privatize_counts(counts, cfg: NoiseConfig, rng: np.random.Generator) -> np.ndarray:
    """Add Laplace(S/eps) to every entry, then clamp at zero."""
    counts = np.asarray(counts, dtype=float)
    if not np.all(np.isfinite(counts)):
        raise ValueError("counts must be finite")
    noisy = counts + laplace_sample(cfg.scale, rng, counts.shape)
    return np.maximum(noisy, 0.0)


def _repair_rows(noisy: np.ndarray, floor: float) -> tuple[np.ndarray, list[int]]:
    rows = np.atleast_2d(noisy).astype(float)
    width = rows.shape[1]
    sums = rows.sum(axis=1)
    dead = np.flatnonzero(sums <= 0)
    rows[dead] = 1.0
    sums[dead] = width
    probs = rows / sums[:, None]
    probs = np.maximum(probs, floor)
    probs /= probs.sum(axis=1, keepdims=True)
    return probs, dead.tolist()


@dataclass
class ReleasedModel:
    params: HmmParams
    epsilon_cdp: float
    sensitivity: float
    probability_floor: float
    uniform_rows: dict = field(default_factory=dict)

    @property
    def repaired(self) -> bool:
        return any(self.uniform_rows.values())

    def metadata(self) -> dict:
        return {
            "epsilon_cdp": self.epsilon_cdp,
            "sensitivity": self.sensitivity,
            "probability_floor": self.probability_floor,
            "uniform_rows": self.uniform_rows,
            "repaired": self.repaired,
        }


def privatize_hmm(counts: ExpectedCounts, cfg: NoiseConfig, rng: np.random.Generator,
                  symbols=None) -> ReleasedModel:
    """Release HMM parameters from noised expected counts.

    Noise is drawn for the initial, transition and emission accumulators in
    that order. Rows that clamp to all-zero become uniform and are listed in
    ``uniform_rows``.
    """
    M = counts.emit.shape[1]
    if cfg.probability_floor * M >= 1:
        raise BudgetError("probability_floor * M must be < 1")
    noisy_init = privatize_counts(counts.initial, cfg, rng)
    noisy_trans = privatize_counts(counts.trans, cfg, rng)
    noisy_emit = privatize_counts(counts.emit, cfg, rng)
    pi, dead_pi = _repair_rows(noisy_init, cfg.probability_floor)
    trans, dead_trans = _repair_rows(noisy_trans, cfg.probability_floor)
    emit, dead_emit = _repair_rows(noisy_emit, cfg.probability_floor)
    params = HmmParams(pi[0], trans, emit, symbols)
    flags = {"pi": dead_pi, "trans": dead_trans, "emit": dead_emit}
    return ReleasedModel(params, cfg.epsilon_cdp, cfg.sensitivity, cfg.probability_floor, flags)


def total_budget(releases) -> float:
    """Sequential-composition total of the epsilons spent by several releases."""
    return math.fsum(r.epsilon_cdp for r in releases)
