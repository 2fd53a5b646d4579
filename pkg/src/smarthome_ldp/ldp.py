"""Client-side k-ary randomized response and the matching aggregator decoder.

A home perturbs each event symbol locally before it leaves the device. The
mechanism keeps the true category with probability ``e^eps / (k - 1 + e^eps)``
and otherwise reports one of the other ``k - 1`` categories uniformly, which
bounds the likelihood ratio of any two inputs by ``e^eps``.

The null symbol ("no event in this slot") is not part of the randomized
domain; it passes through unperturbed.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from .exceptions import (
    BudgetError,
    DomainError,
    EmptyInputError,
    HeterogeneousBudgetError,
)

DEFAULT_NULL_SYMBOL = "<null>"


@dataclass(frozen=True)
class CategoryDomain:
    """Ordered category alphabet plus a reserved null symbol.

    ``symbols`` fixes the index <-> symbol bijection for a run. The HMM
    observation alphabet is ``symbols + (null_symbol,)`` so the null symbol
    always sits at index ``k``.
    """

    symbols: tuple[str, ...]
    null_symbol: str = DEFAULT_NULL_SYMBOL

    def __post_init__(self):
        symbols = tuple(str(s) for s in self.symbols)
        object.__setattr__(self, "symbols", symbols)
        if len(symbols) < 2:
            raise DomainError(f"domain needs at least 2 symbols, got {len(symbols)}")
        if any(s == "" for s in symbols):
            raise DomainError("symbols must be non-empty strings")
        if len(set(symbols)) != len(symbols):
            raise DomainError("symbols must be unique")
        if self.null_symbol in symbols:
            raise DomainError(f"null symbol {self.null_symbol!r} collides with a category")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(symbols)})

    @property
    def k(self) -> int:
        return len(self.symbols)

    @property
    def null_index(self) -> int:
        return len(self.symbols)

    @property
    def observation_symbols(self) -> tuple[str, ...]:
        """Symbols of the HMM alphabet (categories followed by the null symbol)."""
        return self.symbols + (self.null_symbol,)

    def index(self, symbol: str) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise DomainError(f"symbol {symbol!r} is not in the domain") from None

    def obs_index(self, symbol: str) -> int:
        """Index in the observation alphabet, accepting the null symbol."""
        if symbol == self.null_symbol:
            return self.null_index
        return self.index(symbol)

    def __contains__(self, symbol) -> bool:
        return symbol in self._index

    def to_dict(self) -> dict:
        return {"symbols": list(self.symbols), "null_symbol": self.null_symbol}

    @classmethod
    def from_dict(cls, data: dict) -> "CategoryDomain":
        return cls(tuple(data["symbols"]), data.get("null_symbol", DEFAULT_NULL_SYMBOL))


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float

    def __post_init__(self):
        eps = float(self.epsilon)
        if not math.isfinite(eps) or eps <= 0:
            raise BudgetError(f"epsilon must be positive and finite, got {self.epsilon!r}")
        object.__setattr__(self, "epsilon", eps)


BudgetLike = Union[PrivacyBudget, float]


def as_budget(budget: BudgetLike) -> PrivacyBudget:
    if isinstance(budget, PrivacyBudget):
        return budget
    return PrivacyBudget(budget)


@dataclass(frozen=True)
class PerturbedReport:
    """One client emission as seen by the aggregator."""

    pseudonym: str
    time_slot: int
    symbol: str
    epsilon_used: float

    def to_dict(self) -> dict:
        return {
            "pseudonym": self.pseudonym,
            "slot": self.time_slot,
            "symbol": self.symbol,
            "epsilon_used": self.epsilon_used,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PerturbedReport":
        return cls(str(data["pseudonym"]), int(data["slot"]), str(data["symbol"]),
                   float(data["epsilon_used"]))


def keep_probabilities(k: int, budget: BudgetLike) -> tuple[float, float]:
    """Return ``(p, q)``: probability of keeping the true value, and of each other value."""
    eps = as_budget(budget).epsilon
    if k < 2:
        raise DomainError(f"k must be >= 2, got {k}")
    # exp(eps) overflows past ~709; the limit is p=1, q=0.
    if eps > 700:
        return 1.0, 0.0
    e = math.exp(eps)
    denom = k - 1 + e
    return e / denom, 1.0 / denom


def krr_distribution(true_value: str, domain: CategoryDomain, budget: BudgetLike) -> np.ndarray:
    """Output distribution of the mechanism for ``true_value``, in domain order."""
    idx = domain.index(true_value)
    p, q = keep_probabilities(domain.k, budget)
    dist = np.full(domain.k, q)
    dist[idx] = p
    return dist


def krr_perturb(true_value: str, domain: CategoryDomain, budget: BudgetLike,
                rng: np.random.Generator) -> str:
    """Draw one privatized symbol for ``true_value``.

    The null symbol is returned as-is without consuming randomness.
    """
    if true_value == domain.null_symbol:
        return true_value
    idx = domain.index(true_value)
    p, _ = keep_probabilities(domain.k, budget)
    if rng.random() < p:
        return true_value
    alt = int(rng.integers(0, domain.k - 1))
    if alt >= idx:
        alt += 1
    return domain.symbols[alt]


def krr_perturb_indices(indices: np.ndarray, k: int, budget: BudgetLike,
                        rng: np.random.Generator) -> np.ndarray:
    """Vectorised mechanism over category indices in ``[0, k)``."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= k):
        raise DomainError("category index out of range")
    p, _ = keep_probabilities(k, budget)
    keep = rng.random(indices.shape) < p
    alt = rng.integers(0, k - 1, size=indices.shape)
    alt = alt + (alt >= indices)
    return np.where(keep, indices, alt)


def transition_matrix(domain: CategoryDomain, budget: BudgetLike) -> np.ndarray:
    """``Q[b, a]`` = probability of reporting ``a`` when the truth is ``b``."""
    return np.vstack([krr_distribution(s, domain, budget) for s in domain.symbols])


def verify_ldp(domain: CategoryDomain, budget: BudgetLike) -> float:
    """Largest ratio ``P[T(a)=o] / P[T(b)=o]`` over all inputs ``a, b`` and outputs ``o``.

    Computed analytically from the mechanism's transition matrix; epsilon-LDP
    holds iff the result is at most ``e^eps``.
    """
    Q = transition_matrix(domain, budget)
    # per output column, the worst pair is (max row) / (min row)
    return float(np.max(Q.max(axis=0) / Q.min(axis=0)))


def debias_counts(counts: np.ndarray, n: int, k: int, budget: BudgetLike) -> np.ndarray:
    """Unbiased frequency estimate ``(c/n - q) / (p - q)`` from raw report counts."""
    if n < 1:
        raise EmptyInputError("need at least one report")
    p, q = keep_probabilities(k, budget)
    return (np.asarray(counts, dtype=float) / n - q) / (p - q)


def estimate_frequencies(reports: Iterable[PerturbedReport], domain: CategoryDomain,
                         budget: BudgetLike | None = None) -> np.ndarray:
    """Debiased category frequencies from perturbed reports.

    Null reports carry no randomized answer and are skipped. Estimates are not
    clipped, so entries may fall outside ``[0, 1]``; they always sum to 1.
    """
    reports = [r for r in reports if r.symbol != domain.null_symbol]
    if not reports:
        raise EmptyInputError("no non-null reports to estimate from")
    eps_seen = {r.epsilon_used for r in reports}
    if len(eps_seen) > 1:
        raise HeterogeneousBudgetError(f"reports mix epsilons {sorted(eps_seen)}")
    eps = eps_seen.pop()
    if budget is not None and as_budget(budget).epsilon != eps:
        raise HeterogeneousBudgetError(
            f"reports use epsilon={eps}, expected {as_budget(budget).epsilon}")
    tally = Counter(domain.index(r.symbol) for r in reports)
    counts = np.array([tally.get(i, 0) for i in range(domain.k)], dtype=float)
    return debias_counts(counts, len(reports), domain.k, eps)


def true_frequencies(symbols: Sequence[str], domain: CategoryDomain) -> np.ndarray:
    """Empirical category frequencies of raw symbols, ignoring nulls."""
    tally = Counter(domain.index(s) for s in symbols if s != domain.null_symbol)
    n = sum(tally.values())
    if n == 0:
        raise EmptyInputError("no non-null symbols")
    return np.array([tally.get(i, 0) / n for i in range(domain.k)])
