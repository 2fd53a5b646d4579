"""Discrete-observation hidden Markov model: scaled forward/backward, posteriors,
Baum-Welch re-estimation and a brute-force path enumerator used as a test oracle.

Conventions
-----------
* ``alpha[t]`` is the forward vector normalised to sum to 1; ``scale[t]`` is the
  reciprocal of the normaliser, so ``log P(O|w) = -sum(log(scale))``.
* ``beta[t]`` uses the same normalisers, which makes ``alpha[t] * beta[t]`` the
  state posterior without any further division.
* A sequence with zero probability gets ``log_likelihood = -inf``; its scale
  entries from the first impossible step onward are ``inf``.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .exceptions import (
    InfeasibleSequenceError,
    ModelError,
    SizeGuardError,
    TrainingError,
)

logger = logging.getLogger(__name__)

ROW_TOL = 1e-9
MAX_BRUTE_FORCE_PATHS = 10**6
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 200


def _check_stochastic(name: str, arr: np.ndarray, atol: float = ROW_TOL) -> None:
    if not np.all(np.isfinite(arr)):
        raise ModelError(f"{name} has non-finite entries")
    if np.any(arr < 0):
        raise ModelError(f"{name} has negative entries")
    sums = arr.sum(axis=-1)
    if not np.allclose(sums, 1.0, rtol=0, atol=atol):
        raise ModelError(f"{name} rows do not sum to 1 (max dev {np.abs(sums - 1).max():.3g})")


@dataclass
class HmmParams:
    """Model ``w = (pi, A, B)``.

    ``emit`` has one column per observation symbol, null symbol included.
    ``symbols`` optionally names those columns for persistence.
    """

    pi: np.ndarray
    trans: np.ndarray
    emit: np.ndarray
    symbols: tuple[str, ...] | None = None

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=float)
        self.trans = np.asarray(self.trans, dtype=float)
        self.emit = np.asarray(self.emit, dtype=float)
        if self.symbols is not None:
            self.symbols = tuple(self.symbols)
        self.validate()

    @property
    def n_states(self) -> int:
        return self.pi.shape[0]

    @property
    def n_symbols(self) -> int:
        return self.emit.shape[1]

    def validate(self, atol: float = ROW_TOL) -> None:
        N = self.pi.shape[0] if self.pi.ndim == 1 else -1
        if N < 1:
            raise ModelError("pi must be a non-empty vector")
        if self.trans.shape != (N, N):
            raise ModelError(f"trans must be {N}x{N}, got {self.trans.shape}")
        if self.emit.ndim != 2 or self.emit.shape[0] != N or self.emit.shape[1] < 1:
            raise ModelError(f"emit must be {N}xM, got {self.emit.shape}")
        if self.symbols is not None and len(self.symbols) != self.emit.shape[1]:
            raise ModelError("symbol table length does not match emission columns")
        _check_stochastic("pi", self.pi, atol)
        _check_stochastic("trans", self.trans, atol)
        _check_stochastic("emit", self.emit, atol)

    def copy(self) -> "HmmParams":
        return HmmParams(self.pi.copy(), self.trans.copy(), self.emit.copy(), self.symbols)

    def to_dict(self) -> dict:
        return {
            "N": self.n_states,
            "M": self.n_symbols,
            "symbols": list(self.symbols) if self.symbols is not None else None,
            "pi": self.pi.tolist(),
            "trans": self.trans.tolist(),
            "emit": self.emit.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "HmmParams":
        params = cls(data["pi"], data["trans"], data["emit"], data.get("symbols"))
        if params.n_states != data.get("N", params.n_states) or \
                params.n_symbols != data.get("M", params.n_symbols):
            raise ModelError("declared N/M disagree with matrix shapes")
        return params


def save_model(params: HmmParams, path: str | Path, metadata: dict | None = None) -> None:
    """Write the model as JSON. Python float repr round-trips exactly."""
    doc = params.to_dict()
    if metadata:
        doc["metadata"] = metadata
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> HmmParams:
    return HmmParams.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def load_model_metadata(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8")).get("metadata", {})


@dataclass
class ObservationSequence:
    pseudonym: str
    obs: np.ndarray

    def __post_init__(self):
        self.obs = np.asarray(self.obs, dtype=np.int64)
        if self.obs.ndim != 1 or self.obs.size < 1:
            raise ValueError("a sequence needs at least one observation")
        if self.obs.min() < 0:
            raise ValueError("observation indices must be non-negative")

    def __len__(self) -> int:
        return self.obs.size

    def replace(self, t: int, symbol: int) -> "ObservationSequence":
        obs = self.obs.copy()
        obs[t] = symbol
        return ObservationSequence(self.pseudonym, obs)


def _as_sequence(seq) -> ObservationSequence:
    if isinstance(seq, ObservationSequence):
        return seq
    return ObservationSequence("", seq)


def _check_range(params: HmmParams, obs: np.ndarray) -> None:
    if obs.max() >= params.n_symbols:
        raise ValueError(f"observation index {int(obs.max())} >= M={params.n_symbols}")


@dataclass
class TrellisMatrices:
    alpha: np.ndarray
    scale: np.ndarray
    log_likelihood: float
    beta: np.ndarray | None = None

    @property
    def feasible(self) -> bool:
        return math.isfinite(self.log_likelihood)

    def unscaled_alpha(self) -> np.ndarray:
        """``alpha_t(i) = P(O_1..O_t, q_t = i)``."""
        with np.errstate(divide="ignore", invalid="ignore"):
            norms = np.cumprod(1.0 / self.scale)
        return self.alpha * norms[:, None]

    def unscaled_beta(self) -> np.ndarray:
        """``beta_t(i) = P(O_{t+1}..O_T | q_t = i)``."""
        if self.beta is None:
            raise ValueError("backward pass not populated")
        c = 1.0 / self.scale
        # product of normalisers strictly after t
        tail = np.append(np.cumprod(c[::-1])[::-1][1:], 1.0)
        return self.beta * tail[:, None]


# -- batched core --------------------------------------------------------------
# Each helper works on a stack of equal-length sequences, shape (S, T).

def _emission_stack(emit: np.ndarray, obs: np.ndarray) -> np.ndarray:
    """``E[s, t, j] = b_j(O_t)`` for every sequence in the stack."""
    return emit.T[obs]


def _forward_core(pi, trans, E):
    S, T, N = E.shape
    alpha = np.zeros((S, T, N))
    c = np.zeros((S, T))
    a = pi[None, :] * E[:, 0]
    for t in range(T):
        if t:
            a = (alpha[:, t - 1] @ trans) * E[:, t]
        ct = a.sum(axis=1)
        c[:, t] = ct
        ok = ct > 0
        alpha[ok, t] = a[ok] / ct[ok, None]
    return alpha, c


def _backward_core(trans, E, c):
    S, T, N = E.shape
    beta = np.zeros((S, T, N))
    beta[:, T - 1] = 1.0
    for t in range(T - 2, -1, -1):
        b = (E[:, t + 1] * beta[:, t + 1]) @ trans.T
        ct = c[:, t + 1]
        ok = ct > 0
        beta[ok, t] = b[ok] / ct[ok, None]
    return beta


def _log_likelihoods(c: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(c).sum(axis=1)


def _scale_from(c: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return 1.0 / c


def _groups(sequences: Sequence[ObservationSequence]) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(positions, obs_stack)`` per distinct length, in first-seen order."""
    by_len: dict[int, list[int]] = {}
    for i, s in enumerate(sequences):
        by_len.setdefault(len(s), []).append(i)
    for idx in by_len.values():
        yield np.array(idx), np.vstack([sequences[i].obs for i in idx])


# -- single-sequence API ---------------------------------------------------------

def forward(params: HmmParams, seq) -> TrellisMatrices:
    """Scaled forward pass with ``alpha_j(1) = pi_j b_j(O_1)``."""
    seq = _as_sequence(seq)
    _check_range(params, seq.obs)
    E = _emission_stack(params.emit, seq.obs[None, :])
    alpha, c = _forward_core(params.pi, params.trans, E)
    return TrellisMatrices(alpha[0], _scale_from(c[0]), float(_log_likelihoods(c)[0]))


def backward(params: HmmParams, seq, trellis: TrellisMatrices | None = None) -> TrellisMatrices:
    """Backward pass reusing the forward scale factors.

    Returns the forward trellis with ``beta`` filled in.
    """
    seq = _as_sequence(seq)
    if trellis is None:
        trellis = forward(params, seq)
    E = _emission_stack(params.emit, seq.obs[None, :])
    with np.errstate(divide="ignore"):
        c = 1.0 / trellis.scale
    beta = _backward_core(params.trans, E, c[None, :])[0]
    return TrellisMatrices(trellis.alpha, trellis.scale, trellis.log_likelihood, beta)


def likelihood(params: HmmParams, seq) -> float:
    """``log P(O | w)``; ``-inf`` for impossible sequences."""
    return forward(params, seq).log_likelihood


def path_weights(params: HmmParams, seq, max_paths: int = MAX_BRUTE_FORCE_PATHS):
    """Enumerate every hidden path and its joint probability with ``seq``.

    Returns ``(paths, weights)`` with ``paths`` of shape ``(N**T, T)``.
    """
    seq = _as_sequence(seq)
    _check_range(params, seq.obs)
    N, T = params.n_states, len(seq)
    if N ** T > max_paths:
        raise SizeGuardError(f"{N}^{T} paths exceeds the guard of {max_paths}")
    paths = np.array(list(itertools.product(range(N), repeat=T)), dtype=np.int64).reshape(-1, T)
    o = seq.obs
    w = params.pi[paths[:, 0]] * params.emit[paths[:, 0], o[0]]
    for t in range(1, T):
        w = w * params.trans[paths[:, t - 1], paths[:, t]] * params.emit[paths[:, t], o[t]]
    return paths, w


def brute_force_likelihood(params: HmmParams, seq,
                           max_paths: int = MAX_BRUTE_FORCE_PATHS) -> float:
    """``log P(O | w)`` by summing all ``N**T`` path probabilities."""
    _, w = path_weights(params, seq, max_paths)
    total = float(w.sum())
    return math.log(total) if total > 0 else -math.inf


@dataclass
class PosteriorStats:
    """Posterior state statistics for one sequence.

    ``pairwise[t, i, j] = P(q_{t-1}=i, q_t=j | O)`` for ``t >= 1`` (row 0 is zero);
    ``state[t, j] = P(q_t=j | O)``; ``emission[j, k]`` accumulates ``state[t, j]``
    over the slots where symbol ``k`` was observed.
    """

    state: np.ndarray
    pairwise: np.ndarray
    emission: np.ndarray
    log_likelihood: float


def posteriors(params: HmmParams, seq) -> PosteriorStats:
    seq = _as_sequence(seq)
    tr = backward(params, seq)
    if not tr.feasible:
        raise InfeasibleSequenceError(
            f"sequence {seq.pseudonym!r} has zero probability under the model")
    c = 1.0 / tr.scale
    E = params.emit.T[seq.obs]
    state = tr.alpha * tr.beta
    pairwise = np.zeros((len(seq), params.n_states, params.n_states))
    pairwise[1:] = (tr.alpha[:-1, :, None] * params.trans[None]
                    * (E[1:] * tr.beta[1:])[:, None, :] / c[1:, None, None])
    emission = np.zeros((params.n_symbols, params.n_states))
    np.add.at(emission, seq.obs, state)
    return PosteriorStats(state, pairwise, emission.T, tr.log_likelihood)


def leave_one_out_posterior(params: HmmParams, seq, t: int) -> np.ndarray:
    """``P(q_t = j | O without O_t)``: the state belief at ``t`` from every other slot."""
    seq = _as_sequence(seq)
    tr = backward(params, seq)
    if not tr.feasible:
        raise InfeasibleSequenceError(
            f"sequence {seq.pseudonym!r} has zero probability under the model")
    pred = params.pi if t == 0 else tr.alpha[t - 1] @ params.trans
    w = pred * tr.beta[t]
    total = w.sum()
    return w / total if total > 0 else w


# -- training --------------------------------------------------------------------

@dataclass
class ExpectedCounts:
    """E-step accumulators summed over all feasible sequences.

    Normalising each row gives the Baum-Welch update. ``log_likelihood`` is the
    total over feasible sequences under the parameters that produced the counts.
    """

    initial: np.ndarray
    trans: np.ndarray
    emit: np.ndarray
    log_likelihood: float
    n_sequences: int
    n_infeasible: int = 0

    def to_dict(self) -> dict:
        return {
            "initial": self.initial.tolist(),
            "trans": self.trans.tolist(),
            "emit": self.emit.tolist(),
            "log_likelihood": self.log_likelihood,
            "n_sequences": self.n_sequences,
            "n_infeasible": self.n_infeasible,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExpectedCounts":
        return cls(np.asarray(data["initial"], float), np.asarray(data["trans"], float),
                   np.asarray(data["emit"], float), float(data["log_likelihood"]),
                   int(data["n_sequences"]), int(data.get("n_infeasible", 0)))


def sequence_log_likelihoods(params: HmmParams, sequences: Sequence[ObservationSequence]) -> np.ndarray:
    """Per-sequence ``log P(O|w)`` in input order."""
    out = np.empty(len(sequences))
    for idx, obs in _groups(sequences):
        _check_range(params, obs)
        _, c = _forward_core(params.pi, params.trans, _emission_stack(params.emit, obs))
        out[idx] = _log_likelihoods(c)
    return out


def total_log_likelihood(params: HmmParams, sequences: Sequence[ObservationSequence]) -> float:
    return math.fsum(sequence_log_likelihoods(params, sequences))


def expected_counts(params: HmmParams, sequences: Sequence[ObservationSequence]) -> ExpectedCounts:
    N, M = params.n_states, params.n_symbols
    initial = np.zeros(N)
    trans = np.zeros((N, N))
    emit_t = np.zeros((M, N))
    lls = np.full(len(sequences), -np.inf)
    for idx, obs in _groups(sequences):
        _check_range(params, obs)
        E = _emission_stack(params.emit, obs)
        alpha, c = _forward_core(params.pi, params.trans, E)
        ok = np.all(c > 0, axis=1)
        if not ok.any():
            continue
        alpha, c, E, obs = alpha[ok], c[ok], E[ok], obs[ok]
        lls[idx[ok]] = _log_likelihoods(c)
        beta = _backward_core(params.trans, E, c)
        gamma = alpha * beta
        initial += gamma[:, 0].sum(axis=0)
        if obs.shape[1] > 1:
            right = E[:, 1:] * beta[:, 1:] / c[:, 1:, None]
            trans += params.trans * np.einsum("sti,stj->ij", alpha[:, :-1], right)
        np.add.at(emit_t, obs.ravel(), gamma.reshape(-1, N))
    feasible = np.isfinite(lls)
    return ExpectedCounts(initial, trans, emit_t.T, math.fsum(lls[feasible]),
                          int(feasible.sum()), int((~feasible).sum()))


def _normalise_rows(counts: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    counts = np.atleast_2d(counts)
    fallback = np.atleast_2d(fallback)
    sums = counts.sum(axis=1)
    out = fallback.copy()
    live = sums > 0
    out[live] = counts[live] / sums[live, None]
    return out


def m_step(prior: HmmParams, counts: ExpectedCounts, update_pi: bool = True) -> HmmParams:
    """Normalise accumulated counts; rows with zero occupancy keep the prior row."""
    pi = _normalise_rows(counts.initial, prior.pi)[0] if update_pi else prior.pi.copy()
    trans = _normalise_rows(counts.trans, prior.trans)
    emit = _normalise_rows(counts.emit, prior.emit)
    return HmmParams(pi, trans, emit, prior.symbols)


def baum_welch_step(params: HmmParams, sequences: Sequence[ObservationSequence],
                    update_pi: bool = True) -> HmmParams:
    counts = expected_counts(params, sequences)
    if counts.n_sequences == 0:
        raise TrainingError("every sequence is infeasible under the current model")
    return m_step(params, counts, update_pi)


def train(init: HmmParams, sequences: Sequence[ObservationSequence],
          tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
          update_pi: bool = True, return_counts: bool = False):
    """Baum-Welch until the total log-likelihood moves by less than ``tol``.

    Returns ``(params, trace)`` where ``trace[i]`` is the total log-likelihood
    after iteration ``i + 1``. With ``return_counts`` the expected counts whose
    normalisation produced the final parameters are returned as a third item.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    sequences = list(sequences)
    lls = sequence_log_likelihoods(init, sequences)
    feasible = [s for s, ll in zip(sequences, lls) if math.isfinite(ll)]
    if not feasible:
        raise TrainingError("every sequence is infeasible under the initial model")
    if len(feasible) < len(sequences):
        logger.warning("dropping %d sequences infeasible under the initial model",
                       len(sequences) - len(feasible))

    params = init
    counts = expected_counts(params, feasible)
    prev = counts.log_likelihood
    trace: list[float] = []
    for _ in range(max_iter):
        used = counts
        params = m_step(params, counts, update_pi)
        counts = expected_counts(params, feasible)
        trace.append(counts.log_likelihood)
        if abs(counts.log_likelihood - prev) < tol:
            break
        prev = counts.log_likelihood
    if return_counts:
        return params, trace, used
    return params, trace


def random_params(n_states: int, n_symbols: int, rng: np.random.Generator,
                  base_emission: np.ndarray | None = None, concentration: float = 1.0,
                  symbols: Iterable[str] | None = None) -> HmmParams:
    """Dirichlet-random stochastic rows.

    With ``base_emission`` every state's emission row starts from that shared
    pattern and is jittered by a Dirichlet draw to break the symmetry.
    """
    pi = rng.dirichlet(np.full(n_states, concentration))
    trans = rng.dirichlet(np.full(n_states, concentration), size=n_states)
    jitter = rng.dirichlet(np.full(n_symbols, concentration), size=n_states)
    if base_emission is None:
        emit = jitter
    else:
        emit = np.asarray(base_emission, float)[None, :] * (0.5 + n_symbols * jitter)
        emit /= emit.sum(axis=1, keepdims=True)
    return HmmParams(pi, trans, emit, tuple(symbols) if symbols is not None else None)


def uniform_params(n_states: int, n_symbols: int,
                   symbols: Iterable[str] | None = None) -> HmmParams:
    return HmmParams(np.full(n_states, 1 / n_states),
                     np.full((n_states, n_states), 1 / n_states),
                     np.full((n_states, n_symbols), 1 / n_symbols),
                     tuple(symbols) if symbols is not None else None)


def sample_sequence(params: HmmParams, length: int, rng: np.random.Generator):
    """Draw ``(states, observations)`` of the given length."""
    states = np.empty(length, dtype=np.int64)
    obs = np.empty(length, dtype=np.int64)
    cum_trans = np.cumsum(params.trans, axis=1)
    cum_emit = np.cumsum(params.emit, axis=1)
    s = int(np.searchsorted(np.cumsum(params.pi), rng.random(), side="right"))
    for t in range(length):
        if t:
            s = int(np.searchsorted(cum_trans[s], rng.random(), side="right"))
        s = min(s, params.n_states - 1)
        states[t] = s
        obs[t] = min(int(np.searchsorted(cum_emit[s], rng.random(), side="right")),
                     params.n_symbols - 1)
    return states, obs
