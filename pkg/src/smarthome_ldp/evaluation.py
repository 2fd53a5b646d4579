"""Evaluation helpers: the risk-versus-query-count curve and a likelihood-ratio
attacker that tries to tell obfuscated sequences from their originals."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .hmm import HmmParams, ObservationSequence, likelihood, sample_sequence
from .risk import ObfuscationPolicy, SensitiveStateSet, obfuscate_sequence, sequence_risk


def risk_by_event_count(params: HmmParams, seq: ObservationSequence, sensitive: SensitiveStateSet,
                        event_symbols, saturation: int = 5, ignore=()) -> list[float]:
    """Risk of the prefix ending at each successive event whose symbol is in ``event_symbols``."""
    event_symbols = set(int(s) for s in event_symbols)
    out = []
    for t, o in enumerate(seq.obs):
        if int(o) in event_symbols:
            prefix = ObservationSequence(seq.pseudonym, seq.obs[:t + 1])
            out.append(sequence_risk(params, prefix, sensitive, saturation, ignore).aggregate_risk)
    return out


@dataclass
class AttackResult:
    accuracy: float
    n_pairs: int
    original_is_more_likely: bool
    shadow_pairs: int


def calibrate_orientation(params: HmmParams, sensitive: SensitiveStateSet, risk_threshold: float,
                          policy: ObfuscationPolicy, n_shadow: int, length: int,
                          rng: np.random.Generator) -> tuple[bool, int]:
    """Learn whether originals tend to be the more likely member of a pair.

    Shadow sequences are sampled from ``params`` and obfuscated with the same
    model, so the attacker only uses what was released.
    """
    votes, pairs = 0, 0
    for i in range(n_shadow):
        _, obs = sample_sequence(params, length, rng)
        orig = ObservationSequence(f"shadow{i}", obs)
        obf, plan = obfuscate_sequence(params, orig, sensitive, risk_threshold, policy)
        if not plan.substitutions:
            continue
        pairs += 1
        votes += likelihood(params, orig) > likelihood(params, obf)
    return (2 * votes > pairs) if pairs else True, pairs


def pairwise_attack(params: HmmParams, originals: Sequence[ObservationSequence],
                    obfuscated: Sequence[ObservationSequence], original_is_more_likely: bool,
                    rng: np.random.Generator) -> tuple[float, int]:
    """Shown each (original, obfuscated) pair in random order, guess the original.

    Pairs where nothing was substituted are skipped; likelihood ties are a
    coin flip. Returns ``(accuracy, pairs)``.
    """
    correct, n = 0.0, 0
    for a, b in zip(originals, obfuscated):
        if np.array_equal(a.obs, b.obs):
            continue
        n += 1
        first, second = (a, b) if rng.random() < 0.5 else (b, a)
        l1, l2 = likelihood(params, first), likelihood(params, second)
        if l1 == l2:
            guess_first = rng.random() < 0.5
        else:
            guess_first = (l1 > l2) == original_is_more_likely
        correct += (first is a) == guess_first
    return (correct / n if n else float("nan")), n


def likelihood_ratio_attack(released: HmmParams, sensitive: SensitiveStateSet | None,
                            originals: Sequence[ObservationSequence],
                            obfuscated: Sequence[ObservationSequence], risk_threshold: float,
                            policy: ObfuscationPolicy, rng: np.random.Generator,
                            n_shadow: int = 40) -> AttackResult:
    """Calibrate on shadow data from the released model, then attack real pairs."""
    if sensitive is None:
        orientation, shadow = True, 0
    else:
        orientation, shadow = calibrate_orientation(
            released, sensitive, risk_threshold, policy, n_shadow, len(originals[0]), rng)
    acc, n = pairwise_attack(released, originals, obfuscated, orientation, rng)
    return AttackResult(acc, n, orientation, shadow)
