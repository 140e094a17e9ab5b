"""Closed-form reliability expressions and dimensioning searches.

These are the analytical counterparts that simulation results are checked
against. The dedicated/shared error split used by :func:`composed_error` is a
construction of this package (expectation over the arrival offset of the
probability that every repetition fails); it is validated against an
exhaustive outcome enumeration in the test suite.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from typing import Optional

from .cg_core import RvPattern, occasions_available_flexible, occasions_available_legacy
from .errors import ModelViolation
from .gnb_model import BlerModel, LinkModel, ReceivedSegment, bler


def p_at_least_one_rep(K: int, N: int, T: int = 0) -> float:
    """Chance that a uniformly placed arrival still catches one of K occasions spaced ``T`` apart."""
    if K < 1 or T < 0:
        raise ValueError("K >= 1 and T >= 0 required")
    span = T * (K - 1) + K
    if N < span:
        raise ValueError(f"layout of {span} slots does not fit a period of {N} slots")
    return span / N


def p_unknown_detection(link: LinkModel) -> float:
    return link.p_transmit * link.p_detect_energy * (1.0 - link.p_id_decode - link.p_misdetect)


def p_common_nack_recovery(link: LinkModel) -> float:
    return (p_unknown_detection(link) * link.p_common_nack_decode
            * link.p_detect_energy * link.p_id_decode)


@dataclass(frozen=True)
class SharedPoolConfig:
    k_plus: int = 1
    n_ues: int = 1
    activity_q: float = 0.0

    def __post_init__(self):
        if self.k_plus < 1 or self.n_ues < 1 or not 0.0 <= self.activity_q <= 1.0:
            raise ValueError("k_plus >= 1, n_ues >= 1 and activity_q in [0, 1] required")


def p_shared_collision(pool: SharedPoolConfig) -> float:
    return 1.0 - (1.0 - pool.activity_q / pool.k_plus) ** (pool.n_ues - 1)


@dataclass(frozen=True)
class DedicatedCgSummary:
    """Arrival statistics of one dedicated CG period.

    By default the arrival falls on each of the K occasions with probability
    ``p_arrival`` and misses all of them with the remaining mass. ``arrival_pmf``
    overrides this with explicit ``{b: prob}`` weights (b is 1-based).
    ``rv0_spacing`` None means flexible start; 1/2/4 selects the RV0-only rule.
    """

    p_arrival: float = 0.0
    K: int = 1
    gamma: float = 10.0
    arrival_pmf: Optional[tuple] = None
    rv0_spacing: Optional[int] = None
    rv_pattern: RvPattern = RvPattern()
    symbols_per_rep: int = 14
    n_rbs: int = 1

    @classmethod
    def at_occasion(cls, b: int, K: int, gamma: float, **kw) -> "DedicatedCgSummary":
        return cls(p_arrival=1.0, K=K, gamma=gamma, arrival_pmf=((b, 1.0),), **kw)

    def offset_pmf(self) -> tuple[dict, float]:
        """Return ``({b: prob}, miss_prob)``."""
        if self.arrival_pmf is not None:
            pmf = {int(b): float(p) for b, p in self.arrival_pmf}
        else:
            pmf = {b: self.p_arrival for b in range(1, self.K + 1)}
        total = sum(pmf.values())
        if total > 1.0 + 1e-12 or any(p < 0 for p in pmf.values()):
            raise ValueError("arrival probabilities must be non-negative and sum to <= 1")
        return pmf, max(0.0, 1.0 - total)

    def available(self, b: int) -> int:
        if self.rv0_spacing is None:
            return occasions_available_flexible(self.K, b)
        return occasions_available_legacy(self.K, self.rv0_spacing, b)


def _reps_error(ded: DedicatedCgSummary, model: BlerModel, indices) -> float:
    segs = [ReceivedSegment(ded.symbols_per_rep, ded.n_rbs, ded.rv_pattern.rv(i), i)
            for i in indices]
    if not segs:
        return 1.0
    return bler(model, ded.gamma, segs)


def _offset_error(ded, pool, model, b, p_c) -> float:
    x = ded.available(b)
    if x == 0:
        # postponed to the next period, which carries all K dedicated repetitions
        return _reps_error(ded, model, range(ded.K))
    dedicated = list(range(x))
    shared = list(range(x, ded.K))
    total = 0.0
    for mask in itertools.product((False, True), repeat=len(shared)):
        kept = [i for i, ok in zip(shared, mask) if ok]
        w = (1.0 - p_c) ** len(kept) * p_c ** (len(shared) - len(kept))
        if w:
            total += w * _reps_error(ded, model, dedicated + kept)
    return total


def composed_error(ded: DedicatedCgSummary, pool: SharedPoolConfig, model: BlerModel) -> float:
    """Packet error with dedicated repetitions backed up by the shared pool.

    For each arrival offset the first ``available(b)`` repetitions go on the
    dedicated CG and the remaining ``K - X`` on distinct shared-pool slots,
    where each is lost to a collision with probability
    :func:`p_shared_collision`. Surviving repetitions are combined. An
    arrival that misses every dedicated occasion waits for the next period.
    """
    pmf, miss = ded.offset_pmf()
    p_c = p_shared_collision(pool)
    err = sum(p * _offset_error(ded, pool, model, b, p_c) for b, p in sorted(pmf.items()))
    if miss:
        err += miss * _reps_error(ded, model, range(ded.K))
    return min(1.0, max(0.0, err))


def p_error_dedicated(ded: DedicatedCgSummary, model: BlerModel) -> float:
    """Probability that every dedicated repetition of the arrival's period fails."""
    pmf, miss = ded.offset_pmf()
    err = sum(p * _reps_error(ded, model, range(ded.available(b) or ded.K))
              for b, p in pmf.items())
    return err + miss * _reps_error(ded, model, range(ded.K))


def p_error_shared(ded: DedicatedCgSummary, pool: SharedPoolConfig, model: BlerModel) -> float:
    """Probability that every shared-pool repetition fails (1 when none are sent)."""
    pmf, miss = ded.offset_pmf()
    p_c = p_shared_collision(pool)
    single = _reps_error(ded, model, [0]) if model.kind == "bernoulli" else None
    out = miss
    for b, p in pmf.items():
        x = ded.available(b)
        m = ded.K - x if x else 0
        if model.kind == "bernoulli":
            f = p_c + (1.0 - p_c) * single
        else:
            f = p_c + (1.0 - p_c) * _reps_error(ded, model, [x])
        out += p * f ** m
    return out


def find_min_kplus(ded: DedicatedCgSummary, pool: SharedPoolConfig, model: BlerModel,
                   target: float, k_max: int = 64, method: str = "linear") -> Optional[int]:
    """Smallest pool size per slot whose composed error meets ``target``.

    ``method="linear"`` walks k = 1..k_max and checks that the error never
    rises along the way; ``"bisect"`` assumes that monotonicity.
    """
    def err(k):
        return composed_error(ded, replace(pool, k_plus=k), model)

    if method == "bisect":
        if err(k_max) > target:
            return None
        lo, hi = 1, k_max
        while lo < hi:
            mid = (lo + hi) // 2
            if err(mid) <= target:
                hi = mid
            else:
                lo = mid + 1
        return lo
    if method != "linear":
        raise ValueError(f"unknown search method {method!r}")
    prev = math.inf
    for k in range(1, k_max + 1):
        e = err(k)
        if e > prev + 1e-15:
            raise ModelViolation(f"composed error rises from {prev} to {e} at k_plus={k}")
        if e <= target:
            return k
        prev = e
    return None


def mean_alignment_delay(p: int, m: int, offsets=None) -> float:
    """Mean wait (slots) from a continuous-uniform arrival to the next of ``m`` CG starts.

    The CGs share period ``p`` and start at ``offsets`` (default: equally
    spaced, ``floor(j * p / m)``). With gaps g_j between successive starts the
    expected wait is sum(g_j^2) / (2p), which is p / (2m) for equal spacing.
    """
    if m < 1 or p < 1:
        raise ValueError("p >= 1 and m >= 1 required")
    if offsets is None:
        if p % m == 0:
            return p / (2 * m)
        offsets = [j * p // m for j in range(m)]
    starts = sorted(set(o % p for o in offsets))
    gaps = [b - a for a, b in zip(starts, starts[1:] + [starts[0] + p])]
    return sum(g * g for g in gaps) / (2.0 * p)


def mean_repetitions_uniform(K: int, a: Optional[int] = None) -> float:
    """Mean occasions used when the arrival occasion b is uniform on 1..K."""
    if a is None:
        return sum(occasions_available_flexible(K, b) for b in range(1, K + 1)) / K
    return sum(occasions_available_legacy(K, a, b) for b in range(1, K + 1)) / K
