"""UE-side MAC behaviour for configured-grant uplink."""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Callable, Iterable, Iterator, Optional, Sequence

from .cg_core import (
    CgConfig,
    DciMessage,
    FeatureProfile,
    allowed_start_indices,
    check_layout,
    period_occasions,
    rv_for_start,
    tos_per_period,
)
from .errors import ConfigurationError, ProfileViolation
from .time_grid import SYMBOLS_PER_SLOT, TddPattern

S = SYMBOLS_PER_SLOT


# ------------------------------------------------------------------ traffic

class Packet:
    __slots__ = ("id", "ue_id", "arrival_time", "arrival_offset", "size_bits",
                 "deadline", "delivered_time", "reps_first_period", "first_tx_time",
                 "waited")

    def __init__(self, id, ue_id, arrival_time, size_bits, deadline, arrival_offset=0.0):
        self.id = id
        self.ue_id = ue_id
        self.arrival_time = arrival_time        # first symbol boundary the MAC can act on
        self.arrival_offset = arrival_offset    # how long before that boundary it arrived
        self.size_bits = size_bits
        self.deadline = deadline                # latency budget in symbols
        self.delivered_time = None
        self.reps_first_period = 0
        self.first_tx_time = None
        self.waited = False

    def latency(self) -> Optional[float]:
        if self.delivered_time is None:
            return None
        return self.delivered_time - self.arrival_time + self.arrival_offset

    @property
    def success(self) -> bool:
        lat = self.latency()
        return lat is not None and lat <= self.deadline


@dataclass(frozen=True)
class TrafficModel:
    """Packet arrival process.

    ``deterministic``: one packet every ``period_slots`` at ``phase_symbols``.
    ``uniform_in_period``: one packet per window of ``spacing_slots``
    (default ``n_slots``), placed uniformly over the first ``n_slots`` slots.
    ``resolution`` picks slot starts (per-slot probability 1/N), symbol
    starts, or a continuous instant whose sub-symbol part is kept for latency.
    ``jittered``: periodic with a uniform or normal jitter in symbols.
    ``none``: no traffic.
    """

    kind: str = "deterministic"
    payload_bits: int = 256
    period_slots: int = 1
    phase_symbols: int = 0
    n_slots: int = 1
    spacing_slots: Optional[int] = None
    offset_slots: int = 0
    resolution: str = "slot"
    jitter: str = "uniform"
    jitter_symbols: float = 0.0

    def __post_init__(self):
        if self.kind not in ("deterministic", "uniform_in_period", "jittered", "none"):
            raise ConfigurationError(f"unknown traffic kind {self.kind!r}")
        if self.resolution not in ("slot", "symbol", "continuous"):
            raise ConfigurationError(f"unknown arrival resolution {self.resolution!r}")
        if self.jitter not in ("uniform", "normal"):
            raise ConfigurationError(f"unknown jitter distribution {self.jitter!r}")
        if self.period_slots < 1 or self.n_slots < 1:
            raise ConfigurationError("traffic periods must be >= 1 slot")
        if self.spacing_slots is not None and self.spacing_slots < self.n_slots:
            raise ConfigurationError("spacing_slots must be >= n_slots")

    def arrivals(self, uniform: Callable[[], float]) -> Iterator[tuple[int, float]]:
        """Yield ``(arrival_symbol, sub_symbol_offset)`` in time order, forever."""
        if self.kind == "none":
            return
        if self.kind == "deterministic":
            n = 0
            while True:
                yield n * self.period_slots * S + self.phase_symbols, 0.0
                n += 1
        if self.kind == "uniform_in_period":
            spacing = (self.spacing_slots or self.n_slots) * S
            base = self.offset_slots * S
            n = 0
            while True:
                w = base + n * spacing
                u = uniform()
                if self.resolution == "slot":
                    yield w + min(int(u * self.n_slots), self.n_slots - 1) * S, 0.0
                elif self.resolution == "symbol":
                    yield w + min(int(u * self.n_slots * S), self.n_slots * S - 1), 0.0
                else:
                    t = u * self.n_slots * S
                    boundary = math.ceil(t)
                    yield w + boundary, boundary - t
                n += 1
        # jittered
        nd = NormalDist()
        prev = -1
        n = 0
        while True:
            base = n * self.period_slots * S + self.phase_symbols
            u = uniform()
            if self.jitter == "uniform":
                j = int(u * (int(self.jitter_symbols) + 1))
            else:
                j = round(nd.inv_cdf(min(max(u, 1e-12), 1 - 1e-12)) * self.jitter_symbols)
            t = max(base + j, prev + 1, 0)
            prev = t
            yield t, 0.0
            n += 1


# --------------------------------------------------------------------- HARQ

class HarqState(enum.Enum):
    IDLE = "IDLE"
    AWAITING_FEEDBACK = "AWAITING_FEEDBACK"
    RETRANSMITTING = "RETRANSMITTING"
    DONE_ACK = "DONE_ACK"
    DONE_FAILED = "DONE_FAILED"


class HarqProcess:
    __slots__ = ("harq_id", "ndi", "attempts", "rv_cursor", "cgt_deadline",
                 "retx_timer_deadline", "state", "tb", "timer_token", "cg_id")

    def __init__(self, harq_id: int):
        self.harq_id = harq_id
        self.ndi = 0
        self.attempts = 0
        self.rv_cursor = 0
        self.cgt_deadline = None
        self.retx_timer_deadline = None
        self.state = HarqState.IDLE
        self.tb = None
        self.timer_token = 0
        self.cg_id = None

    def start(self, tb, cg_id) -> None:
        self.ndi ^= 1
        self.attempts = 0
        self.rv_cursor = 0
        self.cgt_deadline = None
        self.retx_timer_deadline = None
        self.state = HarqState.AWAITING_FEEDBACK
        self.tb = tb
        self.timer_token += 1
        self.cg_id = cg_id

    @property
    def done(self) -> bool:
        return self.state in (HarqState.DONE_ACK, HarqState.DONE_FAILED)

    def is_free(self, now: int) -> bool:
        if self.state is HarqState.IDLE or self.done:
            return True
        return self.cgt_deadline is not None and now >= self.cgt_deadline


@dataclass(frozen=True)
class CgUci:
    harq_id: int
    rv: int
    ndi: int
    cot_sharing: bool = False


# ---------------------------------------------------------- occasion schedule

class CgSchedule:
    """Per-CG occasion timing with layouts cached by TDD phase.

    ``template(n)`` returns, for period ``n``, tuples
    ``(start, end, carrier, valid, n_symbols, rv_label, segment_lengths)`` with
    times relative to the period start.
    """

    def __init__(self, cfg: CgConfig, profile: FeatureProfile, tdd: TddPattern,
                 complementary_carrier: Optional[int] = None):
        check_layout(cfg, profile)
        self.cfg = cfg
        self.profile = profile
        self.tdd = tdd
        self.complementary_carrier = complementary_carrier
        self.n_tos = tos_per_period(cfg, profile)
        self.allowed = tuple(sorted(allowed_start_indices(cfg, profile)))
        self.nru = profile.is_nru
        self.anchored = cfg.flexible_start or self.nru
        self._templates: dict[int, tuple] = {}
        # rv_table[start][i]: label on occasion i of a bundle opened at ``start``
        self.rv_table = tuple(tuple(rv_for_start(cfg, b, i, self.anchored) for i in range(self.n_tos))
                              for b in range(self.n_tos))
        self._period_symbols = cfg.period_p * S

    def period_start(self, n: int) -> int:
        return (self.cfg.offset + n * self.cfg.period_p) * S

    def period_of(self, t: int) -> int:
        slot = t // S
        if slot < self.cfg.offset:
            return 0
        return (slot - self.cfg.offset) // self.cfg.period_p

    def template(self, n: int) -> tuple:
        key = (self.cfg.offset + n * self.cfg.period_p) % self.tdd.period_slots
        tmpl = self._templates.get(key)
        if tmpl is None:
            base = self.period_start(n)
            occ = period_occasions(self.cfg, self.profile, self.tdd, n, self.complementary_carrier)
            tmpl = tuple((o.start - base, o.end - base, o.carrier_id, o.valid, o.n_symbols, o.rv,
                          tuple(sp.length for sp in o.segments))
                         for o in occ)
            self._templates[key] = tmpl
        return tmpl

    def occasion(self, n: int, i: int) -> tuple:
        rs, re, c, ok, ns, rv, _ = self.template(n)[i]
        base = self.period_start(n)
        return base + rs, base + re, c, ok, ns, rv

    def global_index(self, n: int, i: int) -> int:
        return n * self.n_tos + i

    def from_global(self, g: int) -> tuple[int, int]:
        return divmod(g, self.n_tos)

    def next_global_at_or_after(self, t: int, valid_only: bool = True, limit: int = 64) -> Optional[int]:
        """First occasion (any index) starting at or after ``t``."""
        n0 = self.period_of(t)
        for n in range(n0, n0 + limit):
            base = self.period_start(n)
            for i, occ in enumerate(self.template(n)):
                rs, ok = occ[0], occ[3]
                if base + rs >= t and (ok or not valid_only):
                    return self.global_index(n, i)
        return None


@dataclass(frozen=True)
class GrantChoice:
    cg_id: int
    period: int
    start_index: int
    start_time: int
    waited: bool


WAIT_NEXT_PERIOD = "WAIT_NEXT_PERIOD"


def select_grant(schedules: Sequence[CgSchedule], arrival: int, is_free=None,
                 margin: int = 0, search_periods: int = 64) -> Optional[GrantChoice]:
    """Pick the CG occasion on which a bundle arriving at ``arrival`` opens.

    Among all given (active) CGs, the earliest valid permitted start at or
    after ``arrival + margin`` wins; ties go to the lower cg_id. ``waited`` is
    set when that start lies in a later period than the arrival's own.
    ``is_free(schedule, period, index)`` can veto occasions already in use.
    """
    t = arrival + margin
    best = None
    if len(schedules) > 1:
        schedules = sorted(schedules, key=lambda s: s.cfg.cg_id)
    for sch in schedules:
        n0 = sch.period_of(t)
        found = None
        for n in range(n0, n0 + search_periods):
            base = sch.period_start(n)
            if base + sch._period_symbols <= t:
                continue
            tmpl = sch.template(n)
            for i in sch.allowed:
                rs, ok = tmpl[i][0], tmpl[i][3]
                if ok and base + rs >= t and (is_free is None or is_free(sch, n, i)):
                    found = GrantChoice(sch.cfg.cg_id, n, i, base + rs, n > n0)
                    break
            if found:
                break
        if found and (best is None or found.start_time < best.start_time):
            best = found
    return best


class PlannedTx:
    """One repetition the UE intends to send."""

    __slots__ = ("tb", "kind", "cg_id", "period", "index", "gidx", "start", "end",
                 "carrier", "valid", "n_symbols", "rv", "attempt", "cancelled",
                 "harq_id", "uci", "pool_occ", "priority", "bundle", "n_rbs",
                 "seg_lengths", "fired")

    def __init__(self, tb, kind, cg_id, period, index, gidx, start, end, carrier,
                 valid, n_symbols, rv, harq_id, priority="LOW", n_rbs=1):
        self.tb = tb
        self.kind = kind            # "cg" | "shared" | "dynamic"
        self.cg_id = cg_id
        self.period = period
        self.index = index
        self.gidx = gidx
        self.start = start
        self.end = end
        self.carrier = carrier
        self.valid = valid
        self.n_symbols = n_symbols
        self.rv = rv
        self.attempt = 0
        self.cancelled = False
        self.harq_id = harq_id
        self.uci = None
        self.pool_occ = None
        self.priority = priority
        self.bundle = None
        self.n_rbs = n_rbs
        self.seg_lengths = (n_symbols,)
        self.fired = False

    def __repr__(self):
        return (f"PlannedTx({self.kind}, cg={self.cg_id}, n={self.period}, i={self.index}, "
                f"t=[{self.start},{self.end}), rv={self.rv})")


def transmit_repetitions(sch: CgSchedule, tb, period: int, start_index: int, harq_id: int,
                         ndi: int = 0, reserved=None, n_rbs: int = 1,
                         enforce_start_rule: bool = True) -> list[PlannedTx]:
    """Plan the repetitions of one bundle opening at ``start_index`` of ``period``.

    NR bundles run to the last occasion of the period. NR-U bundles carry at
    most K repetitions and stop early at an occasion another process holds
    (``reserved`` is a set of global occasion indices). Every NR-U repetition
    carries CG-UCI.
    """
    cfg = sch.cfg
    if enforce_start_rule and start_index not in sch.allowed:
        raise ProfileViolation("transmission_start",
                               f"occasion {start_index} is not a permitted start for cg {cfg.cg_id}")
    nru = sch.nru
    if nru:
        last = min(start_index + cfg.K, sch.n_tos)
    else:
        last = sch.n_tos
    tmpl = sch.template(period)
    base = sch.period_start(period)
    rvs = sch.rv_table[start_index]
    out = []
    for i in range(start_index, last):
        g = sch.global_index(period, i)
        if nru and reserved is not None and g in reserved:
            break
        rs, re, c, ok, ns, _, lens = tmpl[i]
        rv = rvs[i]
        p = PlannedTx(tb, "cg", cfg.cg_id, period, i, g, base + rs, base + re, c, ok, ns, rv,
                      harq_id, cfg.phy_priority, n_rbs)
        p.seg_lengths = lens
        if nru:
            p.uci = CgUci(harq_id, rv, ndi)
        out.append(p)
    return out


# ------------------------------------------------------- overlap resolution

@dataclass
class Grant:
    kind: str                   # "CG" | "DG"
    start: int
    end: int
    priority: str = "LOW"
    cg_id: Optional[int] = None
    has_data: bool = True
    nru_retx: bool = False
    ref: object = None


def resolve_overlap(profile: FeatureProfile, grants: Sequence[Grant]) -> tuple[list, list]:
    """Split overlapping uplink grants of one UE into (kept, cancelled).

    Release 15 always keeps the dynamic grant. Release 16 keeps the higher
    PHY priority; at equal priority one TB goes on the dynamic grant if there
    is one, else on the earliest CG. NR-U retransmissions are never cancelled.
    """
    grants = list(grants)
    if len(grants) <= 1:
        return grants, []
    protected = [g for g in grants if g.nru_retx and profile.is_nru]
    if protected:
        kept = protected
    else:
        pool = grants
        if profile is FeatureProfile.NR_R16:
            top = "HIGH" if any(g.priority == "HIGH" for g in grants) else "LOW"
            pool = [g for g in grants if g.priority == top]
        dgs = [g for g in pool if g.kind == "DG"]
        if dgs:
            kept = [min(dgs, key=lambda g: g.start)]
        else:
            kept = [min(pool, key=lambda g: (g.start, g.cg_id if g.cg_id is not None else -1))]
    cancelled = [g for g in grants if not any(g is k for k in kept)]
    return kept, cancelled


# ---------------------------------------------------------------------- LBT

@dataclass(frozen=True)
class LbtConfig:
    mode: str = "LBE"           # "LBE" | "FBE"
    p_busy: float = 0.0
    backoff_window: int = 7     # symbols, LBE
    ffp_slots: int = 1          # FBE

    def __post_init__(self):
        if self.mode not in ("LBE", "FBE"):
            raise ConfigurationError(f"LBT mode must be LBE or FBE, got {self.mode!r}")
        if not 0.0 <= self.p_busy <= 1.0:
            raise ConfigurationError("p_busy must lie in [0, 1]")
        if self.backoff_window < 1 or self.ffp_slots < 1:
            raise ConfigurationError("backoff_window and ffp_slots must be >= 1")


@dataclass(frozen=True)
class LbtDecision:
    proceed: bool
    backoff: int = 0


class LbtChannel:
    """Channel-sensing state: FBE results are drawn once per fixed frame period."""

    def __init__(self, config: LbtConfig, uniform: Callable[[], float]):
        self.config = config
        self.uniform = uniform
        self._ffp: dict[tuple, bool] = {}

    def ffp_clear(self, carrier: int, t: int) -> bool:
        key = (carrier, t // (self.config.ffp_slots * S))
        ok = self._ffp.get(key)
        if ok is None:
            ok = self.uniform() >= self.config.p_busy
            self._ffp[key] = ok
            if len(self._ffp) > 4096:
                for k in sorted(self._ffp)[:2048]:
                    del self._ffp[k]
        return ok


def lbt_gate(channel: LbtChannel, carrier: int, start: int, length: int) -> LbtDecision:
    """Listen before talk for one occasion.

    LBE: busy with ``p_busy`` at the occasion start; a busy channel costs a
    uniform backoff of 1..W symbols followed by one more sensing, and the
    occasion is lost if the backoff eats all of it. FBE: usable iff the
    gNB's start-of-FFP sensing succeeded.
    """
    cfg = channel.config
    if cfg.p_busy <= 0.0:
        return LbtDecision(True)
    if cfg.mode == "FBE":
        return LbtDecision(channel.ffp_clear(carrier, start))
    if channel.uniform() >= cfg.p_busy:
        return LbtDecision(True)
    w = cfg.backoff_window
    backoff = 1 + min(int(channel.uniform() * w), w - 1)
    if backoff >= length:
        return LbtDecision(False, backoff)
    if channel.uniform() >= cfg.p_busy:
        return LbtDecision(True, backoff)
    return LbtDecision(False, backoff)


# -------------------------------------------------------------- shared pool

@dataclass(frozen=True)
class SharedFallback:
    postpone: bool
    placements: tuple = ()      # (slot, occasion) per shared repetition


def shared_pool_fallback(K: int, sent_in_dedicated: int, k_plus: Optional[int],
                         slots: Iterable[int], uniform: Callable[[], float]) -> SharedFallback:
    """Where the repetitions missed on the dedicated CG go.

    Nothing sent on the dedicated CG: wait for the next dedicated period. Some
    but fewer than K sent: the rest go one per slot on the first ``K - X`` of
    the candidate ``slots``, each on a uniformly drawn pool occasion.
    ``k_plus=None`` means no pool is configured.
    """
    x = sent_in_dedicated
    if x <= 0:
        return SharedFallback(True)
    if x >= K or k_plus is None:
        return SharedFallback(False)
    out = tuple((slot, min(int(uniform() * k_plus), k_plus - 1))
                for slot in itertools.islice(slots, K - x))
    return SharedFallback(False, out)


# ----------------------------------------------------------- feedback steps

def nru_feedback_step(proc: HarqProcess, now: int, dfi_ack: Optional[bool] = None) -> str:
    """Advance an NR-U process; returns "ack", "fail", "retx" or "none"."""
    if proc.done or proc.state is HarqState.IDLE:
        return "none"
    if dfi_ack is True:
        proc.state = HarqState.DONE_ACK
        proc.retx_timer_deadline = None
        return "ack"
    if proc.cgt_deadline is not None and now >= proc.cgt_deadline:
        proc.state = HarqState.DONE_FAILED
        proc.retx_timer_deadline = None
        return "fail"
    if dfi_ack is False or (proc.retx_timer_deadline is not None
                            and now >= proc.retx_timer_deadline):
        proc.state = HarqState.RETRANSMITTING
        proc.retx_timer_deadline = None
        return "retx"
    return "none"


def nr_feedback_step(proc: HarqProcess, now: int, dci: Optional[DciMessage] = None) -> str:
    """Advance a licensed-NR process; returns "dynamic_retx", "implicit_ack" or "none"."""
    if proc.done or proc.state is HarqState.IDLE:
        return "none"
    if proc.cgt_deadline is not None and now >= proc.cgt_deadline:
        proc.state = HarqState.DONE_ACK
        return "implicit_ack"
    if dci is not None and dci.scrambling == "CS_RNTI" and dci.ndi == 1:
        proc.state = HarqState.RETRANSMITTING
        return "dynamic_retx"
    return "none"


def handle_common_nack(own_transmissions, grid) -> Optional[object]:
    """Return what the UE sent on ``grid`` (its own log lookup), or None to ignore."""
    return own_transmissions.get(grid)
