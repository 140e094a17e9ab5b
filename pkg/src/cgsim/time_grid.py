"""Slot/symbol time grid, TDD validity and PUSCH repetition layouts.

Absolute time is an integer symbol counter ``slot * 14 + symbol``. Nothing in
this module looks below symbol resolution.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import ConfigurationError

SYMBOLS_PER_SLOT = 14
ALLOWED_SCS_KHZ = (15, 30, 60, 120)

UL, DL, FLEXIBLE = "U", "D", "F"


@dataclass(frozen=True)
class Numerology:
    scs_khz: int = 120
    symbols_per_slot: int = SYMBOLS_PER_SLOT

    def __post_init__(self):
        if self.scs_khz not in ALLOWED_SCS_KHZ:
            raise ConfigurationError(
                f"scs_khz must be one of {ALLOWED_SCS_KHZ}, got {self.scs_khz}")
        if self.symbols_per_slot != SYMBOLS_PER_SLOT:
            raise ConfigurationError("only 14 symbols per slot are modelled")

    @property
    def slot_duration_us(self) -> float:
        return 1000.0 / (self.scs_khz / 15)

    @property
    def symbol_duration_us(self) -> float:
        return self.slot_duration_us / SYMBOLS_PER_SLOT


@dataclass(frozen=True)
class SymbolSpan:
    """Contiguous run of symbols inside one slot (or a nominal span that may not be)."""

    carrier_id: int
    slot: int
    start_symbol: int
    length: int

    @property
    def abs_start(self) -> int:
        return self.slot * SYMBOLS_PER_SLOT + self.start_symbol

    @property
    def abs_end(self) -> int:
        return self.abs_start + self.length

    def symbols(self) -> range:
        return range(self.abs_start, self.abs_end)

    def shifted(self, slots: int) -> "SymbolSpan":
        return SymbolSpan(self.carrier_id, self.slot + slots, self.start_symbol, self.length)

    def on_carrier(self, carrier_id: int) -> "SymbolSpan":
        return SymbolSpan(carrier_id, self.slot, self.start_symbol, self.length)

    @classmethod
    def from_abs(cls, carrier_id: int, abs_start: int, length: int) -> "SymbolSpan":
        slot, sym = divmod(abs_start, SYMBOLS_PER_SLOT)
        return cls(carrier_id, slot, sym, length)


@dataclass(frozen=True)
class Segment:
    span: SymbolSpan
    nominal_index: int


class TddPattern:
    """Per-symbol link direction repeating every ``period_slots`` slots.

    Each slot is written as 14 characters from ``U``, ``D`` and ``F``.
    Flexible symbols count as uplink-valid unless ``flexible_valid`` is False.
    """

    def __init__(self, slots: Sequence[str], flexible_valid: bool = True):
        if not slots:
            raise ConfigurationError("TDD pattern needs at least one slot")
        rows = []
        for i, s in enumerate(slots):
            s = s.strip().upper()
            if len(s) != SYMBOLS_PER_SLOT or set(s) - {UL, DL, FLEXIBLE}:
                raise ConfigurationError(
                    f"TDD slot {i} must be 14 characters from U/D/F, got {s!r}")
            rows.append(s)
        self.slots = tuple(rows)
        self.flexible_valid = flexible_valid
        ok = {UL, FLEXIBLE} if flexible_valid else {UL}
        self._valid = tuple(tuple(c in ok for c in row) for row in self.slots)
        self._slot_all_valid = tuple(all(r) for r in self._valid)

    @classmethod
    def all_uplink(cls) -> "TddPattern":
        return cls([UL * SYMBOLS_PER_SLOT])

    @classmethod
    def from_shorthand(cls, pattern: str, special: str = "DDDDDDDDDDUUUU",
                       flexible_valid: bool = True) -> "TddPattern":
        """Build from slot letters such as ``"DDDSU"`` (``S`` uses ``special``)."""
        table = {"D": DL * SYMBOLS_PER_SLOT, "U": UL * SYMBOLS_PER_SLOT,
                 "F": FLEXIBLE * SYMBOLS_PER_SLOT, "S": special}
        try:
            return cls([table[c] for c in pattern.upper()], flexible_valid)
        except KeyError as exc:
            raise ConfigurationError(f"unknown slot letter {exc.args[0]!r}") from None

    @property
    def period_slots(self) -> int:
        return len(self.slots)

    def direction(self, slot: int, symbol: int) -> str:
        return self.slots[slot % len(self.slots)][symbol]

    def valid_abs(self, abs_symbol: int) -> bool:
        slot, sym = divmod(abs_symbol, SYMBOLS_PER_SLOT)
        return self._valid[slot % len(self._valid)][sym]

    def span_valid(self, span: SymbolSpan) -> bool:
        """True when every symbol of ``span`` is uplink-valid."""
        if span.start_symbol == 0 and span.length == SYMBOLS_PER_SLOT:
            return self._slot_all_valid[span.slot % len(self._slot_all_valid)]
        return all(self.valid_abs(s) for s in span.symbols())

    def is_all_uplink(self) -> bool:
        return all(self._slot_all_valid)

    def __repr__(self):
        return f"TddPattern({list(self.slots)!r})"

    def __eq__(self, other):
        return (isinstance(other, TddPattern) and self.slots == other.slots
                and self.flexible_valid == other.flexible_valid)

    def __hash__(self):
        return hash((self.slots, self.flexible_valid))


def is_valid_symbol(tdd: TddPattern, slot: int, symbol: int) -> bool:
    if not 0 <= symbol < SYMBOLS_PER_SLOT:
        raise ValueError(f"symbol must be in 0..13, got {symbol}")
    return tdd._valid[slot % tdd.period_slots][symbol]


def _check_nominal(length: int, k: int) -> None:
    if not 1 <= length <= SYMBOLS_PER_SLOT:
        raise ConfigurationError(f"allocation length L must be 1..14, got {length}")
    if k < 1:
        raise ConfigurationError(f"repetitions K must be >= 1, got {k}")


def _valid_runs(carrier: int, start: int, end: int, tdd: TddPattern,
                nominal: int) -> list[Segment]:
    # split [start, end) at slot borders and at valid/invalid transitions
    out = []
    run_start = None
    for s in range(start, end + 1):
        at_end = s == end
        border = s % SYMBOLS_PER_SLOT == 0
        ok = (not at_end) and tdd.valid_abs(s)
        if run_start is not None and (at_end or border or not ok):
            out.append(Segment(SymbolSpan.from_abs(carrier, run_start, s - run_start), nominal))
            run_start = None
        if ok and run_start is None:
            run_start = s
    return out


def segment_type_b(nominal: SymbolSpan, k: int, tdd: TddPattern,
                   cross_slot_allowed: bool = True) -> list[Segment]:
    """Lay out K back-to-back mini-slot repetitions of ``nominal`` (Type B).

    Nominal repetition ``i`` covers ``[S + i*L, S + (i+1)*L)`` on the absolute
    symbol axis. Each one is cut at slot borders and at valid/invalid
    transitions, and invalid-only pieces are dropped. With
    ``cross_slot_allowed=False`` whatever lies past the first slot border of a
    repetition is dropped instead of carried into the next slot.
    """
    _check_nominal(nominal.length, k)
    out: list[Segment] = []
    base = nominal.abs_start
    for i in range(k):
        a = base + i * nominal.length
        b = a + nominal.length
        if not cross_slot_allowed:
            b = min(b, (a // SYMBOLS_PER_SLOT + 1) * SYMBOLS_PER_SLOT)
        out.extend(_valid_runs(nominal.carrier_id, a, b, tdd, i))
    return out


def enumerate_type_a(sliv: SymbolSpan, k: int, gap_t: int, tdd: TddPattern) -> list[Segment]:
    """Slot-aggregated repetitions: same SLIV every ``1 + gap_t`` slots.

    A repetition touching any invalid symbol is dropped whole.
    """
    _check_nominal(sliv.length, k)
    if gap_t < 0:
        raise ConfigurationError(f"time gap must be >= 0, got {gap_t}")
    if sliv.start_symbol + sliv.length > SYMBOLS_PER_SLOT:
        raise ConfigurationError("Type A SLIV must stay inside one slot")
    out = []
    for i in range(k):
        span = sliv.shifted(i * (1 + gap_t))
        if tdd.span_valid(span):
            out.append(Segment(span, i))
    return out


def complementary_carrier_map(primary_segments: Iterable[Segment], primary_tdd: TddPattern,
                              secondary_carrier: int) -> list[Segment]:
    """Move every nominal repetition that the primary TDD pattern breaks onto a second carrier.

    ``primary_segments`` is the nominal layout before any invalid-symbol
    dropping. A repetition keeps its primary placement only if all of its
    symbols are valid there; otherwise all its pieces are re-emitted at the
    same absolute time on ``secondary_carrier``, which is taken to be
    uplink-capable everywhere.
    """
    by_nominal: dict[int, list[Segment]] = {}
    for seg in primary_segments:
        by_nominal.setdefault(seg.nominal_index, []).append(seg)
    out = []
    for nominal, segs in by_nominal.items():
        if all(primary_tdd.span_valid(s.span) for s in segs):
            out.extend(segs)
        else:
            out.extend(Segment(s.span.on_carrier(secondary_carrier), nominal) for s in segs)
    out.sort(key=lambda s: (s.span.abs_start, s.span.carrier_id))
    return out
