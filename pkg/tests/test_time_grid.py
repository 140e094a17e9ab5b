import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cgsim.errors import ConfigurationError
from cgsim.time_grid import (
    Numerology,
    Segment,
    SymbolSpan,
    TddPattern,
    complementary_carrier_map,
    enumerate_type_a,
    is_valid_symbol,
    segment_type_b,
)

UL = "U" * 14
DL = "D" * 14


def brute_type_b(start_abs, length, k, tdd, cross=True):
    """Independent walk: label every symbol, then cut runs."""
    out = []
    for i in range(k):
        a = start_abs + i * length
        syms = list(range(a, a + length))
        if not cross:
            syms = [s for s in syms if s // 14 == a // 14]
        run = []
        for s in syms:
            ok = tdd.valid_abs(s)
            if run and (not ok or s // 14 != run[-1] // 14):
                out.append((run[0], len(run), i))
                run = []
            if ok:
                run.append(s)
        if run:
            out.append((run[0], len(run), i))
    return out


def as_tuples(segs):
    return [(s.span.abs_start, s.span.length, s.nominal_index) for s in segs]


def test_numerology_slot_length():
    assert Numerology(120).slot_duration_us == 125.0
    assert Numerology(15).slot_duration_us == 1000.0
    with pytest.raises(ConfigurationError):
        Numerology(45)


def test_is_valid_symbol():
    assert is_valid_symbol(TddPattern.all_uplink(), 7, 3)
    assert not is_valid_symbol(TddPattern([DL, UL]), 0, 5)
    dddsu = TddPattern.from_shorthand("DDDSU", special="D" * 10 + "U" * 4)
    assert is_valid_symbol(dddsu, 3, 12)
    assert not is_valid_symbol(dddsu, 3, 4)
    assert is_valid_symbol(dddsu, 8, 12)      # pattern repeats


def test_flexible_symbols_follow_the_switch():
    tdd = TddPattern(["F" * 14])
    assert tdd.valid_abs(3)
    assert not TddPattern(["F" * 14], flexible_valid=False).valid_abs(3)


def test_type_b_cross_slot_split():
    segs = segment_type_b(SymbolSpan(0, 5, 12, 4), 1, TddPattern.all_uplink())
    assert [(s.span.slot, s.span.start_symbol, s.span.length) for s in segs] == [(5, 12, 2), (6, 0, 2)]


def test_type_b_no_split_needed():
    segs = segment_type_b(SymbolSpan(0, 0, 0, 2), 4, TddPattern.all_uplink())
    assert as_tuples(segs) == [(0, 2, 0), (2, 2, 1), (4, 2, 2), (6, 2, 3)]


def test_type_b_drops_invalid_nominal():
    tdd = TddPattern([UL, DL])
    segs = segment_type_b(SymbolSpan(0, 0, 10, 4), 2, tdd)
    assert as_tuples(segs) == [(10, 4, 0)]


def test_type_b_no_cross_slot_truncates():
    segs = segment_type_b(SymbolSpan(0, 0, 12, 4), 1, TddPattern.all_uplink(), cross_slot_allowed=False)
    assert as_tuples(segs) == [(12, 2, 0)]


def test_type_b_rejects_bad_nominal():
    with pytest.raises(ConfigurationError):
        segment_type_b(SymbolSpan(0, 0, 0, 15), 1, TddPattern.all_uplink())
    with pytest.raises(ConfigurationError):
        segment_type_b(SymbolSpan(0, 0, 0, 2), 0, TddPattern.all_uplink())


def test_type_b_matches_brute_force_on_all_small_patterns():
    # every 2-slot pattern whose slots are one of a few shapes, every S, L, K
    shapes = [UL, DL, "D" * 10 + "U" * 4, "U" * 4 + "D" * 3 + "F" * 7, "UDUDUDUDUDUDUD"]
    for a, b in itertools.product(shapes, repeat=2):
        tdd = TddPattern([a, b])
        for s, length, k, cross in itertools.product(range(14), (1, 3, 4, 7, 14), (1, 2, 3), (True, False)):
            got = segment_type_b(SymbolSpan(0, 0, s, length), k, tdd, cross)
            assert as_tuples(got) == brute_type_b(s, length, k, tdd, cross)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 13), st.integers(1, 14), st.integers(1, 12))
def test_type_b_conserves_symbols_on_all_uplink(s, length, k):
    segs = segment_type_b(SymbolSpan(0, 3, s, length), k, TddPattern.all_uplink())
    covered = sorted(t for seg in segs for t in seg.span.symbols())
    assert covered == list(range(3 * 14 + s, 3 * 14 + s + k * length))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.text("UDF", min_size=14, max_size=14), min_size=1, max_size=4),
       st.integers(0, 13), st.integers(1, 14), st.integers(1, 8), st.booleans())
def test_no_segment_holds_an_invalid_symbol(slots, s, length, k, cross):
    tdd = TddPattern(slots)
    for seg in segment_type_b(SymbolSpan(0, 0, s, length), k, tdd, cross):
        assert seg.span.start_symbol + seg.span.length <= 14
        assert all(tdd.valid_abs(t) for t in seg.span.symbols())


def test_type_a_layouts():
    tdd = TddPattern.all_uplink()
    assert [s.span.slot for s in enumerate_type_a(SymbolSpan(0, 0, 0, 14), 2, 0, tdd)] == [0, 1]
    assert [s.span.slot for s in enumerate_type_a(SymbolSpan(0, 3, 0, 14), 1, 5, tdd)] == [3]
    assert [s.span.slot for s in enumerate_type_a(SymbolSpan(0, 0, 0, 14), 4, 1, tdd)] == [0, 2, 4, 6]


def test_type_a_drops_whole_repetition():
    tdd = TddPattern([UL, "D" + "U" * 13])
    segs = enumerate_type_a(SymbolSpan(0, 0, 0, 14), 4, 0, tdd)
    assert [(s.span.slot, s.nominal_index) for s in segs] == [(0, 0), (2, 2)]


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 12), st.integers(0, 20))
def test_type_a_gap_zero_is_slot_aggregation(k, s0):
    segs = enumerate_type_a(SymbolSpan(0, s0, 0, 14), k, 0, TddPattern.all_uplink())
    assert [s.span.slot for s in segs] == list(range(s0, s0 + k))


def _nominal_type_a(k):
    return [Segment(SymbolSpan(0, i, 0, 14), i) for i in range(k)]


def test_complementary_map():
    ok = TddPattern.all_uplink()
    assert complementary_carrier_map(_nominal_type_a(4), ok, 1) == _nominal_type_a(4)
    tdd = TddPattern([UL, UL, DL, DL])
    out = complementary_carrier_map(_nominal_type_a(4), tdd, 1)
    assert [(s.span.carrier_id, s.span.slot) for s in out] == [(0, 0), (0, 1), (1, 2), (1, 3)]
    out = complementary_carrier_map(_nominal_type_a(4), TddPattern([DL]), 1)
    assert {s.span.carrier_id for s in out} == {1}


@settings(max_examples=100, deadline=None)
@given(st.lists(st.text("UDF", min_size=14, max_size=14), min_size=1, max_size=5), st.integers(1, 8))
def test_complementary_map_keeps_all_repetitions(slots, k):
    out = complementary_carrier_map(_nominal_type_a(k), TddPattern(slots), 1)
    assert sorted({s.nominal_index for s in out}) == list(range(k))
