import itertools
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cgsim.cg_core import (
    TABLE_I_ROWS,
    CgConfig,
    CgState,
    CgStateMachine,
    DciMessage,
    Fdra,
    FeatureProfile,
    RvPattern,
    allowed_start_indices,
    check_cg_set,
    check_profile_rules,
    enumerate_occasions,
    occasions_available_flexible,
    occasions_available_legacy,
    rv_for_start,
    validate_activation,
    validate_release,
)
from cgsim.errors import ConfigurationError, ProfileViolation
from cgsim.time_grid import TddPattern

R15, R16, NRU = FeatureProfile.NR_R15, FeatureProfile.NR_R16, FeatureProfile.NRU_R16
UL = TddPattern.all_uplink()


def legacy_by_walk(K, a, b):
    """Walk forward from occasion b to the first RV0 slot of a spacing-a pattern, count what is left."""
    i = b - 1
    while i < K and i % a:
        i += 1
    return K - i


def test_rv_patterns():
    assert RvPattern.parse("0303").rv0_spacing == 2
    assert RvPattern.parse("0231").rv(5) == 2
    assert str(RvPattern.for_spacing(4)) == "0231"
    with pytest.raises(ConfigurationError):
        RvPattern.parse("0123")


def test_legacy_and_flexible_examples():
    assert occasions_available_legacy(8, 2, 2) == 6
    assert occasions_available_legacy(8, 4, 2) == 4
    assert occasions_available_legacy(5, 1, 1) == 5
    assert occasions_available_flexible(8, 2) == 7
    assert occasions_available_flexible(8, 8) == 1
    assert occasions_available_flexible(8, 9) == 0
    assert occasions_available_legacy(8, 2, 9) == 0


def test_occasion_counts_exhaustive():
    for K in range(1, 13):
        for a in (1, 2, 4):
            for b in range(1, K + 1):
                leg = occasions_available_legacy(K, a, b)
                flex = occasions_available_flexible(K, b)
                assert leg == legacy_by_walk(K, a, b)
                assert flex >= leg
                assert (flex == leg) == ((b - 1) % a == 0)


def test_allowed_start_indices():
    cfg = CgConfig(K=4, period_p=4, rv_pattern=RvPattern.parse("0303"), starting_from_rv0=True)
    assert allowed_start_indices(cfg, R16) == {0, 2}
    assert allowed_start_indices(cfg.with_(K=8, period_p=8), R16) == {0}
    assert allowed_start_indices(cfg.with_(starting_from_rv0=False), R15) == {0}
    assert allowed_start_indices(cfg.with_(flexible_start=True), R16) == {0, 1, 2, 3}
    assert allowed_start_indices(CgConfig(K=2, nru_slots=3, nru_tos_per_slot=2, period_p=4), NRU) == set(range(6))
    knob = cfg.with_(K=8, period_p=8, rv0_start_k8_exception=False)
    assert allowed_start_indices(knob, R16) == {0, 2, 4, 6}


@given(st.integers(1, 12), st.sampled_from(["0000", "0303", "0231"]), st.booleans(), st.booleans(),
       st.sampled_from([R15, R16, NRU]))
def test_start_zero_always_allowed(K, pat, rv0, flex, prof):
    if prof is R15:
        rv0 = flex = False
    cfg = CgConfig(K=K, period_p=K, rv_pattern=RvPattern.parse(pat), starting_from_rv0=rv0,
                   flexible_start=flex, nru_slots=K)
    assert 0 in allowed_start_indices(cfg, prof)


def test_rv_for_start():
    flex = CgConfig(K=4, period_p=4, rv_pattern=RvPattern.parse("0231"), flexible_start=True)
    assert rv_for_start(flex, 2, 2) == 0
    assert rv_for_start(flex, 2, 3) == 2
    legacy = CgConfig(K=4, period_p=4, rv_pattern=RvPattern.parse("0303"))
    assert all(rv_for_start(legacy, b, 3) == 3 for b in range(4))
    assert [rv_for_start(flex, 0, i) for i in range(4)] == [0, 2, 3, 1]


def test_enumerate_occasions_type_a():
    occ = enumerate_occasions(CgConfig(period_p=4, K=2), R16, UL, range(0, 8))
    assert [(o.period_index, o.start // 14) for o in occ] == [(0, 0), (0, 1), (1, 4), (1, 5)]


def test_enumerate_occasions_k1_and_nru():
    occ = enumerate_occasions(CgConfig(period_p=2, K=1, rv_pattern=RvPattern.parse("0231")), R16, UL, range(0, 8))
    assert len(occ) == 4 and all(o.index == 0 and o.rv == 0 for o in occ)
    cfg = CgConfig(period_p=4, K=2, nru_tos_per_slot=2, nru_slots=3, length=7)
    occ = enumerate_occasions(cfg, NRU, UL, range(0, 4))
    assert len(occ) == 6
    assert [o.start for o in occ] == [0, 7, 14, 21, 28, 35]


@given(st.integers(1, 6), st.integers(0, 2), st.sampled_from(["0000", "0303", "0231"]),
       st.integers(0, 5), st.sampled_from(["A", "B"]))
def test_occasions_stay_in_their_period(K, gap, pat, extra, rtype):
    length = 14 if rtype == "A" else 2
    p = (K - 1) * (1 + gap) + 1 + extra
    cfg = CgConfig(period_p=p, K=K, gap_t=gap if rtype == "A" else 0, length=length,
                   repetition_type=rtype, rv_pattern=RvPattern.parse(pat))
    prof = R16
    for o in enumerate_occasions(cfg, prof, UL, range(0, 3 * p)):
        lo = o.period_index * p * 14
        assert lo <= o.start and o.end <= lo + p * 14
        assert o.rv == cfg.rv_pattern.rv(o.index)


def test_layout_must_fit():
    with pytest.raises(ConfigurationError):
        enumerate_occasions(CgConfig(period_p=3, K=4), R16, UL, range(0, 8))
    with pytest.raises(ConfigurationError):
        enumerate_occasions(CgConfig(period_p=6, K=4, gap_t=1), R16, UL, range(0, 8))


def test_profile_rules_name_their_row():
    rows = dict(check_profile_rules(CgConfig(phy_priority="HIGH"), R15))
    assert "phy_priority" in rows
    rows = dict(check_profile_rules(CgConfig(repetition_type="B", start_symbol=10, length=4, K=2, period_p=2), NRU))
    assert "repetition" in rows
    assert check_profile_rules(CgConfig(repetition_type="B", start_symbol=10, length=4, K=2, period_p=2), R16) == []
    assert {r for r, _ in check_profile_rules(CgConfig(gap_t=1, period_p=4), R15)} <= set(TABLE_I_ROWS)


def test_cg_set_limits():
    check_cg_set([CgConfig(cg_id=i) for i in range(12)], R16)
    with pytest.raises(ProfileViolation) as e:
        check_cg_set([CgConfig(cg_id=0), CgConfig(cg_id=1)], R15)
    assert e.value.row == "max_configurations"
    with pytest.raises(ProfileViolation):
        check_cg_set([CgConfig(cg_id=i % 12) for i in range(13)], R16)
    with pytest.raises(ConfigurationError):
        CgConfig(cg_id=12)


def test_fdra_rb_sets():
    assert Fdra("type1", rb_start=2, n_rbs=3).rb_set(51) == {2, 3, 4}
    assert Fdra("type0", rbg_bitmap="0101", rbg_size=2).rb_set(51) == {2, 3, 6, 7}
    assert Fdra("type2", interlace=3).rb_set(25) == {3, 13, 23}


def test_validate_activation():
    ok = validate_activation(DciMessage(), R16, multi_cg=False)
    assert ok.valid and ok.target_cg is None
    assert not validate_activation(DciMessage(scrambling="C_RNTI"), R16, False).valid
    multi = validate_activation(DciMessage(harq_field=3), R16, multi_cg=True)
    assert multi.valid and multi.target_cg == 3
    assert not validate_activation(DciMessage(harq_field=3), R16, multi_cg=False).valid
    assert not validate_activation(DciMessage(ndi=1), R16, False).valid
    assert validate_activation(DciMessage(format="F0_2"), R16, False).valid
    assert not validate_activation(DciMessage(format="F0_2"), NRU, False).valid


def test_validate_release():
    rel = DciMessage(purpose="RELEASE")
    assert validate_release(rel, R16, {1, 2, 3})
    assert validate_release(rel, R15, {0})
    assert validate_release(rel, NRU, {0})
    for prof in (R15, NRU):
        with pytest.raises(ProfileViolation) as e:
            validate_release(rel, prof, {1, 2})
        assert e.value.row == "group_release"


def test_state_machine():
    sm = CgStateMachine(R16, [CgConfig(cg_id=0), CgConfig(cg_id=1, cg_type="TYPE2")])
    assert sm.state(0) is CgState.ACTIVE
    assert sm.state(1) is CgState.CONFIGURED_INACTIVE
    assert sm.on_activation(DciMessage(harq_field=1)) == 1
    assert sm.confirm() and not sm.confirm()
    assert sm.on_activation(DciMessage(harq_field=1)) == 1          # idempotent
    assert sm.state(1) is CgState.ACTIVE
    assert sm.on_activation(DciMessage(harq_field=1, scrambling="C_RNTI")) is None
    rel = DciMessage(purpose="RELEASE")
    assert sm.on_release(rel, {0, 1})
    assert sm.active_ids() == []
    sm.confirm()
    assert sm.on_release(rel, {0})                                  # no-op on RELEASED
    assert not sm.pending_confirmation


@given(st.lists(st.tuples(st.sampled_from(["act", "rel"]), st.integers(0, 2)), max_size=20))
def test_state_machine_states_stay_legal(ops):
    sm = CgStateMachine(R16, [CgConfig(cg_id=i, cg_type="TYPE2") for i in range(3)])
    for op, cg in ops:
        if op == "act":
            sm.on_activation(DciMessage(harq_field=cg))
        else:
            sm.on_release(DciMessage(purpose="RELEASE"), {cg})
        assert set(sm.states.values()) <= set(CgState)
        assert sm.active_ids() == sorted(i for i in range(3) if sm.state(i) is CgState.ACTIVE)


def test_table_rows_are_fourteen():
    assert len(TABLE_I_ROWS) == 14 and len(set(TABLE_I_ROWS)) == 14


def test_ceil_form_matches_walk_beyond_k():
    # arrivals after the last RV0 occasion clamp to zero instead of going negative
    for K, a in itertools.product(range(1, 9), (1, 2, 4)):
        for b in range(1, K + 1):
            assert occasions_available_legacy(K, a, b) == max(0, K - math.ceil((b - 1) / a) * a)
