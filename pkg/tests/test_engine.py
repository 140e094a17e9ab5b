import copy
from pathlib import Path

from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from cgsim.engine import Simulation, run_replications, run_scenario
from cgsim.metrics import SKIP_FIELDS
from cgsim.scenario import load_scenario

from conftest import scenario

SCENARIOS = Path(__file__).parent.parent / "scenarios"


@st.composite
def small_scenarios(draw):
    nru = draw(st.booleans())
    K = draw(st.sampled_from([1, 2, 4]))
    period = draw(st.sampled_from([4, 8]))
    cg = {"ue_id": 0, "cg_id": 0, "period_p": period, "K": K}
    top = {"duration_slots": draw(st.integers(20, 120)), "seed": draw(st.integers(0, 2 ** 32)),
           "bler": {"epsilon": draw(st.sampled_from([0.0, 0.3, 0.9]))}}
    if nru:
        cg.update(nru_slots=draw(st.sampled_from([K, period])), cg_retx_timer=draw(st.sampled_from([None, 2, 4])),
                  cg_timer=draw(st.sampled_from([None, period, 3 * period])))
        top["carriers"] = [{"id": 0, "unlicensed": True}]
        top["lbt"] = {"mode": draw(st.sampled_from(["LBE", "FBE"])),
                      "p_busy": draw(st.sampled_from([0.0, 0.3]))}
        top["gnb"] = {"dfi_enabled": draw(st.booleans()), "ack_mode": "explicit"}
    else:
        cg["flexible_start"] = draw(st.booleans())
        pool = draw(st.booleans())
        top["enhancements"] = {"flexible_start": True, "shared_pool": pool,
                               "common_nack": draw(st.booleans())}
        if pool:
            top["shared_pool"] = {"k_plus": draw(st.integers(1, 4)),
                                  "background_ues": draw(st.integers(0, 6)),
                                  "activity_q": draw(st.sampled_from([0.0, 0.3, 1.0]))}
    traffic = {"kind": "uniform_in_period", "n_slots": period,
               "spacing_slots": period * draw(st.integers(1, 3))}
    link = {"p_t": draw(st.sampled_from([1.0, 0.8])), "p_e": 0.99, "p_d": 0.9, "p_md": 0.05,
            "p_cn": 0.9}
    ues = [{"id": 0, "traffic": traffic, "link": link,
            "shared_pool_access": "shared_pool" in top}]
    return scenario("NRU_R16" if nru else "NR_R16", [cg], ues, **top)


class Checked(Simulation):
    """Asserts per-repetition safety rules as the run goes."""

    def _plan_cg_bundle(self, ue, tb, sch, period, start_index, kind):
        if kind in ("initial", "cn_retx"):
            assert start_index in sch.allowed
        return super()._plan_cg_bundle(ue, tb, sch, period, start_index, kind)

    def _on_tx(self, payload):
        ue, p = payload
        before = ue.c.reps_emitted
        deadline = p.tb.proc.cgt_deadline if p.tb is not None else None
        super()._on_tx(payload)
        if ue.c.reps_emitted > before:
            if deadline is not None:
                assert p.start < deadline
            if self.nru and p.kind == "cg":
                assert p.uci is not None and p.uci.harq_id == p.harq_id


@settings(max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(small_scenarios())
def test_invariants_hold_on_random_scenarios(d):
    sc = load_scenario(d)
    counters = Checked(sc).run()
    c = counters[0]
    assert c.reps_emitted + sum(getattr(c, f) for f in SKIP_FIELDS) == c.reps_nominal
    assert c.delivered_in_deadline <= c.delivered <= c.offered
    assert all(x > 0 for x in c.latencies)


def test_same_seed_same_bytes():
    sc = load_scenario(SCENARIOS / "shared_pool.json")
    sc.duration_slots = 16 * 2000
    a = run_replications(sc, 2, seed=11).csv_text()
    b = run_replications(sc, 2, seed=11).csv_text()
    assert a == b
    assert run_replications(sc, 2, seed=12).csv_text() != a


def test_single_replication_matches_run_scenario():
    sc = load_scenario(SCENARIOS / "nru_lbt.json")
    sc.duration_slots = 4000
    assert run_replications(sc, 1).csv_text() == run_scenario(sc).csv_text()


def test_replications_draw_distinct_streams():
    sc = load_scenario(SCENARIOS / "nru_lbt.json")
    sc.duration_slots = 4000
    rep = run_replications(sc, 3)
    lat = [tuple(rep.pooled(replication=r).latencies) for r in range(3)]
    assert len(set(lat)) == 3


def test_parallel_workers_match_serial():
    sc = load_scenario(SCENARIOS / "nru_lbt.json")
    sc.duration_slots = 2000
    assert run_replications(sc, 3, workers=2).csv_text() == run_replications(sc, 3).csv_text()


def test_standard_error_shrinks_with_replications():
    sc = load_scenario(SCENARIOS / "nru_lbt.json")
    sc.duration_slots = 800
    sc.bler = type(sc.bler)(epsilon=0.5)
    se10 = run_replications(sc, 10).summary()["standard_error"]["reliability"]
    se40 = run_replications(sc, 40).summary()["standard_error"]["reliability"]
    assert 1.5 <= se10 / se40 <= 2.5


def test_no_traffic_gives_zero_counters(make):
    sc = make(scenario(ues=[{"id": 0, "traffic": {"kind": "none"}}]))
    c = run_scenario(sc).pooled()
    assert (c.offered, c.delivered, c.reps_nominal, c.reps_emitted) == (0, 0, 0, 0)


def test_error_free_pipeline_delivers_everything(make):
    d = scenario(grants=[{"ue_id": 0, "cg_id": 0, "period_p": 4, "K": 2}],
                 ues=[{"id": 0, "traffic": {"kind": "deterministic", "period_slots": 8}}],
                 duration_slots=800, bler={"epsilon": 0.0})
    c = run_scenario(make(d)).pooled()
    assert c.offered == 100 and c.delivered == c.offered == c.delivered_in_deadline
    # arrival at a period start decodes on its first repetition, one slot later
    assert set(c.latencies) == {14}


def test_lost_packets_when_everything_fails(make):
    d = scenario(duration_slots=200, bler={"epsilon": 1.0})
    c = run_scenario(make(d)).pooled()
    assert c.offered > 0 and c.delivered == 0


def test_deactivated_grant_carries_nothing(make):
    d = scenario(grants=[{"ue_id": 0, "cg_id": 0, "period_p": 2, "K": 1, "cg_type": "TYPE2"}],
                 duration_slots=40)
    c = run_scenario(make(d)).pooled()
    assert c.reps_emitted == 0 and c.delivered == 0
    d["events"] = [{"slot": 0, "ue_id": 0, "kind": "activate", "cg_ids": [0]}]
    c = run_scenario(make(d)).pooled()
    assert c.delivered > 0


def test_trace_records_events(make):
    d = scenario(trace=True, duration_slots=6)
    trace = run_scenario(make(d)).trace
    kinds = {e for _, e, *_ in trace}
    assert "tx" in kinds and "decoded" in kinds
    assert [t for t, *_ in trace] == sorted(t for t, *_ in trace)


def test_scenario_not_mutated():
    sc = load_scenario(SCENARIOS / "common_nack.json")
    sc.duration_slots = 400
    before = copy.deepcopy(sc)
    run_scenario(sc)
    assert sc == before
