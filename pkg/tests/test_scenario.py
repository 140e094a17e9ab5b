import json

import pytest

from cgsim.cg_core import TABLE_I_ROWS
from cgsim.conformance import CASES, run_matrix
from cgsim.errors import ScenarioError
from cgsim.scenario import load_scenario

from conftest import scenario


def issues_of(d):
    with pytest.raises(ScenarioError) as e:
        load_scenario(d)
    return e.value


def test_minimal_scenario_loads(make):
    sc = make(scenario())
    assert sc.profile.value == "NR_R16"
    assert len(sc.grants) == 1 and sc.grants[0].cfg.period_p == 2
    assert sc.carriers[0].tdd.is_all_uplink()


def test_loads_from_json_text_and_path(tmp_path):
    d = scenario()
    assert load_scenario(json.dumps(d)).duration_slots == 40
    p = tmp_path / "s.json"
    p.write_text(json.dumps(d))
    assert load_scenario(p).duration_slots == 40
    assert load_scenario(str(p)).duration_slots == 40


def test_unknown_keys_rejected_everywhere():
    d = scenario(colour="red")
    d["ues"][0]["traffic"]["burst"] = 3
    d["configured_grants"][0]["speed"] = 1
    fields = {f for f, _, _ in issues_of(d).issues}
    assert {"scenario.colour", "ues[0].traffic.burst", "configured_grants[0].speed"} <= fields


def test_schema_version_checked():
    e = issues_of(scenario(schema_version=2))
    assert any(f == "schema_version" for f, _, _ in e.issues)
    d = scenario()
    del d["schema_version"]
    issues_of(d)


def test_all_problems_reported_together():
    d = scenario(seed=-1, duration_slots=0)
    d["configured_grants"][0]["K"] = 0
    assert len(issues_of(d).issues) >= 3


def test_link_aliases(make):
    d = scenario()
    d["ues"][0]["link"] = {"p_e": 0.9, "p_d": 0.8, "p_md": 0.05, "p_cn": 0.7, "p_t": 0.6,
                           "gamma_db": 10}
    link = make(d).ues[0].link
    assert (link.p_detect_energy, link.p_id_decode, link.p_misdetect) == (0.9, 0.8, 0.05)
    assert (link.p_common_nack_decode, link.p_transmit) == (0.7, 0.6)
    assert link.snr_gamma == pytest.approx(10.0)
    d["ues"][0]["link"] = {"p_e": 0.9, "p_detect_energy": 0.9}
    issues_of(d)


def test_enhancement_gating():
    d = scenario(grants=[{"ue_id": 0, "cg_id": 0, "period_p": 4, "K": 2, "gap_t": 1}])
    issues_of(d)
    d["enhancements"] = {"time_gap": True}
    load_scenario(d)
    d = scenario(grants=[{"ue_id": 0, "cg_id": 0, "period_p": 4, "K": 2, "flexible_start": True}])
    issues_of(d)


def test_profile_violation_rows_reported():
    d = scenario(profile="NR_R15", grants=[{"ue_id": 0, "cg_id": 0, "period_p": 2, "K": 1,
                                            "phy_priority": "HIGH"}])
    assert "phy_priority" in issues_of(d).rows


def test_unknown_references():
    d = scenario(grants=[{"ue_id": 7, "cg_id": 0, "period_p": 2, "K": 1}])
    issues_of(d)
    d = scenario(grants=[{"ue_id": 0, "cg_id": 0, "period_p": 2, "K": 1, "carrier_id": 3}])
    issues_of(d)


def test_orthogonality_between_ues():
    ues = [{"id": 0, "traffic": {"kind": "none"}}, {"id": 1, "traffic": {"kind": "none"}}]
    same = [{"ue_id": 0, "cg_id": 0, "period_p": 2, "K": 1},
            {"ue_id": 1, "cg_id": 0, "period_p": 2, "K": 1}]
    assert "overlaps" in str(issues_of(scenario(grants=same, ues=ues)))
    split = [{"ue_id": 0, "cg_id": 0, "period_p": 2, "K": 1},
             {"ue_id": 1, "cg_id": 0, "period_p": 2, "K": 1, "offset": 1}]
    load_scenario(scenario(grants=split, ues=ues))
    rbs = [{"ue_id": 0, "cg_id": 0, "period_p": 2, "K": 1, "fdra": {"rb_start": 0, "n_rbs": 5}},
           {"ue_id": 1, "cg_id": 0, "period_p": 2, "K": 1, "fdra": {"rb_start": 5, "n_rbs": 5}}]
    load_scenario(scenario(grants=rbs, ues=ues))


def test_unlicensed_carrier_needs_nru():
    issues_of(scenario(carriers=[{"id": 0, "unlicensed": True}]))


def test_conformance_matrix_covers_every_row():
    assert set(CASES) == set(TABLE_I_ROWS) and len(TABLE_I_ROWS) == 14
    results = run_matrix()
    assert all(r.passed for r in results), [r for r in results if not r.passed]


def test_shipped_scenarios_load():
    from pathlib import Path
    files = sorted((Path(__file__).parent.parent / "scenarios").glob("*.json"))
    assert files
    for f in files:
        load_scenario(f)
