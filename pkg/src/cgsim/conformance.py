"""Capability-gating matrix: one allowed and one violating scenario per row."""
from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Optional

from .cg_core import TABLE_I_ROWS
from .errors import ScenarioError
from .scenario import load_scenario


def base_scenario(profile: str, **cg) -> dict:
    grant = {"ue_id": 0, "cg_id": 0, "period_p": 2, "K": 1}
    grant.update(cg)
    return {
        "schema_version": 1,
        "profile": profile,
        "configured_grants": [grant],
        "ues": [{"id": 0, "traffic": {"kind": "none"}}],
        "duration_slots": 10,
    }


def _two_cgs(profile):
    d = base_scenario(profile)
    d["configured_grants"].append({"ue_id": 0, "cg_id": 1, "period_p": 2, "offset": 1, "K": 1})
    return d


def _type2(profile, fmt):
    return base_scenario(profile, cg_type="TYPE2", activation_dci_format=fmt)


def _group_release(profile):
    d = _two_cgs(profile)
    # keep NR_R15 out of it: it fails the configuration count first
    d["events"] = [{"slot": 1, "ue_id": 0, "kind": "release", "cg_ids": [0, 1]}]
    return d


def _with_gnb(profile, **gnb):
    d = base_scenario(profile)
    d["gnb"] = gnb
    return d


# row -> (allowed scenario, violating scenario)
CASES = {
    "max_configurations": (_two_cgs("NR_R16"), _two_cgs("NR_R15")),
    "dci_format": (_type2("NR_R16", "F0_2"), _type2("NRU_R16", "F0_2")),
    "group_release": (_group_release("NR_R16"), _group_release("NRU_R16")),
    "repetition": (base_scenario("NR_R16", repetition_type="B", start_symbol=10, length=4, K=2),
                   base_scenario("NRU_R16", repetition_type="B", start_symbol=10, length=4, K=2)),
    "phy_priority": (base_scenario("NR_R16", phy_priority="HIGH"),
                     base_scenario("NR_R15", phy_priority="HIGH")),
    "ack_feedback": (_with_gnb("NRU_R16", ack_mode="explicit"),
                     _with_gnb("NR_R16", ack_mode="explicit")),
    "autonomous_transmission": (base_scenario("NRU_R16", autonomous_tx=True),
                                base_scenario("NR_R16", autonomous_tx=True)),
    "cg_uci": (base_scenario("NRU_R16", cg_uci=True), base_scenario("NR_R16", cg_uci=True)),
    "dfi": (_with_gnb("NRU_R16", dfi_enabled=True), _with_gnb("NR_R16", dfi_enabled=True)),
    "transmission_start": (base_scenario("NR_R16", starting_from_rv0=True, K=2),
                           base_scenario("NR_R15", starting_from_rv0=True, K=2)),
    "harq_id": (base_scenario("NRU_R16", harq_id_mode="ue_chosen"),
                base_scenario("NR_R16", harq_id_mode="ue_chosen")),
    "rv_pattern": (base_scenario("NRU_R16", rv_mode="ue_chosen"),
                   base_scenario("NR_R15", rv_mode="ue_chosen")),
    "autonomous_retransmission": (base_scenario("NRU_R16", cg_retx_timer=4),
                                  base_scenario("NR_R16", cg_retx_timer=4)),
    "harq_per_period": (base_scenario("NRU_R16", max_harq_per_period=2, nru_slots=2, K=2),
                        base_scenario("NR_R16", max_harq_per_period=2, K=2)),
}
assert tuple(CASES) == TABLE_I_ROWS


@dataclass(frozen=True)
class RowResult:
    row: str
    allowed_ok: bool
    violation_caught: bool
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.allowed_ok and self.violation_caught


def check_row(row: str) -> RowResult:
    allowed, violating = CASES[row]
    detail = ""
    try:
        load_scenario(copy.deepcopy(allowed))
        allowed_ok = True
    except ScenarioError as e:
        allowed_ok = False
        detail = f"allowed case rejected: {e}"
    try:
        load_scenario(copy.deepcopy(violating))
        caught = False
        detail = detail or "violating case accepted"
    except ScenarioError as e:
        caught = row in e.rows
        if not caught:
            detail = detail or f"rejected for other rows {sorted(e.rows)}"
    return RowResult(row, allowed_ok, caught, detail)


def run_matrix(rows: Optional[list] = None) -> list:
    return [check_row(r) for r in (rows or TABLE_I_ROWS)]
