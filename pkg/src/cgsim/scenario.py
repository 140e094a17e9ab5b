"""Scenario files: a versioned JSON tree describing one simulation setup.

Unknown keys are rejected. :func:`load_scenario` returns a validated
:class:`Scenario` or raises :class:`ScenarioError` listing every problem,
tagged with the capability row it violates where one applies.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .cg_core import (
    CgConfig,
    DciMessage,
    FeatureProfile,
    Fdra,
    RvPattern,
    as_profile,
    check_cg_set,
    check_layout,
    check_profile_rules,
    enumerate_occasions,
)
from .errors import ConfigurationError, ProfileViolation, ScenarioError
from .gnb_model import BlerModel, LinkModel
from .time_grid import Numerology, TddPattern
from .ue_mac import LbtConfig, TrafficModel

SCHEMA_VERSION = 1

_TOP_KEYS = {
    "schema_version", "name", "profile", "numerology", "carriers", "enhancements",
    "configured_grants", "ues", "bler", "gnb", "lbt", "shared_pool", "dynamic_grants",
    "events", "duration_slots", "seed", "replications", "processing_margin_symbols",
    "max_packets", "trace",
}
_ENH_KEYS = {"time_gap", "flexible_start", "common_nack", "shared_pool", "complementary_tdd"}
_CARRIER_KEYS = {"id", "tdd", "unlicensed", "bandwidth_rbs"}
_TDD_KEYS = {"pattern", "special", "slots", "flexible_valid"}
_UE_KEYS = {"id", "traffic", "link", "deadline_slots", "harq_pool", "shared_pool_access", "n_rbs"}
_TRAFFIC_KEYS = {"kind", "payload_bits", "period_slots", "phase_symbols", "n_slots",
                 "spacing_slots", "offset_slots", "resolution", "jitter", "jitter_symbols"}
_LINK_ALIASES = {"gamma_db": "snr_db", "p_e": "p_detect_energy", "p_d": "p_id_decode",
                 "p_md": "p_misdetect", "p_cn": "p_common_nack_decode", "p_t": "p_transmit"}
_LINK_KEYS = {"snr_db", "snr_gamma", "p_detect_energy", "p_id_decode", "p_misdetect",
              "p_common_nack_decode", "p_transmit"} | set(_LINK_ALIASES)
_BLER_KEYS = {"kind", "epsilon", "payload_bits", "dmrs_overhead", "subcarriers_per_rb"}
_GNB_KEYS = {"ack_mode", "dfi_enabled", "feedback_delay_slots", "dfi_delay_slots",
             "nack_delay_slots", "max_dynamic_retx", "blind_rv_recovery"}
_LBT_KEYS = {"mode", "p_busy", "backoff_window", "ffp_slots"}
_POOL_KEYS = {"k_plus", "background_ues", "activity_q", "carrier"}
_DG_KEYS = {"ue_id", "slot", "start_symbol", "length", "priority", "carrier"}
_EVENT_KEYS = {"slot", "ue_id", "kind", "cg_ids", "dci"}
_DCI_KEYS = {"scrambling", "ndi", "harq_field", "rv_field", "dfi_field", "format",
             "tdra_row", "fdra_field", "priority_bit"}
_FDRA_KEYS = {"kind", "rb_start", "n_rbs", "rbg_bitmap", "rbg_size", "interlace", "n_interlaces"}
_CG_KEYS = {
    "ue_id", "cg_id", "cg_type", "period_p", "offset", "carrier_id", "start_symbol", "length",
    "repetition_type", "K", "rv_pattern", "starting_from_rv0", "rv0_start_k8_exception",
    "phy_priority", "gap_t", "flexible_start", "fdra", "nru_tos_per_slot", "nru_slots",
    "cg_retx_timer", "cg_timer", "activation_dci_format", "cg_uci", "autonomous_tx",
    "harq_id_mode", "rv_mode", "max_harq_per_period", "complementary_carrier",
}


@dataclass(frozen=True)
class Enhancements:
    time_gap: bool = False
    flexible_start: bool = False
    common_nack: bool = False
    shared_pool: bool = False
    complementary_tdd: bool = False


@dataclass(frozen=True)
class Carrier:
    id: int = 0
    tdd: TddPattern = field(default_factory=TddPattern.all_uplink)
    unlicensed: bool = False
    bandwidth_rbs: int = 66


@dataclass(frozen=True)
class UeSpec:
    id: int = 0
    traffic: TrafficModel = field(default_factory=TrafficModel)
    link: LinkModel = field(default_factory=LinkModel)
    deadline_slots: Optional[float] = None
    harq_pool: int = 16
    shared_pool_access: bool = False
    n_rbs: int = 1


@dataclass(frozen=True)
class GrantSpec:
    ue_id: int
    cfg: CgConfig
    complementary_carrier: Optional[int] = None


@dataclass(frozen=True)
class GnbSpec:
    ack_mode: Optional[str] = None          # "implicit" | "explicit"; None = profile default
    dfi_enabled: Optional[bool] = None
    feedback_delay_slots: int = 1
    dfi_delay_slots: int = 1
    nack_delay_slots: int = 1
    max_dynamic_retx: int = 4
    blind_rv_recovery: bool = False


@dataclass(frozen=True)
class SharedPoolSpec:
    k_plus: int = 1
    background_ues: int = 0
    activity_q: float = 0.0
    carrier: int = 0


@dataclass(frozen=True)
class DynamicGrantSpec:
    """A dynamic uplink grant with no data behind it (it still pre-empts CGs)."""

    ue_id: int
    slot: int
    start_symbol: int = 0
    length: int = 14
    priority: str = "LOW"
    carrier: int = 0


@dataclass(frozen=True)
class ControlEvent:
    slot: int
    ue_id: int
    kind: str                   # "activate" | "release"
    cg_ids: tuple = ()
    dci: DciMessage = field(default_factory=DciMessage)


@dataclass
class Scenario:
    profile: FeatureProfile = FeatureProfile.NR_R16
    numerology: Numerology = field(default_factory=Numerology)
    carriers: dict = field(default_factory=lambda: {0: Carrier()})
    grants: list = field(default_factory=list)
    ues: list = field(default_factory=list)
    bler: BlerModel = field(default_factory=BlerModel)
    gnb: GnbSpec = field(default_factory=GnbSpec)
    enhancements: Enhancements = field(default_factory=Enhancements)
    lbt: Optional[LbtConfig] = None
    shared_pool: Optional[SharedPoolSpec] = None
    dynamic_grants: list = field(default_factory=list)
    events: list = field(default_factory=list)
    duration_slots: int = 1000
    seed: int = 0
    replications: int = 1
    processing_margin_symbols: int = 0
    max_packets: Optional[int] = None
    trace: bool = False
    name: str = ""

    @property
    def ack_mode(self) -> str:
        if self.gnb.ack_mode is not None:
            return self.gnb.ack_mode
        return "explicit" if self.profile.caps.explicit_ack else "implicit"

    @property
    def dfi_enabled(self) -> bool:
        if self.gnb.dfi_enabled is not None:
            return self.gnb.dfi_enabled
        return self.profile.caps.dfi

    def ue(self, ue_id: int) -> UeSpec:
        for u in self.ues:
            if u.id == ue_id:
                return u
        raise KeyError(ue_id)

    def grants_of(self, ue_id: int) -> list:
        return [g for g in self.grants if g.ue_id == ue_id]


# ----------------------------------------------------------------- parsing

class _Issues:
    def __init__(self):
        self.items: list = []

    def add(self, where, message, row=None):
        self.items.append((where, row, message))

    def keys(self, d, allowed, where):
        if not isinstance(d, dict):
            self.add(where, "must be an object")
            return {}
        for k in sorted(set(d) - allowed):
            self.add(f"{where}.{k}", "unknown key")
        return {k: v for k, v in d.items() if k in allowed}


def _build(issues, where, ctor, kw):
    try:
        return ctor(**kw)
    except ProfileViolation as e:
        issues.add(where, str(e), e.row)
    except (ConfigurationError, TypeError, ValueError) as e:
        issues.add(where, str(e))
    return None


def _parse_tdd(issues, spec, where):
    if spec is None or spec == "all_uplink":
        return TddPattern.all_uplink()
    if isinstance(spec, str):
        return _build(issues, where, TddPattern.from_shorthand, {"pattern": spec})
    spec = issues.keys(spec, _TDD_KEYS, where)
    flex = spec.get("flexible_valid", True)
    if "slots" in spec:
        return _build(issues, where, TddPattern, {"slots": spec["slots"], "flexible_valid": flex})
    kw = {"pattern": spec.get("pattern", "U"), "flexible_valid": flex}
    if "special" in spec:
        kw["special"] = spec["special"]
    return _build(issues, where, TddPattern.from_shorthand, kw)


def _parse_link(issues, spec, where):
    spec = dict(issues.keys(spec or {}, _LINK_KEYS, where))
    for short, full in _LINK_ALIASES.items():
        if short in spec:
            if full in spec:
                issues.add(f"{where}.{short}", f"duplicates {full}")
            spec[full] = spec.pop(short)
    if "snr_db" in spec:
        if "snr_gamma" in spec:
            issues.add(where, "give snr_db or snr_gamma, not both")
        spec["snr_gamma"] = 10.0 ** (spec.pop("snr_db") / 10.0)
    return _build(issues, where, LinkModel, spec)


def _parse_cg(issues, spec, where):
    spec = dict(issues.keys(spec, _CG_KEYS, where))
    ue_id = spec.pop("ue_id", 0)
    comp = spec.pop("complementary_carrier", None)
    if "rv_pattern" in spec:
        spec["rv_pattern"] = _build(issues, f"{where}.rv_pattern", RvPattern.parse,
                                    {"text": spec["rv_pattern"]})
        if spec["rv_pattern"] is None:
            return None
    if "fdra" in spec:
        spec["fdra"] = _build(issues, f"{where}.fdra", Fdra,
                              issues.keys(spec["fdra"], _FDRA_KEYS, f"{where}.fdra"))
        if spec["fdra"] is None:
            return None
    cfg = _build(issues, where, CgConfig, spec)
    if cfg is None:
        return None
    return GrantSpec(ue_id, cfg, comp)


def scenario_from_dict(data: dict) -> Scenario:
    """Parse and validate a scenario tree."""
    issues = _Issues()
    data = issues.keys(data, _TOP_KEYS, "scenario")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        issues.add("schema_version", f"expected {SCHEMA_VERSION}, got {version!r}")
    sc = Scenario()
    try:
        sc.profile = as_profile(data.get("profile", "NR_R16"))
    except ConfigurationError as e:
        issues.add("profile", str(e))
        raise ScenarioError(issues.items) from None
    sc.name = str(data.get("name", ""))
    num = issues.keys(data.get("numerology", {}), {"scs_khz"}, "numerology")
    sc.numerology = _build(issues, "numerology", Numerology, num) or Numerology()

    carriers = {}
    for i, c in enumerate(data.get("carriers", [{"id": 0}])):
        where = f"carriers[{i}]"
        c = issues.keys(c, _CARRIER_KEYS, where)
        tdd = _parse_tdd(issues, c.get("tdd"), f"{where}.tdd")
        cid = c.get("id", i)
        if cid in carriers:
            issues.add(where, f"duplicate carrier id {cid}")
        if tdd is not None:
            carriers[cid] = Carrier(cid, tdd, bool(c.get("unlicensed", False)),
                                    int(c.get("bandwidth_rbs", 66)))
    sc.carriers = carriers

    sc.enhancements = Enhancements(**issues.keys(data.get("enhancements", {}), _ENH_KEYS,
                                                 "enhancements"))

    for i, u in enumerate(data.get("ues", [])):
        where = f"ues[{i}]"
        u = issues.keys(u, _UE_KEYS, where)
        traffic = _build(issues, f"{where}.traffic", TrafficModel,
                         issues.keys(u.get("traffic", {}), _TRAFFIC_KEYS, f"{where}.traffic"))
        link = _parse_link(issues, u.get("link"), f"{where}.link")
        if traffic is None or link is None:
            continue
        pool = int(u.get("harq_pool", 16))
        if not 1 <= pool <= 16:
            issues.add(f"{where}.harq_pool", "HARQ pool size must be 1..16")
        sc.ues.append(UeSpec(int(u.get("id", i)), traffic, link, u.get("deadline_slots"),
                             pool, bool(u.get("shared_pool_access", False)),
                             int(u.get("n_rbs", 1))))

    for i, g in enumerate(data.get("configured_grants", [])):
        gs = _parse_cg(issues, g, f"configured_grants[{i}]")
        if gs is not None:
            sc.grants.append(gs)

    bler = issues.keys(data.get("bler", {}), _BLER_KEYS, "bler")
    sc.bler = _build(issues, "bler", BlerModel, bler) or BlerModel()
    sc.gnb = _build(issues, "gnb", GnbSpec, issues.keys(data.get("gnb", {}), _GNB_KEYS, "gnb")) \
        or GnbSpec()
    if "lbt" in data:
        sc.lbt = _build(issues, "lbt", LbtConfig, issues.keys(data["lbt"], _LBT_KEYS, "lbt"))
    if "shared_pool" in data:
        sc.shared_pool = _build(issues, "shared_pool", SharedPoolSpec,
                                issues.keys(data["shared_pool"], _POOL_KEYS, "shared_pool"))
    for i, d in enumerate(data.get("dynamic_grants", [])):
        dg = _build(issues, f"dynamic_grants[{i}]", DynamicGrantSpec,
                    issues.keys(d, _DG_KEYS, f"dynamic_grants[{i}]"))
        if dg is not None:
            sc.dynamic_grants.append(dg)
    for i, e in enumerate(data.get("events", [])):
        where = f"events[{i}]"
        e = dict(issues.keys(e, _EVENT_KEYS, where))
        kind = e.get("kind")
        if kind not in ("activate", "release"):
            issues.add(f"{where}.kind", "must be 'activate' or 'release'")
            continue
        dci_kw = dict(issues.keys(e.get("dci", {}), _DCI_KEYS, f"{where}.dci"))
        dci_kw["purpose"] = "ACTIVATE" if kind == "activate" else "RELEASE"
        dci = _build(issues, f"{where}.dci", DciMessage, dci_kw)
        if dci is not None:
            sc.events.append(ControlEvent(int(e.get("slot", 0)), int(e.get("ue_id", 0)), kind,
                                          tuple(e.get("cg_ids", ())), dci))

    for key in ("duration_slots", "seed", "replications", "processing_margin_symbols"):
        if key in data:
            setattr(sc, key, data[key])
    sc.max_packets = data.get("max_packets")
    sc.trace = bool(data.get("trace", False))
    if not isinstance(sc.seed, int) or not 0 <= sc.seed < 2 ** 64:
        issues.add("seed", "seed must be an unsigned 64-bit integer")
    if sc.duration_slots < 1 or sc.replications < 1 or sc.processing_margin_symbols < 0:
        issues.add("scenario", "duration_slots >= 1, replications >= 1, margin >= 0 required")

    _validate(sc, issues)
    if issues.items:
        raise ScenarioError(issues.items)
    return sc


def load_scenario(source) -> Scenario:
    """Load from a path, a JSON string or an already parsed dict."""
    if isinstance(source, dict):
        return scenario_from_dict(copy.deepcopy(source))
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        with open(source) as f:
            return scenario_from_dict(json.load(f))
    return scenario_from_dict(json.loads(source))


# -------------------------------------------------------------- validation

def _validate(sc: Scenario, issues: _Issues) -> None:
    prof = sc.profile
    caps = prof.caps
    enh = sc.enhancements
    ue_ids = [u.id for u in sc.ues]
    if len(set(ue_ids)) != len(ue_ids):
        issues.add("ues", f"duplicate ue ids {ue_ids}")
    if sc.ack_mode not in ("implicit", "explicit"):
        issues.add("gnb.ack_mode", "must be 'implicit' or 'explicit'")
    elif (sc.ack_mode == "explicit") != caps.explicit_ack:
        issues.add("gnb.ack_mode", f"{prof.value} uses {'explicit' if caps.explicit_ack else 'implicit'}"
                   " HARQ-ACK", "ack_feedback")
    if sc.dfi_enabled and not caps.dfi:
        issues.add("gnb.dfi_enabled", f"CG-DFI is not available under {prof.value}", "dfi")

    for cid, car in sc.carriers.items():
        if car.unlicensed and not prof.is_nru:
            issues.add(f"carriers[{cid}]", "unlicensed carriers need the NR-U profile")

    for i, g in enumerate(sc.grants):
        where = f"configured_grants[{i}]"
        cfg = g.cfg
        if g.ue_id not in ue_ids:
            issues.add(where, f"unknown ue_id {g.ue_id}")
        if cfg.carrier_id not in sc.carriers:
            issues.add(where, f"unknown carrier {cfg.carrier_id}")
        for row, msg in check_profile_rules(cfg, prof):
            issues.add(where, msg, row)
        try:
            check_layout(cfg, prof)
        except ConfigurationError as e:
            issues.add(where, str(e))
        if cfg.gap_t and not enh.time_gap:
            issues.add(where, "gap_t needs the time_gap enhancement")
        if cfg.flexible_start and not enh.flexible_start:
            issues.add(where, "flexible_start needs the flexible_start enhancement")
        if g.complementary_carrier is not None:
            if not enh.complementary_tdd:
                issues.add(where, "complementary_carrier needs the complementary_tdd enhancement")
            if g.complementary_carrier not in sc.carriers:
                issues.add(where, f"unknown complementary carrier {g.complementary_carrier}")
            elif g.complementary_carrier == cfg.carrier_id:
                issues.add(where, "complementary carrier must differ from the primary")

    for u in sc.ues:
        mine = [g.cfg for g in sc.grants_of(u.id)]
        try:
            check_cg_set(mine, prof)
        except ProfileViolation as e:
            issues.add(f"ues[{u.id}].configured_grants", str(e), e.row)
        except ConfigurationError as e:
            issues.add(f"ues[{u.id}].configured_grants", str(e))
        if u.shared_pool_access:
            if not enh.shared_pool:
                issues.add(f"ues[{u.id}]", "shared_pool_access needs the shared_pool enhancement")
            if sc.shared_pool is None:
                issues.add(f"ues[{u.id}]", "shared_pool_access without a shared_pool section")
    if enh.shared_pool and sc.shared_pool is not None:
        if sc.shared_pool.k_plus < 1 or sc.shared_pool.background_ues < 0 \
                or not 0.0 <= sc.shared_pool.activity_q <= 1.0:
            issues.add("shared_pool", "k_plus >= 1, background_ues >= 0, activity_q in [0, 1]")
        if sc.shared_pool.carrier not in sc.carriers:
            issues.add("shared_pool.carrier", f"unknown carrier {sc.shared_pool.carrier}")

    for i, dg in enumerate(sc.dynamic_grants):
        if dg.ue_id not in ue_ids:
            issues.add(f"dynamic_grants[{i}]", f"unknown ue_id {dg.ue_id}")
        if dg.priority == "HIGH" and not caps.phy_priority:
            issues.add(f"dynamic_grants[{i}]", "PHY priority not supported", "phy_priority")
        if dg.start_symbol < 0 or dg.length < 1 or dg.start_symbol + dg.length > 14:
            issues.add(f"dynamic_grants[{i}]", "grant must stay inside one slot")

    for i, e in enumerate(sc.events):
        where = f"events[{i}]"
        if e.dci.format not in caps.dci_formats:
            issues.add(where, f"DCI format {e.dci.format} not available", "dci_format")
        if e.kind == "release" and len(set(e.cg_ids)) > 1 and not caps.group_release:
            issues.add(where, f"group release not supported by {prof.value}", "group_release")
        known = {g.cfg.cg_id for g in sc.grants_of(e.ue_id)}
        for c in e.cg_ids:
            if c not in known:
                issues.add(where, f"ue {e.ue_id} has no cg {c}")

    if not issues.items:
        _check_orthogonality(sc, issues)


def _check_orthogonality(sc: Scenario, issues: _Issues, horizon_cap: int = 4096) -> None:
    """Dedicated grants of different UEs must not share a symbol and a resource block."""
    if len({g.ue_id for g in sc.grants}) < 2:
        return
    horizon = 1
    for g in sc.grants:
        horizon = math.lcm(horizon, g.cfg.period_p)
    for c in sc.carriers.values():
        horizon = math.lcm(horizon, c.tdd.period_slots)
    horizon = min(horizon, horizon_cap) + max(g.cfg.offset for g in sc.grants)
    used: dict = {}
    for g in sc.grants:
        car = sc.carriers[g.cfg.carrier_id]
        occ = enumerate_occasions(g.cfg, sc.profile, car.tdd, range(0, horizon),
                                  g.complementary_carrier)
        for o in occ:
            for seg in o.segments:
                bw = sc.carriers[seg.carrier_id].bandwidth_rbs
                rbs = g.cfg.fdra.rb_set(bw)
                for t in seg.symbols():
                    key = (seg.carrier_id, t)
                    for other_ue, other_cg, other_rbs in used.get(key, ()):
                        if other_ue != g.ue_id and rbs & other_rbs:
                            issues.add("configured_grants",
                                       f"cg {g.cfg.cg_id} of ue {g.ue_id} overlaps cg {other_cg} "
                                       f"of ue {other_ue} at symbol {t} on carrier {seg.carrier_id}")
                            return
                    used.setdefault(key, []).append((g.ue_id, g.cfg.cg_id, rbs))
