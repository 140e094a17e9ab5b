"""Configured-grant parameters, release-profile gating and occasion layout."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

from .errors import ConfigurationError, ProfileViolation
from .time_grid import (
    SYMBOLS_PER_SLOT,
    Segment,
    SymbolSpan,
    TddPattern,
    complementary_carrier_map,
    enumerate_type_a,
    segment_type_b,
)

MAX_CG_ID = 11


@dataclass(frozen=True)
class ProfileCaps:
    max_configs: int
    dci_formats: frozenset
    group_release: bool
    type_b: bool
    type_b_cross_slot: bool
    phy_priority: bool
    explicit_ack: bool
    autonomous_tx: bool
    cg_uci: bool
    dfi: bool
    start_rule: str          # "first" | "first_or_rv0" | "any"
    ue_harq_id: bool
    ue_rv: bool
    autonomous_retx: bool
    multi_harq_per_period: bool


class FeatureProfile(enum.Enum):
    NR_R15 = "NR_R15"
    NR_R16 = "NR_R16"
    NRU_R16 = "NRU_R16"

    @property
    def caps(self) -> ProfileCaps:
        return _CAPS[self]

    @property
    def is_nru(self) -> bool:
        return self is FeatureProfile.NRU_R16


_CAPS = {
    FeatureProfile.NR_R15: ProfileCaps(
        max_configs=1, dci_formats=frozenset({"F0_0", "F0_1"}), group_release=False,
        type_b=False, type_b_cross_slot=False, phy_priority=False, explicit_ack=False,
        autonomous_tx=False, cg_uci=False, dfi=False, start_rule="first",
        ue_harq_id=False, ue_rv=False, autonomous_retx=False, multi_harq_per_period=False),
    FeatureProfile.NR_R16: ProfileCaps(
        max_configs=12, dci_formats=frozenset({"F0_0", "F0_1", "F0_2"}), group_release=True,
        type_b=True, type_b_cross_slot=True, phy_priority=True, explicit_ack=False,
        autonomous_tx=False, cg_uci=False, dfi=False, start_rule="first_or_rv0",
        ue_harq_id=False, ue_rv=False, autonomous_retx=False, multi_harq_per_period=False),
    FeatureProfile.NRU_R16: ProfileCaps(
        max_configs=12, dci_formats=frozenset({"F0_0", "F0_1"}), group_release=False,
        type_b=True, type_b_cross_slot=False, phy_priority=False, explicit_ack=True,
        autonomous_tx=True, cg_uci=True, dfi=True, start_rule="any",
        ue_harq_id=True, ue_rv=True, autonomous_retx=True, multi_harq_per_period=True),
}

# One entry per gated capability row of the release comparison table.
TABLE_I_ROWS = (
    "max_configurations",
    "dci_format",
    "group_release",
    "repetition",
    "phy_priority",
    "ack_feedback",
    "autonomous_transmission",
    "cg_uci",
    "dfi",
    "transmission_start",
    "harq_id",
    "rv_pattern",
    "autonomous_retransmission",
    "harq_per_period",
)


def as_profile(value) -> FeatureProfile:
    if isinstance(value, FeatureProfile):
        return value
    try:
        return FeatureProfile(str(value).upper())
    except ValueError:
        raise ConfigurationError(f"unknown profile {value!r}") from None


# ---------------------------------------------------------------- RV patterns

SELF_DECODABLE_RVS = frozenset({0, 3})
_ALLOWED_PATTERNS = {(0, 0, 0, 0): 1, (0, 3, 0, 3): 2, (0, 2, 3, 1): 4}


@dataclass(frozen=True)
class RvPattern:
    pattern: tuple = (0, 0, 0, 0)

    def __post_init__(self):
        if tuple(self.pattern) not in _ALLOWED_PATTERNS:
            raise ConfigurationError(
                f"RV pattern must be one of 0000, 0303, 0231; got {self.pattern}")
        object.__setattr__(self, "pattern", tuple(self.pattern))

    @classmethod
    def parse(cls, text) -> "RvPattern":
        if isinstance(text, RvPattern):
            return text
        if isinstance(text, (list, tuple)):
            return cls(tuple(int(x) for x in text))
        s = str(text).strip()
        if not s.isdigit():
            raise ConfigurationError(f"bad RV pattern {text!r}")
        return cls(tuple(int(c) for c in s))

    @classmethod
    def for_spacing(cls, a: int) -> "RvPattern":
        for p, spacing in _ALLOWED_PATTERNS.items():
            if spacing == a:
                return cls(p)
        raise ConfigurationError(f"no RV pattern has RV0 spacing {a}")

    def rv(self, i: int) -> int:
        return self.pattern[i % 4]

    @property
    def rv0_spacing(self) -> int:
        return _ALLOWED_PATTERNS[self.pattern]

    def __str__(self):
        return "".join(map(str, self.pattern))


# ----------------------------------------------------------- frequency domain

@dataclass(frozen=True)
class Fdra:
    """Frequency allocation. Only used to find overlapping resource blocks.

    ``type0``: ``rbg_bitmap`` over RBGs of ``rbg_size`` RBs.
    ``type1``: contiguous ``rb_start`` / ``n_rbs``.
    ``type2``: interlace ``interlace`` out of ``n_interlaces``.
    """

    kind: str = "type1"
    rb_start: int = 0
    n_rbs: int = 1
    rbg_bitmap: str = ""
    rbg_size: int = 4
    interlace: int = 0
    n_interlaces: int = 10

    def __post_init__(self):
        if self.kind not in ("type0", "type1", "type2"):
            raise ConfigurationError(f"unknown FDRA type {self.kind!r}")

    def rb_set(self, bandwidth_rbs: int) -> frozenset:
        if self.kind == "type1":
            rbs = range(self.rb_start, self.rb_start + self.n_rbs)
        elif self.kind == "type0":
            rbs = [g * self.rbg_size + j
                   for g, bit in enumerate(self.rbg_bitmap) if bit == "1"
                   for j in range(self.rbg_size)]
        else:
            rbs = range(self.interlace, bandwidth_rbs, self.n_interlaces)
        return frozenset(rb for rb in rbs if rb < bandwidth_rbs)


# ------------------------------------------------------------------- config

@dataclass(frozen=True)
class CgConfig:
    cg_id: int = 0
    cg_type: str = "TYPE1"
    period_p: int = 1
    offset: int = 0
    carrier_id: int = 0
    start_symbol: int = 0
    length: int = SYMBOLS_PER_SLOT
    repetition_type: str = "A"
    K: int = 1
    rv_pattern: RvPattern = field(default_factory=RvPattern)
    starting_from_rv0: bool = False
    # K >= 8 falls back to first-TO-only start when set
    rv0_start_k8_exception: bool = True
    phy_priority: str = "LOW"
    gap_t: int = 0
    flexible_start: bool = False
    fdra: Fdra = field(default_factory=Fdra)
    nru_tos_per_slot: int = 1
    nru_slots: int = 1
    cg_retx_timer: Optional[int] = None     # in transmission occasions
    cg_timer: Optional[int] = None          # in slots
    activation_dci_format: str = "F0_1"
    # Explicit capability requests; None means "whatever the profile does".
    cg_uci: Optional[bool] = None
    autonomous_tx: Optional[bool] = None
    harq_id_mode: Optional[str] = None      # "rule" | "ue_chosen"
    rv_mode: Optional[str] = None           # "gnb" | "ue_chosen"
    max_harq_per_period: Optional[int] = None

    def __post_init__(self):
        if not 0 <= self.cg_id <= MAX_CG_ID:
            raise ConfigurationError(f"cg_id must be 0..{MAX_CG_ID}")
        if self.cg_type not in ("TYPE1", "TYPE2"):
            raise ConfigurationError(f"cg_type must be TYPE1 or TYPE2, got {self.cg_type!r}")
        if self.repetition_type not in ("A", "B"):
            raise ConfigurationError("repetition_type must be A or B")
        if self.phy_priority not in ("LOW", "HIGH"):
            raise ConfigurationError("phy_priority must be LOW or HIGH")
        if self.period_p < 1 or self.offset < 0 or self.K < 1 or self.gap_t < 0:
            raise ConfigurationError("period_p >= 1, offset >= 0, K >= 1, gap_t >= 0 required")
        if not 0 <= self.start_symbol < SYMBOLS_PER_SLOT or not 1 <= self.length <= SYMBOLS_PER_SLOT:
            raise ConfigurationError("SLIV start must be 0..13 and length 1..14")
        if self.nru_tos_per_slot < 1 or self.nru_slots < 1:
            raise ConfigurationError("NR-U occasion counts must be >= 1")
        if not isinstance(self.rv_pattern, RvPattern):
            object.__setattr__(self, "rv_pattern", RvPattern.parse(self.rv_pattern))

    @property
    def sliv(self) -> SymbolSpan:
        return SymbolSpan(self.carrier_id, 0, self.start_symbol, self.length)

    def with_(self, **kw) -> "CgConfig":
        return replace(self, **kw)


def check_profile_rules(cfg: CgConfig, profile: FeatureProfile) -> list[tuple[str, str]]:
    """Return ``(row, message)`` for every way ``cfg`` breaks ``profile``."""
    caps = profile.caps
    bad = []
    if cfg.cg_type == "TYPE2" and cfg.activation_dci_format not in caps.dci_formats:
        bad.append(("dci_format", f"DCI format {cfg.activation_dci_format} not available"))
    if cfg.repetition_type == "B":
        if not caps.type_b:
            bad.append(("repetition", "Type B repetition not supported"))
        elif not caps.type_b_cross_slot and cfg.start_symbol + cfg.K * cfg.length > SYMBOLS_PER_SLOT:
            bad.append(("repetition", "Type B repetition cannot cross the slot boundary"))
    if cfg.phy_priority == "HIGH" and not caps.phy_priority:
        bad.append(("phy_priority", "PHY priority not supported"))
    if cfg.autonomous_tx is not None and cfg.autonomous_tx != caps.autonomous_tx:
        bad.append(("autonomous_transmission",
                    f"autonomous transmission is {'mandatory' if caps.autonomous_tx else 'not supported'}"))
    if cfg.cg_uci is not None and cfg.cg_uci != caps.cg_uci:
        bad.append(("cg_uci", f"CG-UCI is {'always present' if caps.cg_uci else 'not supported'}"))
    if cfg.starting_from_rv0 and caps.start_rule == "first":
        bad.append(("transmission_start", "transmission may only begin at the first TO"))
    if cfg.harq_id_mode is not None:
        want = "ue_chosen" if caps.ue_harq_id else "rule"
        if cfg.harq_id_mode != want:
            bad.append(("harq_id", f"HARQ ID must be {want}"))
    if cfg.rv_mode is not None:
        want = "ue_chosen" if caps.ue_rv else "gnb"
        if cfg.rv_mode != want:
            bad.append(("rv_pattern", f"RV pattern must be {want}"))
    if cfg.cg_retx_timer is not None and not caps.autonomous_retx:
        bad.append(("autonomous_retransmission", "cgRetransmissionTimer needs autonomous retransmission"))
    if cfg.max_harq_per_period is not None and cfg.max_harq_per_period > 1 \
            and not caps.multi_harq_per_period:
        bad.append(("harq_per_period", "only one HARQ process per CG period"))
    if profile is FeatureProfile.NR_R15 and (cfg.gap_t or cfg.flexible_start):
        bad.append(("transmission_start", "enhancements are not available under Release 15"))
    if profile.is_nru and cfg.nru_tos_per_slot * cfg.nru_slots < cfg.K:
        bad.append(("harq_per_period", "NR-U period must hold at least K occasions"))
    return bad


def check_cg_set(cfgs: Iterable[CgConfig], profile: FeatureProfile) -> None:
    cfgs = list(cfgs)
    limit = profile.caps.max_configs
    if len(cfgs) > limit:
        raise ProfileViolation("max_configurations",
                               f"{len(cfgs)} configurations exceed {profile.value} limit of {limit}")
    ids = [c.cg_id for c in cfgs]
    if len(set(ids)) != len(ids):
        raise ConfigurationError(f"duplicate cg_id in {ids}")


# ---------------------------------------------------------------- occasions

@dataclass(frozen=True)
class TransmissionOccasion:
    cg_id: int
    period_index: int
    index: int
    segments: tuple          # tuple[SymbolSpan, ...]; empty when invalid
    rv: int
    valid: bool
    nominal: SymbolSpan      # placement before invalid-symbol handling

    @property
    def carrier_id(self) -> int:
        return (self.segments[0] if self.segments else self.nominal).carrier_id

    @property
    def start(self) -> int:
        return (self.segments[0] if self.segments else self.nominal).abs_start

    @property
    def end(self) -> int:
        return (self.segments[-1] if self.segments else self.nominal).abs_end

    @property
    def n_symbols(self) -> int:
        return sum(s.length for s in self.segments)


def tos_per_period(cfg: CgConfig, profile: FeatureProfile) -> int:
    if profile.is_nru:
        return cfg.nru_tos_per_slot * cfg.nru_slots
    return cfg.K


def check_layout(cfg: CgConfig, profile: FeatureProfile) -> None:
    """Raise ConfigurationError when one period's occasions do not fit in ``period_p``."""
    if profile.is_nru:
        if cfg.start_symbol + cfg.nru_tos_per_slot * cfg.length > SYMBOLS_PER_SLOT:
            raise ConfigurationError("NR-U occasions of one slot exceed 14 symbols")
        if cfg.nru_slots > cfg.period_p:
            raise ConfigurationError("cg-nrofSlots exceeds the CG period")
        if cfg.nru_tos_per_slot * cfg.nru_slots < cfg.K:
            raise ConfigurationError("NR-U period holds fewer than K occasions")
        return
    if cfg.repetition_type == "A":
        if cfg.start_symbol + cfg.length > SYMBOLS_PER_SLOT:
            raise ConfigurationError("Type A SLIV must stay inside one slot")
        if (cfg.K - 1) * (1 + cfg.gap_t) + 1 > cfg.period_p:
            raise ConfigurationError(
                f"K={cfg.K} repetitions with gap {cfg.gap_t} do not fit a {cfg.period_p}-slot period")
    else:
        if cfg.start_symbol + cfg.K * cfg.length > cfg.period_p * SYMBOLS_PER_SLOT:
            raise ConfigurationError("Type B repetitions run past the CG period")


def _nominal_spans(cfg: CgConfig, profile: FeatureProfile, s0: int) -> list[SymbolSpan]:
    c = cfg.carrier_id
    if profile.is_nru:
        return [SymbolSpan(c, s0 + j // cfg.nru_tos_per_slot,
                           cfg.start_symbol + (j % cfg.nru_tos_per_slot) * cfg.length, cfg.length)
                for j in range(tos_per_period(cfg, profile))]
    if cfg.repetition_type == "A":
        return [SymbolSpan(c, s0 + i * (1 + cfg.gap_t), cfg.start_symbol, cfg.length)
                for i in range(cfg.K)]
    base = s0 * SYMBOLS_PER_SLOT + cfg.start_symbol
    return [SymbolSpan.from_abs(c, base + i * cfg.length, cfg.length) for i in range(cfg.K)]


def period_occasions(cfg: CgConfig, profile: FeatureProfile, tdd: TddPattern,
                     period_index: int, complementary_carrier: Optional[int] = None
                     ) -> list[TransmissionOccasion]:
    """Occasions of one period, labelled with the period-anchored RV."""
    s0 = cfg.offset + period_index * cfg.period_p
    nominal = _nominal_spans(cfg, profile, s0)
    type_b = cfg.repetition_type == "B" and not profile.is_nru
    if complementary_carrier is not None:
        if type_b:
            raw = segment_type_b(nominal[0], len(nominal), TddPattern.all_uplink())
        else:
            raw = [Segment(sp, i) for i, sp in enumerate(nominal)]
        segs = complementary_carrier_map(raw, tdd, complementary_carrier)
    elif type_b:
        segs = segment_type_b(nominal[0], len(nominal), tdd,
                              cross_slot_allowed=profile is FeatureProfile.NR_R16)
    elif profile.is_nru:
        segs = [Segment(sp, i) for i, sp in enumerate(nominal) if tdd.span_valid(sp)]
    else:
        segs = enumerate_type_a(nominal[0], len(nominal), cfg.gap_t, tdd)
    by_idx: dict[int, list[SymbolSpan]] = {}
    for seg in segs:
        by_idx.setdefault(seg.nominal_index, []).append(seg.span)
    out = []
    for i, sp in enumerate(nominal):
        parts = tuple(by_idx.get(i, ()))
        out.append(TransmissionOccasion(cfg.cg_id, period_index, i, parts,
                                        cfg.rv_pattern.rv(i), bool(parts), sp))
    return out


def enumerate_occasions(cfg: CgConfig, profile: FeatureProfile, tdd: TddPattern,
                        window: range, complementary_carrier: Optional[int] = None
                        ) -> list[TransmissionOccasion]:
    """All occasions of the periods whose start slot lies in ``window``."""
    check_layout(cfg, profile)
    out = []
    first = max(0, -(-(window.start - cfg.offset) // cfg.period_p))
    n = first
    while cfg.offset + n * cfg.period_p < window.stop:
        out.extend(period_occasions(cfg, profile, tdd, n, complementary_carrier))
        n += 1
    return out


def allowed_start_indices(cfg: CgConfig, profile: FeatureProfile) -> frozenset:
    n = tos_per_period(cfg, profile)
    if profile.is_nru:
        return frozenset(range(n))
    if cfg.flexible_start:
        return frozenset(range(cfg.K))
    if profile is FeatureProfile.NR_R15 or not cfg.starting_from_rv0:
        return frozenset({0})
    if cfg.K >= 8 and cfg.rv0_start_k8_exception:
        return frozenset({0})
    return frozenset(i for i in range(cfg.K) if cfg.rv_pattern.rv(i) == 0)


def rv_for_start(cfg: CgConfig, start_index: int, occasion_index: int,
                 anchored_to_start: Optional[bool] = None) -> int:
    """RV used on ``occasion_index`` when the bundle began at ``start_index``.

    Flexible start re-anchors the pattern at the actual start; otherwise the
    label is fixed by the occasion's position in the period.
    """
    if anchored_to_start is None:
        anchored_to_start = cfg.flexible_start
    if anchored_to_start:
        return cfg.rv_pattern.rv(occasion_index - start_index)
    return cfg.rv_pattern.rv(occasion_index)


def occasions_available_legacy(K: int, a: int, b: int) -> int:
    """Occasions used when a bundle may only open on an RV0 occasion (``b`` is 1-based)."""
    if a not in (1, 2, 4):
        raise ValueError(f"RV0 spacing must be 1, 2 or 4, got {a}")
    if b < 1 or b > K:
        return 0
    return max(0, K - math.ceil((b - 1) / a) * a)


def occasions_available_flexible(K: int, b: int) -> int:
    if b < 1 or b > K:
        return 0
    return K - b + 1


# ------------------------------------------------------------ DCI handling

@dataclass(frozen=True)
class DciMessage:
    purpose: str = "ACTIVATE"       # ACTIVATE | RELEASE | RETX_GRANT | CG_DFI
    scrambling: str = "CS_RNTI"
    ndi: int = 0
    harq_field: int = 0
    rv_field: int = 0
    dfi_field: int = 0
    format: str = "F0_1"
    tdra_row: int = 0
    fdra_field: int = 0
    priority_bit: int = 0

    def __post_init__(self):
        for name in ("ndi", "harq_field", "rv_field", "dfi_field", "tdra_row",
                     "fdra_field", "priority_bit"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"DCI field {name} must be non-negative")


@dataclass(frozen=True)
class ActivationCheck:
    valid: bool
    target_cg: Optional[int] = None


def validate_activation(dci: DciMessage, profile: FeatureProfile, multi_cg: bool) -> ActivationCheck:
    if dci.purpose != "ACTIVATE":
        return ActivationCheck(False)
    if dci.format not in profile.caps.dci_formats:
        return ActivationCheck(False)
    if dci.scrambling != "CS_RNTI" or dci.ndi or dci.rv_field or dci.dfi_field:
        return ActivationCheck(False)
    if multi_cg:
        return ActivationCheck(True, dci.harq_field)
    if dci.harq_field:
        return ActivationCheck(False)
    return ActivationCheck(True, None)


def validate_release(dci: DciMessage, profile: FeatureProfile, targets) -> bool:
    """Check a release DCI. Group release outside Release 16 NR raises ProfileViolation."""
    targets = set(targets)
    if len(targets) > 1 and not profile.caps.group_release:
        raise ProfileViolation("group_release",
                               f"group release of {sorted(targets)} not supported by {profile.value}")
    if dci.purpose != "RELEASE" or not targets:
        return False
    if dci.format not in profile.caps.dci_formats:
        return False
    return dci.scrambling == "CS_RNTI" and dci.ndi == 0 and dci.rv_field == 0


class CgState(enum.Enum):
    CONFIGURED_INACTIVE = "CONFIGURED_INACTIVE"
    ACTIVE = "ACTIVE"
    RELEASED = "RELEASED"


class CgStateMachine:
    """Activation state of a UE's configured grants.

    Type 1 grants go active when configured. Type 2 grants wait for a
    valid activation DCI. Every accepted (de)activation leaves a MAC CE
    confirmation pending until :meth:`confirm` is called.
    """

    def __init__(self, profile: FeatureProfile, cfgs: Iterable[CgConfig] = ()):
        self.profile = profile
        self.configs: dict[int, CgConfig] = {}
        self.states: dict[int, CgState] = {}
        self.pending_confirmation = False
        cfgs = list(cfgs)
        check_cg_set(cfgs, profile)
        for c in cfgs:
            self.configure(c)

    def configure(self, cfg: CgConfig) -> None:
        if cfg.cg_id not in self.configs:
            check_cg_set(list(self.configs.values()) + [cfg], profile=self.profile)
        self.configs[cfg.cg_id] = cfg
        self.states[cfg.cg_id] = (CgState.ACTIVE if cfg.cg_type == "TYPE1"
                                  else CgState.CONFIGURED_INACTIVE)

    @property
    def multi_cg(self) -> bool:
        return len(self.configs) > 1

    def state(self, cg_id: int) -> CgState:
        return self.states[cg_id]

    def active_ids(self) -> list[int]:
        return sorted(i for i, s in self.states.items() if s is CgState.ACTIVE)

    def on_activation(self, dci: DciMessage) -> Optional[int]:
        """Apply an activation DCI; return the activated cg_id or None if ignored."""
        check = validate_activation(dci, self.profile, self.multi_cg)
        if not check.valid:
            return None
        target = check.target_cg if self.multi_cg else next(iter(self.configs), None)
        if target not in self.configs or self.configs[target].cg_type != "TYPE2":
            return None
        self.states[target] = CgState.ACTIVE
        self.pending_confirmation = True
        return target

    def on_release(self, dci: DciMessage, targets) -> bool:
        targets = set(targets)
        if not validate_release(dci, self.profile, targets):
            return False
        if not targets <= set(self.configs):
            return False
        changed = False
        for t in targets:
            if self.states[t] is not CgState.RELEASED:
                self.states[t] = CgState.RELEASED
                changed = True
        if changed:
            self.pending_confirmation = True
        return True

    def confirm(self) -> bool:
        """Send the MAC CE confirmation; returns whether one was pending."""
        was = self.pending_confirmation
        self.pending_confirmation = False
        return was
