"""gNB receiver: detection chain, block-error model, collisions and feedback."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from .cg_core import SELF_DECODABLE_RVS, FeatureProfile, RvPattern
from .errors import ConfigurationError

LOG2E = math.log2(math.e)


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


@dataclass(frozen=True)
class LinkModel:
    snr_gamma: float = 10.0
    p_detect_energy: float = 1.0
    p_id_decode: float = 1.0
    p_misdetect: float = 0.0
    p_common_nack_decode: float = 1.0
    p_transmit: float = 1.0

    def __post_init__(self):
        for name in ("p_detect_energy", "p_id_decode", "p_misdetect",
                     "p_common_nack_decode", "p_transmit"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {v}")
        if self.p_id_decode + self.p_misdetect > 1.0 + 1e-12:
            raise ConfigurationError("p_id_decode + p_misdetect must not exceed 1")
        if self.snr_gamma < 0:
            raise ConfigurationError("SINR must be non-negative")

    @property
    def gamma_db(self) -> float:
        return 10 * math.log10(self.snr_gamma) if self.snr_gamma > 0 else -math.inf


@dataclass(frozen=True)
class BlerModel:
    kind: str = "bernoulli"         # "bernoulli" | "finite_blocklength"
    epsilon: float = 0.0
    payload_bits: int = 256
    dmrs_overhead: int = 1
    subcarriers_per_rb: int = 12

    def __post_init__(self):
        if self.kind not in ("bernoulli", "finite_blocklength"):
            raise ConfigurationError(f"unknown BLER model {self.kind!r}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigurationError("epsilon must lie in [0, 1]")
        if self.payload_bits < 1 or self.dmrs_overhead < 0:
            raise ConfigurationError("payload_bits >= 1 and dmrs_overhead >= 0 required")


@dataclass(frozen=True)
class ReceivedSegment:
    n_symbols: int
    n_rbs: int = 1
    rv: int = 0
    nominal_index: int = 0


def q_function(x: float) -> float:
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def capacity(gamma: float) -> float:
    return math.log2(1.0 + gamma)


def dispersion(gamma: float) -> float:
    return gamma * (gamma + 2.0) / (2.0 * (gamma + 1.0) ** 2) * LOG2E ** 2


def resource_elements(model: BlerModel, segments: Iterable[ReceivedSegment]) -> int:
    return sum(max(0, s.n_symbols - model.dmrs_overhead) * model.subcarriers_per_rb * s.n_rbs
               for s in segments)


def bler(model: BlerModel, gamma: float, segments: Sequence[ReceivedSegment]) -> float:
    """Probability that decoding the combined ``segments`` fails.

    Nothing decodes without at least one self-decodable RV (0 or 3).
    Bernoulli: every self-decodable repetition fails independently with
    ``epsilon`` (segments of one nominal repetition count once).
    Finite blocklength: normal approximation over the resource elements
    accumulated across all segments after DMRS overhead.
    """
    if not any(s.rv in SELF_DECODABLE_RVS for s in segments):
        return 1.0
    if model.kind == "bernoulli":
        n = len({s.nominal_index for s in segments if s.rv in SELF_DECODABLE_RVS})
        return model.epsilon ** n
    n = resource_elements(model, segments)
    if n <= 0 or gamma <= 0:
        return 1.0
    if math.isinf(gamma):
        return 0.0
    c = capacity(gamma)
    v = dispersion(gamma)
    err = q_function((c - model.payload_bits / n) / math.sqrt(v / n))
    return min(1.0, max(0.0, err))


# ----------------------------------------------------------------- detection

class DetectionOutcome(enum.Enum):
    NOT_DETECTED = "NOT_DETECTED"
    IDENTIFIED = "IDENTIFIED"
    MISDETECTED = "MISDETECTED"
    UNKNOWN_DETECTION = "UNKNOWN_DETECTION"


def outcome_probabilities(link: LinkModel) -> dict:
    pe, pd, pmd = link.p_detect_energy, link.p_id_decode, link.p_misdetect
    return {
        DetectionOutcome.NOT_DETECTED: 1.0 - pe,
        DetectionOutcome.IDENTIFIED: pe * pd,
        DetectionOutcome.MISDETECTED: pe * pmd,
        DetectionOutcome.UNKNOWN_DETECTION: pe * (1.0 - pd - pmd),
    }


def _uniform(rng) -> float:
    if callable(rng):
        return rng()
    return float(rng.random())


def detect(link: LinkModel, rng) -> DetectionOutcome:
    """Draw the energy/ID detection outcome for one surviving transmission.

    ``rng`` is either a zero-argument callable returning a uniform float or a
    numpy Generator. One uniform is consumed.
    """
    u = _uniform(rng)
    pe = link.p_detect_energy
    t_id = pe * link.p_id_decode
    if u < t_id:
        return DetectionOutcome.IDENTIFIED
    t_md = t_id + pe * link.p_misdetect
    if u < t_md:
        return DetectionOutcome.MISDETECTED
    if u < pe:
        return DetectionOutcome.UNKNOWN_DETECTION
    return DetectionOutcome.NOT_DETECTED


# ---------------------------------------------------------------- collisions

def resolve_collisions(transmissions: Iterable, shared: bool,
                       occasion_of: Callable = lambda t: t.occasion) -> list:
    """Keep transmissions that are alone in their occasion.

    On the shared pool two or more transmissions in one occasion destroy each
    other (no capture). Dedicated resources are orthogonal by construction, so
    any overlap there is a configuration error.
    """
    groups: dict = {}
    order = []
    for t in transmissions:
        key = occasion_of(t)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(t)
    survivors = []
    for key in order:
        g = groups[key]
        if len(g) == 1:
            survivors.append(g[0])
        elif not shared:
            raise ConfigurationError(f"dedicated allocations overlap in occasion {key!r}")
    return survivors


# ------------------------------------------------------------ RV inference

def blind_rv_recovery(pattern: RvPattern, detected_index: int, detected_rv: int,
                      n_occasions: int) -> Optional[list[int]]:
    """Labels for occasions ``detected_index .. n_occasions-1`` given one blind RV hit.

    Returns None when ``detected_rv`` does not occur in the pattern.
    """
    if detected_rv not in pattern.pattern:
        return None
    pos = pattern.pattern.index(detected_rv)
    return [pattern.rv(pos + i - detected_index) for i in range(detected_index, n_occasions)]


# ------------------------------------------------------------------ feedback

@dataclass(frozen=True)
class FeedbackPolicy:
    feedback_delay_slots: int = 1
    dfi_delay_slots: int = 1
    nack_delay_slots: int = 1
    common_nack: bool = False
    max_dynamic_retx: int = 4


@dataclass(frozen=True)
class ProcessOutcome:
    ue_id: int
    harq_id: int
    detection: DetectionOutcome
    decoded: bool
    grid: tuple = ()        # (carrier, abs_start, abs_end, rbs) of the occasion


@dataclass(frozen=True)
class RetxGrant:
    ue_id: int
    harq_id: int
    deliver_at: int
    dci: object


@dataclass(frozen=True)
class CgDfi:
    ue_id: int
    deliver_at: int
    ack: dict = field(default_factory=dict)     # harq_id -> bool

    def bitmap(self, n_processes: int) -> str:
        return "".join("1" if self.ack.get(h) else "0" for h in range(n_processes))


@dataclass(frozen=True)
class CommonNack:
    deliver_at: int
    grid: tuple


def emit_feedback(profile: FeatureProfile, outcomes: Sequence[ProcessOutcome],
                  policy: FeedbackPolicy, now: int, slot_symbols: int = 14) -> list:
    """Feedback the gNB sends at ``now`` (a symbol index) for finished processes."""
    from .cg_core import DciMessage

    msgs: list = []
    if profile.is_nru:
        per_ue: dict[int, dict] = {}
        for o in outcomes:
            if o.detection is DetectionOutcome.IDENTIFIED:
                per_ue.setdefault(o.ue_id, {})[o.harq_id] = o.decoded
        for ue_id in sorted(per_ue):
            msgs.append(CgDfi(ue_id, now + policy.dfi_delay_slots * slot_symbols, per_ue[ue_id]))
    else:
        for o in outcomes:
            if o.detection is DetectionOutcome.IDENTIFIED and not o.decoded:
                dci = DciMessage(purpose="RETX_GRANT", scrambling="CS_RNTI", ndi=1,
                                 harq_field=o.harq_id)
                msgs.append(RetxGrant(o.ue_id, o.harq_id,
                                      now + policy.feedback_delay_slots * slot_symbols, dci))
    if policy.common_nack:
        for o in outcomes:
            if o.detection is DetectionOutcome.UNKNOWN_DETECTION:
                msgs.append(CommonNack(now + policy.nack_delay_slots * slot_symbols, o.grid))
    return msgs
