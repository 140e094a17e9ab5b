"""Discrete-event simulation of configured-grant uplink traffic.

One replication is a single-threaded loop over a heap of events keyed by
``(symbol, event_order, ue_id, sequence)``. At one timestamp feedback is
handled before shared-pool resolution, bundle evaluation, timers, arrivals
and finally transmissions; the sequence number makes every remaining tie
follow insertion order, so a (scenario, seed) pair always replays the same way.

Random streams: replication ``r`` of master seed ``s`` uses Philox streams
keyed by ``(r, purpose[, ue_id])`` (see :mod:`cgsim.rng`).
"""
from __future__ import annotations

import heapq
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Optional

from .cg_core import CgStateMachine, FeatureProfile
from .gnb_model import (
    SELF_DECODABLE_RVS,
    CgDfi,
    CommonNack,
    DetectionOutcome,
    FeedbackPolicy,
    ProcessOutcome,
    ReceivedSegment,
    RetxGrant,
    bler,
    emit_feedback,
    resolve_collisions,
)
from .metrics import MetricsReport, UeCounters, UeResult
from .rng import UniformStream
from .scenario import Scenario
from .time_grid import SYMBOLS_PER_SLOT
from .ue_mac import (
    CgSchedule,
    Grant,
    HarqProcess,
    HarqState,
    LbtChannel,
    Packet,
    PlannedTx,
    handle_common_nack,
    lbt_gate,
    nr_feedback_step,
    nru_feedback_step,
    resolve_overlap,
    select_grant,
    shared_pool_fallback,
    transmit_repetitions,
)

log = logging.getLogger(__name__)

S = SYMBOLS_PER_SLOT

# event order at equal timestamps
CONTROL, FEEDBACK, POOL, GNB_EVAL, TIMER, ARRIVAL, TX = range(7)

IDENTIFIED = DetectionOutcome.IDENTIFIED
UNKNOWN = DetectionOutcome.UNKNOWN_DETECTION


class Tb:
    """Transport block: one packet and what the gNB has collected for it."""

    __slots__ = ("packet", "proc", "sch", "home_period", "u_decode", "segments", "n_sd",
                 "decoded", "n_reps", "done", "cn_rounds")

    def __init__(self, packet, u_decode):
        self.packet = packet
        self.proc = None
        self.sch = None
        self.home_period = None
        self.u_decode = u_decode
        self.segments: list = []
        self.n_sd = 0              # usable self-decodable repetitions (Bernoulli shortcut)
        self.decoded = False
        self.n_reps = 0
        self.done = False
        self.cn_rounds = 0


class Bundle:
    """Repetitions sent back to back for one TB; evaluated by the gNB at its end."""

    __slots__ = ("tb", "kind", "reps", "identified", "unknown_grid", "first_ident")

    def __init__(self, tb, kind):
        self.tb = tb
        self.kind = kind            # initial | cn_retx | auto_retx | dyn_retx
        self.reps: list = []
        self.identified = 0
        self.unknown_grid = None
        self.first_ident = None


class UeRuntime:
    __slots__ = ("id", "spec", "profile", "sm", "schedules", "active", "procs", "pending",
                 "claimed", "reserved", "tx_log", "inflight", "c", "arrivals", "deadline",
                 "n_packets", "traffic_u", "cg_timer", "detect_thresholds")

    def __init__(self, spec, profile, grants, carriers, stream):
        self.id = spec.id
        self.spec = spec
        self.profile = profile
        self.sm = CgStateMachine(profile, [g.cfg for g in grants])
        self.schedules = {g.cfg.cg_id: CgSchedule(g.cfg, profile, carriers[g.cfg.carrier_id].tdd,
                                                  g.complementary_carrier)
                          for g in grants}
        self.cg_timer = {g.cfg.cg_id: (g.cfg.cg_timer if g.cfg.cg_timer is not None
                                       else 2 * g.cfg.period_p) * S for g in grants}
        self.refresh_active()
        self.procs = [HarqProcess(h) for h in range(spec.harq_pool)]
        self.pending: list = []
        self.claimed: set = set()
        self.reserved: set = set()
        self.tx_log: dict = {}
        self.inflight: list = []
        self.c = UeCounters()
        self.traffic_u = stream
        self.arrivals = iter(spec.traffic.arrivals(stream))
        self.deadline = (spec.deadline_slots * S if spec.deadline_slots is not None
                         else float("inf"))
        self.n_packets = 0
        link = spec.link
        t_id = link.p_detect_energy * link.p_id_decode
        self.detect_thresholds = (t_id, t_id + link.p_detect_energy * link.p_misdetect,
                                  link.p_detect_energy)

    def refresh_active(self):
        self.active = [self.schedules[i] for i in self.sm.active_ids()]


class Simulation:
    """One replication of a scenario."""

    def __init__(self, sc: Scenario, seed: Optional[int] = None, replication: int = 0):
        self.sc = sc
        self.seed = sc.seed if seed is None else seed
        self.rep = replication
        self.profile: FeatureProfile = sc.profile
        self.nru = self.profile.is_nru
        self.u = UniformStream(self.seed, (replication, 0))
        self.pool_u = UniformStream(self.seed, (replication, 2))
        self.lbt = (LbtChannel(sc.lbt, UniformStream(self.seed, (replication, 3)))
                    if sc.lbt is not None else None)
        self.policy = FeedbackPolicy(sc.gnb.feedback_delay_slots, sc.gnb.dfi_delay_slots,
                                     sc.gnb.nack_delay_slots, sc.enhancements.common_nack,
                                     sc.gnb.max_dynamic_retx)
        self.dfi = sc.dfi_enabled
        self.common_nack = sc.enhancements.common_nack
        self.margin = sc.processing_margin_symbols
        self.end = sc.duration_slots * S
        self.bler_model = sc.bler
        self.bernoulli = sc.bler.kind == "bernoulli"
        self.pool = sc.shared_pool if sc.enhancements.shared_pool else None
        self.pool_slots: dict = {}
        self.ues = {}
        for spec in sorted(sc.ues, key=lambda u: u.id):
            stream = UniformStream(self.seed, (replication, 1, spec.id))
            self.ues[spec.id] = UeRuntime(spec, self.profile, sc.grants_of(spec.id),
                                          sc.carriers, stream)
        self.heap: list = []
        self._seq = 0
        self.now = 0
        self.trace: Optional[list] = [] if sc.trace else None
        self._handlers = (self._on_control, self._on_feedback, self._on_pool, self._on_eval,
                          self._on_timer, self._on_arrival, self._on_tx)

    # ------------------------------------------------------------ plumbing

    def _push(self, t, order, ue_id, payload):
        self._seq += 1
        heapq.heappush(self.heap, (t, order, ue_id, self._seq, payload))

    def _log(self, event, ue_id, harq_id=None, info=""):
        if self.trace is not None:
            self.trace.append((self.now, event, ue_id, harq_id, info))

    def run(self) -> dict:
        for ue in self.ues.values():
            self._next_arrival(ue)
        for ev in self.sc.events:
            self._push(ev.slot * S, CONTROL, ev.ue_id, ev)
        for dg in self.sc.dynamic_grants:
            p = PlannedTx(None, "dynamic", None, None, None, None, dg.slot * S + dg.start_symbol,
                          dg.slot * S + dg.start_symbol + dg.length, dg.carrier, True,
                          dg.length, 0, None, dg.priority)
            self.ues[dg.ue_id].inflight.append(p)
            self._push(p.start, TX, dg.ue_id, (self.ues[dg.ue_id], p))
        heap = self.heap
        pop = heapq.heappop
        handlers = self._handlers
        last = 0
        while heap:
            t, order, _ue, _seq, payload = pop(heap)
            if t < last:
                raise RuntimeError(f"event at {t} processed after {last}")
            last = t
            self.now = t
            handlers[order](payload)
        return {uid: ue.c for uid, ue in self.ues.items()}

    # ------------------------------------------------------------ traffic

    def _next_arrival(self, ue):
        cap = self.sc.max_packets
        if cap is not None and ue.n_packets >= cap:
            return
        nxt = next(ue.arrivals, None)
        if nxt is None or nxt[0] >= self.end:
            return
        ue.n_packets += 1
        self._push(nxt[0], ARRIVAL, ue.id, (ue, nxt[0], nxt[1]))

    def _on_arrival(self, payload):
        ue, t, offset = payload
        c = ue.c
        c.offered += 1
        pkt = Packet(c.offered, ue.id, t, ue.spec.traffic.payload_bits, ue.deadline, offset)
        self._next_arrival(ue)
        self._admit(ue, pkt)

    def _admit(self, ue, pkt) -> bool:
        t = self.now
        if self.nru:
            proc = next((p for p in ue.procs if p.is_free(t)), None)
            if proc is None:
                ue.pending.append(pkt)
                return False
            reserved = ue.reserved
            choice = select_grant(ue.active, t, lambda s, n, i: (s.cfg.cg_id, s.global_index(n, i))
                                  not in reserved, self.margin)
        else:
            choice = select_grant(ue.active, t, lambda s, n, i: self._nr_free(ue, s, n, i),
                                  self.margin)
            proc = None
        if choice is None:
            ue.pending.append(pkt)
            return False
        sch = ue.schedules[choice.cg_id]
        if proc is None:
            proc = ue.procs[choice.period % len(ue.procs)]
        tb = Tb(pkt, self.u())
        tb.sch = sch
        tb.home_period = sch.period_of(t)
        pkt.waited = choice.waited
        self._flush(ue, proc)
        proc.start(tb, sch.cfg.cg_id)
        tb.proc = proc
        ue.c.initial_bundles += 1
        bundle = self._plan_cg_bundle(ue, tb, sch, choice.period, choice.start_index, "initial")
        self._set_cgt(ue, proc, tb, bundle)
        return True

    def _retry_pending(self, ue):
        while ue.pending:
            pkt = ue.pending[0]
            if not self._admit(ue, pkt):
                # _admit re-queued it at the back; restore FIFO order and stop
                ue.pending.pop()
                return
            ue.pending.pop(0)

    def _nr_free(self, ue, sch, n, i) -> bool:
        if (sch.cfg.cg_id, n) in ue.claimed:
            return False
        return ue.procs[n % len(ue.procs)].is_free(sch.period_start(n) + sch.template(n)[i][0])

    def _flush(self, ue, proc):
        """A new TB takes over ``proc``; whatever the old one still had queued is dropped."""
        old = proc.tb
        if old is not None and not old.done:
            old.done = True

    # ------------------------------------------------------------ planning

    def _plan_cg_bundle(self, ue, tb, sch, period, start_index, kind) -> Bundle:
        proc = tb.proc
        enforce = kind in ("initial", "cn_retx")
        if self.nru:
            reps = self._nru_reps(ue, sch, tb, period, start_index, enforce)
        else:
            reps = transmit_repetitions(sch, tb, period, start_index, proc.harq_id, proc.ndi,
                                        None, ue.spec.n_rbs, enforce)
        bundle = Bundle(tb, kind)
        c = ue.c
        c.reps_nominal += len(reps)
        valid = []
        for p in reps:
            if p.valid:
                valid.append(p)
            else:
                c.skipped_invalid += 1
        if not self.nru:
            ue.claimed.add((sch.cfg.cg_id, period))
            if len(ue.claimed) > 4096:
                cur = sch.period_of(self.now) - 1
                ue.claimed = {k for k in ue.claimed if k[1] >= cur}
        if (kind == "initial" and ue.spec.shared_pool_access and self.pool is not None
                and period == tb.home_period):
            valid = valid + self._plan_shared(ue, tb, sch, valid)
        end = 0
        for p in valid:
            p.bundle = bundle
            bundle.reps.append(p)
            ue.inflight.append(p)
            self._push(p.start, TX, ue.id, (ue, p))
            e = p.end if p.kind != "shared" else (p.start // S + 1) * S
            if e > end:
                end = e
        if valid:
            self._push(end, GNB_EVAL, ue.id, (ue, bundle))
        if self.nru and valid and sch.cfg.cg_retx_timer is not None:
            last = max(p.gidx for p in valid if p.kind == "cg")
            self._arm_retx_timer(ue, tb.proc, sch, last + sch.cfg.cg_retx_timer)
        return bundle

    def _nru_reps(self, ue, sch, tb, period, start_index, enforce):
        cg = sch.cfg.cg_id
        reserved = {g for (c, g) in ue.reserved if c == cg} if ue.reserved else None
        reps = transmit_repetitions(sch, tb, period, start_index, tb.proc.harq_id, tb.proc.ndi,
                                    reserved, ue.spec.n_rbs, enforce)
        for p in reps:
            ue.reserved.add((cg, p.gidx))
        if len(ue.reserved) > 4096:
            floor = sch.next_global_at_or_after(self.now, valid_only=False) or 0
            ue.reserved = {k for k in ue.reserved if k[1] >= floor - sch.n_tos}
        return reps

    def _plan_shared(self, ue, tb, sch, dedicated) -> list:
        """Repetitions the dedicated occasions of the arrival period could not carry."""
        pool = self.pool
        x = len(dedicated)
        busy = {s for p in dedicated for s in range(p.start // S, (p.end - 1) // S + 1)}
        tdd = self.sc.carriers[pool.carrier].tdd

        def slots():
            s = -(-self.now // S)
            while True:
                if s not in busy and tdd._slot_all_valid[s % tdd.period_slots]:
                    yield s
                s += 1

        fb = shared_pool_fallback(sch.cfg.K, x, pool.k_plus, slots(), self.pool_u)
        out = []
        for j, (slot, occ) in enumerate(fb.placements):
            rv = sch.cfg.rv_pattern.rv(x + j)
            p = PlannedTx(tb, "shared", sch.cfg.cg_id, None, x + j, None, slot * S, slot * S + S,
                          pool.carrier, True, S, rv, tb.proc.harq_id, sch.cfg.phy_priority,
                          ue.spec.n_rbs)
            p.pool_occ = occ
            out.append(p)
        ue.c.reps_nominal += len(out)
        return out

    def _set_cgt(self, ue, proc, tb, bundle):
        if not bundle.reps:
            return
        first = min(bundle.reps, key=lambda p: p.start)
        proc.cgt_deadline = first.end + ue.cg_timer[tb.sch.cfg.cg_id]
        if self.nru:
            self._push(proc.cgt_deadline, TIMER, ue.id, ("cgt", ue, proc, tb))

    def _arm_retx_timer(self, ue, proc, sch, g_expiry):
        proc.timer_token += 1
        n, i = sch.from_global(g_expiry)
        t = sch.occasion(n, i)[0]
        proc.retx_timer_deadline = t
        self._push(t, TIMER, ue.id, ("retx", ue, proc, proc.timer_token))

    # ---------------------------------------------------------- transmit

    def _on_tx(self, payload):
        ue, p = payload
        c = ue.c
        tb = p.tb
        now = self.now
        p.fired = True
        if len(ue.inflight) > 16:
            ue.inflight = [q for q in ue.inflight if q.end > now]
        if tb is None:                      # data-less dynamic grant
            if not p.cancelled:
                self._resolve(ue, p)
            return
        proc = tb.proc
        if p.cancelled:
            c.skipped_cancelled += 1
            return
        if tb.done or proc.tb is not tb:
            if proc.tb is tb and proc.state is HarqState.DONE_ACK:
                c.skipped_acked += 1
            else:
                c.skipped_flushed += 1
            return
        if proc.cgt_deadline is not None and now >= proc.cgt_deadline:
            c.skipped_timer += 1
            return
        if p.kind == "cg" and tb.sch not in ue.active:
            c.skipped_cancelled += 1
            return
        if len(ue.inflight) > 1:
            self._resolve(ue, p)
            if p.cancelled:
                c.skipped_cancelled += 1
                return
        n_symbols = p.n_symbols
        if self.lbt is not None and self.sc.carriers[p.carrier].unlicensed:
            dec = lbt_gate(self.lbt, p.carrier, p.start, p.n_symbols)
            if not dec.proceed:
                c.lbt_blocks += 1
                self._log("lbt_blocked", ue.id, p.harq_id, f"t={p.start}")
                return
            n_symbols -= dec.backoff
        link = ue.spec.link
        if link.p_transmit < 1.0 and self.u() >= link.p_transmit:
            c.skipped_not_transmitted += 1
            return
        c.reps_emitted += 1
        pkt = tb.packet
        if pkt.first_tx_time is None:
            pkt.first_tx_time = p.start
        bundle = p.bundle
        if bundle.kind == "initial" and p.period == tb.home_period and p.kind == "cg":
            pkt.reps_first_period += 1
        if self.trace is not None:
            self._log("tx", ue.id, p.harq_id, f"{p.kind} cg={p.cg_id} to={p.index} rv={p.rv}"
                      + (" uci" if p.uci is not None else ""))
        if self.common_nack:
            ue.tx_log[(p.carrier, p.start, p.end)] = tb
        if p.kind == "shared":
            slot = p.start // S
            lst = self.pool_slots.get(slot)
            if lst is None:
                lst = self.pool_slots[slot] = []
                self._push((slot + 1) * S, POOL, -1, slot)
            lst.append((ue, p, n_symbols))
            return
        self._receive(ue, p, n_symbols)

    def _resolve(self, ue, p):
        ps, pe, pc = p.start, p.end, p.carrier
        others = None
        for q in ue.inflight:
            if q.start < pe and ps < q.end and q is not p and not q.cancelled and q.carrier == pc:
                if others is None:
                    others = []
                others.append(q)
        if others is None:
            return
        grants = [Grant("DG" if q.kind == "dynamic" else "CG", q.start, q.end, q.priority,
                        q.cg_id, q.tb is not None,
                        q.bundle is not None and q.bundle.kind == "auto_retx", q)
                  for q in [p] + others]
        kept, cancelled = resolve_overlap(self.profile, grants)
        for g in cancelled:
            q = g.ref
            if q is p or not q.fired:
                q.cancelled = True
                self._log("cancelled", ue.id, q.harq_id, f"{q.kind} t={q.start}")

    # ----------------------------------------------------------- reception

    def _receive(self, ue, p, n_symbols):
        # same thresholds as gnb_model.detect, unrolled for speed
        u = self.u()
        t_id, t_md, pe = ue.detect_thresholds
        bundle = p.bundle
        if u < t_id:
            bundle.identified += 1
            if bundle.first_ident is None:
                bundle.first_ident = p.index
            tb = p.tb
            if self._rv_usable(p, bundle):
                self._combine(ue, tb, p, n_symbols)
        elif t_md <= u < pe:
            if bundle.unknown_grid is None:
                bundle.unknown_grid = (p.carrier, p.start, p.end)

    def _rv_usable(self, p, bundle) -> bool:
        """Whether the gNB labels this repetition with the RV it really carries."""
        sch = p.tb.sch
        if not sch.anchored or p.kind != "cg" or self.nru or self.sc.gnb.blind_rv_recovery:
            return True
        assumed = sch.cfg.rv_pattern.rv(p.index - bundle.first_ident)
        return assumed == p.rv

    def _combine(self, ue, tb, p, n_symbols):
        tb.n_reps += 1
        if p.rv in SELF_DECODABLE_RVS:
            tb.n_sd += 1
        if tb.decoded:
            return
        if self.bernoulli:
            err = self.bler_model.epsilon ** tb.n_sd if tb.n_sd else 1.0
        else:
            lens = p.seg_lengths
            if n_symbols != p.n_symbols:        # LBT backoff ate the head of the occasion
                lens = (n_symbols,)
            for L in lens:
                tb.segments.append(ReceivedSegment(L, p.n_rbs, p.rv, tb.n_reps))
            err = bler(self.bler_model, ue.spec.link.snr_gamma, tb.segments)
        if tb.u_decode >= err:
            tb.decoded = True
            pkt = tb.packet
            pkt.delivered_time = p.end
            c = ue.c
            c.delivered += 1
            lat = pkt.latency()
            c.latencies.append(lat)
            if lat <= pkt.deadline:
                c.delivered_in_deadline += 1
            if self.trace is not None:
                self._log("decoded", ue.id, p.harq_id, f"latency={lat:g}")

    def _on_pool(self, slot):
        entries = self.pool_slots.pop(slot)
        pool = self.pool
        u = self.pool_u
        background = []
        for j in range(pool.background_ues):
            if u() < pool.activity_q:
                background.append((None, j, min(int(u() * pool.k_plus), pool.k_plus - 1)))
        tokens = [(e[0], e, e[1].pool_occ) for e in entries] + background
        survivors = resolve_collisions(tokens, shared=True, occasion_of=lambda tk: tk[2])
        alive = {id(tk[1]) for tk in survivors if tk[0] is not None}
        for e in entries:
            ue, p, n_symbols = e
            ue.c.shared_tx += 1
            if id(e) in alive:
                self._receive(ue, p, n_symbols)
            else:
                ue.c.collisions += 1
                self._log("collision", ue.id, p.harq_id, f"slot={slot} occ={p.pool_occ}")

    # ------------------------------------------------------------ gNB side

    def _on_eval(self, payload):
        ue, bundle = payload
        tb = bundle.tb
        c = ue.c
        if bundle.identified:
            det = IDENTIFIED
        elif bundle.unknown_grid is not None:
            det = UNKNOWN
        else:
            det = DetectionOutcome.NOT_DETECTED
        if bundle.kind == "initial":
            pkt = tb.packet
            if pkt.reps_first_period:
                c.first_period_hits += 1
                c.reps_first_period += pkt.reps_first_period
            if pkt.first_tx_time is not None:
                d = pkt.first_tx_time - pkt.arrival_time + pkt.arrival_offset
                c.aligned_packets += 1
                c.alignment_sum += d
                c.alignment_sumsq += d * d
            if det is UNKNOWN:
                c.unknown_initial += 1
        elif bundle.kind == "cn_retx" and det is IDENTIFIED and tb.cn_rounds == 1:
            # only the first common-NACK round counts as a recovery
            c.common_nack_recovered += 1
            self._log("common_nack_recovered", ue.id, tb.proc.harq_id)
        if self.common_nack and det is not UNKNOWN:
            for p in bundle.reps:
                ue.tx_log.pop((p.carrier, p.start, p.end), None)
        if det is IDENTIFIED:
            wants = self.dfi if self.nru else not tb.decoded
        else:
            wants = det is UNKNOWN and self.common_nack
        if not wants:
            return
        outcome = ProcessOutcome(ue.id, tb.proc.harq_id, det, tb.decoded, bundle.unknown_grid)
        if not self.nru and det is IDENTIFIED and not tb.decoded \
                and tb.proc.attempts >= self.policy.max_dynamic_retx:
            msgs = []
            if self.common_nack:
                msgs = [m for m in emit_feedback(self.profile, [outcome], self.policy, self.now, S)
                        if isinstance(m, CommonNack)]
        else:
            msgs = emit_feedback(self.profile, [outcome], self.policy, self.now, S)
        for m in msgs:
            if isinstance(m, CgDfi):
                if not self.dfi:
                    continue
                self._push(m.deliver_at, FEEDBACK, ue.id, (m, ue, {m_h: tb for m_h in m.ack}))
            elif isinstance(m, RetxGrant):
                self._push(m.deliver_at, FEEDBACK, ue.id, (m, ue, tb))
            else:
                c.common_nack_sent += 1
                self._log("common_nack", -1, None, f"grid={m.grid}")
                self._push(m.deliver_at, FEEDBACK, -1, (m, None, None))

    # ------------------------------------------------------------ UE side

    def _on_feedback(self, payload):
        msg, ue, ref = payload
        if isinstance(msg, RetxGrant):
            tb = ref
            proc = tb.proc
            if proc.tb is not tb or tb.done:
                return
            if nr_feedback_step(proc, self.now, msg.dci) == "dynamic_retx":
                self._dynamic_retx(ue, proc, tb)
            elif proc.state is HarqState.DONE_ACK:
                tb.done = True
        elif isinstance(msg, CgDfi):
            for h, ack in sorted(msg.ack.items()):
                tb = ref[h]
                proc = ue.procs[h]
                if proc.tb is not tb or tb.done:
                    continue
                step = nru_feedback_step(proc, self.now, ack)
                self._log("dfi_ack" if ack else "dfi_nack", ue.id, h)
                self._nru_step(ue, proc, tb, step)
        else:
            self._on_common_nack(msg)

    def _nru_step(self, ue, proc, tb, step):
        if step == "ack":
            tb.done = True
            proc.timer_token += 1
            self._log("done_ack", ue.id, proc.harq_id)
            self._retry_pending(ue)
        elif step == "fail":
            tb.done = True
            proc.timer_token += 1
            self._log("done_failed", ue.id, proc.harq_id)
            self._retry_pending(ue)
        elif step == "retx":
            self._nru_retx(ue, proc, tb)

    def _on_timer(self, payload):
        kind, ue = payload[0], payload[1]
        if kind == "retx":
            proc, token = payload[2], payload[3]
            if token != proc.timer_token or proc.done or proc.tb is None or proc.tb.done:
                return
            self._log("retx_timer_expiry", ue.id, proc.harq_id)
            self._nru_step(ue, proc, proc.tb, nru_feedback_step(proc, self.now))
        else:                                           # configuredGrantTimer
            proc, tb = payload[2], payload[3]
            if proc.tb is not tb or tb.done:
                return
            self._nru_step(ue, proc, tb, nru_feedback_step(proc, self.now))

    def _nru_retx(self, ue, proc, tb, kind="auto_retx"):
        sch = tb.sch
        cg = sch.cfg.cg_id
        g = sch.next_global_at_or_after(self.now)
        while g is not None and (cg, g) in ue.reserved:
            n, i = sch.from_global(g)
            g = sch.next_global_at_or_after(sch.occasion(n, i)[0] + 1)
        if g is None:
            return
        proc.attempts += 1
        proc.state = HarqState.AWAITING_FEEDBACK
        if kind == "auto_retx":
            ue.c.autonomous_retx += 1
        n, i = sch.from_global(g)
        self._plan_cg_bundle(ue, tb, sch, n, i, kind)

    def _dynamic_retx(self, ue, proc, tb):
        cfg = tb.sch.cfg
        tdd = self.sc.carriers[cfg.carrier_id].tdd
        slot = self.now // S + 1
        for _ in range(64 * tdd.period_slots):
            if all(tdd.valid_abs(slot * S + cfg.start_symbol + j) for j in range(cfg.length)):
                break
            slot += 1
        start = slot * S + cfg.start_symbol
        p = PlannedTx(tb, "dynamic", cfg.cg_id, None, 0, None, start, start + cfg.length,
                      cfg.carrier_id, True, cfg.length, 0, proc.harq_id, cfg.phy_priority,
                      ue.spec.n_rbs)
        bundle = Bundle(tb, "dyn_retx")
        p.bundle = bundle
        bundle.reps.append(p)
        proc.attempts += 1
        proc.state = HarqState.AWAITING_FEEDBACK
        proc.cgt_deadline = p.end + ue.cg_timer[cfg.cg_id]
        ue.c.dynamic_retx += 1
        ue.c.reps_nominal += 1
        ue.inflight.append(p)
        self._push(p.start, TX, ue.id, (ue, p))
        self._push(p.end, GNB_EVAL, ue.id, (ue, bundle))
        self._log("retx_grant", ue.id, proc.harq_id, f"slot={slot}")

    def _on_common_nack(self, msg: CommonNack):
        for uid in sorted(self.ues):
            ue = self.ues[uid]
            tb = handle_common_nack(ue.tx_log, msg.grid)
            if tb is None:
                continue
            del ue.tx_log[msg.grid]
            if self.u() >= ue.spec.link.p_common_nack_decode:
                self._log("common_nack_missed", uid, tb.proc.harq_id)
                continue
            proc = tb.proc
            if proc.tb is not tb or tb.done:
                continue
            sch = tb.sch
            if self.nru:
                tb.cn_rounds += 1
                self._nru_retx(ue, proc, tb, "cn_retx")
                continue
            choice = select_grant([sch], self.now,
                                  lambda s, n, i: (s.cfg.cg_id, n) not in ue.claimed, self.margin)
            if choice is None:
                continue
            tb.cn_rounds += 1
            self._log("common_nack_retx", uid, proc.harq_id, f"period={choice.period}")
            bundle = self._plan_cg_bundle(ue, tb, sch, choice.period, choice.start_index,
                                          "cn_retx")
            if bundle.reps:
                proc.cgt_deadline = max(proc.cgt_deadline or 0,
                                        bundle.reps[0].end + ue.cg_timer[sch.cfg.cg_id])

    # ------------------------------------------------------------- control

    def _on_control(self, ev):
        ue = self.ues[ev.ue_id]
        if ev.kind == "activate":
            cg = ue.sm.on_activation(ev.dci)
            self._log("activate" if cg is not None else "activation_ignored", ue.id, None,
                      f"cg={cg}")
        else:
            ok = ue.sm.on_release(ev.dci, ev.cg_ids)
            self._log("release" if ok else "release_ignored", ue.id, None, f"cgs={list(ev.cg_ids)}")
        if ue.sm.confirm():
            self._log("mac_ce_confirm", ue.id)
        ue.refresh_active()
        if ev.kind == "activate":
            self._retry_pending(ue)


# ------------------------------------------------------------------ runners

def _run_one(args):
    sc, seed, r = args
    sim = Simulation(sc, seed, r)
    counters = sim.run()
    return r, counters, sim.trace


def run_scenario(sc: Scenario, seed: Optional[int] = None, replication: int = 0) -> MetricsReport:
    """Run a single replication and return its report."""
    r, counters, trace = _run_one((sc, sc.seed if seed is None else seed, replication))
    report = MetricsReport(sc.numerology, trace=trace or [])
    for uid in sorted(counters):
        report.results.append(UeResult(r, uid, counters[uid]))
    return report


def run_replications(sc: Scenario, replications: Optional[int] = None,
                     seed: Optional[int] = None, workers: int = 1) -> MetricsReport:
    """Run independent replications and reduce them in replication order."""
    R = sc.replications if replications is None else replications
    if R < 1:
        raise ValueError("at least one replication is required")
    seed = sc.seed if seed is None else seed
    jobs = [(sc, seed, r) for r in range(R)]
    if workers > 1 and R > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            done = list(ex.map(_run_one, jobs))
    else:
        done = [_run_one(j) for j in jobs]
    done.sort(key=lambda x: x[0])
    report = MetricsReport(sc.numerology, trace=done[0][2] or [])
    for r, counters, _ in done:
        for uid in sorted(counters):
            report.results.append(UeResult(r, uid, counters[uid]))
    return report
