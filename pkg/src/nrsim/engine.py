"""Deterministic discrete-event core: integer-ns clock, (ts, seq)-ordered
event queue, named counter-based RNG streams, traffic generation, statistics,
and the per-BWP wiring of PHY timeline, scheduler, and UL MAC handshake.
"""

from __future__ import annotations

import hashlib
import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .bwp import BwpConfig, BwpDeployment, route
from .frame import FrameStructure, address_of, slot_start_time
from .mac_ul import Bsr, GnbUeUlState, GrantTooSmall, RlcBuffer, Segment, UeMacUl
from .phy import ChannelParams, LinkState, McsTable, compute_tbs, slot_timeline
from .sched import Dci, SchedUeInfo, Scheduler

REMOTE_NODE = "remote"


class SimulationError(RuntimeError):
    pass


# -- events --------------------------------------------------------------


@dataclass(frozen=True)
class Event:
    ts: int
    seq: int
    kind: str
    fn: object
    args: tuple

    def __lt__(self, other):  # heapq ordering: (ts, seq) lexicographic
        return (self.ts, self.seq) < (other.ts, other.seq)


class EventQueue:
    def __init__(self):
        self._heap: list[Event] = []
        self._seq = 0
        self.now = 0

    def schedule(self, ts: int, kind: str, fn, *args) -> None:
        if ts < self.now:
            raise SimulationError(f"causality: scheduling {kind} at {ts} < now {self.now}")
        self._seq += 1
        heapq.heappush(self._heap, Event(ts, self._seq, kind, fn, args))

    def run_until(self, stop_ns: int) -> None:
        while self._heap and self._heap[0].ts <= stop_ns:
            ev = heapq.heappop(self._heap)
            self.now = ev.ts
            ev.fn(*ev.args)


class RngStreams:
    """One counter-based stream per (purpose, entity); adding a stream never
    perturbs the draws of another."""

    def __init__(self, seed: int):
        self.seed = seed
        self._streams: dict[tuple[str, str], np.random.Generator] = {}

    def stream(self, purpose: str, entity) -> np.random.Generator:
        key = (purpose, str(entity))
        gen = self._streams.get(key)
        if gen is None:
            digest = hashlib.sha256(f"{purpose}:{entity}".encode()).digest()
            words = [int.from_bytes(digest[i : i + 8], "little") for i in range(0, 32, 8)]
            ss = np.random.SeedSequence(entropy=[self.seed & (2**64 - 1), *words])
            gen = np.random.Generator(np.random.Philox(ss))
            self._streams[key] = gen
        return gen


# -- scenario building blocks --------------------------------------------


@dataclass(frozen=True)
class UePlacement:
    ue_id: str
    distance_m: float
    beam_id: int = 0


@dataclass(frozen=True)
class CoreLink:
    """Fixed-delay core/backhaul pipe between the gNB and the remote host."""

    latency_ns: int = 0
    capacity_bps: int = 10**10

    def transit_ns(self, size_bytes: int) -> int:
        return self.latency_ns + (size_bytes * 8 * 10**9) // self.capacity_bps


@dataclass(frozen=True)
class FlowSpec:
    flow_id: str
    direction: str  # ul | dl
    qos_id: str
    src: str
    dst: str
    kind: str = "cbr"  # cbr | onoff
    rate_bps: int = 0
    pkt_bytes: int = 0
    burst_count: int = 1
    gap_ns: int = 0
    start_ns: int = 0
    stop_ns: int = 0

    def __post_init__(self):
        if self.direction not in ("ul", "dl"):
            raise ValueError(f"flow {self.flow_id}: bad direction {self.direction!r}")
        if self.kind not in ("cbr", "onoff"):
            raise ValueError(f"flow {self.flow_id}: bad generator {self.kind!r}")
        if self.pkt_bytes <= 0:
            raise ValueError(f"flow {self.flow_id}: pkt_bytes must be > 0")
        if self.kind == "cbr" and self.rate_bps <= 0:
            raise ValueError(f"flow {self.flow_id}: cbr rate must be > 0")
        if self.kind == "onoff" and (self.gap_ns <= 0 or self.burst_count <= 0):
            raise ValueError(f"flow {self.flow_id}: onoff needs burst > 0 and gap > 0")

    @property
    def ue_node(self) -> str:
        return self.src if self.direction == "ul" else self.dst

    def arrival_offset_ns(self, k: int) -> int:
        """Timestamp offset of the k-th arrival event after start."""
        if self.kind == "cbr":
            return (k * self.pkt_bytes * 8 * 10**9) // self.rate_bps
        return k * self.gap_ns


def nearest_rank(sorted_values: list[int], pct: float) -> int:
    """Nearest-rank percentile on an ascending list."""
    if not sorted_values:
        raise ValueError("empty sample")
    rank = max(1, math.ceil(pct / 100.0 * len(sorted_values)))
    return sorted_values[rank - 1]


def geometric_mean(values: list[float]) -> float:
    if not values:
        raise ValueError("empty sample")
    return math.exp(sum(math.log(v) for v in values) / len(values))


@dataclass
class FlowResult:
    spec: FlowSpec
    generated_bytes: int = 0
    generated_packets: int = 0
    delivered_bytes: int = 0
    delivered_packets: int = 0
    dropped_bytes: int = 0
    buffered_bytes: int = 0
    in_flight_bytes: int = 0
    sr_count: int = 0
    delays_ns: list[int] = field(default_factory=list)

    @property
    def delay_mean_ns(self) -> int:
        return round(sum(self.delays_ns) / len(self.delays_ns)) if self.delays_ns else 0

    @property
    def delay_p80_ns(self) -> int:
        return nearest_rank(sorted(self.delays_ns), 80.0) if self.delays_ns else 0

    @property
    def delay_min_ns(self) -> int:
        return min(self.delays_ns) if self.delays_ns else 0

    @property
    def delay_max_ns(self) -> int:
        return max(self.delays_ns) if self.delays_ns else 0

    def goodput_bps(self, scenario_stop_ns: int) -> float:
        stop = min(self.spec.stop_ns or scenario_stop_ns, scenario_stop_ns)
        window_s = max(stop - self.spec.start_ns, 1) * 1e-9
        return self.delivered_bytes * 8 / window_s


@dataclass
class RunResult:
    stop_ns: int
    flows: dict[str, FlowResult]

    def class_mean_delays(self) -> dict[str, float]:
        """Geometric mean over the flows of each class, of per-flow mean
        one-way delay (ns). Flows that delivered nothing are excluded."""
        groups: dict[str, list[float]] = {}
        for fr in self.flows.values():
            if fr.delays_ns:
                groups.setdefault(fr.spec.qos_id, []).append(float(fr.delay_mean_ns))
        return {qos: geometric_mean(vals) for qos, vals in sorted(groups.items())}

    def empty_flows(self) -> list[str]:
        return sorted(f for f, fr in self.flows.items() if not fr.delays_ns)

    def check_conservation(self) -> None:
        for fid, fr in sorted(self.flows.items()):
            balance = (
                fr.delivered_bytes + fr.buffered_bytes + fr.in_flight_bytes + fr.dropped_bytes
            )
            if balance != fr.generated_bytes:
                raise SimulationError(
                    f"byte conservation broken for {fid}: generated {fr.generated_bytes} "
                    f"!= delivered {fr.delivered_bytes} + buffered {fr.buffered_bytes} "
                    f"+ in-flight {fr.in_flight_bytes} + dropped {fr.dropped_bytes}"
                )


# -- per-BWP runtime ------------------------------------------------------


@dataclass
class _Packet:
    packet_id: int
    flow_id: str
    size_bytes: int
    gen_ts: int
    received_bytes: int = 0


@dataclass
class _MacPdu:
    dci: Dci
    segments: list[Segment]
    data_bytes: int
    bsr_bytes: int | None  # None for DL blocks
    build_ts: int


class _UeCtx:
    """Everything one UE owns inside one BWP."""

    def __init__(self, ue_id: str, beam_id: int, link: LinkState, inst_rate_bps: float):
        self.ue_id = ue_id
        self.beam_id = beam_id
        self.link = link
        self.inst_rate_bps = inst_rate_bps
        self.mac_ul = UeMacUl(ue_id)
        self.gnb_ul = GnbUeUlState(ue_id)
        self.dl_queue = RlcBuffer()
        self.dl_outstanding: list[tuple[int, int]] = []  # (target slot, tbs)
        self.harq_tx: dict[tuple[str, int], _MacPdu] = {}

    def dl_demand(self) -> int:
        granted = sum(tbs for _, tbs in self.dl_outstanding)
        return max(0, self.dl_queue.occupancy_bytes - granted)


class _BwpRuntime:
    def __init__(self, sim: "Simulation", cfg: BwpConfig, table: McsTable):
        self.sim = sim
        self.cfg = cfg
        self.fs: FrameStructure = cfg.frame_structure()
        self.table = table
        self.scheduler = Scheduler(
            self.fs,
            cfg.timing,
            cfg.policy,
            table,
            harq_processes=cfg.harq_processes,
            max_harq_retx=cfg.max_harq_retx,
        )
        self.decode_ns = cfg.timing.decode_latency_ns(self.fs)
        self.ues: dict[str, _UeCtx] = {}

    def add_ue(self, placement: UePlacement, channel: ChannelParams) -> _UeCtx:
        ctx = self.ues.get(placement.ue_id)
        if ctx is None:
            link = LinkState.from_channel(
                self.cfg.tx_power_dbm, placement.distance_m, channel
            )
            inst = (
                compute_tbs(link.mcs, 12, self.fs.prb_count, self.table)
                * 8
                / (self.fs.slot_duration_ns * 1e-9)
            )
            ctx = _UeCtx(placement.ue_id, placement.beam_id, link, inst)
            self.ues[placement.ue_id] = ctx
        return ctx

    # -- slot cycle ----------------------------------------------------

    def start_slot(self, idx: int) -> None:
        sim = self.sim
        fs = self.fs
        addr = address_of(fs, idx)
        ts = slot_start_time(fs, addr)
        sim.trace.row(
            ts, "SLOT_START", bwp_id=self.cfg.bwp_id, addr=addr, extra=f"mu={fs.mu}"
        )

        self._mac_indication(idx)

        alloc, carried_ul = self.scheduler.pop_slot(idx)
        for dci in carried_ul:
            target_addr = address_of(fs, dci.target_slot)
            sim.trace.row(
                ts,
                "DCI_UL",
                bwp_id=self.cfg.bwp_id,
                ue_id=dci.ue_id,
                addr=target_addr,
                symbol_start=dci.start_symbol,
                num_symbols=dci.num_symbols,
                rbg_bitmap_hex=self._hex(dci.rbg_bitmap),
                direction="ul",
                mcs=dci.mcs,
                tbs_bytes=dci.tbs_bytes,
                harq_process=dci.harq_process,
                is_retx=dci.is_retx,
                extra=(
                    f"decision={dci.decision_slot};pdcch={dci.pdcch_slot}"
                    f";d={self.cfg.timing.l1l2_data_latency};k2={dci.k2_slots}"
                ),
            )
            self.ues[dci.ue_id].mac_ul.on_grant_received()

        timeline = slot_timeline(fs, ts, alloc, self.decode_ns)
        for tti in timeline.ttis:
            entry = tti.entry
            if entry.kind != "data":
                continue
            dci = entry.dci
            if dci.direction == "dl":
                sim.trace.row(
                    ts,
                    "DCI_DL",
                    bwp_id=self.cfg.bwp_id,
                    ue_id=dci.ue_id,
                    addr=addr,
                    symbol_start=dci.start_symbol,
                    num_symbols=dci.num_symbols,
                    rbg_bitmap_hex=self._hex(dci.rbg_bitmap),
                    direction="dl",
                    mcs=dci.mcs,
                    tbs_bytes=dci.tbs_bytes,
                    harq_process=dci.harq_process,
                    is_retx=dci.is_retx,
                    extra=(
                        f"decision={dci.decision_slot};pdcch={dci.pdcch_slot}"
                        f";d={self.cfg.timing.l1l2_data_latency}"
                    ),
                )
            holder = {"pdu": None}
            sim.queue.schedule(tti.start_ns, "tx_start", self._tx_start, tti, holder)
            sim.queue.schedule(tti.end_ns, "tx_end", self._tx_end, tti, holder)

        end_ts = timeline.end_ns
        sim.queue.schedule(end_ts, "slot_end", self._end_slot, idx, addr)
        sim.queue.schedule(end_ts, "slot_start", self.start_slot, idx + 1)

    def _end_slot(self, idx: int, addr) -> None:
        self.sim.trace.row(
            self.sim.queue.now, "SLOT_END", bwp_id=self.cfg.bwp_id, addr=addr
        )

    def _hex(self, bitmap: int) -> str:
        width = max(1, -(-self.fs.rbg_count // 4))
        return f"{bitmap:0{width}x}"

    # -- MAC side --------------------------------------------------------

    def _mac_indication(self, now_idx: int) -> None:
        infos = []
        for ue_id in sorted(self.ues):
            ctx = self.ues[ue_id]
            infos.append(
                SchedUeInfo(
                    ue_id=ue_id,
                    beam_id=ctx.beam_id,
                    buffered_bytes_dl=ctx.dl_demand(),
                    buffered_bytes_ul=ctx.gnb_ul.demand_bytes,
                    cqi=ctx.link.cqi,
                    mcs=ctx.link.mcs,
                    inst_rate_bps=ctx.inst_rate_bps,
                    ul_blind=ctx.gnb_ul.wants_blind(),
                    min_ul_pdcch_slot=ctx.gnb_ul.min_pdcch_slot
                    if ctx.gnb_ul.wants_blind()
                    else 0,
                )
            )
        res = self.scheduler.schedule_slot(now_idx, infos)
        for dci in res.new_ul:
            self.ues[dci.ue_id].gnb_ul.on_grant_issued(dci.target_slot, dci.tbs_bytes)
        for dci in res.new_dl:
            self.ues[dci.ue_id].dl_outstanding.append((dci.target_slot, dci.tbs_bytes))
        for dci in res.retx_dl + res.retx_ul:
            self.sim.trace.row(
                self.sim.queue.now,
                "HARQ_RETX",
                bwp_id=self.cfg.bwp_id,
                ue_id=dci.ue_id,
                addr=address_of(self.fs, dci.target_slot),
                direction=dci.direction,
                harq_process=dci.harq_process,
                is_retx=True,
            )

    # -- data plane --------------------------------------------------------

    def _tx_start(self, tti, holder) -> None:
        dci = tti.entry.dci
        ctx = self.ues[dci.ue_id]
        sim = self.sim
        key = (dci.direction, dci.harq_process)
        extra = ""
        if dci.is_retx:
            pdu = ctx.harq_tx.get(key)
            if pdu is None:
                raise SimulationError(f"retx without a stored block for {key}")
            extra = f"data={pdu.data_bytes}"
            if pdu.bsr_bytes is not None:
                extra += f";bsr={pdu.bsr_bytes}"
        elif dci.direction == "ul":
            try:
                content = ctx.mac_ul.build_pusch(dci.tbs_bytes)
            except GrantTooSmall:
                # wasted grant: nothing goes over the air, free the process
                self.scheduler.on_ack(dci)
                sim.trace.row(
                    sim.queue.now,
                    "TX_START",
                    bwp_id=self.cfg.bwp_id,
                    ue_id=dci.ue_id,
                    addr=address_of(self.fs, dci.target_slot),
                    direction="ul",
                    tbs_bytes=dci.tbs_bytes,
                    extra="wasted=1",
                )
                return
            pdu = _MacPdu(
                dci, content.segments, content.data_bytes, content.bsr.reported_bytes,
                sim.queue.now,
            )
            ctx.harq_tx[key] = pdu
            extra = f"data={pdu.data_bytes};bsr={pdu.bsr_bytes}"
        else:
            granted = min(dci.tbs_bytes, ctx.dl_queue.occupancy_bytes)
            segments = ctx.dl_queue.dequeue(granted)
            pdu = _MacPdu(dci, segments, sum(s.bytes for s in segments), None, sim.queue.now)
            ctx.harq_tx[key] = pdu
            for i, (slot, tbs) in enumerate(ctx.dl_outstanding):
                if slot == dci.target_slot and tbs == dci.tbs_bytes:
                    del ctx.dl_outstanding[i]
                    break
            extra = f"data={pdu.data_bytes}"
        holder["pdu"] = ctx.harq_tx[key]
        sim.trace.row(
            sim.queue.now,
            "TX_START",
            bwp_id=self.cfg.bwp_id,
            ue_id=dci.ue_id,
            addr=address_of(self.fs, dci.target_slot),
            symbol_start=dci.start_symbol,
            num_symbols=dci.num_symbols,
            rbg_bitmap_hex=self._hex(dci.rbg_bitmap),
            direction=dci.direction,
            mcs=dci.mcs,
            tbs_bytes=dci.tbs_bytes,
            harq_process=dci.harq_process,
            is_retx=dci.is_retx,
            extra=extra,
        )

    def _tx_end(self, tti, holder) -> None:
        pdu = holder["pdu"]
        if pdu is None:
            return  # wasted grant
        dci = tti.entry.dci
        sim = self.sim
        sim.trace.row(
            sim.queue.now,
            "TX_END",
            bwp_id=self.cfg.bwp_id,
            ue_id=dci.ue_id,
            addr=address_of(self.fs, dci.target_slot),
            symbol_start=dci.start_symbol,
            num_symbols=dci.num_symbols,
            direction=dci.direction,
            harq_process=dci.harq_process,
        )
        sim.queue.schedule(tti.mac_rx_ns, "rx", self._rx_mac, dci, pdu)

    def _rx_mac(self, dci: Dci, pdu: _MacPdu) -> None:
        sim = self.sim
        ctx = self.ues[dci.ue_id]
        rng = sim.rng.stream("tb_error", dci.ue_id)
        err = self.cfg.error_model.tb_error(dci.mcs, ctx.link.sinr_db, rng)
        if err:
            sim.trace.row(
                sim.queue.now,
                "HARQ_NACK",
                bwp_id=self.cfg.bwp_id,
                ue_id=dci.ue_id,
                direction=dci.direction,
                harq_process=dci.harq_process,
            )
            if not self.scheduler.on_nack(dci):
                # retransmission cap exhausted: block dropped
                ctx.harq_tx.pop((dci.direction, dci.harq_process), None)
                for seg in pdu.segments:
                    sim.on_bytes_dropped(seg)
            return
        self.scheduler.on_ack(dci)
        ctx.harq_tx.pop((dci.direction, dci.harq_process), None)
        sim.trace.row(
            sim.queue.now,
            "RX_MAC",
            bwp_id=self.cfg.bwp_id,
            ue_id=dci.ue_id,
            direction=dci.direction,
            mcs=dci.mcs,
            tbs_bytes=dci.tbs_bytes,
            harq_process=dci.harq_process,
            is_retx=dci.is_retx,
            extra=f"data={pdu.data_bytes}",
        )
        if dci.direction == "ul":
            # the BSR reflects the buffer at the original build; key the
            # bookkeeping to the first-transmission slot, not the retx one
            ctx.gnb_ul.on_bsr(Bsr(pdu.bsr_bytes), pdu.dci.target_slot)
            sim.trace.row(
                sim.queue.now,
                "BSR",
                bwp_id=self.cfg.bwp_id,
                ue_id=dci.ue_id,
                direction="ul",
                tbs_bytes=pdu.bsr_bytes,
                extra=f"pusch_slot={pdu.dci.target_slot}",
            )
            for seg in pdu.segments:
                sim.on_segment_at_gnb(seg)
        else:
            for seg in pdu.segments:
                sim.on_segment_at_ue(seg)

    # -- UL control -------------------------------------------------------

    def on_ul_arrival(self, ctx: _UeCtx, packet: _Packet, ts: int) -> None:
        need_sr = ctx.mac_ul.on_ul_data_arrival(
            packet.packet_id, packet.flow_id, packet.size_bytes, ts
        )
        if need_sr:
            slot_ns = self.fs.slot_duration_ns
            pucch_off = self.fs.symbol_offset_ns(13)
            idx = ts // slot_ns
            if idx * slot_ns + pucch_off <= ts:
                idx += 1
            self.sim.queue.schedule(
                idx * slot_ns + pucch_off, "sr", self._send_sr, ctx, idx
            )

    def _send_sr(self, ctx: _UeCtx, pucch_idx: int) -> None:
        self.sim.trace.row(
            self.sim.queue.now,
            "SR",
            bwp_id=self.cfg.bwp_id,
            ue_id=ctx.ue_id,
            addr=address_of(self.fs, pucch_idx),
            symbol_start=13,
            direction="ul",
        )
        ctx.gnb_ul.on_sr(pucch_idx, self.cfg.timing.l1l2_ctrl_latency)


# -- the simulation -------------------------------------------------------


class Simulation:
    """One deterministic run over a validated deployment."""

    def __init__(
        self,
        *,
        seed: int,
        stop_ns: int,
        deployment: BwpDeployment,
        ues: list[UePlacement],
        flows: list[FlowSpec],
        channel: ChannelParams,
        core: CoreLink,
        trace,
        mcs_tables: dict[str, McsTable] | None = None,
    ):
        self.seed = seed
        self.stop_ns = stop_ns
        self.deployment = deployment
        self.channel = channel
        self.core = core
        self.trace = trace
        self.queue = EventQueue()
        self.rng = RngStreams(seed)
        self.bwps: dict[str, _BwpRuntime] = {}
        for part in deployment.parts:
            table = (mcs_tables or {}).get(part.bwp_id) or McsTable.default()
            self.bwps[part.bwp_id] = _BwpRuntime(self, part, table)
        placements = {u.ue_id: u for u in ues}
        self.flows: dict[str, FlowResult] = {}
        self._flow_ctx: dict[str, tuple[_BwpRuntime, _UeCtx]] = {}
        for spec in flows:
            bwp_id = route(deployment, spec.qos_id)
            rt = self.bwps[bwp_id]
            ue_node = spec.ue_node
            if ue_node not in placements:
                raise SimulationError(f"flow {spec.flow_id} references unknown UE {ue_node}")
            ctx = rt.add_ue(placements[ue_node], channel)
            self.flows[spec.flow_id] = FlowResult(spec=spec)
            self._flow_ctx[spec.flow_id] = (rt, ctx)
        self._packets: dict[int, _Packet] = {}
        self._next_packet_id = 1
        self._core_transit: dict[str, int] = {}

    # -- traffic ----------------------------------------------------------

    def _gen(self, spec: FlowSpec, k: int) -> None:
        ts = spec.start_ns + spec.arrival_offset_ns(k)
        stop = min(spec.stop_ns or self.stop_ns, self.stop_ns)
        if ts >= stop:
            return
        count = spec.burst_count if spec.kind == "onoff" else 1
        rt, ctx = self._flow_ctx[spec.flow_id]
        for _ in range(count):
            pkt = _Packet(self._next_packet_id, spec.flow_id, spec.pkt_bytes, ts)
            self._next_packet_id += 1
            self._packets[pkt.packet_id] = pkt
            fr = self.flows[spec.flow_id]
            fr.generated_bytes += pkt.size_bytes
            fr.generated_packets += 1
            self.trace.row(
                ts,
                "PKT_ARRIVAL",
                bwp_id=rt.cfg.bwp_id,
                ue_id=ctx.ue_id,
                flow_id=spec.flow_id,
                direction=spec.direction,
                tbs_bytes=pkt.size_bytes,
                extra=f"pkt={pkt.packet_id}",
            )
            if spec.direction == "ul":
                rt.on_ul_arrival(ctx, pkt, ts)
            else:
                self._core_transit[spec.flow_id] = (
                    self._core_transit.get(spec.flow_id, 0) + pkt.size_bytes
                )
                self.queue.schedule(
                    ts + self.core.transit_ns(pkt.size_bytes),
                    "dl_enqueue",
                    self._dl_enqueue,
                    rt,
                    ctx,
                    pkt,
                )
        next_ts = spec.start_ns + spec.arrival_offset_ns(k + 1)
        if next_ts < stop:
            self.queue.schedule(next_ts, "gen", self._gen, spec, k + 1)

    def _dl_enqueue(self, rt: _BwpRuntime, ctx: _UeCtx, pkt: _Packet) -> None:
        self._core_transit[pkt.flow_id] -= pkt.size_bytes
        ctx.dl_queue.enqueue(pkt.packet_id, pkt.flow_id, pkt.size_bytes, self.queue.now)

    # -- delivery ----------------------------------------------------------

    def on_segment_at_gnb(self, seg: Segment) -> None:
        """UL data decoded at the gNB; completed packets cross the core."""
        pkt = self._packets[seg.packet_id]
        pkt.received_bytes += seg.bytes
        if pkt.received_bytes >= pkt.size_bytes:
            self._core_transit[pkt.flow_id] = (
                self._core_transit.get(pkt.flow_id, 0) + pkt.size_bytes
            )
            self.queue.schedule(
                self.queue.now + self.core.transit_ns(pkt.size_bytes),
                "deliver",
                self._deliver,
                pkt,
                True,
            )

    def on_segment_at_ue(self, seg: Segment) -> None:
        pkt = self._packets[seg.packet_id]
        pkt.received_bytes += seg.bytes
        if pkt.received_bytes >= pkt.size_bytes:
            self._deliver(pkt, False)

    def _deliver(self, pkt: _Packet, crossed_core: bool) -> None:
        if crossed_core:
            self._core_transit[pkt.flow_id] -= pkt.size_bytes
        fr = self.flows[pkt.flow_id]
        delay = self.queue.now - pkt.gen_ts
        fr.delivered_bytes += pkt.size_bytes
        fr.delivered_packets += 1
        fr.delays_ns.append(delay)
        rt, ctx = self._flow_ctx[pkt.flow_id]
        self.trace.row(
            self.queue.now,
            "PKT_DELIVERED",
            bwp_id=rt.cfg.bwp_id,
            ue_id=ctx.ue_id,
            flow_id=pkt.flow_id,
            direction=fr.spec.direction,
            tbs_bytes=pkt.size_bytes,
            extra=f"pkt={pkt.packet_id};delay={delay}",
        )

    def on_bytes_dropped(self, seg: Segment) -> None:
        self.flows[seg.flow_id].dropped_bytes += seg.bytes

    # -- run ----------------------------------------------------------------

    def run(self) -> RunResult:
        for rt in self.bwps.values():
            self.queue.schedule(0, "slot_start", rt.start_slot, 0)
        for spec in sorted(self.flows, key=str):
            fspec = self.flows[spec].spec
            if fspec.start_ns < self.stop_ns:
                self.queue.schedule(fspec.start_ns, "gen", self._gen, fspec, 0)
        self.queue.run_until(self.stop_ns)
        self._finalize()
        result = RunResult(stop_ns=self.stop_ns, flows=self.flows)
        result.check_conservation()
        return result

    def _finalize(self) -> None:
        for fid, fr in self.flows.items():
            rt, ctx = self._flow_ctx[fid]
            buffered = ctx.mac_ul.buffer.per_flow_remaining().get(fid, 0)
            buffered += ctx.dl_queue.per_flow_remaining().get(fid, 0)
            fr.buffered_bytes = buffered
            fr.sr_count = ctx.mac_ul.sr_count
            in_flight = self._core_transit.get(fid, 0)
            for pdu in ctx.harq_tx.values():
                for seg in pdu.segments:
                    if seg.flow_id == fid:
                        in_flight += seg.bytes
            # bytes decoded from completed segments of packets still missing
            # a later segment
            for pkt in self._packets.values():
                if pkt.flow_id == fid and 0 < pkt.received_bytes < pkt.size_bytes:
                    in_flight += pkt.received_bytes
            fr.in_flight_bytes = in_flight
