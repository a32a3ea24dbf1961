"""UL grant-based handshake: per-UE RLC buffer, SR state machine, PUSCH
assembly with piggybacked BSR, and the gNB-side demand bookkeeping that
drives follow-up grants.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .frame import FrameStructure
from .phy import DATA_SYMBOLS, ConfigError, McsTable, compute_tbs

# Fixed MAC-header cost of carrying a BSR in a PUSCH.
BSR_OVERHEAD_BYTES = 4

IDLE = "idle"
SR_SENT = "sr_sent"
GRANTED = "granted"


class GrantTooSmall(ValueError):
    """Grant TBS cannot even hold the BSR header; the grant is wasted."""


@dataclass
class QueuedPacket:
    packet_id: int
    flow_id: str
    size_bytes: int
    remaining_bytes: int
    enqueue_ts: int


@dataclass(frozen=True)
class Segment:
    """A packet slice carried by one transport block."""

    packet_id: int
    flow_id: str
    bytes: int
    is_last: bool
    enqueue_ts: int


@dataclass(frozen=True)
class Bsr:
    reported_bytes: int


class RlcBuffer:
    """FIFO byte queue with segmentation at transport-block boundaries."""

    def __init__(self):
        self._queue: deque[QueuedPacket] = deque()
        self.occupancy_bytes = 0

    def __len__(self):
        return len(self._queue)

    def enqueue(self, packet_id: int, flow_id: str, size_bytes: int, ts: int) -> None:
        if size_bytes <= 0:
            raise ValueError(f"packet size must be > 0, got {size_bytes}")
        self._queue.append(QueuedPacket(packet_id, flow_id, size_bytes, size_bytes, ts))
        self.occupancy_bytes += size_bytes

    def per_flow_remaining(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for pkt in self._queue:
            out[pkt.flow_id] = out.get(pkt.flow_id, 0) + pkt.remaining_bytes
        return out

    def dequeue(self, max_bytes: int) -> list[Segment]:
        """Pop up to max_bytes in FIFO order; the head packet may be split."""
        out: list[Segment] = []
        budget = max(0, max_bytes)
        while budget > 0 and self._queue:
            pkt = self._queue[0]
            take = min(budget, pkt.remaining_bytes)
            pkt.remaining_bytes -= take
            budget -= take
            self.occupancy_bytes -= take
            last = pkt.remaining_bytes == 0
            out.append(Segment(pkt.packet_id, pkt.flow_id, take, last, pkt.enqueue_ts))
            if last:
                self._queue.popleft()
        return out


def blind_grant_symbols(fs: FrameStructure, mcs: int, table: McsTable) -> int:
    """Minimum whole-band symbols permitting at least a 4-byte transmission."""
    for s in range(1, DATA_SYMBOLS + 1):
        if compute_tbs(mcs, s, fs.prb_count, table) >= 4:
            return s
    raise ConfigError(
        f"no {DATA_SYMBOLS}-symbol allocation reaches 4 bytes at mcs={mcs}; "
        "band is too narrow"
    )


@dataclass
class PuschContent:
    segments: list[Segment]
    data_bytes: int
    bsr: Bsr


class UeMacUl:
    """UE-side UL MAC state for one (UE, BWP) pair."""

    def __init__(self, ue_id: str):
        self.ue_id = ue_id
        self.buffer = RlcBuffer()
        self.state = IDLE
        self.sr_count = 0

    def on_ul_data_arrival(self, packet_id: int, flow_id: str, size_bytes: int, ts: int) -> bool:
        """Enqueue a packet; returns True when an SR must go out (packet met
        an empty buffer while idle)."""
        was_empty = self.buffer.occupancy_bytes == 0
        self.buffer.enqueue(packet_id, flow_id, size_bytes, ts)
        if was_empty and self.state == IDLE:
            self.state = SR_SENT
            self.sr_count += 1
            return True
        return False

    def on_grant_received(self) -> None:
        if self.state == SR_SENT:
            self.state = GRANTED

    def build_pusch(self, tbs_bytes: int) -> PuschContent:
        """Assemble the PUSCH for a grant: data up to tbs-BSR header, plus a
        BSR reflecting the queue without the current transmission."""
        if tbs_bytes < BSR_OVERHEAD_BYTES:
            raise GrantTooSmall(f"tbs {tbs_bytes} < BSR overhead {BSR_OVERHEAD_BYTES}")
        segments = self.buffer.dequeue(tbs_bytes - BSR_OVERHEAD_BYTES)
        data = sum(s.bytes for s in segments)
        bsr = Bsr(self.buffer.occupancy_bytes)
        self.state = IDLE if bsr.reported_bytes == 0 else GRANTED
        return PuschContent(segments=segments, data_bytes=data, bsr=bsr)


@dataclass
class _OutstandingGrant:
    pusch_slot: int
    capacity_bytes: int


@dataclass
class GnbUeUlState:
    """gNB-side view of one UE's UL demand.

    Demand comes from BSRs; grants issued but not yet transmitted are held as
    outstanding so one BSR can spawn several follow-up grants without double
    counting. An SR with no BSR yet asks for a blind grant, gated by the
    L1/L2 control latency.
    """

    ue_id: str
    demand_bytes: int = 0
    sr_pending: bool = False
    min_pdcch_slot: int = 0
    outstanding: list[_OutstandingGrant] = field(default_factory=list)

    def on_sr(self, pucch_slot: int, ctrl_latency_slots: int) -> None:
        self.sr_pending = True
        self.min_pdcch_slot = pucch_slot + ctrl_latency_slots

    def wants_blind(self) -> bool:
        return self.sr_pending and self.demand_bytes <= 0

    def on_grant_issued(self, pusch_slot: int, tbs_bytes: int) -> None:
        capacity = max(0, tbs_bytes - BSR_OVERHEAD_BYTES)
        self.outstanding.append(_OutstandingGrant(pusch_slot, capacity))
        self.sr_pending = False
        self.demand_bytes = max(0, self.demand_bytes - capacity)

    def on_bsr(self, bsr: Bsr, pusch_slot: int) -> None:
        """Fold in a BSR, discounting grants that will drain the same bytes."""
        self.outstanding = [g for g in self.outstanding if g.pusch_slot != pusch_slot]
        later = sum(g.capacity_bytes for g in self.outstanding if g.pusch_slot > pusch_slot)
        self.demand_bytes = max(0, bsr.reported_bytes - later)
