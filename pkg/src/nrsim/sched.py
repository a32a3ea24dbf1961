"""Per-BWP MAC scheduler.

Works ahead of the air interface: at the indication for slot x it allocates
DL data for slot x+d and UL data for slot x+d+k2 (d = L1/L2 data latency);
the UL grants ride in slot x+d's PDCCH. Supports TDMA and OFDMA access with
variable TTIs under round-robin, proportional-fair, and maximum-rate
policies; HARQ retransmissions are placed before new data. UL access is
always TDMA regardless of the configured access mode.

Selection is an iterative per-resource argmax (resource = one symbol across
the band for TDMA, one RBG row over a beam's symbol span for OFDMA), with
post-hoc grouping so each UE ends up with one contiguous rectangle per DCI.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .frame import FrameStructure
from .phy import (
    DATA_FIRST_SYMBOL,
    DATA_SYMBOLS,
    DL_CTRL_SYMBOL,
    UL_CTRL_SYMBOL,
    McsTable,
    OverlapError,
    PhyTimingConfig,
    compute_tbs,
)

PF_EMA_WINDOW_SLOTS = 100
PF_RATE_FLOOR_BPS = 1.0
DATA_LAST_BOUNDARY = DATA_FIRST_SYMBOL + DATA_SYMBOLS  # first symbol past the data region


class SchedError(ValueError):
    pass


@dataclass
class PolicyConfig:
    access: str = "tdma"  # tdma | ofdma
    policy: str = "rr"  # rr | pf | mr
    alpha: float = 1.0  # pf exponent
    beam_mode: str = "rr"  # rr | load (ofdma symbol/beam split)

    def __post_init__(self):
        if self.access not in ("tdma", "ofdma"):
            raise SchedError(f"unknown access {self.access!r}")
        if self.policy not in ("rr", "pf", "mr"):
            raise SchedError(f"unknown policy {self.policy!r}")
        if self.beam_mode not in ("rr", "load"):
            raise SchedError(f"unknown beam mode {self.beam_mode!r}")
        if not self.alpha >= 0 or self.alpha != self.alpha:
            raise SchedError(f"alpha must be finite and >= 0, got {self.alpha}")


@dataclass
class Dci:
    """One scheduling grant/assignment: a time-frequency rectangle plus MCS."""

    ue_id: str
    direction: str  # dl | ul
    start_symbol: int
    num_symbols: int
    rbg_bitmap: int
    mcs: int
    tbs_bytes: int
    harq_process: int = 0
    is_retx: bool = False
    k2_slots: int | None = None  # UL only
    # slot bookkeeping for traces and the trace checker
    decision_slot: int = -1
    pdcch_slot: int = -1
    target_slot: int = -1


@dataclass
class VarTtiAllocInfo:
    kind: str  # ctrl | data
    dci: Dci


@dataclass
class SlotAllocInfo:
    addr_index: int
    entries: list[VarTtiAllocInfo] = field(default_factory=list)

    def data_entries(self) -> list[VarTtiAllocInfo]:
        return [e for e in self.entries if e.kind == "data"]

    def validate(self) -> None:
        rects = []
        for e in self.entries:
            d = e.dci
            if e.kind == "ctrl":
                if d.start_symbol not in (DL_CTRL_SYMBOL, UL_CTRL_SYMBOL):
                    raise OverlapError("ctrl entry off symbols 0/13")
                continue
            if d.rbg_bitmap == 0:
                raise OverlapError("data DCI with empty RBG bitmap")
            first, last = d.start_symbol, d.start_symbol + d.num_symbols - 1
            if first < DATA_FIRST_SYMBOL or last > DATA_LAST_BOUNDARY - 1:
                raise OverlapError(f"data TTI {first}..{last} outside data region")
            for f0, l0, bm in rects:
                if first <= l0 and f0 <= last and (bm & d.rbg_bitmap):
                    raise OverlapError("overlapping data allocations")
            rects.append((first, last, d.rbg_bitmap))


@dataclass
class SchedUeInfo:
    """Per-UE snapshot the scheduler works from at one slot indication."""

    ue_id: str
    beam_id: int = 0
    buffered_bytes_dl: int = 0
    buffered_bytes_ul: int = 0
    cqi: int = 15
    mcs: int = 28
    avg_rate_bps: float = PF_RATE_FLOOR_BPS
    inst_rate_bps: float = 0.0
    ul_blind: bool = False  # SR seen, buffer size unknown
    min_ul_pdcch_slot: int = 0  # SR-to-grant floor (ctrl latency)


def pf_metric(inst_rate_bps: float, avg_rate_bps: float, alpha: float) -> float:
    """Proportional-fair metric inst^alpha / avg; argmax picks the winner."""
    return inst_rate_bps**alpha / avg_rate_bps


def distribute_symbols_to_beams(
    beams: list[tuple[int, int]], data_symbols: int, mode: str
) -> dict[int, int]:
    """Split the data symbols of a slot among beams.

    `beams` is a list of (beam_id, queued_bytes). "load" splits proportionally
    with largest-remainder rounding (zero-load beams get nothing); "rr" splits
    evenly, earlier beam ids absorbing the remainder.
    """
    if data_symbols < 0:
        raise SchedError("data_symbols must be >= 0")
    order = sorted(beams)
    if not order or data_symbols == 0:
        return {b: 0 for b, _ in order}
    if mode == "rr":
        base, extra = divmod(data_symbols, len(order))
        return {b: base + (1 if i < extra else 0) for i, (b, _) in enumerate(order)}
    total = sum(load for _, load in order)
    if total <= 0:
        return {b: 0 for b, _ in order}
    shares = {b: data_symbols * load / total for b, load in order}
    counts = {b: int(shares[b]) for b, _ in order}
    leftover = data_symbols - sum(counts.values())
    by_remainder = sorted(order, key=lambda bl: (-(shares[bl[0]] - counts[bl[0]]), bl[0]))
    for b, load in by_remainder:
        if leftover == 0:
            break
        if load > 0:
            counts[b] += 1
            leftover -= 1
    return counts


def build_rbg_bitmap(assignment: dict[str, set[int]], rbg_count: int) -> dict[str, int]:
    """Index sets -> per-UE bitmaps; guards pairwise disjointness."""
    taken = 0
    bitmaps = {}
    for ue in sorted(assignment):
        bm = 0
        for idx in assignment[ue]:
            if not 0 <= idx < rbg_count:
                raise SchedError(f"rbg index {idx} outside 0..{rbg_count - 1}")
            bm |= 1 << idx
        if bm & taken:
            raise OverlapError(f"rbg assignment for {ue} overlaps a co-scheduled UE")
        taken |= bm
        bitmaps[ue] = bm
    return bitmaps


@dataclass
class _RetxItem:
    dci: Dci
    seq: int


@dataclass
class _SlotState:
    alloc: SlotAllocInfo
    next_free_symbol: int = DATA_FIRST_SYMBOL
    carried_ul: list[Dci] = field(default_factory=list)


@dataclass
class SchedResult:
    dl: SlotAllocInfo
    ul: SlotAllocInfo
    new_dl: list[Dci]
    new_ul: list[Dci]
    retx_dl: list[Dci]
    retx_ul: list[Dci]

    @property
    def all_new(self) -> list[Dci]:
        return self.new_dl + self.new_ul


class Scheduler:
    """Scheduler instance for one BWP; invoked once per slot indication."""

    def __init__(
        self,
        fs: FrameStructure,
        timing: PhyTimingConfig,
        cfg: PolicyConfig,
        mcs_table: McsTable,
        harq_processes: int = 8,
        max_harq_retx: int | None = None,
        ul_grant_overhead: int = 4,
    ):
        self.fs = fs
        self.timing = timing
        self.cfg = cfg
        self.table = mcs_table
        self.harq_processes = harq_processes
        self.max_harq_retx = max_harq_retx
        self.ul_grant_overhead = ul_grant_overhead
        self._slots: dict[int, _SlotState] = {}
        self._retx: dict[str, list[_RetxItem]] = {"dl": [], "ul": []}
        self._retx_cursor = {"dl": -1, "ul": -1}
        self._retx_seq = 0
        self._attempts: dict[tuple[str, str, int], int] = {}
        self._busy: dict[tuple[str, str], set[int]] = {}
        self._proc_cursor: dict[tuple[str, str], int] = {}
        self._avg: dict[tuple[str, str], float] = {}
        self._served_units: dict[str, int] = {}
        self.dropped: list[Dci] = []  # retx cap exceeded (only with a configured cap)

    # -- slot registry -------------------------------------------------

    def _slot_state(self, idx: int) -> _SlotState:
        st = self._slots.get(idx)
        if st is None:
            alloc = SlotAllocInfo(addr_index=idx)
            alloc.entries.append(
                VarTtiAllocInfo("ctrl", Dci("", "dl", DL_CTRL_SYMBOL, 1, 0, 0, 0))
            )
            alloc.entries.append(
                VarTtiAllocInfo("ctrl", Dci("", "ul", UL_CTRL_SYMBOL, 1, 0, 0, 0))
            )
            st = _SlotState(alloc=alloc)
            self._slots[idx] = st
        return st

    def pop_slot(self, idx: int) -> tuple[SlotAllocInfo, list[Dci]]:
        """Hand the slot over to the PHY; yields a ctrl-only slot if nothing
        was ever scheduled for it."""
        st = self._slots.pop(idx, None)
        if st is None:
            st = self._slot_state(idx)
            del self._slots[idx]
        st.alloc.validate()
        return st.alloc, st.carried_ul

    # -- HARQ ----------------------------------------------------------

    def claim_process(self, ue_id: str, direction: str) -> int | None:
        """Next free HARQ process in round-robin order, or None if all busy."""
        key = (ue_id, direction)
        busy = self._busy.setdefault(key, set())
        cursor = self._proc_cursor.get(key, self.harq_processes - 1)
        for step in range(1, self.harq_processes + 1):
            p = (cursor + step) % self.harq_processes
            if p not in busy:
                busy.add(p)
                self._proc_cursor[key] = p
                return p
        return None

    def on_ack(self, dci: Dci) -> None:
        self._busy.setdefault((dci.ue_id, dci.direction), set()).discard(dci.harq_process)
        self._attempts.pop((dci.ue_id, dci.direction, dci.harq_process), None)

    def on_nack(self, dci: Dci) -> bool:
        """Queue the failed block for retransmission.

        Returns False when the retransmission cap was exhausted and the block
        was dropped instead.
        """
        key = (dci.ue_id, dci.direction, dci.harq_process)
        attempts = self._attempts.get(key, 0) + 1
        if self.max_harq_retx is not None and attempts > self.max_harq_retx:
            self._busy.setdefault((dci.ue_id, dci.direction), set()).discard(dci.harq_process)
            self._attempts.pop(key, None)
            self.dropped.append(dci)
            return False
        self._attempts[key] = attempts
        self._retx_seq += 1
        self._retx[dci.direction].append(_RetxItem(dci=dci, seq=self._retx_seq))
        return True

    def _retx_in_rr_order(self, direction: str) -> list[_RetxItem]:
        cursor = self._retx_cursor[direction]
        h = self.harq_processes
        return sorted(
            self._retx[direction],
            key=lambda it: ((it.dci.harq_process - cursor - 1) % h, it.seq),
        )

    def _place_retx(
        self, direction: str, st: _SlotState, decision_idx: int, pdcch_idx: int
    ) -> list[Dci]:
        """Retransmissions go first, keeping the original TTI geometry; what
        does not fit stays queued for the next slot."""
        placed = []
        deferred = []
        for item in self._retx_in_rr_order(direction):
            num = item.dci.num_symbols
            if st.next_free_symbol + num <= DATA_LAST_BOUNDARY:
                dci = replace(
                    item.dci,
                    start_symbol=st.next_free_symbol,
                    is_retx=True,
                    decision_slot=decision_idx,
                    pdcch_slot=pdcch_idx,
                    target_slot=st.alloc.addr_index,
                    k2_slots=self.timing.k2 if direction == "ul" else None,
                )
                st.alloc.entries.append(VarTtiAllocInfo("data", dci))
                st.next_free_symbol += num
                placed.append(dci)
                self._retx_cursor[direction] = dci.harq_process
            else:
                deferred.append(item)
        self._retx[direction] = deferred
        return placed

    # -- selection -----------------------------------------------------

    def _select(self, active: list[SchedUeInfo]) -> SchedUeInfo:
        pol = self.cfg.policy
        if pol == "rr":
            return min(active, key=lambda u: (self._served_units.get(u.ue_id, 0), u.ue_id))
        if pol == "mr":
            return min(active, key=lambda u: (-u.inst_rate_bps, u.ue_id))
        return min(
            active,
            key=lambda u: (-pf_metric(u.inst_rate_bps, u.avg_rate_bps, self.cfg.alpha), u.ue_id),
        )

    def _argmax_units(
        self, cands: list[SchedUeInfo], caps: dict[str, int], units: int
    ) -> tuple[dict[str, int], list[str]]:
        """Iterative per-resource argmax; returns unit counts and first-win order."""
        counts: dict[str, int] = {u.ue_id: 0 for u in cands}
        order: list[str] = []
        for _ in range(units):
            active = [u for u in cands if counts[u.ue_id] < caps[u.ue_id]]
            if not active:
                break
            w = self._select(active)
            counts[w.ue_id] += 1
            self._served_units[w.ue_id] = self._served_units.get(w.ue_id, 0) + 1
            if w.ue_id not in order:
                order.append(w.ue_id)
        return counts, order

    # -- sizing --------------------------------------------------------

    def _tbs_symbols(self, mcs: int, num_symbols: int) -> int:
        return compute_tbs(mcs, num_symbols, self.fs.prb_count, self.table)

    def _min_symbols_covering(self, mcs: int, required: int) -> int:
        """Smallest whole-band symbol count whose TBS covers `required`;
        DATA_SYMBOLS+1 when a full data region is not enough."""
        for s in range(1, DATA_SYMBOLS + 1):
            if self._tbs_symbols(mcs, s) >= required:
                return s
        return DATA_SYMBOLS + 1

    def _min_rows_covering(self, mcs: int, span: int, required: int, rows: int) -> int:
        for n in range(1, rows + 1):
            if compute_tbs(mcs, span, n * self.fs.rbg_size, self.table) >= required:
                return n
        return rows + 1

    # -- assignment ----------------------------------------------------

    def _assign_tdma(
        self,
        cands: list[SchedUeInfo],
        st: _SlotState,
        direction: str,
        decision_idx: int,
        pdcch_idx: int,
    ) -> list[Dci]:
        free = DATA_LAST_BOUNDARY - st.next_free_symbol
        if free <= 0 or not cands:
            return []
        caps = {}
        for u in cands:
            if direction == "ul" and u.buffered_bytes_ul <= 0:
                # blind first grant: minimum symbols for at least 4 bytes,
                # whole or nothing
                s = self._min_symbols_covering(u.mcs, 4)
                caps[u.ue_id] = s if s <= free else 0
            else:
                required = (
                    u.buffered_bytes_dl
                    if direction == "dl"
                    else u.buffered_bytes_ul + self.ul_grant_overhead
                )
                caps[u.ue_id] = min(free, self._min_symbols_covering(u.mcs, required))
        cands = [u for u in cands if caps[u.ue_id] > 0]
        counts, order = self._argmax_units(cands, caps, free)
        by_id = {u.ue_id: u for u in cands}
        full_band = (1 << self.fs.rbg_count) - 1
        dcis = []
        for ue_id in order:
            n = counts[ue_id]
            if n == 0:
                continue
            u = by_id[ue_id]
            proc = self.claim_process(ue_id, direction)
            if proc is None:
                continue  # all HARQ processes in flight; demand stays queued
            dci = Dci(
                ue_id=ue_id,
                direction=direction,
                start_symbol=st.next_free_symbol,
                num_symbols=n,
                rbg_bitmap=full_band,
                mcs=u.mcs,
                tbs_bytes=self._tbs_symbols(u.mcs, n),
                harq_process=proc,
                k2_slots=self.timing.k2 if direction == "ul" else None,
                decision_slot=decision_idx,
                pdcch_slot=pdcch_idx,
                target_slot=st.alloc.addr_index,
            )
            st.alloc.entries.append(VarTtiAllocInfo("data", dci))
            st.next_free_symbol += n
            dcis.append(dci)
        return dcis

    def _assign_ofdma_dl(
        self, cands: list[SchedUeInfo], st: _SlotState, decision_idx: int, pdcch_idx: int
    ) -> list[Dci]:
        free = DATA_LAST_BOUNDARY - st.next_free_symbol
        if free <= 0 or not cands:
            return []
        loads: dict[int, int] = {}
        for u in cands:
            loads[u.beam_id] = loads.get(u.beam_id, 0) + u.buffered_bytes_dl
        spans = distribute_symbols_to_beams(sorted(loads.items()), free, self.cfg.beam_mode)
        dcis = []
        for beam_id in sorted(spans):
            span = spans[beam_id]
            if span == 0:
                continue
            beam_ues = [u for u in cands if u.beam_id == beam_id]
            start = st.next_free_symbol
            st.next_free_symbol += span
            rows = self.fs.rbg_count
            caps = {
                u.ue_id: min(
                    rows, self._min_rows_covering(u.mcs, span, u.buffered_bytes_dl, rows)
                )
                for u in beam_ues
            }
            counts, order = self._argmax_units(beam_ues, caps, rows)
            by_id = {u.ue_id: u for u in beam_ues}
            # group each UE's rows into one contiguous band, in first-win order
            assignment = {}
            row0 = 0
            for ue_id in order:
                assignment[ue_id] = set(range(row0, row0 + counts[ue_id]))
                row0 += counts[ue_id]
            bitmaps = build_rbg_bitmap(assignment, rows)
            for ue_id in order:
                if counts[ue_id] == 0:
                    continue
                u = by_id[ue_id]
                proc = self.claim_process(ue_id, "dl")
                if proc is None:
                    continue
                nprbs = self.fs.prbs_in_bitmap(bitmaps[ue_id])
                dci = Dci(
                    ue_id=ue_id,
                    direction="dl",
                    start_symbol=start,
                    num_symbols=span,
                    rbg_bitmap=bitmaps[ue_id],
                    mcs=u.mcs,
                    tbs_bytes=compute_tbs(u.mcs, span, nprbs, self.table),
                    harq_process=proc,
                    decision_slot=decision_idx,
                    pdcch_slot=pdcch_idx,
                    target_slot=st.alloc.addr_index,
                )
                st.alloc.entries.append(VarTtiAllocInfo("data", dci))
                dcis.append(dci)
        return dcis

    # -- PF averages ---------------------------------------------------

    def _update_avgs(self, ues: list[SchedUeInfo], served: dict[tuple[str, str], int]) -> None:
        slot_s = self.fs.slot_duration_ns * 1e-9
        for u in ues:
            for direction in ("dl", "ul"):
                key = (u.ue_id, direction)
                avg = self._avg.get(key, PF_RATE_FLOOR_BPS)
                rate = served.get(key, 0) * 8 / slot_s
                avg = (1 - 1 / PF_EMA_WINDOW_SLOTS) * avg + rate / PF_EMA_WINDOW_SLOTS
                self._avg[key] = max(PF_RATE_FLOOR_BPS, avg)

    def avg_rate(self, ue_id: str, direction: str) -> float:
        return self._avg.get((ue_id, direction), PF_RATE_FLOOR_BPS)

    # -- entry point ---------------------------------------------------

    def schedule_slot(self, now_idx: int, ues: list[SchedUeInfo]) -> SchedResult:
        """Build the DL allocation for now+d and the UL one for now+d+k2."""
        d = self.timing.l1l2_data_latency
        k2 = self.timing.k2
        pdcch_idx = now_idx + d
        dl_state = self._slot_state(now_idx + d)
        ul_state = self._slot_state(now_idx + d + k2)

        retx_ul = self._place_retx("ul", ul_state, now_idx, pdcch_idx)
        ul_cands = sorted(
            (
                u
                for u in ues
                if (u.buffered_bytes_ul > 0 or u.ul_blind)
                and u.min_ul_pdcch_slot <= pdcch_idx
            ),
            key=lambda u: u.ue_id,
        )
        for u in ul_cands:
            u.avg_rate_bps = self.avg_rate(u.ue_id, "ul")
        new_ul = self._assign_tdma(ul_cands, ul_state, "ul", now_idx, pdcch_idx)
        self._slot_state(pdcch_idx).carried_ul.extend(retx_ul + new_ul)

        retx_dl = self._place_retx("dl", dl_state, now_idx, pdcch_idx)
        dl_cands = sorted(
            (u for u in ues if u.buffered_bytes_dl > 0), key=lambda u: u.ue_id
        )
        for u in dl_cands:
            u.avg_rate_bps = self.avg_rate(u.ue_id, "dl")
        if self.cfg.access == "tdma":
            new_dl = self._assign_tdma(dl_cands, dl_state, "dl", now_idx, pdcch_idx)
        else:
            new_dl = self._assign_ofdma_dl(dl_cands, dl_state, now_idx, pdcch_idx)

        served: dict[tuple[str, str], int] = {}
        for dci in new_ul + retx_ul:
            served[(dci.ue_id, "ul")] = served.get((dci.ue_id, "ul"), 0) + dci.tbs_bytes
        for dci in new_dl + retx_dl:
            served[(dci.ue_id, "dl")] = served.get((dci.ue_id, "dl"), 0) + dci.tbs_bytes
        self._update_avgs(ues, served)

        dl_state.alloc.validate()
        ul_state.alloc.validate()
        return SchedResult(
            dl=dl_state.alloc,
            ul=ul_state.alloc,
            new_dl=new_dl,
            new_ul=new_ul,
            retx_dl=retx_dl,
            retx_ul=retx_ul,
        )
