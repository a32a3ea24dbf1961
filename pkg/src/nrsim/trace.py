"""Machine-readable run trace: CSV writer, parser, consistency checker, and
small analytics over completed traces.

Columns (fixed order, unused fields empty):
ts_ns,event,bwp_id,ue_id,flow_id,frame,subframe,slot,symbol_start,
num_symbols,rbg_bitmap_hex,direction,mcs,tbs_bytes,harq_process,is_retx,extra
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from io import TextIOBase

COLUMNS = [
    "ts_ns",
    "event",
    "bwp_id",
    "ue_id",
    "flow_id",
    "frame",
    "subframe",
    "slot",
    "symbol_start",
    "num_symbols",
    "rbg_bitmap_hex",
    "direction",
    "mcs",
    "tbs_bytes",
    "harq_process",
    "is_retx",
    "extra",
]

EVENTS = {
    "SLOT_START",
    "SLOT_END",
    "DCI_DL",
    "DCI_UL",
    "SR",
    "BSR",
    "TX_START",
    "TX_END",
    "RX_MAC",
    "PKT_ARRIVAL",
    "PKT_DELIVERED",
    "HARQ_NACK",
    "HARQ_RETX",
}


class TraceWriter:
    """Appends rows in event order; formatting is fixed so that identical
    runs produce byte-identical files."""

    def __init__(self, stream: TextIOBase):
        self._stream = stream
        self._stream.write(",".join(COLUMNS) + "\n")

    def row(
        self,
        ts_ns: int,
        event: str,
        bwp_id: str = "",
        ue_id: str = "",
        flow_id: str = "",
        addr=None,
        symbol_start: int | None = None,
        num_symbols: int | None = None,
        rbg_bitmap_hex: str = "",
        direction: str = "",
        mcs: int | None = None,
        tbs_bytes: int | None = None,
        harq_process: int | None = None,
        is_retx: bool | None = None,
        extra: str = "",
    ) -> None:
        if event not in EVENTS:
            raise ValueError(f"unknown trace event {event!r}")
        frame = subframe = slot = ""
        if addr is not None:
            frame, subframe, slot = str(addr.frame), str(addr.subframe), str(addr.slot)
        fields = [
            str(ts_ns),
            event,
            bwp_id,
            ue_id,
            flow_id,
            frame,
            subframe,
            slot,
            "" if symbol_start is None else str(symbol_start),
            "" if num_symbols is None else str(num_symbols),
            rbg_bitmap_hex,
            direction,
            "" if mcs is None else str(mcs),
            "" if tbs_bytes is None else str(tbs_bytes),
            "" if harq_process is None else str(harq_process),
            "" if is_retx is None else ("1" if is_retx else "0"),
            extra,
        ]
        self._stream.write(",".join(fields) + "\n")


def read_trace(path) -> list[dict[str, str]]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != COLUMNS:
            raise ValueError(f"unexpected trace header in {path}")
        return list(reader)


def parse_extra(extra: str) -> dict[str, str]:
    out = {}
    for part in extra.split(";"):
        if "=" in part:
            k, v = part.split("=", 1)
            out[k] = v
    return out


def count_sr_events(rows: list[dict[str, str]]) -> dict[str, int]:
    """Exact per-UE SR emission totals over a completed trace."""
    counts: dict[str, int] = {}
    for r in rows:
        if r["event"] == "SR":
            counts[r["ue_id"]] = counts.get(r["ue_id"], 0) + 1
    return counts


@dataclass
class Finding:
    kind: str
    ts_ns: int
    detail: str

    def __str__(self):
        return f"[{self.kind}] ts={self.ts_ns}: {self.detail}"


def _slot_params(rows) -> dict[str, int]:
    """slots-per-subframe per BWP, read from the mu= tag on SLOT_START rows."""
    n = {}
    for r in rows:
        if r["event"] == "SLOT_START" and r["bwp_id"] not in n:
            mu = parse_extra(r["extra"]).get("mu")
            if mu is not None:
                n[r["bwp_id"]] = 2 ** int(mu)
    return n


def _abs_slot(row, n: int) -> int:
    return (int(row["frame"]) * 10 + int(row["subframe"])) * n + int(row["slot"])


def check_trace(rows: list[dict[str, str]]) -> list[Finding]:
    """Mechanized module invariants over a trace.

    Checks data-TTI disjointness per slot, the d/K2 timing contract of every
    UL grant, SR necessity (an SR happens iff a packet met an empty UL
    buffer), and per-flow packet conservation.
    """
    findings: list[Finding] = []
    n_by_bwp = _slot_params(rows)

    # -- disjointness of transmitted data TTIs per (bwp, slot)
    by_slot: dict[tuple, list[dict]] = {}
    for r in rows:
        if r["event"] == "TX_START":
            key = (r["bwp_id"], r["frame"], r["subframe"], r["slot"])
            by_slot.setdefault(key, []).append(r)
    for key, ttis in by_slot.items():
        rects = []
        for r in ttis:
            first = int(r["symbol_start"])
            last = first + int(r["num_symbols"]) - 1
            bm = int(r["rbg_bitmap_hex"], 16) if r["rbg_bitmap_hex"] else 0
            if first < 1 or last > 12:
                findings.append(
                    Finding("data-region", int(r["ts_ns"]), f"TTI {first}..{last} in {key}")
                )
            for f0, l0, bm0, ue0 in rects:
                if first <= l0 and f0 <= last and (bm & bm0):
                    findings.append(
                        Finding(
                            "disjointness",
                            int(r["ts_ns"]),
                            f"{r['ue_id']} overlaps {ue0} in slot {key}",
                        )
                    )
            rects.append((first, last, bm, r["ue_id"]))

    # -- UL grant timing: pdcch = decision + d, pusch = pdcch + k2
    for r in rows:
        if r["event"] != "DCI_UL":
            continue
        n = n_by_bwp.get(r["bwp_id"])
        if n is None:
            findings.append(Finding("timing", int(r["ts_ns"]), "no mu tag for bwp"))
            continue
        ex = parse_extra(r["extra"])
        try:
            decision = int(ex["decision"])
            pdcch = int(ex["pdcch"])
            d = int(ex["d"])
            k2 = int(ex["k2"])
        except KeyError as e:
            findings.append(Finding("timing", int(r["ts_ns"]), f"DCI_UL missing {e}"))
            continue
        target = _abs_slot(r, n)
        if pdcch != decision + d:
            findings.append(
                Finding("timing", int(r["ts_ns"]), f"pdcch {pdcch} != decision {decision}+{d}")
            )
        if target != pdcch + k2:
            findings.append(
                Finding("timing", int(r["ts_ns"]), f"pusch {target} != pdcch {pdcch}+{k2}")
            )

    # -- SR necessity and BSR honesty: replay per-UE UL buffer occupancy
    expected: dict[str, int] = {}  # ue -> pending expected SRs
    buffer: dict[str, int] = {}
    for r in rows:
        ue = r["ue_id"]
        if r["event"] == "PKT_ARRIVAL" and r["direction"] == "ul":
            was_empty = buffer.get(ue, 0) == 0
            buffer[ue] = buffer.get(ue, 0) + int(r["tbs_bytes"])
            if was_empty:
                expected[ue] = expected.get(ue, 0) + 1
        elif r["event"] == "TX_START" and r["direction"] == "ul":
            if r["is_retx"] == "1":
                continue  # retransmissions resend a stored copy, no dequeue
            ex = parse_extra(r["extra"])
            data = int(ex.get("data", "0"))
            buffer[ue] = buffer.get(ue, 0) - data
            if buffer[ue] < 0:
                findings.append(
                    Finding("sr-necessity", int(r["ts_ns"]), f"{ue} buffer went negative")
                )
                buffer[ue] = 0
            if "bsr" in ex and int(ex["bsr"]) != buffer[ue]:
                findings.append(
                    Finding(
                        "bsr-honesty",
                        int(r["ts_ns"]),
                        f"{ue} reported {ex['bsr']} B, buffer minus this "
                        f"transmission holds {buffer[ue]} B",
                    )
                )
        elif r["event"] == "SR":
            if expected.get(ue, 0) <= 0:
                findings.append(
                    Finding(
                        "sr-necessity",
                        int(r["ts_ns"]),
                        f"SR from {ue} without an arrival to an empty buffer",
                    )
                )
            else:
                expected[ue] -= 1

    # -- clock sanity: PHY-plane timestamps sit on symbol boundaries
    phy_events = {"SLOT_START", "SLOT_END", "DCI_DL", "DCI_UL", "SR", "TX_START", "TX_END"}
    offsets_by_n: dict[int, tuple[int, set[int]]] = {}
    for r in rows:
        if r["event"] not in phy_events:
            continue
        n = n_by_bwp.get(r["bwp_id"])
        if n is None:
            continue
        if n not in offsets_by_n:
            slot_ns = 1_000_000 // n
            offs = set()
            for k in range(14):
                q, rem = divmod(slot_ns * k, 14)
                if 2 * rem > 14 or (2 * rem == 14 and q % 2 == 1):
                    q += 1
                offs.add(q)
            offsets_by_n[n] = (slot_ns, offs)
        slot_ns, offs = offsets_by_n[n]
        if int(r["ts_ns"]) % slot_ns not in offs:
            findings.append(
                Finding(
                    "clock-sanity",
                    int(r["ts_ns"]),
                    f"{r['event']} off the symbol grid of bwp {r['bwp_id']}",
                )
            )

    # -- conservation: delivered packets are generated, once, and bytes match
    gen: dict[str, tuple[str, int]] = {}
    delivered: set[str] = set()
    gen_bytes: dict[str, int] = {}
    dev_bytes: dict[str, int] = {}
    for r in rows:
        ex = parse_extra(r["extra"])
        if r["event"] == "PKT_ARRIVAL":
            gen[ex["pkt"]] = (r["flow_id"], int(r["tbs_bytes"]))
            gen_bytes[r["flow_id"]] = gen_bytes.get(r["flow_id"], 0) + int(r["tbs_bytes"])
        elif r["event"] == "PKT_DELIVERED":
            pkt = ex["pkt"]
            if pkt in delivered:
                findings.append(
                    Finding("conservation", int(r["ts_ns"]), f"packet {pkt} delivered twice")
                )
            delivered.add(pkt)
            if pkt not in gen:
                findings.append(
                    Finding("conservation", int(r["ts_ns"]), f"packet {pkt} never generated")
                )
            elif gen[pkt] != (r["flow_id"], int(r["tbs_bytes"])):
                findings.append(
                    Finding("conservation", int(r["ts_ns"]), f"packet {pkt} mutated in flight")
                )
            dev_bytes[r["flow_id"]] = dev_bytes.get(r["flow_id"], 0) + int(r["tbs_bytes"])
    for flow, d in dev_bytes.items():
        if d > gen_bytes.get(flow, 0):
            findings.append(
                Finding("conservation", 0, f"flow {flow} delivered more than generated")
            )

    return findings
