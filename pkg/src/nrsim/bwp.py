"""Bandwidth-part deployment: static FDM of (numerology, bandwidth) parts
inside one channel, plus the QoS-class -> BWP routing table shared by the
gNB and all UEs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .frame import BandwidthTooNarrow, FrameStructure, derive_frame_structure
from .phy import ErrorModel, PhyTimingConfig
from .sched import PolicyConfig


class DeploymentError(ValueError):
    pass


@dataclass(frozen=True)
class QosClass:
    id: str
    label: str = ""


@dataclass
class BwpConfig:
    bwp_id: str
    mu: int
    bandwidth_hz: int
    tx_power_dbm: float = 23.0
    offset_hz: int | None = None  # None: packed after the previous part
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    timing: PhyTimingConfig = field(default_factory=PhyTimingConfig)
    error_model: ErrorModel = field(default_factory=ErrorModel)
    harq_processes: int = 8
    max_harq_retx: int | None = None
    mcs_table_path: str | None = None

    def frame_structure(self) -> FrameStructure:
        return derive_frame_structure(self.mu, self.bandwidth_hz)


@dataclass
class BwpDeployment:
    total_bandwidth_hz: int
    parts: list[BwpConfig] = field(default_factory=list)
    routing: dict[str, str] = field(default_factory=dict)  # qos id -> bwp id
    qos_classes: list[QosClass] = field(default_factory=list)

    def part(self, bwp_id: str) -> BwpConfig:
        for p in self.parts:
            if p.bwp_id == bwp_id:
                return p
        raise DeploymentError(f"unknown bwp {bwp_id!r}")


def frequency_spans(dep: BwpDeployment) -> dict[str, tuple[int, int]]:
    """(low, high) Hz edge of each part, packing offset-less parts from the
    channel's lower edge in declaration order."""
    spans = {}
    cursor = 0
    for p in dep.parts:
        low = p.offset_hz if p.offset_hz is not None else cursor
        spans[p.bwp_id] = (low, low + p.bandwidth_hz)
        cursor = low + p.bandwidth_hz
    return spans


def validate_deployment(dep: BwpDeployment) -> list[str]:
    """All-or-nothing startup validation; returns every finding, not the
    first one."""
    errors: list[str] = []
    if not dep.parts:
        errors.append("deployment has no bandwidth parts")
    ids = [p.bwp_id for p in dep.parts]
    if len(set(ids)) != len(ids):
        errors.append(f"duplicate bwp ids: {ids}")
    total = sum(p.bandwidth_hz for p in dep.parts)
    if total > dep.total_bandwidth_hz:
        errors.append(
            f"BudgetExceeded: parts total {total} Hz > channel {dep.total_bandwidth_hz} Hz"
        )
    for p in dep.parts:
        try:
            p.frame_structure()
        except BandwidthTooNarrow as e:
            errors.append(f"BandwidthTooNarrow: bwp {p.bwp_id}: {e}")
        except ValueError as e:
            errors.append(f"bwp {p.bwp_id}: {e}")
    spans = frequency_spans(dep)
    ordered = sorted(spans.items(), key=lambda kv: kv[1])
    for (id_a, (_, hi_a)), (id_b, (lo_b, _)) in zip(ordered, ordered[1:]):
        if lo_b < hi_a:
            errors.append(f"bwp {id_b} overlaps {id_a} in frequency")
    for _, (lo, hi) in spans.items():
        if lo < 0 or hi > dep.total_bandwidth_hz:
            errors.append("BudgetExceeded: a part lies outside the channel edges")
            break
    qos_ids = [q.id for q in dep.qos_classes]
    if len(set(qos_ids)) != len(qos_ids):
        errors.append(f"duplicate qos ids: {qos_ids}")
    for q in dep.qos_classes:
        if q.id not in dep.routing:
            errors.append(f"UnroutedQosClass: {q.id}")
    for qos_id, bwp_id in sorted(dep.routing.items()):
        if qos_id not in qos_ids:
            errors.append(f"routing refers to unknown qos class {qos_id!r}")
        if bwp_id not in ids:
            errors.append(f"routing for {qos_id!r} refers to unknown bwp {bwp_id!r}")
    return errors


def route(dep: BwpDeployment, qos_id: str) -> str:
    """Lookup-table routing; identical on the gNB and UE sides by
    construction (one shared deployment object)."""
    try:
        return dep.routing[qos_id]
    except KeyError:
        raise DeploymentError(f"UnroutedQosClass: {qos_id}") from None
