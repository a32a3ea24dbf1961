"""Declarative scenario files: nested sections with key=value leaves.

Syntax:
    seed = 1
    stop = 1 s
    [channel] / [core] / [deployment] / [routing] / [output]   (singletons)
    [qos ID] / [bwp ID] / [ue ID] / [flow ID]                  (one per entity)

Durations accept ns/us/ms/s, bandwidth Hz/kHz/MHz/GHz, rates b/s through
Gb/s, sizes B/kB/MB; everything is normalized to integers internally.
Unknown sections and keys are rejected. `dumps` emits a normalized form that
reloads to an equal scenario.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field, replace

from .bwp import BwpConfig, BwpDeployment, QosClass, validate_deployment
from .engine import CoreLink, FlowSpec, UePlacement
from .phy import ChannelParams, ErrorModel, PhyTimingConfig
from .sched import PolicyConfig


class ParseError(Exception):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line
        self.msg = msg


class ValidationError(Exception):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


# -- value parsing -------------------------------------------------------

_NUM_UNIT = re.compile(r"^\s*([+-]?[0-9.eE+]+)\s*([A-Za-z/%]+)?\s*$")

_DURATION = {"ns": 1, "us": 10**3, "ms": 10**6, "s": 10**9}
_HZ = {"hz": 1, "khz": 10**3, "mhz": 10**6, "ghz": 10**9}
_RATE = {"b/s": 1, "kb/s": 10**3, "mb/s": 10**6, "gb/s": 10**9}
_BYTES = {"b": 1, "kb": 10**3, "mb": 10**6}


def _num_unit(raw: str):
    m = _NUM_UNIT.match(raw)
    if not m:
        raise ValueError(f"cannot parse value {raw!r}")
    return float(m.group(1)), (m.group(2) or "").lower()


def _scaled_int(raw: str, units: dict[str, int], what: str) -> int:
    val, unit = _num_unit(raw)
    if unit == "" and val == int(val):
        return int(val)
    if unit not in units:
        raise ValueError(f"{what} needs one of {sorted(units)}, got {raw!r}")
    return round(val * units[unit])


def parse_duration_ns(raw: str) -> int:
    return _scaled_int(raw, _DURATION, "duration")


def parse_hz(raw: str) -> int:
    return _scaled_int(raw, _HZ, "bandwidth")


def parse_rate_bps(raw: str) -> int:
    return _scaled_int(raw, _RATE, "rate")


def parse_bytes(raw: str) -> int:
    return _scaled_int(raw, _BYTES, "size")


def parse_db(raw: str) -> float:
    val, unit = _num_unit(raw)
    if unit not in ("", "db", "dbm"):
        raise ValueError(f"expected a dB/dBm value, got {raw!r}")
    return val


def parse_meters(raw: str) -> float:
    val, unit = _num_unit(raw)
    if unit not in ("", "m"):
        raise ValueError(f"expected meters, got {raw!r}")
    return val


def parse_decode_latency(raw: str):
    if raw.strip().lower() == "2xslot":
        return "2xslot"
    return parse_duration_ns(raw)


def parse_error_model(raw: str) -> ErrorModel:
    parts = raw.split()
    mode = parts[0]
    if mode == "none":
        return ErrorModel("none")
    if mode == "bernoulli":
        return ErrorModel("bernoulli", p=float(parts[1]))
    if mode == "threshold":
        if len(parts) == 3:
            return ErrorModel(
                "threshold", threshold_base_db=float(parts[1]), threshold_step_db=float(parts[2])
            )
        return ErrorModel("threshold")
    raise ValueError(f"unknown error model {raw!r}")


def parse_retx_cap(raw: str):
    if raw.strip().lower() == "unlimited":
        return None
    return int(raw)


def _fmt_error_model(em: ErrorModel) -> str:
    if em.mode == "none":
        return "none"
    if em.mode == "bernoulli":
        return f"bernoulli {em.p:g}"
    return f"threshold {em.threshold_base_db:g} {em.threshold_step_db:g}"


# -- scenario object -------------------------------------------------------


@dataclass
class OutputConfig:
    trace: str = "trace.csv"
    summary: str = "summary.json"


@dataclass
class Scenario:
    seed: int
    stop_ns: int
    deployment: BwpDeployment
    ues: list[UePlacement] = field(default_factory=list)
    flows: list[FlowSpec] = field(default_factory=list)
    channel: ChannelParams = field(default_factory=ChannelParams)
    core: CoreLink = field(default_factory=CoreLink)
    output: OutputConfig = field(default_factory=OutputConfig)


# -- tokenizer --------------------------------------------------------------

_SECTION = re.compile(r"^\[\s*([a-z_]+)(?:\s+([A-Za-z0-9_.-]+))?\s*\]$")
_KEYVAL = re.compile(r"^([A-Za-z0-9_.-]+)\s*=\s*(.*)$")

_SINGLETONS = {"channel", "core", "deployment", "routing", "output"}
_ENTITIES = {"qos", "bwp", "ue", "flow"}


def _tokenize(text: str):
    """Yields (line_no, section_kind, section_id, key, value) records."""
    records = []
    section = (None, None)
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            kind, ident = m.group(1), m.group(2)
            if kind in _SINGLETONS:
                if ident is not None:
                    raise ParseError(line_no, f"section [{kind}] takes no name")
            elif kind in _ENTITIES:
                if ident is None:
                    raise ParseError(line_no, f"section [{kind}] needs a name")
            else:
                raise ParseError(line_no, f"unknown section [{kind}]")
            section = (kind, ident)
            records.append((line_no, kind, ident, None, None))
            continue
        m = _KEYVAL.match(line)
        if m:
            if section == (None, None) and m.group(1) not in ("seed", "stop"):
                raise ParseError(line_no, f"unknown top-level key {m.group(1)!r}")
            records.append((line_no, *section, m.group(1), m.group(2).strip()))
            continue
        raise ParseError(line_no, f"cannot parse {raw.strip()!r}")
    return records


# -- loading -----------------------------------------------------------------

_BWP_KEYS = {
    "mu",
    "bandwidth",
    "offset",
    "tx_power",
    "access",
    "policy",
    "alpha",
    "beam_mode",
    "l1l2_ctrl_latency",
    "l1l2_data_latency",
    "k2",
    "ue_decode_latency",
    "error_model",
    "harq_processes",
    "max_harq_retx",
    "mcs_table",
}
_FLOW_KEYS = {"direction", "qos", "src", "dst", "kind", "rate", "pkt_size", "burst", "gap", "start", "stop"}
_CHANNEL_KEYS = {"ref_loss", "ref_distance", "pathloss_exp", "noise", "interference"}


def loads(text: str) -> Scenario:
    records = _tokenize(text)
    errors: list[str] = []

    top: dict[str, str] = {}
    singles: dict[str, dict[str, str]] = {k: {} for k in _SINGLETONS}
    entities: dict[str, list[tuple[str, dict[str, str]]]] = {k: [] for k in _ENTITIES}
    current: dict[str, str] | None = None

    for line_no, kind, ident, key, value in records:
        if key is None:
            if kind in _SINGLETONS:
                current = singles[kind]
            else:
                if any(name == ident for name, _ in entities[kind]):
                    errors.append(f"duplicate [{kind} {ident}]")
                current = {}
                entities[kind].append((ident, current))
            continue
        if kind is None:
            if key in top:
                errors.append(f"line {line_no}: duplicate top-level key {key!r}")
            top[key] = value
        else:
            if key in current:
                errors.append(f"line {line_no}: duplicate key {key!r} in [{kind}]")
            current[key] = value

    def take(source: dict, key: str, parser, default=None, required=False, where=""):
        if key not in source:
            if required:
                errors.append(f"{where}: missing required key {key!r}")
            return default
        try:
            return parser(source.pop(key))
        except (ValueError, IndexError) as e:
            errors.append(f"{where}: bad {key!r}: {e}")
            return default

    def reject_unknown(source: dict, where: str):
        for key in source:
            errors.append(f"{where}: unknown key {key!r}")

    seed = take(top, "seed", int, default=1, where="top level")
    stop_ns = take(top, "stop", parse_duration_ns, required=True, where="top level")
    reject_unknown(top, "top level")
    if stop_ns is not None and stop_ns <= 0:
        errors.append("stop must be > 0")

    ch = singles["channel"]
    channel = ChannelParams(
        ref_loss_db=take(ch, "ref_loss", parse_db, 60.0, where="[channel]"),
        ref_distance_m=take(ch, "ref_distance", parse_meters, 1.0, where="[channel]"),
        pathloss_exp=take(ch, "pathloss_exp", float, 2.0, where="[channel]"),
        noise_dbm=take(ch, "noise", parse_db, -90.0, where="[channel]"),
        interference_dbm=take(
            ch,
            "interference",
            lambda v: None if v.strip().lower() == "off" else parse_db(v),
            None,
            where="[channel]",
        ),
    )
    reject_unknown(ch, "[channel]")

    co = singles["core"]
    core = CoreLink(
        latency_ns=take(co, "latency", parse_duration_ns, 0, where="[core]"),
        capacity_bps=take(co, "capacity", parse_rate_bps, 10**10, where="[core]"),
    )
    reject_unknown(co, "[core]")

    dp = singles["deployment"]
    total_bw = take(dp, "total_bandwidth", parse_hz, required=True, where="[deployment]")
    reject_unknown(dp, "[deployment]")

    qos_classes = []
    for name, body in entities["qos"]:
        label = take(body, "label", str, "", where=f"[qos {name}]")
        reject_unknown(body, f"[qos {name}]")
        qos_classes.append(QosClass(name, label))

    parts = []
    for name, body in entities["bwp"]:
        where = f"[bwp {name}]"
        unknown = set(body) - _BWP_KEYS
        part = BwpConfig(
            bwp_id=name,
            mu=take(body, "mu", int, 0, required=True, where=where),
            bandwidth_hz=take(body, "bandwidth", parse_hz, 0, required=True, where=where),
            tx_power_dbm=take(body, "tx_power", parse_db, 23.0, where=where),
            offset_hz=take(body, "offset", parse_hz, None, where=where),
            harq_processes=take(body, "harq_processes", int, 8, where=where),
            max_harq_retx=take(body, "max_harq_retx", parse_retx_cap, None, where=where),
            mcs_table_path=take(body, "mcs_table", str, None, where=where),
        )
        try:
            part.policy = PolicyConfig(
                access=take(body, "access", str, "tdma", where=where),
                policy=take(body, "policy", str, "rr", where=where),
                alpha=take(body, "alpha", float, 1.0, where=where),
                beam_mode=take(body, "beam_mode", str, "rr", where=where),
            )
        except ValueError as e:
            errors.append(f"{where}: {e}")
        try:
            part.timing = PhyTimingConfig(
                l1l2_ctrl_latency=take(body, "l1l2_ctrl_latency", int, 2, where=where),
                l1l2_data_latency=take(body, "l1l2_data_latency", int, 2, where=where),
                k2=take(body, "k2", int, 2, where=where),
                ue_decode_latency=take(
                    body, "ue_decode_latency", parse_decode_latency, 100_000, where=where
                ),
            )
        except ValueError as e:
            errors.append(f"{where}: {e}")
        try:
            part.error_model = take(
                body, "error_model", parse_error_model, ErrorModel(), where=where
            )
        except ValueError as e:
            errors.append(f"{where}: {e}")
        for key in sorted(unknown):
            errors.append(f"{where}: unknown key {key!r}")
            body.pop(key, None)
        parts.append(part)

    routing = {}
    for qos_id, bwp_id in singles["routing"].items():
        routing[qos_id] = bwp_id.strip()

    ues = []
    for name, body in entities["ue"]:
        where = f"[ue {name}]"
        ues.append(
            UePlacement(
                ue_id=name,
                distance_m=take(body, "distance", parse_meters, 1.0, required=True, where=where),
                beam_id=take(body, "beam", int, 0, where=where),
            )
        )
        reject_unknown(body, where)

    flows = []
    for name, body in entities["flow"]:
        where = f"[flow {name}]"
        unknown = set(body) - _FLOW_KEYS
        kwargs = dict(
            flow_id=name,
            direction=take(body, "direction", str, "ul", required=True, where=where),
            qos_id=take(body, "qos", str, "", required=True, where=where),
            src=take(body, "src", str, "", required=True, where=where),
            dst=take(body, "dst", str, "", required=True, where=where),
            kind=take(body, "kind", str, "cbr", where=where),
            rate_bps=take(body, "rate", parse_rate_bps, 0, where=where),
            pkt_bytes=take(body, "pkt_size", parse_bytes, 0, required=True, where=where),
            burst_count=take(body, "burst", int, 1, where=where),
            gap_ns=take(body, "gap", parse_duration_ns, 0, where=where),
            start_ns=take(body, "start", parse_duration_ns, 0, where=where),
            stop_ns=take(body, "stop", parse_duration_ns, 0, where=where),
        )
        for key in sorted(unknown):
            errors.append(f"{where}: unknown key {key!r}")
        try:
            flows.append(FlowSpec(**kwargs))
        except ValueError as e:
            errors.append(f"{where}: {e}")

    out = singles["output"]
    output = OutputConfig(
        trace=take(out, "trace", str, "trace.csv", where="[output]"),
        summary=take(out, "summary", str, "summary.json", where="[output]"),
    )
    reject_unknown(out, "[output]")

    deployment = BwpDeployment(
        total_bandwidth_hz=total_bw or 0,
        parts=parts,
        routing=routing,
        qos_classes=qos_classes,
    )
    scenario = Scenario(
        seed=seed,
        stop_ns=stop_ns or 0,
        deployment=deployment,
        ues=ues,
        flows=flows,
        channel=channel,
        core=core,
        output=output,
    )
    errors.extend(validate_scenario(scenario))
    if errors:
        raise ValidationError(sorted(set(errors)))
    return scenario


def validate_scenario(sc: Scenario) -> list[str]:
    """Cross-reference checks on top of the deployment validation."""
    errors = list(validate_deployment(sc.deployment))
    if sc.stop_ns <= 0:
        errors.append("stop must be > 0")
    ue_ids = {u.ue_id for u in sc.ues}
    if len(ue_ids) != len(sc.ues):
        errors.append("duplicate ue ids")
    flow_ids = [f.flow_id for f in sc.flows]
    if len(set(flow_ids)) != len(flow_ids):
        errors.append("duplicate flow ids")
    known_qos = {q.id for q in sc.deployment.qos_classes}
    for f in sc.flows:
        where = f"[flow {f.flow_id}]"
        if f.qos_id not in known_qos:
            errors.append(f"{where}: unknown qos class {f.qos_id!r}")
        ue_side, remote_side = (f.src, f.dst) if f.direction == "ul" else (f.dst, f.src)
        if remote_side != "remote":
            errors.append(f"{where}: the non-UE endpoint must be 'remote'")
        if ue_side not in ue_ids:
            errors.append(f"{where}: unknown ue {ue_side!r}")
        if f.stop_ns and f.stop_ns <= f.start_ns:
            errors.append(f"{where}: stop must be after start")
    return errors


def load(path) -> Scenario:
    with open(path) as f:
        return loads(f.read())


# -- normalized emission -----------------------------------------------------


def dumps(sc: Scenario) -> str:
    lines = [f"seed = {sc.seed}", f"stop = {sc.stop_ns} ns", ""]
    ch = sc.channel
    lines += [
        "[channel]",
        f"ref_loss = {ch.ref_loss_db:g} dB",
        f"ref_distance = {ch.ref_distance_m:g} m",
        f"pathloss_exp = {ch.pathloss_exp:g}",
        f"noise = {ch.noise_dbm:g} dBm",
        f"interference = {'off' if ch.interference_dbm is None else f'{ch.interference_dbm:g} dBm'}",
        "",
        "[core]",
        f"latency = {sc.core.latency_ns} ns",
        f"capacity = {sc.core.capacity_bps} b/s",
        "",
        "[deployment]",
        f"total_bandwidth = {sc.deployment.total_bandwidth_hz} Hz",
        "",
    ]
    for q in sc.deployment.qos_classes:
        lines += [f"[qos {q.id}]"]
        if q.label:
            lines += [f"label = {q.label}"]
        lines += [""]
    for p in sc.deployment.parts:
        lines += [
            f"[bwp {p.bwp_id}]",
            f"mu = {p.mu}",
            f"bandwidth = {p.bandwidth_hz} Hz",
        ]
        if p.offset_hz is not None:
            lines += [f"offset = {p.offset_hz} Hz"]
        lines += [
            f"tx_power = {p.tx_power_dbm:g} dBm",
            f"access = {p.policy.access}",
            f"policy = {p.policy.policy}",
            f"alpha = {p.policy.alpha:g}",
            f"beam_mode = {p.policy.beam_mode}",
            f"l1l2_ctrl_latency = {p.timing.l1l2_ctrl_latency}",
            f"l1l2_data_latency = {p.timing.l1l2_data_latency}",
            f"k2 = {p.timing.k2}",
            (
                "ue_decode_latency = 2xslot"
                if p.timing.ue_decode_latency == "2xslot"
                else f"ue_decode_latency = {p.timing.ue_decode_latency} ns"
            ),
            f"error_model = {_fmt_error_model(p.error_model)}",
            f"harq_processes = {p.harq_processes}",
            f"max_harq_retx = {'unlimited' if p.max_harq_retx is None else p.max_harq_retx}",
        ]
        if p.mcs_table_path:
            lines += [f"mcs_table = {p.mcs_table_path}"]
        lines += [""]
    lines += ["[routing]"]
    for qos_id in sorted(sc.deployment.routing):
        lines += [f"{qos_id} = {sc.deployment.routing[qos_id]}"]
    lines += [""]
    for u in sc.ues:
        lines += [f"[ue {u.ue_id}]", f"distance = {u.distance_m:g} m", f"beam = {u.beam_id}", ""]
    for f in sc.flows:
        lines += [
            f"[flow {f.flow_id}]",
            f"direction = {f.direction}",
            f"qos = {f.qos_id}",
            f"src = {f.src}",
            f"dst = {f.dst}",
            f"kind = {f.kind}",
        ]
        if f.kind == "cbr":
            lines += [f"rate = {f.rate_bps} b/s"]
        else:
            lines += [f"burst = {f.burst_count}", f"gap = {f.gap_ns} ns"]
        lines += [
            f"pkt_size = {f.pkt_bytes} B",
            f"start = {f.start_ns} ns",
            f"stop = {f.stop_ns} ns",
            "",
        ]
    lines += [
        "[output]",
        f"trace = {sc.output.trace}",
        f"summary = {sc.output.summary}",
        "",
    ]
    return "\n".join(lines)


def scenario_hash(sc: Scenario) -> str:
    return hashlib.sha256(dumps(sc).encode()).hexdigest()[:16]


# -- overrides ----------------------------------------------------------------

_SEG = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)(?:\[(\d+)\])?$")

_OVERRIDE_PARSERS = {
    "seed": int,
    "stop_ns": parse_duration_ns,
    "start_ns": parse_duration_ns,
    "gap_ns": parse_duration_ns,
    "latency_ns": parse_duration_ns,
    "mu": int,
    "bandwidth_hz": parse_hz,
    "offset_hz": parse_hz,
    "total_bandwidth_hz": parse_hz,
    "tx_power_dbm": parse_db,
    "noise_dbm": parse_db,
    "ref_loss_db": parse_db,
    "ref_distance_m": parse_meters,
    "distance_m": parse_meters,
    "pathloss_exp": float,
    "alpha": float,
    "access": str,
    "policy": str,
    "beam_mode": str,
    "l1l2_ctrl_latency": int,
    "l1l2_data_latency": int,
    "k2": int,
    "ue_decode_latency": parse_decode_latency,
    "error_model": parse_error_model,
    "harq_processes": int,
    "max_harq_retx": parse_retx_cap,
    "rate_bps": parse_rate_bps,
    "capacity_bps": parse_rate_bps,
    "pkt_bytes": parse_bytes,
    "burst_count": int,
    "beam_id": int,
    "trace": str,
    "summary": str,
    "mcs_table_path": str,
}


def _assign(container, accessor, value) -> None:
    kind, key = accessor
    if kind == "attr":
        setattr(container, key, value)
    else:
        container[key] = value


def apply_override(sc: Scenario, assignment: str) -> None:
    """Dotted-path substitution, e.g.
    deployment.parts[0].timing.ue_decode_latency=0.5ms or seed=7.

    Frozen leaf configs (channel, core, flow specs, placements) are rebuilt
    with the new field value and reassigned into their parent."""
    if "=" not in assignment:
        raise ValueError(f"override needs path=value, got {assignment!r}")
    path, raw = assignment.split("=", 1)
    segments = path.strip().split(".")
    obj = sc
    parent = None
    parent_accessor = None
    for i, seg in enumerate(segments):
        m = _SEG.match(seg)
        if not m:
            raise ValueError(f"bad override path segment {seg!r}")
        name, index = m.group(1), m.group(2)
        last = i == len(segments) - 1
        if isinstance(obj, dict):
            if not last:
                obj = obj[name]
                continue
            obj[name] = raw.strip()
            return
        if not hasattr(obj, name):
            raise ValueError(f"override path {path!r}: no field {name!r}")
        if last and index is None:
            parser = _OVERRIDE_PARSERS.get(name)
            if parser is None:
                raise ValueError(f"field {name!r} is not overridable")
            value = parser(raw.strip())
            try:
                setattr(obj, name, value)
            except AttributeError:
                if parent is None:
                    raise ValueError(f"field {name!r} is not overridable") from None
                _assign(parent, parent_accessor, replace(obj, **{name: value}))
            return
        parent, parent_accessor = obj, ("attr", name)
        obj = getattr(obj, name)
        if index is not None:
            parent, parent_accessor = obj, ("key", int(index))
            obj = obj[int(index)]
    raise ValueError(f"override path {path!r} did not reach a field")


def apply_flow_override(sc: Scenario, flow_id: str, **changes) -> None:
    """Replace fields of a frozen FlowSpec in place in the scenario."""
    for i, f in enumerate(sc.flows):
        if f.flow_id == flow_id:
            sc.flows[i] = replace(f, **changes)
            return
    raise ValueError(f"unknown flow {flow_id!r}")
