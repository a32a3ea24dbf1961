"""Abstracted per-BWP PHY: log-distance channel, CQI/MCS mapping, transport
block sizing, configurable error model, and the slot/TTI transmit timeline.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources

from .frame import FrameStructure

# Flexible TDD slot layout: DL ctrl on the first symbol, UL ctrl on the last,
# symbols 1..12 form the data region.
DL_CTRL_SYMBOL = 0
UL_CTRL_SYMBOL = 13
DATA_FIRST_SYMBOL = 1
DATA_SYMBOLS = 12

CQI_MAX = 15
MCS_MAX = 28


class PhyError(ValueError):
    pass


class NonPositiveDistance(PhyError):
    pass


class InvalidMcs(PhyError):
    pass


class OverlapError(PhyError):
    """Two TTIs of one slot overlap in both time and frequency."""


class ConfigError(PhyError):
    pass


@dataclass(frozen=True)
class ChannelParams:
    """Log-distance path loss: PL(d) = ref_loss + 10*n*log10(d/d0)."""

    ref_loss_db: float = 60.0
    ref_distance_m: float = 1.0
    pathloss_exp: float = 2.0
    noise_dbm: float = -90.0
    interference_dbm: float | None = None  # None = interference-free


def compute_sinr(tx_power_dbm: float, distance_m: float, channel: ChannelParams) -> float:
    """SINR in dB at a UE `distance_m` away from the transmitter."""
    if distance_m <= 0:
        raise NonPositiveDistance(f"distance must be > 0, got {distance_m}")
    pl = channel.ref_loss_db + 10.0 * channel.pathloss_exp * math.log10(
        distance_m / channel.ref_distance_m
    )
    floor_dbm = channel.noise_dbm
    if channel.interference_dbm is not None:
        floor_dbm = 10.0 * math.log10(
            10 ** (channel.noise_dbm / 10.0) + 10 ** (channel.interference_dbm / 10.0)
        )
    return tx_power_dbm - pl - floor_dbm


def sinr_to_cqi(sinr_db: float) -> int:
    """Piecewise-constant monotone map; 2.4 dB buckets, edge goes to the
    higher bucket, clamped to 0..15."""
    return max(0, min(CQI_MAX, math.floor((sinr_db + 6.0) / 2.4)))


def mcs_for_cqi(cqi: int) -> int:
    """Monotone CQI 0..15 -> MCS 0..28."""
    if not 0 <= cqi <= CQI_MAX:
        raise PhyError(f"cqi {cqi} outside 0..15")
    return (cqi * MCS_MAX) // CQI_MAX


class McsTable:
    """Spectral efficiency (bits per resource element) per MCS index."""

    def __init__(self, efficiencies: list[float]):
        if len(efficiencies) != MCS_MAX + 1:
            raise ConfigError(f"MCS table needs {MCS_MAX + 1} rows, got {len(efficiencies)}")
        if any(b <= a for a, b in zip(efficiencies, efficiencies[1:])):
            raise ConfigError("MCS efficiencies must be strictly increasing")
        self.efficiencies = tuple(efficiencies)

    def efficiency(self, mcs: int) -> float:
        if not 0 <= mcs <= MCS_MAX:
            raise InvalidMcs(f"mcs {mcs} outside 0..{MCS_MAX}")
        return self.efficiencies[mcs]

    @classmethod
    def from_csv(cls, path) -> "McsTable":
        effs: dict[int, float] = {}
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                effs[int(row["mcs"])] = float(row["efficiency_bits_per_re"])
        if sorted(effs) != list(range(MCS_MAX + 1)):
            raise ConfigError(f"MCS table {path} must cover indices 0..{MCS_MAX}")
        return cls([effs[m] for m in range(MCS_MAX + 1)])

    @classmethod
    def default(cls) -> "McsTable":
        with resources.as_file(resources.files("nrsim.data") / "mcs_table.csv") as p:
            return cls.from_csv(p)


def compute_tbs(mcs: int, num_symbols: int, num_prbs: int, table: McsTable) -> int:
    """Transport block size in bytes for an allocation of
    num_symbols x num_prbs resource elements at the given MCS."""
    if num_symbols < 1 or num_prbs < 1:
        raise PhyError("allocation needs at least one symbol and one PRB")
    eta = table.efficiency(mcs)
    return int(num_symbols * num_prbs * 12 * eta // 8)


@dataclass(frozen=True)
class ErrorModel:
    """Transport-block error decision.

    mode "none": never errs. mode "bernoulli": errs with probability p,
    drawn from the caller-supplied stream. mode "threshold": errs iff
    sinr < sinr_min(mcs) = threshold_base + threshold_step * mcs.
    """

    mode: str = "none"
    p: float = 0.0
    threshold_base_db: float = -6.0
    threshold_step_db: float = 1.0

    def __post_init__(self):
        if self.mode not in ("none", "bernoulli", "threshold"):
            raise ConfigError(f"unknown error model {self.mode!r}")
        if self.mode == "bernoulli" and not 0.0 <= self.p <= 1.0:
            raise ConfigError(f"bernoulli p must be in [0,1], got {self.p}")

    def sinr_min_db(self, mcs: int) -> float:
        return self.threshold_base_db + self.threshold_step_db * mcs

    def tb_error(self, mcs: int, sinr_db: float, rng) -> bool:
        if self.mode == "none":
            return False
        if self.mode == "bernoulli":
            return bool(rng.random() < self.p)
        return sinr_db < self.sinr_min_db(mcs)


@dataclass
class PhyTimingConfig:
    """Slot-denominated MAC/PHY processing latencies.

    The gNB MAC-to-PHY delay and the L1L2 data latency are one mechanism:
    the scheduler works `l1l2_data_latency` slots ahead of the air.
    `ue_decode_latency` is either a fixed duration in ns or the string
    "2xslot" (twice the slot length of the owning BWP).
    """

    l1l2_ctrl_latency: int = 2
    l1l2_data_latency: int = 2
    k2: int = 2
    ue_decode_latency: int | str = 100_000

    def __post_init__(self):
        if not 0 <= self.k2 <= 32:
            raise ConfigError(f"k2 must be in 0..32, got {self.k2}")
        if self.l1l2_ctrl_latency < 0 or self.l1l2_data_latency < 0:
            raise ConfigError("latencies must be >= 0")
        if isinstance(self.ue_decode_latency, str):
            if self.ue_decode_latency != "2xslot":
                raise ConfigError(f"bad decode latency {self.ue_decode_latency!r}")
        elif self.ue_decode_latency < 0:
            raise ConfigError("decode latency must be >= 0")

    @property
    def gnb_mac_to_phy_delay(self) -> int:
        return self.l1l2_data_latency

    def decode_latency_ns(self, fs: FrameStructure) -> int:
        if self.ue_decode_latency == "2xslot":
            return 2 * fs.slot_duration_ns
        return int(self.ue_decode_latency)


@dataclass(frozen=True)
class LinkState:
    """Static link abstraction for one (UE, BWP) pair."""

    distance_m: float
    sinr_db: float
    cqi: int
    mcs: int

    @classmethod
    def from_channel(
        cls, tx_power_dbm: float, distance_m: float, channel: ChannelParams
    ) -> "LinkState":
        sinr = compute_sinr(tx_power_dbm, distance_m, channel)
        cqi = sinr_to_cqi(sinr)
        return cls(distance_m=distance_m, sinr_db=sinr, cqi=cqi, mcs=mcs_for_cqi(cqi))


@dataclass(frozen=True)
class TtiTimeline:
    """Absolute timestamps for one variable TTI inside a slot."""

    entry: object  # the VarTtiAllocInfo being transmitted
    start_ns: int
    end_ns: int
    mac_rx_ns: int  # end + decode latency (data entries only)


@dataclass(frozen=True)
class SlotTimeline:
    start_ns: int
    end_ns: int
    ttis: tuple[TtiTimeline, ...]


def slot_timeline(
    fs: FrameStructure, slot_start_ns: int, alloc, decode_ns: int
) -> SlotTimeline:
    """Timestamps for every TTI of a SlotAllocInfo, with overlap checks.

    Data entries must sit inside symbols 1..12 and be pairwise disjoint in
    the (symbol range x RBG bitmap) plane; the MAC sees a received block at
    TTI end + decode latency.
    """
    rects = []
    ttis = []
    for entry in alloc.entries:
        dci = entry.dci
        if entry.kind == "ctrl":
            if dci.start_symbol not in (DL_CTRL_SYMBOL, UL_CTRL_SYMBOL):
                raise OverlapError(f"ctrl entry pinned off symbols 0/13: {dci.start_symbol}")
        else:
            first, last = dci.start_symbol, dci.start_symbol + dci.num_symbols - 1
            if first < DATA_FIRST_SYMBOL or last > DATA_FIRST_SYMBOL + DATA_SYMBOLS - 1:
                raise OverlapError(
                    f"data TTI symbols {first}..{last} outside the data region"
                )
            for ofirst, olast, obitmap in rects:
                if first <= olast and ofirst <= last and (obitmap & dci.rbg_bitmap):
                    raise OverlapError("data TTIs overlap in time and frequency")
            rects.append((first, last, dci.rbg_bitmap))
        start = slot_start_ns + fs.symbol_offset_ns(dci.start_symbol)
        end = slot_start_ns + fs.symbol_offset_ns(dci.start_symbol + dci.num_symbols)
        ttis.append(
            TtiTimeline(
                entry=entry,
                start_ns=start,
                end_ns=end,
                mac_rx_ns=end + decode_ns if entry.kind == "data" else end,
            )
        )
    return SlotTimeline(
        start_ns=slot_start_ns,
        end_ns=slot_start_ns + fs.slot_duration_ns,
        ttis=tuple(ttis),
    )
