"""NR flexible frame structure: every timing and grid quantity derived from
a numerology index and a channel bandwidth.

All times are integer nanoseconds. Slot durations for mu 0..5 divide 1 ms
exactly; symbol boundaries are rationals (slot_duration * k / 14) rounded
half-even per boundary, never accumulated, so symbol timestamps cannot drift.
"""

from __future__ import annotations

from dataclasses import dataclass, field

NS_PER_MS = 1_000_000
SYMBOLS_PER_SLOT = 14
SUBCARRIERS_PER_PRB = 12
SUBFRAMES_PER_FRAME = 10
FRAME_DURATION_NS = 10 * NS_PER_MS
BASE_SCS_HZ = 15_000
MU_MIN = 0
MU_MAX = 5


class FrameError(ValueError):
    """Base error for frame arithmetic."""


class InvalidNumerology(FrameError):
    pass


class BandwidthTooNarrow(FrameError):
    pass


class InvalidAddress(FrameError):
    pass


def _round_half_even(num: int, den: int) -> int:
    """num/den rounded to the nearest integer, ties to even."""
    q, r = divmod(num, den)
    if 2 * r > den or (2 * r == den and q % 2 == 1):
        q += 1
    return q


# RBG sizing thresholds by carrier size in PRBs (config-1 style table:
# 1-36 -> 2, 37-72 -> 4, 73-144 -> 8, 145+ -> 16).
_RBG_THRESHOLDS = ((36, 2), (72, 4), (144, 8))


def rbg_size(prb_count: int) -> int:
    """PRBs per resource block group for a carrier of `prb_count` PRBs."""
    if prb_count < 1:
        raise BandwidthTooNarrow(f"prb_count must be >= 1, got {prb_count}")
    for limit, size in _RBG_THRESHOLDS:
        if prb_count <= limit:
            return size
    return 16


def rbg_count(prb_count: int) -> int:
    size = rbg_size(prb_count)
    return -(-prb_count // size)


@dataclass(frozen=True)
class FrameStructure:
    """Immutable timing/grid quantities for one (mu, bandwidth) pair."""

    mu: int
    bandwidth_hz: int
    slots_per_subframe: int
    slot_duration_ns: int
    symbol_duration_ns: int
    scs_hz: int
    prb_count: int
    symbols_per_slot: int = SYMBOLS_PER_SLOT
    subcarriers_per_prb: int = SUBCARRIERS_PER_PRB
    subframes_per_frame: int = SUBFRAMES_PER_FRAME
    frame_duration_ns: int = FRAME_DURATION_NS
    symbol_offsets_ns: tuple[int, ...] = field(default=(), repr=False)

    @property
    def slots_per_frame(self) -> int:
        return self.slots_per_subframe * self.subframes_per_frame

    @property
    def rbg_size(self) -> int:
        return rbg_size(self.prb_count)

    @property
    def rbg_count(self) -> int:
        return rbg_count(self.prb_count)

    def prbs_in_rbg(self, rbg: int) -> int:
        """PRBs covered by RBG `rbg`; the last group may be partial."""
        lo = rbg * self.rbg_size
        hi = min(lo + self.rbg_size, self.prb_count)
        if lo >= self.prb_count:
            raise FrameError(f"rbg {rbg} outside grid of {self.rbg_count} groups")
        return hi - lo

    def prbs_in_bitmap(self, bitmap: int) -> int:
        total = 0
        for g in range(self.rbg_count):
            if bitmap >> g & 1:
                total += self.prbs_in_rbg(g)
        return total

    def symbol_offset_ns(self, k: int) -> int:
        """Offset of symbol boundary k (0..14) from the slot start."""
        if not 0 <= k <= SYMBOLS_PER_SLOT:
            raise FrameError(f"symbol boundary {k} outside 0..14")
        return self.symbol_offsets_ns[k]


def derive_frame_structure(mu: int, bandwidth_hz: int) -> FrameStructure:
    """Derive the full frame structure from a numerology and a bandwidth."""
    if not isinstance(mu, int) or not MU_MIN <= mu <= MU_MAX:
        raise InvalidNumerology(f"mu must be an integer in 0..5, got {mu!r}")
    n = 2**mu
    scs_hz = n * BASE_SCS_HZ
    prb_count = bandwidth_hz // (scs_hz * SUBCARRIERS_PER_PRB)
    if prb_count < 1:
        raise BandwidthTooNarrow(
            f"{bandwidth_hz} Hz holds no PRB at mu={mu} (needs >= {scs_hz * 12} Hz)"
        )
    slot_ns = NS_PER_MS // n
    offsets = tuple(
        _round_half_even(slot_ns * k, SYMBOLS_PER_SLOT) for k in range(SYMBOLS_PER_SLOT)
    ) + (slot_ns,)
    return FrameStructure(
        mu=mu,
        bandwidth_hz=bandwidth_hz,
        slots_per_subframe=n,
        slot_duration_ns=slot_ns,
        symbol_duration_ns=offsets[1],
        scs_hz=scs_hz,
        prb_count=prb_count,
        symbol_offsets_ns=offsets,
    )


@dataclass(frozen=True, order=True)
class SlotAddress:
    """(frame, subframe, slot) position; slot range depends on the numerology."""

    frame: int
    subframe: int
    slot: int


def validate_address(fs: FrameStructure, addr: SlotAddress) -> None:
    if (
        addr.frame < 0
        or not 0 <= addr.subframe < SUBFRAMES_PER_FRAME
        or not 0 <= addr.slot < fs.slots_per_subframe
    ):
        raise InvalidAddress(f"{addr} invalid for mu={fs.mu}")


def slot_start_time(fs: FrameStructure, addr: SlotAddress) -> int:
    """Absolute start timestamp (ns) of the addressed slot."""
    validate_address(fs, addr)
    return (
        addr.frame * FRAME_DURATION_NS
        + addr.subframe * NS_PER_MS
        + addr.slot * fs.slot_duration_ns
    )


def next_slot(fs: FrameStructure, addr: SlotAddress) -> SlotAddress:
    """Lexicographic successor with carry slot -> subframe -> frame."""
    validate_address(fs, addr)
    slot = addr.slot + 1
    subframe, frame = addr.subframe, addr.frame
    if slot == fs.slots_per_subframe:
        slot = 0
        subframe += 1
        if subframe == SUBFRAMES_PER_FRAME:
            subframe = 0
            frame += 1
    return SlotAddress(frame, subframe, slot)


def slot_index(fs: FrameStructure, addr: SlotAddress) -> int:
    """Absolute slot counter since t=0."""
    validate_address(fs, addr)
    return (addr.frame * SUBFRAMES_PER_FRAME + addr.subframe) * fs.slots_per_subframe + addr.slot


def address_of(fs: FrameStructure, index: int) -> SlotAddress:
    if index < 0:
        raise InvalidAddress(f"slot index {index} negative")
    subframes, slot = divmod(index, fs.slots_per_subframe)
    frame, subframe = divmod(subframes, SUBFRAMES_PER_FRAME)
    return SlotAddress(frame, subframe, slot)
