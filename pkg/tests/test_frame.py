import pytest

from nrsim.frame import (
    FRAME_DURATION_NS,
    NS_PER_MS,
    BandwidthTooNarrow,
    InvalidAddress,
    InvalidNumerology,
    SlotAddress,
    address_of,
    derive_frame_structure,
    next_slot,
    rbg_count,
    rbg_size,
    slot_index,
    slot_start_time,
)

MHZ = 1_000_000

# (mu, scs kHz, slots/subframe, slot length us) for normal CP.
NUMEROLOGY_TABLE = [
    (0, 15, 1, 1000.0),
    (1, 30, 2, 500.0),
    (2, 60, 4, 250.0),
    (3, 120, 8, 125.0),
    (4, 240, 16, 62.5),
    (5, 480, 32, 31.25),
]


@pytest.mark.parametrize("mu,scs_khz,n,slot_us", NUMEROLOGY_TABLE)
def test_numerology_table(mu, scs_khz, n, slot_us):
    fs = derive_frame_structure(mu, 400 * MHZ)
    assert fs.scs_hz == scs_khz * 1000
    assert fs.slots_per_subframe == n
    assert fs.slot_duration_ns == int(slot_us * 1000)
    assert fs.symbols_per_slot == 14
    assert fs.subcarriers_per_prb == 12
    assert fs.subframes_per_frame == 10
    assert fs.frame_duration_ns == 10 * NS_PER_MS


def test_slot_duration_divides_subframe_exactly():
    for mu in range(6):
        fs = derive_frame_structure(mu, 400 * MHZ)
        assert fs.slot_duration_ns * fs.slots_per_subframe == NS_PER_MS


def test_prb_counts():
    # floor(BW / (SCS*12)) evaluated by hand
    assert derive_frame_structure(3, 400 * MHZ).prb_count == 277
    assert derive_frame_structure(0, 20 * MHZ).prb_count == 111
    assert derive_frame_structure(2, 40 * MHZ).prb_count == 55
    assert derive_frame_structure(2, 100 * MHZ).prb_count == 138
    assert derive_frame_structure(3, 100 * MHZ).prb_count == 69
    assert derive_frame_structure(0, 100 * MHZ).prb_count == 555


def test_prb_count_non_increasing_in_mu():
    for bw in (20 * MHZ, 100 * MHZ, 400 * MHZ):
        counts = [derive_frame_structure(mu, bw).prb_count for mu in range(6)]
        assert counts == sorted(counts, reverse=True)


def test_mu0_20mhz_example():
    fs = derive_frame_structure(0, 20 * MHZ)
    assert fs.slots_per_subframe == 1
    assert fs.slot_duration_ns == 1_000_000
    assert fs.scs_hz == 15_000
    # 1 ms / 14 rounded, about 71.43 us including CP
    assert fs.symbol_duration_ns == 71_429


def test_mu5_shape():
    fs = derive_frame_structure(5, 400 * MHZ)
    assert fs.slots_per_subframe == 32
    assert fs.slot_duration_ns == 31_250
    assert fs.scs_hz == 480_000


def test_derive_errors():
    with pytest.raises(InvalidNumerology):
        derive_frame_structure(6, 100 * MHZ)
    with pytest.raises(InvalidNumerology):
        derive_frame_structure(-1, 100 * MHZ)
    with pytest.raises(BandwidthTooNarrow):
        # one PRB at mu=5 needs 480e3*12 Hz
        derive_frame_structure(5, 1 * MHZ)


def test_symbol_offsets_no_drift():
    for mu in range(6):
        fs = derive_frame_structure(mu, 100 * MHZ)
        offs = [fs.symbol_offset_ns(k) for k in range(15)]
        assert offs[0] == 0
        assert offs[14] == fs.slot_duration_ns
        assert all(b > a for a, b in zip(offs, offs[1:]))
        # each boundary within half a ns of the exact rational
        for k, o in enumerate(offs):
            assert abs(o * 14 - fs.slot_duration_ns * k) <= 7


def test_symbol_offsets_mu3_values():
    fs = derive_frame_structure(3, 400 * MHZ)
    # 125000*k/14 rounded half-even
    assert fs.symbol_offset_ns(1) == 8929
    assert fs.symbol_offset_ns(5) == 44643
    assert fs.symbol_offset_ns(13) == 116_071


def test_slot_start_time_examples():
    fs1 = derive_frame_structure(1, 100 * MHZ)
    assert slot_start_time(fs1, SlotAddress(0, 0, 0)) == 0
    assert slot_start_time(fs1, SlotAddress(0, 1, 0)) == 1_000_000
    assert slot_start_time(fs1, SlotAddress(1, 0, 0)) == FRAME_DURATION_NS
    fs3 = derive_frame_structure(3, 100 * MHZ)
    assert slot_start_time(fs3, SlotAddress(0, 0, 3)) == 3 * 125_000


def test_slot_start_time_invalid():
    fs = derive_frame_structure(2, 100 * MHZ)
    with pytest.raises(InvalidAddress):
        slot_start_time(fs, SlotAddress(0, 0, 4))
    with pytest.raises(InvalidAddress):
        slot_start_time(fs, SlotAddress(0, 10, 0))
    with pytest.raises(InvalidAddress):
        slot_start_time(fs, SlotAddress(-1, 0, 0))


def test_next_slot_carries():
    fs2 = derive_frame_structure(2, 100 * MHZ)
    assert next_slot(fs2, SlotAddress(0, 0, 3)) == SlotAddress(0, 1, 0)
    fs0 = derive_frame_structure(0, 20 * MHZ)
    assert next_slot(fs0, SlotAddress(0, 9, 0)) == SlotAddress(1, 0, 0)
    fs3 = derive_frame_structure(3, 100 * MHZ)
    assert next_slot(fs3, SlotAddress(5, 4, 2)) == SlotAddress(5, 4, 3)


def test_slot_walk_exhaustive():
    # over >= 3 frames for every mu: start times injective, stepping by
    # exactly one slot duration, and index round-trips.
    for mu in range(6):
        fs = derive_frame_structure(mu, 100 * MHZ)
        addr = SlotAddress(0, 0, 0)
        seen = set()
        for idx in range(3 * fs.slots_per_frame):
            t = slot_start_time(fs, addr)
            assert t not in seen
            seen.add(t)
            assert slot_index(fs, addr) == idx
            assert address_of(fs, idx) == addr
            nxt = next_slot(fs, addr)
            assert slot_start_time(fs, nxt) - t == fs.slot_duration_ns
            addr = nxt


def test_rbg_size_thresholds():
    assert rbg_size(24) == 2
    assert rbg_size(36) == 2
    assert rbg_size(37) == 4
    assert rbg_size(55) == 4
    assert rbg_size(72) == 4
    assert rbg_size(73) == 8
    assert rbg_size(144) == 8
    assert rbg_size(145) == 16
    assert rbg_size(277) == 16
    assert rbg_count(55) == 14
    assert rbg_count(277) == 18  # ceil(277/16)


def test_partial_last_rbg():
    fs = derive_frame_structure(2, 100 * MHZ)  # 138 PRB -> rbg size 8, 18 groups
    assert fs.rbg_size == 8
    assert fs.rbg_count == 18
    assert fs.prbs_in_rbg(0) == 8
    assert fs.prbs_in_rbg(17) == 138 - 17 * 8
    assert fs.prbs_in_bitmap((1 << 18) - 1) == 138
