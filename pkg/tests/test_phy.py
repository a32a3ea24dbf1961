import numpy as np
import pytest

from nrsim.frame import derive_frame_structure
from nrsim.phy import (
    ChannelParams,
    ConfigError,
    ErrorModel,
    InvalidMcs,
    LinkState,
    McsTable,
    NonPositiveDistance,
    OverlapError,
    PhyTimingConfig,
    compute_sinr,
    compute_tbs,
    mcs_for_cqi,
    sinr_to_cqi,
    slot_timeline,
)
from nrsim.sched import Dci, SlotAllocInfo, VarTtiAllocInfo

MHZ = 1_000_000
FLAT_ONE = McsTable([1.0 + m * 1e-6 for m in range(29)])  # eta ~ 1.0 everywhere


def rng(seed=1):
    return np.random.Generator(np.random.Philox(seed))


def test_compute_sinr_reference_distance():
    ch = ChannelParams(ref_loss_db=60.0, ref_distance_m=1.0, pathloss_exp=2.0, noise_dbm=-90.0)
    assert compute_sinr(23.0, 1.0, ch) == pytest.approx(53.0)


def test_compute_sinr_log_distance_law():
    ch = ChannelParams(ref_loss_db=60.0, ref_distance_m=1.0, pathloss_exp=2.0, noise_dbm=-90.0)
    at_d0 = compute_sinr(23.0, 1.0, ch)
    at_10d0 = compute_sinr(23.0, 10.0, ch)
    assert at_d0 - at_10d0 == pytest.approx(20.0)


def test_compute_sinr_interference_floor():
    ch = ChannelParams(noise_dbm=-90.0, interference_dbm=-90.0)
    quiet = ChannelParams(noise_dbm=-90.0)
    # equal-power interference raises the floor by ~3 dB
    assert compute_sinr(23.0, 1.0, quiet) - compute_sinr(23.0, 1.0, ch) == pytest.approx(
        10 * np.log10(2), abs=1e-9
    )


def test_compute_sinr_rejects_nonpositive_distance():
    with pytest.raises(NonPositiveDistance):
        compute_sinr(23.0, 0.0, ChannelParams())


def test_sinr_to_cqi_clamps_and_edges():
    assert sinr_to_cqi(-30.0) == 0
    assert sinr_to_cqi(60.0) == 15
    # bucket edge belongs to the higher bucket
    assert sinr_to_cqi(-6.0) == 0
    assert sinr_to_cqi(-3.6) == 1
    assert sinr_to_cqi(-3.6 + 1e-9) == 1
    vals = [sinr_to_cqi(s) for s in np.arange(-40, 60, 0.25)]
    assert vals == sorted(vals)


def test_mcs_for_cqi_monotone_full_range():
    ms = [mcs_for_cqi(c) for c in range(16)]
    assert ms == sorted(ms)
    assert ms[0] == 0
    assert ms[-1] == 28


def test_default_mcs_table():
    t = McsTable.default()
    assert len(t.efficiencies) == 29
    assert t.efficiency(0) == pytest.approx(0.2)
    assert t.efficiency(28) == pytest.approx(5.5)
    with pytest.raises(InvalidMcs):
        t.efficiency(29)


def test_compute_tbs_examples():
    # eta=1: floor(num_symbols * num_prbs * 12 / 8)
    assert compute_tbs(0, 1, 1, FLAT_ONE) == 1
    assert compute_tbs(0, 1, 55, FLAT_ONE) == 82
    assert compute_tbs(0, 3, 1, FLAT_ONE) == 4
    with pytest.raises(Exception):
        compute_tbs(0, 1, 0, FLAT_ONE)
    with pytest.raises(Exception):
        compute_tbs(0, 0, 1, FLAT_ONE)


def test_compute_tbs_monotone_grid():
    t = McsTable.default()
    for mcs in (0, 7, 14, 21, 28):
        for s in range(1, 13):
            for p in (1, 10, 100):
                base = compute_tbs(mcs, s, p, t)
                if mcs < 28:
                    assert compute_tbs(mcs + 1, s, p, t) >= base
                if s < 12:
                    assert compute_tbs(mcs, s + 1, p, t) >= base
                assert compute_tbs(mcs, s, p + 1, t) >= base


def test_tbs_at_full_band():
    fs = derive_frame_structure(2, 100 * MHZ)  # 138 PRB
    t = McsTable.default()
    assert compute_tbs(28, 1, fs.prb_count, t) == 1138  # floor(138*12*5.5/8)
    fs3 = derive_frame_structure(3, 100 * MHZ)  # 69 PRB
    assert compute_tbs(28, 1, fs3.prb_count, t) == 569


def test_error_model_none_and_degenerate():
    r = rng()
    assert ErrorModel("none").tb_error(10, -100.0, r) is False
    assert ErrorModel("bernoulli", p=0.0).tb_error(10, 0.0, r) is False
    assert ErrorModel("bernoulli", p=1.0).tb_error(10, 0.0, r) is True


def test_error_model_threshold():
    em = ErrorModel("threshold", threshold_base_db=-6.0, threshold_step_db=1.0)
    assert em.sinr_min_db(18) == 12.0
    assert em.tb_error(18, 10.0, rng()) is True
    assert em.tb_error(18, 12.0, rng()) is False


def test_error_model_deterministic_given_seed():
    em = ErrorModel("bernoulli", p=0.5)
    seq1 = [em.tb_error(0, 0.0, r) for r in [rng(7)] for _ in range(64)]
    seq2 = [em.tb_error(0, 0.0, r) for r in [rng(7)] for _ in range(64)]
    assert seq1 == seq2


def test_error_model_config_validation():
    with pytest.raises(ConfigError):
        ErrorModel("weird")
    with pytest.raises(ConfigError):
        ErrorModel("bernoulli", p=1.5)


def test_timing_config():
    t = PhyTimingConfig()
    assert (t.l1l2_ctrl_latency, t.l1l2_data_latency, t.k2) == (2, 2, 2)
    assert t.ue_decode_latency == 100_000
    assert t.gnb_mac_to_phy_delay == t.l1l2_data_latency
    fs = derive_frame_structure(2, 100 * MHZ)
    assert PhyTimingConfig(ue_decode_latency="2xslot").decode_latency_ns(fs) == 500_000
    with pytest.raises(ConfigError):
        PhyTimingConfig(k2=33)
    with pytest.raises(ConfigError):
        PhyTimingConfig(ue_decode_latency="3xslot")


def test_link_state_monotone_in_distance():
    ch = ChannelParams()
    near = LinkState.from_channel(23.0, 1.0, ch)
    far = LinkState.from_channel(23.0, 200.0, ch)
    assert near.sinr_db > far.sinr_db
    assert near.cqi >= far.cqi
    assert near.mcs >= far.mcs
    assert near.cqi == 15 and near.mcs == 28


def _alloc(entries):
    a = SlotAllocInfo(addr_index=0)
    a.entries.extend(entries)
    return a


def _data(ue, start, num, bitmap=0b1):
    return VarTtiAllocInfo("data", Dci(ue, "dl", start, num, bitmap, 10, 100))


def test_slot_timeline_empty_slot():
    fs = derive_frame_structure(3, 400 * MHZ)
    tl = slot_timeline(fs, 0, _alloc([]), decode_ns=100_000)
    assert tl.start_ns == 0
    assert tl.end_ns == fs.slot_duration_ns
    assert tl.ttis == ()


def test_slot_timeline_dl_tti_symbols_1_to_4_mu3():
    fs = derive_frame_structure(3, 400 * MHZ)
    tl = slot_timeline(fs, 0, _alloc([_data("u1", 1, 4)]), decode_ns=100_000)
    (tti,) = tl.ttis
    assert tti.start_ns == 8929  # boundary of symbol 1
    assert tti.end_ns == 44643  # boundary of symbol 5
    assert tti.mac_rx_ns == 44643 + 100_000


def test_slot_timeline_overlap_detection():
    fs = derive_frame_structure(3, 400 * MHZ)
    # same bitmap, crossing symbol ranges
    bad = _alloc([_data("u1", 1, 4, 0b11), _data("u2", 4, 2, 0b10)])
    with pytest.raises(OverlapError):
        slot_timeline(fs, 0, bad, 0)
    # disjoint bitmaps may share symbols
    ok = _alloc([_data("u1", 1, 4, 0b01), _data("u2", 1, 4, 0b10)])
    assert len(slot_timeline(fs, 0, ok, 0).ttis) == 2
    # data region violation
    with pytest.raises(OverlapError):
        slot_timeline(fs, 0, _alloc([_data("u1", 12, 2)]), 0)
