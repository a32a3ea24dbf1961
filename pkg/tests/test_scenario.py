from pathlib import Path

import pytest

from nrsim.scenario import (
    ParseError,
    ValidationError,
    apply_override,
    dumps,
    load,
    loads,
    parse_bytes,
    parse_duration_ns,
    parse_hz,
    parse_rate_bps,
    scenario_hash,
)

SCENARIOS = Path(__file__).parent.parent / "scenarios"

MINIMAL = """
seed = 3
stop = 10 ms

[deployment]
total_bandwidth = 100 MHz

[qos q]

[bwp b0]
mu = 2
bandwidth = 40 MHz

[routing]
q = b0

[ue u1]
distance = 5 m

[flow f1]
direction = ul
qos = q
src = u1
dst = remote
rate = 1.6 Mb/s
pkt_size = 500 B
stop = 9 ms
"""


def test_unit_parsers():
    assert parse_duration_ns("2.5 ms") == 2_500_000
    assert parse_duration_ns("100 us") == 100_000
    assert parse_duration_ns("1 s") == 10**9
    assert parse_duration_ns("0") == 0
    assert parse_hz("100 MHz") == 100_000_000
    assert parse_hz("40MHz") == 40_000_000
    assert parse_hz("15 kHz") == 15_000
    assert parse_rate_bps("1.6 Mb/s") == 1_600_000
    assert parse_rate_bps("10 Gb/s") == 10**10
    assert parse_bytes("500 B") == 500
    assert parse_bytes("1 kB") == 1000
    with pytest.raises(ValueError):
        parse_duration_ns("5 parsecs")


def test_minimal_scenario_fills_defaults():
    sc = loads(MINIMAL)
    assert sc.seed == 3
    assert sc.stop_ns == 10_000_000
    part = sc.deployment.parts[0]
    assert part.policy.access == "tdma"
    assert part.timing.k2 == 2
    assert part.timing.ue_decode_latency == 100_000
    assert sc.channel.noise_dbm == -90.0
    assert sc.core.capacity_bps == 10**10
    assert sc.flows[0].pkt_bytes == 500


def test_parse_error_has_line():
    with pytest.raises(ParseError) as e:
        loads("seed = 1\nstop = 1 s\nwat\n")
    assert e.value.line == 3


def test_unknown_section_rejected():
    with pytest.raises(ParseError):
        loads("[nonsense]\n")


def test_unknown_keys_collected():
    bad = MINIMAL.replace("[ue u1]\ndistance = 5 m", "[ue u1]\ndistance = 5 m\ncolor = red")
    bad = bad.replace("mu = 2", "mu = 2\nshiny = yes")
    with pytest.raises(ValidationError) as e:
        loads(bad)
    msgs = "\n".join(e.value.errors)
    assert "color" in msgs and "shiny" in msgs  # all collected, not first-fail


def test_budget_violation_reported():
    bad = MINIMAL.replace("bandwidth = 40 MHz", "bandwidth = 140 MHz")
    with pytest.raises(ValidationError) as e:
        loads(bad)
    assert any("BudgetExceeded" in m for m in e.value.errors)


def test_flow_endpoint_validation():
    bad = MINIMAL.replace("dst = remote", "dst = elsewhere")
    with pytest.raises(ValidationError) as e:
        loads(bad)
    assert any("remote" in m for m in e.value.errors)


def test_round_trip_normalized_form():
    for name in ("sensors.scn", "one_ue_ul.scn", "two_bwp.scn", "school_ul.scn"):
        sc = load(SCENARIOS / name)
        again = loads(dumps(sc))
        assert again == sc
        assert scenario_hash(again) == scenario_hash(sc)


def test_shipped_sensor_scenario_matches_traffic_table():
    sc = load(SCENARIOS / "sensors.scn")
    sensor_flows = [f for f in sc.flows if f.qos_id == "sensor"]
    assert len(sensor_flows) == 6
    assert all(f.direction == "ul" for f in sensor_flows)
    assert all(f.rate_bps == 1_600_000 for f in sensor_flows)
    assert all(f.pkt_bytes == 500 for f in sensor_flows)
    # 500 B / 1.6 Mb/s = 2.5 ms inter-arrival
    assert sensor_flows[0].arrival_offset_ns(1) == 2_500_000


def test_override_dotted_paths():
    sc = loads(MINIMAL)
    apply_override(sc, "seed=7")
    assert sc.seed == 7
    apply_override(sc, "deployment.parts[0].timing.ue_decode_latency=0.5ms")
    assert sc.deployment.parts[0].timing.ue_decode_latency == 500_000
    apply_override(sc, "deployment.parts[0].timing.ue_decode_latency=2xslot")
    assert sc.deployment.parts[0].timing.ue_decode_latency == "2xslot"
    apply_override(sc, "deployment.parts[0].mu=3")
    assert sc.deployment.parts[0].mu == 3
    apply_override(sc, "deployment.routing.q=b0")
    assert sc.deployment.routing["q"] == "b0"
    apply_override(sc, "channel.noise_dbm=-95 dBm")
    assert sc.channel.noise_dbm == -95.0


def test_override_bad_paths():
    sc = loads(MINIMAL)
    with pytest.raises(ValueError):
        apply_override(sc, "deployment.partz[0].mu=3")
    with pytest.raises(ValueError):
        apply_override(sc, "no_equals_sign")
