import math
import random

import pytest

from blesentry.catalog import (
    builtin_attackers,
    builtin_devices,
    find_attacker,
    find_device,
    format_catalog,
    parse_catalog,
)
from blesentry.model import DeviceId, OperationKind, PacketKind, is_time_ordered
from blesentry.simulator import (
    AttackerModel,
    DeviceBehavior,
    NoModesForOperation,
    ResponseMode,
    SessionPlan,
    sample_response_time,
    serialize_session,
    session_ground_truth,
    simulate_session,
    verify_attack_delay_floor,
)

LEDBLE_READ_SIGMA = math.sqrt(9.72441e-14)


def ledble() -> DeviceBehavior:
    return find_device(builtin_devices(), "LEDBLE")


def three_mode_device() -> DeviceBehavior:
    return DeviceBehavior(
        id=DeviceId("tv-like", "AA:BB:CC:DD:EE:77"),
        read_handle=0x0016,
        write_handle=0x002C,
        read_modes=(
            ResponseMode(0.050, 1.5e-5, 0.894),
            ResponseMode(0.100, 1.5e-5, 0.065),
            ResponseMode(0.150, 1.5e-5, 0.041),
        ),
    )


def test_single_tight_mode_stays_in_measured_range():
    device = ledble()
    for seed in range(50):
        rng = random.Random(seed)
        value = sample_response_time(device, OperationKind.READ, rng)
        assert 0.030229 <= value <= 0.030231


def test_zero_sigma_mode_returns_the_mean_every_draw():
    device = DeviceBehavior(
        id=DeviceId("flat", "AA:BB:CC:DD:EE:88"),
        read_handle=1,
        write_handle=2,
        read_modes=(ResponseMode(0.042, 0.0, 1.0),),
    )
    rng = random.Random(3)
    assert all(
        sample_response_time(device, OperationKind.READ, rng) == 0.042 for _ in range(100)
    )


def test_three_mode_frequencies_follow_weights():
    device = three_mode_device()
    rng = random.Random(11)
    counts = {0.050: 0, 0.100: 0, 0.150: 0}
    n = 10_000
    for _ in range(n):
        value = sample_response_time(device, OperationKind.READ, rng)
        nearest = min(counts, key=lambda mean: abs(mean - value))
        counts[nearest] += 1
    for mode in device.read_modes:
        assert counts[mode.mean] / n == pytest.approx(mode.weight, abs=0.02)


def test_missing_operation_modes_raise():
    device = three_mode_device()  # has no write modes
    with pytest.raises(NoModesForOperation):
        sample_response_time(device, OperationKind.WRITE, random.Random(0))


def test_benign_single_read_session_layout():
    plan = SessionPlan(device=ledble(), n_reads=1, n_writes=0, seed=5)
    packets = simulate_session(plan)
    assert [p.kind for p in packets] == [
        PacketKind.ADVERTISING,
        PacketKind.CONNECT_REQUEST,
        PacketKind.ATT_REQUEST,
        PacketKind.ATT_RESPONSE,
        PacketKind.DISCONNECT,
    ]
    interval = packets[3].timestamp - packets[2].timestamp
    assert interval == pytest.approx(0.030230, abs=2e-6)
    assert is_time_ordered(packets)


def test_empty_plan_rejected():
    with pytest.raises(ValueError):
        SessionPlan(device=ledble(), n_reads=0, n_writes=0, seed=1)


def test_attacked_interval_within_tool_envelope():
    mirage = find_attacker(builtin_attackers(), "mirage")
    for seed in range(20):
        plan = SessionPlan(device=ledble(), n_reads=1, n_writes=0, attacker=mirage, seed=seed)
        packets = simulate_session(plan)
        interval = packets[3].timestamp - packets[2].timestamp
        assert 0.030230 + 0.0023 - 2e-6 <= interval <= 0.030230 + 0.0188 + 2e-6


def test_sessions_are_byte_identical_for_identical_plans():
    plan = SessionPlan(
        device=ledble(), n_reads=5, n_writes=5, attacker=builtin_attackers()[0], seed=321
    )
    first = serialize_session(simulate_session(plan))
    second = serialize_session(simulate_session(plan))
    assert first == second


def test_attacked_interval_exceeds_benign_draw_by_minimum_delays():
    for tool in builtin_attackers():
        for device in builtin_devices():
            plan = SessionPlan(device=device, n_reads=5, n_writes=5, attacker=tool, seed=17)
            truths = session_ground_truth(plan)
            for truth in truths:
                floor = truth.benign_seconds + tool.t1_min + tool.t2_min
                assert truth.response_time >= floor - 1e-6
                assert truth.relay_delay >= tool.min_delay


def test_every_request_has_exactly_one_matching_later_response():
    plan = SessionPlan(device=ledble(), n_reads=10, n_writes=10, seed=9)
    packets = simulate_session(plan)
    requests = [p for p in packets if p.kind is PacketKind.ATT_REQUEST]
    responses = [p for p in packets if p.kind is PacketKind.ATT_RESPONSE]
    assert len(requests) == len(responses) == 20
    for request in requests:
        matches = [
            r
            for r in responses
            if r.conn_id == request.conn_id
            and r.att.handle == request.att.handle
            and r.timestamp > request.timestamp
            and abs(r.timestamp - request.timestamp) < 0.1
        ]
        assert len(matches) == 1


def test_zero_sigma_intervals_equal_the_mean_exactly():
    device = DeviceBehavior(
        id=DeviceId("flat", "AA:BB:CC:DD:EE:88"),
        read_handle=1,
        write_handle=2,
        read_modes=(ResponseMode(0.03023, 0.0, 1.0),),
    )
    plan = SessionPlan(device=device, n_reads=10, n_writes=0, seed=2)
    packets = simulate_session(plan)
    intervals = [
        rsp.timestamp - req.timestamp
        for req, rsp in zip(packets[2:-1:2], packets[3:-1:2])
    ]
    assert intervals == [0.03023] * 10


def test_ground_truth_matches_observable_intervals():
    plan = SessionPlan(
        device=ledble(), n_reads=3, n_writes=3, attacker=builtin_attackers()[1], seed=77
    )
    packets = simulate_session(plan)
    truths = session_ground_truth(plan)
    requests = [p for p in packets if p.kind is PacketKind.ATT_REQUEST]
    responses = [p for p in packets if p.kind is PacketKind.ATT_RESPONSE]
    for truth, req, rsp in zip(truths, requests, responses):
        assert truth.request_ts == req.timestamp
        assert truth.response_ts == rsp.timestamp
        assert truth.response_time == rsp.timestamp - req.timestamp


def test_delay_floor_validator_accepts_generated_traces():
    mirage = find_attacker(builtin_attackers(), "mirage")
    plan = SessionPlan(device=ledble(), n_reads=10, n_writes=10, attacker=mirage, seed=4)
    packets = simulate_session(plan)
    assert verify_attack_delay_floor(plan, packets) == []


def test_delay_floor_validator_rejects_foreign_traces():
    mirage = find_attacker(builtin_attackers(), "mirage")
    plan = SessionPlan(device=ledble(), n_reads=2, n_writes=0, attacker=mirage, seed=4)
    other = SessionPlan(device=ledble(), n_reads=2, n_writes=0, attacker=mirage, seed=5)
    with pytest.raises(ValueError):
        verify_attack_delay_floor(plan, simulate_session(other))


# --- catalog ---------------------------------------------------------------


def test_catalog_contains_the_reference_measurements():
    devices = builtin_devices()
    medical = find_device(devices, "Medical")
    assert medical.read_modes[0].mean == 0.01023
    btlejuice = find_attacker(builtin_attackers(), "btlejuice")
    assert btlejuice.t1_min == 0.006
    assert btlejuice.t1_max == 0.037


def test_catalog_read_mode_counts():
    # One tight cluster for the four steady devices, two firmware paths for
    # the bracelet and the tag, three scheduling quanta for the TV.
    devices = builtin_devices()
    counts = {d.id.name: len(d.read_modes) for d in devices}
    assert counts == {
        "LEDBLE": 1,
        "LYWSD03MMC": 1,
        "MyOximeter": 1,
        "Medical": 1,
        "MS1020": 2,
        "iTag": 2,
        "SamsungTV": 3,
    }


def test_catalog_entries_validate_and_weights_sum_to_one():
    devices, attackers = builtin_devices(), builtin_attackers()
    assert len(devices) == 7 and len(attackers) == 2
    for device in devices:
        for modes in (device.read_modes, device.write_modes):
            if modes:
                assert sum(m.weight for m in modes) == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize(
    "name,op,expected_mean",
    [
        ("LEDBLE", OperationKind.READ, 0.03023),
        ("LEDBLE", OperationKind.WRITE, 0.03273),
        ("MyOximeter", OperationKind.READ, 0.05008),
        ("MS1020", OperationKind.READ, 0.10998),
        ("iTag", OperationKind.READ, 0.20647),
        ("iTag", OperationKind.WRITE, 0.18908),
        ("SamsungTV", OperationKind.READ, 0.05739),
        ("SamsungTV", OperationKind.WRITE, 0.07080),
    ],
)
def test_catalog_mixture_means_match_measured_aggregates(name, op, expected_mean):
    device = find_device(builtin_devices(), name)
    mixture_mean = sum(m.mean * m.weight for m in device.modes_for(op))
    assert mixture_mean == pytest.approx(expected_mean, abs=1e-4)


def test_catalog_file_round_trip():
    devices, attackers = builtin_devices(), builtin_attackers()
    text = format_catalog(devices, attackers)
    parsed_devices, parsed_attackers = parse_catalog(text)
    assert parsed_devices == devices
    assert parsed_attackers == attackers


def test_attacker_model_validation():
    with pytest.raises(ValueError):
        AttackerModel("broken", t1_min=0.0, t1_max=0.001, t2_min=0.001, t2_max=0.002)
    with pytest.raises(ValueError):
        AttackerModel("broken", t1_min=0.002, t1_max=0.001, t2_min=0.001, t2_max=0.002)
