"""Deterministic generator of benign and relay-attacked BLE sessions.

A session is one connection: an advertising packet, a connect request, a run
of read/write request-response exchanges, and a disconnect. Response times
are drawn from a per-device mixture of Gaussian modes; an optional attacker
model adds the two forwarding delays a man-in-the-middle relay introduces on
every exchange. Everything is a pure function of the plan (seed included),
so identical plans produce byte-identical traces.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .model import (
    ADVERTISING_CHANNELS,
    AttPayload,
    BleError,
    DeviceId,
    OperationKind,
    Packet,
    PacketKind,
    quantize,
    serialize_packet,
)

# Smallest interval the generator will emit; also the trace's time resolution.
MIN_RESPONSE_TIME = 1e-6

# Fixed connection choreography (seconds). Arbitrary but stable: they shape
# only absolute timestamps, never the request-to-response intervals.
ADV_TO_CONNECT = 0.002
CONNECT_TO_FIRST_REQUEST = 0.005
RESPONSE_TO_DISCONNECT = 0.002

DEFAULT_INTER_OP_GAP = 0.1

# Identity of the probing client that performs the ATT operations.
PROBE_CLIENT = DeviceId("probe", "00:00:00:00:00:01")


class NoModesForOperation(BleError):
    """The device behavior has no response-time modes for this operation."""


@dataclass(frozen=True)
class ResponseMode:
    """One cluster of a device's response-time distribution."""

    mean: float
    sigma: float
    weight: float

    def __post_init__(self) -> None:
        if self.mean <= 0:
            raise ValueError(f"mode mean must be positive: {self.mean}")
        if self.sigma < 0:
            raise ValueError(f"mode sigma must be non-negative: {self.sigma}")
        if not 0 < self.weight <= 1:
            raise ValueError(f"mode weight must lie in (0, 1]: {self.weight}")


def _check_modes(label: str, modes: tuple[ResponseMode, ...]) -> None:
    if not modes:
        return
    total = sum(m.weight for m in modes)
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"{label}: mode weights sum to {total}, expected 1")
    means = [m.mean for m in modes]
    if means != sorted(means):
        raise ValueError(f"{label}: modes must be sorted by ascending mean")
    spread = 6 * max(m.sigma for m in modes)
    for lo, hi in zip(modes, modes[1:]):
        if hi.mean - lo.mean <= spread:
            raise ValueError(
                f"{label}: mode means {lo.mean} and {hi.mean} closer than 6*max(sigma)"
            )


@dataclass(frozen=True)
class DeviceBehavior:
    """Generator-side description of one device: identity, handles, modes."""

    id: DeviceId
    read_handle: int
    write_handle: int
    read_modes: tuple[ResponseMode, ...] = ()
    write_modes: tuple[ResponseMode, ...] = ()

    def __post_init__(self) -> None:
        _check_modes(f"{self.id} read", self.read_modes)
        _check_modes(f"{self.id} write", self.write_modes)

    def modes_for(self, op: OperationKind) -> tuple[ResponseMode, ...]:
        return self.read_modes if op is OperationKind.READ else self.write_modes

    def handle_for(self, op: OperationKind) -> int:
        return self.read_handle if op is OperationKind.READ else self.write_handle


@dataclass(frozen=True)
class AttackerModel:
    """Forwarding-delay envelope of a man-in-the-middle relay tool.

    ``t1`` is the client-side leg (victim request relayed to the server) and
    ``t2`` the server-side leg (response relayed back); both are drawn
    independently and uniformly from their [min, max] range per exchange.
    """

    tool_name: str
    t1_min: float
    t1_max: float
    t2_min: float
    t2_max: float

    def __post_init__(self) -> None:
        if not self.tool_name:
            raise ValueError("attacker tool_name must be non-empty")
        for label, lo, hi in (("t1", self.t1_min, self.t1_max), ("t2", self.t2_min, self.t2_max)):
            if not 0 < lo <= hi:
                raise ValueError(f"{self.tool_name}: need 0 < {label}_min <= {label}_max")

    @property
    def min_delay(self) -> float:
        return self.t1_min + self.t2_min


@dataclass(frozen=True)
class SessionPlan:
    """Everything needed to generate one connection deterministically."""

    device: DeviceBehavior
    n_reads: int
    n_writes: int
    inter_op_gap: float = DEFAULT_INTER_OP_GAP
    attacker: Optional[AttackerModel] = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_reads < 0 or self.n_writes < 0:
            raise ValueError("operation counts must be non-negative")
        if self.n_reads + self.n_writes < 1:
            raise ValueError("a session needs at least one operation")
        if self.inter_op_gap <= 0:
            raise ValueError("inter_op_gap must be positive")


@dataclass(frozen=True)
class ExchangeTruth:
    """Ground truth for one request-response exchange of a generated session.

    ``response_time`` is the quantized request-to-response interval exactly
    as an observer of the trace will measure it; ``benign_seconds`` and
    ``relay_delay`` are the raw draws before quantization.
    """

    op: OperationKind
    handle: int
    mode_mean: float
    benign_seconds: float
    relay_delay: float
    request_ts: float
    response_ts: float

    @property
    def response_time(self) -> float:
        return self.response_ts - self.request_ts


def sample_response_time(
    behavior: DeviceBehavior, op: OperationKind, rng: random.Random
) -> float:
    """Draw one benign response time for ``op`` from the device's mixture."""
    mode = _pick_mode(behavior, op, rng)
    return max(MIN_RESPONSE_TIME, rng.gauss(mode.mean, mode.sigma))


def _pick_mode(behavior: DeviceBehavior, op: OperationKind, rng: random.Random) -> ResponseMode:
    modes = behavior.modes_for(op)
    if not modes:
        raise NoModesForOperation(f"{behavior.id} has no {op.value} modes")
    u = rng.random()
    acc = 0.0
    for mode in modes:
        acc += mode.weight
        if u <= acc:
            return mode
    return modes[-1]


def _generate(
    plan: SessionPlan, client: DeviceId, start_time: float, conn_id: int
) -> tuple[list[Packet], list[ExchangeTruth]]:
    rng = random.Random(plan.seed)
    device = plan.device
    adv_channel = rng.choice(ADVERTISING_CHANNELS)
    data_channel = rng.randrange(37)

    ops = [OperationKind.READ] * plan.n_reads + [OperationKind.WRITE] * plan.n_writes

    packets: list[Packet] = []
    truths: list[ExchangeTruth] = []

    adv_ts = quantize(start_time)
    packets.append(Packet(PacketKind.ADVERTISING, adv_ts, adv_channel, device.id))
    conn_ts = quantize(adv_ts + ADV_TO_CONNECT)
    packets.append(
        Packet(
            PacketKind.CONNECT_REQUEST,
            conn_ts,
            adv_channel,
            client,
            target=device.id,
            conn_id=conn_id,
        )
    )

    cursor = quantize(conn_ts + CONNECT_TO_FIRST_REQUEST)
    for op in ops:
        mode = _pick_mode(device, op, rng)
        benign = max(MIN_RESPONSE_TIME, rng.gauss(mode.mean, mode.sigma))
        relay = 0.0
        if plan.attacker is not None:
            relay = rng.uniform(plan.attacker.t1_min, plan.attacker.t1_max)
            relay += rng.uniform(plan.attacker.t2_min, plan.attacker.t2_max)
        handle = device.handle_for(op)
        request_ts = cursor
        response_ts = quantize(request_ts + benign + relay)

        if op is OperationKind.READ:
            req_value, rsp_value = b"", device.id.name.encode("utf-8")
        else:
            req_value, rsp_value = b"\x00", b""
        packets.append(
            Packet(
                PacketKind.ATT_REQUEST,
                request_ts,
                data_channel,
                client,
                target=device.id,
                conn_id=conn_id,
                att=AttPayload(op, handle, req_value),
            )
        )
        packets.append(
            Packet(
                PacketKind.ATT_RESPONSE,
                response_ts,
                data_channel,
                device.id,
                target=client,
                conn_id=conn_id,
                att=AttPayload(op, handle, rsp_value),
            )
        )
        truths.append(
            ExchangeTruth(op, handle, mode.mean, benign, relay, request_ts, response_ts)
        )
        cursor = quantize(response_ts + plan.inter_op_gap)

    disc_ts = quantize(packets[-1].timestamp + RESPONSE_TO_DISCONNECT)
    packets.append(
        Packet(
            PacketKind.DISCONNECT,
            disc_ts,
            data_channel,
            client,
            target=device.id,
            conn_id=conn_id,
        )
    )
    return packets, truths


def simulate_session(
    plan: SessionPlan,
    *,
    client: DeviceId = PROBE_CLIENT,
    start_time: float = 0.0,
    conn_id: int = 1,
) -> list[Packet]:
    """Generate the packets of one connection described by ``plan``."""
    packets, _ = _generate(plan, client, start_time, conn_id)
    return packets


def session_ground_truth(
    plan: SessionPlan,
    *,
    client: DeviceId = PROBE_CLIENT,
    start_time: float = 0.0,
    conn_id: int = 1,
) -> list[ExchangeTruth]:
    """Regenerate the per-exchange ground truth of ``plan``'s session."""
    _, truths = _generate(plan, client, start_time, conn_id)
    return truths


def serialize_session(packets: Iterable[Packet]) -> str:
    """Whole-session trace text, one packet per line."""
    return "".join(serialize_packet(p) + "\n" for p in packets)


def verify_attack_delay_floor(
    plan: SessionPlan,
    packets: list[Packet],
    *,
    t_mitm: float = 0.0022,
    client: DeviceId = PROBE_CLIENT,
    start_time: float = 0.0,
    conn_id: int = 1,
) -> list[str]:
    """Check that every attacked exchange in a generated trace sits at least
    ``t_mitm`` above the mean of the mode that produced its benign part.

    The session is regenerated from the plan to attribute each exchange to
    its generating mode, so the check is exact even for multimodal devices
    whose relay-delayed responses overtake a higher mode's mean. Returns a
    list of human-readable violations (empty means the floor holds). Raises
    ``ValueError`` if the packets were not produced by this plan.
    """
    expected, truths = _generate(plan, client, start_time, conn_id)
    if [serialize_packet(p) for p in expected] != [serialize_packet(p) for p in packets]:
        raise ValueError("trace does not match the plan it is being validated against")
    if plan.attacker is None:
        return []
    violations = []
    for i, truth in enumerate(truths):
        excess = truth.response_time - truth.mode_mean
        if excess < t_mitm - 1e-9:
            violations.append(
                "exchange %d (%s): interval %.6f only %.6f above mode mean %.6f"
                % (i, truth.op.value, truth.response_time, excess, truth.mode_mean)
            )
    return violations
