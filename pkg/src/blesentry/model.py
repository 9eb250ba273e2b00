"""Core BLE data model: device identities, packets, and the line trace format.

Timestamps are seconds since the start of a trace, quantized to one
microsecond so every well-formed packet survives a serialize/parse round
trip exactly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional

ADVERTISING_CHANNELS = (37, 38, 39)
CHANNEL_COUNT = 40
MAX_HANDLE = 0xFFFF

_MAC_RE = re.compile(r"^([0-9A-F]{2}:){5}[0-9A-F]{2}$")


class BleError(Exception):
    """Base class for errors raised by this package."""


class MalformedLine(BleError):
    """Raised when a trace line cannot be parsed into a packet."""


def quantize(seconds: float) -> float:
    """Snap a timestamp or interval to the trace's microsecond grid."""
    return round(seconds, 6)


class PacketKind(Enum):
    ADVERTISING = "ADV"
    CONNECT_REQUEST = "CONNREQ"
    ATT_REQUEST = "ATTREQ"
    ATT_RESPONSE = "ATTRSP"
    DISCONNECT = "DISC"


class OperationKind(Enum):
    READ = "READ"
    WRITE = "WRITE"


class ChannelRole(Enum):
    ADVERTISING = "advertising"
    DATA = "data"


def channel_role(index: int) -> ChannelRole:
    """Role of a link-layer channel; 37, 38 and 39 are the advertising channels."""
    if not 0 <= index < CHANNEL_COUNT:
        raise ValueError(f"channel index out of range: {index}")
    return ChannelRole.ADVERTISING if index in ADVERTISING_CHANNELS else ChannelRole.DATA


@dataclass(frozen=True)
class DeviceId:
    """Identity of a BLE endpoint: advertised name plus public MAC address.

    The identifier string combines both, since a spoofing attacker must copy
    both to pass for the genuine device.
    """

    name: str
    mac: str

    def __post_init__(self) -> None:
        if not self.name or any(c.isspace() for c in self.name):
            raise ValueError(f"device name must be non-empty without whitespace: {self.name!r}")
        if not _MAC_RE.match(self.mac):
            raise ValueError(f"bad MAC address: {self.mac!r}")

    @property
    def identifier(self) -> str:
        return f"{self.name}/{self.mac}"

    @classmethod
    def from_identifier(cls, text: str) -> "DeviceId":
        name, sep, mac = text.rpartition("/")
        if not sep:
            raise ValueError(f"identifier lacks '/': {text!r}")
        return cls(name, mac.upper())

    def __str__(self) -> str:
        return self.identifier


@dataclass(frozen=True)
class AttPayload:
    """Attribute-protocol payload of a request or response packet."""

    op: OperationKind
    handle: int
    value: bytes = b""

    def __post_init__(self) -> None:
        if not 0 <= self.handle <= MAX_HANDLE:
            raise ValueError(f"handle out of range: {self.handle:#x}")


# Packet kinds that carry target + conn_id (everything except advertising).
_CONNECTED_KINDS = frozenset(
    {
        PacketKind.CONNECT_REQUEST,
        PacketKind.ATT_REQUEST,
        PacketKind.ATT_RESPONSE,
        PacketKind.DISCONNECT,
    }
)
_ATT_KINDS = frozenset({PacketKind.ATT_REQUEST, PacketKind.ATT_RESPONSE})


@dataclass(frozen=True)
class Packet:
    """One timestamped link-layer/ATT event.

    Advertising packets carry only a source; all other kinds carry a target
    and a connection token, and ATT packets additionally carry an attribute
    payload. Timestamps must sit on the microsecond grid (see ``quantize``).
    """

    kind: PacketKind
    timestamp: float
    channel: int
    source: DeviceId
    target: Optional[DeviceId] = None
    conn_id: Optional[int] = None
    att: Optional[AttPayload] = None

    def __post_init__(self) -> None:
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp: {self.timestamp}")
        if self.timestamp != quantize(self.timestamp):
            raise ValueError(f"timestamp not on microsecond grid: {self.timestamp!r}")
        if not 0 <= self.channel < CHANNEL_COUNT:
            raise ValueError(f"channel index out of range: {self.channel}")
        if self.kind is PacketKind.ADVERTISING:
            if self.target is not None or self.conn_id is not None or self.att is not None:
                raise ValueError("advertising packets carry no target, conn_id or payload")
        else:
            if self.target is None or self.conn_id is None:
                raise ValueError(f"{self.kind.value} packets need a target and a conn_id")
            if self.conn_id < 0:
                raise ValueError(f"negative conn_id: {self.conn_id}")
            if self.kind in _ATT_KINDS:
                if self.att is None:
                    raise ValueError(f"{self.kind.value} packets need an ATT payload")
            elif self.att is not None:
                raise ValueError(f"{self.kind.value} packets carry no ATT payload")


def serialize_packet(packet: Packet) -> str:
    """Render a packet as one line of the trace format."""
    parts = [
        "%.6f" % packet.timestamp,
        packet.kind.value,
        str(packet.channel),
        packet.source.identifier,
    ]
    if packet.kind is not PacketKind.ADVERTISING:
        parts.append(packet.target.identifier)
        parts.append(str(packet.conn_id))
    if packet.att is not None:
        parts.append(packet.att.op.value)
        parts.append("%04x" % packet.att.handle)
        if packet.att.value:
            parts.append(packet.att.value.hex())
    return " ".join(parts)


def parse_packet(line: str) -> Packet:
    """Parse one trace line back into a packet; inverse of ``serialize_packet``.

    Raises ``MalformedLine`` on any deviation from the format. Callers that
    read whole files should attach line numbers (see ``read_trace``).
    """
    tokens = line.split()
    if len(tokens) < 4:
        raise MalformedLine(f"expected at least 4 fields, got {len(tokens)}: {line!r}")
    try:
        timestamp = float(tokens[0])
    except ValueError:
        raise MalformedLine(f"bad timestamp: {tokens[0]!r}") from None
    try:
        kind = PacketKind(tokens[1])
    except ValueError:
        raise MalformedLine(f"unknown packet kind: {tokens[1]!r}") from None
    try:
        channel = int(tokens[2])
    except ValueError:
        raise MalformedLine(f"bad channel: {tokens[2]!r}") from None

    def device(token: str) -> DeviceId:
        try:
            return DeviceId.from_identifier(token)
        except ValueError as exc:
            raise MalformedLine(str(exc)) from None

    try:
        if kind is PacketKind.ADVERTISING:
            if len(tokens) != 4:
                raise MalformedLine(f"ADV takes 4 fields, got {len(tokens)}: {line!r}")
            return Packet(kind, timestamp, channel, device(tokens[3]))

        if kind in (PacketKind.CONNECT_REQUEST, PacketKind.DISCONNECT):
            if len(tokens) != 6:
                raise MalformedLine(
                    f"{kind.value} takes 6 fields, got {len(tokens)}: {line!r}"
                )
            return Packet(
                kind,
                timestamp,
                channel,
                device(tokens[3]),
                target=device(tokens[4]),
                conn_id=_parse_conn(tokens[5]),
            )

        # ATT request/response: op + handle, optional hex value
        if len(tokens) not in (8, 9):
            raise MalformedLine(f"{kind.value} takes 8 or 9 fields, got {len(tokens)}: {line!r}")
        try:
            op = OperationKind(tokens[6])
        except ValueError:
            raise MalformedLine(f"unknown operation: {tokens[6]!r}") from None
        try:
            handle = int(tokens[7], 16)
        except ValueError:
            raise MalformedLine(f"bad handle: {tokens[7]!r}") from None
        value = b""
        if len(tokens) == 9:
            try:
                value = bytes.fromhex(tokens[8])
            except ValueError:
                raise MalformedLine(f"bad hex value: {tokens[8]!r}") from None
        return Packet(
            kind,
            timestamp,
            channel,
            device(tokens[3]),
            target=device(tokens[4]),
            conn_id=_parse_conn(tokens[5]),
            att=AttPayload(op, handle, value),
        )
    except ValueError as exc:
        # Field-level constraint violations (range checks etc.) become
        # MalformedLine so callers see a single error type for bad traces.
        raise MalformedLine(str(exc)) from None


def _parse_conn(token: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise MalformedLine(f"bad conn_id: {token!r}") from None


def write_trace(path, packets: Iterable[Packet], header: Optional[str] = None) -> int:
    """Write packets to a trace file; returns the number of packets written."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        for packet in packets:
            fh.write(serialize_packet(packet))
            fh.write("\n")
            count += 1
    return count


def read_trace(path) -> list[Packet]:
    """Read a trace file, skipping comments and blank lines.

    MalformedLine errors are re-raised with the offending line number.
    """
    packets = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                packets.append(parse_packet(line))
            except MalformedLine as exc:
                raise MalformedLine(f"line {lineno}: {exc}") from None
    return packets


def is_time_ordered(packets: Iterable[Packet]) -> bool:
    """True when packet timestamps never decrease."""
    last = -1.0
    for packet in packets:
        if packet.timestamp < last:
            return False
        last = packet.timestamp
    return True
