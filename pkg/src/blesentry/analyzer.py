"""Turn an ordered packet stream into response-time samples.

The analyzer tracks each connection from its connect request onward, pairs
every ATT request with the matching response (ATT is stop-and-wait: one
outstanding request per connection), and emits one sample per pair. It also
maintains the suspicion ledger: any advertised device that has been the
target of a connection request might since have been spoofed, and only those
devices are worth probing.

Oddities in the stream (orphan responses, requests never answered, a second
request while one is pending) are collected as warnings rather than raised:
a real sniffer drops packets, so the analyzer degrades gracefully. Only
timestamp disorder aborts, since it means the trace itself is corrupt.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, TextIO

from .model import BleError, DeviceId, OperationKind, Packet, PacketKind


class OutOfOrderTimestamp(BleError):
    """Packet timestamps went backwards; the trace is corrupt."""


class WarningKind(Enum):
    UNANSWERED_REQUEST = "unanswered-request"
    ORPHAN_RESPONSE = "orphan-response"
    PIPELINED_REQUEST = "pipelined-request"


@dataclass(frozen=True)
class TraceWarning:
    kind: WarningKind
    timestamp: float
    conn_id: Optional[int]
    detail: str


@dataclass(frozen=True)
class ResponseTimeSample:
    """One measured request-to-response interval for a device operation."""

    device: DeviceId
    op: OperationKind
    handle: int
    tr: float
    request_ts: float
    conn_id: int


@dataclass
class DeviceRecord:
    """What the ledger knows about one advertised device identity."""

    first_seen: float
    ever_connected_to: bool = False
    last_adv: Optional[float] = None


@dataclass
class SuspicionLedger:
    """Tracks which advertised devices have ever accepted a connection."""

    devices: dict[DeviceId, DeviceRecord] = field(default_factory=dict)

    def _record(self, device: DeviceId, ts: float) -> DeviceRecord:
        record = self.devices.get(device)
        if record is None:
            record = DeviceRecord(first_seen=ts)
            self.devices[device] = record
        return record

    def observe_advertising(self, device: DeviceId, ts: float) -> None:
        self._record(device, ts).last_adv = ts

    def mark_connected(self, device: DeviceId, ts: float) -> None:
        self._record(device, ts).ever_connected_to = True

    def is_suspicious(self, device: DeviceId) -> bool:
        record = self.devices.get(device)
        return record is not None and record.ever_connected_to


def suspicious_devices(ledger: SuspicionLedger) -> list[DeviceId]:
    """Devices that have been connected to, sorted by identifier."""
    found = [d for d, r in ledger.devices.items() if r.ever_connected_to]
    return sorted(found, key=lambda d: d.identifier)


@dataclass
class _Connection:
    client: DeviceId
    server: DeviceId
    pending: Optional[Packet] = None


@dataclass
class IngestResult:
    samples: list[ResponseTimeSample]
    ledger: SuspicionLedger
    warnings: list[TraceWarning]


def ingest(packets: Iterable[Packet]) -> IngestResult:
    """Consume an ordered packet stream; see the module docstring."""
    samples: list[ResponseTimeSample] = []
    ledger = SuspicionLedger()
    warnings: list[TraceWarning] = []
    connections: dict[int, _Connection] = {}
    last_ts = -1.0

    def warn(kind: WarningKind, ts: float, conn_id: Optional[int], detail: str) -> None:
        warnings.append(TraceWarning(kind, ts, conn_id, detail))

    for packet in packets:
        if packet.timestamp < last_ts:
            raise OutOfOrderTimestamp(
                f"timestamp {packet.timestamp:.6f} after {last_ts:.6f}"
            )
        last_ts = packet.timestamp

        if packet.kind is PacketKind.ADVERTISING:
            ledger.observe_advertising(packet.source, packet.timestamp)
            continue

        conn_id = packet.conn_id
        if packet.kind is PacketKind.CONNECT_REQUEST:
            ledger.mark_connected(packet.target, packet.timestamp)
            connections[conn_id] = _Connection(client=packet.source, server=packet.target)
            continue

        if packet.kind is PacketKind.ATT_REQUEST:
            conn = connections.get(conn_id)
            if conn is None:
                # Connect request was missed; track the connection anyway.
                conn = _Connection(client=packet.source, server=packet.target)
                connections[conn_id] = conn
            if conn.pending is not None:
                warn(
                    WarningKind.PIPELINED_REQUEST,
                    packet.timestamp,
                    conn_id,
                    "request while another is pending; dropping the older one",
                )
            conn.pending = packet
            continue

        if packet.kind is PacketKind.ATT_RESPONSE:
            conn = connections.get(conn_id)
            pending = conn.pending if conn is not None else None
            if pending is None:
                warn(
                    WarningKind.ORPHAN_RESPONSE,
                    packet.timestamp,
                    conn_id,
                    "response without a pending request",
                )
                continue
            if packet.att.handle != pending.att.handle or packet.att.op != pending.att.op:
                warn(
                    WarningKind.ORPHAN_RESPONSE,
                    packet.timestamp,
                    conn_id,
                    "response does not match the pending request",
                )
                continue
            tr = packet.timestamp - pending.timestamp
            if tr <= 0:
                warn(
                    WarningKind.ORPHAN_RESPONSE,
                    packet.timestamp,
                    conn_id,
                    "non-positive request-to-response interval",
                )
                conn.pending = None
                continue
            samples.append(
                ResponseTimeSample(
                    device=pending.target,
                    op=pending.att.op,
                    handle=pending.att.handle,
                    tr=tr,
                    request_ts=pending.timestamp,
                    conn_id=conn_id,
                )
            )
            conn.pending = None
            continue

        if packet.kind is PacketKind.DISCONNECT:
            conn = connections.pop(conn_id, None)
            if conn is not None and conn.pending is not None:
                warn(
                    WarningKind.UNANSWERED_REQUEST,
                    packet.timestamp,
                    conn_id,
                    "request still pending at disconnect",
                )
            continue

    for conn_id, conn in connections.items():
        if conn.pending is not None:
            warn(
                WarningKind.UNANSWERED_REQUEST,
                last_ts if last_ts >= 0 else 0.0,
                conn_id,
                "request still pending when the stream ended",
            )
    return IngestResult(samples=samples, ledger=ledger, warnings=warnings)


SAMPLE_CSV_FIELDS = ("device", "op", "handle", "tr_seconds", "request_ts", "conn_id")


def write_samples_csv(samples: Iterable[ResponseTimeSample], stream: TextIO) -> None:
    writer = csv.writer(stream)
    writer.writerow(SAMPLE_CSV_FIELDS)
    for s in samples:
        writer.writerow(
            (
                s.device.identifier,
                s.op.value.lower(),
                "0x%04x" % s.handle,
                "%.6f" % s.tr,
                "%.6f" % s.request_ts,
                s.conn_id,
            )
        )
