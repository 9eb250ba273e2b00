"""Shared helpers for the test suite: seeded random packets, tiny traces."""

from __future__ import annotations

import random

from blesentry.model import (
    AttPayload,
    DeviceId,
    OperationKind,
    Packet,
    PacketKind,
    quantize,
)

NAMES = ("LEDBLE", "iTag", "MS1020", "probe", "lamp-7", "a/b_c")


def random_device(rng: random.Random) -> DeviceId:
    name = rng.choice(NAMES)
    mac = ":".join("%02X" % rng.randrange(256) for _ in range(6))
    return DeviceId(name, mac)


def random_packet(rng: random.Random) -> Packet:
    kind = rng.choice(list(PacketKind))
    ts = rng.randrange(0, 10**9) / 1e6
    source = random_device(rng)
    if kind is PacketKind.ADVERTISING:
        return Packet(kind, ts, rng.choice((37, 38, 39)), source)
    target = random_device(rng)
    conn = rng.randrange(0, 1 << 16)
    channel = rng.randrange(0, 40)
    if kind in (PacketKind.CONNECT_REQUEST, PacketKind.DISCONNECT):
        return Packet(kind, ts, channel, source, target=target, conn_id=conn)
    op = rng.choice(list(OperationKind))
    value = bytes(rng.randrange(256) for _ in range(rng.randrange(0, 5)))
    att = AttPayload(op, rng.randrange(0, 0x10000), value)
    return Packet(kind, ts, channel, source, target=target, conn_id=conn, att=att)


def adv(device: DeviceId, ts: float, channel: int = 37) -> Packet:
    return Packet(PacketKind.ADVERTISING, quantize(ts), channel, device)


def connreq(client: DeviceId, server: DeviceId, ts: float, conn: int, channel: int = 37) -> Packet:
    return Packet(
        PacketKind.CONNECT_REQUEST, quantize(ts), channel, client, target=server, conn_id=conn
    )


def attreq(
    client: DeviceId,
    server: DeviceId,
    ts: float,
    conn: int,
    op: OperationKind = OperationKind.READ,
    handle: int = 0x0003,
    channel: int = 5,
) -> Packet:
    return Packet(
        PacketKind.ATT_REQUEST,
        quantize(ts),
        channel,
        client,
        target=server,
        conn_id=conn,
        att=AttPayload(op, handle),
    )


def attrsp(
    server: DeviceId,
    client: DeviceId,
    ts: float,
    conn: int,
    op: OperationKind = OperationKind.READ,
    handle: int = 0x0003,
    channel: int = 5,
) -> Packet:
    return Packet(
        PacketKind.ATT_RESPONSE,
        quantize(ts),
        channel,
        server,
        target=client,
        conn_id=conn,
        att=AttPayload(op, handle),
    )


def disc(client: DeviceId, server: DeviceId, ts: float, conn: int, channel: int = 5) -> Packet:
    return Packet(PacketKind.DISCONNECT, quantize(ts), channel, client, target=server, conn_id=conn)
