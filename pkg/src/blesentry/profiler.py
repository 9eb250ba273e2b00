"""Build per-device response-time profiles from benign samples.

A profile describes each operation's response-time distribution as one or
more modes: tight clusters found by 1-D gap clustering of the sorted sample
values. Clusters holding less than one percent of the samples are folded
into their nearest larger neighbour so stray outliers cannot spawn spurious
modes; the fold widens the surviving mode's sigma, which only relaxes the
lower edge of the decision region built from it.
"""

from __future__ import annotations

import binascii
import math
import os
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .analyzer import ResponseTimeSample
from .model import BleError, DeviceId, OperationKind

DEFAULT_CLUSTER_GAP = 0.010
DEFAULT_MIN_SAMPLES = 20
MIN_MODE_WEIGHT = 0.01

READABLE_NAME_UUID = "2a00"


class NoReadableCharacteristic(BleError):
    """The GATT table offers nothing to read from."""


class NoWritableCharacteristic(BleError):
    """The GATT table offers nothing to write to."""


class InsufficientSamples(BleError):
    def __init__(self, op: OperationKind, have: int, need: int):
        super().__init__(f"{op.value}: have {have} samples, need {need}")
        self.op = op
        self.have = have
        self.need = need


class ModesOverlap(BleError):
    """Recovered modes are too close to separate at three sigma."""


class ProfileNotFound(BleError):
    """The store has no profile for this device."""


class StoreCorrupt(BleError):
    """A profile store file is missing or unreadable."""


@dataclass(frozen=True)
class GattCharacteristic:
    handle: int
    uuid: str
    properties: frozenset[str]


@dataclass(frozen=True)
class GattTable:
    characteristics: tuple[GattCharacteristic, ...]

    def __post_init__(self) -> None:
        handles = [c.handle for c in self.characteristics]
        if len(handles) != len(set(handles)):
            raise ValueError("GATT table handles must be unique")


def select_read_characteristic(gatt: GattTable) -> int:
    """Prefer the device-name characteristic (uuid 2a00); else the lowest
    readable handle."""
    readable = sorted(
        (c for c in gatt.characteristics if "READ" in c.properties), key=lambda c: c.handle
    )
    if not readable:
        raise NoReadableCharacteristic("no characteristic with READ property")
    for c in readable:
        if c.uuid.lower() == READABLE_NAME_UUID:
            return c.handle
    return readable[0].handle


def select_write_characteristic(gatt: GattTable) -> int:
    """Lowest handle that accepts writes; a probe write confirms it in the
    live system, so any WRITE-property handle qualifies here."""
    writable = sorted(
        (c for c in gatt.characteristics if "WRITE" in c.properties), key=lambda c: c.handle
    )
    if not writable:
        raise NoWritableCharacteristic("no characteristic with WRITE property")
    return writable[0].handle


def select_characteristics(gatt: GattTable) -> tuple[int, int]:
    if not gatt.characteristics:
        raise NoReadableCharacteristic("empty GATT table")
    return select_read_characteristic(gatt), select_write_characteristic(gatt)


@dataclass(frozen=True)
class Mode:
    """One recovered cluster of response times."""

    mean: float
    sigma: float
    count: int
    weight: float

    def __post_init__(self) -> None:
        if self.mean <= 0:
            raise ValueError(f"mode mean must be positive: {self.mean}")
        if self.sigma < 0:
            raise ValueError(f"mode sigma must be non-negative: {self.sigma}")
        if self.count < 1:
            raise ValueError("mode count must be at least 1")


@dataclass(frozen=True)
class DeviceProfile:
    device: DeviceId
    read_handle: Optional[int]
    write_handle: Optional[int]
    read_modes: tuple[Mode, ...]
    write_modes: tuple[Mode, ...]
    read_samples: int
    write_samples: int
    created_at: float

    def modes_for(self, op: OperationKind) -> tuple[Mode, ...]:
        return self.read_modes if op is OperationKind.READ else self.write_modes

    def handle_for(self, op: OperationKind) -> Optional[int]:
        return self.read_handle if op is OperationKind.READ else self.write_handle

    def sample_count(self, op: OperationKind) -> int:
        return self.read_samples if op is OperationKind.READ else self.write_samples


@dataclass
class _Cluster:
    values: list[float]

    @property
    def count(self) -> int:
        return len(self.values)

    @property
    def mean(self) -> float:
        return math.fsum(self.values) / len(self.values)


def cluster_modes(
    values: Sequence[float], gap: float = DEFAULT_CLUSTER_GAP, min_weight: float = MIN_MODE_WEIGHT
) -> list[Mode]:
    """Cluster 1-D values: a new cluster starts wherever consecutive sorted
    values are more than ``gap`` apart; clusters below ``min_weight`` of the
    total are folded into the nearest larger cluster.

    The result is sorted by mean and independent of input order.
    """
    if not values:
        raise ValueError("cluster_modes needs at least one value")
    if gap <= 0:
        raise ValueError("gap must be positive")

    ordered = sorted(values)
    clusters = [_Cluster([ordered[0]])]
    for prev, cur in zip(ordered, ordered[1:]):
        if cur - prev > gap:
            clusters.append(_Cluster([cur]))
        else:
            clusters[-1].values.append(cur)

    total = len(ordered)
    while len(clusters) > 1:
        smallest = min(clusters, key=lambda c: (c.count, c.mean))
        if smallest.count / total >= min_weight:
            break
        rest = [c for c in clusters if c is not smallest]
        larger = [c for c in rest if c.count > smallest.count] or rest
        target = min(larger, key=lambda c: abs(c.mean - smallest.mean))
        target.values.extend(smallest.values)
        target.values.sort()
        clusters.remove(smallest)

    clusters.sort(key=lambda c: c.mean)
    modes = []
    for cluster in clusters:
        mean = cluster.mean
        variance = math.fsum((v - mean) ** 2 for v in cluster.values) / cluster.count
        modes.append(
            Mode(mean=mean, sigma=math.sqrt(variance), count=cluster.count, weight=cluster.count / total)
        )
    return modes


def build_profile(
    device: DeviceId,
    samples: Iterable[ResponseTimeSample],
    gap: float = DEFAULT_CLUSTER_GAP,
    min_samples: int = DEFAULT_MIN_SAMPLES,
) -> DeviceProfile:
    """Cluster a device's benign samples per operation into a profile.

    Every operation present in the samples must reach ``min_samples``; modes
    whose three-sigma envelopes touch make the device unprofileable at this
    gap and raise ``ModesOverlap``.
    """
    by_op: dict[OperationKind, list[ResponseTimeSample]] = {}
    for sample in samples:
        if sample.device != device:
            raise ValueError(f"sample for {sample.device} mixed into {device} profile")
        by_op.setdefault(sample.op, []).append(sample)
    if not by_op:
        raise InsufficientSamples(OperationKind.READ, 0, min_samples)

    modes: dict[OperationKind, tuple[Mode, ...]] = {}
    handles: dict[OperationKind, int] = {}
    counts: dict[OperationKind, int] = {}
    for op, op_samples in by_op.items():
        if len(op_samples) < min_samples:
            raise InsufficientSamples(op, len(op_samples), min_samples)
        found = cluster_modes([s.tr for s in op_samples], gap=gap)
        for left, right in zip(found, found[1:]):
            if right.mean - left.mean <= 3 * left.sigma + 3 * right.sigma:
                raise ModesOverlap(
                    f"{device} {op.value}: modes at {left.mean:.6f} and "
                    f"{right.mean:.6f} overlap at three sigma"
                )
        modes[op] = tuple(found)
        counts[op] = len(op_samples)
        # The probing client uses one characteristic per operation; take the
        # most frequent handle in case a trace mixes several.
        seen: dict[int, int] = {}
        for s in op_samples:
            seen[s.handle] = seen.get(s.handle, 0) + 1
        handles[op] = max(sorted(seen), key=lambda h: seen[h])

    created_at = max(s.request_ts for op_samples in by_op.values() for s in op_samples)
    return DeviceProfile(
        device=device,
        read_handle=handles.get(OperationKind.READ),
        write_handle=handles.get(OperationKind.WRITE),
        read_modes=modes.get(OperationKind.READ, ()),
        write_modes=modes.get(OperationKind.WRITE, ()),
        read_samples=counts.get(OperationKind.READ, 0),
        write_samples=counts.get(OperationKind.WRITE, 0),
        created_at=created_at,
    )


class ProfileStore:
    """Directory of per-device profile files plus a manifest of identifiers.

    Floats are stored with ``repr`` so a load returns exactly what was saved.
    """

    MANIFEST = "manifest"

    def __init__(self, root):
        self.root = os.fspath(root)

    def _manifest_path(self) -> str:
        return os.path.join(self.root, self.MANIFEST)

    def _profile_path(self, identifier: str) -> str:
        safe = "".join(c if c.isalnum() or c in "._-" else "_" for c in identifier)
        tag = binascii.crc32(identifier.encode("utf-8")) & 0xFFFFFFFF
        return os.path.join(self.root, f"{safe}-{tag:08x}.profile")

    def identifiers(self) -> list[str]:
        try:
            with open(self._manifest_path(), "r", encoding="utf-8") as fh:
                return [line.strip() for line in fh if line.strip()]
        except FileNotFoundError:
            return []

    def save(self, profile: DeviceProfile) -> str:
        os.makedirs(self.root, exist_ok=True)
        path = self._profile_path(profile.device.identifier)
        lines = [f"device={profile.device.identifier}", f"created_at={profile.created_at!r}"]
        for op, handle, op_modes, count in (
            ("read", profile.read_handle, profile.read_modes, profile.read_samples),
            ("write", profile.write_handle, profile.write_modes, profile.write_samples),
        ):
            if handle is not None:
                lines.append(f"{op}_handle=0x{handle:04x}")
            lines.append(f"{op}_samples={count}")
            for mode in op_modes:
                lines.append(f"{op}_mode={mode.mean!r} {mode.sigma!r} {mode.count} {mode.weight!r}")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")

        known = self.identifiers()
        if profile.device.identifier not in known:
            known.append(profile.device.identifier)
            with open(self._manifest_path(), "w", encoding="utf-8") as fh:
                fh.write("".join(f"{ident}\n" for ident in sorted(known)))
        return path

    def load(self, device: DeviceId) -> DeviceProfile:
        if device.identifier not in self.identifiers():
            raise ProfileNotFound(device.identifier)
        path = self._profile_path(device.identifier)
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise StoreCorrupt(f"{path}: {exc}") from None
        try:
            return self._parse(text)
        except (ValueError, KeyError, IndexError) as exc:
            raise StoreCorrupt(f"{path}: {exc}") from None

    @staticmethod
    def _parse(text: str) -> DeviceProfile:
        fields: dict[str, list[str]] = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"expected key=value, got {line!r}")
            fields.setdefault(key, []).append(value)

        def one(key: str) -> str:
            return fields[key][0]

        def parse_modes(key: str) -> tuple[Mode, ...]:
            modes = []
            for text_mode in fields.get(key, []):
                mean, sigma, count, weight = text_mode.split()
                modes.append(
                    Mode(mean=float(mean), sigma=float(sigma), count=int(count), weight=float(weight))
                )
            return tuple(modes)

        return DeviceProfile(
            device=DeviceId.from_identifier(one("device")),
            read_handle=int(one("read_handle"), 16) if "read_handle" in fields else None,
            write_handle=int(one("write_handle"), 16) if "write_handle" in fields else None,
            read_modes=parse_modes("read_mode"),
            write_modes=parse_modes("write_mode"),
            read_samples=int(one("read_samples")),
            write_samples=int(one("write_samples")),
            created_at=float(one("created_at")),
        )


def save_profile(profile: DeviceProfile, store: ProfileStore) -> str:
    return store.save(profile)


def load_profile(store: ProfileStore, device: DeviceId) -> DeviceProfile:
    return store.load(device)
