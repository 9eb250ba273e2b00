"""Change detection: decision regions, sample classification, aggregation.

Each profile mode spans a decision region [mean - 3*sigma, mean + t_mitm],
where t_mitm is the smallest extra round-trip delay a man-in-the-middle
relay can add (2.2 ms for the tools characterized in the catalog). A sample
inside any region is benign. A relay can only slow a device down, so samples
above or between regions are attacks, while samples below the lowest region
indicate measurement noise or a different device and vote against an attack
without counting as one.

A likelihood-ratio view over the empirical benign histogram is provided as
well; the region test is the normative detector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, Mapping, Optional, Sequence

from .analyzer import ResponseTimeSample
from .model import BleError, DeviceId, OperationKind
from .profiler import DeviceProfile, Mode

DEFAULT_T_MITM = 0.0022
DENSITY_FLOOR = 1e-9
DEFAULT_BIN_WIDTH = 0.001


class UnprofiledOperation(BleError):
    """The profile has no modes for the sampled operation."""


class EmptyHistogram(BleError):
    """A likelihood ratio needs at least one benign sample."""


class EmptySampleSource(BleError):
    """probe_and_decide needs at least one sample."""


class Decision(Enum):
    BENIGN = "benign"
    ATTACK = "attack"
    BELOW_REGION = "below-region"


class Aggregation(Enum):
    SINGLE = "single"
    MAJORITY = "majority"


@dataclass(frozen=True)
class DetectorConfig:
    t_mitm: float = DEFAULT_T_MITM
    k_max: int = 10
    aggregation: Aggregation = Aggregation.SINGLE
    gap: float = 0.010  # clustering gap, carried along for profiling callers

    def __post_init__(self) -> None:
        if self.t_mitm <= 0:
            raise ValueError("t_mitm must be positive")
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")


def decision_region(mode: Mode, t_mitm: float) -> tuple[float, float]:
    """[mean - 3*sigma, mean + t_mitm], with the lower edge clamped at zero."""
    if t_mitm <= 0:
        raise ValueError("t_mitm must be positive")
    return max(0.0, mode.mean - 3.0 * mode.sigma), mode.mean + t_mitm


@dataclass(frozen=True)
class SampleVerdict:
    sample: ResponseTimeSample
    decision: Decision
    matched_mode: Optional[Mode]
    excess: float


@dataclass(frozen=True)
class ConnectionVerdict:
    device: DeviceId
    verdicts: tuple[SampleVerdict, ...]
    final: Decision
    attack_votes: int
    total: int


def classify_value(modes: Sequence[Mode], tr: float, t_mitm: float) -> tuple[Decision, Optional[Mode], float]:
    """Region test for one interval against one operation's modes."""
    regions = [(decision_region(mode, t_mitm), mode) for mode in modes]
    containing = [(abs(tr - mode.mean), mode) for (lo, hi), mode in regions if lo <= tr <= hi]
    if containing:
        return Decision.BENIGN, min(containing)[1], 0.0
    lowest_lo, lowest_hi = regions[0][0]
    if tr < lowest_lo:
        return Decision.BELOW_REGION, None, tr - lowest_hi
    # Attack: above the region of the highest mode not exceeding tr. Boundaries
    # are inclusive, so tr sits strictly above that region's upper edge here.
    below = [mode for (lo, hi), mode in regions if mode.mean <= tr]
    reference = below[-1]
    return Decision.ATTACK, None, tr - (reference.mean + t_mitm)


def classify_sample(
    profile: DeviceProfile, sample: ResponseTimeSample, cfg: DetectorConfig
) -> SampleVerdict:
    """Classify one sample against its device profile."""
    modes = profile.modes_for(sample.op)
    if not modes:
        raise UnprofiledOperation(f"{profile.device} has no {sample.op.value} profile")
    decision, matched, excess = classify_value(modes, sample.tr, cfg.t_mitm)
    return SampleVerdict(sample=sample, decision=decision, matched_mode=matched, excess=excess)


class ResponseHistogram:
    """Fixed-width histogram of benign response times, as probability mass."""

    def __init__(self, counts: Mapping[int, int], total: int, bin_width: float):
        if total < 1:
            raise EmptyHistogram("histogram has no samples")
        if bin_width <= 0:
            raise ValueError("bin_width must be positive")
        self._counts = dict(counts)
        self._total = total
        self.bin_width = bin_width

    @classmethod
    def from_values(cls, values: Sequence[float], bin_width: float = DEFAULT_BIN_WIDTH) -> "ResponseHistogram":
        if not values:
            raise EmptyHistogram("histogram has no samples")
        counts: dict[int, int] = {}
        for v in values:
            b = math.floor(v / bin_width)
            counts[b] = counts.get(b, 0) + 1
        return cls(counts, len(values), bin_width)

    def mass(self, value: float) -> float:
        return self._counts.get(math.floor(value / self.bin_width), 0) / self._total


def likelihood_ratio(histogram: ResponseHistogram, t_mitm: float, tr: float) -> float:
    """Ratio of attacked to benign likelihood for one measured interval.

    The attacked distribution is the benign histogram shifted right by
    t_mitm; both bin masses are floored at DENSITY_FLOOR so the ratio is
    always finite. Values above 1 favor an attack. A value of exactly 1
    means the interval has no support under either view; since a relay only
    ever adds delay, callers should treat that as attack-favoring too.
    """
    benign = max(histogram.mass(tr), DENSITY_FLOOR)
    attacked = max(histogram.mass(tr - t_mitm), DENSITY_FLOOR)
    return attacked / benign


def majority_verdict(decisions: Sequence[Decision]) -> Decision:
    """Attack wins when at least half of the votes say attack."""
    attack_votes = sum(1 for d in decisions if d is Decision.ATTACK)
    return Decision.ATTACK if attack_votes >= math.ceil(len(decisions) / 2) else Decision.BENIGN


def single_verdict(decisions: Sequence[Decision]) -> Decision:
    return Decision.ATTACK if Decision.ATTACK in decisions else Decision.BENIGN


def probe_and_decide(
    profile: DeviceProfile, samples: Iterable[ResponseTimeSample], cfg: DetectorConfig
) -> ConnectionVerdict:
    """Consume samples one at a time, up to ``cfg.k_max``, and decide.

    Under single aggregation a benign first sample ends the probe
    immediately: the device answered at its normal pace, so the connection
    is released after one operation. Majority aggregation exists to vote
    down unlucky individual verdicts, which only works if the whole budget
    is measured, so it never exits early. Below-region verdicts count as
    votes against an attack either way.
    """
    it: Iterator[ResponseTimeSample] = iter(samples)
    try:
        first = next(it)
    except StopIteration:
        raise EmptySampleSource("sample source yielded nothing") from None

    verdicts = [classify_sample(profile, first, cfg)]
    if cfg.aggregation is Aggregation.SINGLE and verdicts[0].decision is Decision.BENIGN:
        return ConnectionVerdict(
            device=profile.device,
            verdicts=tuple(verdicts),
            final=Decision.BENIGN,
            attack_votes=0,
            total=1,
        )

    for sample in it:
        if len(verdicts) >= cfg.k_max:
            break
        verdicts.append(classify_sample(profile, sample, cfg))

    decisions = [v.decision for v in verdicts]
    if cfg.aggregation is Aggregation.MAJORITY:
        final = majority_verdict(decisions)
    else:
        final = single_verdict(decisions)
    return ConnectionVerdict(
        device=profile.device,
        verdicts=tuple(verdicts),
        final=final,
        attack_votes=sum(1 for d in decisions if d is Decision.ATTACK),
        total=len(decisions),
    )


def format_verdict(verdict: ConnectionVerdict, conn_id: Optional[int] = None) -> str:
    """Structured text record: device, final decision, votes, per-sample detail."""
    head = verdict.device.identifier
    if conn_id is not None:
        head += f" conn={conn_id}"
    lines = [f"{head} final={verdict.final.value} votes={verdict.attack_votes}/{verdict.total}"]
    for v in verdict.verdicts:
        lines.append(
            "  %-5s tr=%.6f %s excess=%.6f"
            % (v.sample.op.value.lower(), v.sample.tr, v.decision.value, v.excess)
        )
    return "\n".join(lines)
