"""End-to-end evaluation: simulate, analyze, profile, detect, report.

For every catalog device the harness profiles from benign traffic, then
classifies fresh benign samples and relay-attacked samples one by one:
a benign sample flagged as attack is a false positive, an attacked sample
waved through is a false negative. The report mirrors the bench-table
layout (per-operation measured statistics plus FP/FN columns) and can be
rendered to CSV and figures.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, TextIO

from .analyzer import ResponseTimeSample, ingest
from .detector import (
    Aggregation,
    Decision,
    DetectorConfig,
    classify_sample,
    probe_and_decide,
)
from .model import DeviceId, OperationKind
from .profiler import DEFAULT_CLUSTER_GAP, DeviceProfile, build_profile
from .simulator import AttackerModel, DeviceBehavior, SessionPlan, simulate_session

DEFAULT_SEED = 7


def derive_seed(root: int, *parts: object) -> int:
    """Stable 64-bit sub-seed for one phase of a seeded run."""
    text = ":".join([str(root), *(str(p) for p in parts)])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class RunConfig:
    """Knobs of one evaluation run; the defaults reproduce the reference
    protocol (20 profiling connections of 10+10 operations, then 100+100
    benign and 50+50 attacked operations per tool, judged sample by
    sample)."""

    seed: int = DEFAULT_SEED
    t_mitm: float = 0.0022
    gap: float = DEFAULT_CLUSTER_GAP
    aggregation: Aggregation = Aggregation.SINGLE
    k_max: int = 10
    inter_op_gap: float = 0.1
    profile_connections: int = 20
    profile_reads: int = 10
    profile_writes: int = 10
    benign_connections: int = 20
    benign_reads: int = 5
    benign_writes: int = 5
    attack_connections: int = 10
    attack_reads: int = 5
    attack_writes: int = 5

    def __post_init__(self) -> None:
        for name in (
            "profile_connections",
            "benign_connections",
            "attack_connections",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")

    def detector(self) -> DetectorConfig:
        return DetectorConfig(
            t_mitm=self.t_mitm, k_max=self.k_max, aggregation=self.aggregation, gap=self.gap
        )


@dataclass
class OpOutcome:
    """Per-operation evaluation outcome for one device."""

    op: OperationKind
    handle: int
    profiling_trs: list[float]
    benign_trs: list[float]
    attacked_trs: dict[str, list[float]]
    fp_count: int = 0
    fn_counts: dict[str, int] = field(default_factory=dict)

    @property
    def n_benign(self) -> int:
        return len(self.benign_trs)

    @property
    def n_attacked(self) -> int:
        return sum(len(v) for v in self.attacked_trs.values())

    @property
    def fn_count(self) -> int:
        return sum(self.fn_counts.values())

    def stats(self) -> tuple[float, float, float, float]:
        """(mean, population variance, min, max) over the profiling samples."""
        values = self.profiling_trs
        mean = math.fsum(values) / len(values)
        var = math.fsum((v - mean) ** 2 for v in values) / len(values)
        return mean, var, min(values), max(values)


@dataclass
class DeviceOutcome:
    behavior: DeviceBehavior
    profile: DeviceProfile
    ops: list[OpOutcome]
    # Connection-level (majority) outcomes; None unless the run aggregates.
    benign_connections: Optional[int] = None
    attacked_connections: Optional[int] = None
    conn_fp_count: Optional[int] = None
    conn_fn_count: Optional[int] = None

    @property
    def device(self) -> DeviceId:
        return self.behavior.id

    @property
    def n_benign(self) -> int:
        return sum(op.n_benign for op in self.ops)

    @property
    def n_attacked(self) -> int:
        return sum(op.n_attacked for op in self.ops)

    @property
    def fp_count(self) -> int:
        return sum(op.fp_count for op in self.ops)

    @property
    def fn_count(self) -> int:
        return sum(op.fn_count for op in self.ops)

    @property
    def fp_rate(self) -> float:
        return 100.0 * self.fp_count / self.n_benign if self.n_benign else 0.0

    @property
    def fn_rate(self) -> float:
        return 100.0 * self.fn_count / self.n_attacked if self.n_attacked else 0.0

    def fn_rate_for(self, tool: str) -> float:
        total = sum(len(op.attacked_trs.get(tool, [])) for op in self.ops)
        if not total:
            return 0.0
        return 100.0 * sum(op.fn_counts.get(tool, 0) for op in self.ops) / total


@dataclass
class EvaluationReport:
    config: RunConfig
    tools: list[str]
    devices: list[DeviceOutcome]

    @property
    def total_decisions(self) -> int:
        return sum(d.n_benign + d.n_attacked for d in self.devices)

    @property
    def total_errors(self) -> int:
        return sum(d.fp_count + d.fn_count for d in self.devices)

    @property
    def accuracy(self) -> float:
        total = self.total_decisions
        return 100.0 * (total - self.total_errors) / total if total else 100.0

    @property
    def avg_fp(self) -> float:
        """Unweighted mean of the per-device FP rates."""
        return sum(d.fp_rate for d in self.devices) / len(self.devices) if self.devices else 0.0

    @property
    def avg_fn(self) -> float:
        """Unweighted mean of the per-device FN rates."""
        return sum(d.fn_rate for d in self.devices) / len(self.devices) if self.devices else 0.0

    def outcome_for(self, name: str) -> DeviceOutcome:
        for outcome in self.devices:
            if outcome.device.name.lower() == name.lower():
                return outcome
        raise KeyError(name)


def _connection_samples(
    behavior: DeviceBehavior,
    attacker: Optional[AttackerModel],
    connections: int,
    reads: int,
    writes: int,
    cfg: RunConfig,
    label: str,
) -> list[list[ResponseTimeSample]]:
    """Simulate and re-analyze a batch of connections, one sample list each."""
    batches = []
    for index in range(connections):
        plan = SessionPlan(
            device=behavior,
            n_reads=reads,
            n_writes=writes,
            inter_op_gap=cfg.inter_op_gap,
            attacker=attacker,
            seed=derive_seed(cfg.seed, behavior.id.identifier, label, index),
        )
        result = ingest(simulate_session(plan, conn_id=index + 1))
        batches.append(result.samples)
    return batches


def attack_plans(
    behavior: DeviceBehavior, attacker: AttackerModel, cfg: RunConfig
) -> list[SessionPlan]:
    """The exact attacked session plans an evaluation run generates, exposed
    so trace-level validators can re-check any run."""
    return [
        SessionPlan(
            device=behavior,
            n_reads=cfg.attack_reads,
            n_writes=cfg.attack_writes,
            inter_op_gap=cfg.inter_op_gap,
            attacker=attacker,
            seed=derive_seed(cfg.seed, behavior.id.identifier, f"attack:{attacker.tool_name}", index),
        )
        for index in range(cfg.attack_connections)
    ]


def profile_device(behavior: DeviceBehavior, cfg: RunConfig) -> tuple[DeviceProfile, dict[OperationKind, list[float]]]:
    """Profile one device from simulated benign traffic."""
    batches = _connection_samples(
        behavior,
        None,
        cfg.profile_connections,
        cfg.profile_reads,
        cfg.profile_writes,
        cfg,
        "profile",
    )
    samples = [s for batch in batches for s in batch]
    profile = build_profile(behavior.id, samples, gap=cfg.gap)
    trs: dict[OperationKind, list[float]] = {}
    for s in samples:
        trs.setdefault(s.op, []).append(s.tr)
    return profile, trs


def evaluate_device(
    behavior: DeviceBehavior, attackers: Sequence[AttackerModel], cfg: RunConfig
) -> DeviceOutcome:
    profile, profiling_trs = profile_device(behavior, cfg)
    detector_cfg = cfg.detector()

    ops = [op for op in (OperationKind.READ, OperationKind.WRITE) if behavior.modes_for(op)]
    outcomes = {
        op: OpOutcome(
            op=op,
            handle=behavior.handle_for(op),
            profiling_trs=profiling_trs.get(op, []),
            benign_trs=[],
            attacked_trs={a.tool_name: [] for a in attackers},
            fn_counts={a.tool_name: 0 for a in attackers},
        )
        for op in ops
    }

    benign_batches = _connection_samples(
        behavior, None, cfg.benign_connections, cfg.benign_reads, cfg.benign_writes, cfg, "benign"
    )
    for batch in benign_batches:
        for sample in batch:
            verdict = classify_sample(profile, sample, detector_cfg)
            outcome = outcomes[sample.op]
            outcome.benign_trs.append(sample.tr)
            if verdict.decision is Decision.ATTACK:
                outcome.fp_count += 1

    attacked_batches: dict[str, list[list[ResponseTimeSample]]] = {}
    for attacker in attackers:
        batches = _connection_samples(
            behavior,
            attacker,
            cfg.attack_connections,
            cfg.attack_reads,
            cfg.attack_writes,
            cfg,
            f"attack:{attacker.tool_name}",
        )
        attacked_batches[attacker.tool_name] = batches
        for batch in batches:
            for sample in batch:
                verdict = classify_sample(profile, sample, detector_cfg)
                outcome = outcomes[sample.op]
                outcome.attacked_trs[attacker.tool_name].append(sample.tr)
                if verdict.decision is Decision.BENIGN:
                    outcome.fn_counts[attacker.tool_name] += 1

    device_outcome = DeviceOutcome(
        behavior=behavior, profile=profile, ops=[outcomes[op] for op in ops]
    )

    if cfg.aggregation is Aggregation.MAJORITY:
        conn_fp = sum(
            1
            for batch in benign_batches
            if probe_and_decide(profile, batch, detector_cfg).final is Decision.ATTACK
        )
        conn_fn = 0
        attacked_total = 0
        for batches in attacked_batches.values():
            for batch in batches:
                attacked_total += 1
                if probe_and_decide(profile, batch, detector_cfg).final is Decision.BENIGN:
                    conn_fn += 1
        device_outcome.benign_connections = len(benign_batches)
        device_outcome.attacked_connections = attacked_total
        device_outcome.conn_fp_count = conn_fp
        device_outcome.conn_fn_count = conn_fn
    return device_outcome


def run_evaluation(
    devices: Sequence[DeviceBehavior],
    attackers: Sequence[AttackerModel],
    cfg: Optional[RunConfig] = None,
) -> EvaluationReport:
    cfg = cfg or RunConfig()
    outcomes = [evaluate_device(d, attackers, cfg) for d in devices]
    outcomes.sort(key=lambda o: o.device.identifier)
    return EvaluationReport(
        config=cfg, tools=[a.tool_name for a in attackers], devices=outcomes
    )


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def render_report(report: EvaluationReport) -> str:
    cfg = report.config
    lines = [
        "evaluation seed=%d t_mitm=%.6f gap=%.6f aggregation=%s"
        % (cfg.seed, cfg.t_mitm, cfg.gap, cfg.aggregation.value)
    ]
    header = (
        f"{'device':<12} {'op':<6} {'handle':<7} {'modes':>5} {'mean(s)':>10} "
        f"{'variance':>12} {'max(s)':>10} {'min(s)':>10} {'FP%':>7} {'FN%':>7}"
    )
    for tool in report.tools:
        header += f" {'FN%[' + tool + ']':>15}"
    lines.append(header)
    for outcome in report.devices:
        for op_outcome in outcome.ops:
            mean, var, lo, hi = op_outcome.stats()
            row = (
                f"{outcome.device.name:<12} {op_outcome.op.value.lower():<6} "
                f"0x{op_outcome.handle:04x}  {len(outcome.profile.modes_for(op_outcome.op)):>5} "
                f"{mean:>10.6f} {var:>12.3e} {hi:>10.6f} {lo:>10.6f} "
                f"{100.0 * op_outcome.fp_count / op_outcome.n_benign:>7.2f} "
                f"{100.0 * op_outcome.fn_count / op_outcome.n_attacked:>7.2f}"
            )
            for tool in report.tools:
                n = len(op_outcome.attacked_trs.get(tool, []))
                rate = 100.0 * op_outcome.fn_counts.get(tool, 0) / n if n else 0.0
                row += f" {rate:>15.2f}"
            lines.append(row)
    if report.config.aggregation is Aggregation.MAJORITY:
        lines.append("")
        lines.append(
            f"{'device':<12} {'conn FP%':>9} {'conn FN%':>9}   (per-connection majority, k=%d)"
            % report.config.k_max
        )
        for outcome in report.devices:
            conn_fp = 100.0 * outcome.conn_fp_count / outcome.benign_connections
            conn_fn = 100.0 * outcome.conn_fn_count / outcome.attacked_connections
            lines.append(f"{outcome.device.name:<12} {conn_fp:>9.2f} {conn_fn:>9.2f}")
    lines.append("")
    lines.append(
        "device averages: FP %.2f%%  FN %.2f%%  (unweighted over devices)"
        % (report.avg_fp, report.avg_fn)
    )
    lines.append(
        "overall: %d decisions, %d errors, accuracy %.2f%%"
        % (report.total_decisions, report.total_errors, report.accuracy)
    )
    return "\n".join(lines) + "\n"


def write_report_csv(report: EvaluationReport, stream: TextIO) -> None:
    import csv

    writer = csv.writer(stream)
    header = [
        "device",
        "op",
        "handle",
        "profile_modes",
        "profiling_mean_s",
        "profiling_variance_s2",
        "profiling_max_s",
        "profiling_min_s",
        "n_benign",
        "n_attacked",
        "fp_percent",
        "fn_percent",
    ]
    header += [f"fn_percent_{tool}" for tool in report.tools]
    writer.writerow(header)
    for outcome in report.devices:
        for op_outcome in outcome.ops:
            mean, var, lo, hi = op_outcome.stats()
            row = [
                outcome.device.identifier,
                op_outcome.op.value.lower(),
                "0x%04x" % op_outcome.handle,
                len(outcome.profile.modes_for(op_outcome.op)),
                "%.9f" % mean,
                "%.6e" % var,
                "%.6f" % hi,
                "%.6f" % lo,
                op_outcome.n_benign,
                op_outcome.n_attacked,
                "%.2f" % (100.0 * op_outcome.fp_count / op_outcome.n_benign),
                "%.2f" % (100.0 * op_outcome.fn_count / op_outcome.n_attacked),
            ]
            for tool in report.tools:
                n = len(op_outcome.attacked_trs.get(tool, []))
                row.append("%.2f" % (100.0 * op_outcome.fn_counts.get(tool, 0) / n if n else 0.0))
            writer.writerow(row)


# ---------------------------------------------------------------------------
# Slow-relay confusion experiment
# ---------------------------------------------------------------------------


def stall_attacker() -> AttackerModel:
    """A relay whose forwarding delays pile up near a 50 ms host-scheduling
    quantum, so attacked responses of a device with modes spaced 50 ms apart
    frequently land inside the next mode's decision region."""
    return AttackerModel("stalled-relay", t1_min=0.040, t1_max=0.050, t2_min=0.002, t2_max=0.010)


@dataclass(frozen=True)
class ConfusionOutcome:
    device: DeviceId
    n_samples: int
    single_fn: int
    n_connections: int
    majority_fn: int

    @property
    def single_fn_rate(self) -> float:
        return 100.0 * self.single_fn / self.n_samples

    @property
    def majority_fn_rate(self) -> float:
        return 100.0 * self.majority_fn / self.n_connections


def confusion_experiment(
    behavior: DeviceBehavior,
    cfg: Optional[RunConfig] = None,
    attacker: Optional[AttackerModel] = None,
    connections: int = 20,
) -> ConfusionOutcome:
    """Attack a multimodal device with a stalling relay and compare
    per-sample decisions against per-connection majority decisions."""
    cfg = cfg or RunConfig()
    attacker = attacker or stall_attacker()
    profile, _ = profile_device(behavior, cfg)

    single_cfg = cfg.detector()
    majority_cfg = DetectorConfig(
        t_mitm=cfg.t_mitm, k_max=cfg.k_max, aggregation=Aggregation.MAJORITY, gap=cfg.gap
    )

    batches = _connection_samples(
        behavior, attacker, connections, cfg.attack_reads, cfg.attack_writes, cfg, "confusion"
    )
    n_samples = 0
    single_fn = 0
    majority_fn = 0
    for batch in batches:
        for sample in batch:
            n_samples += 1
            if classify_sample(profile, sample, single_cfg).decision is Decision.BENIGN:
                single_fn += 1
        if probe_and_decide(profile, batch, majority_cfg).final is Decision.BENIGN:
            majority_fn += 1
    return ConfusionOutcome(
        device=behavior.id,
        n_samples=n_samples,
        single_fn=single_fn,
        n_connections=len(batches),
        majority_fn=majority_fn,
    )
