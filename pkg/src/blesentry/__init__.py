"""Timing-based man-in-the-middle detection for BLE request/response traffic.

A relay that intercepts and forwards BLE traffic cannot avoid adding its own
forwarding delay to every request-response exchange. This package profiles
how fast a device normally answers selected read and write operations, then
flags connections whose response times fall outside the profiled decision
regions. A deterministic traffic simulator stands in for radio hardware so
the detection experiments are reproducible at desk scale.
"""

from .analyzer import (
    IngestResult,
    OutOfOrderTimestamp,
    ResponseTimeSample,
    SuspicionLedger,
    TraceWarning,
    WarningKind,
    ingest,
    suspicious_devices,
)
from .catalog import builtin_attackers, builtin_catalog, builtin_devices, load_catalog
from .detector import (
    Aggregation,
    ConnectionVerdict,
    Decision,
    DetectorConfig,
    ResponseHistogram,
    SampleVerdict,
    classify_sample,
    decision_region,
    likelihood_ratio,
    probe_and_decide,
)
from .evaluate import (
    ConfusionOutcome,
    EvaluationReport,
    RunConfig,
    confusion_experiment,
    render_report,
    run_evaluation,
)
from .model import (
    AttPayload,
    BleError,
    ChannelRole,
    DeviceId,
    MalformedLine,
    OperationKind,
    Packet,
    PacketKind,
    channel_role,
    parse_packet,
    quantize,
    read_trace,
    serialize_packet,
    write_trace,
)
from .profiler import (
    DeviceProfile,
    GattCharacteristic,
    GattTable,
    Mode,
    ProfileStore,
    build_profile,
    cluster_modes,
    load_profile,
    save_profile,
    select_characteristics,
)
from .simulator import (
    AttackerModel,
    DeviceBehavior,
    ExchangeTruth,
    NoModesForOperation,
    ResponseMode,
    SessionPlan,
    sample_response_time,
    session_ground_truth,
    simulate_session,
    verify_attack_delay_floor,
)

__version__ = "0.1.0"
