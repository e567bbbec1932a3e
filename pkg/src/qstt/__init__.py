"""Desk-scale simulator and analysis library for quantum-secured two-way
optical time transfer between a satellite and a ground station.

The package simulates both optical links of a pass at event level, matches
and sifts the quantum stream, gates it by per-block error rate, solves for
clock offset and range in sliding windows, checks every window against an
alert limit backed by independent range prediction, and moves the timing
data inside authenticated encrypted frames keyed by the quantum channel.
"""

from .adversary import AttackScenario
from .bb84 import (
    DecoyStatistics,
    DecoyStatisticsError,
    QberBlock,
    SiftedPairs,
    filter_blocks,
    secret_key_length,
    sift,
)
from .channel import (
    DownlinkConfig,
    DownlinkDetections,
    EmissionBatch,
    EmissionGrid,
    QubitSource,
    UplinkConfig,
    UplinkRecords,
    simulate_downlink,
    simulate_uplink,
)
from .constants import C_VACUUM
from .estimator import (
    EstimationError,
    OffsetSeries,
    Solution,
    normal_points,
    offset_and_range,
    offset_and_range_point,
    offset_series,
    solve_window,
)
from .geometry import (
    PassEphemeris,
    RangePredictor,
    linear_pass,
    load_ephemeris_csv,
)
from .keycrypto import (
    DecryptResult,
    EncryptedFrame,
    FrameReceiver,
    KeyExhaustionError,
    KeyPool,
    decrypt_verify,
    encrypt_frame,
)
from .pairing import (
    AmbiguousSyncError,
    PairingConfig,
    PairingError,
    SyncResult,
    TwoWayBatch,
    match_one_way,
    pair_two_way,
    synchronize,
)
from .pipeline import RunResult, delay_attack_sweep, run_session
from .scenario import ConfigError, Scenario, load_scenario, scenario_schema
from .security import (
    SecurityPolicy,
    SessionReport,
    WindowCheck,
    alert_check,
    check_windows,
    session_verdict,
)
from .timebase import ClockModel

__all__ = [
    "AttackScenario",
    "AmbiguousSyncError",
    "C_VACUUM",
    "ClockModel",
    "ConfigError",
    "DecoyStatistics",
    "DecoyStatisticsError",
    "DecryptResult",
    "DownlinkConfig",
    "DownlinkDetections",
    "EmissionBatch",
    "EmissionGrid",
    "EncryptedFrame",
    "EstimationError",
    "FrameReceiver",
    "KeyExhaustionError",
    "KeyPool",
    "OffsetSeries",
    "PairingConfig",
    "PairingError",
    "PassEphemeris",
    "QberBlock",
    "QubitSource",
    "RangePredictor",
    "RunResult",
    "Scenario",
    "SecurityPolicy",
    "SessionReport",
    "SiftedPairs",
    "Solution",
    "SyncResult",
    "TwoWayBatch",
    "UplinkConfig",
    "UplinkRecords",
    "WindowCheck",
    "alert_check",
    "check_windows",
    "decrypt_verify",
    "delay_attack_sweep",
    "encrypt_frame",
    "filter_blocks",
    "linear_pass",
    "load_ephemeris_csv",
    "load_scenario",
    "match_one_way",
    "normal_points",
    "offset_and_range",
    "offset_and_range_point",
    "offset_series",
    "pair_two_way",
    "run_session",
    "scenario_schema",
    "secret_key_length",
    "session_verdict",
    "sift",
    "simulate_downlink",
    "simulate_uplink",
    "solve_window",
    "synchronize",
]

__version__ = "0.1.0"
