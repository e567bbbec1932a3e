"""Two-way optical link simulation.

Downlink: 200 MHz faint-pulse BB84 emissions from the satellite, Poisson
photon statistics through a time-dependent loss, background clicks, detector
jitter, timestamps from the ground clock. Uplink: 10 kHz classical pulses
from the ground with per-pulse detection probability, timestamps from the
satellite clock.

The downlink emission grid is virtual: at 2e10 pulses per pass it is never
enumerated. Pulse payloads (basis, bit, intensity class) are a pure hash of
(payload seed, pulse index), so detected pulses, matcher candidates, and file
replays all observe one consistent emission stream. Detections are sampled
exactly: a Bernoulli(p_max) superset of indices is drawn per loss segment and
thinned by the hash-assigned intensity class's click probability.

Timestamps are snapped to the 1 ps tagger grid when recorded; emission
records carry the trigger time while the photon's position inside the pulse
envelope rides the flight (downlink). Uplink pulse-width error instead lands
on the recorded emission time (leading-edge discrimination of the sampled
outgoing pulse) and detection jitter on the satellite arrival tag, so the
one-way residual is the quadrature of the two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import bb84
from .constants import snap_ps, s_to_ps
from .geometry import PassEphemeris
from .timebase import ClockModel

EVENT_CSV_HEADER = ["station", "kind", "local_time_ps", "pulse_index", "basis", "bit", "intensity"]

FWHM_TO_RMS = 1.0 / 2.355

# Loss profiles are treated as constant over segments of this true-time span.
_LOSS_SEGMENT_S = 0.25

# Exact per-class sent counts are enumerated up to this grid size; larger
# grids use expected counts (pulses * class probability), relative error
# ~1/sqrt(N*p) which is ~1e-5 at pass scale.
_EXACT_COUNT_LIMIT = 1 << 25


def fwhm_to_rms(fwhm: float) -> float:
    """Gaussian FWHM -> RMS width (divide by 2*sqrt(2*ln 2) ~ 2.355)."""
    return fwhm * FWHM_TO_RMS


def _as_time_function(value) -> Callable[[float], float]:
    if callable(value):
        return value
    const = float(value)
    return lambda t: const


@dataclass
class DownlinkConfig:
    """Satellite-to-ground quantum link parameters."""

    rep_rate: float = 2e8
    pulse_width_rms: float = 200e-12 * FWHM_TO_RMS
    mean_photon_numbers: tuple[float, float, float] = (0.8, 0.1, 0.0)
    intensity_probabilities: tuple[float, float, float] = (0.8, 0.1, 0.1)
    loss_db: float | Callable[[float], float] = 40.0
    detector_jitter_rms: float = 300e-12
    background_rate: float = 0.0

    def __post_init__(self) -> None:
        probs = tuple(float(p) for p in self.intensity_probabilities)
        if abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError(f"intensity probabilities must sum to 1, got {sum(probs)}")
        if any(p < 0 for p in probs):
            raise ValueError("intensity probabilities must be non-negative")
        if any(mu < 0 for mu in self.mean_photon_numbers):
            raise ValueError("mean photon numbers must be non-negative")
        if self.rep_rate <= 0 or self.background_rate < 0:
            raise ValueError("rates must be positive (rep) / non-negative (background)")
        self.intensity_probabilities = probs
        self.mean_photon_numbers = tuple(float(m) for m in self.mean_photon_numbers)


@dataclass
class UplinkConfig:
    """Ground-to-satellite classical pulse link parameters."""

    rep_rate: float = 1e4
    pulse_width_rms: float = 0.8e-9 * FWHM_TO_RMS
    detection_jitter_rms: float = 0.0
    loss_db: float | Callable[[float], float] | None = None
    detection_probability_model: float | Callable[[float], float] = 0.93

    def __post_init__(self) -> None:
        if self.rep_rate <= 0:
            raise ValueError("rep_rate must be positive")
        if not callable(self.detection_probability_model):
            p = float(self.detection_probability_model)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"detection probability must be in [0,1], got {p}")


@dataclass(frozen=True)
class TimeEvent:
    """One row of the event log; payload fields are None where inapplicable."""

    station: str                 # "A" | "B"
    kind: str                    # "emission" | "arrival"
    local_time: float            # seconds on the station's clock, ps grid
    pulse_index: int | None
    basis: str | None = None
    bit: int | None = None
    intensity: str | None = None


def _mix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, vectorized over uint64 (wraparound intended)."""
    z = (x + np.uint64(0x9E3779B97F4A7C15)).astype(np.uint64)
    z ^= z >> np.uint64(30)
    z = (z * np.uint64(0xBF58476D1CE4E5B9)).astype(np.uint64)
    z ^= z >> np.uint64(27)
    z = (z * np.uint64(0x94D049BB133111EB)).astype(np.uint64)
    z ^= z >> np.uint64(31)
    return z


@dataclass(frozen=True)
class EmissionGrid:
    """Virtual downlink emission stream: pulse i fires at local time i/rep_rate."""

    rep_rate: float
    first_index: int
    n_pulses: int
    payload_seed: int
    intensity_probabilities: tuple[float, ...]
    mean_photon_numbers: tuple[float, ...]

    def local_times(self, indices: np.ndarray) -> np.ndarray:
        """Recorded (ps-snapped) local trigger times of the given pulses."""
        return snap_ps(np.asarray(indices, dtype=np.float64) / self.rep_rate)

    def payloads(self, indices: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(basis, bit, intensity) codes of the given pulses; pure in (seed, index)."""
        idx = np.asarray(indices, dtype=np.uint64)
        seed_word = _mix64(np.full(1, self.payload_seed, dtype=np.uint64))
        w = _mix64(idx ^ seed_word)
        basis = (w & np.uint64(1)).astype(np.int8)
        bit = ((w >> np.uint64(1)) & np.uint64(1)).astype(np.int8)
        u = (w >> np.uint64(11)).astype(np.float64) * 2.0**-53
        cum = np.cumsum(self.intensity_probabilities)
        intensity = np.searchsorted(cum[:-1], u, side="right").astype(np.int8)
        return basis, bit, intensity

    def class_counts(self) -> np.ndarray:
        """Pulses sent per intensity class: exact when enumerable, else expected."""
        if self.n_pulses <= _EXACT_COUNT_LIMIT:
            counts = np.zeros(len(self.intensity_probabilities), dtype=np.float64)
            for lo in range(self.first_index, self.first_index + self.n_pulses, 1 << 22):
                hi = min(lo + (1 << 22), self.first_index + self.n_pulses)
                _, _, cls = self.payloads(np.arange(lo, hi, dtype=np.int64))
                counts += np.bincount(cls, minlength=len(counts))
            return counts
        return self.n_pulses * np.asarray(self.intensity_probabilities, dtype=np.float64)


@dataclass
class DownlinkDetections:
    """Ground-station click records, time-ordered by local timestamp.

    source_index and true_arrival are simulation truth kept for validation
    and logging; the processing chain (matching onward) never reads them.
    """

    local_time: np.ndarray          # seconds on clock B, ps grid
    meas_basis: np.ndarray          # int8 basis codes
    meas_bit: np.ndarray            # int8 outcome bits
    source_index: np.ndarray        # true originating pulse, -1 for background
    true_arrival: np.ndarray        # true-time photon arrival (pre-jitter), NaN for background

    def __len__(self) -> int:
        return int(self.local_time.shape[0])


@dataclass
class UplinkRecords:
    """Ground emission records and satellite click records for the uplink."""

    emission_local_time: np.ndarray     # t_bs on clock B, all pulses, ps grid
    emission_index: np.ndarray
    emission_true_time: np.ndarray      # truth, for validation only
    detection_local_time: np.ndarray    # t_ar on clock A, detected subset, ps grid
    detection_pulse_index: np.ndarray   # uplink pulse index of each detection
    detection_true_arrival: np.ndarray  # truth, for validation only

    def __len__(self) -> int:
        return int(self.detection_local_time.shape[0])


def _sample_distinct(rng: np.random.Generator, lo: int, hi: int, count: int) -> np.ndarray:
    """count distinct integers uniform over [lo, hi), sorted."""
    n = hi - lo
    if count > n:
        raise ValueError("cannot sample more distinct values than the range holds")
    if count == 0:
        return np.empty(0, dtype=np.int64)
    if count * 3 > n:
        return lo + np.sort(rng.permutation(n)[:count]).astype(np.int64)
    picked = np.unique(rng.integers(lo, hi, size=count, dtype=np.int64))
    while picked.size < count:
        extra = rng.integers(lo, hi, size=count - picked.size, dtype=np.int64)
        picked = np.unique(np.concatenate([picked, extra]))
    return picked


def downlink_index_span(rep_rate: float, clock_a: ClockModel,
                        t_start: float, t_end: float) -> tuple[int, int]:
    """Pulse index range [first, last) the source emits over the true-time
    window. Exposed so post-processing can reproduce the sent-pulse count
    without rebuilding the grid."""
    lo_local = clock_a.to_local(t_start)
    hi_local = clock_a.to_local(t_end)
    # half-open [t_start, t_end): a pulse exactly at t_end is excluded
    first = int(math.ceil(lo_local * rep_rate - 1e-9))
    last = int(math.ceil(hi_local * rep_rate - 1e-9))
    return first, max(first, last)


def simulate_downlink(
    cfg: DownlinkConfig,
    eph: PassEphemeris,
    clock_a: ClockModel,
    clock_b: ClockModel,
    qubit_source: "QubitSource",
    rng: np.random.Generator,
    t_start: float,
    t_end: float,
    attack=None,
) -> tuple[EmissionGrid, DownlinkDetections]:
    """Simulate the downlink over the true-time window [t_start, t_end).

    Returns the virtual emission grid and the ground detection records. The
    optional attack object may contribute an in-flight delay
    (attack.eval_delay_down(t_emit_true) -> seconds >= 0) and an
    intercept-resend transform with its resend timing policy; both act
    between emission and detection.
    """
    if t_end <= t_start:
        grid = EmissionGrid(cfg.rep_rate, 0, 0, qubit_source.payload_seed,
                            cfg.intensity_probabilities, cfg.mean_photon_numbers)
        empty = np.empty(0)
        return grid, DownlinkDetections(empty, empty.astype(np.int8), empty.astype(np.int8),
                                        empty.astype(np.int64), empty)

    first, last = downlink_index_span(cfg.rep_rate, clock_a, t_start, t_end)
    n_pulses = max(0, last - first)
    grid = EmissionGrid(cfg.rep_rate, first, n_pulses, qubit_source.payload_seed,
                        cfg.intensity_probabilities, cfg.mean_photon_numbers)

    loss_fn = _as_time_function(cfg.loss_db)
    mus = np.asarray(cfg.mean_photon_numbers, dtype=np.float64)
    probs = np.asarray(cfg.intensity_probabilities, dtype=np.float64)

    det_idx_parts: list[np.ndarray] = []
    n_segments = max(1, int(math.ceil((t_end - t_start) / _LOSS_SEGMENT_S)))
    edges_true = np.linspace(t_start, t_end, n_segments + 1)
    for k in range(n_segments):
        seg_lo = int(math.ceil(clock_a.to_local(edges_true[k]) * cfg.rep_rate - 1e-9))
        seg_hi = int(math.ceil(clock_a.to_local(edges_true[k + 1]) * cfg.rep_rate - 1e-9))
        seg_lo, seg_hi = max(seg_lo, first), min(seg_hi, first + n_pulses)
        n_seg = seg_hi - seg_lo
        if n_seg <= 0:
            continue
        transmittance = 10.0 ** (-loss_fn(0.5 * (edges_true[k] + edges_true[k + 1])) / 10.0)
        p_click = 1.0 - np.exp(-mus * transmittance)
        p_max = float(p_click.max())
        if p_max <= 0.0:
            continue
        n_cand = int(rng.binomial(n_seg, p_max))
        cand = _sample_distinct(rng, seg_lo, seg_hi, n_cand)
        _, _, cls = grid.payloads(cand)
        keep = rng.random(cand.size) < (p_click[cls] / p_max)
        det_idx_parts.append(cand[keep])

    det_idx = (np.concatenate(det_idx_parts) if det_idx_parts
               else np.empty(0, dtype=np.int64))

    sent_basis, sent_bit, _ = grid.payloads(det_idx)
    t_emit_local = grid.local_times(det_idx)
    t_emit_true = np.asarray(clock_a.to_true(t_emit_local), dtype=np.float64)
    flight = eph.propagation_delay(t_emit_true, "down")
    if attack is not None and getattr(attack, "delay_down", None) is not None:
        flight = flight + attack.eval_delay_down(t_emit_true)
    envelope = rng.normal(0.0, cfg.pulse_width_rms, size=det_idx.size)
    arrival_true = t_emit_true + envelope + flight

    if attack is not None and getattr(attack, "intercept_resend_fraction", 0.0) > 0.0:
        sent_basis, sent_bit, hit = attack.intercept_resend(rng, sent_basis, sent_bit)
        arrival_true = arrival_true + attack.resend_time_shift(hit)

    meas_basis = rng.integers(0, 2, size=det_idx.size, dtype=np.int8)
    meas_bit = bb84.measure_array(sent_basis, sent_bit, meas_basis,
                                  qubit_source.intrinsic_error, rng)
    click_true = arrival_true + rng.normal(0.0, cfg.detector_jitter_rms, size=det_idx.size)
    t_br = snap_ps(np.asarray(clock_b.tag(click_true, rng), dtype=np.float64))

    # Background clicks: uniform in the arrival window, random outcomes.
    span = t_end - t_start
    n_bg = int(rng.poisson(cfg.background_rate * span)) if cfg.background_rate > 0 else 0
    if n_bg:
        bg_true = np.sort(rng.uniform(t_start, t_end, size=n_bg))
        bg_basis = rng.integers(0, 2, size=n_bg, dtype=np.int8)
        bg_bit = rng.integers(0, 2, size=n_bg, dtype=np.int8)
        bg_local = snap_ps(np.asarray(clock_b.tag(bg_true, rng), dtype=np.float64))
        local_time = np.concatenate([t_br, bg_local])
        meas_basis = np.concatenate([meas_basis, bg_basis])
        meas_bit = np.concatenate([meas_bit, bg_bit])
        source = np.concatenate([det_idx, np.full(n_bg, -1, dtype=np.int64)])
        arrivals = np.concatenate([arrival_true, np.full(n_bg, np.nan)])
    else:
        local_time, source, arrivals = t_br, det_idx, arrival_true

    order = np.lexsort((source, local_time))
    detections = DownlinkDetections(
        local_time=local_time[order],
        meas_basis=meas_basis[order],
        meas_bit=meas_bit[order],
        source_index=source[order],
        true_arrival=arrivals[order],
    )
    return grid, detections


def simulate_uplink(
    cfg: UplinkConfig,
    eph: PassEphemeris,
    clock_a: ClockModel,
    clock_b: ClockModel,
    rng: np.random.Generator,
    t_start: float,
    t_end: float,
    attack=None,
) -> UplinkRecords:
    """Simulate the uplink over the true-time window [t_start, t_end)."""
    lo_local = clock_b.to_local(t_start)
    hi_local = clock_b.to_local(t_end)
    first = int(math.ceil(lo_local * cfg.rep_rate - 1e-9))
    last = int(math.ceil(hi_local * cfg.rep_rate - 1e-9))
    idx = np.arange(first, max(first, last), dtype=np.int64)
    grid_local = idx.astype(np.float64) / cfg.rep_rate
    true_emit = np.asarray(clock_b.to_true(grid_local), dtype=np.float64)

    sampling = rng.normal(0.0, cfg.pulse_width_rms, size=idx.size)
    t_bs = snap_ps(np.asarray(clock_b.tag(true_emit, rng), dtype=np.float64) + sampling)

    flight = eph.propagation_delay(true_emit, "up")
    if attack is not None and getattr(attack, "delay_up", None) is not None:
        flight = flight + attack.eval_delay_up(true_emit)
    arrival_true = true_emit + flight

    p_fn = cfg.detection_probability_model
    p = np.asarray([p_fn(t) for t in true_emit]) if callable(p_fn) else float(p_fn)
    detected = rng.random(idx.size) < p
    det_rows = np.nonzero(detected)[0]

    click_true = arrival_true[det_rows] + rng.normal(
        0.0, cfg.detection_jitter_rms, size=det_rows.size
    )
    t_ar = snap_ps(np.asarray(clock_a.tag(click_true, rng), dtype=np.float64))
    order = np.argsort(t_ar, kind="stable")

    return UplinkRecords(
        emission_local_time=t_bs,
        emission_index=idx,
        emission_true_time=true_emit,
        detection_local_time=t_ar[order],
        detection_pulse_index=idx[det_rows][order],
        detection_true_arrival=arrival_true[det_rows][order],
    )


@dataclass(frozen=True)
class QubitSource:
    """Payload source for the downlink: seeded basis/bit/intensity choices plus
    the receiver's intrinsic polarization error probability."""

    payload_seed: int
    intrinsic_error: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.intrinsic_error <= 0.5:
            raise ValueError("intrinsic_error must be within [0, 0.5]")


# --- event log -------------------------------------------------------------

_BASIS_STR = {0: "R", 1: "D"}
_BASIS_FROM_STR = {"R": 0, "D": 1}
_INTENSITY_STR = dict(bb84.INTENSITY_NAMES)
_INTENSITY_FROM_STR = dict(bb84.INTENSITY_CODES)


def _format_rows(
    station: str,
    kind: str,
    time_ps: np.ndarray,
    index: np.ndarray | None,
    basis: np.ndarray | None,
    bit: np.ndarray | None,
    intensity: np.ndarray | None,
) -> list[str]:
    n = time_ps.shape[0]
    idx_s = ([""] * n if index is None
             else [str(int(i)) if i >= 0 else "" for i in index])
    bas_s = [""] * n if basis is None else [_BASIS_STR[int(b)] for b in basis]
    bit_s = [""] * n if bit is None else [str(int(b)) for b in bit]
    int_s = [""] * n if intensity is None else [_INTENSITY_STR[int(c)] for c in intensity]
    return [
        f"{station},{kind},{int(t)},{i},{ba},{bi},{cl}"
        for t, i, ba, bi, cl in zip(time_ps, idx_s, bas_s, bit_s, int_s)
    ]


def save_events_csv(
    path,
    candidate_emissions: "EmissionBatchLike",
    downlink_detections: DownlinkDetections,
    uplink: UplinkRecords,
) -> None:
    """Write the merged event log: materialized downlink emissions (the pulses
    the matcher saw), downlink detections, uplink emissions, uplink detections.
    Section order is fixed; times are bit-exact integer picoseconds.
    """
    lines = [",".join(EVENT_CSV_HEADER)]
    lines += _format_rows(
        "A", "emission",
        s_to_ps(candidate_emissions.local_time),
        candidate_emissions.pulse_index,
        candidate_emissions.basis,
        candidate_emissions.bit,
        candidate_emissions.intensity,
    )
    lines += _format_rows(
        "B", "arrival",
        s_to_ps(downlink_detections.local_time),
        downlink_detections.source_index,
        downlink_detections.meas_basis,
        downlink_detections.meas_bit,
        None,
    )
    lines += _format_rows(
        "B", "emission",
        s_to_ps(uplink.emission_local_time),
        uplink.emission_index,
        None, None, None,
    )
    lines += _format_rows(
        "A", "arrival",
        s_to_ps(uplink.detection_local_time),
        uplink.detection_pulse_index,
        None, None, None,
    )
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


@dataclass
class EmissionBatch:
    """Materialized downlink emissions (matcher candidates)."""

    local_time: np.ndarray
    pulse_index: np.ndarray
    basis: np.ndarray
    bit: np.ndarray
    intensity: np.ndarray

    def __len__(self) -> int:
        return int(self.local_time.shape[0])


EmissionBatchLike = EmissionBatch


def load_events_csv(path) -> tuple[EmissionBatch, DownlinkDetections, UplinkRecords]:
    """Inverse of save_events_csv; truth-only columns come back as placeholders."""
    sections: dict[tuple[str, str], list[list[str]]] = {
        ("A", "emission"): [], ("B", "arrival"): [],
        ("B", "emission"): [], ("A", "arrival"): [],
    }
    with open(path, newline="") as fh:
        header = fh.readline().strip().split(",")
        if header != EVENT_CSV_HEADER:
            raise ValueError(f"bad event header {header!r}")
        for line in fh:
            parts = line.rstrip("\n").split(",")
            sections[(parts[0], parts[1])].append(parts[2:])

    def col(rows, j):
        return [r[j] for r in rows]

    rows = sections[("A", "emission")]
    emissions = EmissionBatch(
        local_time=np.asarray([int(v) for v in col(rows, 0)], dtype=np.float64) * 1e-12,
        pulse_index=np.asarray([int(v) for v in col(rows, 1)], dtype=np.int64),
        basis=np.asarray([_BASIS_FROM_STR[v] for v in col(rows, 2)], dtype=np.int8),
        bit=np.asarray([int(v) for v in col(rows, 3)], dtype=np.int8),
        intensity=np.asarray([_INTENSITY_FROM_STR[v] for v in col(rows, 4)], dtype=np.int8),
    )
    rows = sections[("B", "arrival")]
    detections = DownlinkDetections(
        local_time=np.asarray([int(v) for v in col(rows, 0)], dtype=np.float64) * 1e-12,
        meas_basis=np.asarray([_BASIS_FROM_STR[v] for v in col(rows, 2)], dtype=np.int8),
        meas_bit=np.asarray([int(v) for v in col(rows, 3)], dtype=np.int8),
        source_index=np.asarray([int(v) if v else -1 for v in col(rows, 1)], dtype=np.int64),
        true_arrival=np.full(len(rows), np.nan),
    )
    rows = sections[("B", "emission")]
    up_emit_t = np.asarray([int(v) for v in col(rows, 0)], dtype=np.float64) * 1e-12
    up_emit_i = np.asarray([int(v) for v in col(rows, 1)], dtype=np.int64)
    rows = sections[("A", "arrival")]
    uplink = UplinkRecords(
        emission_local_time=up_emit_t,
        emission_index=up_emit_i,
        emission_true_time=np.full(up_emit_t.shape, np.nan),
        detection_local_time=np.asarray([int(v) for v in col(rows, 0)], dtype=np.float64) * 1e-12,
        detection_pulse_index=np.asarray([int(v) for v in col(rows, 1)], dtype=np.int64),
        detection_true_arrival=np.full(len(rows), np.nan),
    )
    return emissions, detections, uplink
