"""BB84 polarization payloads, sifting, per-block QBER filtering, key length.

Payloads are four polarization states on two conjugate bases. Sifting keeps
matched-basis pairs; QBER is monitored in one-second blocks against the 1.25%
protocol threshold with a kept-block confidence of 1 - 4*Q; key accounting
uses the asymptotic vacuum+weak decoy-state lower bound. Error correction and
privacy amplification are accounted for in length only, never executed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

# Integer codes used in columnar batches.
RECTILINEAR, DIAGONAL = 0, 1
SIGNAL, DECOY, VACUUM = 0, 1, 2

BASIS_NAMES = {RECTILINEAR: "rectilinear", DIAGONAL: "diagonal"}
BASIS_CODES = {v: k for k, v in BASIS_NAMES.items()}
INTENSITY_NAMES = {SIGNAL: "signal", DECOY: "decoy", VACUUM: "vacuum"}
INTENSITY_CODES = {v: k for k, v in INTENSITY_NAMES.items()}

# (basis, bit) -> polarization label; rectilinear is H/V, diagonal D/A.
_POLARIZATION = {(RECTILINEAR, 0): "H", (RECTILINEAR, 1): "V",
                 (DIAGONAL, 0): "D", (DIAGONAL, 1): "A"}

BLOCK_CSV_HEADER = ["block_index", "sifted", "errors", "qber", "kept", "confidence"]

QBER_THRESHOLD_DEFAULT = 0.0125


class DecoyStatisticsError(ValueError):
    """Measured decoy statistics are mutually inconsistent."""


@dataclass(frozen=True)
class QubitRecord:
    basis: str
    bit: int
    intensity_class: str = "signal"

    def __post_init__(self) -> None:
        if self.basis not in BASIS_CODES:
            raise ValueError(f"unknown basis {self.basis!r}")
        if self.bit not in (0, 1):
            raise ValueError(f"bit must be 0 or 1, got {self.bit!r}")
        if self.intensity_class not in INTENSITY_CODES:
            raise ValueError(f"unknown intensity class {self.intensity_class!r}")

    @property
    def polarization(self) -> str:
        return _POLARIZATION[(BASIS_CODES[self.basis], self.bit)]


def encode(bit: int, basis: str, intensity_class: str = "signal", rng=None) -> QubitRecord:
    """Prepare a polarization record; rng accepted for signature symmetry."""
    return QubitRecord(basis=basis, bit=bit, intensity_class=intensity_class)


def measure(state: QubitRecord, basis: str, intrinsic_error: float, rng: np.random.Generator) -> int:
    """Measure one record: matched basis flips with intrinsic_error, else coin."""
    if not 0.0 <= intrinsic_error <= 0.5:
        raise ValueError("intrinsic_error must be within [0, 0.5]")
    if basis not in BASIS_CODES:
        raise ValueError(f"unknown basis {basis!r}")
    if basis == state.basis:
        flip = rng.random() < intrinsic_error
        return state.bit ^ int(flip)
    return int(rng.integers(0, 2))


def measure_array(
    sent_basis: np.ndarray,
    sent_bit: np.ndarray,
    meas_basis: np.ndarray,
    intrinsic_error: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Vectorized measure(): per-event outcome bits for the detector stream."""
    if not 0.0 <= intrinsic_error <= 0.5:
        raise ValueError("intrinsic_error must be within [0, 0.5]")
    n = sent_basis.shape[0]
    out = rng.integers(0, 2, size=n, dtype=np.int8)
    matched = sent_basis == meas_basis
    flips = rng.random(n) < intrinsic_error
    out[matched] = (sent_bit[matched] ^ flips[matched]).astype(np.int8)
    return out


@dataclass
class SiftedPairs:
    """Matched-basis pairs, time-ordered by detection local time."""

    detection_time: np.ndarray   # seconds, ground-clock local
    emission_index: np.ndarray   # pulse index of the matched emission
    sent_bit: np.ndarray
    meas_bit: np.ndarray
    intensity: np.ndarray        # SIGNAL/DECOY/VACUUM codes
    pair_row: np.ndarray         # row index into the matched-pair arrays

    def __len__(self) -> int:
        return int(self.detection_time.shape[0])

    @property
    def errors(self) -> np.ndarray:
        return self.sent_bit != self.meas_bit


def sift(
    sent_basis: np.ndarray,
    sent_bit: np.ndarray,
    intensity: np.ndarray,
    meas_basis: np.ndarray,
    meas_bit: np.ndarray,
    detection_time: np.ndarray,
    emission_index: np.ndarray | None = None,
) -> SiftedPairs:
    """Keep matched-basis pairs from aligned matched emission/detection arrays.

    Inputs are row-aligned (row i of every array is one matched pair, as
    produced by pairing.match_one_way). Vacuum-class rows are kept in the
    output for decoy statistics; key material downstream excludes them.
    """
    n = sent_basis.shape[0]
    for arr in (sent_bit, intensity, meas_basis, meas_bit, detection_time):
        if arr.shape[0] != n:
            raise ValueError("sift inputs must be row-aligned")
    keep = sent_basis == meas_basis
    rows = np.nonzero(keep)[0]
    order = np.argsort(detection_time[rows], kind="stable")
    rows = rows[order]
    idx = emission_index if emission_index is not None else np.arange(n, dtype=np.int64)
    return SiftedPairs(
        detection_time=detection_time[rows],
        emission_index=idx[rows],
        sent_bit=sent_bit[rows].astype(np.int8),
        meas_bit=meas_bit[rows].astype(np.int8),
        intensity=intensity[rows].astype(np.int8),
        pair_row=rows.astype(np.int64),
    )


@dataclass(frozen=True)
class QberBlock:
    block_index: int
    duration: float
    sifted_count: int
    error_count: int
    qber: float          # NaN when the block holds no sifted pairs
    kept: bool
    confidence: float    # 1 - 4*qber for kept blocks, NaN otherwise

    def __post_init__(self) -> None:
        if not 0 <= self.error_count <= max(self.sifted_count, 0):
            raise ValueError("error_count must lie within [0, sifted_count]")


def filter_blocks(
    pairs: SiftedPairs,
    block_duration: float = 1.0,
    threshold: float = QBER_THRESHOLD_DEFAULT,
    t_origin: float | None = None,
    n_blocks: int | None = None,
) -> list[QberBlock]:
    """Partition sifted pairs into fixed-duration blocks and gate on QBER.

    Blocks are indexed by detection local time from t_origin (default: floor
    of the first detection). QBER per block is computed over non-vacuum pairs;
    an empty block is kept=False with qber NaN rather than a division by zero.
    """
    if block_duration <= 0:
        raise ValueError("block_duration must be positive")
    if len(pairs) == 0:
        return []
    t = pairs.detection_time
    origin = math.floor(t[0] / block_duration) * block_duration if t_origin is None else t_origin
    idx = np.floor((t - origin) / block_duration).astype(np.int64)
    if idx.min() < 0:
        raise ValueError("t_origin must not postdate the first sifted pair")
    count = int(idx.max()) + 1 if n_blocks is None else n_blocks
    keyed = pairs.intensity != VACUUM
    err = (pairs.sent_bit != pairs.meas_bit) & keyed
    sifted_per = np.bincount(idx[keyed], minlength=count)
    errors_per = np.bincount(idx[err], minlength=count)
    blocks = []
    for b in range(count):
        sifted = int(sifted_per[b])
        errors = int(errors_per[b])
        if sifted == 0:
            blocks.append(QberBlock(b, block_duration, 0, 0, math.nan, False, math.nan))
            continue
        q = errors / sifted
        kept = q <= threshold
        blocks.append(
            QberBlock(b, block_duration, sifted, errors, q, kept,
                      1.0 - 4.0 * q if kept else math.nan)
        )
    return blocks


def block_index_of(pairs: SiftedPairs, block_duration: float, t_origin: float) -> np.ndarray:
    """Block index of each sifted pair under the filter_blocks partition."""
    return np.floor((pairs.detection_time - t_origin) / block_duration).astype(np.int64)


def binary_entropy(p: float) -> float:
    """H2(p) in bits; 0 at the endpoints by continuity."""
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return float(-p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p))


@dataclass(frozen=True)
class DecoyStatistics:
    """Per-intensity tallies of one run, the inputs of the key-length bound.

    sent counts may be expected values (pulses * class probability) when the
    pulse grid is too large to enumerate; at 1e10 pulses the relative error of
    that substitution is ~1e-5, far below the asymptotic bound's own slack.
    """

    mu_signal: float
    mu_decoy: float
    sent_signal: float
    sent_decoy: float
    sent_vacuum: float
    detected_signal: int
    detected_decoy: int
    detected_vacuum: int
    sifted_signal: int
    errors_signal: int
    sifted_decoy: int
    errors_decoy: int

    def gains(self) -> tuple[float, float, float]:
        if min(self.sent_signal, self.sent_decoy, self.sent_vacuum) <= 0:
            raise DecoyStatisticsError("need sent pulses in every intensity class")
        return (
            self.detected_signal / self.sent_signal,
            self.detected_decoy / self.sent_decoy,
            self.detected_vacuum / self.sent_vacuum,
        )


def secret_key_length(
    stats: DecoyStatistics,
    error_correction_factor: float = 1.16,
    gain_tolerance: float = 0.2,
) -> int:
    """Asymptotic vacuum+weak decoy-state lower bound on extractable key bits.

    The single-photon yield is bounded from the signal/decoy/vacuum gains, the
    single-photon error rate from the decoy error rate, and the length is

        L = n_sift_signal * [ (Q1/Qmu) * (1 - H2(e1)) - f * H2(Emu) ]

    clamped at zero. Raises DecoyStatisticsError when the decoy gain exceeds
    the signal gain beyond tolerance (physically impossible for mu > nu).
    """
    mu, nu = stats.mu_signal, stats.mu_decoy
    if not mu > nu >= 0:
        raise DecoyStatisticsError(f"need mu_signal > mu_decoy >= 0, got {mu}, {nu}")
    q_mu, q_nu, y0 = stats.gains()
    if q_mu <= 0 or stats.sifted_signal == 0:
        return 0
    if q_nu > q_mu * (1.0 + gain_tolerance):
        raise DecoyStatisticsError(
            f"decoy gain {q_nu:.3e} exceeds signal gain {q_mu:.3e} beyond tolerance"
        )
    e_mu = stats.errors_signal / stats.sifted_signal
    e_nu = stats.errors_decoy / max(stats.sifted_decoy, 1)

    if nu > 0:
        y1 = (mu / (mu * nu - nu * nu)) * (
            q_nu * math.exp(nu)
            - q_mu * math.exp(mu) * (nu * nu) / (mu * mu)
            - ((mu * mu - nu * nu) / (mu * mu)) * y0
        )
    else:
        # Degenerate decoy (nu = 0 duplicates vacuum): no multiphoton bound.
        y1 = 0.0
    y1 = max(y1, 0.0)
    q1 = y1 * mu * math.exp(-mu)
    if y1 <= 0.0 or q1 <= 0.0:
        return 0
    e1 = (e_nu * q_nu * math.exp(nu) - 0.5 * y0) / (y1 * nu) if nu > 0 else 0.5
    e1 = min(max(e1, 0.0), 0.5)

    per_sifted = (q1 / q_mu) * (1.0 - binary_entropy(e1)) - error_correction_factor * binary_entropy(e_mu)
    return max(0, int(math.floor(stats.sifted_signal * per_sifted)))


def save_blocks_csv(blocks: list[QberBlock], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BLOCK_CSV_HEADER)
        for b in blocks:
            writer.writerow([
                b.block_index,
                b.sifted_count,
                b.error_count,
                "" if math.isnan(b.qber) else f"{b.qber:.9f}",
                int(b.kept),
                "" if math.isnan(b.confidence) else f"{b.confidence:.9f}",
            ])


def load_blocks_csv(path, block_duration: float = 1.0) -> list[QberBlock]:
    blocks = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != BLOCK_CSV_HEADER:
            raise ValueError(f"bad block header {header!r}")
        for row in reader:
            idx, sifted, errors, qber, kept, conf = row
            blocks.append(QberBlock(
                block_index=int(idx),
                duration=block_duration,
                sifted_count=int(sifted),
                error_count=int(errors),
                qber=float(qber) if qber else math.nan,
                kept=bool(int(kept)),
                confidence=float(conf) if conf else math.nan,
            ))
    return blocks
