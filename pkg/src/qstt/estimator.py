"""Clock offset and range estimation from two-way event quadruples.

Point evaluation combines one quadruple into a clock offset and a ranging
distance; the windowed solver fits (R0, nu, tau, kappa) to all quadruples
of a time window by linear least squares, with the range assumed linear in
time across the window. Residual statistics and normal-point averaging
round out the post-processing.

Conventions: tau and kappa map the ground clock to the satellite scale,
t_sat = kappa * t_ground + tau. The pointwise offset tau_ba is the opposite
signed quantity (tau_ba = -tau when kappa = 1); both are exposed.

Numerical care: epochs are O(100 s) while the information lives in
sub-nanosecond differences, so every difference of nearby timestamps is
computed pairwise (exact in binary64 for same-magnitude operands) before
any scaling, the window solve re-centers times on the window midpoint, and
the rate factor is solved as c*(kappa-1) to keep the design matrix
conditioned.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .constants import C_VACUUM
from .pairing import TwoWayBatch

log = logging.getLogger(__name__)

SOLUTION_CSV_HEADER = [
    "epoch_s", "tau_ps", "r0_mm", "nu_mmps", "kappa_minus_1",
    "rms_down_ps", "rms_up_ps", "n_events",
]

_PARAM_NAMES = ("r0", "nu", "c*(kappa-1)", "c*tau + c*(kappa-1)*t0")


class EstimationError(RuntimeError):
    """The window's data cannot determine the requested parameters."""


def offset_and_range_point(t_as, t_br, t_bs, t_ar):
    """Single-quadruple clock offset and range.

    tau_ba = (t_br + t_bs - t_as - t_ar)/2, the amount the ground clock
    leads the satellite clock; range = c*((t_ar - t_as) - (t_bs - t_br))/2.
    Scalar or array inputs. Terms are grouped into same-link differences so
    the large common epoch cancels exactly.
    """
    tau_ba = 0.5 * ((np.asarray(t_br) - np.asarray(t_as))
                    + (np.asarray(t_bs) - np.asarray(t_ar)))
    rng = 0.5 * C_VACUUM * ((np.asarray(t_ar) - np.asarray(t_as))
                            - (np.asarray(t_bs) - np.asarray(t_br)))
    return tau_ba, rng


def offset_and_range(batch: TwoWayBatch):
    """Vectorized offset_and_range_point over a quadruple batch."""
    return offset_and_range_point(batch.t_as, batch.t_br, batch.t_bs, batch.t_ar)


@dataclass(frozen=True)
class Solution:
    """Windowed least-squares fit of the two-way timing model."""

    r0: float          # meters, range at the reference epoch
    nu: float          # meters/second, radial velocity
    tau: float         # seconds, ground-to-satellite clock offset
    kappa: float       # ground clock rate factor
    t_a0: float        # seconds, window reference epoch (midpoint)
    rms_down: float    # seconds, downlink row residual RMS
    rms_up: float      # seconds, uplink row residual RMS
    n_events: int      # quadruples used (rows = 2*n_events)
    covariance: np.ndarray  # 4x4 over (r0, nu, tau, kappa)

    def __post_init__(self) -> None:
        if self.n_events < 4:
            raise ValueError("a solution needs at least 4 events")
        if self.rms_down < 0 or self.rms_up < 0:
            raise ValueError("residual RMS must be non-negative")


def _rank_check(design: np.ndarray) -> None:
    svals, vh = np.linalg.svd(design, compute_uv=True)[1:]
    if svals[0] == 0.0 or svals[-1] / svals[0] < 1e-12:
        null = vh[-1]
        parts = sorted(zip(np.abs(null), _PARAM_NAMES), reverse=True)
        combo = " and ".join(name for weight, name in parts[:2] if weight > 0.1)
        raise EstimationError(
            f"window data cannot separate {combo} "
            "(single-direction or degenerate geometry)")


def solve_window(batch: TwoWayBatch, window: tuple[float, float]) -> Solution:
    """Fit (R0, nu, tau, kappa) to the quadruples whose downlink emission
    falls in [window[0], window[1]).

    Model rows, with t0 the window midpoint and all times local:
      downlink:  c*(kappa*t_br + tau - t_as) = R0 + nu*(t_as - t0)
      uplink:    c*(t_ar - kappa*t_bs - tau) = R0 + nu*(t_ar - t0)
    Solved in the variables (R0, nu, c*(kappa-1), c*tau + c*(kappa-1)*t0)
    by QR, then mapped back. Raises EstimationError when the window cannot
    identify all four parameters.
    """
    start, end = window
    sel = (batch.t_as >= start) & (batch.t_as < end)
    n = int(np.count_nonzero(sel))
    if n < 4:
        raise EstimationError(f"window [{start}, {end}) has {n} events; need >= 4")
    t0 = 0.5 * (start + end)
    t_as = batch.t_as[sel]
    t_br = batch.t_br[sel]
    t_bs = batch.t_bs[sel]
    t_ar = batch.t_ar[sel]

    ones = np.ones(n)
    a_down = np.column_stack([ones, t_as - t0, -(t_br - t0), -ones])
    a_up = np.column_stack([ones, t_ar - t0, t_bs - t0, ones])
    b_down = C_VACUUM * (t_br - t_as)
    b_up = C_VACUUM * (t_ar - t_bs)
    design = np.vstack([a_down, a_up])
    rhs = np.concatenate([b_down, b_up])

    q, r = np.linalg.qr(design)
    _rank_check(r)
    x = np.linalg.solve(r, q.T @ rhs)

    resid = design @ x - rhs
    rms_down = float(np.sqrt(np.mean(resid[:n] ** 2))) / C_VACUUM
    rms_up = float(np.sqrt(np.mean(resid[n:] ** 2))) / C_VACUUM

    dof = max(2 * n - 4, 1)
    s2 = float(resid @ resid) / dof
    r_inv = np.linalg.solve(r, np.eye(4))
    cov_x = s2 * (r_inv @ r_inv.T)
    # map (R0, nu, w=c*(kappa-1), u=c*tau + w*t0) -> (r0, nu, tau, kappa)
    jac = np.array([
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, -t0 / C_VACUUM, 1.0 / C_VACUUM],
        [0.0, 0.0, 1.0 / C_VACUUM, 0.0],
    ])
    cov = jac @ cov_x @ jac.T

    w, u = x[2], x[3]
    return Solution(
        r0=float(x[0]),
        nu=float(x[1]),
        tau=float((u - w * t0) / C_VACUUM),
        kappa=float(1.0 + w / C_VACUUM),
        t_a0=t0,
        rms_down=rms_down,
        rms_up=rms_up,
        n_events=n,
        covariance=cov,
    )


def detrended_rms(t: np.ndarray, v: np.ndarray) -> float:
    """RMS about the least-squares line through (t, v)."""
    if t.size < 3:
        return float("nan")
    tc = t - t.mean()
    denom = float(tc @ tc)
    slope = float(tc @ (v - v.mean())) / denom if denom > 0 else 0.0
    resid = v - v.mean() - slope * tc
    return float(np.sqrt(np.mean(resid**2)))


@dataclass
class OffsetSeries:
    """Per-window solutions plus raw per-event scatter statistics.

    offset is the clock offset evaluated at the window epoch,
    tau + (kappa-1)*epoch. That combination is what a single window
    measures well; splitting it into the constant tau would multiply the
    window's rate noise by the absolute epoch. raw_offset_rms /
    raw_range_rms are the RMS of the per-event pointwise offset and range
    about a straight line within each window (the scatter of the raw data,
    with the in-window drift removed).
    """

    epoch: np.ndarray
    offset: np.ndarray
    range_m: np.ndarray
    nu: np.ndarray
    kappa: np.ndarray
    rms_down: np.ndarray
    rms_up: np.ndarray
    raw_offset_rms: np.ndarray
    raw_range_rms: np.ndarray
    n_events: np.ndarray
    window_duration: float
    origin: float
    skipped: list[tuple[float, int]]

    def __post_init__(self) -> None:
        if self.epoch.size > 1 and not np.all(np.diff(self.epoch) > 0):
            raise ValueError("window epochs must be strictly increasing")

    def __len__(self) -> int:
        return int(self.epoch.shape[0])


def offset_series(
    batch: TwoWayBatch,
    window_duration: float = 1.0,
    origin: float | None = None,
) -> OffsetSeries:
    """solve_window applied to consecutive windows of the pass.

    Windows are [origin + i*d, origin + (i+1)*d); origin defaults to the
    start of the window grid containing the first event. Windows with fewer
    than 4 events are skipped and logged.
    """
    if window_duration <= 0:
        raise ValueError("window_duration must be positive")
    if len(batch) == 0:
        empty = np.empty(0)
        return OffsetSeries(empty, empty.copy(), empty.copy(), empty.copy(),
                            empty.copy(), empty.copy(), empty.copy(),
                            empty.copy(), empty.copy(),
                            np.empty(0, dtype=np.int64), window_duration,
                            0.0, [])
    if origin is None:
        origin = float(np.floor(batch.t_as.min() / window_duration) * window_duration)
    idx = np.floor((batch.t_as - origin) / window_duration).astype(np.int64)
    if idx.min() < 0:
        raise ValueError("origin must not postdate the first event")

    tau_pt, rng_pt = offset_and_range(batch)
    rows: list[tuple] = []
    skipped: list[tuple[float, int]] = []
    for i in np.unique(idx):
        start = origin + i * window_duration
        sel = idx == i
        n = int(np.count_nonzero(sel))
        if n < 4:
            log.info("skipping window at %.3f s with %d events", start, n)
            skipped.append((start, n))
            continue
        try:
            sol = solve_window(batch, (start, start + window_duration))
        except EstimationError as exc:
            log.warning("skipping window at %.3f s: %s", start, exc)
            skipped.append((start, n))
            continue
        t_w = batch.t_as[sel]
        rows.append((
            sol.t_a0, sol.tau + (sol.kappa - 1.0) * sol.t_a0,
            sol.r0, sol.nu, sol.kappa,
            sol.rms_down, sol.rms_up,
            detrended_rms(t_w, tau_pt[sel]),
            detrended_rms(t_w, rng_pt[sel]),
            n,
        ))
    cols = list(zip(*rows)) if rows else [[] for _ in range(10)]
    return OffsetSeries(
        epoch=np.asarray(cols[0], dtype=np.float64),
        offset=np.asarray(cols[1], dtype=np.float64),
        range_m=np.asarray(cols[2], dtype=np.float64),
        nu=np.asarray(cols[3], dtype=np.float64),
        kappa=np.asarray(cols[4], dtype=np.float64),
        rms_down=np.asarray(cols[5], dtype=np.float64),
        rms_up=np.asarray(cols[6], dtype=np.float64),
        raw_offset_rms=np.asarray(cols[7], dtype=np.float64),
        raw_range_rms=np.asarray(cols[8], dtype=np.float64),
        n_events=np.asarray(cols[9], dtype=np.int64),
        window_duration=window_duration,
        origin=origin,
        skipped=skipped,
    )


def pooled_rms(series: OffsetSeries) -> tuple[float, float]:
    """Event-weighted RMS of the per-window per-link residuals."""
    if len(series) == 0:
        return float("nan"), float("nan")
    w = series.n_events.astype(np.float64)
    down = float(np.sqrt(np.sum(w * series.rms_down**2) / np.sum(w)))
    up = float(np.sqrt(np.sum(w * series.rms_up**2) / np.sum(w)))
    return down, up


def normal_points(epochs: np.ndarray, values: np.ndarray, n: int = 300):
    """Average non-overlapping blocks of n consecutive points.

    Returns (epoch, value) arrays with the block timestamp at the mean
    epoch. A trailing partial block is dropped and logged.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    t = np.asarray(epochs, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if t.shape != v.shape:
        raise ValueError("epochs and values must have equal length")
    full = t.size // n
    dropped = t.size - full * n
    if dropped:
        log.info("normal points: dropping trailing partial block of %d", dropped)
    t = t[: full * n].reshape(full, n)
    v = v[: full * n].reshape(full, n)
    return t.mean(axis=1), v.mean(axis=1)


def save_solutions_csv(path, series: OffsetSeries) -> None:
    lines = [",".join(SOLUTION_CSV_HEADER)]
    for i in range(len(series)):
        lines.append(
            f"{series.epoch[i]:.6f},{series.offset[i] * 1e12:.6f},"
            f"{series.range_m[i] * 1e3:.6f},{series.nu[i] * 1e3:.6f},"
            f"{series.kappa[i] - 1.0:.15e},"
            f"{series.rms_down[i] * 1e12:.6f},{series.rms_up[i] * 1e12:.6f},"
            f"{series.n_events[i]}"
        )
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


def load_solutions_csv(path) -> dict[str, np.ndarray]:
    """Columns of the solutions file, keyed by header name."""
    with open(path, newline="") as fh:
        header = fh.readline().strip().split(",")
        if header != SOLUTION_CSV_HEADER:
            raise ValueError(f"bad solutions header {header!r}")
        raw = np.loadtxt(fh, delimiter=",", ndmin=2)
    if raw.size == 0:
        raw = raw.reshape(0, len(SOLUTION_CSV_HEADER))
    return {name: raw[:, j] for j, name in enumerate(SOLUTION_CSV_HEADER)}
