"""Coincidence matching of emissions to detections and two-way pairing.

Coarse synchronization with an unknown clock offset (default bound +-100 ms)
proceeds in four steps:

1. Uplink arrivals mapped back through the predicted flight give the offset
   modulo the uplink period via a circular histogram mode.
2. A robust line fit of uplink nearest-pulse residuals versus time absorbs
   the clock rate difference, leaving the offset known up to an integer
   number of uplink periods.
3. That integer is resolved on the downlink by payload correlation: at the
   true alignment the received qubits agree with the emitted ones (error a
   few percent at most, even under full intercept-resend), while every wrong
   alignment scores ~50%. The uplink period is an exact multiple of the
   downlink pulse spacing, so timing alone cannot break this degeneracy;
   the payload is the discriminator. The same scan resolves small integer
   slips of the downlink spacing itself (inserted path delays land here).
4. A median residual refinement centers the final matching gate.

Matching proper is nearest-unique: a detection pairs with the single
emission inside the gate; detections with zero or two candidates in the
gate are dropped, and when two detections claim one emission the smaller
absolute residual (then the earlier detection) wins. A second pass
re-centers predictions by the median residual of the first.

Emission streams are queried through lookup objects so the same matching
code runs against the virtual pulse grid (live simulation) or against an
explicit event list (replay from CSV). The grid lookup can record every
pulse index it touched, which is exactly the set of emissions the event log
must contain for a replay to reproduce the run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .channel import DownlinkDetections, EmissionBatch, EmissionGrid, UplinkRecords
from .constants import s_to_ps
from .geometry import PassEphemeris

TWOWAY_CSV_HEADER = ["t_as_ps", "t_br_ps", "t_bs_ps", "t_ar_ps", "block_index"]


class PairingError(RuntimeError):
    """Coincidence processing could not produce a usable result."""


class AmbiguousSyncError(PairingError):
    """Coarse synchronization could not pick a unique pulse alignment."""


@dataclass
class PairingConfig:
    """Knobs for coarse sync and matching.

    gate: downlink matching half-window (default 5x the combined one-way
    jitter). offset_bound: half-width of the clock offset search.
    emission_window: two-way pairing window on emission times (default half
    the uplink period). m_half_width: downlink-spacing slips scanned on top
    of the uplink-period candidates.
    """

    gate: float = 1.6e-9
    uplink_gate: float = 1.8e-9
    offset_bound: float = 0.1
    emission_window: float = 50e-6
    block_duration: float = 1.0
    residual_k: float = 3.0
    scan_subsample: int = 512
    refine_subsample: int = 2048
    min_scan_pairs: int = 40
    agreement_floor: float = 0.6
    agreement_margin: float = 0.05
    m_half_width: int = 6

    def __post_init__(self) -> None:
        if self.gate <= 0 or self.uplink_gate <= 0:
            raise ValueError("gates must be positive")
        if self.offset_bound <= 0 or self.emission_window <= 0:
            raise ValueError("offset_bound and emission_window must be positive")


@dataclass(frozen=True)
class AffineOffset:
    """Clock offset model tau(t) = tau0 + slope*(t - t_ref).

    The argument may be either station's local time: the slope is so small
    that the induced difference is femtoseconds.
    """

    tau0: float
    slope: float = 0.0
    t_ref: float = 0.0

    def __call__(self, t):
        return self.tau0 + self.slope * (np.asarray(t, dtype=np.float64) - self.t_ref)


@dataclass
class NearestEmissions:
    """Per-query nearest emission and runner-up distance."""

    time: np.ndarray
    index: np.ndarray
    distance: np.ndarray
    second_distance: np.ndarray


class GridLookup:
    """Nearest-emission queries against a virtual EmissionGrid.

    With record=True the nearest index chosen for every query is
    remembered; touched() returns the sorted unique set. That set is the
    emission log a CSV replay needs: each query's nearest pulse is in it,
    and grid pulses are never closer than one period, so replaying against
    the logged subset returns the same nearest emission and the same
    in-gate/ambiguity classification for every query.
    """

    def __init__(self, grid: EmissionGrid, record: bool = False):
        self.grid = grid
        self._record = record
        self._touched: list[np.ndarray] = []

    def nearest(self, predicted: np.ndarray) -> NearestEmissions:
        pred = np.asarray(predicted, dtype=np.float64)
        center = np.rint(pred * self.grid.rep_rate).astype(np.int64)
        cands = center[:, None] + np.array([-1, 0, 1], dtype=np.int64)
        lo, hi = self.grid.first_index, self.grid.first_index + self.grid.n_pulses
        valid = (cands >= lo) & (cands < hi)
        clipped = np.clip(cands, lo, max(lo, hi - 1))
        times = self.grid.local_times(clipped.ravel()).reshape(clipped.shape)
        dist = np.where(valid, np.abs(pred[:, None] - times), np.inf)
        order = np.argsort(dist, axis=1, kind="stable")
        rows = np.arange(pred.size)
        best, second = order[:, 0], order[:, 1]
        best_index = clipped[rows, best]
        best_dist = dist[rows, best]
        if self._record:
            finite = np.isfinite(best_dist)
            if finite.any():
                self._touched.append(np.unique(best_index[finite]))
        return NearestEmissions(
            time=times[rows, best],
            index=best_index,
            distance=best_dist,
            second_distance=dist[rows, second],
        )

    def payloads(self, index: np.ndarray):
        return self.grid.payloads(index)

    def touched(self) -> np.ndarray:
        if not self._touched:
            return np.empty(0, dtype=np.int64)
        merged = np.unique(np.concatenate(self._touched))
        self._touched = [merged]
        return merged


class BatchLookup:
    """Nearest-emission queries against an explicit, time-sorted event list."""

    def __init__(
        self,
        times: np.ndarray,
        index: np.ndarray | None = None,
        basis: np.ndarray | None = None,
        bit: np.ndarray | None = None,
        intensity: np.ndarray | None = None,
    ):
        self.times = np.asarray(times, dtype=np.float64)
        if np.any(np.diff(self.times) < 0):
            raise ValueError("emission times must be sorted")
        self.index = (np.arange(self.times.size, dtype=np.int64)
                      if index is None else np.asarray(index, dtype=np.int64))
        self.basis = basis
        self.bit = bit
        self.intensity = intensity

    @classmethod
    def from_batch(cls, batch: EmissionBatch) -> "BatchLookup":
        return cls(batch.local_time, batch.pulse_index, batch.basis,
                   batch.bit, batch.intensity)

    def nearest(self, predicted: np.ndarray) -> NearestEmissions:
        pred = np.asarray(predicted, dtype=np.float64)
        if self.times.size == 0:
            inf = np.full(pred.shape, np.inf)
            zero = np.zeros(pred.shape, dtype=np.int64)
            return NearestEmissions(np.zeros_like(pred), zero, inf, inf.copy())
        pos = np.searchsorted(self.times, pred)
        cands = pos[:, None] + np.array([-2, -1, 0, 1], dtype=np.int64)
        valid = (cands >= 0) & (cands < self.times.size)
        clipped = np.clip(cands, 0, self.times.size - 1)
        times = self.times[clipped]
        dist = np.where(valid, np.abs(pred[:, None] - times), np.inf)
        order = np.argsort(dist, axis=1, kind="stable")
        rows = np.arange(pred.size)
        best, second = order[:, 0], order[:, 1]
        return NearestEmissions(
            time=times[rows, best],
            index=self.index[clipped[rows, best]],
            distance=dist[rows, best],
            second_distance=dist[rows, second],
        )

    def payloads(self, index: np.ndarray):
        if self.basis is None:
            raise PairingError("emission list carries no payload data")
        pos = np.searchsorted(self.index, index)
        pos = np.clip(pos, 0, self.index.size - 1)
        if not np.array_equal(self.index[pos], np.asarray(index)):
            raise PairingError("payload requested for an unlogged emission")
        return self.basis[pos], self.bit[pos], (
            None if self.intensity is None else self.intensity[pos])


EmissionsLike = GridLookup | BatchLookup | EmissionBatch | np.ndarray


def _as_lookup(emissions: EmissionsLike) -> GridLookup | BatchLookup:
    if isinstance(emissions, (GridLookup, BatchLookup)):
        return emissions
    if isinstance(emissions, EmissionBatch):
        return BatchLookup.from_batch(emissions)
    return BatchLookup(np.asarray(emissions, dtype=np.float64))


def circular_mode(values: np.ndarray, period: float, bins: int = 1024) -> float:
    """Dominant phase of values modulo period, in [0, period).

    Histogram mode refined by the mean deviation of samples within two bin
    widths of the mode (deviations taken on the circle, so a mode near the
    wrap point is handled).
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise PairingError("no events for phase estimation")
    phase = v % period
    hist, _ = np.histogram(phase, bins=bins, range=(0.0, period))
    center = (int(np.argmax(hist)) + 0.5) * period / bins
    dev = (phase - center + 0.5 * period) % period - 0.5 * period
    near = np.abs(dev) <= 2.0 * period / bins
    if near.any():
        center += float(np.mean(dev[near]))
    return center % period


@dataclass
class OneWayMatches:
    """Result of matching one detection stream against one emission stream.

    detection_row indexes the caller's detection array; emission_index is
    the emission's pulse index; residual = emission time - final predicted
    emission time. correction is the total prediction shift applied by the
    refinement pass.
    """

    detection_row: np.ndarray
    emission_index: np.ndarray
    emission_time: np.ndarray
    residual: np.ndarray
    correction: float = 0.0
    n_no_candidate: int = 0
    n_ambiguous: int = 0
    n_conflict: int = 0

    def __len__(self) -> int:
        return int(self.detection_row.shape[0])


def match_one_way(
    emissions: EmissionsLike,
    detections: np.ndarray,
    coarse_delay_fn: Callable[[np.ndarray], np.ndarray] | float,
    gate: float,
    coarse_gate: float | None = None,
    two_pass: bool = True,
    median_subsample: int | None = 4096,
) -> OneWayMatches:
    """Nearest-unique matching of detections to emissions.

    Predicted emission local time = detection time - coarse_delay_fn
    (detection time); the coarse delay folds together the propagation delay
    and the current clock offset estimate. A detection pairs with the unique
    emission within +-gate; zero or multiple candidates drop the detection,
    and an emission claimed twice keeps the match with the smaller absolute
    residual (ties to the earlier detection). With two_pass, predictions are
    first re-centered by the median residual found within coarse_gate
    (default 10x the gate). The median is taken over an evenly spaced
    subsample of median_subsample detections (None = all): the re-centering
    pass then touches a bounded, deterministic set of emissions, so a
    replay from a partial emission log reproduces it bit for bit.
    """
    if gate <= 0:
        raise ValueError("gate must be positive")
    det = np.asarray(detections, dtype=np.float64)
    if np.any(np.diff(det) < 0):
        raise ValueError("detection times must be sorted")
    lookup = _as_lookup(emissions)

    if callable(coarse_delay_fn):
        pred = det - np.asarray(coarse_delay_fn(det), dtype=np.float64)
    else:
        pred = det - float(coarse_delay_fn)

    correction = 0.0
    if two_pass and det.size:
        cg = coarse_gate if coarse_gate is not None else 10.0 * gate
        sub = (np.arange(det.size)
               if median_subsample is None
               else _subsample_rows(det.size, median_subsample))
        near = lookup.nearest(pred[sub])
        inside = near.distance <= cg
        if not inside.any():
            raise PairingError("no coincidences inside the coarse gate")
        correction = float(np.median(near.time[inside] - pred[sub][inside]))
        pred = pred + correction

    near = lookup.nearest(pred)
    resid = near.time - pred
    in_gate = near.distance <= gate
    ambiguous = in_gate & (near.second_distance <= gate)
    keep = in_gate & ~ambiguous
    n_no_candidate = int(det.size - np.count_nonzero(in_gate))
    n_ambiguous = int(np.count_nonzero(ambiguous))

    rows = np.nonzero(keep)[0]
    emit_idx = near.index[rows]
    # resolve emissions claimed by several detections: best |residual|,
    # then earlier detection
    order = np.lexsort((rows, np.abs(resid[rows]), emit_idx))
    emit_sorted = emit_idx[order]
    first_of_group = np.ones(emit_sorted.size, dtype=bool)
    first_of_group[1:] = emit_sorted[1:] != emit_sorted[:-1]
    winners = order[first_of_group]
    n_conflict = int(rows.size - winners.size)
    winners = winners[np.argsort(rows[winners], kind="stable")]

    sel = rows[winners]
    return OneWayMatches(
        detection_row=sel,
        emission_index=near.index[sel],
        emission_time=near.time[sel],
        residual=resid[sel],
        correction=correction,
        n_no_candidate=n_no_candidate,
        n_ambiguous=n_ambiguous,
        n_conflict=n_conflict,
    )


def match_one_way_brute_force(
    emission_times: np.ndarray,
    detections: np.ndarray,
    coarse_delay_fn: Callable[[np.ndarray], np.ndarray] | float,
    gate: float,
) -> list[tuple[int, int]]:
    """Reference matcher: full O(n*m) scan applying the same rules, followed
    by exhaustive minimum total |residual| assignment among candidates.
    Returns (detection_row, emission_row) pairs. Intended for small oracle
    fixtures only.
    """
    det = np.asarray(detections, dtype=np.float64)
    emi = np.asarray(emission_times, dtype=np.float64)
    if callable(coarse_delay_fn):
        pred = det - np.asarray(coarse_delay_fn(det), dtype=np.float64)
    else:
        pred = det - float(coarse_delay_fn)
    claims: dict[int, list[tuple[float, int]]] = {}
    for i in range(det.size):
        d = np.abs(emi - pred[i])
        inside = np.nonzero(d <= gate)[0]
        if inside.size != 1:
            continue
        j = int(inside[0])
        claims.setdefault(j, []).append((float(d[j]), i))
    out = []
    for j, lst in claims.items():
        lst.sort(key=lambda p: (p[0], det[p[1]]))
        out.append((lst[0][1], j))
    out.sort()
    return out


@dataclass
class SyncResult:
    """Coarse synchronization outcome: the offset model and diagnostics."""

    offset: AffineOffset
    k_uplink: int
    m_downlink: int
    agreement: float
    scanned: int
    uplink_phase: float


def downlink_coarse_delay(
    eph: PassEphemeris, offset: AffineOffset
) -> Callable[[np.ndarray], np.ndarray]:
    """Composite delay for downlink matching: predicted satellite emission
    local time = t_br - (flight - tau)."""

    def fn(t_br: np.ndarray) -> np.ndarray:
        tau = offset(t_br)
        d = eph.propagation_delay(np.asarray(t_br) + tau, "down", anchor="arrival")
        return d - tau

    return fn


def uplink_coarse_delay(
    eph: PassEphemeris, offset: AffineOffset
) -> Callable[[np.ndarray], np.ndarray]:
    """Composite delay for uplink matching: predicted ground emission local
    time = t_ar - (flight + tau)."""

    def fn(t_ar: np.ndarray) -> np.ndarray:
        d = eph.propagation_delay(t_ar, "up", anchor="arrival")
        tau = offset(np.asarray(t_ar) - d)
        return d + tau

    return fn


def _subsample_rows(n: int, count: int) -> np.ndarray:
    if n <= count:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, count).astype(np.int64))


def _clipped_arrival_delay(eph: PassEphemeris, t: np.ndarray) -> np.ndarray:
    # scan candidates far from the truth can push the query outside the
    # ephemeris span; clipping only distorts delays of wrong candidates
    lo, hi = float(eph.times[0]), float(eph.times[-1])
    return eph.propagation_delay(np.clip(t, lo, hi), "down", anchor="arrival")


def synchronize(
    downlink_emissions: EmissionsLike,
    detections: DownlinkDetections,
    uplink: UplinkRecords,
    eph: PassEphemeris,
    downlink_rep_rate: float,
    uplink_rep_rate: float,
    cfg: PairingConfig,
) -> SyncResult:
    """Estimate the clock offset model and resolve the pulse alignment."""
    lookup = _as_lookup(downlink_emissions)
    det_t = detections.local_time
    up_det = uplink.detection_local_time
    if det_t.size == 0 or up_det.size == 0:
        raise PairingError("need detections on both links to synchronize")
    p_up = 1.0 / uplink_rep_rate
    p_down = 1.0 / downlink_rep_rate

    # 1: offset modulo the uplink period
    d_up = eph.propagation_delay(up_det, "up", anchor="arrival")
    pred0 = up_det - d_up
    phase = circular_mode(pred0, p_up)

    # 2: rate-difference line through uplink nearest-pulse residuals
    up_lookup = BatchLookup(uplink.emission_local_time, uplink.emission_index)
    near = up_lookup.nearest(pred0 - phase)
    rho = (pred0 - phase) - near.time
    half = up_det.size // 2
    if half >= 1 and up_det.size >= 8:
        t1, t2 = np.median(up_det[:half]), np.median(up_det[half:])
        a1, a2 = np.median(rho[:half]), np.median(rho[half:])
        slope = (a2 - a1) / (t2 - t1) if t2 > t1 else 0.0
        t_ref = 0.5 * (t1 + t2)
        a_ref = 0.5 * (a1 + a2)
    else:
        slope, t_ref, a_ref = 0.0, float(np.median(up_det)), float(np.median(rho))
    base = AffineOffset(phase + a_ref, slope, t_ref)

    # 3: integer ambiguity via downlink payload agreement
    sub = _subsample_rows(det_t.size, cfg.scan_subsample)
    sub_t = det_t[sub]
    sub_basis = detections.meas_basis[sub]
    sub_bit = detections.meas_bit[sub]
    k_max = int(math.floor((cfg.offset_bound - base.tau0) / p_up + 1.0))
    k_min = int(math.ceil((-cfg.offset_bound - base.tau0) / p_up - 1.0))
    ms = np.arange(-cfg.m_half_width, cfg.m_half_width + 1)
    scores: list[tuple[float, int, int, int]] = []
    for k in range(k_min, k_max + 1):
        tau_k = base.tau0 + k * p_up + base.slope * (sub_t - base.t_ref)
        d_k = _clipped_arrival_delay(eph, sub_t + tau_k)
        pred_base = sub_t + tau_k - d_k
        for m in ms:
            near_s = lookup.nearest(pred_base + m * p_down)
            ok = near_s.distance <= 0.5 * p_down * 1.0001
            if not ok.any():
                continue
            basis, bit, _ = lookup.payloads(near_s.index[ok])
            matched = basis == sub_basis[ok]
            n_valid = int(np.count_nonzero(matched))
            if n_valid < cfg.min_scan_pairs:
                continue
            agree = float(np.mean(bit[matched] == sub_bit[ok][matched]))
            scores.append((agree, n_valid, k, int(m)))
    if not scores:
        raise AmbiguousSyncError(
            "no pulse alignment produced enough basis-matched pairs to score")
    scores.sort(key=lambda s: (-s[0], s[2], s[3]))
    best = scores[0]
    if best[0] < cfg.agreement_floor:
        raise AmbiguousSyncError(
            f"best payload agreement {best[0]:.3f} below floor "
            f"{cfg.agreement_floor:.3f}")
    if len(scores) > 1 and best[0] - scores[1][0] < cfg.agreement_margin:
        raise AmbiguousSyncError(
            f"pulse alignment ambiguous: agreement {best[0]:.3f} vs "
            f"runner-up {scores[1][0]:.3f}")
    k_hat, m_hat = best[2], best[3]

    # 4: median refinement at the chosen alignment
    tau_int = base.tau0 + k_hat * p_up + m_hat * p_down
    refined = AffineOffset(tau_int, base.slope, base.t_ref)
    sub2 = _subsample_rows(det_t.size, cfg.refine_subsample)
    fn = downlink_coarse_delay(eph, refined)
    pred = det_t[sub2] - fn(det_t[sub2])
    near_r = lookup.nearest(pred)
    ok = near_r.distance <= 0.5 * p_down
    if not ok.any():
        raise AmbiguousSyncError("refinement found no in-gate coincidences")
    delta = float(np.median(near_r.time[ok] - pred[ok]))

    return SyncResult(
        offset=AffineOffset(tau_int + delta, base.slope, base.t_ref),
        k_uplink=k_hat,
        m_downlink=m_hat,
        agreement=best[0],
        scanned=len(scores),
        uplink_phase=phase,
    )


def trim_by_std(values: np.ndarray, group: np.ndarray, k: float) -> np.ndarray:
    """Keep-mask: within each group, |v - group mean| <= k * group std.

    Groups with std 0 (or a single member) keep everything.
    """
    v = np.asarray(values, dtype=np.float64)
    g = np.asarray(group)
    if v.size == 0:
        return np.zeros(0, dtype=bool)
    uniq, inv = np.unique(g, return_inverse=True)
    count = np.bincount(inv)
    mean = np.bincount(inv, weights=v) / count
    var = np.bincount(inv, weights=(v - mean[inv]) ** 2) / count
    std = np.sqrt(var)
    limit = np.where(std > 0, k * std, np.inf)
    return np.abs(v - mean[inv]) <= limit[inv]


@dataclass
class TwoWayBatch:
    """Quadruples of one downlink and one uplink signal with near-equal
    emission times, ordered by uplink arrival."""

    t_as: np.ndarray
    t_br: np.ndarray
    t_bs: np.ndarray
    t_ar: np.ndarray
    block_index: np.ndarray

    def __len__(self) -> int:
        return int(self.t_as.shape[0])


def pair_two_way(
    down_t_as: np.ndarray,
    down_t_br: np.ndarray,
    down_block: np.ndarray,
    up_t_bs: np.ndarray,
    up_t_ar: np.ndarray,
    offset: AffineOffset,
    emission_window: float,
) -> TwoWayBatch:
    """Form quadruples: each uplink pair takes the downlink pair whose
    emission is nearest to the clock-corrected uplink emission time, within
    emission_window. Each downlink pair is used at most once; a contested
    pair goes to the earlier uplink event and the loser falls back to its
    bracketing alternative or is dropped.
    """
    t_as = np.asarray(down_t_as, dtype=np.float64)
    order = np.argsort(t_as, kind="stable")
    t_as_s = t_as[order]
    equiv = np.asarray(up_t_bs, dtype=np.float64) + offset(up_t_bs)

    def nearest_two(x):
        pos = np.searchsorted(t_as_s, x)
        left = np.clip(pos - 1, 0, max(0, t_as_s.size - 1))
        right = np.clip(pos, 0, max(0, t_as_s.size - 1))
        dl = np.abs(x - t_as_s[left])
        dr = np.abs(x - t_as_s[right])
        use_left = dl <= dr
        prim = np.where(use_left, left, right)
        seco = np.where(use_left, right, left)
        return prim, np.where(use_left, dl, dr), seco, np.where(use_left, dr, dl)

    if t_as_s.size == 0 or equiv.size == 0:
        empty = np.empty(0)
        return TwoWayBatch(empty, empty.copy(), empty.copy(), empty.copy(),
                           np.empty(0, dtype=np.int64))

    prim, dprim, seco, dseco = nearest_two(equiv)
    choice = np.where(dprim <= emission_window, prim, -1)
    alt = np.where(dseco <= emission_window, seco, -1)

    # exclusivity: first claimant (earlier uplink) keeps the pair, later
    # ones fall back to their alternative once, else drop
    taken = np.zeros(t_as_s.size, dtype=bool)
    assigned = np.full(equiv.size, -1, dtype=np.int64)
    for _ in range(2):
        pend = np.nonzero((choice >= 0) & (assigned < 0))[0]
        if pend.size == 0:
            break
        vals = choice[pend]
        uniq_vals, first_pos = np.unique(vals, return_index=True)
        free = ~taken[uniq_vals]
        win_rows = pend[first_pos[free]]
        assigned[win_rows] = uniq_vals[free]
        taken[uniq_vals[free]] = True
        is_winner = np.zeros(pend.size, dtype=bool)
        is_winner[first_pos[free]] = True
        losers = pend[~is_winner]
        nxt = alt[losers]
        ok_alt = (nxt >= 0) & ~taken[np.clip(nxt, 0, None)]
        choice[losers] = np.where(ok_alt, nxt, -1)
        alt[losers] = -1

    sel = np.nonzero(assigned >= 0)[0]
    down_rows = order[assigned[sel]]
    return TwoWayBatch(
        t_as=t_as[down_rows],
        t_br=np.asarray(down_t_br)[down_rows],
        t_bs=np.asarray(up_t_bs)[sel],
        t_ar=np.asarray(up_t_ar)[sel],
        block_index=np.asarray(down_block)[down_rows],
    )


def twoway_csv_text(batch: TwoWayBatch) -> str:
    """Quadruples as CSV text, timestamps in integer picoseconds. The text
    is the canonical wire payload: the encrypted frame stream carries these
    exact bytes."""
    cols = [s_to_ps(batch.t_as), s_to_ps(batch.t_br),
            s_to_ps(batch.t_bs), s_to_ps(batch.t_ar)]
    lines = [",".join(TWOWAY_CSV_HEADER)]
    lines += [
        f"{a},{b},{c},{d},{e}"
        for a, b, c, d, e in zip(cols[0], cols[1], cols[2], cols[3], batch.block_index)
    ]
    return "\n".join(lines) + "\n"


def save_twoway_csv(path, batch: TwoWayBatch) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(twoway_csv_text(batch))


def load_twoway_csv(path) -> TwoWayBatch:
    raw = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    if raw.size == 0:
        raw = raw.reshape(0, 5)
    return TwoWayBatch(
        t_as=raw[:, 0] * 1e-12,
        t_br=raw[:, 1] * 1e-12,
        t_bs=raw[:, 2] * 1e-12,
        t_ar=raw[:, 3] * 1e-12,
        block_index=raw[:, 4].astype(np.int64),
    )
