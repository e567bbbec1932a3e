"""Pass geometry: range versus time, light-time delay, predicted range.

The ephemeris is a sampled (time, range, radial velocity) table with
piecewise-linear interpolation; the estimator only ever needs R(t) locally
linear, so no orbital mechanics live here. The light-time solution is
direction-aware:

  down  photon leaves the satellite at t_emit and flies to a fixed ground
        receiver, so the path equals the range at emission: d = R(t_emit)/c.
  up    pulse leaves the fixed ground station and must intercept the moving
        satellite, so the path equals the range at arrival: the fixed point of
        d = R(t_emit + d)/c, which for linear R(t) is R(t_emit)/(c - nu).

Both directions then add the constant per-path atmosphere excess delay.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .constants import C_VACUUM

EPHEMERIS_HEADER = ["t_s", "range_m", "radial_velocity_mps"]


class RangeSpanError(ValueError):
    """Query outside the ephemeris sample span."""


class LightTimeError(RuntimeError):
    """Light-time iteration failed to settle (pathological ephemeris)."""


@dataclass(frozen=True)
class PassEphemeris:
    """Sampled satellite-ground range table, linear between samples."""

    times: np.ndarray
    ranges: np.ndarray
    radial_velocities: np.ndarray
    atmosphere_excess_delay: float = 0.0

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=np.float64)
        r = np.asarray(self.ranges, dtype=np.float64)
        v = np.asarray(self.radial_velocities, dtype=np.float64)
        if t.ndim != 1 or t.size < 2 or r.shape != t.shape or v.shape != t.shape:
            raise ValueError("ephemeris needs >= 2 aligned (t, range, velocity) samples")
        if not np.all(np.diff(t) > 0):
            raise ValueError("ephemeris times must be strictly increasing")
        if not np.all(r > 0):
            raise ValueError("ephemeris ranges must be positive")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "ranges", r)
        object.__setattr__(self, "radial_velocities", v)

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def _check_span(self, t) -> None:
        tmin = np.min(t)
        tmax = np.max(t)
        if tmin < self.times[0] or tmax > self.times[-1]:
            raise RangeSpanError(
                f"time {tmin if tmin < self.times[0] else tmax:.6f} s outside ephemeris span "
                f"[{self.times[0]:.6f}, {self.times[-1]:.6f}] s"
            )

    def range_at(self, t):
        """Piecewise-linear range (m) at true time t (s); scalar or ndarray."""
        self._check_span(t)
        return np.interp(t, self.times, self.ranges) if not np.isscalar(t) else float(
            np.interp(t, self.times, self.ranges)
        )

    def radial_velocity_at(self, t):
        """Slope of the interpolated range (m/s) on the interval containing t."""
        self._check_span(t)
        idx = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 2)
        dt = self.times[idx + 1] - self.times[idx]
        slope = (self.ranges[idx + 1] - self.ranges[idx]) / dt
        return float(slope) if np.isscalar(t) else slope

    def propagation_delay(self, true_time, direction: str, anchor: str = "emission"):
        """One-way flight time (s) plus atmosphere excess, per direction.

        true_time is the emission epoch (anchor="emission", default) or the
        arrival epoch (anchor="arrival"). The range samples describe the
        ground station to satellite distance versus time, with the range
        evaluated at whichever end of the path the satellite occupies:

          down, emission: d = R(t)/c            (satellite emits at t)
          up,   emission: d = R(t + d)/c        (satellite receives at t + d)
          down, arrival:  d = R(t - d)/c        (satellite emitted at t - d)
          up,   arrival:  d = R(t)/c            (satellite receives at t)

        The implicit cases iterate to < 1 fs within 20 rounds. The span must
        cover the anchor epochs; the one-flight-time excursion of the
        implicit cases additionally relies on the span's edge margin.
        """
        if direction not in ("up", "down"):
            raise ValueError(f"direction must be 'up' or 'down', got {direction!r}")
        if anchor not in ("emission", "arrival"):
            raise ValueError(f"anchor must be 'emission' or 'arrival', got {anchor!r}")
        scalar = np.isscalar(true_time)
        t = np.atleast_1d(np.asarray(true_time, dtype=np.float64))
        self._check_span(t)
        sign = {("up", "emission"): 1.0, ("down", "arrival"): -1.0}.get((direction, anchor))
        d = np.interp(t, self.times, self.ranges) / C_VACUUM
        if sign is not None:
            for _ in range(20):
                d_next = np.interp(t + sign * d, self.times, self.ranges) / C_VACUUM
                step = np.max(np.abs(d_next - d)) if d.size else 0.0
                d = d_next
                if step < 1e-15:
                    break
            else:
                raise LightTimeError(f"light-time iteration residual {step:.3e} s after 20 rounds")
        d = d + self.atmosphere_excess_delay
        return float(d[0]) if scalar else d


@dataclass
class RangePredictor:
    """Orbit-prediction model: true range plus a bias and Gaussian noise."""

    ephemeris: PassEphemeris
    bias: float = 0.0
    noise_rms: float = 0.0

    def __post_init__(self) -> None:
        if self.noise_rms < 0:
            raise ValueError("noise_rms must be non-negative")

    def predicted_range(self, t, rng: np.random.Generator):
        """R_p(t) = range_at(t) + bias + N(0, noise_rms^2); seed-reproducible."""
        base = self.ephemeris.range_at(t)
        if self.noise_rms == 0.0:
            noise = 0.0 if np.isscalar(t) else np.zeros(np.shape(t))
        elif np.isscalar(t):
            noise = rng.normal(0.0, self.noise_rms)
        else:
            noise = rng.normal(0.0, self.noise_rms, size=np.shape(t))
        return base + self.bias + noise


def linear_pass(
    r0_m: float,
    radial_velocity_mps: float,
    t_start: float,
    t_end: float,
    n_samples: int = 2,
    atmosphere_excess_delay: float = 0.0,
) -> PassEphemeris:
    """Constant-radial-velocity ephemeris: R(t) = r0 + nu*(t - t_start)."""
    t = np.linspace(t_start, t_end, max(2, n_samples))
    return PassEphemeris(
        times=t,
        ranges=r0_m + radial_velocity_mps * (t - t_start),
        radial_velocities=np.full_like(t, radial_velocity_mps),
        atmosphere_excess_delay=atmosphere_excess_delay,
    )


def overflight_pass(
    r_min_m: float,
    ground_speed_mps: float,
    t_closest: float,
    t_start: float,
    t_end: float,
    n_samples: int,
    atmosphere_excess_delay: float = 0.0,
) -> PassEphemeris:
    """Straight-overflight range law R(t) = sqrt(r_min^2 + (v*(t-tc))^2).

    A descending-then-ascending range profile good enough for pass-shaped
    fixtures; the acceptance scenarios use linear_pass segments instead.
    """
    t = np.linspace(t_start, t_end, n_samples)
    x = ground_speed_mps * (t - t_closest)
    r = np.hypot(r_min_m, x)
    v = ground_speed_mps * x / r
    return PassEphemeris(
        times=t, ranges=r, radial_velocities=v, atmosphere_excess_delay=atmosphere_excess_delay
    )


def save_ephemeris_csv(eph: PassEphemeris, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EPHEMERIS_HEADER)
        for t, r, v in zip(eph.times, eph.ranges, eph.radial_velocities):
            writer.writerow([repr(float(t)), repr(float(r)), repr(float(v))])


def load_ephemeris_csv(path, atmosphere_excess_delay: float = 0.0) -> PassEphemeris:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != EPHEMERIS_HEADER:
            raise ValueError(f"bad ephemeris header {header!r}, expected {EPHEMERIS_HEADER}")
        rows = [(float(a), float(b), float(c)) for a, b, c in reader]
    t, r, v = (np.asarray(col, dtype=np.float64) for col in zip(*rows))
    return PassEphemeris(
        times=t, ranges=r, radial_velocities=v, atmosphere_excess_delay=atmosphere_excess_delay
    )


def check_self_consistency(eph: PassEphemeris, tol_mps: float = 1.0) -> float:
    """Max |secant slope - stored radial velocity| per interval (m/s).

    Raises ValueError beyond tol_mps; returns the worst deviation otherwise.
    The stored velocity of a sample is compared against the forward secant of
    the interval it opens.
    """
    secant = np.diff(eph.ranges) / np.diff(eph.times)
    worst = float(np.max(np.abs(secant - eph.radial_velocities[:-1])))
    if worst > tol_mps:
        raise ValueError(f"ephemeris velocity column inconsistent with ranges: {worst:.3f} m/s")
    return worst
