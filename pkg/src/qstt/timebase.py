"""Clock models for the satellite master clock and the ground station clock.

A clock's local reading maps to the reference timescale as

    true = kappa * (local + drift * local**2 / 2) + tau

i.e. a rate factor kappa near 1, an offset tau at local zero, and an optional
linear fractional-frequency drift integrated in closed form. Tagging applies
the inverse map plus Gaussian timestamp jitter. No relativistic terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ClockModel:
    """Affine-plus-drift clock. offset_tau in s, freq_drift in 1/s."""

    offset_tau: float = 0.0
    rate_kappa: float = 1.0
    freq_drift: float = 0.0
    timestamp_jitter_rms: float = 0.0

    def __post_init__(self) -> None:
        if not self.rate_kappa > 0:
            raise ValueError(f"rate_kappa must be positive, got {self.rate_kappa}")
        if self.timestamp_jitter_rms < 0:
            raise ValueError("timestamp_jitter_rms must be non-negative")

    def to_true(self, local_time):
        """Map a local reading (s) to reference time (s). Accepts ndarrays."""
        t = np.asarray(local_time, dtype=np.float64) if not np.isscalar(local_time) else local_time
        if self.freq_drift == 0.0:
            base = t
        else:
            base = t + self.freq_drift * t * t * 0.5
        return self.rate_kappa * base + self.offset_tau

    def to_local(self, true_time):
        """Invert to_true. Deterministic; jitter belongs to tag() only."""
        t = np.asarray(true_time, dtype=np.float64) if not np.isscalar(true_time) else true_time
        x = (t - self.offset_tau) / self.rate_kappa
        if self.freq_drift == 0.0:
            return x
        # The drift correction is tiny (|drift*x| << 1); a fixed point on the
        # exact forward map converges geometrically with that ratio.
        for _ in range(4):
            x = (t - self.offset_tau) / self.rate_kappa - self.freq_drift * x * x * 0.5
        return x

    def tag(self, true_time, rng: np.random.Generator):
        """Timestamp an instant: to_local plus N(0, timestamp_jitter_rms^2)."""
        local = self.to_local(true_time)
        if self.timestamp_jitter_rms == 0.0:
            return local
        if np.isscalar(local):
            return local + rng.normal(0.0, self.timestamp_jitter_rms)
        return local + rng.normal(0.0, self.timestamp_jitter_rms, size=np.shape(local))


IDEAL = ClockModel()
