"""Attack models applied between emission and detection.

Three effects, each off by default: intercept-resend on a fraction of downlink
pulses (Eve measures in a uniformly random basis and resends her outcome in
that basis), an inserted path delay per direction (constant seconds or a
callable of true emission time), and tampering of encrypted telemetry frames.
Inserted delays must be non-negative: propagation time can be added to but not
removed, so a negative request raises instead of simulating an impossible
channel.

Interception is applied to the detected subset only. Detection is independent
of the payload, so thinning first and intercepting after is statistically
identical to intercepting the full stream, at a small fraction of the cost.
Event counts are never changed by interception, only payloads and (under a
fixed-shift resend policy) timing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import bb84

RESEND_PASS_THROUGH = "pass-through"
RESEND_FIXED_SHIFT = "fixed-shift"


class NegativeDelayError(ValueError):
    """An inserted path delay evaluated to a negative value."""


DelaySpec = float | Callable[[np.ndarray], np.ndarray] | None


def _eval_delay(spec: DelaySpec, t: np.ndarray, label: str) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if spec is None:
        return np.zeros_like(t)
    if callable(spec):
        d = np.asarray(spec(t), dtype=np.float64)
        d = np.broadcast_to(d, t.shape).astype(np.float64)
    else:
        d = np.full_like(t, float(spec))
    if d.size and float(d.min()) < 0.0:
        raise NegativeDelayError(f"{label} delay is negative ({float(d.min()):.3e} s)")
    return d


@dataclass
class AttackScenario:
    """What the adversary does to the links during a session.

    delay_down / delay_up are seconds added to the one-way propagation time,
    given as a constant or a function of true emission time. tamper_frames
    turns on classical-frame tampering (bit flips plus a replayed frame)
    downstream of encryption. resend_timing_policy controls whether
    intercepted photons are forwarded at their original arrival time or
    shifted by resend_shift seconds.
    """

    intercept_resend_fraction: float = 0.0
    delay_down: DelaySpec = None
    delay_up: DelaySpec = None
    tamper_frames: bool = False
    resend_timing_policy: str = RESEND_PASS_THROUGH
    resend_shift: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.intercept_resend_fraction <= 1.0:
            raise ValueError("intercept_resend_fraction must be in [0, 1]")
        if self.resend_timing_policy not in (RESEND_PASS_THROUGH, RESEND_FIXED_SHIFT):
            raise ValueError(f"unknown resend_timing_policy {self.resend_timing_policy!r}")
        if self.resend_timing_policy == RESEND_FIXED_SHIFT and self.resend_shift < 0.0:
            raise NegativeDelayError("resend shift must be non-negative")
        for spec, label in ((self.delay_down, "downlink"), (self.delay_up, "uplink")):
            if spec is not None and not callable(spec) and float(spec) < 0.0:
                raise NegativeDelayError(f"{label} delay is negative ({float(spec):.3e} s)")

    @property
    def active(self) -> bool:
        return (self.intercept_resend_fraction > 0.0 or self.delay_down is not None
                or self.delay_up is not None or self.tamper_frames)

    def eval_delay_down(self, t_emit_true: np.ndarray) -> np.ndarray:
        return _eval_delay(self.delay_down, t_emit_true, "downlink")

    def eval_delay_up(self, t_emit_true: np.ndarray) -> np.ndarray:
        return _eval_delay(self.delay_up, t_emit_true, "uplink")

    def intercept_resend(
        self, rng: np.random.Generator, basis: np.ndarray, bit: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Replace an intercept_resend_fraction subset with Eve's resent states.

        Returns (basis, bit, hit_mask). Draw counts are fixed by the input
        size, so a given generator state yields the same stream regardless of
        the fraction.
        """
        n = basis.shape[0]
        hit = rng.random(n) < self.intercept_resend_fraction
        eve_basis = rng.integers(0, 2, size=n, dtype=np.int8)
        eve_bit = bb84.measure_array(basis, bit, eve_basis, 0.0, rng)
        out_basis = np.where(hit, eve_basis, basis).astype(np.int8)
        out_bit = np.where(hit, eve_bit, bit).astype(np.int8)
        return out_basis, out_bit, hit

    def resend_time_shift(self, hit: np.ndarray) -> np.ndarray:
        """Per-photon arrival shift implied by the resend timing policy."""
        if self.resend_timing_policy == RESEND_FIXED_SHIFT:
            return np.where(hit, self.resend_shift, 0.0)
        return np.zeros(hit.shape[0], dtype=np.float64)


def flip_random_bit(frame: bytes, rng: np.random.Generator) -> bytes:
    """Flip one uniformly chosen bit of the frame."""
    if not frame:
        return frame
    pos = int(rng.integers(0, len(frame)))
    bitpos = int(rng.integers(0, 8))
    mutable = bytearray(frame)
    mutable[pos] ^= 1 << bitpos
    return bytes(mutable)


def tamper_frames(
    frames: list[bytes], rng: np.random.Generator, flip_fraction: float = 0.5
) -> tuple[list[bytes], np.ndarray]:
    """Corrupt a frame stream: flip a bit in a random subset and replay a
    stale frame at the end. Output count equals input count (the replay
    replaces the final frame so downstream sees the same framing cadence).

    Returns the modified list and a mask of frames that are not authentic
    (flipped or replaced by a replay).
    """
    out = list(frames)
    bad = np.zeros(len(frames), dtype=bool)
    if not frames:
        return out, bad
    hit = rng.random(len(frames)) < flip_fraction
    for i, frame in enumerate(frames):
        if hit[i] and frame:
            out[i] = flip_random_bit(frame, rng)
            bad[i] = True
    if len(frames) >= 2:
        victim = int(rng.integers(0, len(frames) - 1))
        out[-1] = frames[victim]
        bad[-1] = True
    return out, bad
