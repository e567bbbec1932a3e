"""Alert-limit ranging check and the session security verdict.

A session is judged on three independent checks: QBER block filtering
(photon-level tampering), the ranging alert limit (path-delay tampering),
and frame authentication (data-level tampering). Any failed check makes
the session compromised. A secure verdict guarantees the residual clock
offset manipulation is below alert_limit_L / c, since an undetected delay
attack satisfies |delta tau| <= delta R / c <= L / c.

The statistical ranging error is reported alongside that bound rather
than folded into it, keeping the |R - R_p| <= L rule crisp while making
the practical uncertainty explicit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .constants import C_VACUUM
from .estimator import OffsetSeries

VERDICT_SECURE = "secure"
VERDICT_COMPROMISED = "compromised"
VERDICT_INSUFFICIENT = "insufficient-data"


@dataclass(frozen=True)
class SecurityPolicy:
    """Thresholds for the three session checks.

    alert_limit_L is the tolerated |measured - predicted| range gap in
    meters; qber_threshold the per-block discard level; residual_k scales
    the reported statistical ranging term (k sigma).
    """

    alert_limit_L: float = 0.05
    qber_threshold: float = 0.0125
    residual_k: float = 3.0

    def __post_init__(self) -> None:
        if self.alert_limit_L <= 0:
            raise ValueError("alert_limit_L must be positive")
        if not 0.0 < self.qber_threshold < 0.25:
            raise ValueError("qber_threshold must be in (0, 0.25)")
        if self.residual_k <= 0:
            raise ValueError("residual_k must be positive")


# centimeter-class orbit prediction (laser-ranged orbits)
DEFAULT_POLICY = SecurityPolicy()
# meter-class orbit prediction (broadcast-ephemeris quality)
METER_CLASS_POLICY = SecurityPolicy(alert_limit_L=3.0)


def alert_check(solution, predicted_range_at_epoch: float,
                policy: SecurityPolicy) -> bool:
    """True (keep) iff |r0 - predicted| <= alert_limit_L.

    Accepts a window Solution or a bare measured range in meters.
    """
    r0 = getattr(solution, "r0", solution)
    gap = abs(float(r0) - float(predicted_range_at_epoch))
    return gap <= policy.alert_limit_L


@dataclass(frozen=True)
class WindowCheck:
    """Alert-limit outcome for one fit window."""

    epoch: float
    range_discrepancy: float
    keep: bool


def check_windows(series: OffsetSeries, predicted_range,
                  policy: SecurityPolicy) -> list[WindowCheck]:
    """alert_check per window of an offset series.

    predicted_range holds the prior-known range evaluated at each window
    epoch (same length as the series).
    """
    if len(predicted_range) != len(series):
        raise ValueError("predicted_range length must match the series")
    checks = []
    for i in range(len(series)):
        gap = abs(float(series.range_m[i]) - float(predicted_range[i]))
        checks.append(WindowCheck(
            epoch=float(series.epoch[i]),
            range_discrepancy=gap,
            keep=alert_check(float(series.range_m[i]),
                             float(predicted_range[i]), policy),
        ))
    return checks


@dataclass(frozen=True)
class SessionReport:
    """Counts, worst discrepancy, verdict, and the offset guarantee."""

    blocks_total: int
    blocks_kept: int
    windows_total: int
    windows_kept: int
    frames_total: int
    frames_authentic: int
    max_range_discrepancy: float | None
    verdict: str
    guaranteed_offset_bound: float | None
    statistical_offset_term: float | None = None

    def __post_init__(self) -> None:
        for kept, total in ((self.blocks_kept, self.blocks_total),
                            (self.windows_kept, self.windows_total),
                            (self.frames_authentic, self.frames_total)):
            if kept < 0 or kept > total:
                raise ValueError("kept counts must satisfy 0 <= kept <= total")
        if self.verdict not in (VERDICT_SECURE, VERDICT_COMPROMISED,
                                VERDICT_INSUFFICIENT):
            raise ValueError(f"unknown verdict {self.verdict!r}")

    def to_json_dict(self) -> dict:
        return {
            "blocks_total": self.blocks_total,
            "blocks_kept": self.blocks_kept,
            "windows_total": self.windows_total,
            "windows_kept": self.windows_kept,
            "frames_total": self.frames_total,
            "frames_authentic": self.frames_authentic,
            "max_range_discrepancy_m": self.max_range_discrepancy,
            "verdict": self.verdict,
            "guaranteed_offset_bound_s": self.guaranteed_offset_bound,
            "statistical_offset_term_s": self.statistical_offset_term,
            "summary": summarize(self),
        }


def session_verdict(
    blocks: Sequence,
    window_checks: Sequence[WindowCheck],
    frame_auth_results: Iterable[bool],
    policy: SecurityPolicy,
    averaged_range_rms: float | None = None,
) -> SessionReport:
    """Combine block filtering, alert checks, and frame authentication.

    blocks carry a .kept flag (QBER-filtered), window_checks come from
    check_windows, frame_auth_results is one boolean per consumed frame.
    Compromised if any individual check failed; secure when nothing failed
    and at least one window survived; insufficient-data otherwise.
    averaged_range_rms (meters), when given, is reported as a k-sigma
    statistical offset term alongside the hard L/c bound.
    """
    frame_flags = list(frame_auth_results)
    blocks_total = len(blocks)
    blocks_kept = sum(1 for b in blocks if b.kept)
    windows_total = len(window_checks)
    windows_kept = sum(1 for w in window_checks if w.keep)
    frames_total = len(frame_flags)
    frames_authentic = sum(1 for ok in frame_flags if ok)

    failed = (blocks_kept < blocks_total
              or windows_kept < windows_total
              or frames_authentic < frames_total)
    if failed:
        verdict = VERDICT_COMPROMISED
    elif windows_kept > 0:
        verdict = VERDICT_SECURE
    else:
        verdict = VERDICT_INSUFFICIENT

    max_gap = (max(w.range_discrepancy for w in window_checks)
               if window_checks else None)
    bound = policy.alert_limit_L / C_VACUUM if verdict == VERDICT_SECURE else None
    stat_term = (policy.residual_k * averaged_range_rms / C_VACUUM
                 if averaged_range_rms is not None else None)
    return SessionReport(
        blocks_total=blocks_total,
        blocks_kept=blocks_kept,
        windows_total=windows_total,
        windows_kept=windows_kept,
        frames_total=frames_total,
        frames_authentic=frames_authentic,
        max_range_discrepancy=max_gap,
        verdict=verdict,
        guaranteed_offset_bound=bound,
        statistical_offset_term=stat_term,
    )


def summarize(report: SessionReport) -> str:
    """Human-readable one-paragraph session summary."""
    lines = [
        f"verdict: {report.verdict}",
        f"blocks kept: {report.blocks_kept}/{report.blocks_total}",
        f"windows kept: {report.windows_kept}/{report.windows_total}",
        f"frames authentic: {report.frames_authentic}/{report.frames_total}",
    ]
    if report.max_range_discrepancy is not None:
        lines.append(
            f"worst range discrepancy: {report.max_range_discrepancy * 100:.2f} cm")
    if report.guaranteed_offset_bound is not None:
        lines.append(
            "guaranteed offset-manipulation bound: "
            f"{report.guaranteed_offset_bound * 1e12:.0f} ps")
    if report.statistical_offset_term is not None:
        lines.append(
            "statistical ranging term: "
            f"{report.statistical_offset_term * 1e12:.0f} ps")
    return "; ".join(lines)
