"""Report figures rendered from a run's delimited artifacts.

Rendering is file-only (Agg backend): each function returns a Figure and
render_report_figures writes the standard set of PNGs next to the CSV
artifacts they were read from.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .bb84 import QberBlock, load_blocks_csv
from .estimator import load_solutions_csv, normal_points, offset_and_range
from .pairing import load_twoway_csv

FIGURE_DPI = 120


def offset_figure(epoch, tau_ps, np_epoch=None, np_tau_ps=None):
    """Windowed clock offset versus time, with normal points overlaid."""
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epoch, tau_ps, ".", ms=3, color="tab:blue", label="window solutions")
    if np_epoch is not None and len(np_epoch):
        ax.plot(np_epoch, np_tau_ps, "o", ms=4, mfc="none",
                color="tab:red", label="normal points")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("clock offset (ps)")
    ax.set_title("Two-way clock offset")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    return fig


def residual_figure(epoch, rms_down_ps, rms_up_ps):
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epoch, rms_down_ps, ".-", ms=3, label="downlink")
    ax.plot(epoch, rms_up_ps, ".-", ms=3, label="uplink")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("residual RMS (ps)")
    ax.set_title("Per-window timing residuals")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    return fig


def range_figure(epoch, r0_m):
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epoch, np.asarray(r0_m) / 1e3, ".", ms=3, color="tab:green")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("range (km)")
    ax.set_title("Measured range track")
    fig.tight_layout()
    return fig


def qber_figure(blocks: list[QberBlock], threshold: float | None = None):
    fig, ax = plt.subplots(figsize=(7, 4))
    idx = [b.block_index for b in blocks]
    q = [100.0 * b.qber for b in blocks]
    kept = np.array([b.kept for b in blocks], dtype=bool)
    idx_a = np.asarray(idx, dtype=float)
    q_a = np.asarray(q, dtype=float)
    ax.plot(idx_a[kept], q_a[kept], ".", ms=4, color="tab:blue", label="kept")
    if (~kept).any():
        ax.plot(idx_a[~kept], q_a[~kept], "x", ms=5, color="tab:red",
                label="discarded")
    if threshold is not None:
        ax.axhline(100.0 * threshold, color="k", ls="--", lw=1,
                   label="threshold")
    ax.set_xlabel("block index")
    ax.set_ylabel("QBER (%)")
    ax.set_title("Per-block quantum bit error rate")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    return fig


def render_report_figures(artifact_dir, qber_threshold: float | None = None,
                          normal_point_n: int = 300) -> list[str]:
    """Render the standard figure set from a run's artifact directory.

    Returns the list of files written. Missing artifacts skip their figure
    rather than fail, so a partial directory still reports what it can.
    """
    written: list[str] = []

    def emit(fig, name: str) -> None:
        path = os.path.join(artifact_dir, name)
        fig.savefig(path, dpi=FIGURE_DPI)
        plt.close(fig)
        written.append(path)

    sol_path = os.path.join(artifact_dir, "solutions.csv")
    two_path = os.path.join(artifact_dir, "twoway.csv")
    blk_path = os.path.join(artifact_dir, "blocks.csv")

    np_epoch = np_tau = None
    if os.path.exists(two_path):
        batch = load_twoway_csv(two_path)
        if len(batch):
            tau, _ = offset_and_range(batch)
            order = np.argsort(batch.t_as, kind="stable")
            np_epoch, np_tau = normal_points(batch.t_as[order], tau[order],
                                             normal_point_n)

    if os.path.exists(sol_path):
        sol = load_solutions_csv(sol_path)
        if sol["epoch_s"].size:
            np_tau_ps = np_tau * 1e12 if np_tau is not None else None
            emit(offset_figure(sol["epoch_s"], sol["tau_ps"],
                               np_epoch, np_tau_ps), "offset.png")
            emit(residual_figure(sol["epoch_s"], sol["rms_down_ps"],
                                 sol["rms_up_ps"]), "residuals.png")
            emit(range_figure(sol["epoch_s"], sol["r0_mm"] * 1e-3),
                 "range.png")

    if os.path.exists(blk_path):
        blocks = load_blocks_csv(blk_path)
        if blocks:
            emit(qber_figure(blocks, qber_threshold), "qber.png")

    return written
