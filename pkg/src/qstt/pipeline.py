"""End-to-end session processing: simulate or replay a pass, then match,
sift, gate, solve, check, and package the timing products.

Stage order is fixed: raw events -> coarse sync -> one-way matching -> BB84
sifting -> per-block QBER gating -> residual trims -> two-way quadruples ->
windowed clock solutions -> alert-limit checks -> decoy key accounting ->
authenticated encryption of the timing data -> session report.

Determinism: every random draw of a session comes from child streams of a
single seed sequence spawned in a fixed order, so two runs of the same
scenario and seed produce byte-identical artifacts.

Replay: a finished run can be re-processed from its events.csv instead of
the simulator. The event log records exactly the emissions the matcher
touched, which is the set a replay needs to reproduce matching and every
downstream product bit for bit. A replayed run writes every artifact except
events.csv (it never rewrites its own input).

QBER blocks are partitioned on the satellite emission timeline: the master
pulse grid spans the pass exactly, so block boundaries never leave a
sliver block of a few events whose QBER estimate would be noise.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass
from typing import Any

import numpy as np

from .adversary import AttackScenario, tamper_frames
from .bb84 import (
    DECOY,
    SIGNAL,
    VACUUM,
    DecoyStatistics,
    DecoyStatisticsError,
    QberBlock,
    SiftedPairs,
    filter_blocks,
    save_blocks_csv,
    secret_key_length,
    sift,
)
from .channel import (
    DownlinkDetections,
    EmissionBatch,
    QubitSource,
    UplinkRecords,
    downlink_index_span,
    load_events_csv,
    save_events_csv,
    simulate_downlink,
    simulate_uplink,
)
from .constants import C_VACUUM
from .estimator import (
    OffsetSeries,
    detrended_rms,
    normal_points,
    offset_and_range,
    offset_series,
    pooled_rms,
    save_solutions_csv,
)
from .geometry import PassEphemeris, RangePredictor
from .keycrypto import (
    EncryptedFrame,
    KeyExhaustionError,
    KeyPool,
    decrypt_verify_bytes,
    encrypt_frame,
)
from .pairing import (
    BatchLookup,
    GridLookup,
    OneWayMatches,
    SyncResult,
    TwoWayBatch,
    downlink_coarse_delay,
    match_one_way,
    pair_two_way,
    synchronize,
    trim_by_std,
    twoway_csv_text,
    uplink_coarse_delay,
)
from .scenario import Scenario
from .security import (
    SessionReport,
    VERDICT_COMPROMISED,
    WindowCheck,
    check_windows,
    session_verdict,
)

log = logging.getLogger(__name__)

EVENTS_CSV = "events.csv"
BLOCKS_CSV = "blocks.csv"
TWOWAY_CSV = "twoway.csv"
SOLUTIONS_CSV = "solutions.csv"
REPORT_JSON = "report.json"
FRAMES_BIN = "frames.qstt"

# fixed spawn order of the per-session random streams; changing it changes
# every artifact byte, so treat it as part of the file format
_N_STREAMS = 6
_S_DOWN, _S_UP, _S_PREDICTOR, _S_TAMPER, _S_KEYS, _S_PAYLOAD = range(_N_STREAMS)


@dataclass
class RunResult:
    """Everything a session produced, kept in memory for inspection."""

    scenario: Scenario
    ephemeris: PassEphemeris
    sync: SyncResult
    down_matches: OneWayMatches
    up_matches: OneWayMatches
    blocks: list[QberBlock]
    batch: TwoWayBatch
    series: OffsetSeries
    checks: list[WindowCheck]
    predicted_range: np.ndarray
    stats: DecoyStatistics | None
    key_bits: int
    wire_frames: list[bytes]
    frame_ok: list[bool]
    report: SessionReport
    report_doc: dict
    metrics: dict
    np_epoch: np.ndarray
    np_offset: np.ndarray
    np_range: np.ndarray
    out_dir: str | None


def _streams(seed: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(_N_STREAMS)


def _payload_seed(stream: np.random.SeedSequence) -> int:
    return int(stream.generate_state(1, np.uint64)[0])


def _json_safe(value: Any) -> Any:
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else None
    return value


def run_session(scenario: Scenario, out_dir: str | None = None,
                events_in: str | None = None) -> RunResult:
    """Process one pass. With events_in, replay from an event log instead
    of simulating; with out_dir, write the artifact set there."""
    eph = scenario.load_ephemeris()
    streams = _streams(scenario.seed)
    rng_pred = np.random.default_rng(streams[_S_PREDICTOR])
    rng_tamper = np.random.default_rng(streams[_S_TAMPER])
    rng_keys = np.random.default_rng(streams[_S_KEYS])
    atk = scenario.attack
    pcfg = scenario.pairing
    policy = scenario.policy
    t_start, t_end = scenario.t_start, scenario.t_end

    if events_in is None:
        source = QubitSource(_payload_seed(streams[_S_PAYLOAD]),
                             scenario.intrinsic_error)
        grid, det = simulate_downlink(
            scenario.downlink, eph, scenario.clock_a, scenario.clock_b,
            source, np.random.default_rng(streams[_S_DOWN]),
            t_start, t_end, attack=atk)
        ulr = simulate_uplink(
            scenario.uplink, eph, scenario.clock_a, scenario.clock_b,
            np.random.default_rng(streams[_S_UP]),
            t_start, t_end, attack=atk)
        lookup = GridLookup(grid, record=True)
    else:
        emissions, det, ulr = load_events_csv(events_in)
        grid = None
        lookup = BatchLookup.from_batch(emissions)

    sync = synchronize(lookup, det, ulr, eph,
                       scenario.downlink.rep_rate, scenario.uplink.rep_rate,
                       pcfg)

    dm = match_one_way(lookup, det.local_time,
                       downlink_coarse_delay(eph, sync.offset), pcfg.gate)
    up_lookup = BatchLookup(ulr.emission_local_time, ulr.emission_index)
    um = match_one_way(up_lookup, ulr.detection_local_time,
                       uplink_coarse_delay(eph, sync.offset), pcfg.uplink_gate)

    d_t_as = dm.emission_time
    d_t_br = det.local_time[dm.detection_row]
    sent_basis, sent_bit, sent_intensity = lookup.payloads(dm.emission_index)

    pairs = sift(sent_basis, sent_bit, sent_intensity,
                 det.meas_basis[dm.detection_row],
                 det.meas_bit[dm.detection_row],
                 detection_time=d_t_as, emission_index=dm.emission_index)

    dur = pcfg.block_duration
    if len(d_t_as):
        origin = math.floor(float(d_t_as.min()) / dur) * dur
        d_blk = np.floor((d_t_as - origin) / dur).astype(np.int64)
    else:
        origin = 0.0
        d_blk = np.empty(0, dtype=np.int64)
    if len(pairs):
        blocks = filter_blocks(pairs, block_duration=dur,
                               threshold=policy.qber_threshold,
                               t_origin=origin)
    else:
        blocks = []
    kept_flags = np.array([b.kept for b in blocks], dtype=bool)
    if kept_flags.size:
        in_range = d_blk < kept_flags.size
        d_kept = in_range & kept_flags[np.minimum(d_blk, kept_flags.size - 1)]
    else:
        d_kept = np.zeros(d_blk.size, dtype=bool)

    # trim matching residuals per block (down) / per second (up) so a few
    # tail events do not dominate the window fits
    rows_kept = np.nonzero(d_kept)[0]
    if rows_kept.size:
        keep_in = trim_by_std(dm.residual[rows_kept], d_blk[rows_kept],
                              pcfg.residual_k)
        rows_final = rows_kept[keep_in]
    else:
        rows_final = rows_kept
    u_t_bs = um.emission_time
    u_t_ar = ulr.detection_local_time[um.detection_row]
    if u_t_ar.size:
        chunk = np.floor((u_t_ar - u_t_ar.min()) / dur).astype(np.int64)
        u_keep = trim_by_std(um.residual, chunk, pcfg.residual_k)
    else:
        u_keep = np.zeros(0, dtype=bool)

    batch = pair_two_way(d_t_as[rows_final], d_t_br[rows_final],
                         d_blk[rows_final], u_t_bs[u_keep], u_t_ar[u_keep],
                         sync.offset, pcfg.emission_window)

    series = offset_series(batch, window_duration=scenario.window_duration)
    predictor = RangePredictor(eph, bias=scenario.predictor_bias,
                               noise_rms=scenario.predictor_noise_rms)
    predicted = np.asarray(predictor.predicted_range(series.epoch, rng_pred),
                           dtype=np.float64)
    checks = check_windows(series, predicted, policy)

    if len(batch):
        ev_tau, ev_rng = offset_and_range(batch)
        order = np.argsort(batch.t_as, kind="stable")
        np_epoch, np_offset = normal_points(batch.t_as[order], ev_tau[order],
                                            scenario.normal_point_n)
        _, np_range = normal_points(batch.t_as[order], ev_rng[order],
                                    scenario.normal_point_n)
        mean_tau = float(np.mean(ev_tau))
        mean_range = float(np.mean(ev_rng))
    else:
        np_epoch = np_offset = np_range = np.empty(0)
        mean_tau = mean_range = math.nan
    np_offset_scatter = detrended_rms(np_epoch, np_offset)
    np_range_scatter = detrended_rms(np_epoch, np_range)

    stats, key_bits = _key_accounting(scenario, blocks, pairs, origin,
                                      sent_intensity, d_kept)

    twoway_bytes = twoway_csv_text(batch).encode("ascii")
    wire, frame_ok, results, n_skipped = _frame_exchange(
        scenario, twoway_bytes, key_bits, rng_keys, rng_tamper)

    roundtrip_ok: bool | None = None
    if not atk.tamper_frames:
        got = b"".join(r.plaintext for r in results if r.ok)
        roundtrip_ok = (n_skipped == 0 and all(frame_ok)
                        and got == twoway_bytes)

    avg_rms = float(np_range_scatter) if math.isfinite(np_range_scatter) else None
    report = session_verdict(blocks, checks, frame_ok, policy,
                             averaged_range_rms=avg_rms)

    rms_down, rms_up = pooled_rms(series)
    metrics = {
        "n_downlink_detections": int(det.local_time.size),
        "n_downlink_matched": len(dm),
        "n_uplink_detections": int(ulr.detection_local_time.size),
        "n_uplink_matched": len(um),
        "n_sifted": len(pairs),
        "n_blocks": len(blocks),
        "n_quadruples": len(batch),
        "quadruple_rate_hz": len(batch) / scenario.duration,
        "mean_qber": _mean_qber(blocks),
        "mean_tau_s": mean_tau,
        "mean_range_m": mean_range,
        "rms_down_ps": rms_down * 1e12,
        "rms_up_ps": rms_up * 1e12,
        "np_offset_scatter_ps": np_offset_scatter * 1e12,
        "np_range_scatter_m": np_range_scatter,
        "np_count": int(np_epoch.size),
        "windows_solved": len(series),
        "windows_skipped": len(series.skipped),
        "key_bits": int(key_bits),
        "frames_encrypted": len(wire),
        "frames_skipped": int(n_skipped),
        "frames_authentic": int(sum(frame_ok)),
        "payload_roundtrip_ok": roundtrip_ok,
        "sync_agreement": float(sync.agreement),
        "match_correction_s": float(dm.correction),
    }

    doc = {
        "scenario": scenario.name,
        "seed": int(scenario.seed),
        "duration_s": float(scenario.duration),
        "session": report.to_json_dict(),
        "sync": {
            "tau0_s": _json_safe(sync.offset.tau0),
            "slope": _json_safe(sync.offset.slope),
            "t_ref_s": _json_safe(sync.offset.t_ref),
            "k_uplink": int(sync.k_uplink),
            "m_downlink": int(sync.m_downlink),
            "agreement": _json_safe(sync.agreement),
            "cells_scanned": int(sync.scanned),
        },
        "policy": {
            "alert_limit_L_m": policy.alert_limit_L,
            "qber_threshold": policy.qber_threshold,
            "residual_k": policy.residual_k,
        },
        "estimator": {
            "window_duration_s": scenario.window_duration,
            "normal_point_n": scenario.normal_point_n,
        },
        "metrics": {k: _json_safe(v) for k, v in metrics.items()},
    }

    result = RunResult(
        scenario=scenario, ephemeris=eph, sync=sync, down_matches=dm,
        up_matches=um, blocks=blocks, batch=batch, series=series,
        checks=checks, predicted_range=predicted, stats=stats,
        key_bits=key_bits, wire_frames=wire, frame_ok=frame_ok,
        report=report, report_doc=doc, metrics=metrics, np_epoch=np_epoch,
        np_offset=np_offset, np_range=np_range, out_dir=out_dir,
    )
    if out_dir is not None:
        _write_artifacts(result, twoway_bytes,
                         grid=grid, lookup=lookup, det=det, ulr=ulr,
                         write_events=events_in is None)
    return result


def _mean_qber(blocks: list[QberBlock]) -> float:
    sifted = sum(b.sifted_count for b in blocks)
    errors = sum(b.error_count for b in blocks)
    return errors / sifted if sifted else math.nan


def _key_accounting(scenario: Scenario, blocks: list[QberBlock],
                    pairs: SiftedPairs, origin: float,
                    matched_intensity: np.ndarray, matched_kept: np.ndarray,
                    ) -> tuple[DecoyStatistics | None, int]:
    """Asymptotic decoy-state key yield of the kept blocks.

    Sent-pulse counts are the expected per-class totals over the pass,
    scaled by the kept fraction of the block grid; both factors are exact
    functions of the scenario, so live and replayed runs agree bit for bit.
    """
    kept = [b for b in blocks if b.kept]
    if not kept or not len(pairs):
        return None, 0
    dur = scenario.pairing.block_duration
    first, last = downlink_index_span(scenario.downlink.rep_rate,
                                      scenario.clock_a,
                                      scenario.t_start, scenario.t_end)
    probs = np.asarray(scenario.downlink.intensity_probabilities)
    sent = (last - first) * probs
    frac = min(1.0, len(kept) * dur / scenario.duration)
    sent = sent * frac
    if not np.all(sent > 0):
        return None, 0

    kept_flags = np.array([b.kept for b in blocks], dtype=bool)
    s_blk = np.floor((pairs.detection_time - origin) / dur).astype(np.int64)
    s_in = s_blk < kept_flags.size
    s_kept = s_in & kept_flags[np.minimum(s_blk, kept_flags.size - 1)]
    s_int = pairs.intensity[s_kept]
    s_err = (pairs.sent_bit[s_kept] != pairs.meas_bit[s_kept])
    m_int = matched_intensity[matched_kept]

    stats = DecoyStatistics(
        mu_signal=scenario.downlink.mean_photon_numbers[SIGNAL],
        mu_decoy=scenario.downlink.mean_photon_numbers[DECOY],
        sent_signal=float(sent[SIGNAL]),
        sent_decoy=float(sent[DECOY]),
        sent_vacuum=float(sent[VACUUM]),
        detected_signal=int(np.count_nonzero(m_int == SIGNAL)),
        detected_decoy=int(np.count_nonzero(m_int == DECOY)),
        detected_vacuum=int(np.count_nonzero(m_int == VACUUM)),
        sifted_signal=int(np.count_nonzero(s_int == SIGNAL)),
        errors_signal=int(np.count_nonzero(s_err & (s_int == SIGNAL))),
        sifted_decoy=int(np.count_nonzero(s_int == DECOY)),
        errors_decoy=int(np.count_nonzero(s_err & (s_int == DECOY))),
    )
    if stats.sifted_signal == 0:
        return stats, 0
    try:
        return stats, secret_key_length(stats)
    except DecoyStatisticsError as exc:
        log.warning("decoy statistics rejected, no key distilled: %s", exc)
        return stats, 0


def _frame_exchange(scenario: Scenario, payload: bytes, key_bits: int,
                    rng_keys: np.random.Generator,
                    rng_tamper: np.random.Generator):
    """Encrypt the timing data, optionally corrupt the wire, verify.

    Transmitter and receiver pools are built from the same preseeded and
    freshly distilled material, mirroring the shared-secret assumption of
    quantum key agreement.
    """
    preseed = rng_keys.bytes((scenario.preseed_bits + 7) // 8) \
        if scenario.preseed_bits else b""
    fresh = rng_keys.bytes((key_bits + 7) // 8) if key_bits else b""

    def build_pool() -> KeyPool:
        pool = KeyPool()
        if scenario.preseed_bits:
            pool.deposit(preseed, scenario.preseed_bits)
        if key_bits:
            pool.deposit(fresh, key_bits)
        return pool

    pool_tx, pool_rx = build_pool(), build_pool()
    size = scenario.frame_payload_bytes
    frames: list[EncryptedFrame] = []
    n_skipped = 0
    offsets = range(0, max(len(payload), 1), size)
    for fid, off in enumerate(offsets):
        try:
            frames.append(encrypt_frame(pool_tx, payload[off:off + size], fid))
        except KeyExhaustionError:
            n_skipped = len(offsets) - fid
            log.warning("key pool exhausted, %d frames unsent", n_skipped)
            break

    wire = [f.to_bytes() for f in frames]
    if scenario.attack.tamper_frames and wire:
        wire, _ = tamper_frames(wire, rng_tamper)

    results = []
    last_id = -1
    for data in wire:
        res = decrypt_verify_bytes(pool_rx, data, last_id)
        if res.ok:
            last_id = res.frame_id
        results.append(res)
    return wire, [r.ok for r in results], results, n_skipped


def _write_artifacts(result: RunResult, twoway_bytes: bytes, *, grid,
                     lookup, det: DownlinkDetections, ulr: UplinkRecords,
                     write_events: bool) -> None:
    out = result.out_dir
    os.makedirs(out, exist_ok=True)
    if write_events:
        idx = lookup.touched()
        basis, bit, intensity = grid.payloads(idx)
        emissions = EmissionBatch(grid.local_times(idx), idx,
                                  basis, bit, intensity)
        save_events_csv(os.path.join(out, EVENTS_CSV), emissions, det, ulr)
    save_blocks_csv(result.blocks, os.path.join(out, BLOCKS_CSV))
    with open(os.path.join(out, TWOWAY_CSV), "wb") as fh:
        fh.write(twoway_bytes)
    save_solutions_csv(os.path.join(out, SOLUTIONS_CSV), result.series)
    with open(os.path.join(out, REPORT_JSON), "w", newline="") as fh:
        fh.write(json.dumps(result.report_doc, indent=2, sort_keys=True))
        fh.write("\n")
    with open(os.path.join(out, FRAMES_BIN), "wb") as fh:
        for data in result.wire_frames:
            fh.write(data)


def delay_attack_sweep(scenario: Scenario, delays_down, delays_up,
                       ) -> list[dict]:
    """Run the scenario once clean and once per delay pair, all with the
    same seed, and tabulate the induced shifts against the detection bound:
    any pair whose clock-offset shift exceeds alert_limit / c must be
    flagged compromised."""
    clean = run_session(dataclasses.replace(scenario, attack=AttackScenario()))
    if not len(clean.batch):
        raise RuntimeError("clean reference run produced no quadruples")
    bound = scenario.policy.alert_limit_L / C_VACUUM
    rows = []
    for dd in delays_down:
        for du in delays_up:
            atk = AttackScenario(delay_down=float(dd), delay_up=float(du))
            res = run_session(dataclasses.replace(scenario, attack=atk))
            d_tau = res.metrics["mean_tau_s"] - clean.metrics["mean_tau_s"]
            d_rng = res.metrics["mean_range_m"] - clean.metrics["mean_range_m"]
            flagged = res.report.verdict == VERDICT_COMPROMISED
            rows.append({
                "delay_down_s": float(dd),
                "delay_up_s": float(du),
                "delta_tau_s": d_tau,
                "delta_range_m": d_rng,
                "flagged": flagged,
                "bound_ok": flagged or abs(d_tau) <= bound + 1e-12,
            })
    return rows
