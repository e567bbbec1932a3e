"""Protocol-layer tests: polarization records, measurement statistics, a
loop-based sifting oracle, hand-built QBER blocks, and the decoy-state key
bound checked against a scalar re-derivation plus its qualitative laws."""

import dataclasses
import math

import numpy as np
import pytest

from qstt.bb84 import (
    DECOY,
    QBER_THRESHOLD_DEFAULT,
    SIGNAL,
    VACUUM,
    DecoyStatistics,
    DecoyStatisticsError,
    QberBlock,
    binary_entropy,
    block_index_of,
    encode,
    filter_blocks,
    load_blocks_csv,
    measure,
    measure_array,
    save_blocks_csv,
    secret_key_length,
    sift,
)


def test_polarization_labels():
    assert encode(0, "rectilinear").polarization == "H"
    assert encode(1, "rectilinear").polarization == "V"
    assert encode(0, "diagonal").polarization == "D"
    assert encode(1, "diagonal").polarization == "A"
    with pytest.raises(ValueError):
        encode(2, "rectilinear")
    with pytest.raises(ValueError):
        encode(0, "circular")


def test_measure_matched_basis_error_rate():
    rng = np.random.default_rng(11)
    state = encode(1, "diagonal")
    n = 100_000
    errs = sum(measure(state, "diagonal", 0.02, rng) != 1 for _ in range(n))
    # binomial 5-sigma band around 2%
    assert abs(errs / n - 0.02) < 5 * math.sqrt(0.02 * 0.98 / n)


def test_measure_cross_basis_is_a_coin():
    rng = np.random.default_rng(12)
    state = encode(0, "rectilinear")
    n = 100_000
    ones = sum(measure(state, "diagonal", 0.0, rng) for _ in range(n))
    assert abs(ones / n - 0.5) < 5 * math.sqrt(0.25 / n)


def test_measure_array_statistics_and_determinism():
    rng = np.random.default_rng(21)
    n = 200_000
    sent_basis = rng.integers(0, 2, n, dtype=np.int8)
    sent_bit = rng.integers(0, 2, n, dtype=np.int8)
    meas_basis = rng.integers(0, 2, n, dtype=np.int8)
    out1 = measure_array(sent_basis, sent_bit, meas_basis, 0.005,
                         np.random.default_rng(77))
    out2 = measure_array(sent_basis, sent_bit, meas_basis, 0.005,
                         np.random.default_rng(77))
    assert np.array_equal(out1, out2)

    matched = sent_basis == meas_basis
    err_matched = np.mean(out1[matched] != sent_bit[matched])
    err_crossed = np.mean(out1[~matched] != sent_bit[~matched])
    n_m = int(np.count_nonzero(matched))
    assert abs(err_matched - 0.005) < 5 * math.sqrt(0.005 * 0.995 / n_m)
    assert abs(err_crossed - 0.5) < 5 * math.sqrt(0.25 / (n - n_m))
    with pytest.raises(ValueError):
        measure_array(sent_basis, sent_bit, meas_basis, 0.6, rng)


def test_sift_against_loop_oracle():
    rng = np.random.default_rng(33)
    n = 500
    sent_basis = rng.integers(0, 2, n, dtype=np.int8)
    sent_bit = rng.integers(0, 2, n, dtype=np.int8)
    intensity = rng.integers(0, 3, n, dtype=np.int8)
    meas_basis = rng.integers(0, 2, n, dtype=np.int8)
    meas_bit = rng.integers(0, 2, n, dtype=np.int8)
    t = rng.uniform(0.0, 10.0, n)
    emission_index = rng.integers(0, 10**9, n, dtype=np.int64)

    pairs = sift(sent_basis, sent_bit, intensity, meas_basis, meas_bit,
                 detection_time=t, emission_index=emission_index)

    # reference: keep matched-basis rows, order by detection time
    keep_rows = [i for i in range(n) if sent_basis[i] == meas_basis[i]]
    keep_rows.sort(key=lambda i: t[i])
    assert np.array_equal(pairs.pair_row, np.asarray(keep_rows))
    assert np.array_equal(pairs.detection_time, t[keep_rows])
    assert np.array_equal(pairs.emission_index, emission_index[keep_rows])
    assert np.array_equal(pairs.sent_bit, sent_bit[keep_rows])
    assert np.array_equal(pairs.meas_bit, meas_bit[keep_rows])
    assert np.array_equal(pairs.intensity, intensity[keep_rows])
    assert np.array_equal(pairs.errors,
                          sent_bit[keep_rows] != meas_bit[keep_rows])
    assert len(pairs) == len(keep_rows)


def test_sift_rejects_misaligned_rows():
    z = np.zeros(3, dtype=np.int8)
    with pytest.raises(ValueError):
        sift(z, z, z, z, np.zeros(4, dtype=np.int8), np.zeros(3))


def _pairs_at(times, errors, intensity=None):
    n = len(times)
    sent = np.zeros(n, dtype=np.int8)
    meas = np.asarray(errors, dtype=np.int8)
    inten = (np.zeros(n, dtype=np.int8) if intensity is None
             else np.asarray(intensity, dtype=np.int8))
    return sift(np.zeros(n, dtype=np.int8), sent, inten,
                np.zeros(n, dtype=np.int8), meas,
                detection_time=np.asarray(times, dtype=np.float64))


def test_filter_blocks_hand_case():
    # block 0: 4 pairs 1 error (25%), block 1: empty, block 2: 2 clean pairs
    pairs = _pairs_at([0.1, 0.2, 0.3, 0.4, 2.2, 2.9], [1, 0, 0, 0, 0, 0])
    blocks = filter_blocks(pairs, block_duration=1.0, threshold=0.0125,
                           t_origin=0.0)
    assert len(blocks) == 3
    b0, b1, b2 = blocks
    assert (b0.sifted_count, b0.error_count) == (4, 1)
    assert b0.qber == pytest.approx(0.25)
    assert not b0.kept and math.isnan(b0.confidence)
    assert b1.sifted_count == 0 and not b1.kept and math.isnan(b1.qber)
    assert b2.kept and b2.qber == 0.0 and b2.confidence == 1.0


def test_filter_blocks_threshold_boundary_keeps():
    # exactly at threshold: 1 error in 80 = 1.25%
    pairs = _pairs_at([i * 0.01 for i in range(80)], [1] + [0] * 79)
    blocks = filter_blocks(pairs, block_duration=1.0)
    assert len(blocks) == 1
    assert blocks[0].qber == pytest.approx(QBER_THRESHOLD_DEFAULT)
    assert blocks[0].kept
    assert blocks[0].confidence == pytest.approx(1.0 - 4 * 0.0125)


def test_filter_blocks_vacuum_rows_are_not_key_material():
    # vacuum pair with a wrong bit must count in neither sifted nor errors
    pairs = _pairs_at([0.1, 0.2, 0.3], [0, 0, 1],
                      intensity=[SIGNAL, DECOY, VACUUM])
    blocks = filter_blocks(pairs, block_duration=1.0, t_origin=0.0)
    assert blocks[0].sifted_count == 2
    assert blocks[0].error_count == 0


def test_filter_blocks_origin_and_index_helper():
    pairs = _pairs_at([5.5, 6.5, 7.5], [0, 0, 0])
    blocks = filter_blocks(pairs, block_duration=1.0)
    assert len(blocks) == 3  # origin defaults to floor(first) = 5
    idx = block_index_of(pairs, 1.0, 5.0)
    assert np.array_equal(idx, [0, 1, 2])
    with pytest.raises(ValueError):
        filter_blocks(pairs, block_duration=1.0, t_origin=6.0)
    with pytest.raises(ValueError):
        filter_blocks(pairs, block_duration=0.0)


def test_qber_block_validation():
    with pytest.raises(ValueError):
        QberBlock(0, 1.0, 4, 5, 1.25, False, math.nan)


def test_binary_entropy_values():
    assert binary_entropy(0.0) == 0.0
    assert binary_entropy(1.0) == 0.0
    assert binary_entropy(0.5) == 1.0
    assert binary_entropy(0.11) == pytest.approx(0.4999164, abs=1e-6)
    assert binary_entropy(0.3) == pytest.approx(binary_entropy(0.7))


def _stats(q=0.005, eta=1e-4, n_sift=400_000):
    """Decoy tallies for a symmetric channel model: class gains follow
    1 - exp(-mu*eta) with a dark-count floor, errors follow q."""
    mu, nu = 0.8, 0.1
    y0 = 2e-6
    q_mu = 1 - math.exp(-mu * eta) + y0
    q_nu = 1 - math.exp(-nu * eta) + y0
    sent_s, sent_d, sent_v = 8e9, 1e9, 1e9
    sift_d = int(n_sift * (q_nu * sent_d) / (q_mu * sent_s))
    return DecoyStatistics(
        mu_signal=mu, mu_decoy=nu,
        sent_signal=sent_s, sent_decoy=sent_d, sent_vacuum=sent_v,
        detected_signal=int(q_mu * sent_s), detected_decoy=int(q_nu * sent_d),
        detected_vacuum=int(y0 * sent_v),
        sifted_signal=n_sift, errors_signal=int(q * n_sift),
        sifted_decoy=sift_d, errors_decoy=int(q * sift_d),
    )


def test_secret_key_length_against_scalar_rederivation():
    stats = _stats()
    mu, nu = stats.mu_signal, stats.mu_decoy
    q_mu = stats.detected_signal / stats.sent_signal
    q_nu = stats.detected_decoy / stats.sent_decoy
    y0 = stats.detected_vacuum / stats.sent_vacuum
    e_mu = stats.errors_signal / stats.sifted_signal
    e_nu = stats.errors_decoy / stats.sifted_decoy

    y1 = (mu / (mu * nu - nu**2)) * (
        q_nu * math.exp(nu) - q_mu * math.exp(mu) * nu**2 / mu**2
        - (mu**2 - nu**2) / mu**2 * y0)
    q1 = y1 * mu * math.exp(-mu)
    e1 = (e_nu * q_nu * math.exp(nu) - 0.5 * y0) / (y1 * nu)
    expect = math.floor(stats.sifted_signal * (
        (q1 / q_mu) * (1 - binary_entropy(e1))
        - 1.16 * binary_entropy(e_mu)))
    got = secret_key_length(stats)
    assert got == expect
    assert got > 0


def test_secret_key_length_monotone_in_qber():
    lengths = []
    for q in [0.0, 0.01, 0.02, 0.04, 0.06, 0.08, 0.10, 0.11, 0.15, 0.25]:
        lengths.append(secret_key_length(_stats(q=q)))
    assert all(a >= b for a, b in zip(lengths, lengths[1:]))
    # nothing extractable at or beyond 11% error
    for q, length in zip([0.11, 0.15, 0.25], lengths[-3:]):
        assert length == 0, f"q={q} gave {length}"
    assert lengths[0] > 0


def test_secret_key_length_guards():
    with pytest.raises(DecoyStatisticsError):
        secret_key_length(dataclasses.replace(_stats(), mu_signal=0.1,
                                              mu_decoy=0.1))
    with pytest.raises(DecoyStatisticsError):
        # decoy gain impossibly above signal gain
        secret_key_length(dataclasses.replace(_stats(),
                                              detected_decoy=10**9))
    with pytest.raises(DecoyStatisticsError):
        dataclasses.replace(_stats(), sent_vacuum=0.0).gains()
    # degenerate nu = 0 carries no multiphoton information
    assert secret_key_length(dataclasses.replace(_stats(), mu_decoy=0.0)) == 0
    # no detections, no key
    assert secret_key_length(dataclasses.replace(_stats(),
                                                 detected_signal=0)) == 0


def test_blocks_csv_roundtrip(tmp_path):
    pairs = _pairs_at([0.1, 0.2, 1.3, 1.4, 1.5], [1, 0, 0, 0, 0])
    blocks = filter_blocks(pairs, block_duration=1.0, t_origin=0.0)
    path = tmp_path / "blocks.csv"
    save_blocks_csv(blocks, path)
    back = load_blocks_csv(path, block_duration=1.0)
    assert len(back) == len(blocks)
    for a, b in zip(back, blocks):
        assert a.block_index == b.block_index
        assert a.sifted_count == b.sifted_count
        assert a.error_count == b.error_count
        assert a.kept == b.kept
        assert (a.qber == pytest.approx(b.qber)
                or (math.isnan(a.qber) and math.isnan(b.qber)))
