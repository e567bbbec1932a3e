"""Clock model mapping tests: exact affine inverse, drift closed form
against an independent quadratic solve, and tagging jitter statistics."""

import numpy as np
import pytest

from qstt.timebase import IDEAL, ClockModel


def test_ideal_clock_is_identity():
    t = np.array([0.0, 1.5, -3.25, 1e6])
    assert np.array_equal(IDEAL.to_true(t), t)
    assert np.array_equal(IDEAL.to_local(t), t)
    assert IDEAL.to_true(2.5) == 2.5


def test_affine_mapping_exact():
    clk = ClockModel(offset_tau=3.4712e-3, rate_kappa=1.0000000012)
    local = np.array([0.0, 10.0, 99.999, 1234.56789])
    true = clk.to_true(local)
    # forward map is the definition itself
    assert np.allclose(true, clk.rate_kappa * local + clk.offset_tau,
                       rtol=0, atol=0)
    # inverse is algebraically exact for zero drift
    back = clk.to_local(true)
    assert np.max(np.abs(back - local)) < 1e-12


def test_drift_forward_closed_form():
    clk = ClockModel(offset_tau=1e-3, rate_kappa=1.0 + 2e-9, freq_drift=1e-11)
    t = np.array([0.0, 50.0, 100.0])
    expect = clk.rate_kappa * (t + clk.freq_drift * t * t / 2.0) + clk.offset_tau
    assert np.array_equal(clk.to_true(t), expect)


def test_drift_inverse_against_quadratic_solve():
    # independent oracle: solve kappa*(x + d*x^2/2) + tau = t for x with the
    # quadratic formula, picking the root near t
    clk = ClockModel(offset_tau=2.5e-4, rate_kappa=1.0 + 1.2e-9, freq_drift=5e-12)
    rng = np.random.default_rng(71)
    for t in rng.uniform(0.0, 200.0, size=50):
        a = clk.rate_kappa * clk.freq_drift / 2.0
        b = clk.rate_kappa
        c = clk.offset_tau - t
        x_oracle = (-b + np.sqrt(b * b - 4 * a * c)) / (2 * a)
        x = clk.to_local(t)
        assert abs(x - x_oracle) < 1e-12
        # and the round trip closes below a femtosecond
        assert abs(clk.to_true(x) - t) < 1e-15 * max(1.0, abs(t))


def test_roundtrip_with_drift_across_magnitudes():
    clk = ClockModel(offset_tau=-7.7e-3, rate_kappa=0.999999998, freq_drift=-2e-12)
    t = np.array([0.0, 1e-6, 1.0, 3600.0])
    assert np.max(np.abs(clk.to_true(clk.to_local(t)) - t)) < 1e-12


def test_tag_without_jitter_is_deterministic():
    clk = ClockModel(offset_tau=1e-3, rate_kappa=1.0 + 1e-9)
    rng = np.random.default_rng(0)
    t = np.linspace(0, 10, 11)
    tagged = clk.tag(t, rng)
    assert np.array_equal(tagged, clk.to_local(t))
    # no rng state consumed on the jitter-free path
    assert np.random.default_rng(0).random() == rng.random()


def test_tag_jitter_statistics():
    clk = ClockModel(timestamp_jitter_rms=50e-12)
    rng = np.random.default_rng(1234)
    n = 200_000
    tags = clk.tag(np.zeros(n), rng)
    assert abs(np.mean(tags)) < 5 * 50e-12 / np.sqrt(n)
    assert abs(np.std(tags) - 50e-12) < 0.02 * 50e-12
    scalar = clk.tag(1.0, np.random.default_rng(5))
    assert np.isscalar(scalar)


def test_validation():
    with pytest.raises(ValueError):
        ClockModel(rate_kappa=0.0)
    with pytest.raises(ValueError):
        ClockModel(rate_kappa=-1.0)
    with pytest.raises(ValueError):
        ClockModel(timestamp_jitter_rms=-1e-12)
