"""Ephemeris and light-time tests.

The four propagation cases have linear-range closed forms (the range is
evaluated at the satellite end of the path):

    down/emission   d = R(t)/c
    up/emission     d = R(t)/(c - nu)
    down/arrival    d = R(t)/(c + nu)
    up/arrival      d = R(t)/c

The implicit two are additionally checked against an independent
fixed-point iteration on the interpolated table.
"""

import numpy as np
import pytest

from qstt.constants import C_VACUUM
from qstt.geometry import (
    LightTimeError,
    PassEphemeris,
    RangePredictor,
    RangeSpanError,
    check_self_consistency,
    linear_pass,
    load_ephemeris_csv,
    overflight_pass,
    save_ephemeris_csv,
)


def test_validation_errors():
    with pytest.raises(ValueError):
        PassEphemeris(np.array([0.0]), np.array([1.0]), np.array([0.0]))
    with pytest.raises(ValueError):
        PassEphemeris(np.array([0.0, 0.0]), np.array([1.0, 1.0]),
                      np.array([0.0, 0.0]))
    with pytest.raises(ValueError):
        PassEphemeris(np.array([0.0, 1.0]), np.array([1.0, -1.0]),
                      np.array([0.0, 0.0]))
    with pytest.raises(ValueError):
        PassEphemeris(np.array([0.0, 1.0]), np.array([1.0, 1.0, 1.0]),
                      np.array([0.0, 0.0]))


def test_range_interpolation_against_hand_values():
    eph = PassEphemeris(
        times=np.array([0.0, 10.0, 30.0]),
        ranges=np.array([1000.0, 2000.0, 1000.0]),
        radial_velocities=np.array([100.0, -50.0, -50.0]),
    )
    assert eph.range_at(5.0) == 1500.0
    assert eph.range_at(20.0) == 1500.0
    assert np.allclose(eph.range_at(np.array([0.0, 10.0, 30.0])),
                       [1000.0, 2000.0, 1000.0])
    assert eph.radial_velocity_at(5.0) == 100.0
    assert eph.radial_velocity_at(20.0) == -50.0
    with pytest.raises(RangeSpanError):
        eph.range_at(30.1)
    with pytest.raises(RangeSpanError):
        eph.range_at(np.array([5.0, -0.1]))


def test_500_km_downlink_flight_time():
    eph = linear_pass(500e3, 0.0, -1.0, 1.0)
    d = eph.propagation_delay(0.0, "down")
    assert d == pytest.approx(500e3 / C_VACUUM, rel=0, abs=1e-15)
    assert d == pytest.approx(1.6678e-3, abs=1e-7)


def test_linear_closed_forms_all_four_cases():
    r0, nu = 823_000.0, 7200.0
    eph = linear_pass(r0, nu, -10.0, 10.0)
    t = 2.0
    r_t = r0 + nu * (t - (-10.0))
    cases = {
        ("down", "emission"): r_t / C_VACUUM,
        ("up", "emission"): r_t / (C_VACUUM - nu),
        ("down", "arrival"): r_t / (C_VACUUM + nu),
        ("up", "arrival"): r_t / C_VACUUM,
    }
    for (direction, anchor), expect in cases.items():
        got = eph.propagation_delay(t, direction, anchor=anchor)
        assert got == pytest.approx(expect, rel=1e-12), (direction, anchor)


def test_implicit_cases_against_independent_fixed_point():
    eph = overflight_pass(450e3, 7500.0, 0.0, -60.0, 60.0, 241)
    t = np.array([-31.2, -5.0, 0.0, 17.7, 44.1])
    for direction, sign in (("up", 1.0), ("down", -1.0)):
        d = np.interp(t, eph.times, eph.ranges) / C_VACUUM
        for _ in range(60):
            d = np.interp(t + sign * d, eph.times, eph.ranges) / C_VACUUM
        anchor = "emission" if direction == "up" else "arrival"
        got = eph.propagation_delay(t, direction, anchor=anchor)
        assert np.max(np.abs(got - d)) < 1e-15


def test_atmosphere_excess_adds_everywhere():
    base = linear_pass(600e3, 3000.0, 0.0, 10.0)
    wet = linear_pass(600e3, 3000.0, 0.0, 10.0, atmosphere_excess_delay=10e-9)
    for direction in ("up", "down"):
        for anchor in ("emission", "arrival"):
            diff = (wet.propagation_delay(5.0, direction, anchor=anchor)
                    - base.propagation_delay(5.0, direction, anchor=anchor))
            assert diff == pytest.approx(10e-9, abs=1e-18)


def test_light_time_iteration_failure_is_reported():
    # receding at 0.99c: the fixed point contracts by only 1% per round,
    # far too slow for the 20-round budget
    eph = linear_pass(1e6, 0.99 * C_VACUUM, 0.0, 10.0)
    with pytest.raises(LightTimeError):
        eph.propagation_delay(0.0, "up", anchor="emission")


def test_bad_direction_and_anchor():
    eph = linear_pass(1e6, 0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        eph.propagation_delay(0.5, "sideways")
    with pytest.raises(ValueError):
        eph.propagation_delay(0.5, "up", anchor="midpoint")


def test_range_predictor_bias_noise_and_reproducibility():
    eph = linear_pass(500e3, 1000.0, 0.0, 100.0)
    exact = RangePredictor(eph, bias=0.25, noise_rms=0.0)
    t = np.linspace(1.0, 99.0, 17)
    assert np.allclose(exact.predicted_range(t, np.random.default_rng(0)),
                       eph.range_at(t) + 0.25, rtol=0, atol=0)

    noisy = RangePredictor(eph, noise_rms=0.012)
    a = noisy.predicted_range(np.full(100_000, 50.0), np.random.default_rng(3))
    resid = a - eph.range_at(50.0)
    assert abs(np.std(resid) - 0.012) < 0.0005
    b = noisy.predicted_range(np.full(100_000, 50.0), np.random.default_rng(3))
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        RangePredictor(eph, noise_rms=-1.0)


def test_ephemeris_csv_roundtrip_exact(tmp_path):
    eph = overflight_pass(432_109.8765, 7123.456, 3.3, -20.0, 20.0, 33,
                          atmosphere_excess_delay=0.0)
    path = tmp_path / "pass.csv"
    save_ephemeris_csv(eph, path)
    back = load_ephemeris_csv(path, atmosphere_excess_delay=5e-9)
    assert np.array_equal(back.times, eph.times)
    assert np.array_equal(back.ranges, eph.ranges)
    assert np.array_equal(back.radial_velocities, eph.radial_velocities)
    assert back.atmosphere_excess_delay == 5e-9


def test_load_rejects_wrong_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("time,range,vel\n0.0,1.0,0.0\n1.0,1.0,0.0\n")
    with pytest.raises(ValueError):
        load_ephemeris_csv(path)


def test_self_consistency_check():
    good = linear_pass(500e3, 7200.0, 0.0, 100.0, n_samples=11)
    assert check_self_consistency(good) < 1e-6
    bad = PassEphemeris(
        times=np.array([0.0, 1.0, 2.0]),
        ranges=np.array([1000.0, 2000.0, 3000.0]),
        radial_velocities=np.array([1000.0, 500.0, 1000.0]),
    )
    with pytest.raises(ValueError):
        check_self_consistency(bad)
