import numpy as np
import pytest

from netsar.hcrb import (
    HcrbConfig,
    ParameterLayout,
    calibration_covariance,
    calibration_jacobian,
    ecdf_monte_carlo,
    hcrb,
    hcrb_deterministic,
    phase_jacobians,
    phase_noise_cov,
)
from netsar.scene import ScenarioParams, Scene, Sensor, Target, fdm_carriers, random_scenario

SNR20 = 100.0


def _scene(seed, N=5, P=5):
    return random_scenario(seed, ScenarioParams(n_sensors=N, n_targets=P))


def test_jacobian_shapes():
    sc = _scene(0, 5, 10)
    G_d, G_r = phase_jacobians(sc, sc.target_positions, 1)
    assert G_d.shape == (240, 29)
    assert G_r.shape == (240, 2)
    assert ParameterLayout(5, 10, 1).M_d == 3 * 4 + 2 * 9 - 1


def test_phase_noise_cov_values():
    C = phase_noise_cov(4, SNR20)
    np.testing.assert_allclose(np.diag(C), 0.010)
    np.testing.assert_allclose(C[0, 1:], 0.005)


def test_doubling_snr_halves_bound():
    sc = _scene(1)
    G_d, G_r = phase_jacobians(sc, sc.target_positions, 0)
    a, _, _ = hcrb_deterministic(G_d, G_r, np.zeros((0, 0)), SNR20)
    b, _, _ = hcrb_deterministic(G_d, G_r, np.zeros((0, 0)), 2 * SNR20)
    np.testing.assert_allclose(b, a / 2, rtol=1e-9, atol=1e-12 * np.abs(a).max())


def test_tight_priors_never_hurt():
    sc = _scene(2)
    G_d, G_r = phase_jacobians(sc, sc.target_positions, 3)
    tight, _, _ = hcrb_deterministic(G_d, G_r, 1e-8 * np.eye(6), SNR20)
    loose, _, _ = hcrb_deterministic(G_d, G_r, 1e2 * np.eye(6), SNR20)
    assert np.all(np.diag(tight) <= np.diag(loose) * (1 + 1e-9))


def test_zero_bound_gives_zero_sigma():
    sc = _scene(3, N=3)
    _, sig = calibration_covariance(np.zeros((12, 12)), sc)
    assert sig == 0.0


def test_two_sensor_calibration_dimensions():
    f = fdm_carriers(2, 77e9, 100e6)
    sensors = tuple(Sensor(i, np.array([10.0 * i, -10.0]), 0.0, np.zeros((1, 2)), f[i], 100e6) for i in range(2))
    sc = Scene(sensors, (Target(np.array([0.0, 0.0])),))
    G = calibration_jacobian(sc)
    assert G.shape == (3, 3)
    C_cal, _ = calibration_covariance(np.eye(3), sc)
    assert C_cal.shape == (3, 3)


def test_sigma_scales_with_inverse_sqrt_snr():
    sc = _scene(4)
    a = hcrb(sc, sc.target_positions, 0, 0.2, 10.0).sigma_cal
    b = hcrb(sc, sc.target_positions, 0, 0.2, 100.0).sigma_cal
    assert a / b == pytest.approx(np.sqrt(10), rel=0.01)


def test_bounds_symmetric_psd():
    for seed in range(5):
        sc = _scene(seed)
        res = hcrb(sc, sc.target_positions, 2, 0.2, SNR20)
        for C in (res.C_d, res.C_cal):
            np.testing.assert_allclose(C, C.T, atol=1e-15 * np.abs(C).max())
            assert np.linalg.eigvalsh(C).min() >= -1e-8 * np.trace(C)


def test_extra_target_never_hurts():
    sc = _scene(5, P=6)
    x = sc.target_positions
    # the gauge target stays last so the parametrization of the shared block is unchanged
    small = hcrb(sc, x[[1, 2, 3, 5]], 0, 0.2, SNR20).sigma_cal
    large = hcrb(sc, x[[0, 1, 2, 3, 5]], 0, 0.2, SNR20).sigma_cal
    assert large <= small * (1 + 1e-9)


def test_collinear_geometry_is_reported():
    f = fdm_carriers(3, 77e9, 100e6)
    sensors = tuple(Sensor(i, np.array([10.0 * i - 15, 0.0]), 0.0, np.zeros((1, 2)), f[i], 100e6) for i in range(3))
    sc = Scene(sensors, tuple(Target(np.array([20.0 + 3 * i, 0.0])) for i in range(5)))
    res = hcrb(sc, sc.target_positions, 0, 0.2, SNR20)
    assert res.regularized or res.condition > 1e10


def test_ecdf_deterministic_and_ordered():
    cfg = HcrbConfig(N=3, P=5, P_prime=5, trials=20)
    a = ecdf_monte_carlo(cfg, 9)
    b = ecdf_monte_carlo(cfg, 9)
    np.testing.assert_array_equal(a.sigma_cal, b.sigma_cal)
    s, F = a.table()
    assert np.all(np.diff(s) >= 0) and F[-1] == 1.0
    q = a.quantiles()
    assert q["p10"] <= q["p50"] <= q["p90"]


def test_config_validation():
    with pytest.raises(ValueError):
        HcrbConfig(P=3, P_prime=4)
    with pytest.raises(ValueError):
        HcrbConfig(N=1)
