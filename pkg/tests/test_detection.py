import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from netsar.detection import (
    DetectionConfig,
    InsufficientTrialsWarning,
    Observation,
    _search_grid,
    allocate_bands,
    cfar_threshold,
    estimate_parameters,
    glrt_statistic,
    inject_phase_errors,
    known_params,
    roc_curve,
    simulate_observation,
    spectrum,
    steering,
)
from netsar.scene import C_LIGHT, FeasibilityError

CFG = DetectionConfig(U=1, B=100e6, df=1e6)


def test_steering_at_origin_is_ones():
    K = spectrum(CFG, 0).K
    d = steering(K, 0.0)
    assert d.shape == (K.shape[1],)
    np.testing.assert_allclose(d, 1.0)


def test_steering_norm_and_dirichlet_correlation():
    K = spectrum(CFG, 0).K
    n = K.shape[1]
    x = 0.37
    d0, dx = steering(K, 0.0), steering(K, x)
    assert np.vdot(dx, dx).real == pytest.approx(n)
    # equally spaced wavenumbers: |<d(0), d(x)>| is a Dirichlet kernel in dk x / 2
    dk = K[0, 1] - K[0, 0]
    u = dk * x / 2
    oracle = abs(np.sin(n * u) / np.sin(u))
    assert abs(np.vdot(d0, dx)) == pytest.approx(oracle, rel=1e-9)


def test_contiguous_allocation_counts():
    cfg = DetectionConfig(U=4)
    spec = spectrum(cfg, 0)
    assert spec.K.shape == (1, 400)
    assert spec.span == pytest.approx(400e6)
    assert spec.rho_fused() == pytest.approx(C_LIGHT / (2 * 400e6))


def test_random_allocation_gaps_nonnegative():
    cfg = DetectionConfig(U=4, allocation="random", B_tot=1e9)
    for seed in range(50):
        s = allocate_bands(cfg, seed).starts
        assert np.all(np.diff(s) >= cfg.B - 1e-6)
        assert s[0] >= -cfg.B_tot / 2 - 1e-6
        assert s[-1] + cfg.B <= cfg.B_tot / 2 + 1e-6


def test_random_allocation_deterministic():
    cfg = DetectionConfig(U=3, allocation="random", B_tot=1e9)
    np.testing.assert_array_equal(allocate_bands(cfg, 9).starts, allocate_bands(cfg, 9).starts)


def test_infeasible_allocation():
    with pytest.raises(FeasibilityError):
        allocate_bands(DetectionConfig(U=4, allocation="random", B_tot=300e6), 0)


def test_gaussian_gate():
    with pytest.raises(ValueError):
        spectrum(DetectionConfig(B=40e6, df=1e6), 0)


def test_noiseless_h0_energy():
    cfg = DetectionConfig(snr1_db=300.0)
    obs = simulate_observation(cfg, 0, 1.0, 3, n_trials=4)
    n = obs.K.shape[1]
    e = np.sum(np.abs(obs.y) ** 2, axis=1)
    np.testing.assert_allclose(e, np.abs(obs.eta1) ** 2 * n, rtol=1e-9)


def test_noise_energy(rng):
    cfg = DetectionConfig(snr1_db=-300.0)
    obs = simulate_observation(cfg, 0, 1.0, rng, n_trials=2000)
    n = obs.K.shape[1]
    assert np.mean(np.sum(np.abs(obs.y) ** 2, axis=1)) == pytest.approx(n * cfg.sigma2, rel=0.02)


def test_h1_shares_single_target_projection():
    cfg = DetectionConfig(snr1_db=300.0)
    obs = simulate_observation(cfg, 1, 0.7, 5, n_trials=3)
    n = obs.K.shape[1]
    proj = obs.y @ steering(obs.K, obs.x1).conj() / n
    np.testing.assert_allclose(proj, obs.eta0, rtol=1e-9)


def test_known_mode_sign():
    cfg = DetectionConfig(snr1_db=30.0, amp_ratio=0.3)
    x2 = 1.0 * cfg.rho_x
    h1 = simulate_observation(cfg, 1, 1.0, 1, n_trials=200)
    h0 = simulate_observation(cfg, 0, 1.0, 2, n_trials=200)
    t1, _ = glrt_statistic(h1, "known", known_params(h1, x2))
    t0, _ = glrt_statistic(h0, "known", known_params(h0, x2, h1.eta2))
    assert np.median(t1) > 0 > np.median(t0)


def test_unknown_mode_localizes_weak_target():
    cfg = DetectionConfig(snr1_db=40.0, amp_ratio=0.3)
    obs = simulate_observation(cfg, 1, 1.5, 4, n_trials=50)
    est = estimate_parameters(obs.y, obs.K, _search_grid(cfg))
    assert np.median(np.abs(est.x1 - obs.x1)) < cfg.rho_x / 10
    assert np.median(np.abs(est.x2 - obs.x2)) < cfg.rho_x / 10


def test_glrt_needs_enough_samples():
    K = np.linspace(1000, 1010, 40)[None, :]
    obs = Observation(np.zeros((1, 40), complex), K, 0, 0.0, None, np.zeros(1), None, np.zeros(1), 1.0)
    with pytest.raises(ValueError):
        glrt_statistic(obs, "known", (0.0, 0.1, 0.0, 0.0, 0.0))


def test_cfar_median_at_half():
    cfg = DetectionConfig(pfa=0.5, cfar_trials=2000)
    thr = cfar_threshold(cfg, "unknown", 0)
    hold = replace_seed_stats(cfg, 99)
    assert np.mean(hold > thr) == pytest.approx(0.5, abs=0.05)


def replace_seed_stats(cfg, seed):
    xs = _search_grid(cfg)
    obs = simulate_observation(cfg, 0, 1.0, seed, n_trials=2000)
    t, _ = glrt_statistic(obs, "unknown", xs=xs)
    return t


def test_cfar_holdout_false_alarms():
    cfg = DetectionConfig(pfa=0.05, cfar_trials=4000)
    thr = cfar_threshold(cfg, "unknown", 1)
    fa = np.mean(replace_seed_stats(cfg, 123) > thr)
    assert fa == pytest.approx(0.05, rel=0.2)


def test_cfar_quantile_matches_gaussian(rng):
    # the (1 - pfa) empirical quantile of N(0, s^2) samples sits at 2.326 s for pfa = 1%
    s = 3.0
    v = rng.normal(0, s, 200000)
    assert np.quantile(v, 0.99) == pytest.approx(2.326 * s, rel=0.02)


def test_cfar_warns_on_few_trials():
    cfg = DetectionConfig(pfa=0.01, cfar_trials=100)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        cfar_threshold(cfg, "unknown", 0)
    assert any(issubclass(x.category, InsufficientTrialsWarning) for x in w)


def test_phase_errors_identity_at_zero(rng):
    d = np.exp(1j * rng.uniform(0, 6, (3, 200)))
    assert inject_phase_errors(d, 0.0, 100, rng) is d


def test_phase_errors_block_structure(rng):
    d = np.ones((5, 300), complex)
    out = inject_phase_errors(d, 10.0, 100, rng)
    ph = np.angle(out).reshape(5, 3, 100)
    np.testing.assert_allclose(ph, ph[..., :1].repeat(100, axis=-1), atol=1e-12)
    assert np.std(ph[..., 0]) > 0
    np.testing.assert_allclose(np.abs(out), 1.0)


def test_phase_errors_statistics(rng):
    out = inject_phase_errors(np.ones((20000, 2), complex), 5.0, 1, rng)
    assert np.degrees(np.std(np.angle(out))) == pytest.approx(5.0, rel=0.03)


def test_phase_errors_reject_partial_block(rng):
    with pytest.raises(ValueError):
        inject_phase_errors(np.ones(150), 1.0, 100, rng)


def test_roc_endpoints_and_monotone():
    cfg = DetectionConfig(trials=300, cfar_trials=300, snr1_db=25.0, amp_ratio=0.2)
    rows = roc_curve(cfg, 1.0, 0)
    pfa = np.array([r.pfa for r in rows])
    pcd = np.array([r.pcd for r in rows])
    assert (pfa[0], pcd[0]) == (0.0, 0.0)
    assert (pfa[-1], pcd[-1]) == (1.0, 1.0)
    assert np.all(np.diff(pfa) >= 0) and np.all(np.diff(pcd) >= 0)


@given(st.floats(-np.pi, np.pi))
def test_statistic_invariant_to_common_phase(phi):
    cfg = DetectionConfig(snr1_db=25.0, amp_ratio=0.3)
    obs = simulate_observation(cfg, 1, 1.2, 8, n_trials=4)
    xs = _search_grid(cfg)
    t, _ = glrt_statistic(obs, "unknown", xs=xs)
    rot = Observation(obs.y * np.exp(1j * phi), obs.K, 1, obs.x1, obs.x2, obs.eta1, obs.eta2, obs.eta0, obs.sigma2)
    t2, _ = glrt_statistic(rot, "unknown", xs=xs)
    np.testing.assert_allclose(t2, t, rtol=1e-6, atol=1e-6)
