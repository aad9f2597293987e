"""Hybrid Cramer-Rao bound on calibration phases and its Monte Carlo ECDF over random geometries."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .scene import C_LIGHT, ScenarioParams, Scene, random_scenario
from .sync.phase_model import PhaseModel, pair_list

log = logging.getLogger("netsar")

PINV_RCOND = 1e-12


@dataclass(frozen=True)
class HcrbConfig:
    N: int = 5
    P: int = 5
    P_prime: int = 0
    prior_std: float = 0.20
    snr_db: float = 20.0
    trials: int = 500
    geometry: ScenarioParams = field(default_factory=ScenarioParams)
    focus: tuple[float, float] = (0.0, 0.0)
    noise_model: str = "common"

    def __post_init__(self):
        if not 0 <= self.P_prime <= self.P:
            raise ValueError("need 0 <= P_prime <= P")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.N < 2 or self.P < 1:
            raise ValueError("need N >= 2 and P >= 1")


@dataclass(frozen=True)
class HcrbResult:
    C_d: np.ndarray
    C_cal: np.ndarray
    sigma_cal: float
    regularized: bool = False
    condition: float = 1.0


@dataclass(frozen=True)
class ParameterLayout:
    """Column bookkeeping for the deterministic and random parameter vectors."""

    N: int
    P: int
    P_prime: int

    @property
    def deterministic_targets(self) -> list[int]:
        return list(range(self.P_prime, self.P))

    @property
    def gauge_target(self) -> int | None:
        """Target whose y coordinate is frozen; none when every target carries a prior."""
        det = self.deterministic_targets
        return det[-1] if det else None

    @property
    def M_d(self) -> int:
        n_det = len(self.deterministic_targets)
        return 3 * (self.N - 1) + 2 * n_det - (1 if n_det else 0)

    @property
    def M_r(self) -> int:
        return 2 * self.P_prime

    @property
    def n_cal(self) -> int:
        return 3 * (self.N - 1)


def _model(scene_or_positions, cal_targets, ref_pair, wave_speed):
    if isinstance(scene_or_positions, Scene):
        sc = scene_or_positions
        s = np.array([x.phase_center for x in sc.sensors])
        f = sc.carriers
        b = np.array([x.clock.beta for x in sc.sensors])
    else:
        s, f, b = scene_or_positions
    return PhaseModel(f, b, s, np.asarray(cal_targets, dtype=float), ref_pair, wave_speed)


def phase_jacobians(scene, cal_targets, P_prime: int, ref_pair=(0, 0), wave_speed: float = C_LIGHT):
    """(G_d, G_r) of the Delta_phi model at the true geometry.

    Deterministic columns: (x, y) of sensors 1..N-1, alpha_1..alpha_{N-1}, then
    both coordinates of targets P'..P-1 except the y of the last one. Random
    columns: both coordinates of targets 0..P'-1. Rows are pair-major,
    target-minor over the N^2 - 1 non-reference pairs.
    """
    cal_targets = np.asarray(cal_targets, dtype=float).reshape(-1, 2)
    model = _model(scene, cal_targets, ref_pair, wave_speed)
    N, P = model.n_sensors, model.n_targets
    if not 0 <= P_prime <= P:
        raise ValueError(f"P_prime={P_prime} is inconsistent with P={P}")
    if tuple(ref_pair) != (0, 0) and ref_pair[0] != ref_pair[1]:
        raise ValueError("the reference must be a monostatic pair")
    lay = ParameterLayout(N, P, P_prime)
    s, x = model.s_bar, model.x_bar
    R = N * N - 1
    Js = model.jacobian_s(s, x)  # (R, P, N, 2)
    Jx = model.jacobian_x(s, x)  # (R, P, 2)
    Ja = model.jacobian_alpha_sensor()  # (R, N)
    free = [j for j in range(N) if j != ref_pair[0]]

    G_d = np.zeros((R, P, lay.M_d))
    col = 0
    for j in free:
        G_d[:, :, col : col + 2] = Js[:, :, j, :]
        col += 2
    for j in free:
        G_d[:, :, col] = Ja[:, j][:, None]
        col += 1
    for p in lay.deterministic_targets:
        coords = (0,) if p == lay.gauge_target else (0, 1)
        for c in coords:
            G_d[:, p, col] = Jx[:, p, c]
            col += 1
    G_r = np.zeros((R, P, lay.M_r))
    for i, p in enumerate(range(P_prime)):
        G_r[:, p, 2 * i : 2 * i + 2] = Jx[:, p, :]
    return G_d.reshape(R * P, lay.M_d), G_r.reshape(R * P, lay.M_r)


def phase_noise_cov(n_rows: int, snr: float, n_targets: int | None = None, model: str = "common") -> np.ndarray:
    """C_phi = sigma^2 (I + 1 1^T), sigma^2 = 1 / (2 snr).

    ``common`` uses one all-ones matrix over every row. ``per_target`` applies
    the all-ones term only among rows of the same target (rows pair-major,
    target-minor), which is the correlation the reference subtraction creates.
    """
    if snr <= 0:
        raise ValueError("snr must be positive")
    s2 = 1.0 / (2.0 * snr)
    if model == "common":
        return s2 * (np.eye(n_rows) + 1.0)
    if model == "per_target":
        if n_targets is None:
            raise ValueError("per_target noise needs n_targets")
        idx = np.arange(n_rows) % n_targets
        return s2 * (np.eye(n_rows) + (idx[:, None] == idx[None, :]))
    raise ValueError(f"unknown noise model {model!r}")


def _inverse_psd(A, what):
    """Inverse of a symmetric PSD matrix; falls back to a pseudo-inverse on ill-conditioning."""
    A = 0.5 * (A + A.T)
    sv = np.linalg.svd(A, compute_uv=False)
    cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
    if not np.isfinite(cond) or cond > 1.0 / PINV_RCOND:
        log.warning("%s is ill-conditioned (cond=%.3g); using a pseudo-inverse", what, cond)
        return np.linalg.pinv(A, rcond=PINV_RCOND, hermitian=True), True, cond
    return np.linalg.inv(A), False, cond


def hcrb_deterministic(G_d, G_r, prior_cov, snr: float, n_targets: int | None = None, noise_model: str = "common"):
    """C_d = (G_d^T (C_phi + G_r Xi G_r^T)^{-1} G_d)^{-1}; returns (C_d, regularized, condition)."""
    G_d = np.asarray(G_d, dtype=float)
    G_r = np.asarray(G_r, dtype=float).reshape(len(G_d), -1)
    Xi = np.asarray(prior_cov, dtype=float).reshape(G_r.shape[1], G_r.shape[1])
    C = phase_noise_cov(len(G_d), snr, n_targets, noise_model) + G_r @ Xi @ G_r.T
    W = np.linalg.solve(C, G_d)
    F = G_d.T @ W
    C_d, reg, cond = _inverse_psd(F, "hybrid information matrix")
    return 0.5 * (C_d + C_d.T), reg, cond


def calibration_jacobian(scene, focus=(0.0, 0.0), ref_pair=(0, 0), wave_speed: float = C_LIGHT) -> np.ndarray:
    """d phi_cal_nm(focus) / d (sensor positions 1..N-1, alpha_1..alpha_{N-1}), shape (N^2 - 1, 3(N-1))."""
    model = _model(scene, np.asarray(focus, dtype=float).reshape(1, 2), ref_pair, wave_speed)
    N = model.n_sensors
    free = [j for j in range(N) if j != ref_pair[0]]
    # calibration phase = k_n (path_nm(x; s_tilde) - path_nm(x; s_bar)) - alpha_nm
    u = model.x_bar[0][None, :] - model.s_bar
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    k = model.gain
    rows = []
    for n, m in pair_list(N, ref_pair):
        r = np.zeros(3 * (N - 1))
        for i, j in enumerate(free):
            g = np.zeros(2)
            if j == n:
                g -= k[n] * u[n]
            if j == m:
                g -= k[n] * u[m]
            r[2 * i : 2 * i + 2] = g
            r[2 * (N - 1) + i] = -((j == n) - (j == m))
        rows.append(r)
    return np.array(rows)


def calibration_covariance(C_d, scene, cal_targets=None, ref_pair=(0, 0), focus=(0.0, 0.0), wave_speed=C_LIGHT):
    """C_cal = G_cal C_d[sensor/alpha block] G_cal^T and sigma_cal = sqrt(trace / (N^2 - 1))."""
    N = scene.n_sensors if isinstance(scene, Scene) else len(scene[0])
    n_cal = 3 * (N - 1)
    C_d = np.asarray(C_d, dtype=float)
    if C_d.ndim != 2 or C_d.shape[0] != C_d.shape[1] or C_d.shape[0] < n_cal:
        raise ValueError(f"C_d of shape {C_d.shape} does not hold the {n_cal} sensor/alpha parameters first")
    G = calibration_jacobian(scene, focus, ref_pair, wave_speed)
    C_cal = G @ C_d[:n_cal, :n_cal] @ G.T
    C_cal = 0.5 * (C_cal + C_cal.T)
    return C_cal, float(np.sqrt(max(np.trace(C_cal), 0.0) / (N * N - 1)))


def hcrb(scene, cal_targets, P_prime, prior_std, snr, ref_pair=(0, 0), focus=(0.0, 0.0), noise_model="common") -> HcrbResult:
    """Full chain: Jacobians, deterministic bound, calibration-phase covariance."""
    G_d, G_r = phase_jacobians(scene, cal_targets, P_prime, ref_pair)
    Xi = prior_std**2 * np.eye(G_r.shape[1])
    P = len(np.asarray(cal_targets).reshape(-1, 2))
    C_d, reg, cond = hcrb_deterministic(G_d, G_r, Xi, snr, P, noise_model)
    C_cal, sig = calibration_covariance(C_d, scene, cal_targets, ref_pair, focus)
    return HcrbResult(C_d, C_cal, sig, reg, cond)


@dataclass(frozen=True)
class EcdfResult:
    sigma_cal: np.ndarray  # radians, trial order
    retries: int

    def table(self) -> tuple[np.ndarray, np.ndarray]:
        """(sorted sigma in degrees, ECDF value at each)."""
        s = np.sort(np.degrees(self.sigma_cal))
        return s, np.arange(1, len(s) + 1) / len(s)

    def quantiles(self, qs=(0.1, 0.5, 0.9)) -> dict:
        s = np.degrees(self.sigma_cal)
        return {f"p{int(round(q * 100))}": float(np.quantile(s, q)) for q in qs}


def ecdf_monte_carlo(config: HcrbConfig, rng_seed: int, max_retries: int = 10) -> EcdfResult:
    """sigma_cal over random geometries; trials whose bound needs regularization are redrawn."""
    from dataclasses import replace

    params = replace(config.geometry, n_sensors=config.N, n_targets=config.P)
    snr = 10 ** (config.snr_db / 10)
    out = np.empty(config.trials)
    retries = 0
    for i in range(config.trials):
        for attempt in range(max_retries + 1):
            scene = random_scenario([int(rng_seed), i, attempt], params)
            res = hcrb(
                scene, scene.target_positions, config.P_prime, config.prior_std, snr,
                focus=config.focus, noise_model=config.noise_model,
            )
            if not res.regularized:
                break
            retries += 1
        out[i] = res.sigma_cal
    return EcdfResult(out, retries)
