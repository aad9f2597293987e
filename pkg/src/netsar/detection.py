"""Detection of a weak target next to a strong one in the 1D wavenumber domain.

Observations are y = eta_1 d(x_1) [+ eta_2 d(x_2)] + z with d(x) = exp(-j K x)
over U frequency bands. The detector is a Gaussian-approximation GLRT on the
energy v left after removing the single-target (H0) part of the data, with the
thresholds set by Monte Carlo CFAR.

The strong amplitude is fixed as seen by a single-target fit: under H1 the
strong target carries eta_1 - eta_2 <d(x_1), d(x_2)> / |K| so that its
projection on d(x_1) equals the H0 amplitude. Both hypotheses then share the
observed strong return and collocated targets cannot be told apart.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .scene import C_LIGHT, FeasibilityError
from .wavenumber import BandAllocation, steering_matrix

log = logging.getLogger("netsar")

MODES = ("known", "unknown")
CHUNK = 500  # Monte Carlo trials per random stream


class InsufficientTrialsWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DetectionConfig:
    U: int = 1
    B: float = 100e6
    df: float = 1e6
    allocation: str = "contiguous"  # or "random"
    B_tot: float | None = None  # random allocation span; U * B when None
    snr1_db: float = 20.0
    amp_ratio: float = 0.1
    pfa: float = 1e-2
    trials: int = 2000
    cfar_trials: int | None = None  # H0 trials for the threshold; ceil(50 / pfa) when None
    phase_err_std_deg: tuple[float, ...] = (0.0,)
    f0: float = 77e9
    search_halfwidth: float = 4.0  # matched-filter window, units of rho_x
    search_step: float = 0.05  # grid step, units of rho_x
    refine_passes: int = 1  # extra cancellation passes after the two-stage estimate
    sigma2: float = 1.0
    wave_speed: float = C_LIGHT

    def __post_init__(self):
        if self.U < 1:
            raise ValueError("U must be >= 1")
        if not 0 < self.df <= self.B:
            raise ValueError("need 0 < df <= B")
        if not 0 < self.pfa < 1:
            raise ValueError("pfa must lie in (0, 1)")
        if not 0 < self.amp_ratio <= 1:
            raise ValueError("amp_ratio must lie in (0, 1]")
        if self.allocation not in ("contiguous", "random"):
            raise ValueError("allocation must be 'contiguous' or 'random'")
        if self.trials < 1 or self.sigma2 <= 0:
            raise ValueError("need trials >= 1 and sigma2 > 0")
        if any(s < 0 for s in self.phase_err_std_deg):
            raise ValueError("phase error standard deviations must be non-negative")
        object.__setattr__(self, "phase_err_std_deg", tuple(float(s) for s in self.phase_err_std_deg))

    @property
    def rho_x(self) -> float:
        """Single-band resolution c / (2B)."""
        return self.wave_speed / (2 * self.B)

    @property
    def n_per_band(self) -> int:
        return int(math.ceil(self.B / self.df - 1e-9))

    @property
    def n_cfar(self) -> int:
        return self.cfar_trials if self.cfar_trials is not None else int(math.ceil(50 / self.pfa))

    @property
    def eta1(self) -> float:
        return math.sqrt(self.sigma2 * 10 ** (self.snr1_db / 10))


@dataclass(frozen=True)
class Observation:
    """A batch of observations, one row of ``y`` per trial."""

    y: np.ndarray  # (trials, |K|)
    K: np.ndarray  # (1, |K|) rad/m
    hypothesis: int
    x1: float
    x2: float | None
    eta1: np.ndarray  # (trials,) strong amplitude actually present
    eta2: np.ndarray | None
    eta0: np.ndarray  # (trials,) single-target amplitude shared by both hypotheses
    sigma2: float


@dataclass(frozen=True)
class Spectrum:
    """Sampled wavenumbers of an allocation plus the bookkeeping the detector needs."""

    K: np.ndarray
    allocation: BandAllocation
    n_per_band: int

    @property
    def span(self) -> float:
        s = self.allocation.starts
        return float(s.max() + self.allocation.bandwidth - s.min())

    def rho_fused(self, wave_speed: float = C_LIGHT) -> float:
        return wave_speed / (2 * self.span)


def steering(K, x) -> np.ndarray:
    """exp(-j K^T x) for one position or a stack of positions (1D positions may be plain scalars)."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    x = np.asarray(x, dtype=float)
    if K.shape[0] == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    return np.exp(-1j * (x @ K))


def allocate_bands(config: DetectionConfig, rng_seed) -> BandAllocation:
    """Band lower edges, relative to f0, for the configured allocation mode."""
    U, B = config.U, config.B
    if config.allocation == "contiguous":
        return BandAllocation(np.arange(U) * B - U * B / 2, B, config.f0)
    B_tot = config.B_tot if config.B_tot is not None else U * B
    if U * B > B_tot * (1 + 1e-12):
        raise FeasibilityError(f"{U} bands of {B:g} Hz do not fit in {B_tot:g} Hz")
    rng = np.random.default_rng(rng_seed)
    # uniform over non-overlapping placements: sorted free-space offsets plus the bands before each
    free = np.sort(rng.uniform(0.0, B_tot - U * B, U))
    return BandAllocation(free + np.arange(U) * B - B_tot / 2, B, config.f0)


def allocate_spectrum(config: DetectionConfig, rng_seed) -> np.ndarray:
    """Stacked wavenumbers K (1 x |K|) of the allocation."""
    return spectrum(config, rng_seed).K


def spectrum(config: DetectionConfig, rng_seed) -> Spectrum:
    alloc = allocate_bands(config, rng_seed)
    K = steering_matrix(alloc, config.df, config.wave_speed)
    if 2 * K.shape[1] <= 100:
        raise ValueError(f"Gaussian approximation needs 2|K| > 100, got |K| = {K.shape[1]}")
    return Spectrum(K, alloc, config.n_per_band)


def inject_phase_errors(steer, sigma_deg: float, block: int, rng) -> np.ndarray:
    """Multiply each block of ``block`` consecutive samples by one random phase exp(j phi), phi ~ N(0, sigma^2).

    ``steer`` is (..., |K|); every leading index gets its own draws.
    """
    steer = np.asarray(steer)
    if sigma_deg < 0:
        raise ValueError("sigma_deg must be non-negative")
    if sigma_deg == 0:
        return steer
    n = steer.shape[-1]
    if n % block:
        raise ValueError("the sample count must be a whole number of blocks")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    phi = rng.normal(0.0, np.radians(sigma_deg), steer.shape[:-1] + (n // block,))
    return steer * np.repeat(np.exp(1j * phi), block, axis=-1)


def _complex_noise(rng, shape, sigma2):
    return np.sqrt(sigma2 / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def simulate_observation(
    config: DetectionConfig,
    hypothesis: int,
    dx12: float,
    rng_seed,
    spec: Spectrum | None = None,
    n_trials: int = 1,
    sigma_deg: float = 0.0,
    x1: float = 0.0,
) -> Observation:
    """Draw ``n_trials`` observations under H0 (0) or H1 (1) with x2 = x1 + dx12 * rho_x.

    Target phases are uniform per trial. Phase errors (one per band) perturb
    the data-generating steering vectors only.
    """
    if hypothesis not in (0, 1):
        raise ValueError("hypothesis must be 0 or 1")
    spec = spectrum(config, 0) if spec is None else spec
    rng = np.random.default_rng(rng_seed) if not isinstance(rng_seed, np.random.Generator) else rng_seed
    K = spec.K
    n = K.shape[1]
    th = rng.uniform(-np.pi, np.pi, (n_trials, 2))
    eta0 = config.eta1 * np.exp(1j * th[:, 0])
    d1 = np.broadcast_to(steering(K, x1), (n_trials, n))
    d1 = inject_phase_errors(d1, sigma_deg, spec.n_per_band, rng)
    x2 = eta2 = None
    if hypothesis == 0:
        eta1 = eta0
        s = eta1[:, None] * d1
    else:
        x2 = x1 + dx12 * config.rho_x
        eta2 = config.amp_ratio * config.eta1 * np.exp(1j * th[:, 1])
        rho12 = np.vdot(steering(K, x1), steering(K, x2)) / n
        eta1 = eta0 - eta2 * rho12
        d2 = inject_phase_errors(np.broadcast_to(steering(K, x2), (n_trials, n)), sigma_deg, spec.n_per_band, rng)
        s = eta1[:, None] * d1 + eta2[:, None] * d2
    y = s + _complex_noise(rng, (n_trials, n), config.sigma2)
    return Observation(y, K, hypothesis, x1, x2, eta1, eta2, eta0, config.sigma2)


# -- GLRT --------------------------------------------------------------------


def _gauss_log_ratio(v, e1, n, sigma2):
    """log N(v; mu1, var1) - log N(v; mu0, var0) for energy v with H1 excess signal energy e1, H0 none."""
    mu0, var0 = sigma2 * n, sigma2**2 * n
    mu1, var1 = e1 + sigma2 * n, 2 * sigma2 * e1 + sigma2**2 * n
    return -0.5 * (v - mu1) ** 2 / var1 - 0.5 * np.log(var1) + 0.5 * (v - mu0) ** 2 / var0 + 0.5 * np.log(var0)


def _mf_peak(data, K, xs, steps):
    """Grid argmax of |d(x)^H data| per row, refined on a local grid and by a three-point parabola."""
    n = K.shape[1]
    Dg = steering(K, xs)  # (G, n)
    mf = np.abs(data @ Dg.conj().T)
    i = np.clip(np.argmax(mf, axis=1), 1, len(xs) - 2)
    step = xs[1] - xs[0]
    local = xs[i][:, None] + step * np.linspace(-1, 1, steps)[None, :]  # (T, steps)
    vals = np.abs(np.einsum("tgk,tk->tg", steering(K, local[..., None]).conj(), data))
    j = np.clip(np.argmax(vals, axis=1), 1, steps - 2)
    a, b, c = (np.take_along_axis(vals, (j + o)[:, None], 1)[:, 0] for o in (-1, 0, 1))
    den = a - 2 * b + c
    frac = np.where(den < 0, 0.5 * (a - c) / np.where(den < 0, den, -1.0), 0.0)
    h = local[:, 1] - local[:, 0]
    x = local[np.arange(len(j)), j] + np.clip(frac, -0.5, 0.5) * h
    d = steering(K, x[:, None])  # (T, n)
    eta = np.einsum("tk,tk->t", d.conj(), data) / n
    return x, eta, d


@dataclass(frozen=True)
class Estimates:
    x1: np.ndarray
    x2: np.ndarray
    eta1: np.ndarray
    eta2: np.ndarray
    x0: np.ndarray  # single-target fit
    eta0: np.ndarray


def estimate_parameters(y, K, xs, refine_passes: int = 1, local_steps: int = 9) -> Estimates:
    """Successive cancellation: strong target by matched filter, weak target on the residual, then a
    joint least-squares refit of both amplitudes. ``refine_passes`` re-estimates each position with
    the other target removed before the refit."""
    y = np.atleast_2d(y)
    n = K.shape[1]
    x0, eta0, d0 = _mf_peak(y, K, xs, local_steps)
    x1, eta1, d1 = x0, eta0, d0
    x2, eta2, d2 = _mf_peak(y - eta1[:, None] * d1, K, xs, local_steps)
    for _ in range(refine_passes):
        x1, eta1, d1 = _mf_peak(y - eta2[:, None] * d2, K, xs, local_steps)
        x2, eta2, d2 = _mf_peak(y - eta1[:, None] * d1, K, xs, local_steps)
    # least squares on [d1, d2]
    g12 = np.einsum("tk,tk->t", d1.conj(), d2)
    r1 = np.einsum("tk,tk->t", d1.conj(), y)
    r2 = np.einsum("tk,tk->t", d2.conj(), y)
    det = n * n - np.abs(g12) ** 2
    ok = det > 1e-6 * n * n
    safe = np.where(ok, det, 1.0)
    e1 = np.where(ok, (n * r1 - g12 * r2) / safe, r1 / n)
    e2 = np.where(ok, (n * r2 - np.conj(g12) * r1) / safe, 0.0)
    return Estimates(x1, x2, e1, e2, x0, eta0)


def glrt_statistic(obs: Observation, mode: str, params=None, xs=None, refine_passes: int = 1):
    """Gaussian-approximation log-likelihood ratio of the residual energy v = ||y - s0||^2.

    s0 is the single-target (H0) signal and s1 the two-target one. Known mode
    takes ``params`` = (x1, x2, eta0, eta1, eta2), amplitudes per trial or
    scalar; unknown mode estimates them by successive cancellation on the
    matched-filter grid ``xs``. Returns (statistic per trial, Estimates or None).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    y = np.atleast_2d(obs.y)
    K = obs.K
    n = K.shape[1]
    if 2 * n <= 100:
        raise ValueError(f"Gaussian approximation needs 2|K| > 100, got |K| = {n}")
    if mode == "known":
        if params is None:
            raise ValueError("known mode needs (x1, x2, eta0, eta1, eta2)")
        x1, x2, eta0, eta1, eta2 = params
        d1, d2 = steering(K, x1), steering(K, x2)
        s0 = np.asarray(eta0)[..., None] * d1
        s1 = np.asarray(eta1)[..., None] * d1 + np.asarray(eta2)[..., None] * d2
        est = None
    else:
        if xs is None:
            raise ValueError("unknown mode needs the estimation grid xs")
        est = estimate_parameters(y, K, xs, refine_passes)
        s0 = est.eta0[:, None] * steering(K, est.x0[:, None])
        s1 = est.eta1[:, None] * steering(K, est.x1[:, None]) + est.eta2[:, None] * steering(K, est.x2[:, None])
    v = np.sum(np.abs(y - s0) ** 2, axis=-1)
    e1 = np.sum(np.abs(s1 - s0) ** 2, axis=-1)
    return _gauss_log_ratio(v, e1, n, obs.sigma2), est


def known_params(obs: Observation, x2: float, eta2=None):
    """Detector knowledge for the known-parameter mode: both targets at their true values.

    For H0 data the hypothesized weak amplitude is redrawn exactly as the data
    generator would have, so the threshold reflects the H1 model being tested.
    """
    n = obs.K.shape[1]
    rho12 = np.vdot(steering(obs.K, obs.x1), steering(obs.K, x2)) / n
    e2 = obs.eta2 if eta2 is None else eta2
    return obs.x1, x2, obs.eta0, obs.eta0 - e2 * rho12, e2


# -- Monte Carlo drivers -----------------------------------------------------


def _search_grid(config: DetectionConfig, x1: float = 0.0):
    h, st = config.search_halfwidth, config.search_step
    return x1 + config.rho_x * np.arange(-h, h + st / 2, st)


def _streams(seed, key, total):
    """(rng, size) per chunk; the generator of each chunk depends only on (seed, key, chunk index)."""
    out = []
    for c in range(0, total, CHUNK):
        out.append((np.random.default_rng([int(seed), *key, c // CHUNK]), min(CHUNK, total - c)))
    return out


def _statistics(config, spec, hypothesis, dx, mode, sigma_deg, seed, key, total, localize_tol=None):
    """Statistics (and localization flags in unknown mode) of ``total`` trials."""
    xs = _search_grid(config)
    stats, hits = [], []
    for rng, size in _streams(seed, key, total):
        obs = simulate_observation(config, hypothesis, dx, rng, spec, size, sigma_deg)
        x2 = dx * config.rho_x
        if mode == "known":
            e2 = obs.eta2
            if hypothesis == 0:
                th = rng.uniform(-np.pi, np.pi, size)
                e2 = config.amp_ratio * config.eta1 * np.exp(1j * th)
            t, _ = glrt_statistic(obs, "known", known_params(obs, x2, e2))
            hit = np.ones(size, dtype=bool)
        else:
            t, est = glrt_statistic(obs, "unknown", xs=xs, refine_passes=config.refine_passes)
            hit = np.abs(est.x2 - x2) <= localize_tol if localize_tol is not None else np.ones(size, dtype=bool)
        stats.append(t)
        hits.append(hit)
    return np.concatenate(stats), np.concatenate(hits)


def cfar_threshold(config: DetectionConfig, mode: str, rng_seed, spec: Spectrum | None = None,
                   dx12: float = 1.0, sigma_deg: float = 0.0, key=(0,)) -> float:
    """Empirical (1 - pfa) quantile of the statistic under H0.

    In known mode the statistic depends on the hypothesized weak target, so
    ``dx12`` matters there; the unknown-mode threshold does not depend on it.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    n = config.n_cfar
    if n < 50 / config.pfa:
        warnings.warn(f"{n} trials give an unstable {config.pfa:g} quantile", InsufficientTrialsWarning, stacklevel=2)
    spec = spectrum(config, rng_seed) if spec is None else spec
    t, _ = _statistics(config, spec, 0, dx12, mode, sigma_deg, rng_seed, (1, *key), n)
    return float(np.quantile(t, 1 - config.pfa))


@dataclass
class PcdRow:
    dx_norm: float
    U: int
    mode: str
    pcd: float
    sigma_deg: float = 0.0


def _with_U(config: DetectionConfig, U: int) -> DetectionConfig:
    return replace(config, U=int(U))


def _map(fn, tasks, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, tasks))
    return [fn(t) for t in tasks]


def pcd_curve(config: DetectionConfig, dx_grid, rng_seed, U_values=None, modes=MODES, threads: int = 1) -> list[PcdRow]:
    """Monte Carlo PCD at the CFAR threshold for every (U, sigma, mode, dx12).

    Known mode counts H1 trials above threshold; unknown mode additionally
    requires the weak target to be located within half the fused resolution.
    Thresholds are computed before any H1 trial is drawn.
    """
    U_values = (config.U,) if U_values is None else tuple(int(u) for u in U_values)
    dx_grid = [float(d) for d in dx_grid]
    for m in modes:
        if m not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
    specs = {U: spectrum(_with_U(config, U), [int(rng_seed), 7, U]) for U in U_values}
    sigmas = config.phase_err_std_deg

    # phase 1: thresholds
    thr_tasks = []
    for U in U_values:
        for si, _ in enumerate(sigmas):
            for mode in modes:
                dxs = list(enumerate(dx_grid)) if mode == "known" else [(0, 1.0)]
                for di, dx in dxs:
                    thr_tasks.append((U, si, mode, di, dx))

    def thr(task):
        U, si, mode, di, dx = task
        cfg = _with_U(config, U)
        return cfar_threshold(cfg, mode, rng_seed, specs[U], dx, sigmas[si], (U, si, MODES.index(mode), di))

    thresholds = dict(zip(thr_tasks, _map(thr, thr_tasks, threads)))

    def threshold_for(U, si, mode, di):
        return thresholds[(U, si, mode, di, dx_grid[di])] if mode == "known" else thresholds[(U, si, mode, 0, 1.0)]

    # phase 2: PCD
    tasks = [(U, si, mode, di) for U in U_values for si in range(len(sigmas)) for mode in modes for di in range(len(dx_grid))]

    def pcd(task):
        U, si, mode, di = task
        cfg = _with_U(config, U)
        tol = specs[U].rho_fused(config.wave_speed) / 2
        t, hit = _statistics(cfg, specs[U], 1, dx_grid[di], mode, sigmas[si], rng_seed,
                             (2, U, si, MODES.index(mode), di), config.trials, tol)
        return float(np.mean((t > threshold_for(U, si, mode, di)) & hit))

    values = _map(pcd, tasks, threads)
    return [PcdRow(dx_grid[di], U, mode, p, sigmas[si]) for (U, si, mode, di), p in zip(tasks, values)]


@dataclass
class RocRow:
    pfa: float
    pcd: float
    U: int


def roc_curve(config: DetectionConfig, dx12: float, rng_seed, U_values=None, mode: str = "unknown",
              pfa_grid=None, threads: int = 1) -> list[RocRow]:
    """(PFA, PCD) pairs from thresholds swept over the H0 statistic distribution.

    PCD here is the probability that an H1 trial exceeds the threshold, so the
    curve runs from (0, 0) to (1, 1).
    """
    U_values = (config.U,) if U_values is None else tuple(int(u) for u in U_values)
    if pfa_grid is None:
        pfa_grid = np.concatenate([[0.0], np.logspace(-3, 0, 31)])
    pfa_grid = np.clip(np.asarray(pfa_grid, dtype=float), 0.0, 1.0)
    sigma = config.phase_err_std_deg[0]

    def one(U):
        cfg = _with_U(config, U)
        spec = spectrum(cfg, [int(rng_seed), 7, U])
        t0, _ = _statistics(cfg, spec, 0, dx12, mode, sigma, rng_seed, (3, U, 0), config.n_cfar)
        t1, _ = _statistics(cfg, spec, 1, dx12, mode, sigma, rng_seed, (3, U, 1), config.trials)
        t0s = np.sort(t0)
        rows = []
        for p in pfa_grid:
            if p <= 0:
                thr = np.inf
            elif p >= 1:
                thr = -np.inf
            else:
                thr = np.quantile(t0s, 1 - p)
            rows.append(RocRow(float(p), float(np.mean(t1 > thr)) if np.isfinite(thr) else float(thr < 0), U))
        return rows

    return [r for rows in _map(one, U_values, threads) for r in rows]
