"""Fine synchronization: phase measurements, alternating maximization and calibration fields."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import map_coordinates, maximum_filter

from ..imaging import CalibrationField, ComplexImage, PixelGrid, _parabola
from ..scene import C_LIGHT
from .ambiguity import WrappedLinearSolver
from .phase_model import PhaseModel, pair_list, wrap

log = logging.getLogger("netsar")

STAGES = ("prior", "coarse", "fine")


@dataclass(frozen=True)
class SyncState:
    """Estimates at a synchronization stage.

    ``s_bar``/``x_bar`` are the coarse (focusing) positions, ``s_tilde``/``x_tilde``
    the fine estimates; ``kappa`` and ``alpha`` are antisymmetric pair matrices.
    """

    s_bar: np.ndarray
    kappa: np.ndarray
    beta: np.ndarray
    carriers: np.ndarray
    x_bar: np.ndarray
    s_tilde: np.ndarray | None = None
    alpha: np.ndarray | None = None
    x_tilde: np.ndarray | None = None
    stage: str = "coarse"
    cost_history: tuple = ()
    converged: bool = False

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        N = len(self.carriers)
        for name in ("s_bar", "kappa", "beta", "carriers", "x_bar"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.s_tilde is None:
            object.__setattr__(self, "s_tilde", self.s_bar.copy())
        if self.x_tilde is None:
            object.__setattr__(self, "x_tilde", self.x_bar.copy())
        if self.alpha is None:
            object.__setattr__(self, "alpha", np.zeros((N, N)))
        for name in ("kappa", "alpha"):
            M = np.asarray(getattr(self, name), dtype=float)
            if M.shape != (N, N) or not np.allclose(M, -M.T, atol=1e-12):
                raise ValueError(f"{name} must be an antisymmetric ({N}, {N}) matrix")

    @property
    def n_sensors(self) -> int:
        return len(self.carriers)

    def advance(self, stage: str, **changes) -> "SyncState":
        """Copy at a later stage; stages only move forward."""
        if STAGES.index(stage) < STAGES.index(self.stage):
            raise ValueError(f"cannot go back from {self.stage} to {stage}")
        return replace(self, stage=stage, **changes)


@dataclass(frozen=True)
class PhaseMeasurements:
    values: np.ndarray  # (N^2 - 1, P) wrapped Delta_phi
    ref_pair: tuple[int, int]
    cal_positions: np.ndarray
    snr: float | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", wrap(v))
        object.__setattr__(self, "cal_positions", np.asarray(self.cal_positions, dtype=float).reshape(-1, 2))
        object.__setattr__(self, "ref_pair", tuple(int(i) for i in self.ref_pair))
        if v.shape[1] != len(self.cal_positions):
            raise ValueError("one measurement column per calibration target is required")


def _bilinear_complex(image: ComplexImage, pts):
    g = image.grid
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    coords = [(pts[:, 1] - g.y0) / g.dy, (pts[:, 0] - g.x0) / g.dx]
    re = map_coordinates(image.values.real, coords, order=1, mode="nearest")
    im = map_coordinates(image.values.imag, coords, order=1, mode="nearest")
    return re + 1j * im


def _noise_floor(values):
    return np.sqrt(np.median(np.abs(values) ** 2) / np.log(2))


def phase_measurements_from_values(values: dict, cal_positions, ref_pair=(0, 0), snr=None, floors=None, min_ratio=3.0):
    """PhaseMeasurements from complex image values at the calibration targets, keyed by pair."""
    ref_pair = tuple(ref_pair)
    N = int(round(np.sqrt(len(values))))
    if N * N != len(values) or ref_pair not in values:
        raise ValueError("values must hold all N^2 pairs including the reference")
    if floors is not None:
        for pair, v in values.items():
            if np.any(np.abs(v) < min_ratio * floors[pair]):
                log.warning("pair %s: calibration target amplitude close to the noise floor", pair)
    ref = np.angle(values[ref_pair])
    rows = [wrap(np.angle(values[pair]) - ref) for pair in pair_list(N, ref_pair)]
    return PhaseMeasurements(np.array(rows), ref_pair, cal_positions, snr)


def measure_phases(images: dict, cal_positions, ref_pair=(0, 0), min_ratio: float = 3.0, snr=None) -> PhaseMeasurements:
    """Delta_phi from images keyed by (n, m): bilinear complex values at x_bar, minus the reference row, wrapped."""
    cal_positions = np.asarray(cal_positions, dtype=float).reshape(-1, 2)
    for im in images.values():
        if not all(im.grid.contains(p) for p in cal_positions):
            raise ValueError("calibration positions must lie inside the image grid")
    vals = {pair: _bilinear_complex(im, cal_positions) for pair, im in images.items()}
    floors = {pair: _noise_floor(im.values) for pair, im in images.items()}
    return phase_measurements_from_values(vals, cal_positions, ref_pair, snr, floors, min_ratio)


def select_calibration_targets(images, P: int, min_separation: float = 0.0) -> np.ndarray:
    """Greedy pick of the strongest local maxima of the minimum-over-images intensity map."""
    if P < 1:
        raise ValueError("P must be >= 1")
    images = list(images.values()) if isinstance(images, dict) else list(images)
    g = images[0].grid
    mag = np.min(np.stack([np.abs(im.values) for im in images]), axis=0)
    is_max = (mag == maximum_filter(mag, size=3, mode="nearest")) & (mag > 0)
    iy, ix = np.nonzero(is_max)
    order = np.argsort(-mag[iy, ix], kind="stable")
    picked = []
    for i in order:
        y, x = iy[i], ix[i]
        fx = _parabola(mag[y, x - 1], mag[y, x], mag[y, x + 1]) if 0 < x < g.nx - 1 else 0.0
        fy = _parabola(mag[y - 1, x], mag[y, x], mag[y + 1, x]) if 0 < y < g.ny - 1 else 0.0
        p = np.array([g.x0 + (x + fx) * g.dx, g.y0 + (y + fy) * g.dy])
        if all(np.linalg.norm(p - q) >= min_separation for q in picked):
            picked.append(p)
        if len(picked) == P:
            break
    if len(picked) < P:
        log.warning("only %d of %d calibration targets found", len(picked), P)
    return np.array(picked).reshape(-1, 2)


@dataclass(frozen=True)
class FineSyncOptions:
    cost_threshold: float = 0.95
    max_iters: int = 20
    sensor_box: float = 0.15  # meters, half-width around the coarse positions
    target_box: float = 0.15
    sensor_search: float | None = None  # grid-search half-width around the current sensor estimate (None: whole box)
    target_search: float | None = None
    grid_step: float | None = None  # meters; default a sixth of the shortest wavelength
    grid_iters: int = 1  # outer iterations that start with an exhaustive grid search
    ascent_steps: int = 30
    gauge: str = "target"  # "target": freeze y of the last target; "sensor": freeze the bearing of the farthest sensor
    targets_first: bool = False  # one target update (step 3) before the first sensor update
    joint_polish: bool = True  # finish each outer iteration with a joint quasi-Newton ascent
    hops: int = 0  # random-perturbation restarts after the main loop if still below threshold
    hop_scale: float = 0.1  # perturbation half-width in wavelengths
    hop_seed: int = 0
    start: str = "lattice"  # "lattice": resolve cycle ambiguities of the linearized model first; "coarse": start at the coarse state
    lattice_sigma: float = 0.1  # radians, phase misfit allowed for by the ambiguity fit
    sensor_prior: float = 0.02  # meters, expected residual sensor error after coarse synchronization
    target_prior: float = 0.02
    lattice_rounds: int = 4
    lattice_rows: str = "reference"  # "reference": rows (n, r) and (r, n); "all": every pair
    lattice_shrink: float = 0.5  # prior scale factor between relinearization rounds
    wave_speed: float = C_LIGHT

    def __post_init__(self):
        if self.gauge not in ("target", "sensor"):
            raise ValueError(f"unknown gauge {self.gauge!r}")
        if self.start not in ("lattice", "coarse"):
            raise ValueError(f"unknown start {self.start!r}")


@dataclass(frozen=True)
class FineSyncResult:
    state: SyncState
    cost: float
    iterations: int
    converged: bool
    cost_history: tuple = field(default_factory=tuple)


_FULL = np.eye(2)


def gauge_bases(s_bar, x_bar, fixed_sensor: int, mode: str = "target"):
    """Free directions (2, k) of every sensor and target block after fixing the gauge.

    The fixed sensor never moves. ``target`` mode freezes the y coordinate of the
    last target; ``sensor`` mode instead lets the sensor farthest from the fixed
    one move only along their baseline, which pins the rotation with the
    better-known sensor geometry.
    """
    N, P = len(s_bar), len(x_bar)
    sb = [_FULL] * N
    xb = [_FULL] * P
    sb[fixed_sensor] = np.zeros((2, 0))
    if mode == "target":
        xb[P - 1] = np.array([[1.0], [0.0]])
    else:
        d = np.asarray(s_bar) - np.asarray(s_bar)[fixed_sensor]
        far = int(np.argmax(np.linalg.norm(d, axis=1)))
        if far == fixed_sensor:
            raise ValueError("sensor gauge needs two distinct sensor positions")
        sb[far] = (d[far] / np.linalg.norm(d[far]))[:, None]
    return sb, xb


class _Problem:
    """Cost, per-block candidate evaluation and gradients of the fine-sync objective."""

    def __init__(self, meas: PhaseMeasurements, state: SyncState, wave_speed, gauge="target"):
        self.meas = meas.values
        self.model = PhaseModel(state.carriers, state.beta, state.s_bar, meas.cal_positions, meas.ref_pair, wave_speed)
        self.N = state.n_sensors
        self.P = len(meas.cal_positions)
        self.ref = meas.ref_pair
        self.pairs = pair_list(self.N, self.ref)
        self.row = {p: i for i, p in enumerate(self.pairs)}
        self.idx_n = np.array([a for a, _ in self.pairs])
        self.idx_m = np.array([b for _, b in self.pairs])
        self.k = self.model.gain
        self.nominal = self.model.path(state.s_bar, meas.cal_positions)  # (N, N, P)
        self.s_anchor = state.s_bar
        self.x_anchor = meas.cal_positions
        self.s_basis, self.x_basis = gauge_bases(state.s_bar, meas.cal_positions, self.ref[0], gauge)

    def predict(self, s, x, alpha):
        return self.model.predict(s, x, alpha)

    def cost(self, s, x, alpha) -> float:
        return float(np.mean(np.cos(self.meas - self.predict(s, x, alpha))))

    def _ref_term(self, s, x):
        n0, m0 = self.ref
        r0 = np.linalg.norm(x - s[n0], axis=1) + np.linalg.norm(x - s[m0], axis=1)
        return self.k[n0] * (self.nominal[n0, m0] - r0)

    # step 1: one sensor, monostatic rows
    def sensor_cost(self, n, cand, s, x):
        """Mean cos over the monostatic rows of sensor n for candidate positions cand (C, 2)."""
        d = np.linalg.norm(x[None, :, :] - cand[:, None, :], axis=-1)  # (C, P)
        pred = self.k[n] * (self.nominal[n, n][None, :] - 2 * d) - self._ref_term(s, x)[None, :]
        return np.mean(np.cos(self.meas[self.row[(n, n)]][None, :] - pred), axis=1)

    def sensor_grad(self, n, sn, s, x):
        diff = x - sn
        d = np.linalg.norm(diff, axis=1)
        u = diff / d[:, None]
        pred = self.k[n] * (self.nominal[n, n] - 2 * d) - self._ref_term(s, x)
        e = self.meas[self.row[(n, n)]] - pred
        # d pred / d s_n = 2 k_n u ; d cos(e) / d pred = sin(e)
        return np.mean(np.sin(e)[:, None] * 2 * self.k[n] * u, axis=0)

    # step 3: one target, all rows
    def _target_rows(self, p, cand, s, alpha):
        """Predictions of every row for target p at candidates (C, 2), shape (C, R)."""
        d = np.linalg.norm(cand[:, None, :] - s[None, :, :], axis=-1)  # (C, N)
        path = d[:, :, None] + d[:, None, :]  # (C, N, N)
        full = self.k[None, :, None] * (self.nominal[None, :, :, p] - path) + alpha[None]
        ref = full[:, self.ref[0], self.ref[1]]
        return full[:, self.idx_n, self.idx_m] - ref[:, None]

    def target_cost(self, p, cand, s, alpha):
        pred = self._target_rows(p, cand, s, alpha)
        return np.mean(np.cos(self.meas[:, p][None, :] - pred), axis=1)

    def target_grad(self, p, xp, s, alpha):
        e = self.meas[:, p] - self._target_rows(p, xp[None, :], s, alpha)[0]
        J = self.model.jacobian_x(s, xp[None, :])[:, 0, :]  # (R, 2)
        return np.mean(np.sin(e)[:, None] * J, axis=0)

    # step 2: closed-form alpha
    def alpha_step(self, s, x):
        res = self.meas - self.predict(s, x, np.zeros((self.N, self.N)))
        alpha = np.zeros((self.N, self.N))
        for n in range(self.N):
            for m in range(n + 1, self.N):
                z = 0.0 + 0.0j
                if (n, m) != self.ref:
                    z += np.sum(np.exp(1j * res[self.row[(n, m)]]))
                if (m, n) != self.ref:
                    z += np.sum(np.exp(-1j * res[self.row[(m, n)]]))
                alpha[n, m] = np.angle(z)
                alpha[m, n] = -alpha[n, m]
        return alpha

    # joint parameter vector: free sensor coordinates, free target coordinates, alpha above the diagonal
    def pack(self, s, x, alpha):
        parts = [B.T @ (s[j] - self.s_anchor[j]) for j, B in enumerate(self.s_basis)]
        parts += [B.T @ (x[p] - self.x_anchor[p]) for p, B in enumerate(self.x_basis)]
        parts.append(alpha[np.triu_indices(self.N, 1)])
        return np.concatenate(parts)

    def unpack(self, theta):
        s = self.s_anchor.copy()
        x = self.x_anchor.copy()
        i = 0
        for j, B in enumerate(self.s_basis):
            s[j] = s[j] + B @ theta[i : i + B.shape[1]]
            i += B.shape[1]
        for p, B in enumerate(self.x_basis):
            x[p] = x[p] + B @ theta[i : i + B.shape[1]]
            i += B.shape[1]
        alpha = np.zeros((self.N, self.N))
        alpha[np.triu_indices(self.N, 1)] = theta[i:]
        return s, x, alpha - alpha.T

    def n_position_params(self):
        return sum(B.shape[1] for B in self.s_basis), sum(B.shape[1] for B in self.x_basis)

    def joint_value_grad(self, theta):
        s, x, alpha = self.unpack(theta)
        e = self.meas - self.predict(s, x, alpha)  # (R, P)
        w = np.sin(e) / e.size  # d cost / d pred
        gs = np.einsum("rp,rpjc->jc", w, self.model.jacobian_s(s, x))
        gx = np.einsum("rp,rpc->pc", w, self.model.jacobian_x(s, x))
        ga = np.zeros((self.N, self.N))
        n0, m0 = self.ref
        for (n, m), v in zip(self.pairs, w.sum(axis=1)):
            ga[n, m] += v
            ga[n0, m0] -= v
        ga = ga - ga.T
        parts = [B.T @ gs[j] for j, B in enumerate(self.s_basis)]
        parts += [B.T @ gx[p] for p, B in enumerate(self.x_basis)]
        parts.append(ga[np.triu_indices(self.N, 1)])
        return float(np.mean(np.cos(e))), np.concatenate(parts)


def _block_grid(anchor, B, theta, box, radius, step):
    """Candidate positions anchor + B t on a grid of t within the box and ``radius`` of theta."""
    axes = [np.arange(max(-box, t - radius), min(box, t + radius) + step / 2, step) for t in theta]
    T = np.stack([a.ravel() for a in np.meshgrid(*axes, indexing="ij")], axis=1)
    return T, anchor + T @ B.T


def _ascend(f, grad, t0, box, steps, scale):
    """Projected gradient ascent with backtracking in block coordinates t (box [-box, box])."""
    t = t0.copy()
    ft = f(t[None, :])[0]
    h = scale
    for _ in range(steps):
        g = grad(t)
        gn = np.linalg.norm(g)
        if gn == 0:
            break
        improved = False
        while h > 1e-9 * scale:
            y = np.clip(t + h * g / gn, -box, box)
            fy = f(y[None, :])[0]
            if fy > ft:
                t, ft = y, fy
                improved = True
                h *= 2.0
                break
            h *= 0.5
        if not improved:
            break
    return t


def _polish(prob, s, x, alpha, opts):
    """Joint bounded L-BFGS ascent over all free positions and alphas."""
    from scipy.optimize import minimize

    theta0 = prob.pack(s, x, alpha)
    ns, nx = prob.n_position_params()
    bounds = [(-opts.sensor_box, opts.sensor_box)] * ns + [(-opts.target_box, opts.target_box)] * nx
    bounds += [(None, None)] * (len(theta0) - ns - nx)

    def f(theta):
        v, g = prob.joint_value_grad(theta)
        return -v, -g

    res = minimize(f, theta0, jac=True, method="L-BFGS-B", bounds=bounds, options={"maxiter": 200})
    if -res.fun > prob.cost(s, x, alpha):
        s, x, alpha = prob.unpack(res.x)
        up = np.triu(wrap(alpha), 1)
        alpha = up - up.T
    return s, x, alpha


def _lattice_step(prob: _Problem, opts: FineSyncOptions, s0, x0, sensor_prior, target_prior):
    """Update of (s0, x0) from the model linearized there, with integer cycle ambiguities.

    The rows (n, r) and (r, n), r the reference sensor, are fit by position
    increments (in the gauge bases), per-sensor clock phases and integer cycle
    counts under a Gaussian prior; alpha is then re-estimated from all rows.
    Returns (cost, s, x, alpha).
    """
    N, P = prob.N, prob.P
    r = prob.ref[0]
    if prob.ref[1] != r:
        raise ValueError("the lattice start needs a monostatic reference pair")
    resid = wrap(prob.meas - prob.model.predict(s0, x0, np.zeros((N, N))))
    Js = prob.model.jacobian_s(s0, x0)
    Jx = prob.model.jacobian_x(s0, x0)
    Ja = prob.model.jacobian_alpha_sensor()
    others = [n for n in range(N) if n != r]
    ns, nx = prob.n_position_params()
    if opts.lattice_rows == "all":
        pairs = list(prob.pairs)
    elif opts.lattice_rows == "mixed":
        pairs = [(n, n) for n in others] + [(n, r) for n in others] + [(r, n) for n in others]
    else:
        pairs = [(n, r) for n in others] + [(r, n) for n in others]
    rows = [(prob.row[pair], p) for pair in pairs for p in range(P)]
    A = np.zeros((len(rows), ns + nx + len(others)))
    for i, (jr, p) in enumerate(rows):
        c = 0
        for j, B in enumerate(prob.s_basis):
            A[i, c : c + B.shape[1]] = Js[jr, p, j] @ B
            c += B.shape[1]
        for q, B in enumerate(prob.x_basis):
            if q == p:
                A[i, c : c + B.shape[1]] = Jx[jr, p] @ B
            c += B.shape[1]
        A[i, c:] = Ja[jr, others]
    prior = np.r_[np.full(ns, sensor_prior), np.full(nx, target_prior), np.full(len(others), np.pi)]
    z, _ = WrappedLinearSolver(A, opts.lattice_sigma, prior).solve(np.array([resid[jr, p] for jr, p in rows]))
    z = prob.pack(s0, x0, np.zeros((N, N)))[: ns + nx] + z[: ns + nx]
    z[:ns] = np.clip(z[:ns], -opts.sensor_box, opts.sensor_box)
    z[ns:] = np.clip(z[ns:], -opts.target_box, opts.target_box)
    s, x, _ = prob.unpack(np.r_[z, np.zeros(N * (N - 1) // 2)])
    alpha = prob.alpha_step(s, x)
    return prob.cost(s, x, alpha), s, x, alpha


def fine_sync(meas: PhaseMeasurements, state: SyncState, opts: FineSyncOptions = FineSyncOptions()) -> FineSyncResult:
    """Alternating maximization of the mean-cosine phase fit.

    Each outer iteration runs (1) per-sensor position updates on the monostatic
    rows, (2) closed-form antisymmetric alpha from circular means, (3) per-target
    position updates on all rows, then optionally a joint polish. Block updates
    start from a grid search (first ``grid_iters`` iterations) followed by
    gradient ascent with backtracking. The gauge is fixed per ``opts.gauge``. The
    best state seen is returned, so the reported cost history never decreases.
    """
    if state.stage != "coarse":
        raise ValueError("fine synchronization starts from a coarse-stage state")
    if state.n_sensors < 2:
        raise ValueError("fine synchronization needs N >= 2")
    prob = _Problem(meas, state, opts.wave_speed, opts.gauge)
    N, P = prob.N, prob.P
    lam = opts.wave_speed / np.max(state.carriers)
    step = opts.grid_step or lam / 6
    s = state.s_bar.copy()
    x = meas.cal_positions.copy()
    alpha = prob.alpha_step(s, x)
    best = (prob.cost(s, x, alpha), s.copy(), x.copy(), alpha.copy())
    history = [best[0]]
    if opts.start == "lattice":
        # relinearize at the best point so far with a shrinking prior on the increment
        shrink = 1.0
        for _ in range(opts.lattice_rounds):
            if best[0] > opts.cost_threshold:
                break
            c, s1, x1, a1 = _lattice_step(
                prob, opts, best[1], best[2], opts.sensor_prior * shrink, opts.target_prior * shrink
            )
            if opts.joint_polish:
                s1, x1, a1 = _polish(prob, s1, x1, a1, opts)
                c = prob.cost(s1, x1, a1)
            if c > best[0]:
                best = (c, s1.copy(), x1.copy(), a1.copy())
            history.append(best[0])
            shrink *= opts.lattice_shrink
        s, x, alpha = best[1].copy(), best[2].copy(), best[3].copy()

    def sensor_step(search):
        r = opts.sensor_search if opts.sensor_search is not None else opts.sensor_box
        for n in range(N):
            B, a = prob.s_basis[n], prob.s_anchor[n]
            if B.shape[1] == 0:
                continue
            f = lambda T, n=n, B=B, a=a: prob.sensor_cost(n, a + T @ B.T, s, x)  # noqa: E731
            g = lambda t, n=n, B=B, a=a: B.T @ prob.sensor_grad(n, a + B @ t, s, x)  # noqa: E731
            t = B.T @ (s[n] - a)
            if search:
                T, _ = _block_grid(a, B, t, opts.sensor_box, r, step)
                t = T[int(np.argmax(f(T)))]
            s[n] = a + B @ _ascend(f, g, t, opts.sensor_box, opts.ascent_steps, step)

    def target_step(search, alpha):
        r = opts.target_search if opts.target_search is not None else opts.target_box
        for p in range(P):
            B, a = prob.x_basis[p], prob.x_anchor[p]
            f = lambda T, p=p, B=B, a=a: prob.target_cost(p, a + T @ B.T, s, alpha)  # noqa: E731
            g = lambda t, p=p, B=B, a=a: B.T @ prob.target_grad(p, a + B @ t, s, alpha)  # noqa: E731
            t = B.T @ (x[p] - a)
            if search:
                T, _ = _block_grid(a, B, t, opts.target_box, r, step)
                t = T[int(np.argmax(f(T)))]
            x[p] = a + B @ _ascend(f, g, t, opts.target_box, opts.ascent_steps, step)

    def keep(s, x, alpha):
        nonlocal best
        c = prob.cost(s, x, alpha)
        if c > best[0]:
            best = (c, s.copy(), x.copy(), alpha.copy())
        history.append(best[0])
        return best[1].copy(), best[2].copy(), best[3].copy()

    if opts.targets_first and best[0] <= opts.cost_threshold:
        # coarse target positions are usually the least accurate: settle them before step 1
        target_step(True, alpha)
        alpha = prob.alpha_step(s, x)
        s, x, alpha = keep(s, x, alpha)
    it = 0
    while best[0] <= opts.cost_threshold and it < opts.max_iters:
        search = it < opts.grid_iters
        sensor_step(search)
        alpha = prob.alpha_step(s, x)
        target_step(search, alpha)
        alpha = prob.alpha_step(s, x)
        if opts.joint_polish:
            s, x, alpha = _polish(prob, s, x, alpha, opts)
        it += 1
        s, x, alpha = keep(s, x, alpha)
    rng = np.random.default_rng(opts.hop_seed)
    hops = 0
    while best[0] <= opts.cost_threshold and hops < opts.hops:
        # perturb the best state by a fraction of a wavelength and polish again
        hops += 1
        theta = prob.pack(best[1], best[2], best[3])
        ns, nx = prob.n_position_params()
        theta[: ns + nx] += rng.uniform(-1, 1, ns + nx) * opts.hop_scale * lam
        theta[:ns] = np.clip(theta[:ns], -opts.sensor_box, opts.sensor_box)
        theta[ns : ns + nx] = np.clip(theta[ns : ns + nx], -opts.target_box, opts.target_box)
        s, x, _ = prob.unpack(theta)
        alpha = prob.alpha_step(s, x)
        s, x, alpha = keep(*_polish(prob, s, x, alpha, opts))
    cost, s, x, alpha = best
    converged = cost > opts.cost_threshold
    if not converged:
        log.warning("fine synchronization stopped at cost %.3f after %d iterations", cost, it)
    new = state.advance("fine", s_tilde=s, x_tilde=x, alpha=alpha, cost_history=tuple(history), converged=converged)
    return FineSyncResult(new, cost, it, converged, tuple(history))


def calibration_phase(state: SyncState, pair, points, wave_speed: float = C_LIGHT) -> np.ndarray:
    """phi_cal(x) = -2 pi f_n (1 + beta_n) [tau_bar(x) - tau_tilde(x)] - alpha_tilde_nm at arbitrary points."""
    n, m = pair
    pts = np.asarray(points, dtype=float)

    def path(s):
        return np.linalg.norm(pts - s[n], axis=-1) + np.linalg.norm(pts - s[m], axis=-1)

    k = 2 * np.pi * state.carriers[n] * (1 + state.beta[n]) / wave_speed
    return -k * (path(state.s_bar) - path(state.s_tilde)) - state.alpha[n, m]


def calibration_field(state: SyncState, pair, grid: PixelGrid, wave_speed: float = C_LIGHT) -> CalibrationField:
    """Calibration phase of one pair on a pixel grid (to be applied with exp(+j phi))."""
    if state.stage != "fine":
        raise ValueError("calibration fields need a fine-stage state")
    return CalibrationField(grid, calibration_phase(state, pair, grid.points(), wave_speed), tuple(pair))


def identifiability_check(N: int, P: int) -> tuple[bool, int]:
    """Sufficient condition (N - 1) P >= 2 (N - 1) + 2 P - 1; returns (holds, margin)."""
    if N < 1 or P < 0:
        raise ValueError("need N >= 1 and P >= 0")
    margin = (N - 1) * P - (2 * (N - 1) + 2 * P - 1)
    return margin >= 0, int(margin)
