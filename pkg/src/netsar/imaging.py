"""Back-projection focusing, calibration-phase application and coherent fusion."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .scene import C_LIGHT, Scene, element_positions
from .wavenumber import element_pairs

log = logging.getLogger("netsar")


class GridMismatchError(ValueError):
    """Images or fields do not share a pixel grid / pair."""


class FlatImageError(ValueError):
    """No distinct peak in the image."""


@dataclass(frozen=True)
class PixelGrid:
    x0: float
    y0: float
    dx: float
    dy: float
    nx: int
    ny: int

    def __post_init__(self):
        if not (self.dx > 0 and self.dy > 0):
            raise ValueError("pixel spacing must be positive")
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid needs at least one pixel")

    @classmethod
    def centered(cls, center, extent, spacing) -> "PixelGrid":
        """Grid of roughly ``extent`` (wx, wy) meters around ``center`` with node on the center."""
        cx, cy = center
        ex, ey = np.broadcast_to(np.asarray(extent, dtype=float), (2,))
        sx, sy = np.broadcast_to(np.asarray(spacing, dtype=float), (2,))
        hx, hy = int(np.ceil(ex / 2 / sx)), int(np.ceil(ey / 2 / sy))
        return cls(cx - hx * sx, cy - hy * sy, sx, sy, 2 * hx + 1, 2 * hy + 1)

    @property
    def xs(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.nx)

    @property
    def ys(self) -> np.ndarray:
        return self.y0 + self.dy * np.arange(self.ny)

    @property
    def shape(self) -> tuple[int, int]:
        return self.ny, self.nx

    def points(self) -> np.ndarray:
        """Pixel centers, shape (ny, nx, 2), x fastest."""
        X, Y = np.meshgrid(self.xs, self.ys)
        return np.stack([X, Y], axis=-1)

    def contains(self, p) -> bool:
        x, y = p
        return (
            self.x0 <= x <= self.x0 + (self.nx - 1) * self.dx
            and self.y0 <= y <= self.y0 + (self.ny - 1) * self.dy
        )

    def to_index(self, p) -> tuple[float, float]:
        """Fractional (ix, iy) of a position."""
        return (p[0] - self.x0) / self.dx, (p[1] - self.y0) / self.dy


@dataclass(frozen=True)
class ComplexImage:
    grid: PixelGrid
    values: np.ndarray
    pair: tuple[int, int]
    n_zeroed: int = 0

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} does not match grid {self.grid.shape}")


@dataclass(frozen=True)
class CalibrationField:
    grid: PixelGrid
    phases: np.ndarray
    pair: tuple[int, int]

    def __post_init__(self):
        if self.phases.shape != self.grid.shape:
            raise ValueError("phase field shape does not match grid")


@dataclass(frozen=True)
class ImagingEstimates:
    """What the focuser believes: element positions, per-sensor beta, pairwise kappa, carriers."""

    elements: tuple[np.ndarray, ...]
    beta: np.ndarray
    kappa: np.ndarray
    carriers: np.ndarray
    wave_speed: float = C_LIGHT
    pairing: str = "synthetic"

    @classmethod
    def from_scene(cls, scene: Scene, pairing: str = "synthetic", wave_speed: float = C_LIGHT) -> "ImagingEstimates":
        """Estimates equal to the scene's true geometry and clocks (perfect synchronization)."""
        kap = np.array([s.clock.kappa for s in scene.sensors])
        return cls(
            tuple(element_positions(s) for s in scene.sensors),
            np.array([s.clock.beta for s in scene.sensors]),
            kap[:, None] - kap[None, :],
            scene.carriers,
            wave_speed,
            pairing,
        )

    @classmethod
    def nominal(cls, scene: Scene, pairing: str = "synthetic", wave_speed: float = C_LIGHT) -> "ImagingEstimates":
        """True geometry with all clock offsets assumed zero."""
        n = scene.n_sensors
        return cls(
            tuple(element_positions(s) for s in scene.sensors),
            np.zeros(n),
            np.zeros((n, n)),
            scene.carriers,
            wave_speed,
            pairing,
        )


@dataclass
class ProfileSet:
    """Range profiles of one (n, m) pair, stacked for the kernels."""

    pair: tuple[int, int]
    element_pairs: list
    samples: np.ndarray
    t0: np.ndarray
    dt: float
    beta_hat: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def from_profiles(cls, profiles) -> "ProfileSet":
        profiles = list(profiles)
        if not profiles:
            raise ValueError("no profiles")
        n, m = profiles[0].pair[:2]
        dt = profiles[0].dt
        if any(p.pair[:2] != (n, m) for p in profiles):
            raise ValueError("profiles belong to different sensor pairs")
        if any(abs(p.dt - dt) > 1e-15 * max(dt, 1.0) for p in profiles):
            raise ValueError("profiles must share one sample spacing")
        L = max(len(p.samples) for p in profiles)
        data = np.zeros((len(profiles), L), dtype=complex)
        for i, p in enumerate(profiles):
            data[i, : len(p.samples)] = p.samples
        return cls(
            (n, m),
            [tuple(p.pair[2:]) for p in profiles],
            data,
            np.array([p.t0 for p in profiles]),
            dt,
            np.array([p.beta_hat_applied for p in profiles]),
        )


def _gather(profiles, est: ImagingEstimates):
    ps = profiles if isinstance(profiles, ProfileSet) else ProfileSet.from_profiles(profiles)
    n, m = ps.pair
    wanted = element_pairs(len(est.elements[n]), len(est.elements[m]), est.pairing)
    have = {lk: i for i, lk in enumerate(ps.element_pairs)}
    missing = [lk for lk in wanted if lk not in have]
    if missing:
        raise ValueError(f"pair {(n, m)} lacks profiles for element pairs {missing[:4]}")
    idx = [have[lk] for lk in wanted]
    tx = np.array([est.elements[n][l] for l, _ in wanted])
    rx = np.array([est.elements[m][k] for _, k in wanted])
    return ps, idx, tx, rx


def backproject_points(profiles, est: ImagingEstimates, points, use_numba=None):
    """Back-projected values at arbitrary points; returns (values, mask of fully covered points)."""
    ps, idx, tx, rx = _gather(profiles, est)
    n, m = ps.pair
    pts = np.asarray(points, dtype=float)
    kappa = 0.0 if n == m else float(est.kappa[n, m])
    vals, missed = kernels.backproject_kernel(
        ps.samples[idx],
        ps.t0[idx],
        ps.dt,
        tx,
        rx,
        pts.reshape(-1, 2),
        1.0 + est.beta[n],
        kappa,
        est.carriers[n],
        est.wave_speed,
        use_numba,
    )
    ok = missed == 0
    return np.where(ok, vals, 0.0).reshape(pts.shape[:-1]), ok.reshape(pts.shape[:-1])


def backproject(profiles, est: ImagingEstimates, grid: PixelGrid, use_numba=None) -> ComplexImage:
    """Image of one (n, m) pair on ``grid``.

    Each pixel sums the profiles at the apparent delay (1 + beta_n) tau + kappa_nm
    times exp(+j 2 pi f_n (1 + beta_n) tau). Pixels whose delay falls outside
    any profile are zeroed and counted.
    """
    ps = profiles if isinstance(profiles, ProfileSet) else ProfileSet.from_profiles(profiles)
    vals, ok = backproject_points(ps, est, grid.points(), use_numba)
    n_bad = int(np.count_nonzero(~ok))
    if n_bad:
        log.warning("pair %s: %d pixels outside the range-profile window were zeroed", ps.pair, n_bad)
    return ComplexImage(grid, vals, ps.pair, n_bad)


def _check_grids(items):
    g = items[0].grid
    for it in items[1:]:
        if it.grid != g:
            raise GridMismatchError("all images must share one pixel grid")
    return g


def fuse(images, alphas) -> ComplexImage:
    """Pixelwise sum of images rotated by exp(+j alpha)."""
    images = list(images)
    alphas = np.asarray(alphas, dtype=float).ravel()
    if not images:
        raise ValueError("nothing to fuse")
    if len(alphas) != len(images):
        raise ValueError("one phase per image is required")
    g = _check_grids(images)
    acc = np.zeros(g.shape, dtype=complex)
    for im, a in zip(images, alphas):
        acc += im.values * np.exp(1j * a)
    return ComplexImage(g, acc, (-1, -1))


def apply_calibration(image: ComplexImage, field: CalibrationField) -> ComplexImage:
    """I_cal(x) = I(x) exp(j phi_cal(x))."""
    if image.grid != field.grid:
        raise GridMismatchError("calibration field grid differs from image grid")
    if tuple(image.pair) != tuple(field.pair):
        raise GridMismatchError(f"field for pair {field.pair} applied to image of pair {image.pair}")
    return ComplexImage(image.grid, image.values * np.exp(1j * field.phases), image.pair, image.n_zeroed)


@dataclass(frozen=True)
class ImageMetrics:
    peak_pos: np.ndarray
    peak_val: complex
    widths: tuple[float, float]
    pslr_db: float


def _parabola(a, b, c):
    den = a - 2 * b + c
    if den == 0:
        return 0.0
    return float(np.clip(0.5 * (a - c) / den, -0.5, 0.5))


def _half_power_width(cut, i, step):
    """3-dB width of a magnitude cut around index i by linear interpolation of power."""
    p = np.abs(cut) ** 2
    half = p[i] / 2
    j = i
    while j > 0 and p[j - 1] > half:
        j -= 1
    left = None if j == 0 else (j - 1) + (half - p[j - 1]) / (p[j] - p[j - 1])
    j = i
    while j < len(p) - 1 and p[j + 1] > half:
        j += 1
    right = None if j == len(p) - 1 else j + (p[j] - half) / (p[j] - p[j + 1])
    if left is None or right is None:
        return np.nan
    return (right - left) * step


def _first_nulls(mag, i):
    lo = i
    while lo > 0 and mag[lo - 1] < mag[lo]:
        lo -= 1
    hi = i
    while hi < len(mag) - 1 and mag[hi + 1] < mag[hi]:
        hi += 1
    return lo, hi


def image_metrics(image: ComplexImage, around, radius: float | None = None, flat_pfa: float = 1e-2) -> ImageMetrics:
    """Peak position (quadratic refinement), 3-dB widths along x and y, and PSLR from the two cuts.

    The peak is searched within ``radius`` meters of ``around`` (whole image if None).
    The image counts as flat when the peak power stays below the level that the
    largest of the pixels would exceed with probability ``flat_pfa`` if they were
    circular Gaussian noise at the median-based floor.
    """
    g = image.grid
    if not g.contains(around):
        raise ValueError("'around' lies outside the grid")
    mag = np.abs(image.values)
    search = mag
    if radius is not None:
        P = g.points()
        far = np.hypot(P[..., 0] - around[0], P[..., 1] - around[1]) > radius
        search = np.where(far, 0.0, mag)
    iy, ix = np.unravel_index(int(np.argmax(search)), mag.shape)
    peak = mag[iy, ix]
    floor = np.median(mag**2) / np.log(2)
    if peak == 0 or peak**2 < floor * (np.log(mag.size) - np.log(flat_pfa)):
        raise FlatImageError("no distinct peak in the image")
    fx = _parabola(mag[iy, ix - 1], peak, mag[iy, ix + 1]) if 0 < ix < g.nx - 1 else 0.0
    fy = _parabola(mag[iy - 1, ix], peak, mag[iy + 1, ix]) if 0 < iy < g.ny - 1 else 0.0
    pos = np.array([g.x0 + (ix + fx) * g.dx, g.y0 + (iy + fy) * g.dy])
    wx = _half_power_width(mag[iy, :], ix, g.dx)
    wy = _half_power_width(mag[:, ix], iy, g.dy)
    side = 0.0
    for cut, i in ((mag[iy, :], ix), (mag[:, ix], iy)):
        lo, hi = _first_nulls(cut, i)
        rest = np.concatenate([cut[:lo], cut[hi + 1 :]])
        if rest.size:
            side = max(side, rest.max())
    pslr = 20 * np.log10(side / peak) if side > 0 else -np.inf
    return ImageMetrics(pos, complex(image.values[iy, ix]), (float(wx), float(wy)), float(pslr))


def find_peaks(image: ComplexImage, rel_db: float = -6.0, min_separation: float = 0.0) -> np.ndarray:
    """Local maxima (8-neighborhood) of |I| within ``rel_db`` of the global peak, strongest first."""
    from scipy.ndimage import maximum_filter

    mag = np.abs(image.values)
    is_max = (mag == maximum_filter(mag, size=3, mode="nearest")) & (mag >= mag.max() * 10 ** (rel_db / 20))
    iy, ix = np.nonzero(is_max)
    order = np.argsort(-mag[iy, ix], kind="stable")
    g = image.grid
    picked = []
    for i in order:
        p = np.array([g.x0 + ix[i] * g.dx, g.y0 + iy[i] * g.dy])
        if all(np.linalg.norm(p - q) >= min_separation for q in picked):
            picked.append(p)
    return np.array(picked).reshape(-1, 2)
