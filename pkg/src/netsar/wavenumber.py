"""Wavenumber-domain coverage of monostatic/bistatic pairs and the resolution it implies."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import C_LIGHT, Scene, element_positions


class DegenerateGeometryError(ValueError):
    """Raised for coincident points or zero-width coverage."""


@dataclass(frozen=True)
class WavenumberTile:
    provenance: tuple[int, int, int, int]
    points: np.ndarray  # (n_freq, 2) rad/m


@dataclass(frozen=True)
class CoverageSet:
    tiles: tuple[WavenumberTile, ...]
    target: np.ndarray

    @property
    def points(self) -> np.ndarray:
        if not self.tiles:
            return np.zeros((0, 2))
        return np.concatenate([t.points for t in self.tiles])

    @property
    def pairs(self) -> list[tuple[int, int]]:
        """Distinct (n, m) sensor pairs contributing tiles, in first-seen order."""
        return list(dict.fromkeys(t.provenance[:2] for t in self.tiles))

    def widths(self) -> tuple[float, float]:
        pts = self.points
        if len(pts) == 0:
            raise DegenerateGeometryError("empty coverage")
        span = pts.max(axis=0) - pts.min(axis=0)
        return float(span[0]), float(span[1])


@dataclass(frozen=True)
class BandAllocation:
    """1D allocation: band lower edges (Hz, relative to f0) of common width ``bandwidth``."""

    starts: np.ndarray
    bandwidth: float
    f0: float = 77e9

    def __post_init__(self):
        object.__setattr__(self, "starts", np.sort(np.asarray(self.starts, dtype=float).ravel()))


def _unit(frm, to):
    d = np.asarray(to, dtype=float) - np.asarray(frm, dtype=float)
    r = np.linalg.norm(d, axis=-1, keepdims=True)
    if np.any(r == 0):
        raise DegenerateGeometryError("point coincides with a sensor element")
    return d / r


def wavevectors(tx, rx, point, freq, wave_speed: float = C_LIGHT):
    """(k_Tx, k_Rx, k) for one Tx/Rx/point triple.

    Both propagation directions point from sensor to target, so k_Rx carries a
    minus sign and k = k_Tx - k_Rx = (2 pi f / c)(u_tx + u_rx); a monostatic
    pair gives |k| = 2 (2 pi f / c).
    """
    k0 = 2 * np.pi * np.asarray(freq, dtype=float)[..., None] / wave_speed
    k_tx = k0 * _unit(tx, point)
    k_rx = -k0 * _unit(rx, point)
    return k_tx, k_rx, k_tx - k_rx


def tile(tx, rx, point, f_c, B, n_freq: int = 64, wave_speed: float = C_LIGHT, provenance=(0, 0, 0, 0)):
    """Wavenumbers swept by one element pair over the band [f_c - B/2, f_c + B/2]."""
    if n_freq < 2:
        raise ValueError("n_freq must be >= 2")
    freqs = np.linspace(f_c - B / 2, f_c + B / 2, n_freq)
    direction = _unit(tx, point) + _unit(rx, point)
    pts = (2 * np.pi * freqs / wave_speed)[:, None] * direction
    return WavenumberTile(tuple(int(v) for v in provenance), pts)


def element_pairs(n_tx: int, n_rx: int, pairing: str = "all"):
    """Element index pairs used for one sensor pair.

    ``all`` is every (l, k) combination; ``synthetic`` pairs element l with
    element l, as for one antenna moving along its track.
    """
    if pairing == "all":
        return [(l, k) for l in range(n_tx) for k in range(n_rx)]
    if pairing == "synthetic":
        if n_tx != n_rx:
            raise ValueError("synthetic pairing needs equal element counts")
        return [(l, l) for l in range(n_tx)]
    raise ValueError(f"unknown pairing {pairing!r}")


def pair_coverage(scene: Scene, n: int, m: int, point, n_freq: int = 64, pairing: str = "all", wave_speed=C_LIGHT):
    """Union of the tiles of every element pair of Tx sensor n and Rx sensor m."""
    tx_s, rx_s = scene.sensors[n], scene.sensors[m]
    tx_e, rx_e = element_positions(tx_s), element_positions(rx_s)
    tiles = [
        tile(tx_e[l], rx_e[k], point, tx_s.carrier, tx_s.bandwidth, n_freq, wave_speed, (n, m, l, k))
        for l, k in element_pairs(len(tx_e), len(rx_e), pairing)
    ]
    return CoverageSet(tuple(tiles), np.asarray(point, dtype=float))


def total_coverage(scene: Scene, point, n_freq: int = 64, pairing: str = "all", wave_speed=C_LIGHT):
    """Union over every monostatic and bistatic pair of the scene."""
    tiles = []
    for n in range(scene.n_sensors):
        for m in range(scene.n_sensors):
            tiles.extend(pair_coverage(scene, n, m, point, n_freq, pairing, wave_speed).tiles)
    return CoverageSet(tuple(tiles), np.asarray(point, dtype=float))


def resolution_bounds(coverage: CoverageSet) -> tuple[float, float]:
    """(rho_x, rho_y) = 2 pi / (bounding-box widths of the coverage)."""
    wx, wy = coverage.widths()
    if wx <= 0 or wy <= 0:
        axis = "x" if wx <= 0 else "y"
        raise DegenerateGeometryError(f"coverage has zero width along k_{axis}; resolution unbounded")
    return 2 * np.pi / wx, 2 * np.pi / wy


def resolution_along(coverage: CoverageSet, direction) -> float:
    """2 pi over the coverage width projected on ``direction`` (e.g. the line of sight)."""
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    proj = coverage.points @ u
    w = proj.max() - proj.min() if len(proj) else 0.0
    if w <= 0:
        raise DegenerateGeometryError("coverage has zero width along the requested direction")
    return 2 * np.pi / w


def band_frequencies(alloc: BandAllocation, df: float) -> np.ndarray:
    """Sampled absolute frequencies; each band contributes round(B/df) half-open bins."""
    if df <= 0:
        raise ValueError("df must be positive")
    n_bin = int(np.ceil(alloc.bandwidth / df - 1e-9))
    offs = np.arange(n_bin) * df
    return (alloc.f0 + alloc.starts[:, None] + offs[None, :]).ravel()


def steering_matrix(coverage, grid, wave_speed: float = C_LIGHT) -> np.ndarray:
    """Stacked sampled wavenumbers K, one column per sample.

    ``coverage`` is either a :class:`BandAllocation` (1D study; ``grid`` is the
    frequency step df and K is 1 x |K| with k = 4 pi f / c) or a
    :class:`CoverageSet` (``grid`` = (dk_x, dk_y); K holds the centers of the
    grid cells containing at least one coverage point, 2 x |K|).
    """
    if isinstance(coverage, BandAllocation):
        f = band_frequencies(coverage, float(grid))
        return (4 * np.pi * f / wave_speed)[None, :]
    dkx, dky = grid
    if dkx <= 0 or dky <= 0:
        raise ValueError("grid steps must be positive")
    pts = coverage.points
    if len(pts) == 0:
        return np.zeros((2, 0))
    cells = np.unique(np.floor(pts / np.array([dkx, dky])).astype(np.int64), axis=0)
    return ((cells + 0.5) * np.array([dkx, dky])).T
