"""Coarse synchronization: image coregistration, position correction, timing-offset estimation."""

from __future__ import annotations

import logging

import numpy as np
from scipy.ndimage import map_coordinates

from ..imaging import ComplexImage, FlatImageError, GridMismatchError, _parabola, find_peaks
from ..scene import C_LIGHT, rotation

log = logging.getLogger("netsar")


def _sample_intensity(mag, grid, pts):
    """Bilinear |I| at arbitrary points; zero outside the grid."""
    ix = (pts[..., 0] - grid.x0) / grid.dx
    iy = (pts[..., 1] - grid.y0) / grid.dy
    return map_coordinates(mag, [iy.ravel(), ix.ravel()], order=1, mode="constant", cval=0.0).reshape(pts.shape[:-1])


def _center(grid):
    return np.array([grid.x0 + (grid.nx - 1) * grid.dx / 2, grid.y0 + (grid.ny - 1) * grid.dy / 2])


def coregistration_score(master: ComplexImage, slave: ComplexImage, psi: float, delta, center=None) -> float:
    """sum_x |I_ref(x)| |I_slave(R_psi (x - c) + c + delta)|, c the rotation center (grid center by default)."""
    g = master.grid
    c = _center(g) if center is None else np.asarray(center, dtype=float)
    q = (g.points() - c) @ rotation(psi).T + c + np.asarray(delta, dtype=float)
    return float(np.sum(np.abs(master.values) * _sample_intensity(np.abs(slave.values), g, q)))


def coregister(
    master: ComplexImage,
    slave: ComplexImage,
    search=(np.radians(2.0), 1.0),
    n_psi: int = 9,
    center=None,
    mask_db: float | None = None,
):
    """Rigid roto-translation (psi, delta) of the slave intensity relative to the master.

    The slave is modeled as the master rotated by psi about ``center`` (grid
    center by default) and then displaced by ``delta``, so delta is the slave's
    displacement and :func:`correct_positions` undoes it. ``search`` is (max
    |psi| in radians, max |delta| per axis in meters). For each of ``n_psi``
    angles the slave is resampled once and correlated with the master over
    whole-pixel shifts; the best node is refined by a three-point quadratic fit
    along each axis. With ``mask_db`` only master pixels within that many dB of
    the peak enter the sum. Returns (psi, delta, normalized score).
    """
    if master.grid != slave.grid:
        raise GridMismatchError("coregistration needs a common grid")
    psi_max, shift_max = float(search[0]), float(search[1])
    if not (np.isfinite(psi_max) and np.isfinite(shift_max)) or psi_max < 0 or shift_max < 0:
        raise ValueError("search ranges must be finite and non-negative")
    g = master.grid
    c = _center(g) if center is None else np.asarray(center, dtype=float)
    hx, hy = int(np.ceil(shift_max / g.dx)), int(np.ceil(shift_max / g.dy))
    if 2 * hy >= g.ny or 2 * hx >= g.nx:
        raise ValueError("shift search range exceeds the image")
    ref = np.abs(master.values)
    if mask_db is not None:
        ref = np.where(ref >= ref.max() * 10 ** (mask_db / 20), ref, 0.0)
    ref = ref[hy : g.ny - hy, hx : g.nx - hx]
    mag = np.abs(slave.values)
    P = g.points() - c
    psis = np.linspace(-psi_max, psi_max, n_psi) if psi_max > 0 and n_psi > 1 else np.zeros(1)

    S = np.empty((len(psis), 2 * hy + 1, 2 * hx + 1))
    norms = np.empty_like(S)
    for a, psi in enumerate(psis):
        T = _sample_intensity(mag, g, P @ rotation(psi).T + c)
        T2 = T**2
        for i in range(2 * hy + 1):
            for j in range(2 * hx + 1):
                win = (slice(i, g.ny - 2 * hy + i), slice(j, g.nx - 2 * hx + j))
                S[a, i, j] = np.sum(ref * T[win])
                norms[a, i, j] = np.sum(T2[win])
    a, i, j = np.unravel_index(int(np.argmax(S)), S.shape)
    if (len(psis) > 1 and a in (0, len(psis) - 1)) or i in (0, 2 * hy) or j in (0, 2 * hx):
        log.warning("coregistration optimum lies on the search-range boundary")
    fa = _parabola(S[a - 1, i, j], S[a, i, j], S[a + 1, i, j]) if 0 < a < len(psis) - 1 else 0.0
    fi = _parabola(S[a, i - 1, j], S[a, i, j], S[a, i + 1, j]) if 0 < i < 2 * hy else 0.0
    fj = _parabola(S[a, i, j - 1], S[a, i, j], S[a, i, j + 1]) if 0 < j < 2 * hx else 0.0
    step = psis[1] - psis[0] if len(psis) > 1 else 0.0
    psi = float(psis[a] + fa * step)
    # the slave sampled at R(x - c) + c + delta equals the rotated slave shifted by R^T delta
    shift = np.array([(j - hx + fj) * g.dx, (i - hy + fi) * g.dy])
    delta = np.clip(rotation(psi) @ shift, -shift_max, shift_max)
    norm = np.sqrt(np.sum(ref**2) * norms[a, i, j])
    return psi, delta, (float(S[a, i, j] / norm) if norm > 0 else 0.0)


def correct_positions(elements, center, psi: float, delta) -> np.ndarray:
    """s = R_psi (s_hat - c) - delta + c for every element (rows of ``elements``)."""
    el = np.asarray(elements, dtype=float).reshape(-1, 2)
    c = np.asarray(center, dtype=float)
    return (el - c) @ rotation(psi).T - np.asarray(delta, dtype=float) + c


def peak_position(image: ComplexImage, around=None, radius: float | None = None, mask=None) -> np.ndarray:
    """Argmax of |I| with quadratic sub-pixel refinement.

    The search is limited to pixels within ``radius`` of ``around`` and/or to a
    boolean ``mask`` of the grid shape when given.
    """
    g = image.grid
    mag = np.abs(image.values)
    keep = np.ones(mag.shape, dtype=bool)
    if around is not None and radius is not None:
        P = g.points()
        keep &= np.hypot(P[..., 0] - around[0], P[..., 1] - around[1]) <= radius
    if mask is not None:
        keep &= np.asarray(mask, dtype=bool)
    search = np.where(keep, mag, 0.0)
    iy, ix = np.unravel_index(int(np.argmax(search)), mag.shape)
    pk = mag[iy, ix]
    floor = np.median(mag**2) / np.log(2)
    if pk == 0 or pk**2 < floor * np.log(mag.size / 1e-2):
        raise FlatImageError(f"no dominant peak in image of pair {image.pair}")
    fx = _parabola(mag[iy, ix - 1], pk, mag[iy, ix + 1]) if 0 < ix < g.nx - 1 else 0.0
    fy = _parabola(mag[iy - 1, ix], pk, mag[iy + 1, ix]) if 0 < iy < g.ny - 1 else 0.0
    return np.array([g.x0 + (ix + fx) * g.dx, g.y0 + (iy + fy) * g.dy])


def estimate_kappa(
    ref_image: ComplexImage,
    bistatic_image: ComplexImage,
    positions,
    beta_n: float,
    search_radius: float | None = None,
    max_kappa: float | None = None,
    n_targets: int = 1,
    min_separation: float = 2.0,
    wave_speed: float = C_LIGHT,
) -> float:
    """Timing offset of a bistatic pair from the displacement of a common bright target.

    ``positions`` holds the (tx, rx) phase centers of the bistatic pair. The
    brightest target of the reference image is looked up in the bistatic image
    within ``search_radius`` (whole image if None) and
    kappa = (tau_nm(x_nm) - tau_nm(x_ref)) / (1 + beta_n).
    A timing offset displaces the target along the gradient of tau_nm, so with
    ``max_kappa`` the search is further limited to that direction, up to the
    displacement |kappa| <= max_kappa can cause, and to ``search_radius`` / 4
    across it. With ``n_targets`` > 1 the same is done for that many of the
    brightest reference peaks (``min_separation`` apart) and the median is
    returned, which tolerates a reference peak that merges several targets.
    """
    tx, rx = (np.asarray(p, dtype=float) for p in positions)

    def tau(x):
        return (np.linalg.norm(x - tx, axis=-1) + np.linalg.norm(x - rx, axis=-1)) / wave_speed

    refs = [peak_position(ref_image)]
    if n_targets > 1:
        for p in find_peaks(ref_image, -10.0, min_separation)[1:n_targets]:
            try:
                refs.append(peak_position(ref_image, p, ref_image.grid.dx * 1.5))
            except FlatImageError:
                pass
    pts = bistatic_image.grid.points()
    out = []
    for x_ref in refs:
        mask = None
        if max_kappa is not None:
            grad = (x_ref - tx) / np.linalg.norm(x_ref - tx) + (x_ref - rx) / np.linalg.norm(x_ref - rx)
            gn = np.linalg.norm(grad)
            if gn < 1e-9:
                continue  # on the bistatic baseline every displacement is invisible
            d = pts - x_ref
            along = d @ (grad / gn)
            across = d @ (np.array([-grad[1], grad[0]]) / gn)
            half_width = (search_radius if search_radius is not None else 1.0) / 4
            # path change c*kappa moves the peak by c*kappa/|grad| along the gradient
            reach = wave_speed * max_kappa / gn + half_width
            mask = (np.abs(along) <= reach) & (np.abs(across) <= half_width)
        try:
            x_nm = peak_position(bistatic_image, x_ref, search_radius, mask)
        except FlatImageError:
            if len(refs) == 1:
                raise
            continue
        out.append((tau(x_nm) - tau(x_ref)) / (1.0 + beta_n))
    if not out:
        raise FlatImageError(f"no reference target found in image of pair {bistatic_image.pair}")
    return float(np.median(out))
