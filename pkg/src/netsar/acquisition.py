"""Simulated acquisition of every sensor pair: echoes, beta estimation, range compression."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import ProfileSet
from .scene import C_LIGHT, Scene, element_positions, tof
from .waveform import (
    RangeProfile,
    WaveformSpec,
    echo_window,
    estimate_beta_pair,
    range_compress,
    solve_absolute_beta,
    synthesize_rx,
)
from .wavenumber import element_pairs


@dataclass
class Acquisition:
    profiles: dict  # (n, m) -> ProfileSet
    beta_pairwise: np.ndarray  # (N, N) estimates of beta_nm, NaN on the diagonal
    beta_abs: np.ndarray  # anchored per-sensor offsets


def _crop(profile: RangeProfile, t_lo: float, t_hi: float) -> RangeProfile:
    i0 = max(int(np.floor((t_lo - profile.t0) / profile.dt)), 0)
    i1 = min(int(np.ceil((t_hi - profile.t0) / profile.dt)) + 1, len(profile.samples))
    return RangeProfile(
        profile.pair, profile.samples[i0:i1].copy(), profile.t0 + i0 * profile.dt, profile.dt,
        profile.beta_hat_applied, profile.carrier,
    )


def acquire(
    scene: Scene,
    spec: WaveformSpec,
    rng_seed: int,
    pairs=None,
    pairing: str = "synthetic",
    beta_mode: str = "surrogate",
    cover_points=None,
    max_kappa: float = 0.0,
    keep_margin: int = 64,
    wave_speed: float = C_LIGHT,
) -> Acquisition:
    """Synthesize, estimate beta and range-compress all element pairs of the requested sensor pairs.

    One beta_nm estimate is made per sensor pair (from its first element pair)
    and used to compress all of its element pairs; ``beta_mode`` is ``signal``,
    ``surrogate`` or ``known`` (exact offsets, for perfect-synchronization runs). Compressed profiles are
    cropped to the delays of the targets and ``cover_points`` (for instance an
    imaging grid outline), widened by ``max_kappa`` and ``keep_margin`` samples.
    """
    N = scene.n_sensors
    if pairs is None:
        pairs = [(n, m) for n in range(N) for m in range(N)]
    pts = scene.target_positions
    if cover_points is not None:
        pts = np.vstack([pts, np.asarray(cover_points, dtype=float).reshape(-1, 2)])
    beta_pw = np.full((N, N), np.nan)
    raw_first = {}
    out = {}
    for n, m in pairs:
        el_n = element_positions(scene.sensors[n])
        el_m = element_positions(scene.sensors[m])
        eps = element_pairs(len(el_n), len(el_m), pairing)
        quads = [(n, m, l, k) for l, k in eps]
        window = echo_window(scene, quads, spec, wave_speed=wave_speed)
        taus = np.concatenate([tof(el_n[l], el_m[k], pts, wave_speed) for l, k in eps])
        scale = 1.0 + scene.sensors[n].clock.beta
        t_lo = scale * taus.min() - max_kappa - abs(scene.sensors[n].clock.kappa - scene.sensors[m].clock.kappa)
        t_hi = scale * taus.max() + max_kappa + abs(scene.sensors[n].clock.kappa - scene.sensors[m].clock.kappa)
        t_lo -= keep_margin * spec.dt
        t_hi += keep_margin * spec.dt
        pad = spec.duration / 2 + keep_margin * spec.dt
        window = (min(window[0], t_lo - pad), max(window[1], t_hi + pad))
        profs = []
        beta_hat = None
        for quad in quads:
            raw = synthesize_rx(scene, quad, spec, rng_seed, window=window, wave_speed=wave_speed)
            if beta_hat is None:
                if n == m:
                    beta_hat = 0.0
                elif beta_mode == "known":
                    beta_hat = raw.truth["beta_nm"]
                else:
                    beta_hat = estimate_beta_pair(raw, spec, beta_mode, rng_seed)
                raw_first[(n, m)] = raw
            profs.append(_crop(range_compress(raw, beta_hat, spec), t_lo, t_hi))
        if n != m:
            beta_pw[n, m] = beta_hat
        out[(n, m)] = ProfileSet.from_profiles(profs)
    beta_abs = solve_absolute_beta(beta_pw) if N > 1 and np.isfinite(beta_pw).any() else np.zeros(N)
    return Acquisition(out, beta_pw, beta_abs)
