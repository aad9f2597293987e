"""Raw echo synthesis with clock errors, frequency-offset estimation and range compression."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from enum import Enum

import numpy as np
from scipy.signal import fftconvolve

from .scene import C_LIGHT, Scene, element_positions, pair_offsets, tof


class PulseKind(str, Enum):
    FLAT_SPECTRUM = "flat_spectrum"
    LINEAR_CHIRP = "linear_chirp"


class WindowTooShortError(ValueError):
    """An echo would be truncated by the requested time window."""


class LowSNRError(RuntimeError):
    """No echo clears the SNR floor for frequency-offset estimation."""


class DisconnectedGraphError(ValueError):
    """The available pairwise estimates do not connect every sensor."""


@dataclass(frozen=True)
class WaveformSpec:
    bandwidth: float
    duration: float
    energy: float | None = None
    sample_rate: float | None = None
    pulse_kind: PulseKind = PulseKind.FLAT_SPECTRUM
    oversampling: float = 4.0

    def __post_init__(self):
        object.__setattr__(self, "pulse_kind", PulseKind(self.pulse_kind))
        if self.energy is None:
            object.__setattr__(self, "energy", self.duration)
        if self.sample_rate is None:
            if self.oversampling < 1:
                raise ValueError("oversampling must be >= 1")
            object.__setattr__(self, "sample_rate", self.oversampling * self.bandwidth)
        if self.sample_rate < 2 * self.bandwidth:
            raise ValueError("sample_rate must be at least twice the bandwidth")
        if self.duration * self.bandwidth < 1:
            raise ValueError("duration * bandwidth must be >= 1")
        if self.energy <= 0:
            raise ValueError("energy must be positive")

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def half_length(self) -> int:
        return int(np.floor(self.duration / 2 * self.sample_rate))

    def pulse_at(self, t):
        """Baseband transmit pulse g_Tx(t) (unnormalized), zero outside |t| <= T/2."""
        t = np.asarray(t, dtype=float)
        if self.pulse_kind is PulseKind.FLAT_SPECTRUM:
            g = np.sinc(self.bandwidth * t).astype(complex)
        else:
            g = np.exp(1j * np.pi * self.bandwidth / self.duration * t**2)
        return np.where(np.abs(t) <= self.duration / 2, g, 0.0) * self._scale

    @cached_property
    def _scale(self) -> float:
        j = np.arange(-self.half_length, self.half_length + 1) * self.dt
        if self.pulse_kind is PulseKind.FLAT_SPECTRUM:
            g = np.sinc(self.bandwidth * j)
        else:
            g = np.ones_like(j)
        return float(np.sqrt(self.energy / (np.sum(np.abs(g) ** 2) * self.dt)))

    def pulse(self) -> np.ndarray:
        """Sampled pulse on the symmetric grid k*dt, |k| <= half_length, with sum |g|^2 dt = energy."""
        j = np.arange(-self.half_length, self.half_length + 1) * self.dt
        return self.pulse_at(j)


@dataclass(frozen=True)
class RawSignal:
    pair: tuple[int, int, int, int]
    samples: np.ndarray
    t0: float
    dt: float
    carrier: float
    truth: dict = field(default_factory=dict, compare=False)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(len(self.samples)) * self.dt


@dataclass(frozen=True)
class RangeProfile:
    pair: tuple[int, int, int, int]
    samples: np.ndarray
    t0: float
    dt: float
    beta_hat_applied: float
    carrier: float = 0.0

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(len(self.samples)) * self.dt


def pair_seed(seed: int, pair) -> np.random.Generator:
    """Generator for one (n, m, l, k) pair, independent of processing order."""
    return np.random.default_rng([int(seed), *map(int, pair)])


def _echo_params(scene: Scene, pair, wave_speed):
    n, m, l, k = pair
    tx_s, rx_s = scene.sensors[n], scene.sensors[m]
    tx = element_positions(tx_s)[l]
    rx = element_positions(rx_s)[k]
    kappa_nm, beta_nm, alpha_nm = pair_offsets(tx_s.clock, rx_s.clock)
    taus = tof(tx, rx, scene.target_positions, wave_speed)
    t_app = (1.0 + tx_s.clock.beta) * taus + kappa_nm
    return tx_s, taus, t_app, kappa_nm, beta_nm, alpha_nm


def echo_window(scene: Scene, pairs, spec: WaveformSpec, margin: float | None = None, wave_speed=C_LIGHT):
    """Time window (start, stop) covering every target echo of the given pairs."""
    if margin is None:
        margin = 32 * spec.dt
    lo, hi = np.inf, -np.inf
    for pair in pairs:
        t_app = _echo_params(scene, pair, wave_speed)[2]
        lo = min(lo, t_app.min())
        hi = max(hi, t_app.max())
    half = spec.duration / 2 * (1 + 1e-5)
    return lo - half - margin, hi + half + margin


def synthesize_rx(
    scene: Scene,
    pair,
    spec: WaveformSpec,
    rng_seed: int,
    window: tuple[float, float] | None = None,
    wave_speed: float = C_LIGHT,
) -> RawSignal:
    """Baseband echo at Rx element k of sensor m for Tx element l of sensor n.

    Each target contributes rho e^{-j theta} g_Tx((1 + beta_nm)(t - t_a)) times
    e^{j[2 pi f_n beta_nm t - 2 pi f_n (1 + beta_n) tau + alpha_nm]}, with
    t_a = (1 + beta_n) tau + kappa_nm the apparent delay. Noise is circular
    white Gaussian with per-sample variance noise_psd * sample_rate.
    """
    n, m, l, k = pair = tuple(int(v) for v in pair)
    if not (0 <= n < scene.n_sensors and 0 <= m < scene.n_sensors):
        raise IndexError(f"sensor index out of range in pair {pair}")
    if not (0 <= l < scene.sensors[n].n_elements and 0 <= k < scene.sensors[m].n_elements):
        raise IndexError(f"element index out of range in pair {pair}")
    tx_s, taus, t_app, kappa_nm, beta_nm, alpha_nm = _echo_params(scene, pair, wave_speed)
    if window is None:
        window = echo_window(scene, [pair], spec, wave_speed=wave_speed)
    start, stop = window
    half = spec.duration / 2 / (1 + min(beta_nm, 0.0))
    mags = np.array([t.magnitude for t in scene.targets])
    live = mags > 0
    if np.any(t_app[live] - half < start) or np.any(t_app[live] + half > stop):
        raise WindowTooShortError(f"window [{start:.4g}, {stop:.4g}] s truncates an echo of pair {pair}")

    dt = spec.dt
    n_samp = int(np.floor((stop - start) / dt)) + 1
    t = start + np.arange(n_samp) * dt
    f = tx_s.carrier
    y = np.zeros(n_samp, dtype=complex)
    for q, target in enumerate(scene.targets):
        if target.magnitude == 0:
            continue
        i_lo = max(int(np.floor((t_app[q] - half - start) / dt)) - 1, 0)
        i_hi = min(int(np.ceil((t_app[q] + half - start) / dt)) + 2, n_samp)
        tt = t[i_lo:i_hi]
        env = spec.pulse_at((1.0 + beta_nm) * (tt - t_app[q]))
        phase = 2 * np.pi * f * beta_nm * tt - 2 * np.pi * f * (1 + tx_s.clock.beta) * taus[q] + alpha_nm
        y[i_lo:i_hi] += target.magnitude * np.exp(-1j * target.phase) * env * np.exp(1j * phase)

    if scene.noise_psd > 0:
        rng = pair_seed(rng_seed, pair)
        sigma = np.sqrt(scene.noise_psd * spec.sample_rate / 2)
        y += sigma * (rng.standard_normal(n_samp) + 1j * rng.standard_normal(n_samp))

    truth = {"beta_nm": beta_nm, "kappa_nm": kappa_nm, "alpha_nm": alpha_nm, "t_app": t_app, "tof": taus}
    return RawSignal(pair, y, start, dt, f, truth)


def matched_filter(samples: np.ndarray, spec: WaveformSpec) -> np.ndarray:
    """Correlate with the transmit pulse on the input time grid, normalized so a unit echo peaks at 1."""
    g = spec.pulse()
    full = fftconvolve(samples, np.conj(g[::-1]))
    j = spec.half_length
    return full[j : j + len(samples)] * (1.0 / np.sum(np.abs(g) ** 2))


def range_compress(raw: RawSignal, beta_hat: float, spec: WaveformSpec) -> RangeProfile:
    """Remove the residual carrier ramp exp(j 2 pi f_n beta_hat t), then matched-filter."""
    ramp = np.exp(-2j * np.pi * raw.carrier * beta_hat * raw.times)
    y = matched_filter(raw.samples * ramp, spec)
    return RangeProfile(raw.pair, y, raw.t0, raw.dt, float(beta_hat), raw.carrier)


def _noise_floor(y):
    # median of |y|^2 for circular Gaussian noise is sigma^2 ln 2
    return np.median(np.abs(y) ** 2) / np.log(2)


def estimate_beta_pair(
    raw: RawSignal,
    spec: WaveformSpec,
    mode: str = "signal",
    rng_seed: int = 0,
    snr_floor_db: float = 10.0,
) -> float:
    """Normalized frequency offset beta_nm of one raw echo.

    ``signal`` mode locates the strongest echo, strips the pulse modulation
    (multiplying by the conjugate pulse and squaring to remove the sign flips of
    a sinc), and reads the slope of the remaining carrier ramp from the
    lag-one phasor product. ``surrogate`` mode returns the true offset plus a
    Gaussian error of standard deviation 1/(f_n T).
    """
    if mode == "surrogate":
        if "beta_nm" not in raw.truth:
            raise ValueError("surrogate mode needs a synthesized signal carrying its true offset")
        rng = pair_seed(rng_seed, raw.pair)
        return float(raw.truth["beta_nm"] + rng.normal(0.0, 1.0 / (raw.carrier * spec.duration)))
    if mode != "signal":
        raise ValueError(f"unknown mode {mode!r}")
    if spec.pulse_kind is not PulseKind.FLAT_SPECTRUM:
        # a chirp's matched-filter peak moves with Doppler so that dechirping
        # about it cancels the ramp exactly (range-Doppler coupling)
        raise ValueError("signal-mode estimation needs a flat_spectrum pulse")

    mf = np.abs(matched_filter(raw.samples, spec))
    i = int(np.argmax(mf))
    floor = _noise_floor(mf)
    if floor > 0 and mf[i] ** 2 / floor < 10 ** (snr_floor_db / 10):
        raise LowSNRError(f"strongest echo is below the {snr_floor_db} dB floor")
    if 0 < i < len(mf) - 1:
        a, b, c = mf[i - 1], mf[i], mf[i + 1]
        den = a - 2 * b + c
        frac = 0.5 * (a - c) / den if den != 0 else 0.0
    else:
        frac = 0.0
    t_peak = raw.t0 + (i + frac) * raw.dt
    t = raw.times
    g = spec.pulse_at(t - t_peak)
    z = raw.samples * np.conj(g)
    s = z * z
    r = np.sum(s[1:] * np.conj(s[:-1]))
    return float(np.angle(r) / (2 * 2 * np.pi * raw.carrier * raw.dt))


def solve_absolute_beta(pairwise, anchor: int = 0) -> np.ndarray:
    """Per-sensor offsets from pairwise beta_nm = beta_m - beta_n by least squares.

    ``pairwise[n, m]`` holds the estimate for Tx n / Rx m; NaN marks a missing
    pair and the diagonal is ignored. The anchor sensor is pinned to zero so the
    result equals the truth up to one common shift.
    """
    B = np.asarray(pairwise, dtype=float)
    n_s = B.shape[0]
    if B.shape != (n_s, n_s):
        raise ValueError("pairwise must be square")
    rows, rhs = [], []
    for n in range(n_s):
        for m in range(n_s):
            if n != m and np.isfinite(B[n, m]):
                r = np.zeros(n_s)
                r[m], r[n] = 1.0, -1.0
                rows.append(r)
                rhs.append(B[n, m])
    free = [i for i in range(n_s) if i != anchor]
    if n_s == 1:
        return np.zeros(1)
    if not rows:
        raise DisconnectedGraphError("no pairwise estimates available")
    A = np.array(rows)
    # connectivity check on the undirected graph of available pairs
    adj = np.abs(A).T @ np.abs(A) > 0
    seen = {anchor}
    frontier = [anchor]
    while frontier:
        i = frontier.pop()
        for j in np.flatnonzero(adj[i]):
            if j not in seen:
                seen.add(int(j))
                frontier.append(int(j))
    if len(seen) != n_s:
        raise DisconnectedGraphError(f"sensors {sorted(set(range(n_s)) - seen)} are not connected to the anchor")
    sol, *_ = np.linalg.lstsq(A[:, free], np.array(rhs), rcond=None)
    out = np.zeros(n_s)
    out[free] = sol
    return out
