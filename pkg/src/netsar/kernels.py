"""Hot loops: windowed-sinc sampling of range profiles and back-projection.

Each kernel exists twice, a numba version and a vectorized numpy version with
the same arithmetic. :data:`netsar._accel.USE_NUMBA` picks one at import time;
both are exposed so tests and benchmarks can compare them directly.
"""

import numpy as np

from ._accel import USE_NUMBA, njit, prange

N_TAPS = 16
_HALF = N_TAPS // 2


# integer tap offsets m in [-HALF, HALF], tabulated at index m + HALF
_M = np.arange(-_HALF, _HALF + 1)
_COS_M = np.cos(np.pi * _M / _HALF)
_SIN_M = np.sin(np.pi * _M / _HALF)
_SIGN_M = (-1.0) ** _M


@njit(cache=True)
def _sample_one(samples, u):
    # taps lo..lo+15 around floor(u); tap j lies at x_j = e + m_j from the
    # nearest integer (e in [-1/2, 1/2)), so sin(pi x_j) and the Hann cosine
    # follow from one sin/cos of e by angle addition without losing precision
    # when u is close to an integer
    i0 = int(np.floor(u))
    lo = i0 - _HALF + 1
    if lo < 0 or i0 + _HALF >= samples.shape[0]:
        return 0.0 + 0.0j, False
    i_near = int(np.floor(u + 0.5))
    e = u - i_near
    s_e = np.sin(np.pi * e)
    c_w = np.cos(np.pi * e / _HALF)
    s_w = np.sin(np.pi * e / _HALF)
    acc = 0.0 + 0.0j
    for j in range(N_TAPS):
        m = i_near - lo - j
        x = e + m
        if x == 0.0:
            w = 1.0
        else:
            t = m + _HALF
            w = _SIGN_M[t] * s_e / (np.pi * x) * 0.5 * (1.0 + c_w * _COS_M[t] - s_w * _SIN_M[t])
        acc += samples[lo + j] * w
    return acc, True


@njit(cache=True, parallel=True)
def _backproject_numba(profiles, t0, dt, tx, rx, pixels, scale, kappa, carrier, wave_speed):
    n_pix = pixels.shape[0]
    n_prof = profiles.shape[0]
    out = np.zeros(n_pix, dtype=np.complex128)
    missed = np.zeros(n_pix, dtype=np.int64)
    two_pi_f = 2.0 * np.pi * carrier
    for p in prange(n_pix):
        px = pixels[p, 0]
        py = pixels[p, 1]
        acc = 0.0 + 0.0j
        miss = 0
        for j in range(n_prof):
            ax = px - tx[j, 0]
            ay = py - tx[j, 1]
            bx = px - rx[j, 0]
            by = py - rx[j, 1]
            d = np.sqrt(ax * ax + ay * ay) + np.sqrt(bx * bx + by * by)
            tau = scale * d / wave_speed
            u = (tau + kappa - t0[j]) / dt
            val, ok = _sample_one(profiles[j], u)
            if ok:
                ph = two_pi_f * tau
                acc += val * (np.cos(ph) + 1j * np.sin(ph))
            else:
                miss += 1
        out[p] = acc
        missed[p] = miss
    return out, missed


def _tap_weights_numpy(x):
    x = np.asarray(x, dtype=float)
    w = np.sinc(x) * 0.5 * (1.0 + np.cos(np.pi * x / _HALF))
    return np.where(np.abs(x) < _HALF, w, 0.0)


def sample_profile_numpy(samples, u):
    """Windowed-sinc values of ``samples`` at fractional indices ``u``; zero where the taps leave the array."""
    u = np.asarray(u, dtype=float)
    i0 = np.floor(u).astype(np.int64)
    offs = np.arange(-_HALF + 1, _HALF + 1)
    idx = i0[..., None] + offs
    ok = (idx[..., 0] >= 0) & (idx[..., -1] < len(samples))
    safe = np.clip(idx, 0, len(samples) - 1)
    w = _tap_weights_numpy(u[..., None] - idx)
    vals = np.sum(samples[safe] * w, axis=-1)
    return np.where(ok, vals, 0.0), ok


def _backproject_numpy(profiles, t0, dt, tx, rx, pixels, scale, kappa, carrier, wave_speed):
    out = np.zeros(len(pixels), dtype=np.complex128)
    missed = np.zeros(len(pixels), dtype=np.int64)
    two_pi_f = 2.0 * np.pi * carrier
    for j in range(len(profiles)):
        d = np.hypot(pixels[:, 0] - tx[j, 0], pixels[:, 1] - tx[j, 1]) + np.hypot(
            pixels[:, 0] - rx[j, 0], pixels[:, 1] - rx[j, 1]
        )
        tau = scale * d / wave_speed
        vals, ok = sample_profile_numpy(profiles[j], (tau + kappa - t0[j]) / dt)
        out += vals * np.exp(1j * two_pi_f * tau)
        missed += ~ok
    return out, missed


@njit(cache=True)
def _sample_many_numba(samples, u):
    out = np.empty(u.shape[0], dtype=np.complex128)
    ok = np.empty(u.shape[0], dtype=np.bool_)
    for i in range(u.shape[0]):
        out[i], ok[i] = _sample_one(samples, u[i])
    return out, ok


def sample_profile(samples, u, use_numba=None):
    """Dispatching form of :func:`sample_profile_numpy`."""
    u = np.asarray(u, dtype=float)
    if use_numba is None:
        use_numba = USE_NUMBA
    if use_numba:
        vals, ok = _sample_many_numba(np.ascontiguousarray(samples, dtype=np.complex128), u.ravel())
        return vals.reshape(u.shape), ok.reshape(u.shape)
    return sample_profile_numpy(samples, u)


def backproject_kernel(profiles, t0, dt, tx, rx, pixels, scale, kappa, carrier, wave_speed, use_numba=None):
    """Back-project stacked profiles onto ``pixels``.

    ``profiles`` is (n_profiles, n_samples) complex, ``t0`` per profile,
    ``tx``/``rx`` the element positions of each profile. Pixel value is
    sum_j y_j(scale*tau_j + kappa) * exp(+j 2 pi f scale*tau_j), with tau_j the
    nominal two-way delay. Returns (values, per-pixel count of skipped profiles).
    """
    if use_numba is None:
        use_numba = USE_NUMBA
    args = (
        np.ascontiguousarray(profiles, dtype=np.complex128),
        np.ascontiguousarray(t0, dtype=float),
        float(dt),
        np.ascontiguousarray(tx, dtype=float).reshape(-1, 2),
        np.ascontiguousarray(rx, dtype=float).reshape(-1, 2),
        np.ascontiguousarray(pixels, dtype=float).reshape(-1, 2),
        float(scale),
        float(kappa),
        float(carrier),
        float(wave_speed),
    )
    if use_numba:
        return _backproject_numba(*args)
    return _backproject_numpy(*args)
