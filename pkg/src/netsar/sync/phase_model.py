"""Parametric phase of calibration targets in back-projected images.

For pair (n, m) and target p, the image phase after focusing with nominal
parameters, relative to the common target phase, is

    delta_phi[nm, p] = 2 pi f_n (1 + beta_bar_n) [tau_bar_nm(x_bar_p) - tau_nm(x_p; s)] + alpha_nm

where tau_nm(x; s) = (|x - s_n| + |x - s_m|) / c uses sensor phase centers and
the barred quantities are the nominal values used during focusing. The
measured quantity is the difference with the reference pair,
Delta_phi[nm, p] = delta_phi[nm, p] - delta_phi[ref, p].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..scene import C_LIGHT


def wrap(phase):
    """Wrap to [-pi, pi)."""
    return (np.asarray(phase) + np.pi) % (2 * np.pi) - np.pi


def pair_list(n_sensors: int, ref_pair=(0, 0)):
    """Measurement rows: every ordered (n, m) except the reference, n-major."""
    ref = tuple(ref_pair)
    return [(n, m) for n in range(n_sensors) for m in range(n_sensors) if (n, m) != ref]


def _units(x, s):
    """Unit vectors from each sensor to each point, shape (N, P, 2), and distances (N, P)."""
    d = x[None, :, :] - s[:, None, :]
    r = np.linalg.norm(d, axis=-1)
    return d / r[..., None], r


@dataclass(frozen=True)
class PhaseModel:
    """Fixed ingredients of the phase model: carriers, nominal beta and geometry, reference pair."""

    carriers: np.ndarray
    beta_bar: np.ndarray
    s_bar: np.ndarray
    x_bar: np.ndarray
    ref_pair: tuple[int, int] = (0, 0)
    wave_speed: float = C_LIGHT

    def __post_init__(self):
        for name in ("carriers", "beta_bar", "s_bar", "x_bar"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        object.__setattr__(self, "ref_pair", tuple(int(v) for v in self.ref_pair))
        n = len(self.carriers)
        if self.s_bar.shape != (n, 2) or self.beta_bar.shape != (n,):
            raise ValueError("carriers, beta_bar and s_bar must describe the same sensors")
        if self.x_bar.ndim != 2 or self.x_bar.shape[1] != 2:
            raise ValueError("x_bar must be (P, 2)")

    @property
    def n_sensors(self) -> int:
        return len(self.carriers)

    @property
    def n_targets(self) -> int:
        return len(self.x_bar)

    @property
    def pairs(self):
        return pair_list(self.n_sensors, self.ref_pair)

    @property
    def gain(self) -> np.ndarray:
        """2 pi f_n (1 + beta_bar_n) / c per Tx sensor."""
        return 2 * np.pi * self.carriers * (1 + self.beta_bar) / self.wave_speed

    def path(self, s, x) -> np.ndarray:
        """Two-way path lengths |x_p - s_n| + |x_p - s_m|, shape (N, N, P)."""
        _, r = _units(np.asarray(x, float), np.asarray(s, float))
        return r[:, None, :] + r[None, :, :]

    def delta_phi_all(self, s, x, alpha) -> np.ndarray:
        """delta_phi for every ordered pair, shape (N, N, P); alpha is the (N, N) pair matrix."""
        k = self.gain[:, None, None]
        nominal = self.path(self.s_bar, self.x_bar)
        return k * (nominal - self.path(s, x)) + np.asarray(alpha, float)[:, :, None]

    def predict(self, s, x, alpha) -> np.ndarray:
        """Modeled Delta_phi, rows in :attr:`pairs` order, shape (N^2 - 1, P); not wrapped."""
        d = self.delta_phi_all(s, x, alpha)
        ref = d[self.ref_pair]
        return np.stack([d[n, m] - ref for n, m in self.pairs])

    def jacobian_s(self, s, x) -> np.ndarray:
        """d predict / d s, shape (N^2 - 1, P, N, 2)."""
        u, _ = _units(np.asarray(x, float), np.asarray(s, float))
        N, P = self.n_sensors, len(u[0])
        full = np.zeros((N, N, P, N, 2))
        k = self.gain
        for n in range(N):
            for m in range(N):
                # d tau / d s_j = -(delta_jn u_n + delta_jm u_m) / c, folded into k
                full[n, m, :, n, :] += k[n] * u[n]
                full[n, m, :, m, :] += k[n] * u[m]
        ref = full[self.ref_pair]
        return np.stack([full[n, m] - ref for n, m in self.pairs])

    def jacobian_x(self, s, x) -> np.ndarray:
        """d predict / d x_p (own target only), shape (N^2 - 1, P, 2)."""
        u, _ = _units(np.asarray(x, float), np.asarray(s, float))
        k = self.gain
        full = -k[:, None, None, None] * (u[:, None, :, :] + u[None, :, :, :])
        ref = full[self.ref_pair]
        return np.stack([full[n, m] - ref for n, m in self.pairs])

    def jacobian_alpha_sensor(self) -> np.ndarray:
        """d predict / d alpha_j for per-sensor offsets (alpha_nm = alpha_n - alpha_m), shape (N^2 - 1, N)."""
        N = self.n_sensors
        rows = []
        rn, rm = self.ref_pair
        for n, m in self.pairs:
            r = np.zeros(N)
            r[n] += 1
            r[m] -= 1
            r[rn] -= 1
            r[rm] += 1
            rows.append(r)
        return np.array(rows)


def alpha_matrix(alpha_sensor) -> np.ndarray:
    """Pair matrix alpha_nm = alpha_n - alpha_m from per-sensor offsets."""
    a = np.asarray(alpha_sensor, dtype=float)
    return a[:, None] - a[None, :]


def cost(measured, predicted) -> float:
    """Mean of cos(measured - predicted): the fine-synchronization objective, 1 at a perfect fit."""
    return float(np.mean(np.cos(np.asarray(measured) - np.asarray(predicted))))
