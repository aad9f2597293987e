"""Integer ambiguity resolution for wrapped linear phase models.

Wrapped phases y = A z - 2 pi K + noise are fit by choosing the integer cycle
counts K and the real unknowns z jointly: z is eliminated under a Gaussian
prior, which leaves a closest-vector problem over K. The lattice basis is
LLL-reduced and the closest vector found by Babai's nearest-plane rule.
"""

from __future__ import annotations

import numpy as np


def lll_reduce(basis, delta: float = 0.99):
    """LLL reduction of the columns of ``basis``; returns (reduced, U) with basis @ U = reduced."""
    B = np.array(basis, dtype=float)
    n = B.shape[1]
    U = np.eye(n, dtype=np.int64)
    if n < 2:
        return B, U
    R = np.linalg.qr(B, mode="r")
    k = 1
    while k < n:
        for j in range(k - 1, -1, -1):
            q = int(np.rint(R[j, k] / R[j, j]))
            if q:
                B[:, k] -= q * B[:, j]
                U[:, k] -= q * U[:, j]
                R[:, k] -= q * R[:, j]
        mu = R[k - 1, k] / R[k - 1, k - 1]
        if R[k, k] ** 2 >= (delta - mu**2) * R[k - 1, k - 1] ** 2:
            k += 1
        else:
            B[:, [k - 1, k]] = B[:, [k, k - 1]]
            U[:, [k - 1, k]] = U[:, [k, k - 1]]
            R = np.linalg.qr(B, mode="r")
            k = max(k - 1, 1)
    return B, U


def nearest_plane(basis, target) -> np.ndarray:
    """Integer c with basis @ c close to ``target`` (Babai's nearest-plane rule)."""
    Q, R = np.linalg.qr(np.asarray(basis, dtype=float))
    y = Q.T @ np.asarray(target, dtype=float)
    n = R.shape[1]
    c = np.zeros(n)
    for i in range(n - 1, -1, -1):
        c[i] = np.rint((y[i] - R[i, i + 1 :] @ c[i + 1 :]) / R[i, i])
    return c.astype(np.int64)


class WrappedLinearSolver:
    """Prior-regularized fit of y (wrapped, radians) = A z - 2 pi K + noise.

    ``sigma`` is the phase noise (radians) and ``prior_std`` the per-column
    standard deviation of z. The lattice reduction depends only on A and the
    weights, so one solver serves many right-hand sides.
    """

    def __init__(self, A, sigma: float, prior_std):
        A = np.asarray(A, dtype=float)
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        prior = np.broadcast_to(np.asarray(prior_std, dtype=float), (A.shape[1],))
        if np.any(prior <= 0):
            raise ValueError("prior standard deviations must be positive")
        self.A = A
        Bc = A / (2 * np.pi)
        w = 1.0 / (sigma / (2 * np.pi)) ** 2
        self._gain = np.linalg.solve(w * Bc.T @ Bc + np.diag(prior**-2.0), w * Bc.T)  # z = gain @ cycles
        G = w * (np.eye(len(A)) - Bc @ self._gain)
        G = 0.5 * (G + G.T)
        self._L = np.linalg.cholesky(G).T
        self._reduced, self._U = lll_reduce(self._L)

    def solve(self, y):
        """(z, K) for wrapped observations ``y``; A z matches y + 2 pi K."""
        t = (np.asarray(y, dtype=float) + np.pi) % (2 * np.pi) - np.pi
        t = t / (2 * np.pi)
        K = self._U @ nearest_plane(self._reduced, -self._L @ t)
        return self._gain @ (t + K), K
