"""Back-projection and profile interpolation: numba kernels against the numpy fallback.

Run with ``python3 benchmarks/bench_kernels.py``. Both paths are checked for
agreement before timing; the numba path is warmed up once so JIT compilation
is excluded.
"""

import time

import numpy as np

from netsar import kernels
from netsar.scene import C_LIGHT


def _best(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def make_case(rng, n_profiles=21, n_samples=4096, n_pixels=200 * 200):
    profiles = rng.standard_normal((n_profiles, n_samples)) + 1j * rng.standard_normal((n_profiles, n_samples))
    dt = 1.25e-9
    t0 = np.full(n_profiles, 20e-9)
    tx = np.column_stack([np.linspace(-0.1, 0.1, n_profiles), np.full(n_profiles, -20.0)])
    rx = tx + np.array([5.0, 0.0])
    side = int(np.sqrt(n_pixels))
    gx, gy = np.meshgrid(np.linspace(-5, 5, side), np.linspace(-5, 5, side))
    pixels = np.column_stack([gx.ravel(), gy.ravel()])
    return profiles, t0, dt, tx, rx, pixels


def bench_backprojection(repeats=3):
    rng = np.random.default_rng(0)
    args = make_case(rng)
    run = lambda flag: kernels.backproject_kernel(*args, 1.0, 0.0, 77e9, C_LIGHT, use_numba=flag)  # noqa: E731
    a, ma = run(True)
    b, mb = run(False)
    assert np.array_equal(ma, mb)
    err = np.max(np.abs(a - b)) / np.max(np.abs(b))
    assert err < 1e-9, err
    t_nb = _best(lambda: run(True), repeats)
    t_np = _best(lambda: run(False), repeats)
    return t_nb, t_np, err


def bench_sampling(repeats=5):
    rng = np.random.default_rng(1)
    samples = rng.standard_normal(8192) + 1j * rng.standard_normal(8192)
    u = rng.uniform(0, 8191, 500_000)
    run = lambda flag: kernels.sample_profile(samples, u, use_numba=flag)  # noqa: E731
    (a, oka), (b, okb) = run(True), run(False)
    assert np.array_equal(oka, okb)
    err = np.max(np.abs(a - b))
    assert err < 1e-9, err
    t_nb = _best(lambda: run(True), repeats)
    t_np = _best(lambda: run(False), repeats)
    return t_nb, t_np, err


def main():
    print(f"numba enabled by default: {kernels.USE_NUMBA}")
    for name, fn in (("backproject 21 x 40000 px", bench_backprojection), ("sample_profile 5e5 pts", bench_sampling)):
        t_nb, t_np, err = fn()
        print(f"{name:28s} numba {t_nb * 1e3:8.1f} ms  numpy {t_np * 1e3:8.1f} ms  speedup {t_np / t_nb:5.1f}x  max diff {err:.1e}")


if __name__ == "__main__":
    main()
