import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from netsar.demo import DemoConfig, demo_scene
from netsar.scene import C_LIGHT, Scene, Sensor, Target, fdm_carriers, linear_aperture
from netsar.wavenumber import (
    BandAllocation,
    CoverageSet,
    DegenerateGeometryError,
    pair_coverage,
    resolution_along,
    resolution_bounds,
    steering_matrix,
    tile,
    total_coverage,
    wavevectors,
)

F0 = 77e9
B = 100e6
K0 = 2 * np.pi * F0 / C_LIGHT


def _scene(centers, n_el=1, aperture=0.0, carriers=None):
    carriers = carriers if carriers is not None else [F0] * len(centers)
    offs = linear_aperture(n_el, aperture)
    sensors = tuple(Sensor(i, np.array(c, float), 0.0, offs, f, B) for i, (c, f) in enumerate(zip(centers, carriers)))
    return Scene(sensors, (Target(np.zeros(2)),))


def test_monostatic_wavevector():
    _, _, k = wavevectors([0, -50], [0, -50], [0, 0], F0)
    assert K0 == pytest.approx(1613.6, abs=0.3)
    np.testing.assert_allclose(k, [0, 2 * K0], rtol=1e-14)


def test_bistatic_right_angle():
    # Tx and Rx seen 90 degrees apart from the point
    _, _, k = wavevectors([0, -50], [-50, 0], [0, 0], F0)
    assert np.linalg.norm(k) == pytest.approx(np.sqrt(2) * K0, rel=1e-14)


def test_wavevector_scales_with_frequency():
    _, _, a = wavevectors([3, -40], [-7, -45], [1, 2], F0)
    _, _, b = wavevectors([3, -40], [-7, -45], [1, 2], F0 + 1e9)
    np.testing.assert_allclose(b, a * (1 + 1e9 / F0), rtol=1e-14)


def test_tile_monostatic_span():
    t = tile([0, -50], [0, -50], [0, 0], F0, B)
    span = t.points[:, 1].max() - t.points[:, 1].min()
    assert span == pytest.approx(4 * np.pi * B / C_LIGHT, rel=1e-12)
    assert span == pytest.approx(4.19, abs=0.01)
    np.testing.assert_allclose(t.points[:, 0], 0, atol=1e-9)


def test_tile_zero_bandwidth_is_a_point():
    t = tile([0, -50], [10, -50], [0, 0], F0, 0.0)
    assert np.ptp(t.points, axis=0).max() == 0


def test_tile_reciprocity():
    a = tile([0, -50], [10, -45], [1, 1], F0, B)
    b = tile([10, -45], [0, -50], [1, 1], F0, B)
    np.testing.assert_allclose(a.points, b.points, rtol=1e-14)


def test_tile_endpoints_match_wavevectors():
    t = tile([2, -30], [-9, -35], [1, 4], F0, B, n_freq=17)
    for f, row in ((F0 - B / 2, 0), (F0 + B / 2, -1)):
        np.testing.assert_allclose(t.points[row], wavevectors([2, -30], [-9, -35], [1, 4], f)[2], rtol=1e-13)


def test_pair_coverage_single_element_equals_tile():
    sc = _scene([[0, -50]])
    cov = pair_coverage(sc, 0, 0, [0, 0])
    np.testing.assert_allclose(cov.points, tile([0, -50], [0, -50], [0, 0], F0, B).points)


def test_pair_coverage_aperture_growth():
    # odd element counts keep the center element, so the union contains the single tile
    one = pair_coverage(_scene([[0, -50]]), 0, 0, [0, 0]).points
    for n_el in (3, 5):
        pts = pair_coverage(_scene([[0, -50]], n_el, 0.2), 0, 0, [0, 0]).points
        assert np.all(pts.min(axis=0) <= one.min(axis=0) + 1e-9)
        assert np.all(pts.max(axis=0) >= one.max(axis=0) - 1e-9)


def test_pair_coverage_brute_force():
    sc = _scene([[0, -50], [20, -45]], 4, 0.2, carriers=fdm_carriers(2, F0, B))
    cov = pair_coverage(sc, 0, 1, [1, 1], n_freq=8)
    tx = sc.sensors[0].phase_center + linear_aperture(4, 0.2)
    rx = sc.sensors[1].phase_center + linear_aperture(4, 0.2)
    ref = np.concatenate([tile(a, b, [1, 1], sc.sensors[0].carrier, B, 8).points for a in tx for b in rx])
    np.testing.assert_allclose(np.sort(cov.points, axis=0), np.sort(ref, axis=0), rtol=1e-14)


def test_total_coverage_single_sensor():
    sc = _scene([[0, -50]], 3, 0.1)
    np.testing.assert_allclose(total_coverage(sc, [0, 0]).points, pair_coverage(sc, 0, 0, [0, 0]).points)


def test_demo_scene_coverage_wider_than_any_tile():
    cov = total_coverage(demo_scene(DemoConfig()), [0, 0], n_freq=8, pairing="synthetic")
    assert len(cov.pairs) == 36
    wide = cov.widths()[0]
    per_tile = max(np.ptp(t.points[:, 0]) for t in cov.tiles)
    assert wide > per_tile


def test_fdm_monostatic_tiles_radially_disjoint():
    carriers = fdm_carriers(3, F0, B)
    sc = _scene([[0, -50]] * 3, carriers=carriers)
    radii = [np.linalg.norm(pair_coverage(sc, n, n, [0, 0]).points, axis=1) for n in range(3)]
    for a, b in zip(radii, radii[1:]):
        assert a.max() <= b.min() + 1e-9


def test_resolution_monostatic():
    sc = _scene([[0, -50]])
    rho = resolution_along(pair_coverage(sc, 0, 0, [0, 0]), [0, 1])
    assert rho == pytest.approx(C_LIGHT / (2 * B), rel=1e-12)
    assert rho == pytest.approx(1.5, abs=0.01)
    with pytest.raises(DegenerateGeometryError):
        resolution_bounds(pair_coverage(sc, 0, 0, [0, 0]))


def test_resolution_doubling_bandwidth():
    a = tile([0, -50], [0, -50], [0, 0], F0, B)
    b = tile([0, -50], [0, -50], [0, 0], F0, 2 * B)
    ra = resolution_along(CoverageSet((a,), np.zeros(2)), [0, 1])
    rb = resolution_along(CoverageSet((b,), np.zeros(2)), [0, 1])
    assert rb == pytest.approx(ra / 2, rel=1e-12)


def test_resolution_contiguous_tiles_halve():
    a = tile([0, -50], [0, -50], [0, 0], F0, B)
    b = tile([0, -50], [0, -50], [0, 0], F0 + B, B)
    ra = resolution_along(CoverageSet((a,), np.zeros(2)), [0, 1])
    rab = resolution_along(CoverageSet((a, b), np.zeros(2)), [0, 1])
    assert rab == pytest.approx(ra / 2, rel=1e-12)


def test_steering_matrix_counts():
    K = steering_matrix(BandAllocation(np.array([0.0]), B), 1e6)
    assert K.shape == (1, 100)
    K = steering_matrix(BandAllocation(np.arange(4) * B, B), 1e6)
    assert K.shape == (1, 400)
    assert steering_matrix(CoverageSet((), np.zeros(2)), (1.0, 1.0)).shape == (2, 0)


def test_degenerate_point_on_sensor():
    with pytest.raises(DegenerateGeometryError):
        tile([0, 0], [1, 0], [0, 0], F0, B)


angles = st.floats(-np.pi, np.pi)


@given(st.floats(1, 200), angles, st.floats(20e9, 100e9))
def test_monostatic_norm_property(r, ang, f):
    s = r * np.array([np.cos(ang), np.sin(ang)])
    _, _, k = wavevectors(s, s, [0, 0], f)
    assert np.linalg.norm(k) == pytest.approx(2 * 2 * np.pi * f / C_LIGHT, rel=1e-12)


@given(st.lists(st.tuples(st.floats(-60, 60), st.floats(-80, -10)), min_size=2, max_size=5))
def test_resolution_monotone_in_tiles(positions):
    tiles = [tile(p, positions[0], [0.5, 0.5], F0, B, 8) for p in positions]
    prev = None
    for i in range(1, len(tiles) + 1):
        w = CoverageSet(tuple(tiles[:i]), np.zeros(2)).widths()
        if prev is not None:
            assert w[0] >= prev[0] - 1e-9 and w[1] >= prev[1] - 1e-9
        prev = w
