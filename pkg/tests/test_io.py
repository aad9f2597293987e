import numpy as np
import pytest

from netsar.imaging import ComplexImage, PixelGrid
from netsar.io import (
    FormatError,
    load_scene,
    read_cimg,
    read_profile,
    read_profiles,
    save_scene,
    scene_from_dict,
    write_cimg,
    write_profiles,
)
from netsar.scene import ScenarioParams, random_scenario
from netsar.waveform import RangeProfile


def test_cimg_roundtrip(tmp_path, rng):
    g = PixelGrid(-1.0, 2.0, 0.1, 0.2, 7, 5)
    v = (rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape)).astype(np.complex64)
    write_cimg(ComplexImage(g, v.astype(complex), (2, 3)), tmp_path / "a.cimg")
    back = read_cimg(tmp_path / "a.cimg")
    assert back.grid == g and back.pair == (2, 3)
    np.testing.assert_array_equal(back.values, v)


def test_cimg_layout_is_little_endian_x_fastest(tmp_path):
    g = PixelGrid(0.0, 0.0, 1.0, 1.0, 3, 2)
    v = np.arange(6, dtype=float).reshape(2, 3) + 0j
    write_cimg(ComplexImage(g, v, (0, 0)), tmp_path / "a.cimg")
    raw = (tmp_path / "a.cimg").read_bytes()
    body = raw[raw.index(b"\n") + 1 :]
    assert np.frombuffer(body, "<f4")[::2].tolist() == [0, 1, 2, 3, 4, 5]


def test_profile_roundtrip(tmp_path, rng):
    rps = [
        RangeProfile((0, 1, 2, 3), rng.standard_normal(17) + 1j * rng.standard_normal(17), 1e-7, 2.5e-9, 1e-6),
        RangeProfile((1, 0, 0, 0), rng.standard_normal(9) + 0j, 0.0, 1e-9, 0.0),
    ]
    paths = write_profiles(rps, tmp_path)
    assert paths[0].name == "rp_n0_m1_l2_k3.cpx"
    back = {rp.pair: rp for rp in read_profiles(tmp_path)}
    for rp in rps:
        b = back[rp.pair]
        np.testing.assert_allclose(b.samples, rp.samples, rtol=1e-6, atol=1e-6)
        assert (b.t0, b.dt, b.beta_hat_applied) == (rp.t0, rp.dt, rp.beta_hat_applied)


def test_bad_header(tmp_path):
    p = tmp_path / "x.cimg"
    p.write_bytes(b"not json\n\x00\x00\x00\x00\x00\x00\x00\x00")
    with pytest.raises(FormatError):
        read_cimg(p)
    p.write_bytes(b"no newline at all")
    with pytest.raises(FormatError):
        read_cimg(p)


def test_size_mismatch(tmp_path):
    g = PixelGrid(0.0, 0.0, 1.0, 1.0, 3, 2)
    write_cimg(ComplexImage(g, np.zeros(g.shape, complex), (0, 0)), tmp_path / "a.cimg")
    raw = (tmp_path / "a.cimg").read_bytes()
    (tmp_path / "b.cimg").write_bytes(raw[:-8])
    with pytest.raises(FormatError):
        read_cimg(tmp_path / "b.cimg")
    (tmp_path / "c.cimg").write_bytes(raw[:-3])
    with pytest.raises(FormatError):
        read_cimg(tmp_path / "c.cimg")


def test_profile_length_mismatch(tmp_path):
    rp = RangeProfile((0, 0, 0, 0), np.ones(4, complex), 0.0, 1.0, 0.0)
    (p,) = write_profiles([rp], tmp_path)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(FormatError):
        read_profile(p)


def test_scene_roundtrip(tmp_path):
    scene = random_scenario(4, ScenarioParams())
    save_scene(scene, tmp_path / "s.json")
    back = load_scene(tmp_path / "s.json")
    np.testing.assert_allclose(back.target_positions, scene.target_positions)
    for a, b in zip(back.sensors, scene.sensors):
        np.testing.assert_allclose(a.element_offsets, b.element_offsets)
        assert a.clock == b.clock and a.carrier == b.carrier


def test_scene_missing_key():
    with pytest.raises(FormatError, match="carrier_hz"):
        scene_from_dict({"sensors": [{"id": 0, "center": [0, 0], "bandwidth_hz": 1e8}], "targets": []})
