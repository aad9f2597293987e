"""File formats: scene JSON, binary complex images (.cimg) and range profiles (.cpx).

Binary files start with a one-line JSON header followed by little-endian
float32 interleaved (re, im) samples.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .imaging import ComplexImage, PixelGrid
from .scene import ClockModel, Scene, Sensor, Target
from .waveform import RangeProfile

_LE_C64 = np.dtype("<c8")


class FormatError(ValueError):
    """Raised for malformed files or scene documents."""


def _need(d: dict, key: str, where: str):
    if not isinstance(d, dict) or key not in d:
        raise FormatError(f"missing key '{key}' in {where}")
    return d[key]


def scene_to_dict(scene: Scene) -> dict:
    return {
        "sensors": [
            {
                "id": int(s.id),
                "center": [float(v) for v in s.phase_center],
                "orientation": float(s.orientation),
                "elements": [[float(a), float(b)] for a, b in s.element_offsets],
                "carrier_hz": float(s.carrier),
                "bandwidth_hz": float(s.bandwidth),
                "clock": {"kappa_s": float(s.clock.kappa), "beta": float(s.clock.beta), "alpha_rad": float(s.clock.alpha)},
            }
            for s in scene.sensors
        ],
        "targets": [
            {"pos": [float(v) for v in t.position], "magnitude": float(t.magnitude), "phase_rad": float(t.phase)}
            for t in scene.targets
        ],
        "noise_psd": float(scene.noise_psd),
    }


def scene_from_dict(d: dict) -> Scene:
    sensors = []
    for i, s in enumerate(_need(d, "sensors", "scene")):
        where = f"sensors[{i}]"
        clock = s.get("clock", {}) if isinstance(s, dict) else {}
        sensors.append(
            Sensor(
                id=int(_need(s, "id", where)),
                phase_center=np.array(_need(s, "center", where), dtype=float),
                orientation=float(s.get("orientation", 0.0)),
                element_offsets=np.array(s.get("elements", [[0.0, 0.0]]), dtype=float),
                carrier=float(_need(s, "carrier_hz", where)),
                bandwidth=float(_need(s, "bandwidth_hz", where)),
                clock=ClockModel(
                    float(clock.get("kappa_s", 0.0)), float(clock.get("beta", 0.0)), float(clock.get("alpha_rad", 0.0))
                ),
            )
        )
    targets = []
    for i, t in enumerate(_need(d, "targets", "scene")):
        where = f"targets[{i}]"
        targets.append(
            Target(np.array(_need(t, "pos", where), dtype=float), float(t.get("magnitude", 1.0)), float(t.get("phase_rad", 0.0)))
        )
    return Scene(tuple(sensors), tuple(targets), float(d.get("noise_psd", 0.0)))


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=2))


def load_scene(path) -> Scene:
    return scene_from_dict(json.loads(Path(path).read_text()))


def _write_binary(path, header: dict, values) -> None:
    data = np.ascontiguousarray(values, dtype=_LE_C64).ravel()
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(data.tobytes())


def _read_binary(path):
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError(f"{path}: no header line")
    try:
        header = json.loads(raw[:nl])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: bad header: {exc}") from None
    body = raw[nl + 1 :]
    if len(body) % _LE_C64.itemsize:
        raise FormatError(f"{path}: truncated sample data")
    return header, np.frombuffer(body, dtype=_LE_C64).astype(np.complex128)


def write_cimg(image: ComplexImage, path) -> None:
    g = image.grid
    n, m = image.pair
    header = {"nx": g.nx, "ny": g.ny, "x0": g.x0, "y0": g.y0, "dx": g.dx, "dy": g.dy, "n": int(n), "m": int(m)}
    _write_binary(path, header, image.values)  # (ny, nx) row-major: x fastest


def read_cimg(path) -> ComplexImage:
    h, v = _read_binary(path)
    try:
        grid = PixelGrid(float(h["x0"]), float(h["y0"]), float(h["dx"]), float(h["dy"]), int(h["nx"]), int(h["ny"]))
        pair = (int(h["n"]), int(h["m"]))
    except KeyError as exc:
        raise FormatError(f"{path}: header lacks {exc}") from None
    if v.size != grid.nx * grid.ny:
        raise FormatError(f"{path}: {v.size} samples for a {grid.nx} x {grid.ny} grid")
    return ComplexImage(grid, v.reshape(grid.ny, grid.nx), pair)


def profile_filename(pair) -> str:
    n, m, l, k = pair
    return f"rp_n{n}_m{m}_l{l}_k{k}.cpx"


def write_profiles(profiles, directory) -> list[Path]:
    """One .cpx file per profile; returns the written paths."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for rp in profiles:
        n, m, l, k = (int(v) for v in rp.pair)
        header = {"n": n, "m": m, "l": l, "k": k, "t0": rp.t0, "dt": rp.dt, "len": len(rp.samples), "beta_hat": rp.beta_hat_applied}
        p = out / profile_filename(rp.pair)
        _write_binary(p, header, rp.samples)
        paths.append(p)
    return paths


def read_profile(path) -> RangeProfile:
    h, v = _read_binary(path)
    try:
        if v.size != int(h["len"]):
            raise FormatError(f"{path}: header says {h['len']} samples, file holds {v.size}")
        pair = (int(h["n"]), int(h["m"]), int(h["l"]), int(h["k"]))
        return RangeProfile(pair, v, float(h["t0"]), float(h["dt"]), float(h["beta_hat"]))
    except KeyError as exc:
        raise FormatError(f"{path}: header lacks {exc}") from None


def read_profiles(directory) -> list[RangeProfile]:
    return [read_profile(p) for p in sorted(Path(directory).glob("rp_n*_m*_l*_k*.cpx"))]
