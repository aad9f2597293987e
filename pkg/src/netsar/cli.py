"""Command-line entry point: ``netsar <command> --config <json> --out <dir> --seed <u64> [--threads N]``.

Exit status 0 on success, 2 for configuration errors and 3 for runtime or
feasibility errors; failures print a JSON error record on stderr and remove
the artifacts written so far. Every artifact is listed with its SHA-256 in
``manifest.json``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io as _io
import json
import logging
import os
import sys
from enum import Enum
from pathlib import Path

import numpy as np

from . import __version__
from .demo import DemoConfig, run_demo
from .detection import DetectionConfig, pcd_curve, roc_curve
from .hcrb import HcrbConfig, ecdf_monte_carlo
from .imaging import ComplexImage, ImagingEstimates, PixelGrid, backproject, find_peaks
from .io import FormatError, scene_from_dict, write_cimg
from .scene import ScenarioParams, random_scenario
from .sync.pipeline import Injection, SyncConfig, closed_loop_trial, run_sync
from .waveform import WaveformSpec
from .wavenumber import resolution_bounds, total_coverage

log = logging.getLogger("netsar")

COMMANDS = ("coverage", "image", "sync", "hcrb", "pcd", "roc", "demo-fig3")
LOG_LEVELS = {"error": logging.ERROR, "warning": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
U64_MAX = 2**64 - 1
FILE_KEYS = ("scene", "injection")  # may be given inline or as a path relative to the config file


class ConfigError(Exception):
    def __init__(self, key: str, message: str):
        super().__init__(message)
        self.key = key


# -- config plumbing ---------------------------------------------------------


def _coerce(value, hint, default, key):
    """Convert a JSON value to the type suggested by the field's annotation/default."""
    if value is None:
        if default is None or "None" in str(hint):
            return None
        raise ConfigError(key, "null is not allowed here")
    if dataclasses.is_dataclass(default):
        return build(type(default), value, key)
    if isinstance(default, Enum):
        try:
            return type(default)(value)
        except ValueError:
            raise ConfigError(key, f"invalid value {value!r}") from None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(key, "expected true or false")
        return value
    if isinstance(default, (int, float)) or "float" in str(hint) or "int" in str(hint):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            if not (isinstance(value, list) and "tuple" in str(hint)):
                raise ConfigError(key, "expected a number")
        is_int = (isinstance(default, int) and not isinstance(default, bool)) or str(hint).split("|")[0].strip() == "int"
        if is_int and isinstance(value, (int, float)):
            if float(value) != int(value):
                raise ConfigError(key, "expected an integer")
            return int(value)
        if isinstance(value, (int, float)):
            return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(key, "expected a string")
        return value
    if isinstance(default, tuple) or "tuple" in str(hint):
        if not isinstance(value, list):
            raise ConfigError(key, "expected a list")
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    return value


def build(cls, data, prefix: str = ""):
    """Instantiate dataclass ``cls`` from a JSON object, rejecting unknown keys and wrong types."""
    where = prefix or "config"
    if not isinstance(data, dict):
        raise ConfigError(where, "expected a JSON object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    hints = {name: str(f.type) for name, f in fields.items()}
    defaults = cls()
    kwargs = {}
    for k, v in data.items():
        key = f"{prefix}.{k}" if prefix else k
        if k not in fields:
            raise ConfigError(key, "unknown key")
        kwargs[k] = _coerce(v, hints[k], getattr(defaults, k), key)
    try:
        return dataclasses.replace(defaults, **kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(where, str(exc)) from None


def _pop(cfg: dict, key: str, default, kind=None):
    if key not in cfg:
        return default
    v = cfg.pop(key)
    if kind is not None and not isinstance(v, kind):
        raise ConfigError(key, f"expected {getattr(kind, '__name__', kind)}")
    return v


def _scene_from_config(cfg: dict, seed: int):
    """Scene from ``scene`` (inline document), ``scenario`` (random, from the seed) or the demo geometry."""
    given = [k for k in ("scene", "scenario", "demo") if k in cfg]
    if len(given) > 1:
        raise ConfigError(given[1], "give only one of scene, scenario, demo")
    if "scene" in cfg:
        try:
            return scene_from_dict(cfg.pop("scene"))
        except FormatError as exc:
            raise ConfigError("scene", str(exc)) from None
        except (ValueError, TypeError) as exc:
            raise ConfigError("scene", str(exc)) from None
    if "scenario" in cfg:
        params = build(ScenarioParams, cfg.pop("scenario"), "scenario")
        return random_scenario(seed, params)
    from .demo import demo_scene

    return demo_scene(build(DemoConfig, cfg.pop("demo", {}), "demo"))


def _finish(cfg: dict):
    if cfg:
        raise ConfigError(next(iter(cfg)), "unknown key")


# -- artifact writer ---------------------------------------------------------


class Artifacts:
    def __init__(self, out_dir: Path):
        self.out = out_dir
        self.created_dir = not out_dir.exists()
        out_dir.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.out / name
        self.files.append(p)
        return p

    def text(self, name: str, content: str):
        self.path(name).write_text(content)

    def json(self, name: str, obj):
        self.text(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def csv(self, name: str, header, rows):
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
        self.text(name, buf.getvalue())

    def cimg(self, name: str, image: ComplexImage):
        write_cimg(image, self.path(name))

    def cleanup(self):
        for p in self.files:
            if p.exists():
                p.unlink()
        if self.created_dir and self.out.exists() and not any(self.out.iterdir()):
            self.out.rmdir()

    def manifest(self, record: dict):
        entries = []
        for p in self.files:
            data = p.read_bytes()
            entries.append({"path": p.name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
        record = dict(record, artifacts=entries)
        self.json("manifest.json", record)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


# -- commands ----------------------------------------------------------------


def cmd_coverage(cfg: dict, art: Artifacts, seed: int, threads: int):
    scene = _scene_from_config(cfg, seed)
    point = np.asarray(_pop(cfg, "point", list(scene.target_positions.mean(axis=0)), list), dtype=float)
    n_freq = int(_pop(cfg, "n_freq", 64, int))
    pairing = _pop(cfg, "pairing", "all", str)
    _finish(cfg)
    if pairing not in ("all", "synthetic"):
        raise ConfigError("pairing", "expected 'all' or 'synthetic'")
    cov = total_coverage(scene, point, n_freq, pairing)
    rows = []
    for t in cov.tiles:
        n, m = t.provenance[:2]
        rows.extend((float(kx), float(ky), n, m) for kx, ky in t.points)
    art.csv("coverage.csv", ("k_x", "k_y", "n", "m"), rows)
    wx, wy = cov.widths()
    rx, ry = resolution_bounds(cov)
    art.json("coverage_summary.json", {"dkx_width": wx, "dky_width": wy, "rho_x": rx, "rho_y": ry})


def cmd_image(cfg: dict, art: Artifacts, seed: int, threads: int):
    scene = _scene_from_config(cfg, seed)
    grid_cfg = _pop(cfg, "grid", {}, dict)
    wf = _pop(cfg, "waveform", {}, dict)
    pairing = _pop(cfg, "pairing", "synthetic", str)
    which = _pop(cfg, "pairs", "all", str)
    write_pairs = _pop(cfg, "write_pairs", False, bool)
    peak_db = float(_pop(cfg, "peak_db", -6.0, (int, float)))
    _finish(cfg)
    unknown = set(grid_cfg) - {"center", "extent", "spacing"}
    if unknown:
        raise ConfigError(f"grid.{sorted(unknown)[0]}", "unknown key")
    center = grid_cfg.get("center", list(scene.target_positions.mean(axis=0)))
    extent = grid_cfg.get("extent", [4.0, 4.0])
    spacing = grid_cfg.get("spacing", [0.05, 0.05])
    try:
        grid = PixelGrid.centered(center, extent, spacing)
    except (ValueError, TypeError) as exc:
        raise ConfigError("grid", str(exc)) from None
    unknown = set(wf) - {"duration", "pulse_kind", "oversampling"}
    if unknown:
        raise ConfigError(f"waveform.{sorted(unknown)[0]}", "unknown key")
    try:
        spec = WaveformSpec(
            scene.sensors[0].bandwidth, float(wf.get("duration", 2e-6)),
            pulse_kind=wf.get("pulse_kind", "flat_spectrum"), oversampling=float(wf.get("oversampling", 4.0)),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError("waveform", str(exc)) from None
    if which not in ("all", "monostatic"):
        raise ConfigError("pairs", "expected 'all' or 'monostatic'")
    N = scene.n_sensors
    pairs = [(n, m) for n in range(N) for m in range(N) if which == "all" or n == m]
    corners = grid.points()[[0, 0, -1, -1], [0, -1, 0, -1]]
    from .acquisition import acquire

    acq = acquire(scene, spec, seed, pairs, pairing, "known", corners)
    est = ImagingEstimates.from_scene(scene, pairing)
    acc = np.zeros(grid.shape, dtype=complex)
    for n, m in pairs:
        im = backproject(acq.profiles[(n, m)], est, grid)
        alpha = scene.sensors[n].clock.alpha - scene.sensors[m].clock.alpha
        acc += im.values * np.exp(1j * alpha)
        if write_pairs:
            art.cimg(f"img_n{n}_m{m}.cimg", im)
    fused = ComplexImage(grid, acc, (-1, -1))
    art.cimg("fused.cimg", fused)
    art.json("image_metrics.json", {"peaks_m": find_peaks(fused, peak_db).tolist(), "pairs": [list(p) for p in pairs]})


def _injection_from(d: dict, n: int) -> Injection:
    unknown = set(d) - {"kappa_s", "beta", "pos_err_m"}
    if unknown:
        raise ConfigError(f"injection.{sorted(unknown)[0]}", "unknown key")
    try:
        return Injection(
            np.asarray(d.get("kappa_s", [0.0] * n), dtype=float),
            np.asarray(d.get("beta", [0.0] * n), dtype=float),
            np.asarray(d.get("pos_err_m", [[0.0, 0.0]] * n), dtype=float),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError("injection", str(exc)) from None


def cmd_sync(cfg: dict, art: Artifacts, seed: int, threads: int):
    sync_cfg = build(SyncConfig, _pop(cfg, "sync", {}, dict), "sync")
    trials = int(_pop(cfg, "trials", 1, int))
    if trials < 1:
        raise ConfigError("trials", "must be >= 1")
    scene_doc = _pop(cfg, "scene", None, dict)
    inj_doc = _pop(cfg, "injection", None, dict)
    _finish(cfg)
    if scene_doc is not None:
        try:
            scene = scene_from_dict(scene_doc)
        except (ValueError, TypeError) as exc:
            raise ConfigError("scene", str(exc)) from None
        inj = _injection_from(inj_doc or {}, scene.n_sensors)
        report, _ = run_sync(scene, inj, sync_cfg, seed)
        art.json("sync_report.json", report.to_dict())
        return
    if inj_doc is not None:
        raise ConfigError("injection", "an explicit injection needs an explicit scene")
    reports = [closed_loop_trial(seed + i, sync_cfg) for i in range(trials)]
    if trials == 1:
        art.json("sync_report.json", reports[0].to_dict())
        return
    art.csv(
        "sync_trials.csv",
        ("seed", "final_cost", "residual_rms_deg", "worst_peak_loss_db", "passed"),
        [(r.seed, float(r.final_cost), r.residual_rms_deg, float(np.max(r.peak_loss_db)), int(r.passed)) for r in reports],
    )
    art.json(
        "sync_report.json",
        {"trials": trials, "pass_rate": float(np.mean([r.passed for r in reports])), "reports": [r.to_dict() for r in reports]},
    )


def cmd_hcrb(cfg: dict, art: Artifacts, seed: int, threads: int):
    hc = build(HcrbConfig, cfg, "")
    res = ecdf_monte_carlo(hc, seed)
    s, F = res.table()
    art.csv("ecdf.csv", ("sigma_deg", "cdf"), zip(map(float, s), map(float, F)))
    art.json("summary.json", dict(res.quantiles(), retries=int(res.retries), trials=hc.trials))


def _detection_args(cfg: dict, extra: dict):
    vals = {}
    for k, (default, kind) in extra.items():
        vals[k] = _pop(cfg, k, default, kind)
    return build(DetectionConfig, cfg, ""), vals


def cmd_pcd(cfg: dict, art: Artifacts, seed: int, threads: int):
    dc, v = _detection_args(
        cfg,
        {"dx_grid": ([0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0], list), "U_values": (None, list), "modes": (["known", "unknown"], list)},
    )
    for m in v["modes"]:
        if m not in ("known", "unknown"):
            raise ConfigError("modes", f"unknown mode {m!r}")
    rows = pcd_curve(dc, v["dx_grid"], seed, v["U_values"], tuple(v["modes"]), threads)
    art.csv("pcd.csv", ("dx_norm", "U", "mode", "pcd", "sigma_deg"), [(r.dx_norm, r.U, r.mode, r.pcd, r.sigma_deg) for r in rows])


def cmd_roc(cfg: dict, art: Artifacts, seed: int, threads: int):
    dc, v = _detection_args(cfg, {"dx12": (1.0, (int, float)), "U_values": (None, list), "mode": ("unknown", str)})
    if v["mode"] not in ("known", "unknown"):
        raise ConfigError("mode", f"unknown mode {v['mode']!r}")
    rows = roc_curve(dc, float(v["dx12"]), seed, v["U_values"], v["mode"], threads=threads)
    art.csv("roc.csv", ("pfa", "pcd", "U"), [(r.pfa, r.pcd, r.U) for r in rows])


def cmd_demo(cfg: dict, art: Artifacts, seed: int, threads: int):
    dc = build(DemoConfig, cfg, "")
    res = run_demo(dc, seed)
    art.cimg("single.cimg", res.single)
    art.cimg("fused.cimg", res.fused)
    art.json("metrics.json", res.metrics())


HANDLERS = {
    "coverage": cmd_coverage,
    "image": cmd_image,
    "sync": cmd_sync,
    "hcrb": cmd_hcrb,
    "pcd": cmd_pcd,
    "roc": cmd_roc,
    "demo-fig3": cmd_demo,
}


# -- entry point ---------------------------------------------------------------


def _error(kind: str, message: str, key: str | None = None) -> dict:
    rec = {"error": kind, "message": message}
    if key is not None:
        rec["key"] = key
    return rec


def _parse_seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError("seed must be an integer") from None
    if not 0 <= v <= U64_MAX:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _parser():
    p = argparse.ArgumentParser(prog="netsar", description="Networked coherent radar imaging experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON configuration file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=_parse_seed, default=0, help="unsigned 64-bit seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    p.add_argument("--version", action="version", version=f"netsar {__version__}")
    return p


def _load_json(path: Path, key: str):
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(key, f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(key, f"malformed JSON: {exc}") from None


def _setup_logging():
    level = os.environ.get("NETSAR_LOG", "error").strip().lower()
    if level not in LOG_LEVELS:
        raise ConfigError("NETSAR_LOG", f"expected one of {sorted(LOG_LEVELS)}")
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    log.setLevel(LOG_LEVELS[level])


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        if exc.code in (0, None):
            return 0
        print(json.dumps(_error("config", "invalid command line", "argv")), file=sys.stderr)
        return 2

    art = None
    try:
        _setup_logging()
        if args.threads < 1:
            raise ConfigError("threads", "must be >= 1")
        cfg = _load_json(Path(args.config), "config")
        if not isinstance(cfg, dict):
            raise ConfigError("config", "top level must be a JSON object")
        for key in FILE_KEYS:
            if isinstance(cfg.get(key), str):
                cfg[key] = _load_json(Path(args.config).parent / cfg[key], key)
        echo = json.loads(json.dumps(cfg))
        art = Artifacts(Path(args.out))
        HANDLERS[args.command](cfg, art, args.seed, args.threads)
        art.manifest(
            {
                "command": args.command,
                "config_path": str(args.config),
                "config": echo,
                "out_dir": str(args.out),
                "seed": args.seed,
                "threads": args.threads,
                "version": __version__,
            }
        )
        return 0
    except ConfigError as exc:
        if art is not None:
            art.cleanup()
        print(json.dumps(_error("config", str(exc), exc.key)), file=sys.stderr)
        return 2
    except Exception as exc:  # runtime and feasibility failures
        log.debug("run failed", exc_info=True)
        if art is not None:
            art.cleanup()
        print(json.dumps(_error("runtime", f"{type(exc).__name__}: {exc}")), file=sys.stderr)
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
