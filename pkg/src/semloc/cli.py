"""Command-line entry points.

Exit codes: 0 success, 1 usage error, 2 data error (missing or malformed
input), 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

import numpy as np

from .config import apply_section, load_config, section
from .dataset import load_dataset, load_trajectory, save_trajectory
from .errors import NonFinite, SemlocError
from .ipm import AttitudeAngles, CameraIntrinsics, MountCalibration, oracle_sweep
from .localizer import SolverConfig, localize_sequence
from .map_builder import MapBuilderParams, build_semantic_map, load_cloud
from .metrics import Trajectory, compute_report, format_report, format_table
from .semantic_map import map_load, map_save
from .simulator import (Segment, SimulationSpec, benchmark_spec, export_dataset, simulate,
                        stadium_segments)

log = logging.getLogger("semloc")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

SOLVER_ALIASES = {"gate": "lane_gate", "k": "k_line"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# Config helpers
# ---------------------------------------------------------------------------

def camera_from_config(cfg: dict) -> CameraIntrinsics:
    c = section(cfg, "camera")
    try:
        return CameraIntrinsics(float(c["fx"]), float(c["fy"]), float(c["cx"]), float(c["cy"]),
                                float(c.get("s", 0.0)), int(c.get("width", 1280)), int(c.get("height", 720)))
    except KeyError as exc:
        raise ValueError(f"config is missing camera.{exc.args[0]}") from None


def mount_from_config(cfg: dict) -> MountCalibration:
    m = section(cfg, "mount")
    dev = AttitudeAngles(float(m.get("roll", 0.0)), float(m.get("pitch", 0.0)), float(m.get("yaw", 0.0)))
    return MountCalibration.standard(float(m.get("height", 1.5)), float(m.get("forward", 0.0)), dev)


def solver_from_config(cfg: dict) -> SolverConfig:
    return apply_section(SolverConfig(), section(cfg, "solver"), SOLVER_ALIASES)


def _tuple_fields(obj, values: dict) -> dict:
    out = dict(values)
    for f in dataclasses.fields(obj):
        if f.name in out and isinstance(getattr(obj, f.name), tuple):
            raw = out[f.name]
            parts = [p for p in str(raw).replace(",", " ").split() if p]
            conv = int if all(isinstance(v, int) for v in getattr(obj, f.name)) else float
            out[f.name] = tuple(conv(p) for p in parts)
    return out


def simulation_from_config(cfg: dict) -> SimulationSpec:
    sim = section(cfg, "sim")
    preset = sim.pop("preset", "benchmark")
    seed = int(sim.pop("seed", 7))
    if preset == "benchmark":
        spec = benchmark_spec(seed)
    elif preset == "default":
        spec = SimulationSpec(seed=seed)
    else:
        raise ValueError(f"unknown sim.preset {preset!r}")
    w = section(cfg, "world")
    layout = w.pop("layout", None)
    length = w.pop("length", None)
    radius = w.pop("radius", 60.0)
    world = apply_section(spec.world, _tuple_fields(spec.world, w))
    if layout == "stadium":
        world = dataclasses.replace(world, segments=stadium_segments(float(length or 1000.0), float(radius)),
                                    closed=True)
    elif layout == "straight":
        world = dataclasses.replace(world, segments=(Segment(float(length or 100.0)),), closed=False)
    elif layout is not None:
        raise ValueError(f"unknown world.layout {layout!r}")
    noise = apply_section(spec.noise, section(cfg, "noise"))
    spec = dataclasses.replace(spec, world=world, noise=noise, seed=seed)
    if any(k.startswith("camera.") for k in cfg):
        spec = dataclasses.replace(spec, camera=camera_from_config(cfg))
    m = section(cfg, "mount")
    if m:
        dev = AttitudeAngles(float(m.get("roll", spec.deviation.roll)), float(m.get("pitch", spec.deviation.pitch)),
                             float(m.get("yaw", spec.deviation.yaw)))
        spec = dataclasses.replace(spec, height=float(m.get("height", spec.height)), deviation=dev)
    return apply_section(spec, sim)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = load_config(args.spec)
    spec = simulation_from_config(cfg)
    bundle = simulate(spec)
    solver = {k: v for k, v in cfg.items() if k.startswith("solver.")}
    paths = export_dataset(bundle, args.out, solver)
    print(f"simulated {len(bundle.frames)} frames, {len(bundle.map)} lane points, "
          f"{len(bundle.map.poles)} poles -> {args.out}")
    for k, p in paths.items():
        log.info("%s: %s", k, p)
    return EXIT_OK


def cmd_build_map(args) -> int:
    params = MapBuilderParams()
    if args.config:
        params = apply_section(params, section(load_config(args.config), "builder"))
    cloud = load_cloud(args.cloud)
    stats = {}
    m = build_semantic_map(cloud, params, stats)
    map_save(m, args.out)
    print(f"map: {len(m)} lane points, {len(m.poles)} poles (threshold {stats['threshold']}, "
          f"rejected {stats['rejected']})")
    return EXIT_OK


def cmd_localize(args) -> int:
    cfg = load_config(args.config)
    K = camera_from_config(cfg)
    calib = mount_from_config(cfg)
    solver = solver_from_config(cfg)
    m = map_load(args.map)
    frames = load_dataset(args.dataset)
    res = localize_sequence(frames, m, K, calib, solver)
    for p in res.poses:
        if not (np.isfinite(p.translation).all() and np.isfinite(p.rotation).all()):
            raise NonFinite("estimated trajectory contains non-finite values")
    save_trajectory(res.timestamps, res.poses, args.out)
    degraded = sum(d.degraded for d in res.diagnostics)
    print(f"localized {len(res.poses)} frames ({degraded} degraded) -> {args.out}")
    if args.diagnostics:
        with open(args.diagnostics, "w") as fh:
            fields = [f.name for f in dataclasses.fields(res.diagnostics[0])] if res.diagnostics else []
            fh.write("\t".join(fields) + "\n")
            for d in res.diagnostics:
                fh.write("\t".join(str(getattr(d, f)) for f in fields) + "\n")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    est = Trajectory(*load_trajectory(args.est))
    gt = Trajectory(*load_trajectory(args.gt))
    rep = compute_report(est, gt)
    sys.stdout.write(format_table(rep))
    if args.report:
        with open(args.report, "wb") as fh:
            fh.write(format_report(rep).encode("ascii"))
    return EXIT_OK


def cmd_ipm_check(args) -> int:
    cfg = load_config(args.config)
    K = camera_from_config(cfg)
    h = float(section(cfg, "mount").get("height", 1.5))
    ipm = section(cfg, "ipm")
    res = oracle_sweep(K, h, grid_n=int(ipm.get("grid_n", 100)),
                       combined_deg=float(ipm.get("combined_deg", 2.0)))
    for k, v in res.items():
        print(f"{k}\t{v:.6e}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="semloc", description="Monocular semantic localization toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate a synthetic dataset")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("build-map", help="build a semantic map from a labeled cloud")
    s.add_argument("--cloud", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.set_defaults(func=cmd_build_map)

    s = sub.add_parser("localize", help="localize a dataset against a map")
    s.add_argument("--map", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--diagnostics")
    s.set_defaults(func=cmd_localize)

    s = sub.add_parser("evaluate", help="compare an estimate with ground truth")
    s.add_argument("--est", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--report")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("ipm-check", help="run the IPM oracle sweeps")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_ipm_check)
    return p


def cli_main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"semloc: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (NonFinite, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"semloc: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        name = exc.filename if exc.filename is not None else ""
        print(f"semloc: cannot access {name}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_DATA
    except (SemlocError, ValueError, KeyError) as exc:
        print(f"semloc: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
