"""Command-line front end.

Subcommands: simulate, predict, fit-uq, evaluate, entropy, costmap. Settings
come from built-in defaults, then an optional JSON ``--config`` file, then
command-line flags. Failures print one line ``error: <code>: <message>`` to
stderr and exit with the status listed in :data:`EXIT_CODES`.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import costmap as cm
from . import experiments as ex
from . import plots, sim
from .config import SCENARIOS, RunConfig
from .errors import (
    FitError, FormatError, GenerationError, InvalidArgument, ScopeKitError, TableError, Unreachable,
)
from .grid import binarize, export_pgm, read_ogm
from .metrics import average_reports, evaluate_sequence, write_report_csv
from .predict import (
    PREDICTOR_KINDS, PredictionBundle, export_samples, import_samples, make_window, predict_window,
    sample_kinematic, window_indices,
)
from .uq import UqTable, build_table

log = logging.getLogger("scope_kit")

EXIT_CODES = {
    "ok": 0,
    ScopeKitError.code: ScopeKitError.exit_status,
    InvalidArgument.code: InvalidArgument.exit_status,
    FormatError.code: FormatError.exit_status,
    FitError.code: FitError.exit_status,
    GenerationError.code: GenerationError.exit_status,
    TableError.code: TableError.exit_status,
    Unreachable.code: Unreachable.exit_status,
    "io-error": 8,
    "usage": 9,
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--dataset", help="dataset file (newline-delimited records)")
    common.add_argument("--table", help="uncertainty lookup-table file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--horizon", type=int, help="prediction horizon in steps")
    common.add_argument("--samples", type=int, help="samples per horizon for the stochastic predictor")
    common.add_argument("--predictor", choices=PREDICTOR_KINDS)
    common.add_argument("--ospa-p", type=int, dest="ospa_p")
    common.add_argument("--ospa-cutoff", type=float, dest="ospa_cutoff")
    common.add_argument("--threshold", type=float, help="occupancy binarization threshold")
    common.add_argument("--bundles", nargs="+", help="sample-bundle files from an external predictor")

    p = _Parser(prog="scope-kit", description="Stochastic occupancy-grid prediction workbench.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="generate a simulated dataset")
    s.add_argument("--scenario", choices=SCENARIOS)
    s.add_argument("--pedestrians", type=int)
    s.add_argument("--duration", type=float)

    sub.add_parser("predict", parents=[common], help="predict future maps for the last window")
    sub.add_parser("fit-uq", parents=[common], help="fit the uncertainty lookup table")
    e = sub.add_parser("evaluate", parents=[common], help="per-horizon WMSE/SSIM/OSPA report")
    e.add_argument("--stride", type=int)
    e.add_argument("--no-compensation", action="store_true", help="evaluate without ego-motion compensation")
    n = sub.add_parser("entropy", parents=[common], help="entropy against sample count and object count")
    n.add_argument("--scenes", type=int, help="scenes per object count")
    sub.add_parser("costmap", parents=[common], help="costmap layers and planned paths")
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    top = {"seed": args.seed, "dataset": args.dataset, "table": args.table, "out": args.out,
           "ospa_p": args.ospa_p, "ospa_cutoff": args.ospa_cutoff, "threshold": args.threshold,
           "stride": getattr(args, "stride", None), "scenes_per_count": getattr(args, "scenes", None)}
    if getattr(args, "no_compensation", False):
        top["compensate"] = False
    pred = {"kind": args.predictor, "horizon": args.horizon, "samples": args.samples}
    simc = {"scenario": getattr(args, "scenario", None), "pedestrians": getattr(args, "pedestrians", None),
            "duration": getattr(args, "duration", None)}
    predictor = dataclasses.replace(cfg.predictor, **{k: v for k, v in pred.items() if v is not None})
    simcfg = dataclasses.replace(cfg.sim, **{k: v for k, v in simc.items() if v is not None})
    return dataclasses.replace(cfg, predictor=predictor, sim=simcfg, **{k: v for k, v in top.items() if v is not None})


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _records(cfg: RunConfig):
    if not cfg.dataset:
        raise InvalidArgument("--dataset is required")
    return sim.read_dataset(cfg.dataset)


def _table(cfg: RunConfig, required: bool = True) -> Optional[UqTable]:
    if not cfg.table:
        if required:
            raise InvalidArgument("--table is required")
        return None
    return UqTable.load(cfg.table)


def _bundles(paths: Optional[Sequence[str]]) -> List[PredictionBundle]:
    if not paths:
        raise InvalidArgument("the external predictor needs --bundles files")
    return [import_samples(p) for p in paths]


# -- commands ------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, args=None) -> Path:
    rng = np.random.default_rng(cfg.seed)
    s = cfg.sim
    sensor = sim.SensorConfig(noise_sigma=s.noise_sigma)
    if s.scenario == "static":
        world, traj = sim.static_scene(rng), sim.moving_robot_trajectory(rng)
    elif s.scenario == "crowd":
        world, traj = sim.crowd_scene(s.pedestrians, rng), sim.TrajectorySpec(profile=((1.0, 0.0, 0.0),))
    else:
        world, traj = sim.corridor_scene(), sim.TrajectorySpec(profile=((1.0, 0.0, 0.0),))
    records = sim.generate_dataset(world, traj, sensor, seed=int(rng.integers(2**31)), duration=s.duration)
    path = _out(cfg) / "dataset.ndjson"
    sim.write_dataset(records, path)
    return path


def cmd_predict(cfg: RunConfig, args=None) -> Path:
    pc = cfg.predictor
    if pc.kind == "external":
        raise InvalidArgument("external predictions are produced elsewhere and read with --bundles")
    records = _records(cfg)
    idx = window_indices(len(records), pc)
    if not idx:
        raise InvalidArgument(f"dataset of {len(records)} records is too short for one prediction window")
    win = make_window(records, idx[-1], pc)
    if pc.kind == "kinematic" and pc.samples > 1:
        b = sample_kinematic(win.history, win.static_map, pc, np.random.default_rng(cfg.seed))
        bundle = PredictionBundle(b.mean_maps, b.samples, win.frame)
    else:
        bundle = predict_window(win, pc)
    out = _out(cfg)
    export_samples(bundle, out / "prediction.sksb")
    for T, m in enumerate(bundle.mean_maps, start=1):
        export_pgm(m, out / f"mean_T{T:02d}.pgm")
    return out / "prediction.sksb"


def cmd_fit_uq(cfg: RunConfig, args=None) -> Path:
    pc = cfg.predictor
    if pc.kind == "external":
        bundles = _bundles(getattr(args, "bundles", None))
    else:
        pc = dataclasses.replace(pc, kind="kinematic")
        bundles = ex.sampled_bundles(_records(cfg), pc, np.random.default_rng(cfg.seed), cfg.stride)
    if not bundles:
        raise InvalidArgument("no prediction windows to fit")
    table = build_table(bundles, n_horizons=pc.horizon)
    if not table.populated():
        raise TableError("no (bin, horizon) pool had enough values to fit")
    path = _out(cfg) / "uq_table.txt"
    table.save(path)
    return path


def _weights(cfg: RunConfig):
    return None if cfg.weights is None else read_ogm(cfg.weights).cells.astype(float)


def cmd_evaluate(cfg: RunConfig, args=None) -> Path:
    pc = cfg.predictor
    records = _records(cfg)
    kw = dict(threshold=cfg.threshold, cutoff=cfg.ospa_cutoff, p=cfg.ospa_p, weights=_weights(cfg))
    if pc.kind == "external":
        bundles = _bundles(getattr(args, "bundles", None))
        idx = window_indices(len(records), pc, cfg.stride)
        if len(bundles) > len(idx):
            raise InvalidArgument(f"{len(bundles)} bundles but only {len(idx)} windows")
        reports = []
        for t, b in zip(idx, bundles):
            win = make_window(records, t, pc, compensate=cfg.compensate, with_map=False)
            reports.append(evaluate_sequence(b, win.truths, **kw))
    else:
        reports = ex.evaluate_dataset(records, pc, cfg.stride, cfg.compensate, **kw)
    rows = average_reports(reports)
    out = _out(cfg)
    write_report_csv(rows, out / "report.csv")
    label = pc.kind + ("" if cfg.compensate else " (no compensation)")
    for metric in ("wmse", "ssim", "ospa"):
        plots.horizon_curves({label: rows}, metric, out / f"{metric}.png", pc.period)
    return out / "report.csv"


def _write_csv(path: Path, header: Sequence[str], rows: List[Dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([f"{r[h]:.9g}" if isinstance(r[h], float) else r[h] for h in header])


def cmd_entropy(cfg: RunConfig, args=None) -> Path:
    table = _table(cfg)
    pc = dataclasses.replace(cfg.predictor, kind="kinematic")
    T = min(cfg.entropy_horizon, pc.horizon, table.n_horizons)
    rng = np.random.default_rng(cfg.seed)
    if cfg.dataset:
        bundles = ex.sampled_bundles(_records(cfg), pc, rng, cfg.stride)[:4]
    else:
        bundles = ex.sampled_bundles(ex.crowd_records(cfg.sim.pedestrians, rng, pc), pc, rng, pc.horizon)
    if not bundles:
        raise InvalidArgument("no prediction windows for the sample sweep")
    sweep = ex.entropy_vs_samples(table, [b.mean_maps[T - 1] for b in bundles], T, seed=cfg.seed)
    scenes, rho = ex.entropy_vs_objects(table, pc, T, range(1, cfg.max_objects + 1), cfg.scenes_per_count, cfg.seed)
    counts = sorted({r["objects"] for r in scenes})
    means = [{"objects": k, "entropy": float(np.mean([r["entropy"] for r in scenes if r["objects"] == k])),
              "spearman": rho} for k in counts]
    out = _out(cfg)
    _write_csv(out / "entropy_vs_samples.csv", ["samples", "mc_entropy", "quad_entropy"], sweep)
    _write_csv(out / "entropy_vs_objects.csv", ["objects", "entropy", "spearman"], means)
    _write_csv(out / "entropy_scenes.csv", ["objects", "scene", "entropy"], scenes)
    plots.xy_curve([r["samples"] for r in sweep], {"Monte Carlo": [r["mc_entropy"] for r in sweep],
                                                   "quadrature": [r["quad_entropy"] for r in sweep]},
                   out / "entropy_vs_samples.png", "samples M", "entropy (nats/cell)", logx=True)
    plots.xy_curve(counts, {f"T={T}": [m["entropy"] for m in means]}, out / "entropy_vs_objects.png",
                   "pedestrians", "normalised entropy")
    return out / "entropy_vs_objects.csv"


def cmd_costmap(cfg: RunConfig, args=None) -> Path:
    pc = dataclasses.replace(cfg.predictor, kind="kinematic")
    table = _table(cfg, required=False)
    T = min(cfg.entropy_horizon, pc.horizon, table.n_horizons if table is not None else pc.horizon)
    out = _out(cfg)
    if cfg.dataset:
        records = _records(cfg)
        idx = window_indices(len(records), pc)
        if not idx:
            raise InvalidArgument("dataset is too short for one prediction window")
        win = make_window(records, idx[-1], pc)
        static = cm.static_layer(binarize(win.static_map, 0.5))
        if table is not None:
            pred, unc = cm.build_layers(predict_window(win, pc), T, table=table, threshold=cfg.threshold)
        else:
            b = sample_kinematic(win.history, win.static_map, pc, np.random.default_rng(cfg.seed))
            pred, unc = cm.build_layers(b, T, threshold=cfg.threshold)
        spec = static.spec
        start, goal = (spec.height_cells // 2, 0), (spec.height_cells // 2, spec.width_cells - 1)
        p0 = cm.plan_path(cm.merge(static), start, goal)
        p1 = cm.plan_path(cm.merge(static, pred, unc), start, goal)
        marker = None
    else:
        demo = ex.corridor_demo(cfg.seed, T, table, pc)
        static, pred, unc, p0, p1, marker = (demo.static, demo.prediction, demo.uncertainty,
                                             demo.static_path, demo.path, demo.obstacle)
    master = cm.merge(static, pred, unc)
    for name, layer in (("static", static), ("prediction", pred), ("uncertainty", unc), ("master", master)):
        cm.write_costmap_pgm(layer, out / f"{name}.pgm")
    cm.write_path_csv(p0, out / "path_static.csv")
    cm.write_path_csv(p1, out / "path.csv")
    plots.costmap_overlay(master.costs, {"static only": p0.cells, "with prediction": p1.cells},
                          out / "overlay.png", marker)
    return out / "path.csv"


COMMANDS = {
    "simulate": cmd_simulate,
    "predict": cmd_predict,
    "fit-uq": cmd_fit_uq,
    "evaluate": cmd_evaluate,
    "entropy": cmd_entropy,
    "costmap": cmd_costmap,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        result = COMMANDS[args.command](cfg, args)
    except _UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return EXIT_CODES["usage"]
    except ScopeKitError as exc:
        print(f"error: {exc.code}: {' '.join(str(exc).split())}", file=sys.stderr)
        return exc.exit_status
    except OSError as exc:
        print(f"error: io-error: {' '.join(str(exc).split())}", file=sys.stderr)
        return EXIT_CODES["io-error"]
    print(result)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
