"""End-to-end experiment routines shared by the CLI, the scripts and the acceptance tests."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import spearmanr

from . import costmap as cm
from . import sim
from .errors import FitError, InvalidArgument
from .grid import GridSpec, scan_to_ogm
from .metrics import OSPA_CUTOFF, P_FREE, average_reports, evaluate_sequence
from .motion import DataTuple
from .predict import (
    PredictionBundle, PredictorConfig, make_window, predict_window, predicted_objects, sample_kinematic,
    window_indices,
)
from .uq import (
    PARAM_NAMES, DegenerateFitWarning, MixtureParams, UqEntry, UqTable, build_table, collect_pools, entropy_map,
    entropy_mc, fit_mixture, l1_distance, sample_entry, sample_maps,
)

LN2 = math.log(2.0)


# -- evaluation ----------------------------------------------------------------

def evaluate_dataset(records: Sequence[DataTuple], cfg: PredictorConfig, stride: int = 5,
                     compensate: bool = True, spec: GridSpec = GridSpec(), threshold: float = P_FREE,
                     cutoff: float = OSPA_CUTOFF, p: int = 1, weights=None) -> List[List[Dict[str, float]]]:
    """Per-window metric reports for a deterministic predictor over one dataset."""
    needs_map = cfg.kind == "kinematic"
    reports = []
    for t in window_indices(len(records), cfg, stride):
        win = make_window(records, t, cfg, spec, compensate=compensate, with_map=needs_map)
        bundle = predict_window(win, cfg)
        reports.append(evaluate_sequence(bundle, win.truths, threshold, cutoff, p, weights))
    if not reports:
        raise InvalidArgument(f"dataset of {len(records)} records is too short for one prediction window")
    return reports


def ablation(n_sequences: int = 50, seed: int = 0, cfg: Optional[PredictorConfig] = None
             ) -> Tuple[List[Dict[str, float]], List[Dict[str, float]]]:
    """Compensated vs uncompensated persistence on moving-robot static scenes."""
    cfg = cfg or PredictorConfig(kind="persistence")
    rng = np.random.default_rng(seed)
    comp, raw = [], []
    n_ticks = cfg.history_len + cfg.horizon + 1
    for k in range(n_sequences):
        world = sim.static_scene(rng)
        traj = sim.moving_robot_trajectory(rng)
        records = sim.generate_dataset(world, traj, seed=int(rng.integers(2**31)), duration=n_ticks / 10.0)
        t = cfg.history_len
        for flag, out in ((True, comp), (False, raw)):
            win = make_window(records, t, cfg, compensate=flag, with_map=False)
            out.append(evaluate_sequence(predict_window(win, cfg), win.truths))
    return average_reports(comp), average_reports(raw)


# -- uncertainty ---------------------------------------------------------------

def sampled_bundles(records: Sequence[DataTuple], cfg: PredictorConfig, rng: np.random.Generator,
                    stride: int = 5) -> List[PredictionBundle]:
    """Stochastic sample bundles for every ``stride``-th window of a dataset."""
    out = []
    for t in window_indices(len(records), cfg, stride):
        win = make_window(records, t, cfg)
        b = sample_kinematic(win.history, win.static_map, cfg, rng)
        out.append(PredictionBundle(b.mean_maps, b.samples, win.frame))
    return out


def crowd_records(k: int, rng: np.random.Generator, cfg: PredictorConfig,
                  sensor: sim.SensorConfig = sim.SensorConfig()) -> List[DataTuple]:
    """A stationary robot watching ``k`` pedestrians, long enough for one window."""
    world = sim.crowd_scene(k, rng)
    n_ticks = cfg.history_len + cfg.horizon + 1
    return sim.generate_dataset(world, sim.TrajectorySpec(profile=((1.0, 0.0, 0.0),)), sensor,
                                seed=int(rng.integers(2**31)), duration=n_ticks / sensor.rate)


def train_table(seed: int = 0, scenes: int = 16, cfg: Optional[PredictorConfig] = None,
                max_objects: int = 8, horizons: Optional[Sequence[int]] = None, stride: Optional[int] = None
                ) -> UqTable:
    """Fit a lookup table on sampled predictions of random crowd scenes.

    ``horizons`` limits fitting to those horizons (the others stay absent and
    fall back to the nearest fitted one), which saves most of the time when
    only one horizon is studied.
    """
    cfg = cfg or PredictorConfig(kind="kinematic")
    rng = np.random.default_rng(seed)
    bundles = []
    for j in range(scenes):
        records = crowd_records(1 + j % max_objects, rng, cfg)
        bundles += sampled_bundles(records, cfg, rng, stride=stride or cfg.horizon)
    pools = collect_pools(bundles, n_horizons=cfg.horizon)
    if horizons is not None:
        pools = {k: v for k, v in pools.items() if k[1] in set(horizons)}
    return build_table(bundles, n_horizons=cfg.horizon, pools=pools)


def random_mixture(rng: np.random.Generator) -> MixtureParams:
    """A random mixture on [0, 1] with both components inside the unit interval."""
    return MixtureParams(
        w=rng.uniform(0.1, 0.9), a=0.0, b=1.0,
        mu_tn=rng.uniform(0.15, 0.85), sigma_tn=float(np.exp(rng.uniform(np.log(0.02), np.log(0.3)))),
        lam=rng.uniform(-0.9, 0.9),
        mu_sc=rng.uniform(0.15, 0.85), sigma_sc=float(np.exp(rng.uniform(np.log(0.01), np.log(0.2)))),
    )


def fit_recovery(n_draws: int = 20, n_values: int = 50_000, seed: int = 0) -> List[Dict[str, float]]:
    """Fit ``n_draws`` random mixtures from their own inverse-CDF samples; rows carry the L1 error."""
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(n_draws):
        xi = random_mixture(rng)
        values = sample_entry(UqEntry.from_params(xi), n_values, rng)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DegenerateFitWarning)
                l1 = l1_distance(fit_mixture(values), xi)
        except FitError:
            l1 = math.inf
        rows.append({"draw": k, "l1": l1, **{f"true_{n}": v for n, v in zip(PARAM_NAMES, xi.as_array())}})
    return rows


def entropy_vs_samples(table: UqTable, mean_maps: Sequence, T: int, Ms: Sequence[int] = tuple(2**k for k in range(11)),
                       seed: int = 0) -> List[Dict[str, float]]:
    """Monte Carlo entropy per cell against sample count, next to the quadrature value."""
    rng = np.random.default_rng(seed)
    quad = float(np.mean([entropy_map(m, table, T).mean() for m in mean_maps]))
    rows = []
    for M in Ms:
        mc = float(np.mean([entropy_mc(sample_maps(m, table, T, M, rng)) for m in mean_maps]))
        rows.append({"samples": int(M), "mc_entropy": mc, "quad_entropy": quad})
    return rows


def entropy_vs_objects(table: UqTable, cfg: Optional[PredictorConfig] = None, T: int = 5,
                       counts: Sequence[int] = range(1, 9), scenes_per_count: int = 20,
                       seed: int = 0) -> Tuple[List[Dict[str, float]], float]:
    """Mean normalised entropy (fraction of ln 2 per cell) of crowd scenes against pedestrian count.

    Returns per-scene rows and the Spearman rank correlation between count
    and entropy over all scenes.
    """
    cfg = cfg or PredictorConfig(kind="kinematic")
    rng = np.random.default_rng(seed)
    rows = []
    for k in counts:
        for j in range(scenes_per_count):
            records = crowd_records(k, rng, cfg)
            win = make_window(records, cfg.history_len, cfg)
            b = sample_kinematic(win.history, win.static_map, cfg, rng)
            h = entropy_map(b.mean_maps[T - 1], table, T).mean() / LN2
            rows.append({"objects": int(k), "scene": j, "entropy": float(h)})
    return rows, rank_correlation([r["objects"] for r in rows], [r["entropy"] for r in rows])


def rank_correlation(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman's rho; NaN when either input is constant."""
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return float("nan")
    return float(spearmanr(x, y).statistic)


# -- costmap -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CostmapDemo:
    static: cm.CostmapLayer
    prediction: cm.CostmapLayer
    uncertainty: cm.CostmapLayer
    static_path: cm.PathResult
    path: cm.PathResult
    obstacle: Tuple[float, float]  # predicted obstacle centroid (row, col)

    @property
    def master(self) -> cm.MasterCostmap:
        return cm.merge(self.static, self.prediction, self.uncertainty)

    @property
    def clearance_gain(self) -> float:
        return self.path.min_distance(self.obstacle) - self.static_path.min_distance(self.obstacle)

    @property
    def length_ratio(self) -> float:
        return self.path.length / self.static_path.length


def corridor_demo(seed: int = 0, T: int = 5, table: Optional[UqTable] = None,
                  cfg: Optional[PredictorConfig] = None, spec: GridSpec = GridSpec()) -> CostmapDemo:
    """Plan along a corridor with and without the predicted pedestrian's layers.

    The static layer is the known wall map; prediction and uncertainty come
    from the kinematic predictor (with the table, if given, or the sampler's
    spread otherwise) applied to a stationary robot's lidar history.
    """
    cfg = cfg or PredictorConfig(kind="kinematic")
    if not 1 <= T <= cfg.horizon:
        raise InvalidArgument(f"horizon {T} outside 1..{cfg.horizon}")
    rng = np.random.default_rng(seed)
    n_ticks = cfg.history_len + cfg.horizon + 1
    records = sim.generate_dataset(sim.corridor_scene(), sim.TrajectorySpec(profile=((1.0, 0.0, 0.0),)),
                                   seed=int(rng.integers(2**31)), duration=n_ticks / 10.0)
    win = make_window(records, cfg.history_len, cfg, spec)
    walls = sim.future_truth(sim.corridor_scene(pedestrian=None), win.frame)
    static = cm.static_layer(scan_to_ogm(walls, spec))
    if table is not None:
        bundle = predict_window(win, cfg)
        pred, unc = cm.build_layers(bundle, T, table=table)
    else:
        bundle = sample_kinematic(win.history, win.static_map, cfg, rng)
        pred, unc = cm.build_layers(bundle, T)
    objs = predicted_objects(win.history, win.static_map, cfg, T)
    if len(objs) == 0:
        raise InvalidArgument("no moving obstacle was detected in the corridor")
    k = int(np.argmax(objs.sizes))
    obstacle = (float(objs.centroids[k, 1]), float(objs.centroids[k, 0]))
    row = spec.height_cells // 2
    start, goal = (row, 0), (row, spec.width_cells - 1)
    p0 = cm.plan_path(cm.merge(static), start, goal)
    p1 = cm.plan_path(cm.merge(static, pred, unc), start, goal)
    return CostmapDemo(static, pred, unc, p0, p1, obstacle)
