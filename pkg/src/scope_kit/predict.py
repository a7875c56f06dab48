"""Dynamic-object prediction: pluggable one-step predictors, rollouts and sample bundles.

The predictors here are deterministic kinematic baselines. A learned model
can be plugged in through :func:`import_samples`, which reads sampled future
maps in the sample-bundle format.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.optimize import linear_sum_assignment

from .errors import FormatError, InvalidArgument
from .grid import (
    SPEC_HEADER_SIZE, BinaryGrid, GridSpec, OccupancyGrid, cells_from_bytes, pack_spec,
    scan_to_ogm, unpack_spec,
)
from .mapping import build_local_map
from .metrics import ClusterSet, cluster_points
from .motion import IDENTITY, DataTuple, Pose2D, compensate_history, express_in_frame, future_frame

PREDICTOR_KINDS = ("persistence", "kinematic", "external")
SAMPLE_MAGIC = b"SKSB"
SAMPLE_VERSION = 1
_BUNDLE_STRUCT = struct.Struct("<IIddd")  # n, M, frame x, y, theta

Grid = Union[BinaryGrid, OccupancyGrid]


@dataclass
class PredictorConfig:
    kind: str = "persistence"
    horizon: int = 10
    history_len: int = 10
    use_static_map: bool = True
    period: float = 0.1
    p_dynamic: float = 0.9
    p_free: float = 0.05
    match_gate: float = 3.0  # cells per step
    # stochastic sampler
    samples: int = 32
    velocity_noise: float = 0.3  # cells/step
    blur_sigma: float = 0.7  # cells
    logit_noise: float = 0.3
    logit_noise_growth: float = 0.05  # per horizon step

    def __post_init__(self):
        if self.kind not in PREDICTOR_KINDS:
            raise InvalidArgument(f"unknown predictor kind {self.kind!r}")
        if self.horizon < 1 or self.history_len < 1:
            raise InvalidArgument("horizon and history_len must be >= 1")


@dataclass(frozen=True, eq=False)
class PredictionBundle:
    mean_maps: tuple
    samples: Optional[tuple] = None
    frame: Pose2D = IDENTITY

    def __post_init__(self):
        maps = tuple(self.mean_maps)
        if not maps:
            raise InvalidArgument("bundle needs at least one horizon")
        spec = maps[0].spec
        if any(m.spec != spec for m in maps):
            raise InvalidArgument("mean maps do not share one grid spec")
        object.__setattr__(self, "mean_maps", maps)
        if self.samples is not None:
            samples = tuple(tuple(s) for s in self.samples)
            if len(samples) != len(maps):
                raise InvalidArgument("sample horizons do not match mean maps")
            counts = {len(s) for s in samples}
            if len(counts) != 1 or 0 in counts:
                raise InvalidArgument("sample count must be uniform and positive")
            if any(g.spec != spec for s in samples for g in s):
                raise InvalidArgument("samples do not share the bundle grid spec")
            object.__setattr__(self, "samples", samples)

    @property
    def spec(self) -> GridSpec:
        return self.mean_maps[0].spec

    @property
    def horizon(self) -> int:
        return len(self.mean_maps)

    @property
    def n_samples(self) -> int:
        return 0 if self.samples is None else len(self.samples[0])

    def __eq__(self, other):
        if not isinstance(other, PredictionBundle):
            return NotImplemented
        return (self.mean_maps == other.mean_maps and self.samples == other.samples
                and self.frame == other.frame)

    __hash__ = None


def _occupied(g: Grid) -> np.ndarray:
    if isinstance(g, BinaryGrid):
        return g.cells.astype(bool)
    return g.cells > 0.5


def _as_probability(g: Grid) -> OccupancyGrid:
    return g.to_occupancy() if isinstance(g, BinaryGrid) else g


# -- persistence ---------------------------------------------------------------

def persistence_step(history: Sequence[Grid]) -> OccupancyGrid:
    if not history:
        raise InvalidArgument("empty history")
    return _as_probability(history[-1])


def predict_persistence(history: Sequence[Grid], cfg: Optional[PredictorConfig] = None) -> PredictionBundle:
    """The latest compensated map, repeated at every horizon."""
    cfg = cfg or PredictorConfig()
    latest = persistence_step(history)
    return PredictionBundle(tuple(latest for _ in range(cfg.horizon)))


# -- kinematic -----------------------------------------------------------------

@dataclass
class _Track:
    cells: np.ndarray  # (K, 2) int (col, row)
    displacement: np.ndarray  # cells per step


def _dynamic_cells(g: Grid, static_map: Optional[OccupancyGrid]) -> np.ndarray:
    occ = _occupied(g)
    if static_map is not None:
        occ &= static_map.cells < 0.5
    rows, cols = np.nonzero(occ)
    return np.stack([cols, rows], axis=1)


def _match(now: ClusterSet, prev: ClusterSet, gate: float):
    """Centroid displacement of each cluster in ``now`` and the index it matched in ``prev`` (-1 if none)."""
    disp = np.zeros((len(now), 2))
    idx = np.full(len(now), -1)
    if len(now) and len(prev):
        d = np.linalg.norm(now.centroids[:, None, :] - prev.centroids[None, :, :], axis=2)
        rows, cols = linear_sum_assignment(np.minimum(d, gate * 10))
        for i, j in zip(rows, cols):
            if d[i, j] <= gate:
                disp[i] = now.centroids[i] - prev.centroids[j]
                idx[i] = j
    return disp, idx


def _tracks(history: Sequence[Grid], static_map: Optional[OccupancyGrid], gate: float,
            consistency: float = 1.5) -> List[_Track]:
    """Dynamic clusters of the latest map with their per-step displacement.

    With three or more maps a displacement is kept only if the previous step
    moved the matched cluster by a similar amount (within ``consistency``
    cells); sensor flicker on walls fails this test and is held in place.
    """
    clusters = [cluster_points(_dynamic_cells(g, static_map)) for g in history[-3:]]
    if len(clusters) < 2:
        clusters.insert(0, cluster_points(np.zeros((0, 2))))
    now, prev = clusters[-1], clusters[-2]
    disp, idx = _match(now, prev, gate)
    if len(clusters) == 3:
        disp_prev, idx_prev = _match(prev, clusters[0], gate)
        for i, j in enumerate(idx):
            if j < 0 or idx_prev[j] < 0 or np.linalg.norm(disp[i] - disp_prev[j]) > consistency:
                disp[i] = 0.0
    return [_Track(now.members(k).astype(np.int64), disp[k]) for k in range(len(now))]


def _static_layer(spec: GridSpec, static_map: Optional[OccupancyGrid], p_free: float) -> np.ndarray:
    base = np.full(spec.shape, p_free)
    if static_map is not None:
        # unobserved cells sit at exactly 0.5 and are not evidence of a static obstacle
        static = static_map.cells > 0.5
        base[static] = static_map.cells[static]
    return base


def _paint(base: np.ndarray, cells: np.ndarray, value: float) -> None:
    h, w = base.shape
    ok = (cells[:, 0] >= 0) & (cells[:, 0] < w) & (cells[:, 1] >= 0) & (cells[:, 1] < h)
    base[cells[ok, 1], cells[ok, 0]] = value


def predict_kinematic(history: Sequence[Grid], static_map: Optional[OccupancyGrid] = None,
                      cfg: Optional[PredictorConfig] = None) -> PredictionBundle:
    """Static cells persist from the local map; dynamic clusters move at constant velocity.

    Dynamic cells are occupied in the latest map but below 0.5 in the static
    map. Each dynamic cluster's velocity is the centroid displacement between
    the last two maps (clusters matched by optimal assignment within a gate).
    """
    cfg = cfg or PredictorConfig(kind="kinematic")
    if len(history) < 2:
        raise InvalidArgument("kinematic prediction needs at least two maps")
    if not cfg.use_static_map:
        static_map = None
    spec = history[-1].spec
    tracks = _tracks(history, static_map, cfg.match_gate)
    base = _static_layer(spec, static_map, cfg.p_free)
    maps = []
    for T in range(1, cfg.horizon + 1):
        out = base.copy()
        for tr in tracks:
            shift = np.floor(T * tr.displacement + 0.5).astype(np.int64)
            _paint(out, tr.cells + shift, cfg.p_dynamic)
        maps.append(OccupancyGrid(spec, out))
    return PredictionBundle(tuple(maps))


def predicted_objects(history: Sequence[Grid], static_map: Optional[OccupancyGrid] = None,
                      cfg: Optional[PredictorConfig] = None, T: int = 1) -> ClusterSet:
    """Centroids (col, row) and sizes of the dynamic clusters extrapolated to horizon ``T``."""
    cfg = cfg or PredictorConfig(kind="kinematic")
    tracks = _tracks(history, static_map if cfg.use_static_map else None, cfg.match_gate)
    cents = [tr.cells.mean(axis=0) + np.floor(T * tr.displacement + 0.5) for tr in tracks]
    return ClusterSet(np.array(cents, dtype=float).reshape(-1, 2), np.array([len(tr.cells) for tr in tracks], dtype=int))


def kinematic_step(static_map: Optional[OccupancyGrid] = None, cfg: Optional[PredictorConfig] = None
                   ) -> Callable[[Sequence[Grid]], OccupancyGrid]:
    cfg = cfg or PredictorConfig(kind="kinematic")
    one = PredictorConfig(**{**cfg.__dict__, "horizon": 1})
    return lambda history: predict_kinematic(history, static_map, one).mean_maps[0]


def rollout(step: Callable[[Sequence[Grid]], OccupancyGrid], history: Sequence[Grid], n: int) -> PredictionBundle:
    """Apply a one-step predictor autoregressively for ``n`` steps."""
    if n < 1:
        raise InvalidArgument("rollout length must be >= 1")
    hist = list(history)
    maps = []
    for _ in range(n):
        nxt = step(hist)
        maps.append(nxt)
        hist = hist[1:] + [nxt]
    return PredictionBundle(tuple(maps))


def sample_kinematic(history: Sequence[Grid], static_map: Optional[OccupancyGrid],
                     cfg: PredictorConfig, rng: np.random.Generator) -> PredictionBundle:
    """Stochastic stand-in for a generative predictor.

    Each sample perturbs every dynamic cluster's velocity, renders the moved
    clusters plus static cells, blurs the result into soft probabilities and
    adds logit-space noise that grows with the horizon. The mean maps are the
    cellwise sample averages.
    """
    if len(history) < 2:
        raise InvalidArgument("kinematic sampling needs at least two maps")
    if cfg.samples < 1:
        raise InvalidArgument("need at least one sample")
    if not cfg.use_static_map:
        static_map = None
    spec = history[-1].spec
    tracks = _tracks(history, static_map, cfg.match_gate)
    static = np.zeros(spec.shape)
    if static_map is not None:
        static[static_map.cells > 0.5] = 1.0
    # normalise the blur so an isolated occupied cell keeps probability ~1
    peak = gaussian_filter(np.pad([[1.0]], 5), cfg.blur_sigma, mode="constant").max()
    disp = np.array([t.displacement for t in tracks]).reshape(-1, 2)
    jitter = rng.normal(0.0, cfg.velocity_noise, size=(cfg.samples, len(tracks), 2))
    samples = []
    for T in range(1, cfg.horizon + 1):
        s_T = cfg.logit_noise + cfg.logit_noise_growth * (T - 1)
        per_h = []
        for j in range(cfg.samples):
            occ = static.copy()
            for k, tr in enumerate(tracks):
                shift = np.floor(T * (disp[k] + jitter[j, k]) + 0.5).astype(np.int64)
                _paint(occ, tr.cells + shift, 1.0)
            soft = np.clip(gaussian_filter(occ, cfg.blur_sigma, mode="constant") / peak, 1e-3, 1 - 1e-3)
            logit = np.log(soft / (1.0 - soft)) + rng.normal(0.0, s_T, size=spec.shape)
            per_h.append(OccupancyGrid(spec, 1.0 / (1.0 + np.exp(-logit))))
        samples.append(tuple(per_h))
    return bundle_from_samples(samples)


def bundle_from_samples(samples: Sequence[Sequence[OccupancyGrid]], frame: Pose2D = IDENTITY) -> PredictionBundle:
    """Bundle whose mean maps are the cellwise averages of the samples."""
    means = []
    for per_h in samples:
        stack = np.stack([g.cells.astype(np.float64) for g in per_h])
        means.append(OccupancyGrid(per_h[0].spec, stack.mean(axis=0)))
    return PredictionBundle(tuple(means), tuple(tuple(s) for s in samples), frame)


# -- sample-bundle files -------------------------------------------------------

def export_samples(bundle: PredictionBundle, path) -> None:
    """Write a bundle; deterministic bundles are stored with their mean maps as one sample."""
    samples = bundle.samples if bundle.samples is not None else tuple((m,) for m in bundle.mean_maps)
    f = bundle.frame
    parts = [pack_spec(bundle.spec, SAMPLE_MAGIC, SAMPLE_VERSION),
             _BUNDLE_STRUCT.pack(len(samples), len(samples[0]), f.x, f.y, f.theta)]
    for per_h in samples:
        for g in per_h:
            parts.append(g.cells.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def import_samples(path) -> PredictionBundle:
    buf = Path(path).read_bytes()
    spec = unpack_spec(buf, SAMPLE_MAGIC, SAMPLE_VERSION)
    off = SPEC_HEADER_SIZE
    if len(buf) < off + _BUNDLE_STRUCT.size:
        raise FormatError("truncated sample-bundle header")
    n, M, x, y, th = _BUNDLE_STRUCT.unpack_from(buf, off)
    if n < 1 or M < 1:
        raise FormatError("sample bundle needs n >= 1 and M >= 1")
    cells = cells_from_bytes(spec, buf[off + _BUNDLE_STRUCT.size:], n * M).reshape((n, M) + spec.shape)
    samples = [[OccupancyGrid(spec, cells[h, j]) for j in range(M)] for h in range(n)]
    return bundle_from_samples(samples, Pose2D(x, y, th))


# -- windows over a dataset ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class Window:
    """Inputs and ground truth for one prediction made at record ``t``."""

    t: int
    frame: Pose2D
    history: tuple  # BinaryGrids, oldest first
    scans: tuple  # scans the maps were rendered from
    truths: tuple  # OccupancyGrids for T = 1..n
    static_map: Optional[OccupancyGrid] = None


def make_window(records: Sequence[DataTuple], t: int, cfg: Optional[PredictorConfig] = None,
                spec: GridSpec = GridSpec(), compensate: bool = True, with_map: bool = True) -> Window:
    """History maps, local static map and future truth for a prediction at record ``t``.

    With ``compensate`` everything is expressed in the predicted frame at
    ``t + horizon``; without it every map stays in its own robot frame.
    """
    cfg = cfg or PredictorConfig()
    lo, hi = t - cfg.history_len, t + cfg.horizon
    if lo < 0 or hi >= len(records):
        raise InvalidArgument(f"window at {t} needs records {lo}..{hi}, have {len(records)}")
    past = records[lo:t + 1]
    if compensate:
        frame = future_frame(past, cfg.horizon, cfg.period)
        scans = compensate_history(past, cfg.horizon, cfg.period)
        futures = [express_in_frame(records[t + T], frame) for T in range(1, cfg.horizon + 1)]
    else:
        frame = records[t].pose
        scans = [d.scan for d in past]
        futures = [records[t + T].scan for T in range(1, cfg.horizon + 1)]
    history = tuple(scan_to_ogm(s, spec) for s in scans)
    truths = tuple(scan_to_ogm(s, spec).to_occupancy() for s in futures)
    static_map = build_local_map(scans, spec) if with_map else None
    return Window(t, frame, history, tuple(scans), truths, static_map)


def window_indices(n_records: int, cfg: PredictorConfig, stride: int = 1) -> List[int]:
    return list(range(cfg.history_len, n_records - cfg.horizon, stride))


def predict_window(win: Window, cfg: PredictorConfig) -> PredictionBundle:
    if cfg.kind == "persistence":
        bundle = predict_persistence(win.history, cfg)
    elif cfg.kind == "kinematic":
        bundle = predict_kinematic(win.history, win.static_map, cfg)
    else:
        raise InvalidArgument("external predictions are read from sample-bundle files")
    return PredictionBundle(bundle.mean_maps, bundle.samples, win.frame)
