"""Desk-scale 2D world simulator: walls, constant-velocity pedestrians, a unicycle robot
and a ray-cast planar lidar."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import FormatError, GenerationError, InvalidArgument
from .grid import LidarScan
from .motion import DataTuple, Pose2D, Twist2D, normalize_angle, predict_pose

Point = Tuple[float, float]
Segment = Tuple[Point, Point]


@dataclass(frozen=True)
class Pedestrian:
    position: Point
    velocity: Point = (0.0, 0.0)
    radius: float = 0.3

    def __post_init__(self):
        if self.radius <= 0:
            raise InvalidArgument("pedestrian radius must be positive")


@dataclass(frozen=True)
class WorldModel:
    segments: Tuple[Segment, ...] = ()
    pedestrians: Tuple[Pedestrian, ...] = ()
    bounds: Tuple[float, float, float, float] = (-20.0, -20.0, 20.0, 20.0)  # xmin, ymin, xmax, ymax

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(
            (tuple(map(float, a)), tuple(map(float, b))) for a, b in self.segments))
        object.__setattr__(self, "pedestrians", tuple(self.pedestrians))
        x0, y0, x1, y1 = self.bounds
        for p in self.pedestrians:
            if not (x0 <= p.position[0] <= x1 and y0 <= p.position[1] <= y1):
                raise InvalidArgument(f"pedestrian at {p.position} outside world bounds")

    def contains(self, x: float, y: float) -> bool:
        x0, y0, x1, y1 = self.bounds
        return x0 <= x <= x1 and y0 <= y <= y1


@dataclass(frozen=True)
class SensorConfig:
    fov: float = math.radians(270.0)
    angular_resolution: float = math.radians(0.25)
    range: Tuple[float, float] = (0.1, 30.0)
    noise_sigma: float = 0.01
    rate: float = 10.0

    @property
    def n_beams(self) -> int:
        n = self.fov / self.angular_resolution
        if abs(n - round(n)) > 1e-6:
            raise InvalidArgument("fov is not a whole number of angular steps")
        return int(round(n)) + 1

    @property
    def angle_min(self) -> float:
        return -0.5 * self.fov


# -- world dynamics ------------------------------------------------------------

def _closest_on_segment(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    t = np.clip(np.dot(p - a, ab) / max(np.dot(ab, ab), 1e-18), 0.0, 1.0)
    return a + t * ab


def _step_pedestrian(p: Pedestrian, world: WorldModel, dt: float) -> Pedestrian:
    pos = np.array(p.position, dtype=float)
    vel = np.array(p.velocity, dtype=float)
    new = pos + vel * dt
    x0, y0, x1, y1 = world.bounds
    r = p.radius
    for axis, lo, hi in ((0, x0, x1), (1, y0, y1)):
        if new[axis] - r < lo and vel[axis] < 0:
            vel[axis] = -vel[axis]
            new[axis] = 2 * (lo + r) - new[axis]
        elif new[axis] + r > hi and vel[axis] > 0:
            vel[axis] = -vel[axis]
            new[axis] = 2 * (hi - r) - new[axis]
    for a, b in world.segments:
        a, b = np.asarray(a), np.asarray(b)
        c = _closest_on_segment(new, a, b)
        gap = new - c
        dist = float(np.hypot(*gap))
        if dist < r:
            n = gap / dist if dist > 1e-12 else np.array([-(b - a)[1], (b - a)[0]]) / np.hypot(*(b - a))
            vn = float(np.dot(vel, n))
            if vn < 0:
                vel = vel - 2 * vn * n
                new = pos  # stay put this tick, leave with the reflected velocity
    new = np.clip(new, [x0 + r, y0 + r], [x1 - r, y1 - r]) if (x1 - x0 > 2 * r and y1 - y0 > 2 * r) else new
    return replace(p, position=(float(new[0]), float(new[1])), velocity=(float(vel[0]), float(vel[1])))


def step_world(world: WorldModel, dt: float) -> WorldModel:
    """Advance pedestrians at constant velocity with specular reflection off bounds and walls."""
    if dt <= 0:
        raise InvalidArgument("dt must be positive")
    return replace(world, pedestrians=tuple(_step_pedestrian(p, world, dt) for p in world.pedestrians))


# -- sensing -------------------------------------------------------------------

def _ray_distances(world: WorldModel, origin: np.ndarray, angles: np.ndarray) -> np.ndarray:
    d = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    best = np.full(len(angles), np.inf)
    if world.segments:
        seg = np.array(world.segments, dtype=float)  # (S, 2, 2)
        q = seg[:, 0, :]
        e = seg[:, 1, :] - q
        w = q - origin  # (S, 2)
        denom = d[:, None, 0] * e[None, :, 1] - d[:, None, 1] * e[None, :, 0]  # (B, S)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (w[None, :, 0] * e[None, :, 1] - w[None, :, 1] * e[None, :, 0]) / denom
            u = (w[None, :, 0] * d[:, None, 1] - w[None, :, 1] * d[:, None, 0]) / denom
        ok = (np.abs(denom) > 1e-12) & (t > 0) & (u >= 0) & (u <= 1)
        best = np.minimum(best, np.where(ok, t, np.inf).min(axis=1))
    for p in world.pedestrians:
        oc = origin - np.asarray(p.position)
        b = d @ oc
        c = float(oc @ oc) - p.radius**2
        disc = b * b - c
        with np.errstate(invalid="ignore"):
            root = np.sqrt(disc)
        t = np.where(c > 0, -b - root, -b + root)
        ok = (disc >= 0) & (t > 0)
        best = np.minimum(best, np.where(ok, t, np.inf))
    return best


def raycast(world: WorldModel, pose: Pose2D, cfg: SensorConfig = SensorConfig(),
            rng: Optional[np.random.Generator] = None) -> LidarScan:
    """Nearest wall/pedestrian hit per beam; non-returns are encoded as ``range_max``."""
    n = cfg.n_beams
    rel = cfg.angle_min + cfg.angular_resolution * np.arange(n)
    dist = _ray_distances(world, np.array([pose.x, pose.y]), pose.theta + rel)
    r_min, r_max = cfg.range
    hit = np.isfinite(dist) & (dist < r_max)
    if rng is not None and cfg.noise_sigma > 0:
        dist = np.where(hit, dist + rng.normal(0.0, cfg.noise_sigma, n), dist)
    ranges = np.where(hit, np.clip(dist, r_min, r_max), r_max)
    return LidarScan(ranges, cfg.angle_min, cfg.angular_resolution, r_min, r_max)


# -- datasets ------------------------------------------------------------------

@dataclass(frozen=True)
class TrajectorySpec:
    """Either a piecewise-constant (duration, v, w) profile or a waypoint list."""

    profile: Tuple[Tuple[float, float, float], ...] = ()
    waypoints: Tuple[Point, ...] = ()
    speed: float = 0.5
    turn_rate: float = 1.0
    start: Pose2D = Pose2D()

    def twist_at(self, t: float, pose: Pose2D, state: dict) -> Twist2D:
        if self.waypoints:
            return self._track_waypoints(pose, state)
        elapsed = 0.0
        for dur, v, w in self.profile:
            if t < elapsed + dur - 1e-9:
                return Twist2D(v, w)
            elapsed += dur
        return Twist2D(*self.profile[-1][1:]) if self.profile else Twist2D()

    def _track_waypoints(self, pose: Pose2D, state: dict) -> Twist2D:
        i = state.setdefault("wp", 0)
        while i < len(self.waypoints) and math.hypot(self.waypoints[i][0] - pose.x,
                                                     self.waypoints[i][1] - pose.y) < 0.1:
            i += 1
        state["wp"] = i
        if i >= len(self.waypoints):
            return Twist2D()
        gx, gy = self.waypoints[i]
        err = normalize_angle(math.atan2(gy - pose.y, gx - pose.x) - pose.theta)
        w = max(-self.turn_rate, min(self.turn_rate, 2.0 * err))
        v = self.speed * max(0.0, math.cos(err)) if abs(err) < math.pi / 4 else 0.0
        return Twist2D(v, w)


def generate_dataset(world: WorldModel, trajectory: TrajectorySpec, cfg: SensorConfig = SensorConfig(),
                     seed: int = 0, duration: float = 10.0) -> List[DataTuple]:
    """One record per sensor tick; fully determined by the inputs and ``seed``."""
    return simulate(world, trajectory, cfg, seed, duration)[0]


def simulate(world: WorldModel, trajectory: TrajectorySpec, cfg: SensorConfig = SensorConfig(),
             seed: int = 0, duration: float = 10.0):
    """Like :func:`generate_dataset` but also returns the world state at every tick."""
    if duration <= 0:
        raise InvalidArgument("duration must be positive")
    rng = np.random.default_rng(seed)
    dt = 1.0 / cfg.rate
    pose, state, records, worlds = trajectory.start, {}, [], []
    for k in range(int(round(duration * cfg.rate))):
        if not world.contains(pose.x, pose.y):
            raise GenerationError(f"robot left the world bounds at tick {k}")
        twist = trajectory.twist_at(k * dt, pose, state)
        records.append(DataTuple(k * dt, pose, twist, raycast(world, pose, cfg, rng)))
        worlds.append(world)
        pose = predict_pose(pose, twist, dt)
        world = step_world(world, dt)
    return records, worlds


def _g(x: float) -> float:
    return float(f"{x:.9g}")


def record_to_json(d: DataTuple) -> str:
    s = d.scan
    obj = {
        "stamp": _g(d.stamp),
        "pose": {"x": _g(d.pose.x), "y": _g(d.pose.y), "theta": _g(d.pose.theta)},
        "twist": {"v": _g(d.twist.v), "w": _g(d.twist.w)},
        "scan": {"angle_min": _g(s.angle_min), "angle_increment": _g(s.angle_increment),
                 "range_min": _g(s.range_min), "range_max": _g(s.range_max),
                 "ranges": [_g(r) for r in s.ranges]},
    }
    return json.dumps(obj, separators=(",", ":"))


def record_from_json(line: str) -> DataTuple:
    try:
        o = json.loads(line)
        s = o["scan"]
        return DataTuple(
            float(o["stamp"]),
            Pose2D(float(o["pose"]["x"]), float(o["pose"]["y"]), float(o["pose"]["theta"])),
            Twist2D(float(o["twist"]["v"]), float(o["twist"]["w"])),
            LidarScan(np.array(s["ranges"], dtype=float), float(s["angle_min"]), float(s["angle_increment"]),
                      float(s["range_min"]), float(s["range_max"])),
        )
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"bad dataset record: {exc}") from None


def write_dataset(records: Sequence[DataTuple], path) -> None:
    Path(path).write_text("".join(record_to_json(d) + "\n" for d in records))


def read_dataset(path) -> List[DataTuple]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    records = [record_from_json(ln) for ln in lines]
    for prev, cur in zip(records, records[1:]):
        if not cur.stamp > prev.stamp:
            raise FormatError("record stamps must be strictly increasing")
    return records


# -- scenarios -----------------------------------------------------------------

def box_segments(x0: float, y0: float, x1: float, y1: float) -> List[Segment]:
    return [((x0, y0), (x1, y0)), ((x1, y0), (x1, y1)), ((x1, y1), (x0, y1)), ((x0, y1), (x0, y0))]


def static_scene(rng: np.random.Generator) -> WorldModel:
    """A walled room with a few random interior wall pieces and boxes."""
    segs = box_segments(-3.0, -4.0, 14.0, 4.0)
    for _ in range(int(rng.integers(3, 7))):
        cx, cy = rng.uniform(2.0, 12.0), rng.uniform(-3.0, 3.0)
        if abs(cy) < 0.8:
            cy = math.copysign(0.8 + abs(cy), cy if cy != 0 else 1.0)
        if rng.random() < 0.5:
            h = rng.uniform(0.2, 0.5)
            segs += box_segments(cx - h, cy - h, cx + h, cy + h)
        else:
            ang = rng.uniform(0, math.pi)
            L = rng.uniform(0.5, 2.0)
            segs.append(((cx, cy), (cx + L * math.cos(ang), cy + L * math.sin(ang))))
    return WorldModel(tuple(segs), (), (-3.0, -4.0, 14.0, 4.0))


def moving_robot_trajectory(rng: np.random.Generator) -> TrajectorySpec:
    v = rng.uniform(0.5, 1.0)
    w = rng.uniform(-0.15, 0.15)
    return TrajectorySpec(profile=((100.0, v, w),), start=Pose2D(0.0, rng.uniform(-0.3, 0.3), 0.0))


def crowd_scene(k: int, rng: np.random.Generator, speed: float = 1.0) -> WorldModel:
    """``k`` walking pedestrians in the sensed area of an otherwise open world."""
    peds: List[Pedestrian] = []
    while len(peds) < k:
        pos = (rng.uniform(1.0, 5.5), rng.uniform(-2.5, 2.5))
        if all(math.hypot(pos[0] - p.position[0], pos[1] - p.position[1]) > 1.0 for p in peds):
            ang = rng.uniform(-math.pi, math.pi)
            s = rng.uniform(0.5, 1.0) * speed
            peds.append(Pedestrian(pos, (s * math.cos(ang), s * math.sin(ang))))
    return WorldModel((), tuple(peds), (-1.0, -3.5, 7.5, 3.5))


def corridor_scene(length: float = 6.4, half_width: float = 1.5,
                   pedestrian: Optional[Point] = (3.2, 0.0)) -> WorldModel:
    segs = (((-1.0, -half_width), (length + 1, -half_width)), ((-1.0, half_width), (length + 1, half_width)))
    peds = (Pedestrian(pedestrian, (-0.5, 0.0)),) if pedestrian is not None else ()
    return WorldModel(segs, peds, (-1.0, -half_width, length + 1, half_width))


def future_truth(world: WorldModel, frame: Pose2D, cfg: SensorConfig = SensorConfig()) -> LidarScan:
    """Noise-free scan of ``world`` from ``frame``, i.e. the true map in that frame."""
    return raycast(world, frame, replace(cfg, noise_sigma=0.0), None)
