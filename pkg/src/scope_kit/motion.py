"""SE(2) pose algebra, constant-velocity pose prediction and ego-motion compensation."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .errors import InvalidArgument
from .grid import LidarScan

OMEGA_EPS = 1e-6


def normalize_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    wrapped = math.pi - math.fmod(math.pi - theta, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    elif wrapped > math.pi:
        wrapped -= 2.0 * math.pi
    return wrapped


@dataclass(frozen=True)
class Pose2D:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s, self.x], [s, c, self.y], [0.0, 0.0, 1.0]])

    def transform_points(self, pts: np.ndarray) -> np.ndarray:
        """Map (N, 2) points from this pose's local frame into the parent frame."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        return np.stack(
            [c * pts[:, 0] - s * pts[:, 1] + self.x, s * pts[:, 0] + c * pts[:, 1] + self.y], axis=1
        )


@dataclass(frozen=True)
class Twist2D:
    v: float = 0.0
    w: float = 0.0


@dataclass(frozen=True, eq=False)
class DataTuple:
    stamp: float
    pose: Pose2D
    twist: Twist2D
    scan: LidarScan


IDENTITY = Pose2D()


def compose(a: Pose2D, b: Pose2D) -> Pose2D:
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2D(a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y, a.theta + b.theta)


def invert(a: Pose2D) -> Pose2D:
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2D(-c * a.x - s * a.y, s * a.x - c * a.y, -a.theta)


def predict_pose(pose: Pose2D, twist: Twist2D, dt: float) -> Pose2D:
    """Exact unicycle integration under a constant (v, w) for ``dt`` seconds."""
    if dt < 0:
        raise InvalidArgument("dt must be non-negative")
    v, w, th = twist.v, twist.w, pose.theta
    if abs(w) < OMEGA_EPS:
        return Pose2D(pose.x + v * dt * math.cos(th), pose.y + v * dt * math.sin(th), th)
    th1 = th + w * dt
    return Pose2D(
        pose.x + (v / w) * (math.sin(th1) - math.sin(th)),
        pose.y - (v / w) * (math.cos(th1) - math.cos(th)),
        th1,
    )


def transform_scan(scan: LidarScan, relative: Pose2D) -> LidarScan:
    """Re-express ``scan`` (taken at ``relative`` within the target frame) in the target frame.

    Beam endpoints are moved point-wise and converted back to range/bearing
    about the target origin. Non-return beams are moved as their range-limit
    point so the free-space ray they imply is kept.
    """
    hits = scan.hits
    r = np.where(hits, scan.ranges, scan.range_max)
    b = scan.bearings
    pts = relative.transform_points(np.stack([r * np.cos(b), r * np.sin(b)], axis=1))
    ox, oy = scan.origin
    origin = relative.transform_points(np.array([[ox, oy]]))[0]
    return LidarScan(
        ranges=np.hypot(pts[:, 0], pts[:, 1]),
        angle_min=scan.angle_min,
        angle_increment=scan.angle_increment,
        range_min=scan.range_min,
        range_max=scan.range_max,
        angles=np.arctan2(pts[:, 1], pts[:, 0]),
        origin=(float(origin[0]), float(origin[1])),
        hit_mask=hits,
    )


def future_frame(history: Sequence[DataTuple], horizon_steps: int, period: float = 0.1) -> Pose2D:
    if not history:
        raise InvalidArgument("empty history")
    latest = history[-1]
    return predict_pose(latest.pose, latest.twist, horizon_steps * period)


def compensate_history(
    history: Sequence[DataTuple], horizon_steps: int = 10, period: float = 0.1
) -> List[LidarScan]:
    """Express every scan of ``history`` in the predicted frame at ``t + horizon_steps``."""
    frame = future_frame(history, horizon_steps, period)
    to_frame = invert(frame)
    return [transform_scan(d.scan, compose(to_frame, d.pose)) for d in history]


def express_in_frame(record: DataTuple, frame: Pose2D) -> LidarScan:
    """Re-express a single record's scan in an arbitrary frame of the odometry frame."""
    return transform_scan(record.scan, compose(invert(frame), record.pose))
