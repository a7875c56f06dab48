"""Occupancy-grid types, the lidar-to-grid conversion and grid file I/O.

Layout convention: ``cells[row, col]`` where the column index runs along the
forward x axis and the row index along the left y axis. Flattening with
``cells.ravel()`` therefore gives row-major storage.
"""
from __future__ import annotations

import math
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .errors import FormatError, InvalidArgument

OGM_MAGIC = b"SKOG"
OGM_VERSION = 1
# magic, version, reserved, width, height, resolution, x_min, x_max, y_min, y_max
_SPEC_STRUCT = struct.Struct("<4sHHIIddddd")


@dataclass(frozen=True)
class GridSpec:
    width_cells: int = 64
    height_cells: int = 64
    resolution: float = 0.1
    x_range: Tuple[float, float] = (0.0, 6.4)
    y_range: Tuple[float, float] = (-3.2, 3.2)

    def __post_init__(self):
        if self.resolution <= 0:
            raise InvalidArgument("resolution must be positive")
        for n, (lo, hi) in ((self.width_cells, self.x_range), (self.height_cells, self.y_range)):
            expected = (hi - lo) / self.resolution
            if n < 1 or abs(expected - n) > 1e-6 * max(1.0, n):
                raise InvalidArgument(
                    f"extent {hi - lo} m at {self.resolution} m/cell does not give {n} cells"
                )

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height_cells, self.width_cells)

    @property
    def size(self) -> int:
        return self.width_cells * self.height_cells

    def cell_coords(self, points: np.ndarray) -> np.ndarray:
        """Unbounded integer (col, row) coordinates of an (N, 2) array of points."""
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        col = np.floor((points[:, 0] - self.x_range[0]) / self.resolution)
        row = np.floor((points[:, 1] - self.y_range[0]) / self.resolution)
        return np.stack([col, row], axis=1).astype(np.int64)

    def contains_cells(self, cols: np.ndarray, rows: np.ndarray) -> np.ndarray:
        return (cols >= 0) & (cols < self.width_cells) & (rows >= 0) & (rows < self.height_cells)

    def cell_center(self, col: float, row: float) -> Tuple[float, float]:
        return (
            self.x_range[0] + (col + 0.5) * self.resolution,
            self.y_range[0] + (row + 0.5) * self.resolution,
        )


DEFAULT_SPEC = GridSpec()


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Per-cell occupancy probabilities, stored as float32 in ``[0, 1]``."""

    spec: GridSpec
    cells: np.ndarray

    def __post_init__(self):
        cells = np.array(self.cells, dtype=np.float32, copy=True)
        if cells.size != self.spec.size:
            raise InvalidArgument(f"expected {self.spec.size} cells, got {cells.size}")
        cells = cells.reshape(self.spec.shape)
        if not np.all((cells >= 0.0) & (cells <= 1.0)):
            raise InvalidArgument("occupancy probabilities must lie in [0, 1]")
        object.__setattr__(self, "cells", _frozen(cells))

    @classmethod
    def filled(cls, value: float = 0.0, spec: GridSpec = DEFAULT_SPEC) -> "OccupancyGrid":
        return cls(spec, np.full(spec.shape, value, dtype=np.float32))

    def __eq__(self, other):
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return self.spec == other.spec and np.array_equal(self.cells, other.cells)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class BinaryGrid:
    spec: GridSpec
    cells: np.ndarray

    def __post_init__(self):
        cells = np.array(self.cells, copy=True)
        if cells.size != self.spec.size:
            raise InvalidArgument(f"expected {self.spec.size} cells, got {cells.size}")
        if not np.all((cells == 0) | (cells == 1)):
            raise InvalidArgument("binary grid cells must be 0 or 1")
        object.__setattr__(self, "cells", _frozen(cells.astype(np.uint8).reshape(self.spec.shape)))

    @classmethod
    def empty(cls, spec: GridSpec = DEFAULT_SPEC) -> "BinaryGrid":
        return cls(spec, np.zeros(spec.shape, dtype=np.uint8))

    def to_occupancy(self) -> OccupancyGrid:
        return OccupancyGrid(self.spec, self.cells.astype(np.float32))

    def occupied(self) -> np.ndarray:
        """(N, 2) integer array of occupied (col, row) cells."""
        rows, cols = np.nonzero(self.cells)
        return np.stack([cols, rows], axis=1)

    def __eq__(self, other):
        if not isinstance(other, BinaryGrid):
            return NotImplemented
        return self.spec == other.spec and np.array_equal(self.cells, other.cells)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class LidarScan:
    """A planar range scan.

    Raw scans have uniformly spaced bearings ``angle_min + i * angle_increment``.
    Scans re-expressed in another frame carry explicit per-beam ``angles``, the
    sensor ``origin`` in that frame and an explicit ``hit_mask`` since the
    transformed ranges no longer say which beams were returns.
    """

    ranges: np.ndarray
    angle_min: float
    angle_increment: float
    range_min: float = 0.1
    range_max: float = 30.0
    angles: Optional[np.ndarray] = None
    origin: Tuple[float, float] = (0.0, 0.0)
    hit_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "ranges", _frozen(np.array(self.ranges, dtype=float).ravel()))
        if self.angles is not None:
            angles = np.array(self.angles, dtype=float).ravel()
            if angles.shape != self.ranges.shape:
                raise InvalidArgument("angles and ranges differ in length")
            object.__setattr__(self, "angles", _frozen(angles))
        if self.hit_mask is not None:
            mask = np.array(self.hit_mask, dtype=bool).ravel()
            if mask.shape != self.ranges.shape:
                raise InvalidArgument("hit_mask and ranges differ in length")
            object.__setattr__(self, "hit_mask", _frozen(mask))

    @property
    def bearings(self) -> np.ndarray:
        if self.angles is not None:
            return self.angles
        return self.angle_min + self.angle_increment * np.arange(self.ranges.size)

    @property
    def hits(self) -> np.ndarray:
        """Boolean mask of beams that returned an in-range echo."""
        if self.hit_mask is not None:
            return self.hit_mask
        r = self.ranges
        return np.isfinite(r) & (r >= self.range_min) & (r < self.range_max)

    def endpoints(self) -> np.ndarray:
        b = self.bearings
        return np.stack([self.ranges * np.cos(b), self.ranges * np.sin(b)], axis=1)


def cell_index(spec: GridSpec, point) -> Optional[Tuple[int, int]]:
    """Return ``(col, row)`` of the cell containing ``point``, or None if outside.

    The extent is half-open: points on the upper x or y boundary fall outside.
    """
    col, row = spec.cell_coords(np.asarray(point, dtype=float))[0]
    if 0 <= col < spec.width_cells and 0 <= row < spec.height_cells:
        return int(col), int(row)
    return None


def scan_to_ogm(scan: LidarScan, spec: GridSpec = DEFAULT_SPEC) -> BinaryGrid:
    """Binary hit map: every in-range beam endpoint inside the grid sets its cell."""
    cells = np.zeros(spec.shape, dtype=np.uint8)
    pts = scan.endpoints()[scan.hits]
    if len(pts):
        cr = spec.cell_coords(pts)
        inside = spec.contains_cells(cr[:, 0], cr[:, 1])
        cells[cr[inside, 1], cr[inside, 0]] = 1
    return BinaryGrid(spec, cells)


def binarize(g: OccupancyGrid, threshold: float = 0.3) -> BinaryGrid:
    if not 0.0 < threshold < 1.0:
        raise InvalidArgument(f"threshold must be in (0, 1), got {threshold}")
    return BinaryGrid(g.spec, (g.cells > threshold).astype(np.uint8))


# -- file formats ------------------------------------------------------------

def pack_spec(spec: GridSpec, magic: bytes = OGM_MAGIC, version: int = OGM_VERSION) -> bytes:
    return _SPEC_STRUCT.pack(
        magic, version, 0, spec.width_cells, spec.height_cells, spec.resolution,
        spec.x_range[0], spec.x_range[1], spec.y_range[0], spec.y_range[1],
    )


def unpack_spec(buf: bytes, magic: bytes = OGM_MAGIC, version: int = OGM_VERSION) -> GridSpec:
    if len(buf) < _SPEC_STRUCT.size:
        raise FormatError("truncated header")
    m, ver, _, w, h, res, x0, x1, y0, y1 = _SPEC_STRUCT.unpack_from(buf)
    if m != magic:
        raise FormatError(f"bad magic {m!r}, expected {magic!r}")
    if ver != version:
        raise FormatError(f"unsupported version {ver}")
    try:
        return GridSpec(w, h, res, (x0, x1), (y0, y1))
    except InvalidArgument as exc:
        raise FormatError(f"inconsistent grid header: {exc}") from None


SPEC_HEADER_SIZE = _SPEC_STRUCT.size


def cells_from_bytes(spec: GridSpec, buf: bytes, count: int = 1) -> np.ndarray:
    expected = spec.size * count * 4
    if len(buf) != expected:
        raise FormatError(f"cell payload is {len(buf)} bytes, expected {expected}")
    cells = np.frombuffer(buf, dtype="<f4").astype(np.float32)
    if not np.all((cells >= 0.0) & (cells <= 1.0)):
        raise FormatError("cell probability outside [0, 1]")
    return cells.reshape((count,) + spec.shape)


def write_ogm(g: OccupancyGrid, path) -> None:
    Path(path).write_bytes(pack_spec(g.spec) + g.cells.astype("<f4").tobytes())


def read_ogm(path) -> OccupancyGrid:
    buf = Path(path).read_bytes()
    spec = unpack_spec(buf)
    cells = cells_from_bytes(spec, buf[SPEC_HEADER_SIZE:])
    return OccupancyGrid(spec, cells[0])


def to_gray(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] to 0..255 with round-half-up."""
    return np.floor(np.asarray(values, dtype=float) * 255.0 + 0.5).clip(0, 255).astype(np.uint8)


def write_pgm(gray: np.ndarray, path) -> None:
    gray = np.asarray(gray, dtype=np.uint8)
    h, w = gray.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + gray.tobytes())


def export_pgm(g: OccupancyGrid, path) -> None:
    """Binary PGM (P5, maxval 255); occupied cells are white. Image rows are grid rows."""
    write_pgm(to_gray(g.cells), path)


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", buf)
    if m is None:
        raise FormatError("not a binary PGM")
    w, h, maxval = (int(v) for v in m.groups())
    if maxval != 255:
        raise FormatError("only maxval 255 is supported")
    data = buf[m.end():]
    if len(data) != w * h:
        raise FormatError("PGM payload size mismatch")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)


def logistic(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=float)))


def log_odds(p: float) -> float:
    return math.log(p / (1.0 - p))
