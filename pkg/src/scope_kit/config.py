"""Run configuration shared by the command-line front end and experiment scripts."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

from .errors import FormatError, InvalidArgument
from .metrics import OSPA_CUTOFF, P_FREE
from .predict import PredictorConfig

SCENARIOS = ("static", "crowd", "corridor")


@dataclass
class SimConfig:
    scenario: str = "crowd"
    pedestrians: int = 3
    duration: float = 5.0  # seconds
    noise_sigma: float = 0.01

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise InvalidArgument(f"unknown scenario {self.scenario!r}")
        if self.duration <= 0 or self.pedestrians < 0:
            raise InvalidArgument("duration must be positive and pedestrians non-negative")


@dataclass
class RunConfig:
    dataset: Optional[str] = None
    table: Optional[str] = None
    out: str = "out"
    seed: int = 0
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    ospa_cutoff: float = OSPA_CUTOFF
    ospa_p: int = 1
    threshold: float = P_FREE
    weights: Optional[str] = None  # path to a float32 OGM file used as the WMSE weight map
    stride: int = 5  # windows between evaluated/fitted predictions
    compensate: bool = True
    entropy_horizon: int = 5
    scenes_per_count: int = 20
    max_objects: int = 8

    def __post_init__(self):
        if self.ospa_cutoff <= 0 or self.ospa_p < 1:
            raise InvalidArgument("ospa needs cutoff > 0 and p >= 1")
        if not 0.0 < self.threshold < 1.0:
            raise InvalidArgument("threshold must lie in (0, 1)")
        if self.stride < 1 or self.scenes_per_count < 1 or self.max_objects < 1:
            raise InvalidArgument("stride, scenes_per_count and max_objects must be >= 1")

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "RunConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidArgument(f"unknown config keys: {sorted(unknown)}")
        if "predictor" in d:
            d["predictor"] = _sub(PredictorConfig, d["predictor"])
        if "sim" in d:
            d["sim"] = _sub(SimConfig, d["sim"])
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise FormatError("config must be a JSON object")
        return cls.from_dict(data)


def _sub(kind, value):
    if isinstance(value, kind):
        return value
    if not isinstance(value, dict):
        raise InvalidArgument(f"{kind.__name__} must be an object")
    known = {f.name for f in dataclasses.fields(kind)}
    unknown = set(value) - known
    if unknown:
        raise InvalidArgument(f"unknown {kind.__name__} keys: {sorted(unknown)}")
    return kind(**value)
