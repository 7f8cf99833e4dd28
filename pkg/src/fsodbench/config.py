"""Run configuration: one JSON file plus environment overrides of scalar fields."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .evaluation import EvalConfig

ENV_PREFIX = "FSODBENCH_"


@dataclass
class RunConfig:
    dataset: Optional[str] = None
    val_dataset: Optional[str] = None
    cohort_config: Optional[str] = None
    k_values: list = field(default_factory=lambda: [5, 10, 30])
    seeds: list = field(default_factory=lambda: [1, 2, 3])
    out_dir: str = "splits"
    iou_thresholds: Optional[list] = None
    max_dets_per_image: int = 100
    recall_points: int = 101
    leaderboard: str = "leaderboard.jsonl"
    max_body_bytes: int = 64 * 1024 * 1024
    token: Optional[str] = None
    host: str = "127.0.0.1"
    port: int = 8000

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seeds list must be non-empty")
        if any(int(k) < 1 for k in self.k_values):
            raise ValueError("K values must be positive")

    def eval_config(self) -> EvalConfig:
        kwargs = dict(max_dets_per_image=self.max_dets_per_image, recall_points=self.recall_points)
        if self.iou_thresholds is not None:
            kwargs["iou_thresholds"] = self.iou_thresholds
        return EvalConfig(**kwargs)

    def require_paths(self, *names: str) -> None:
        for name in names:
            value = getattr(self, name)
            if value is None or not Path(value).exists():
                raise FileNotFoundError(f"config field '{name}' points to a missing path: {value}")


_SCALARS = (str, int, float)


def _coerce(raw: str, default):
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def load_config(path=None, environ=None) -> RunConfig:
    """Read ``path`` (optional) and apply ``FSODBENCH_<FIELD>`` overrides.

    Only scalar fields (strings, numbers, optional paths) can be overridden.
    """
    environ = os.environ if environ is None else environ
    data = json.loads(Path(path).read_text()) if path else {}
    names = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    defaults = RunConfig()
    for name in sorted(names):
        default = getattr(defaults, name)
        if default is not None and not isinstance(default, _SCALARS):
            continue
        key = ENV_PREFIX + name.upper()
        if key in environ:
            data[name] = _coerce(environ[key], data.get(name, default))
    return RunConfig(**data)
