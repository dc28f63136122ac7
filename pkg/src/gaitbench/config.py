"""Single-file JSON configuration with one block per module."""
from __future__ import annotations

import json
import os
import re
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .backbones import ArchConfig
from .dataset import DatasetSpec
from .synth import VIEWS
from .training import TrainConfig, TrainingError

SEED_ENV = "GAITBENCH_SEED"


class ConfigError(ValueError):
    pass


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DatasetBlock(_Block):
    train_subjects: int = Field(24, ge=1)
    test_subjects: int = Field(8, ge=1)
    train_subject_ids: list[int] | None = None
    test_subject_ids: list[int] | None = None
    views: list[int] = Field(default_factory=lambda: list(VIEWS))
    conditions: dict[Literal["NM", "BG", "CL"], int] = Field(default_factory=lambda: {"NM": 2, "BG": 1, "CL": 1})
    fps: float = Field(30.0, gt=0)
    num_frames: int = Field(72, ge=2)
    height: int = Field(64, ge=8)
    width: int = Field(44, ge=8)

    @field_validator("views")
    @classmethod
    def _on_grid(cls, v):
        bad = [x for x in v if x not in VIEWS]
        if bad:
            raise ValueError(f"views {bad} are not on the 0..180 step 18 grid")
        if not v:
            raise ValueError("at least one view is required")
        return v

    def to_spec(self):
        return DatasetSpec(
            train_subjects=self.train_subjects, test_subjects=self.test_subjects,
            train_subject_ids=self.train_subject_ids, test_subject_ids=self.test_subject_ids,
            views=list(self.views), takes=dict(self.conditions), num_frames=self.num_frames,
            fps=self.fps, height=self.height, width=self.width,
        )


class ArchBlock(_Block):
    channels: list[int] = Field(default_factory=lambda: [16, 32, 64], min_length=3, max_length=3)
    strips: int = Field(4, ge=1)
    dhs_channels: list[int] = Field(default_factory=lambda: [8, 16], min_length=2, max_length=2)
    dhs_dim: int = Field(64, ge=1)
    head_hidden: int = Field(256, ge=1)
    embedding_dim: int = Field(128, ge=1)
    dhs_window: int = Field(40, ge=2)
    dhs_stride: int | None = Field(None, ge=1)
    mode: Literal["indoor", "outdoor"] = "indoor"

    def to_arch(self, height, width):
        return ArchConfig(**self.model_dump(), height=height, width=width)


class TrainBlock(_Block):
    margin: float = Field(0.2, gt=0)
    lr: float = Field(1e-3, gt=0)
    optimizer: Literal["adam", "sgd"] = "adam"
    iterations: int = Field(2000, ge=0)
    P: int = Field(8, ge=2)
    K: int = Field(4, ge=2)
    frames_per_clip: int = Field(30, ge=1)
    checkpoint_every: int = Field(0, ge=0)
    knee: Literal["gt", "heuristic"] = "gt"
    branches: list[Literal["rgb", "silhouette"]] = Field(default_factory=lambda: ["rgb", "silhouette"], min_length=1)
    prefetch: bool = False
    reduction: Literal["all", "positive"] = "all"

    def to_train(self, seed):
        return TrainConfig(seed=seed, **self.model_dump())


class EvalBlock(_Block):
    kinds: list[Literal["gait", "rgb", "ensemble"]] = Field(default_factory=lambda: ["ensemble"])
    exclude_identical_view: bool = True


class PathsBlock(_Block):
    data: str | None = None
    run: str | None = None
    results: str | None = None


class GlobalConfig(_Block):
    seed: int = Field(0, ge=0)
    dataset: DatasetBlock = Field(default_factory=DatasetBlock)
    architecture: ArchBlock = Field(default_factory=ArchBlock)
    training: TrainBlock = Field(default_factory=TrainBlock)
    eval: EvalBlock = Field(default_factory=EvalBlock)
    paths: PathsBlock = Field(default_factory=PathsBlock)

    def arch(self):
        return self.architecture.to_arch(self.dataset.height, self.dataset.width)

    def train_config(self):
        return self.training.to_train(self.seed)


def _line_of(text, loc):
    """Best-effort line number of the innermost key in ``loc``."""
    keys = [k for k in loc if isinstance(k, str)]
    if not keys:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(keys[-1]), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def parse_config(text, source="<config>"):
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    try:
        cfg = GlobalConfig.model_validate(raw)
    except ValidationError as exc:
        msgs = []
        for err in exc.errors():
            field = ".".join(str(p) for p in err["loc"])
            line = _line_of(text, err["loc"])
            where = f"{source}:{line}" if line else source
            msgs.append(f"{where}: {field}: {err['msg']}")
        raise ConfigError("\n".join(msgs)) from None
    try:  # cross-field checks owned by the modules themselves
        cfg.arch()
        cfg.train_config()
        cfg.dataset.to_spec().subject_ids()
    except (ValueError, TrainingError) as exc:
        raise ConfigError(f"{source}: {exc}") from None
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            cfg.seed = int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from None
    return cfg


def load_config(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), str(path))
