"""
Experiment configuration: one YAML/JSON file validated by pydantic, with
dotted-key overrides applied before validation.
"""
import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from attacks import ATTACK_RUNNERS, AttackConfig
from errors import ConfigError, ReportError
from models import ArchSpec, TrainConfig, default_pools
from video_data import OverlapSpec

logger = logging.getLogger(__name__)

def log_config(message):
    logger.info(f"[Config] {message}")

WORKERS_ENV = "VIDEO_ATTACK_WORKERS"
DEFAULT_CONFIG = Path(__file__).parent / "config.yml"


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataSection(Section):
    root: Optional[str] = None  # defaults to <output_dir>/data
    n_source_classes: int = Field(8, ge=1)
    n_target_classes: int = Field(8, ge=1)
    n_common_classes: int = Field(4, ge=0)
    clips_per_class: int = Field(12, ge=1)
    val_clips_per_class: int = Field(25, ge=1)
    frames: int = Field(8, ge=1)
    height: int = Field(32, ge=4)
    width: int = Field(32, ge=4)
    seed: int = 0

    @property
    def shape(self) -> Tuple[int, int, int]:
        return (self.frames, self.height, self.width)

    def overlap_spec(self, n_common: Optional[int] = None) -> OverlapSpec:
        common = self.n_common_classes if n_common is None else n_common
        return OverlapSpec(self.n_source_classes, common, self.seed)


class TrainSection(Section):
    preset: Literal["desk", "full"] = "desk"
    epochs: Optional[int] = Field(None, ge=1)
    peak_lr: Optional[float] = Field(None, gt=0)
    batch_size: Optional[int] = Field(None, ge=1)
    source_block: Literal["conv3d", "r2plus1d"] = "conv3d"
    target_block: Literal["conv3d", "r2plus1d"] = "r2plus1d"
    channels: List[int] = Field([16, 32, 64, 128], min_length=1)
    seed: int = 0
    progress: bool = False


class AttackSection(Section):
    name: str = "vra"
    epsilon: float = Field(4 / 255, ge=0)
    q_max: int = Field(100, ge=1)
    direction_mode: Literal["orthogonal", "random"] = "orthogonal"
    layers: Optional[List[str]] = None
    timesteps: Optional[List[int]] = None
    sparsity_lambda: float = Field(0.0, ge=0)
    n_iters: int = Field(1, ge=1)
    seed: int = 0
    clip_to_valid_range: bool = True
    skip_clean_errors: bool = True
    fgsm_iters: int = Field(5, ge=1)
    mi_decay: float = 1.0
    di_prob: float = Field(0.5, ge=0, le=1)
    di_resize_min: float = Field(0.9, gt=0, le=1)

    @field_validator("name")
    @classmethod
    def _known_attack(cls, v: str) -> str:
        if v not in ATTACK_RUNNERS:
            raise ValueError(f"unknown attack '{v}', available: {sorted(ATTACK_RUNNERS)}")
        return v


class SweepSection(Section):
    attacks: List[str] = ["vra", "vra_random", "random_noise", "targeted_ll", "ll_fgsm"]
    budgets: List[int] = [1, 10, 100]

    @field_validator("attacks")
    @classmethod
    def _known_attacks(cls, v: List[str]) -> List[str]:
        if not v:
            raise ValueError("at least one attack is required")
        unknown = [a for a in v if a not in ATTACK_RUNNERS]
        if unknown:
            raise ValueError(f"unknown attacks {unknown}, available: {sorted(ATTACK_RUNNERS)}")
        return v

    @field_validator("budgets")
    @classmethod
    def _increasing(cls, v: List[int]) -> List[int]:
        if not v or v[0] < 1 or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("budgets must be positive and strictly increasing")
        return v


class OverlapSection(Section):
    levels: List[int] = [0, 2, 4]
    q_max: int = Field(100, ge=1)

    @field_validator("levels")
    @classmethod
    def _min_levels(cls, v: List[int]) -> List[int]:
        if len(v) < 3 or 0 not in v:
            raise ValueError("at least 3 overlap levels including 0 are required")
        return v


class EvalSection(Section):
    output_dir: str = "runs/default"
    max_clips: Optional[int] = Field(None, ge=1)
    workers: Optional[int] = Field(None, ge=1)
    viz_clips: int = Field(2, ge=0)
    amplification: float = Field(32.0, gt=0)


class ExperimentConfig(Section):
    data: DataSection = DataSection()
    train: TrainSection = TrainSection()
    attack: AttackSection = AttackSection()
    sweep: SweepSection = SweepSection()
    overlap: OverlapSection = OverlapSection()
    eval: EvalSection = EvalSection()

    @property
    def output_dir(self) -> Path:
        return Path(self.eval.output_dir)

    @property
    def data_root(self) -> Path:
        return Path(self.data.root) if self.data.root else self.output_dir / "data"

    @property
    def models_dir(self) -> Path:
        return self.output_dir / "models"

    def attack_config(self, **overrides) -> AttackConfig:
        values = self.attack.model_dump(exclude={"name"})
        values.update(overrides)
        return AttackConfig(**values)

    def train_config(self) -> TrainConfig:
        overrides = {k: v for k, v in (("epochs", self.train.epochs), ("peak_lr", self.train.peak_lr),
                                        ("batch_size", self.train.batch_size)) if v is not None}
        overrides.update(seed=self.train.seed, frames_per_clip=self.data.frames, progress=self.train.progress)
        preset = TrainConfig.full if self.train.preset == "full" else TrainConfig.desk
        return preset(**overrides)

    def arch(self, role: str, n_classes: int) -> ArchSpec:
        block = self.train.source_block if role == "source" else self.train.target_block
        channels = tuple(self.train.channels)
        return ArchSpec(n_classes=n_classes, channels=channels, block_type=block, pools=default_pools(len(channels)))

    def workers(self) -> int:
        if self.eval.workers:
            return self.eval.workers
        load_dotenv()
        try:
            return max(1, int(os.environ.get(WORKERS_ENV, "1")))
        except ValueError:
            raise ConfigError(f"expected an integer, got '{os.environ[WORKERS_ENV]}'", key=WORKERS_ENV) from None

    def hash(self) -> str:
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


def apply_override(raw: Dict[str, Any], assignment: str) -> Dict[str, Any]:
    """Set `a.b.c=value` in a nested mapping; the value is parsed as a YAML scalar."""
    if "=" not in assignment:
        raise ConfigError(f"override '{assignment}' must look like dotted.key=value")
    key, value = assignment.split("=", 1)
    parts = key.strip().split(".")
    if not all(parts):
        raise ConfigError("empty path component", key=key)
    node = raw
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError("cannot descend into a scalar", key=key)
        node = child
    try:
        node[parts[-1]] = yaml.safe_load(value)
    except yaml.YAMLError as e:
        raise ConfigError(f"unparseable value '{value}': {e}", key=key) from None
    return raw


def validate_config(raw: Dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        key = ".".join(str(p) for p in first["loc"])
        raise ConfigError(first["msg"], key=key) from None


def load_config(path: Optional[Union[str, Path]] = None, overrides: Sequence[str] = ()) -> ExperimentConfig:
    """Read a YAML or JSON config (both go through yaml.safe_load) and apply overrides."""
    raw: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            with open(path, "r") as f:
                raw = yaml.safe_load(f) or {}
        except OSError as e:
            raise ConfigError(f"cannot read config: {e.strerror}", key=str(path)) from None
        except yaml.YAMLError as e:
            raise ConfigError(f"invalid YAML/JSON: {e}", key=str(path)) from None
        if not isinstance(raw, dict):
            raise ConfigError("top level must be a mapping", key=str(path))
        log_config(f"Loaded configuration from {path}")
    for assignment in overrides:
        apply_override(raw, assignment)
    return validate_config(raw)


def write_resolved(cfg: ExperimentConfig, version: str) -> Path:
    """Record the post-override config, its hash and the tool version in the output dir."""
    out = cfg.output_dir
    resolved = out / "resolved_config.json"
    try:
        out.mkdir(parents=True, exist_ok=True)
        with open(resolved, "w") as f:
            json.dump({"config": cfg.model_dump(mode="json"), "config_hash": cfg.hash()}, f, indent=2)
        (out / "VERSION").write_text(f"{version}\n")
    except OSError as e:
        raise ReportError(f"Cannot write to {out}: {e.strerror}") from None
    return resolved
