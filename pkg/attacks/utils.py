"""
Shared pieces of every attack: configuration, result record, L∞/pixel-range
projection and the hard-label query loop.
"""
import itertools
import logging
from dataclasses import asdict, dataclass, replace
from typing import Dict, Iterable, Optional, Tuple

import torch

from errors import BudgetExceededError, ParameterError
from models import TargetOracle
from video_data import VideoClip

logger = logging.getLogger(__name__)

def log_debug(message):
    logger.debug(f"[Attack] {message}")

DIRECTION_MODES = ("orthogonal", "random")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 4 / 255
    q_max: int = 100
    direction_mode: str = "orthogonal"
    layers: Optional[Tuple[str, ...]] = None  # None: penultimate block
    timesteps: Optional[Tuple[int, ...]] = None  # None: full temporal pooling
    sparsity_lambda: float = 0.0
    n_iters: int = 1  # sparse variant
    seed: int = 0
    clip_to_valid_range: bool = True
    skip_clean_errors: bool = True
    # FGSM-family baselines
    fgsm_iters: int = 5
    mi_decay: float = 1.0
    di_prob: float = 0.5
    di_resize_min: float = 0.9

    def __post_init__(self):
        if self.layers is not None:
            object.__setattr__(self, "layers", tuple(self.layers))
        if self.timesteps is not None:
            object.__setattr__(self, "timesteps", tuple(self.timesteps))
        if self.epsilon < 0:
            raise ParameterError(f"epsilon must be non-negative, got {self.epsilon}")
        if self.q_max < 1:
            raise ParameterError(f"q_max must be at least 1, got {self.q_max}")
        if self.n_iters < 1 or self.fgsm_iters < 1:
            raise ParameterError("n_iters and fgsm_iters must be at least 1")
        if self.sparsity_lambda < 0:
            raise ParameterError("sparsity_lambda must be non-negative")
        if self.direction_mode not in DIRECTION_MODES:
            raise ParameterError(f"direction_mode must be one of {DIRECTION_MODES}")
        if not 0 <= self.di_prob <= 1 or not 0 < self.di_resize_min <= 1:
            raise ParameterError("di_prob must lie in [0, 1] and di_resize_min in (0, 1]")

    def with_overrides(self, **changes) -> "AttackConfig":
        return replace(self, **changes)

    def to_dict(self) -> Dict:
        data = asdict(self)
        for key in ("layers", "timesteps"):
            if data[key] is not None:
                data[key] = list(data[key])
        return data


@dataclass
class AttackResult:
    success: bool
    queries_used: int
    perturbation: Optional[torch.Tensor]
    final_label: Optional[int]
    skipped_clean_error: bool = False
    verification_queries: int = 0
    basis_resets: int = 0
    error: Optional[str] = None


def clip_pixels(clip) -> torch.Tensor:
    return clip.pixels if isinstance(clip, VideoClip) else clip


def sign(t: torch.Tensor) -> torch.Tensor:
    """Elementwise sign with sign(0) = 0."""
    return torch.sign(t)


def clip_to_range(pixels: torch.Tensor, delta: torch.Tensor) -> torch.Tensor:
    """Shrink `delta` elementwise so pixels + delta stays inside [0, 1]."""
    return torch.clamp(delta, min=-pixels, max=1 - pixels)


def project(pixels: torch.Tensor, delta: torch.Tensor, epsilon: float, clip_range: bool) -> torch.Tensor:
    delta = torch.clamp(delta, -epsilon, epsilon)
    return clip_to_range(pixels, delta) if clip_range else delta


def adversarial_input(pixels: torch.Tensor, delta: torch.Tensor, clip_range: bool) -> torch.Tensor:
    x_adv = pixels + delta
    return x_adv.clamp(0, 1) if clip_range else x_adv


def check_clean(oracle: TargetOracle, pixels: torch.Tensor, true_label: int, cfg: AttackConfig,
                clean_label: Optional[int]) -> Tuple[Optional[AttackResult], int]:
    """
    Returns a skip result when the clean clip is already misclassified, plus
    the number of verification queries charged (0 when `clean_label` is cached).
    """
    if not cfg.skip_clean_errors:
        return None, 0
    verification = 0
    if clean_label is None:
        clean_label = oracle.query(pixels)
        verification = 1
    if clean_label != true_label:
        return AttackResult(False, 0, None, clean_label, skipped_clean_error=True,
                            verification_queries=verification), verification
    return None, verification


def query_loop(oracle: TargetOracle, pixels: torch.Tensor, true_label: int,
               candidates: Iterable[torch.Tensor], cfg: AttackConfig,
               verification_queries: int = 0) -> AttackResult:
    """Query candidates in order until the label flips or q_max queries are spent."""
    queries = 0
    delta = None
    label = None
    for delta in itertools.islice(candidates, cfg.q_max):
        try:
            label = oracle.query(adversarial_input(pixels, delta, cfg.clip_to_valid_range))
        except BudgetExceededError as e:
            log_debug(f"Oracle budget exhausted after {queries} queries")
            return AttackResult(False, queries, delta, label, verification_queries=verification_queries,
                                error=str(e))
        queries += 1
        if label != true_label:
            return AttackResult(True, queries, delta, label, verification_queries=verification_queries)
    return AttackResult(False, queries, delta, label, verification_queries=verification_queries)
