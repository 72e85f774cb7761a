"""
Video representation attack: one sign-gradient step that pushes the source
model's clean representation away from an attack direction, queried against
the hard-label target once per direction.
"""
import itertools
import logging
from typing import Optional, Sequence

import numpy as np
import torch

from attacks.utils import (AttackConfig, AttackResult, check_clean, clip_pixels, clip_to_range,
                           query_loop, sign)
from direction_search import init_basis, next_direction, random_direction
from errors import DegenerateInputError, InterfaceError
from models import FeatureVector, SourceModel, TargetOracle, extract_features, input_gradient

logger = logging.getLogger(__name__)

def log_info(message):
    logger.info(f"[VRA] {message}")

def log_debug(message):
    logger.debug(f"[VRA] {message}")


def _as_tensor(v, dtype=None) -> torch.Tensor:
    if isinstance(v, FeatureVector):
        v = v.values
    if not torch.is_tensor(v):
        v = torch.as_tensor(np.asarray(v))
    v = v.reshape(-1)
    return v.to(dtype) if dtype is not None else v


def cosine_loss(features: torch.Tensor, direction: torch.Tensor) -> torch.Tensor:
    """Differentiable (f·v)/(‖f‖‖v‖)."""
    if features.numel() != direction.numel():
        raise InterfaceError(
            f"Direction has dimension {direction.numel()}, features have {features.numel()}"
        )
    f_norm, v_norm = features.norm(), direction.norm()
    if f_norm == 0 or v_norm == 0:
        raise DegenerateInputError("Cosine loss is undefined for a zero vector")
    return torch.dot(features, direction) / (f_norm * v_norm)


def vra_loss(features, direction) -> float:
    f = _as_tensor(features, torch.float64)
    v = _as_tensor(direction, torch.float64)
    return float(cosine_loss(f, v))


def vra_perturb(model: SourceModel, clip, direction, epsilon: float,
                layers: Optional[Sequence[str]] = None,
                timesteps: Optional[Sequence[int]] = None,
                clip_to_valid_range: bool = True) -> torch.Tensor:
    """Δx = −ε·sign(∇x cos(f(x), v)), optionally shrunk into the pixel range."""
    pixels = clip_pixels(clip).to(model.dtype)
    if epsilon == 0:
        return torch.zeros_like(pixels)
    v = _as_tensor(direction, model.dtype)
    grad = input_gradient(model, pixels, lambda f: cosine_loss(f, v), layers, timesteps)
    delta = -epsilon * sign(grad)
    return clip_to_range(pixels, delta) if clip_to_valid_range else delta


def vra_attack(model: SourceModel, oracle: TargetOracle, clip, true_label: int, cfg: AttackConfig,
               clean_label: Optional[int] = None) -> AttackResult:
    """
    Query loop over seed-deterministic directions. Every candidate is computed
    from the clean clip, so candidate i depends only on direction i.
    """
    pixels = clip_pixels(clip).to(model.dtype)
    skipped, verification = check_clean(oracle, pixels, true_label, cfg, clean_label)
    if skipped is not None:
        return skipped

    anchor = extract_features(model, pixels, cfg.layers, cfg.timesteps)
    if anchor.is_zero:
        raise DegenerateInputError("Clean clip has an all-zero representation")
    basis = init_basis(anchor, cfg.seed)
    draw = next_direction if cfg.direction_mode == "orthogonal" else random_direction

    candidates = (
        vra_perturb(model, pixels, draw(basis), cfg.epsilon, cfg.layers, cfg.timesteps,
                    cfg.clip_to_valid_range)
        for _ in itertools.count()
    )
    result = query_loop(oracle, pixels, true_label, candidates, cfg, verification)
    result.basis_resets = basis.resets
    if basis.resets:
        log_debug(f"Basis reset {basis.resets} time(s) within {result.queries_used} queries")
    return result
