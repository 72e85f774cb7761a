"""
Sparsity-constrained VRA: n accumulated sign steps of size ε/n on the cosine
loss plus an L1 penalty on the running perturbation.
"""
import itertools
import logging
from typing import Optional

import torch

from attacks.utils import AttackConfig, AttackResult, check_clean, clip_pixels, project, query_loop, sign
from attacks.vra import _as_tensor, cosine_loss
from direction_search import init_basis, next_direction, random_direction
from errors import DegenerateInputError
from models import SourceModel, TargetOracle, extract_features, feature_tensor

logger = logging.getLogger(__name__)


def sparse_loss(model: SourceModel, pixels: torch.Tensor, delta: torch.Tensor, v: torch.Tensor,
                cfg: AttackConfig) -> torch.Tensor:
    """cos(f(x + δ), v) + λ·‖δ‖₁ as a differentiable scalar."""
    features = feature_tensor(model, (pixels + delta).unsqueeze(0), cfg.layers, cfg.timesteps)[0]
    return cosine_loss(features, v) + cfg.sparsity_lambda * delta.abs().sum()


def sparse_vra_perturb(model: SourceModel, clip, direction, cfg: AttackConfig) -> torch.Tensor:
    pixels = clip_pixels(clip).to(model.dtype)
    v = _as_tensor(direction, model.dtype)
    alpha = cfg.epsilon / cfg.n_iters
    delta = torch.zeros_like(pixels)
    if cfg.epsilon == 0:
        return delta
    model.eval()
    for _ in range(cfg.n_iters):
        d = delta.detach().clone().requires_grad_(True)
        with torch.enable_grad():
            (grad,) = torch.autograd.grad(sparse_loss(model, pixels, d, v, cfg), d)
        delta = project(pixels, delta - alpha * sign(grad), cfg.epsilon, cfg.clip_to_valid_range)
    return delta.detach()


def sparse_vra_attack(model: SourceModel, oracle: TargetOracle, clip, true_label: int,
                      cfg: AttackConfig, clean_label: Optional[int] = None) -> AttackResult:
    pixels = clip_pixels(clip).to(model.dtype)
    skipped, verification = check_clean(oracle, pixels, true_label, cfg, clean_label)
    if skipped is not None:
        return skipped

    anchor = extract_features(model, pixels, cfg.layers, cfg.timesteps)
    if anchor.is_zero:
        raise DegenerateInputError("Clean clip has an all-zero representation")
    basis = init_basis(anchor, cfg.seed)
    draw = next_direction if cfg.direction_mode == "orthogonal" else random_direction

    candidates = (sparse_vra_perturb(model, pixels, draw(basis), cfg) for _ in itertools.count())
    result = query_loop(oracle, pixels, true_label, candidates, cfg, verification)
    result.basis_resets = basis.resets
    return result
