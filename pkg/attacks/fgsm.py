"""
Transfer baselines from the FGSM family, crafted on the source model and
sent to the target in a single query.

Untargeted variants ascend cross-entropy on the source model's own prediction;
LL variants descend cross-entropy toward the source's least-likely class.
"""
import logging
from typing import Optional

import torch
import torch.nn.functional as F

from attacks.utils import AttackConfig, AttackResult, check_clean, clip_pixels, project, query_loop, sign
from errors import ParameterError
from models import SourceModel, TargetOracle

logger = logging.getLogger(__name__)

def log_debug(message):
    logger.debug(f"[FGSM] {message}")

FGSM_VARIANTS = (
    "FGSM", "I-FGSM", "MI-FGSM", "DI2-FGSM",
    "LL-FGSM", "LL-I-FGSM", "LL-MI-FGSM", "LL-DI2-FGSM",
)


def momentum_update(accum: torch.Tensor, grad: torch.Tensor, decay: float) -> torch.Tensor:
    """g_{t+1} = μ·g_t + ∇ / ‖∇‖₁"""
    l1 = grad.abs().sum()
    normalized = grad / l1 if l1 > 0 else grad
    return decay * accum + normalized


def diverse_input(x: torch.Tensor, prob: float, min_scale: float, gen: torch.Generator) -> torch.Tensor:
    """
    With probability `prob`, shrink every frame of an N×T×H×W×3 batch by a
    factor in [min_scale, 1] and zero-pad back to H×W at a random offset.
    """
    if float(torch.rand(1, generator=gen)) >= prob:
        return x
    _, t, h, w, _ = x.shape
    scale = min_scale + (1 - min_scale) * float(torch.rand(1, generator=gen))
    new_h, new_w = max(1, int(round(h * scale))), max(1, int(round(w * scale)))
    resized = F.interpolate(x.permute(0, 4, 1, 2, 3), size=(t, new_h, new_w), mode="nearest")
    top = int(torch.randint(0, h - new_h + 1, (1,), generator=gen))
    left = int(torch.randint(0, w - new_w + 1, (1,), generator=gen))
    padded = F.pad(resized, (left, w - new_w - left, top, h - new_h - top), value=0.0)
    return padded.permute(0, 2, 3, 4, 1)


def _parse_variant(variant: str):
    if variant not in FGSM_VARIANTS:
        raise ParameterError(f"Unknown FGSM variant '{variant}', expected one of {FGSM_VARIANTS}")
    least_likely = variant.startswith("LL-")
    base = variant[3:] if least_likely else variant
    return least_likely, base


def fgsm_family_perturb(model: SourceModel, clip, variant: str, cfg: AttackConfig,
                        n_iters: Optional[int] = None) -> torch.Tensor:
    """
    `n_iters` overrides cfg.fgsm_iters for the iterated variants; the
    single-step variants always take one step of size ε.
    """
    least_likely, base = _parse_variant(variant)
    iterative = base != "FGSM"
    n = (n_iters or cfg.fgsm_iters) if iterative else 1
    alpha = cfg.epsilon / n

    pixels = clip_pixels(clip).to(model.dtype)
    model.eval()
    with torch.no_grad():
        logits = model(pixels.unsqueeze(0))[0]
    label = int(logits.argmin()) if least_likely else int(logits.argmax())
    target = torch.tensor([label])
    direction = -1.0 if least_likely else 1.0

    gen = torch.Generator().manual_seed(cfg.seed)
    delta = torch.zeros_like(pixels)
    accum = torch.zeros_like(pixels)
    for step in range(n):
        d = delta.detach().clone().requires_grad_(True)
        with torch.enable_grad():
            x = (pixels + d).unsqueeze(0)
            if base == "DI2-FGSM":
                x = diverse_input(x, cfg.di_prob, cfg.di_resize_min, gen)
            loss = F.cross_entropy(model(x), target)
            (grad,) = torch.autograd.grad(loss, d)
        if base == "MI-FGSM":
            accum = momentum_update(accum, grad, cfg.mi_decay)
            grad = accum
        delta = project(pixels, delta + direction * alpha * sign(grad), cfg.epsilon, cfg.clip_to_valid_range)
    log_debug(f"{variant}: {n} step(s) toward label {label}")
    return delta.detach()


def fgsm_family_attack(model: SourceModel, oracle: TargetOracle, clip, true_label: int, variant: str,
                       cfg: AttackConfig, clean_label: Optional[int] = None) -> AttackResult:
    _parse_variant(variant)
    pixels = clip_pixels(clip).to(model.dtype)
    skipped, verification = check_clean(oracle, pixels, true_label, cfg, clean_label)
    if skipped is not None:
        return skipped
    delta = fgsm_family_perturb(model, pixels, variant, cfg)
    return query_loop(oracle, pixels, true_label, [delta], cfg, verification)
