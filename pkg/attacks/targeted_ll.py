"""
Targeted LL-FGSM query baseline: one targeted sign step per source class,
least likely class first.
"""
import logging
from typing import List, Optional

import torch
import torch.nn.functional as F

from attacks.utils import AttackConfig, AttackResult, check_clean, clip_pixels, clip_to_range, query_loop, sign
from errors import ParameterError
from models import SourceModel, TargetOracle

logger = logging.getLogger(__name__)


def class_visit_order(model: SourceModel, clip) -> List[int]:
    pixels = clip_pixels(clip).to(model.dtype)
    model.eval()
    with torch.no_grad():
        probs = F.softmax(model(pixels.unsqueeze(0))[0], dim=0)
    return [int(c) for c in torch.argsort(probs, stable=True)]


def targeted_step(model: SourceModel, pixels: torch.Tensor, target_class: int, cfg: AttackConfig) -> torch.Tensor:
    x = pixels.detach().clone().requires_grad_(True)
    with torch.enable_grad():
        loss = F.cross_entropy(model(x.unsqueeze(0)), torch.tensor([target_class]))
        (grad,) = torch.autograd.grad(loss, x)
    delta = -cfg.epsilon * sign(grad)
    return clip_to_range(pixels, delta) if cfg.clip_to_valid_range else delta


def targeted_ll_query_attack(model: SourceModel, oracle: TargetOracle, clip, true_label: int,
                             cfg: AttackConfig, clean_label: Optional[int] = None) -> AttackResult:
    pixels = clip_pixels(clip).to(model.dtype)
    order = class_visit_order(model, pixels)
    if cfg.q_max > len(order):
        raise ParameterError(
            f"q_max={cfg.q_max} exceeds the {len(order)} source classes available to targeted LL-FGSM"
        )
    skipped, verification = check_clean(oracle, pixels, true_label, cfg, clean_label)
    if skipped is not None:
        return skipped
    model.eval()
    candidates = (targeted_step(model, pixels, c, cfg) for c in order)
    return query_loop(oracle, pixels, true_label, candidates, cfg, verification)
