"""Random ±ε sign-noise baseline; never looks at the source model."""
import logging
from typing import Optional

import torch

from attacks.utils import AttackConfig, AttackResult, check_clean, clip_pixels, clip_to_range, query_loop
from models import TargetOracle

logger = logging.getLogger(__name__)


def random_sign_noise(pixels: torch.Tensor, epsilon: float, gen: torch.Generator) -> torch.Tensor:
    signs = torch.randint(0, 2, pixels.shape, generator=gen).to(pixels.dtype) * 2 - 1
    return epsilon * signs


def random_perturbation_attack(oracle: TargetOracle, clip, true_label: int, cfg: AttackConfig,
                               clean_label: Optional[int] = None) -> AttackResult:
    pixels = clip_pixels(clip)
    skipped, verification = check_clean(oracle, pixels, true_label, cfg, clean_label)
    if skipped is not None:
        return skipped
    gen = torch.Generator().manual_seed(cfg.seed)

    def candidates():
        while True:
            delta = random_sign_noise(pixels, cfg.epsilon, gen)
            yield clip_to_range(pixels, delta) if cfg.clip_to_valid_range else delta

    return query_loop(oracle, pixels, true_label, candidates(), cfg, verification)
