"""
Shared stubs for the test modules: tiny linear and constant models, clip
factories and trained transfer pairs.
"""
from functools import lru_cache
from math import prod
from typing import Dict, Sequence, Tuple

import torch
import torch.nn as nn

from config import validate_config
from errors import InterfaceError
from models import ArchSpec, SourceModel, TargetOracle, train_model
from video_data import LabelOntology, VideoClip, generate_synthetic

TINY_ARCH_CHANNELS = (4, 8)
TINY_ARCH_POOLS = ((1, 2, 2), None)


class LinearVideoModel(SourceModel):
    """features = W·vec(x) + b, logits = H·features + c; one layer named 'linear'."""
    feature_layer_ids = ("linear",)

    def __init__(self, in_shape: Tuple[int, int, int], feature_dim: int, n_classes: int, seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        n_in = prod(in_shape) * 3
        self.proj = nn.Linear(n_in, feature_dim).double()
        self.head = nn.Linear(feature_dim, n_classes).double()
        with torch.no_grad():
            self.proj.weight.copy_(torch.randn(feature_dim, n_in, generator=gen, dtype=torch.float64))
            self.proj.bias.copy_(torch.randn(feature_dim, generator=gen, dtype=torch.float64))
            self.head.weight.copy_(torch.randn(n_classes, feature_dim, generator=gen, dtype=torch.float64))
            self.head.bias.zero_()

    def layer_outputs(self, x: torch.Tensor, layers: Sequence[str]) -> Dict[str, torch.Tensor]:
        unknown = set(layers) - set(self.feature_layer_ids)
        if unknown:
            raise InterfaceError(f"Unknown layers {sorted(unknown)}")
        h = self.proj(x.flatten(1))
        return {"linear": h[:, :, None, None, None]}

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.proj(x.flatten(1)))


class LinearClassifier(nn.Module):
    """Plain linear target over flattened pixels."""

    def __init__(self, in_shape: Tuple[int, int, int], n_classes: int, seed: int = 1):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.weight = nn.Parameter(torch.randn(n_classes, prod(in_shape) * 3, generator=gen, dtype=torch.float64))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x.flatten(1).to(torch.float64) @ self.weight.T


class ConstantClassifier(nn.Module):
    """Always predicts `label`."""

    def __init__(self, label: int, n_classes: int = 4):
        super().__init__()
        self.label = label
        self.n_classes = n_classes

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        logits = torch.zeros(x.shape[0], self.n_classes, dtype=torch.float64)
        logits[:, self.label] = 1.0
        return logits


class CleanOnlyClassifier(nn.Module):
    """Predicts `label` on the reference clip and `label + 1` on anything else."""

    def __init__(self, reference: torch.Tensor, label: int, n_classes: int = 4):
        super().__init__()
        self.reference = reference.to(torch.float64)
        self.label = label
        self.n_classes = n_classes

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        logits = torch.zeros(x.shape[0], self.n_classes, dtype=torch.float64)
        for i, clip in enumerate(x):
            same = torch.equal(clip.to(torch.float64), self.reference)
            logits[i, self.label if same else (self.label + 1) % self.n_classes] = 1.0
        return logits


class IdentityVideoModel(SourceModel):
    """Feature vector is the flattened clip itself."""
    feature_layer_ids = ("pixels",)

    def layer_outputs(self, x, layers):
        return {"pixels": x.flatten(1)[:, :, None, None, None]}

    def forward(self, x):
        return x.flatten(1)


class FixedLogitsModel(SourceModel):
    """Ignores its input; predicts log(probs)."""
    feature_layer_ids = ("const",)

    def __init__(self, probs: Sequence[float]):
        super().__init__()
        self.register_buffer("logits", torch.log(torch.tensor(probs, dtype=torch.float64)))

    def layer_outputs(self, x, layers):
        return {"const": self.logits.expand(x.shape[0], -1)[:, :, None, None, None]}

    def forward(self, x):
        return self.logits.expand(x.shape[0], -1) + 0 * x.flatten(1).sum(dim=1, keepdim=True)


def make_clip(shape: Tuple[int, int, int] = (2, 4, 4), seed: int = 0, label: int = 0,
              low: float = 0.1, high: float = 0.9, dtype=torch.float64, clip_id: str = "clip") -> VideoClip:
    gen = torch.Generator().manual_seed(seed)
    pixels = low + (high - low) * torch.rand(*shape, 3, generator=gen, dtype=torch.float64)
    return VideoClip(pixels.to(dtype), label, f"{clip_id}-{seed}")


def always_fooled_oracle(label: int, reference: VideoClip, query_limit=None) -> TargetOracle:
    return TargetOracle(CleanOnlyClassifier(reference.pixels, label), query_limit=query_limit)


def never_fooled_oracle(label: int, query_limit=None) -> TargetOracle:
    return TargetOracle(ConstantClassifier(label), query_limit=query_limit)


def tiny_arch(n_classes: int, block_type: str = "conv3d") -> ArchSpec:
    return ArchSpec(n_classes=n_classes, channels=TINY_ARCH_CHANNELS, block_type=block_type,
                    pools=TINY_ARCH_POOLS)


def ontology(n: int, name: str = "toy") -> LabelOntology:
    return LabelOntology(tuple(f"class_{i}" for i in range(n)), name)


@lru_cache(maxsize=None)
def desk_transfer_pair(n_common: int = 4):
    """Source and target trained with the default desk config, plus the target validation split."""
    cfg = validate_config({"data": {"n_common_classes": n_common}})
    spec, shape, n_target = cfg.data.overlap_spec(), cfg.data.shape, cfg.data.n_target_classes
    src_train, tgt_train = generate_synthetic(spec, n_target, cfg.data.clips_per_class, shape)
    src_val, tgt_val = generate_synthetic(spec, n_target, cfg.data.val_clips_per_class, shape, split="val")
    source = train_model(src_train, cfg.arch("source", len(src_train.ontology)), cfg.train_config(), src_val)
    target = train_model(tgt_train, cfg.arch("target", n_target), cfg.train_config(), tgt_val)
    return source, target, tgt_val
