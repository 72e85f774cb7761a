"""
Source and target video classifiers.

A SourceModel is a white-box network: the attacker reads its intermediate
feature maps and differentiates through it. A TargetOracle wraps a classifier
the attacker can only query for the top-1 label, under a query budget.
"""
import logging
import math
import pickle
import threading
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import torch
import torch.nn as nn
import torch.nn.functional as F
from tqdm import tqdm

from errors import BudgetExceededError, CheckpointError, InterfaceError, ParameterError, TrainingError
from video_data import Dataset, LabelOntology, VideoClip

logger = logging.getLogger(__name__)

def log_info(message):
    logger.info(f"[Model] {message}")

def log_debug(message):
    logger.debug(f"[Model] {message}")

PixelInput = Union[VideoClip, torch.Tensor]
BLOCK_TYPES = ("conv3d", "r2plus1d")
DEFAULT_POOLS = ((1, 2, 2), (2, 2, 2), (1, 2, 2), None)


def default_pools(n_blocks: int) -> Tuple[Optional[Tuple[int, int, int]], ...]:
    if n_blocks == len(DEFAULT_POOLS):
        return DEFAULT_POOLS
    return ((1, 2, 2),) * (n_blocks - 1) + (None,)


@dataclass(frozen=True)
class ArchSpec:
    """Layer list of the miniature 3D CNN: four blocks, global pool, linear head."""
    n_classes: int
    channels: Tuple[int, ...] = (16, 32, 64, 128)
    block_type: str = "conv3d"
    # (T, H, W) average-pool kernel applied after each block; None keeps resolution.
    pools: Tuple[Optional[Tuple[int, int, int]], ...] = DEFAULT_POOLS

    def __post_init__(self):
        if self.n_classes < 1:
            raise ParameterError("n_classes must be at least 1")
        if self.block_type not in BLOCK_TYPES:
            raise ParameterError(f"block_type must be one of {BLOCK_TYPES}, got '{self.block_type}'")
        if len(self.channels) != len(self.pools):
            raise ParameterError("channels and pools must list the same number of blocks")

    def to_dict(self) -> Dict:
        return {
            "n_classes": self.n_classes,
            "channels": list(self.channels),
            "block_type": self.block_type,
            "pools": [list(p) if p else None for p in self.pools],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "ArchSpec":
        return cls(
            n_classes=int(data["n_classes"]),
            channels=tuple(data["channels"]),
            block_type=data.get("block_type", "conv3d"),
            pools=tuple(tuple(p) if p else None for p in data["pools"]),
        )


class SourceModel(nn.Module):
    """
    Classifier over N×T×H×W×3 pixel batches that also exposes named
    intermediate feature maps of shape N×C×T'×H'×W'.
    """
    feature_layer_ids: Tuple[str, ...] = ()

    def __init__(self):
        super().__init__()
        self.ontology: Optional[LabelOntology] = None
        self.val_accuracy: Optional[float] = None
        self.training_log: List[float] = []

    @property
    def penultimate_layer(self) -> str:
        return self.feature_layer_ids[-1]

    @property
    def dtype(self) -> torch.dtype:
        param = next(self.parameters(), None)
        return param.dtype if param is not None else torch.get_default_dtype()

    def layer_outputs(self, x: torch.Tensor, layers: Sequence[str]) -> Dict[str, torch.Tensor]:
        raise NotImplementedError

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError


def _block(block_type: str, c_in: int, c_out: int, pool: Optional[Tuple[int, int, int]]) -> nn.Sequential:
    if block_type == "conv3d":
        layers = [
            nn.Conv3d(c_in, c_out, kernel_size=3, padding=1, bias=False),
            nn.BatchNorm3d(c_out),
            nn.ReLU(inplace=True),
        ]
    else:
        # (2+1)D factorisation: spatial 1×3×3 then temporal 3×1×1
        mid = max(c_in, c_out // 2)
        layers = [
            nn.Conv3d(c_in, mid, kernel_size=(1, 3, 3), padding=(0, 1, 1), bias=False),
            nn.BatchNorm3d(mid),
            nn.ReLU(inplace=True),
            nn.Conv3d(mid, c_out, kernel_size=(3, 1, 1), padding=(1, 0, 0), bias=False),
            nn.BatchNorm3d(c_out),
            nn.ReLU(inplace=True),
        ]
    if pool:
        layers.append(nn.AvgPool3d(kernel_size=pool, stride=pool))
    return nn.Sequential(*layers)


class VideoCNN(SourceModel):
    def __init__(self, arch: ArchSpec):
        super().__init__()
        self.arch = arch
        self.feature_layer_ids = tuple(f"block{i + 1}" for i in range(len(arch.channels)))
        blocks = []
        c_in = 3
        for c_out, pool in zip(arch.channels, arch.pools):
            blocks.append(_block(arch.block_type, c_in, c_out, pool))
            c_in = c_out
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Linear(c_in, arch.n_classes)

    @staticmethod
    def _channels_first(x: torch.Tensor) -> torch.Tensor:
        # N×T×H×W×3 -> N×3×T×H×W, centred around mid-grey
        return (x - 0.5).permute(0, 4, 1, 2, 3)

    def layer_outputs(self, x: torch.Tensor, layers: Sequence[str]) -> Dict[str, torch.Tensor]:
        wanted = set(layers)
        unknown = wanted - set(self.feature_layer_ids)
        if unknown:
            raise InterfaceError(f"Unknown layer id(s) {sorted(unknown)}; available: {list(self.feature_layer_ids)}")
        outputs = {}
        h = self._channels_first(x)
        for name, block in zip(self.feature_layer_ids, self.blocks):
            h = block(h)
            if name in wanted:
                outputs[name] = h
                if len(outputs) == len(wanted):
                    break
        return outputs

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.layer_outputs(x, [self.penultimate_layer])[self.penultimate_layer]
        return self.head(h.mean(dim=(2, 3, 4)))


@dataclass
class FeatureVector:
    values: torch.Tensor  # 1-D
    layer_ids: Tuple[str, ...]
    timestep_ids: Optional[Tuple[int, ...]]  # None: full temporal pooling

    @property
    def dim(self) -> int:
        return self.values.numel()

    def norm(self) -> float:
        return float(self.values.norm())

    @property
    def is_zero(self) -> bool:
        return bool((self.values == 0).all())


def _as_pixels(model: nn.Module, clip: PixelInput) -> torch.Tensor:
    pixels = clip.pixels if isinstance(clip, VideoClip) else clip
    dtype = model.dtype if isinstance(model, SourceModel) else pixels.dtype
    return pixels.to(dtype)


def feature_tensor(
    model: SourceModel,
    x: torch.Tensor,
    layers: Optional[Sequence[str]] = None,
    timesteps: Optional[Sequence[int]] = None,
    normalize: bool = True,
) -> torch.Tensor:
    """
    Differentiable N×d representation of an N×T×H×W×3 batch.

    Each requested layer is spatially average-pooled, then either averaged over
    time (timesteps=None) or sliced at each requested timestep. Slices are
    concatenated layer-major and L2-normalised once; an all-zero vector stays zero.
    """
    layers = tuple(layers) if layers else (model.penultimate_layer,)
    outputs = model.layer_outputs(x, layers)
    slices = []
    for layer in layers:
        pooled = outputs[layer].mean(dim=(3, 4))  # N×C×T'
        if timesteps is None:
            slices.append(pooled.mean(dim=2))
            continue
        for t in timesteps:
            if not 0 <= t < pooled.shape[2]:
                raise InterfaceError(
                    f"Timestep {t} out of range for layer {layer} with temporal extent {pooled.shape[2]}"
                )
            slices.append(pooled[:, :, t])
    features = torch.cat(slices, dim=1)
    return F.normalize(features, dim=1) if normalize else features


def extract_features(
    model: SourceModel,
    clip: PixelInput,
    layers: Optional[Sequence[str]] = None,
    timesteps: Optional[Sequence[int]] = None,
) -> FeatureVector:
    layers = tuple(layers) if layers else (model.penultimate_layer,)
    model.eval()
    with torch.no_grad():
        values = feature_tensor(model, _as_pixels(model, clip).unsqueeze(0), layers, timesteps)[0]
    return FeatureVector(values, layers, tuple(timesteps) if timesteps is not None else None)


def input_gradient(
    model: SourceModel,
    clip: PixelInput,
    scalar_loss: Callable[[torch.Tensor], torch.Tensor],
    layers: Optional[Sequence[str]] = None,
    timesteps: Optional[Sequence[int]] = None,
    normalize: bool = True,
) -> torch.Tensor:
    """
    d scalar_loss(features(x)) / d pixels, shaped like the clip.

    `scalar_loss` receives the 1-D feature vector of the clip. Model
    parameters are never touched.
    """
    model.eval()
    x = _as_pixels(model, clip).detach().clone().requires_grad_(True)
    with torch.enable_grad():
        features = feature_tensor(model, x.unsqueeze(0), layers, timesteps, normalize)[0]
        loss = scalar_loss(features)
        if not torch.is_tensor(loss):
            loss = torch.as_tensor(loss, dtype=x.dtype)
        if loss.numel() != 1:
            raise InterfaceError(f"Loss must be scalar, got shape {tuple(loss.shape)}")
        if not loss.requires_grad:
            return torch.zeros_like(x)
        (grad,) = torch.autograd.grad(loss.reshape(()), x, allow_unused=True)
    return torch.zeros_like(x) if grad is None else grad.detach()


def predict_labels(model: nn.Module, pixels: torch.Tensor, batch_size: int = 64) -> torch.Tensor:
    model.eval()
    dtype = model.dtype if isinstance(model, SourceModel) else pixels.dtype
    preds = []
    with torch.no_grad():
        for start in range(0, len(pixels), batch_size):
            preds.append(model(pixels[start:start + batch_size].to(dtype)).argmax(dim=1))
    return torch.cat(preds) if preds else torch.empty(0, dtype=torch.long)


def evaluate_accuracy(model: nn.Module, dataset: Dataset) -> float:
    if len(dataset) == 0:
        return 0.0
    pixels, labels = dataset.stacked()
    return float((predict_labels(model, pixels) == labels).float().mean())


class TargetOracle:
    """
    Hard-label view of a classifier. Only the argmax class index crosses this
    boundary, and every call is counted against an optional budget.
    """

    def __init__(self, classifier: Callable[[torch.Tensor], torch.Tensor],
                 query_limit: Optional[int] = None, name: str = "target"):
        if query_limit is not None and query_limit < 0:
            raise ParameterError("query_limit must be non-negative")
        self._classifier = classifier
        self._lock = threading.Lock()
        self._count = 0
        self.query_limit = query_limit
        self.name = name

    @property
    def query_count(self) -> int:
        return self._count

    @property
    def remaining(self) -> Optional[int]:
        return None if self.query_limit is None else self.query_limit - self._count

    def fork(self, query_limit: Optional[int] = None) -> "TargetOracle":
        """Independent view over the same classifier with its own counter."""
        return TargetOracle(self._classifier, query_limit, self.name)

    def query(self, clip: PixelInput) -> int:
        with self._lock:
            if self.query_limit is not None and self._count >= self.query_limit:
                raise BudgetExceededError(self.query_limit)
            self._count += 1
        pixels = clip.pixels if isinstance(clip, VideoClip) else clip
        classifier = self._classifier
        dtype = classifier.dtype if isinstance(classifier, SourceModel) else pixels.dtype
        with torch.no_grad():
            logits = classifier(pixels.to(dtype).unsqueeze(0))
        return int(logits.argmax(dim=1)[0])


def hard_label_query(oracle: TargetOracle, clip: PixelInput) -> int:
    return oracle.query(clip)


@dataclass
class TrainConfig:
    epochs: int = 30
    peak_lr: float = 0.01
    warmup_epochs: int = 3
    batch_size: int = 16
    frames_per_clip: int = 8
    augmentations: Tuple[str, ...] = ("crop",)
    seed: int = 0
    momentum: float = 0.9
    weight_decay: float = 5e-4
    val_fraction: float = 0.2
    crop_padding: int = 2
    progress: bool = False

    def __post_init__(self):
        self.augmentations = tuple(self.augmentations)
        if self.epochs < 1:
            raise ParameterError(f"epochs must be at least 1, got {self.epochs}")
        if self.peak_lr <= 0:
            raise ParameterError(f"peak_lr must be positive, got {self.peak_lr}")
        if self.warmup_epochs < 0:
            raise ParameterError(f"warmup_epochs must be non-negative, got {self.warmup_epochs}")
        # at least one epoch is left for annealing
        self.warmup_epochs = min(self.warmup_epochs, self.epochs - 1)
        if self.batch_size < 1 or self.frames_per_clip < 1:
            raise ParameterError("batch_size and frames_per_clip must be positive")
        unknown = set(self.augmentations) - {"crop", "flip"}
        if unknown:
            raise ParameterError(f"Unsupported augmentations {sorted(unknown)}")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        return cls(**overrides)

    @classmethod
    def full(cls, **overrides) -> "TrainConfig":
        values = dict(epochs=100, warmup_epochs=5, batch_size=32, frames_per_clip=16,
                      augmentations=("crop", "flip"))
        values.update(overrides)
        return cls(**values)


def _augment(batch: torch.Tensor, cfg: TrainConfig, gen: torch.Generator) -> torch.Tensor:
    n, t, h, w, _ = batch.shape
    if t > cfg.frames_per_clip:
        start = int(torch.randint(0, t - cfg.frames_per_clip + 1, (1,), generator=gen))
        batch = batch[:, start:start + cfg.frames_per_clip]
    if "crop" in cfg.augmentations and cfg.crop_padding > 0:
        p = cfg.crop_padding
        padded = F.pad(batch.permute(0, 4, 1, 2, 3), (p, p, p, p, 0, 0), mode="replicate")
        dy, dx = (int(v) for v in torch.randint(0, 2 * p + 1, (2,), generator=gen))
        batch = padded[:, :, :, dy:dy + h, dx:dx + w].permute(0, 2, 3, 4, 1)
    if "flip" in cfg.augmentations:
        mask = torch.rand(n, generator=gen) < 0.5
        batch = torch.where(mask.view(n, 1, 1, 1, 1), batch.flip(dims=(3,)), batch)
    return batch


def _one_cycle(warmup_steps: int, total_steps: int) -> Callable[[int], float]:
    """LR multiplier: linear warmup to 1, then cosine annealing to 0."""
    def factor(step: int) -> float:
        if step < warmup_steps:
            return (step + 1) / warmup_steps
        progress = (step - warmup_steps) / max(1, total_steps - warmup_steps)
        return 0.5 * (1.0 + math.cos(math.pi * min(progress, 1.0)))
    return factor


def train_model(dataset: Dataset, arch: ArchSpec, cfg: TrainConfig,
                val_dataset: Optional[Dataset] = None) -> VideoCNN:
    """
    Train a VideoCNN with SGD under a single-cycle cosine schedule with linear
    warmup. Records validation top-1 on the returned model.
    """
    if len(dataset) == 0:
        raise TrainingError("Cannot train on an empty dataset")
    if dataset.split != "train":
        raise ParameterError(f"train_model expects a train split, got '{dataset.split}'")
    if arch.n_classes != len(dataset.ontology):
        raise ParameterError(f"Architecture has {arch.n_classes} outputs for {len(dataset.ontology)} classes")

    gen = torch.Generator().manual_seed(cfg.seed)
    pixels, labels = dataset.stacked()
    if val_dataset is None and cfg.val_fraction > 0 and len(dataset) > 1:
        perm = torch.randperm(len(dataset), generator=gen)
        n_val = max(1, int(round(cfg.val_fraction * len(dataset))))
        val_idx, train_idx = perm[:n_val], perm[n_val:]
        val_pixels, val_labels = pixels[val_idx], labels[val_idx]
        pixels, labels = pixels[train_idx], labels[train_idx]
    elif val_dataset is not None:
        val_pixels, val_labels = val_dataset.stacked()
    else:
        val_pixels, val_labels = pixels, labels

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        model = VideoCNN(arch)

    steps_per_epoch = -(-len(pixels) // cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    optimizer = torch.optim.SGD(model.parameters(), lr=cfg.peak_lr, momentum=cfg.momentum,
                                weight_decay=cfg.weight_decay)
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, _one_cycle(cfg.warmup_epochs * steps_per_epoch, total_steps)
    )

    deterministic = torch.are_deterministic_algorithms_enabled()
    torch.use_deterministic_algorithms(True, warn_only=True)
    log_info(f"Training {arch.block_type} model on {len(pixels)} clips, {arch.n_classes} classes, "
             f"{cfg.epochs} epochs")
    try:
        for epoch in tqdm(range(cfg.epochs), desc="train", disable=not cfg.progress):
            model.train()
            order = torch.randperm(len(pixels), generator=gen)
            epoch_loss = 0.0
            for start in range(0, len(pixels), cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                batch = _augment(pixels[idx], cfg, gen)
                loss = F.cross_entropy(model(batch), labels[idx])
                if not torch.isfinite(loss):
                    raise TrainingError("Loss became non-finite", epoch=epoch)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                scheduler.step()
                epoch_loss += float(loss) * len(idx)
            model.training_log.append(epoch_loss / len(pixels))
            log_debug(f"epoch {epoch}: loss {model.training_log[-1]:.4f}")
    finally:
        torch.use_deterministic_algorithms(deterministic)

    model.eval()
    model.ontology = dataset.ontology
    model.val_accuracy = float((predict_labels(model, val_pixels) == val_labels).float().mean())
    log_info(f"Finished training: val top-1 {model.val_accuracy:.3f}")
    return model


def save_model(model: VideoCNN, path: Union[str, Path], train_config: Optional[TrainConfig] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "arch": model.arch.to_dict(),
        "state_dict": model.state_dict(),
        "ontology": model.ontology.to_dict() if model.ontology else None,
        "val_accuracy": model.val_accuracy,
        "training_log": list(model.training_log),
        "train_config": asdict(train_config) if train_config else None,
    }, path)
    log_info(f"Saved checkpoint to {path}")
    return path


def load_model(path: Union[str, Path]) -> VideoCNN:
    try:
        checkpoint = torch.load(Path(path), map_location="cpu", weights_only=True)
        model = VideoCNN(ArchSpec.from_dict(checkpoint["arch"]))
        model.load_state_dict(checkpoint["state_dict"])
    except (OSError, EOFError, KeyError, ValueError, RuntimeError, pickle.UnpicklingError) as e:
        raise CheckpointError(f"Cannot load model checkpoint {path}: {e}") from None
    if checkpoint.get("ontology"):
        model.ontology = LabelOntology.from_dict(checkpoint["ontology"])
    model.val_accuracy = checkpoint.get("val_accuracy")
    model.training_log = list(checkpoint.get("training_log") or [])
    model.eval()
    return model
