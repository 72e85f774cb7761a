"""
Video datasets: in-memory clip types, the on-disk frame layout, label ontology
overlap and a procedurally rendered moving-shape dataset with a controllable
number of classes shared between a source and a target domain.

On-disk layout::

    <root>/manifest.json
    <root>/clips/<clip_id>/frame_00000.png ...
"""
import itertools
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Sequence, Tuple, Union

import numpy as np
import torch
from PIL import Image, ImageDraw

from errors import DatasetLoadError, FrameFormatError, LabelError, ParameterError

logger = logging.getLogger(__name__)

def log_info(message):
    logger.info(f"[Data] {message}")

def log_debug(message):
    logger.debug(f"[Data] {message}")

MANIFEST_NAME = "manifest.json"
CLIPS_DIR = "clips"
SPLITS = ("train", "val")
DEFAULT_SHAPE = (8, 32, 32)

SHAPES = ("square", "circle", "triangle", "bar")
MOTIONS = ("left", "right", "up", "down", "still", "rotate")
# Shape colours are offsets from a grey background level. Class signal is a
# few dozen intensity levels, under per-clip texture and per-frame noise.
COLORS: Dict[str, Tuple[int, int, int]] = {
    "red": (24, -10, -10),
    "green": (-10, 24, -10),
    "blue": (-10, -10, 24),
    "yellow": (18, 18, -14),
}
BACKGROUND_LEVELS = (96, 160)
TEXTURE_AMPLITUDE = 8
NOISE_AMPLITUDE = 6
# Every (color, shape, motion) combination is one motif; its name is the class name.
MOTIFS: Tuple[Tuple[str, str, str], ...] = tuple(itertools.product(COLORS, SHAPES, MOTIONS))


def motif_name(motif: Tuple[str, str, str]) -> str:
    return "_".join(motif)


def pixels_from_uint8(frames: np.ndarray) -> torch.Tensor:
    """8-bit T×H×W×3 frames to a float32 tensor in [0, 1]."""
    return torch.from_numpy(np.ascontiguousarray(frames)).to(torch.float32).div_(255.0)


def pixels_to_uint8(pixels: torch.Tensor) -> np.ndarray:
    return pixels.detach().cpu().mul(255.0).round().clamp(0, 255).to(torch.uint8).numpy()


@dataclass(frozen=True)
class VideoClip:
    pixels: torch.Tensor  # T×H×W×3 in [0, 1]
    label_id: int
    clip_id: str

    def __post_init__(self):
        if self.pixels.dim() != 4 or self.pixels.shape[-1] != 3:
            raise FrameFormatError(
                f"Clip {self.clip_id}: expected T×H×W×3 pixels, got shape {tuple(self.pixels.shape)}"
            )
        if min(self.pixels.shape[:3]) < 1:
            raise FrameFormatError(f"Clip {self.clip_id}: empty dimension in {tuple(self.pixels.shape)}")
        if self.pixels.numel() and (self.pixels.min() < 0 or self.pixels.max() > 1):
            raise ParameterError(f"Clip {self.clip_id}: pixel values must lie in [0, 1]")

    @property
    def shape(self) -> Tuple[int, int, int]:
        t, h, w, _ = self.pixels.shape
        return t, h, w


@dataclass(frozen=True)
class LabelOntology:
    class_names: Tuple[str, ...]
    dataset_name: str

    def __post_init__(self):
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if len(set(self.class_names)) != len(self.class_names):
            raise LabelError(f"Duplicate class names in ontology {self.dataset_name}")

    def __len__(self) -> int:
        return len(self.class_names)

    def index(self, name: str) -> int:
        try:
            return self.class_names.index(name)
        except ValueError:
            raise LabelError(f"Class '{name}' is not part of ontology {self.dataset_name}") from None

    def to_dict(self) -> Dict:
        return {"dataset_name": self.dataset_name, "class_names": list(self.class_names)}

    @classmethod
    def from_dict(cls, data: Dict) -> "LabelOntology":
        return cls(class_names=tuple(data["class_names"]), dataset_name=data["dataset_name"])


@dataclass(frozen=True)
class Dataset:
    clips: Tuple[VideoClip, ...]
    ontology: LabelOntology
    split: str = "train"

    def __post_init__(self):
        object.__setattr__(self, "clips", tuple(self.clips))
        if self.split not in SPLITS:
            raise ParameterError(f"split must be one of {SPLITS}, got '{self.split}'")
        for clip in self.clips:
            if not 0 <= clip.label_id < len(self.ontology):
                raise LabelError(
                    f"Clip {clip.clip_id} has label {clip.label_id} outside ontology of size {len(self.ontology)}"
                )

    def __len__(self) -> int:
        return len(self.clips)

    def __iter__(self) -> Iterator[VideoClip]:
        return iter(self.clips)

    def __getitem__(self, idx: int) -> VideoClip:
        return self.clips[idx]

    def stacked(self) -> Tuple[torch.Tensor, torch.Tensor]:
        """All clips as an N×T×H×W×3 tensor and an N label tensor."""
        pixels = torch.stack([clip.pixels for clip in self.clips])
        labels = torch.tensor([clip.label_id for clip in self.clips], dtype=torch.long)
        return pixels, labels

    def head(self, n: int) -> "Dataset":
        return Dataset(self.clips[:n], self.ontology, self.split)


@dataclass(frozen=True)
class OverlapSpec:
    n_source_classes: int
    n_common_classes: int
    seed: int = 0

    def __post_init__(self):
        if self.n_source_classes < 1:
            raise ParameterError("n_source_classes must be at least 1")
        if not 0 <= self.n_common_classes <= self.n_source_classes:
            raise ParameterError(
                f"n_common_classes must lie in [0, {self.n_source_classes}], got {self.n_common_classes}"
            )


def class_overlap(a: LabelOntology, b: LabelOntology) -> Tuple[int, float]:
    """Number of class names shared verbatim, and that count as a fraction of `a`."""
    count = len(set(a.class_names) & set(b.class_names))
    fraction = count / len(a) if len(a) else 0.0
    return count, fraction


def load_dataset(root_path: Union[str, Path]) -> Dataset:
    root = Path(root_path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise DatasetLoadError(f"No {MANIFEST_NAME} in {root}")
    try:
        with open(manifest_path, "r") as f:
            manifest = json.load(f)
        ontology = LabelOntology(tuple(manifest["class_names"]), manifest["dataset_name"])
        entries = manifest["clips"]
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise DatasetLoadError(f"Malformed manifest {manifest_path}: {e}") from e

    clips = []
    for position, entry in enumerate(entries):
        try:
            clip_id, class_name = entry["clip_id"], entry["class_name"]
        except (KeyError, TypeError) as e:
            raise DatasetLoadError(f"Malformed manifest {manifest_path}: clip entry {position} lacks {e}") from e
        label_id = ontology.index(class_name)
        frames = _read_frames(root / CLIPS_DIR / clip_id, clip_id)
        if "frame_count" in entry and len(frames) != int(entry["frame_count"]):
            raise FrameFormatError(
                f"Clip {clip_id}: manifest lists {entry['frame_count']} frames, found {len(frames)}"
            )
        clips.append(VideoClip(pixels_from_uint8(np.stack(frames)), label_id, clip_id))

    log_info(f"Loaded {len(clips)} clips over {len(ontology)} classes from {root}")
    return Dataset(tuple(clips), ontology, manifest.get("split", "train"))


def _frame_index(path: Path) -> int:
    try:
        return int(path.stem.split("_")[-1])
    except ValueError:
        raise FrameFormatError(f"Unexpected frame file name {path.name}") from None


def _read_frames(clip_dir: Path, clip_id: str) -> List[np.ndarray]:
    if not clip_dir.is_dir():
        raise DatasetLoadError(f"Clip directory {clip_dir} does not exist")
    paths = sorted(clip_dir.glob("frame_*.png"), key=_frame_index)
    if not paths:
        raise FrameFormatError(f"Clip {clip_id} has no frames")

    frames = []
    for path in paths:
        with Image.open(path) as img:
            if img.mode != "RGB":
                raise FrameFormatError(f"{path} is {img.mode}, expected 8-bit RGB")
            frame = np.asarray(img, dtype=np.uint8)
        if frames and frame.shape != frames[0].shape:
            raise FrameFormatError(
                f"Clip {clip_id}: frame {path.name} has shape {frame.shape}, expected {frames[0].shape}"
            )
        frames.append(frame)
    return frames


def save_dataset(dataset: Dataset, root_path: Union[str, Path]) -> Path:
    """Write `dataset` in the on-disk layout read by `load_dataset`."""
    root = Path(root_path)
    (root / CLIPS_DIR).mkdir(parents=True, exist_ok=True)
    entries = []
    for clip in dataset.clips:
        clip_dir = root / CLIPS_DIR / clip.clip_id
        clip_dir.mkdir(parents=True, exist_ok=True)
        for t, frame in enumerate(pixels_to_uint8(clip.pixels)):
            Image.fromarray(frame).save(clip_dir / f"frame_{t:05d}.png")
        entries.append({
            "clip_id": clip.clip_id,
            "class_name": dataset.ontology.class_names[clip.label_id],
            "frame_count": clip.pixels.shape[0],
        })

    manifest = {
        "dataset_name": dataset.ontology.dataset_name,
        "class_names": list(dataset.ontology.class_names),
        "split": dataset.split,
        "clips": entries,
    }
    with open(root / MANIFEST_NAME, "w") as f:
        json.dump(manifest, f, indent=2)
    log_info(f"Saved {len(dataset)} clips to {root}")
    return root


def generate_synthetic(
    spec: OverlapSpec,
    n_target_classes: int,
    clips_per_class: int,
    shape: Sequence[int] = DEFAULT_SHAPE,
    split: str = "train",
) -> Tuple[Dataset, Dataset]:
    """
    Render a source and a target dataset of moving-shape clips.

    Exactly `spec.n_common_classes` motifs appear in both ontologies under the
    same class name. The target classes depend only on (seed, n_target_classes),
    so sweeping the overlap keeps the target domain fixed. Output is a pure
    function of the arguments.
    """
    n_source = spec.n_source_classes
    if n_target_classes < 1:
        raise ParameterError("n_target_classes must be at least 1")
    if spec.n_common_classes > min(n_source, n_target_classes):
        raise ParameterError(
            f"Overlap of {spec.n_common_classes} exceeds an ontology size "
            f"(source {n_source}, target {n_target_classes})"
        )
    if n_source + n_target_classes - spec.n_common_classes > len(MOTIFS):
        raise ParameterError(f"Only {len(MOTIFS)} distinct motifs are available")
    if clips_per_class < 1:
        raise ParameterError("clips_per_class must be at least 1")
    if len(shape) != 3 or min(shape) < 1:
        raise ParameterError(f"shape must be (T, H, W) with positive entries, got {tuple(shape)}")
    if split not in SPLITS:
        raise ParameterError(f"split must be one of {SPLITS}, got '{split}'")

    order = np.random.default_rng(spec.seed).permutation(len(MOTIFS))
    target_ids = [int(i) for i in order[:n_target_classes]]
    exclusive = order[n_target_classes:n_target_classes + n_source - spec.n_common_classes]
    source_ids = target_ids[:spec.n_common_classes] + [int(i) for i in exclusive]

    source = _render_dataset("source", source_ids, spec.seed, clips_per_class, tuple(shape), split)
    target = _render_dataset("target", target_ids, spec.seed, clips_per_class, tuple(shape), split)
    log_info(
        f"Generated {split} split: {len(source.ontology)} source / {len(target.ontology)} target classes, "
        f"{spec.n_common_classes} shared, seed {spec.seed}"
    )
    return source, target


def _render_dataset(role: str, motif_ids: List[int], seed: int, clips_per_class: int,
                    shape: Tuple[int, int, int], split: str) -> Dataset:
    motif_ids = sorted(motif_ids, key=lambda i: motif_name(MOTIFS[i]))
    ontology = LabelOntology(tuple(motif_name(MOTIFS[i]) for i in motif_ids), f"synthetic-{role}")
    role_id = 0 if role == "source" else 1
    split_id = SPLITS.index(split)

    clips = []
    for label_id, motif_id in enumerate(motif_ids):
        for k in range(clips_per_class):
            rng = np.random.default_rng([seed, role_id, split_id, motif_id, k])
            frames = render_motif(MOTIFS[motif_id], shape, rng)
            clip_id = f"{role}-{split}-{ontology.class_names[label_id]}-{k:03d}"
            clips.append(VideoClip(pixels_from_uint8(frames), label_id, clip_id))
    return Dataset(tuple(clips), ontology, split)


def render_motif(motif: Tuple[str, str, str], shape: Tuple[int, int, int],
                 rng: np.random.Generator) -> np.ndarray:
    """
    Draw one clip of `motif` as uint8 frames of shape T×H×W×3.

    Background level, texture, position, size, speed and tint are jittered by
    `rng`; texture and noise cover the shape as well as the background.
    "rotate" moves the shape along a circular orbit, which stays visible for
    the rotation-invariant circle.
    """
    color_name, shape_name, motion = motif
    t_len, height, width = shape
    side = min(height, width)

    level = int(rng.integers(*BACKGROUND_LEVELS))
    texture = rng.integers(-TEXTURE_AMPLITUDE, TEXTURE_AMPLITUDE + 1, size=(height, width, 3))
    tint = level + np.array(COLORS[color_name]) + rng.integers(-3, 4, size=3)
    fill = tuple(int(c) for c in np.clip(tint, 0, 255))
    radius = side * rng.uniform(0.14, 0.2)
    speed = rng.uniform(0.7, 1.0) * 0.5 * side / max(t_len, 1)
    center = np.array([width, height]) / 2 + rng.uniform(-0.08, 0.08, size=2) * side
    orbit = 0.22 * side
    phase = rng.uniform(0, 2 * np.pi)
    spin = rng.uniform(0.8, 1.0) * 2 * np.pi / max(t_len, 1)

    directions = {"left": (-1, 0), "right": (1, 0), "up": (0, -1), "down": (0, 1), "still": (0, 0)}
    frames = np.empty((t_len, height, width, 3), dtype=np.uint8)
    for t in range(t_len):
        if motion == "rotate":
            angle = phase + spin * t
            cx, cy = center + orbit * np.array([np.cos(angle), np.sin(angle)])
        else:
            offset = t - (t_len - 1) / 2
            cx, cy = center + speed * offset * np.array(directions[motion])

        img = Image.new("RGB", (width, height), (level, level, level))
        _draw_shape(ImageDraw.Draw(img), shape_name, cx, cy, radius, fill)
        noise = rng.integers(-NOISE_AMPLITUDE, NOISE_AMPLITUDE + 1, size=(height, width, 3))
        frames[t] = np.clip(np.asarray(img, dtype=np.int16) + texture + noise, 0, 255).astype(np.uint8)
    return frames


def _draw_shape(draw: ImageDraw.ImageDraw, shape_name: str, cx: float, cy: float,
                r: float, fill: Tuple[int, int, int]):
    if shape_name == "square":
        draw.rectangle([cx - r, cy - r, cx + r, cy + r], fill=fill)
    elif shape_name == "circle":
        draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=fill)
    elif shape_name == "triangle":
        draw.polygon([(cx, cy - r), (cx - r, cy + r), (cx + r, cy + r)], fill=fill)
    elif shape_name == "bar":
        draw.rectangle([cx - 1.6 * r, cy - 0.4 * r, cx + 1.6 * r, cy + 0.4 * r], fill=fill)
    else:
        raise ParameterError(f"Unknown shape '{shape_name}'")
