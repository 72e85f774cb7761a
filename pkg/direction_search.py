"""
Attack-direction generators in the source model's feature space.

Orthogonal mode draws v ~ U[0, 1)^d and keeps only the component orthogonal to
the clean representation and to every direction already returned (modified
Gram-Schmidt), so successive queries never revisit an explored direction.
Random mode returns the normalised raw draw.

All arithmetic is float64; callers cast down when building the loss.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import torch

from errors import DegenerateInputError
from models import FeatureVector

logger = logging.getLogger(__name__)

def log_debug(message):
    logger.debug(f"[Directions] {message}")

ORTHO_TOL = 1e-5
DEPENDENCE_TOL = 1e-6
REORTHO_THRESHOLD = 0.1
MAX_RESAMPLES = 16


@dataclass
class DirectionBasis:
    anchor: np.ndarray  # v0 / ||v0||
    rng: np.random.Generator
    ortho_set: List[np.ndarray] = field(default_factory=list)
    resets: int = 0

    @property
    def dim(self) -> int:
        return self.anchor.shape[0]

    @property
    def capacity(self) -> int:
        """Orthogonal directions available before the basis must restart."""
        return self.dim - 1

    @property
    def exhausted(self) -> bool:
        return len(self.ortho_set) >= self.capacity

    def gram_matrix(self) -> np.ndarray:
        vectors = np.stack([self.anchor, *self.ortho_set])
        return vectors @ vectors.T


def _as_array(anchor) -> np.ndarray:
    if isinstance(anchor, FeatureVector):
        anchor = anchor.values
    if torch.is_tensor(anchor):
        anchor = anchor.detach().cpu().numpy()
    return np.asarray(anchor, dtype=np.float64).reshape(-1)


def init_basis(anchor, seed: int) -> DirectionBasis:
    v0 = _as_array(anchor)
    norm = np.linalg.norm(v0)
    if not np.isfinite(norm) or norm == 0:
        raise DegenerateInputError("Cannot anchor a direction basis on a zero representation")
    if v0.shape[0] < 2:
        raise DegenerateInputError("Orthogonal directions need a representation of dimension at least 2")
    return DirectionBasis(anchor=v0 / norm, rng=np.random.default_rng(seed))


def _orthogonalize(v: np.ndarray, against: List[np.ndarray]) -> np.ndarray:
    u = v.copy()
    for q in against:
        u -= np.dot(u, q) * q
    return u


def next_direction(basis: DirectionBasis, draw: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Next unit direction orthogonal to the anchor and all stored directions.

    `draw` replaces the first raw sample, for reproducing a hand-worked case.
    Once d-1 directions are stored the next call clears them (keeping the
    anchor) and increments `basis.resets`.
    """
    if basis.exhausted:
        basis.ortho_set.clear()
        basis.resets += 1
        log_debug(f"Direction basis exhausted after {basis.capacity} directions, reset #{basis.resets}")

    against = [basis.anchor, *basis.ortho_set]
    for attempt in range(MAX_RESAMPLES):
        v = np.asarray(draw, dtype=np.float64) if (draw is not None and attempt == 0) else basis.rng.random(basis.dim)
        v_norm = np.linalg.norm(v)
        u = _orthogonalize(v, against)
        if np.linalg.norm(u) < REORTHO_THRESHOLD * v_norm:
            u = _orthogonalize(u, against)
        u_norm = np.linalg.norm(u)
        if v_norm > 0 and u_norm >= DEPENDENCE_TOL * v_norm:
            e = u / u_norm
            basis.ortho_set.append(e)
            return e
        log_debug(f"Near-dependent draw (residual {u_norm:.3e}), resampling")
    raise DegenerateInputError(f"No independent direction found after {MAX_RESAMPLES} draws")


def random_direction(basis: DirectionBasis) -> np.ndarray:
    """Normalised U[0, 1)^d draw, without orthogonalisation."""
    while True:
        v = basis.rng.random(basis.dim)
        norm = np.linalg.norm(v)
        if norm > 0:
            return v / norm
