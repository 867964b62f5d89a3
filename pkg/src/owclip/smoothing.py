"""Completeness-aware label smoothing.

The ground-truth class of a crop that retains a fraction ``epsilon`` of the
original region gets target mass ``D * epsilon``; the remaining mass is
spread evenly over the other ``Q - 1`` classes. Complete ("Simple") images
use D = 1.0, partial ("Hard") images a reduced D, so classification
confidence is trained to track object completeness.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, DimensionError, GuardError, InputError

EPSILON_MIN_DEFAULT = 0.3
D_HARD_DEFAULT = 0.7
N_CROPS_DEFAULT = 3
P_MIN_DEFAULT = 1e-12


class TargetOrderWarning(UserWarning):
    """Raised when a config admits targets with gt mass below the off-class mass."""


class Difficulty(str, Enum):
    SIMPLE = "simple"
    HARD = "hard"


@dataclass(frozen=True)
class CropSpec:
    """One crop: retained-area fraction and the crop's top-left in unit coords.

    The crop is square-scaled (aspect preserved): each side shrinks by
    sqrt(epsilon), so the retained area is exactly epsilon.
    """

    epsilon: float
    anchor: tuple[float, float]

    @property
    def side(self) -> float:
        return math.sqrt(self.epsilon)


def sample_crop(rng_seed, epsilon_min: float = EPSILON_MIN_DEFAULT,
                epsilon_max: float = 1.0) -> CropSpec:
    """Draw epsilon uniform in (epsilon_min, epsilon_max] and a uniform anchor
    among positions that keep the crop inside the unit image.

    ``rng_seed`` may be an int or a tuple of ints; identical seeds give
    identical crops.
    """
    if not (0.0 < epsilon_min <= epsilon_max <= 1.0):
        raise ConfigError(
            f"need 0 < epsilon_min <= epsilon_max <= 1, got ({epsilon_min}, {epsilon_max})")
    rng = np.random.default_rng(rng_seed)
    if epsilon_min == epsilon_max:
        epsilon = epsilon_max
    else:
        # u in [0, 1) maps onto (epsilon_min, epsilon_max]
        epsilon = epsilon_max - rng.random() * (epsilon_max - epsilon_min)
    slack = 1.0 - math.sqrt(epsilon)
    x0 = rng.random() * slack
    y0 = rng.random() * slack
    return CropSpec(epsilon=float(epsilon), anchor=(float(x0), float(y0)))


@dataclass(frozen=True)
class SmoothTarget:
    """Smoothed class distribution: gt_mass at gt_index, other_mass elsewhere."""

    q: int
    gt_index: int
    gt_mass: float
    other_mass: float
    d_factor: float

    def dense(self) -> np.ndarray:
        out = np.full(self.q, self.other_mass, dtype=np.float64)
        out[self.gt_index] = self.gt_mass
        return out


def build_target(q: int, d_factor: float, epsilon: float, gt_index: int,
                 epsilon_min: float = 0.0) -> SmoothTarget:
    """Target with gt mass D*epsilon and (1 - D*epsilon)/(Q-1) on each other class."""
    if q < 2:
        raise InputError(f"need at least 2 classes, got {q}")
    if not (0.0 < d_factor <= 1.0):
        raise InputError(f"D must be in (0, 1], got {d_factor}")
    if not (0 <= gt_index < q):
        raise InputError(f"gt_index {gt_index} out of range for Q={q}")
    if epsilon > 1.0:
        raise InputError(f"epsilon must be <= 1, got {epsilon}")
    if epsilon <= epsilon_min:
        raise GuardError(f"epsilon {epsilon} at or below epsilon_min {epsilon_min}")
    gt_mass = d_factor * epsilon
    if gt_mass > 1.0:
        raise InputError(f"D*epsilon = {gt_mass} exceeds 1")  # unreachable under the checks above
    other_mass = (1.0 - gt_mass) / (q - 1)
    return SmoothTarget(q=q, gt_index=gt_index, gt_mass=float(gt_mass),
                        other_mass=float(other_mass), d_factor=float(d_factor))


def crop_smoothing_loss(target: SmoothTarget, probs, p_min: float = P_MIN_DEFAULT) -> float:
    """Negative weighted log-likelihood of the smoothed target.

    Probabilities are floored at ``p_min`` before the log so degenerate
    predictions give a large finite loss rather than -inf.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.shape != (target.q,):
        raise DimensionError(f"probs shape {p.shape} does not match Q={target.q}")
    if abs(float(p.sum()) - 1.0) > 1e-6:
        raise InputError(f"probs sum to {p.sum()}, expected 1")
    logs = np.log(np.clip(p, p_min, None))
    other = float(logs.sum() - logs[target.gt_index])
    return float(-(target.gt_mass * logs[target.gt_index] + target.other_mass * other))


def target_order_preserved(q: int, d_factor: float, epsilon_min: float) -> bool:
    """True when every reachable target keeps gt_mass >= other_mass."""
    return d_factor * epsilon_min >= 1.0 / q


def warn_if_inversion_possible(q: int, d_factor: float, epsilon_min: float) -> bool:
    """Emit a TargetOrderWarning when a config admits inverted targets."""
    if not target_order_preserved(q, d_factor, epsilon_min):
        warnings.warn(
            f"D*epsilon_min = {d_factor * epsilon_min:.4f} < 1/Q = {1.0 / q:.4f}: "
            "crops near epsilon_min produce targets with gt mass below the "
            "off-class mass",
            TargetOrderWarning, stacklevel=2)
        return True
    return False


@dataclass
class SmoothingConfig:
    epsilon_min: float = EPSILON_MIN_DEFAULT
    epsilon_max: float = 1.0
    d_hard: float = D_HARD_DEFAULT
    n_crops: int = N_CROPS_DEFAULT
    p_min: float = P_MIN_DEFAULT

    def validate(self):
        if not (0.0 < self.epsilon_min <= self.epsilon_max <= 1.0):
            raise ConfigError("epsilon bounds must satisfy 0 < min <= max <= 1")
        if not (0.0 < self.d_hard <= 1.0):
            raise ConfigError("d_hard must be in (0, 1]")
        if self.n_crops < 0:
            raise ConfigError("n_crops must be >= 0")
        if self.p_min <= 0.0:
            raise ConfigError("p_min must be positive")
        return self


@dataclass
class TrainSample:
    """One training example: embedding, smoothed target, and provenance.

    ``tokens`` is set only when the backend exposes raw token sequences, in
    which case the tuner re-encodes the sample through the prompt-augmented
    encoder instead of using the fixed embedding.
    """

    embedding: np.ndarray
    class_index: int
    epsilon: float
    difficulty: Difficulty
    target: SmoothTarget
    proposal_id: str | None = None
    tokens: object | None = None

    def audit_row(self) -> dict:
        return {
            "proposal_id": self.proposal_id,
            "class_index": self.class_index,
            "epsilon": self.epsilon,
            "difficulty": self.difficulty.value,
            "q": self.target.q,
            "gt_mass": self.target.gt_mass,
            "other_mass": self.target.other_mass,
        }


def make_train_samples(proposal, class_index: int, difficulty: Difficulty,
                       n_crops: int, config: SmoothingConfig, backend, q: int,
                       seed: int) -> list[TrainSample]:
    """Build the per-image sample set for one annotated proposal.

    Simple images contribute the uncropped original (epsilon 1, D 1) plus
    ``n_crops`` random crops with completeness-scaled targets. Hard images
    are already partial, so they are used as-is with D = d_hard.
    """
    difficulty = Difficulty(difficulty)
    tokens_for = getattr(backend, "tokens_for", None)
    samples: list[TrainSample] = []
    if difficulty is Difficulty.HARD:
        target = build_target(q, config.d_hard, 1.0, class_index)
        samples.append(TrainSample(
            embedding=backend.embed_proposal(proposal), class_index=class_index,
            epsilon=1.0, difficulty=difficulty, target=target,
            proposal_id=proposal.proposal_id,
            tokens=tokens_for(proposal) if tokens_for else None))
        return samples

    target = build_target(q, 1.0, 1.0, class_index)
    samples.append(TrainSample(
        embedding=backend.embed_proposal(proposal), class_index=class_index,
        epsilon=1.0, difficulty=difficulty, target=target,
        proposal_id=proposal.proposal_id,
        tokens=tokens_for(proposal) if tokens_for else None))
    for i in range(n_crops):
        crop = sample_crop((seed, i), config.epsilon_min, config.epsilon_max)
        target = build_target(q, 1.0, crop.epsilon, class_index, config.epsilon_min)
        samples.append(TrainSample(
            embedding=backend.embed_crop(proposal, crop), class_index=class_index,
            epsilon=crop.epsilon, difficulty=difficulty, target=target,
            proposal_id=proposal.proposal_id,
            tokens=tokens_for(proposal, crop) if tokens_for else None))
    return samples
