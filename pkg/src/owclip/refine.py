"""Cross-modal similarity guided image filtering.

Proposals are scored against a class label with the frozen base encoders
(never the prompt-augmented ones, so an episode cannot shift the annotation
distribution mid-session). Candidate sets are score ranges; the density
curve visualizes the pool so a user can place those ranges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError, RangeError
from .vectors import cosine_similarity


@dataclass(frozen=True)
class SimilarityRecord:
    proposal_id: str
    score: float
    relative_score: float


@dataclass(frozen=True)
class ThresholdRanges:
    l_s: float
    h_s: float
    l_h: float
    h_h: float

    def validate(self) -> "ThresholdRanges":
        if self.l_s > self.h_s or self.l_h > self.h_h:
            raise RangeError(f"range lower bound above upper bound: {self}")
        return self

    @property
    def simple(self) -> tuple[float, float]:
        return (self.l_s, self.h_s)

    @property
    def hard(self) -> tuple[float, float]:
        return (self.l_h, self.h_h)


def score_pool(pool: list[tuple[str, np.ndarray]], class_label: str,
               text_encoder) -> list[SimilarityRecord]:
    """Cosine of each pool embedding against the label embedding.

    Relative scores divide by the pool maximum, so the best match gets 1.0;
    this requires a positive pool maximum.
    """
    if not pool:
        raise InputError("empty proposal pool")
    label_vec = text_encoder.encode_text(class_label)
    scores = [cosine_similarity(emb, label_vec) for _, emb in pool]
    top = max(scores)
    if top <= 0.0:
        raise InputError(
            f"pool maximum similarity {top:.4f} is not positive; relative scores undefined")
    return [SimilarityRecord(proposal_id=pid, score=s, relative_score=s / top)
            for (pid, _), s in zip(pool, scores)]


def filter_candidates(records: list[SimilarityRecord],
                      score_range: tuple[float, float]) -> list[str]:
    """Ids with score in [l, h], ordered by descending score (stable)."""
    low, high = score_range
    if low > high:
        raise RangeError(f"lower bound {low} exceeds upper bound {high}")
    kept = [r for r in records if low <= r.score <= high]
    kept.sort(key=lambda r: -r.score)
    return [r.proposal_id for r in kept]


def apply_annotation(candidates: list[str], user_selection: list[str],
                     mode: str) -> list[str]:
    """Delete keeps everything except the selection; Reserve keeps only it."""
    cand_set = set(candidates)
    outside = [pid for pid in user_selection if pid not in cand_set]
    if outside:
        raise InputError(f"selection outside candidate set: {outside[:5]}")
    selected = set(user_selection)
    if mode == "delete":
        return [pid for pid in candidates if pid not in selected]
    if mode == "reserve":
        return [pid for pid in candidates if pid in selected]
    raise InputError(f"mode must be 'delete' or 'reserve', got '{mode}'")


def silverman_bandwidth(values: np.ndarray) -> float:
    """Rule-of-thumb kernel width; falls back to a small constant when the
    sample is degenerate (single point or zero spread)."""
    values = np.asarray(values, dtype=np.float64)
    std = float(values.std())
    if values.size < 2 or std == 0.0:
        return max(abs(float(values.mean())) * 0.01, 1e-3)
    n = values.size
    iqr = float(np.subtract(*np.percentile(values, [75, 25])))
    spread = min(std, iqr / 1.34) if iqr > 0 else std
    return 0.9 * spread * n ** (-0.2)


GRID_POINTS = 256


def density_curve(records: list[SimilarityRecord], bandwidth: float | None = None,
                  value: str = "score") -> tuple[np.ndarray, np.ndarray]:
    """Gaussian KDE of the pool's scores on a 256-point grid.

    The grid spans [min - 3*bw, max + 3*bw] so the trapezoidal integral of
    the curve is 1 to within 0.01. ``value`` picks the raw score (the axis
    the threshold sliders live on) or the pool-relative score.
    """
    if not records:
        raise InputError("need at least one record")
    if value not in ("score", "relative"):
        raise InputError(f"value must be 'score' or 'relative', got '{value}'")
    xs = np.array([r.score if value == "score" else r.relative_score for r in records])
    bw = silverman_bandwidth(xs) if bandwidth is None else float(bandwidth)
    if bw <= 0.0:
        raise ConfigError(f"bandwidth must be positive, got {bw}")
    grid = np.linspace(xs.min() - 3 * bw, xs.max() + 3 * bw, GRID_POINTS)
    diffs = (grid[:, None] - xs[None, :]) / bw
    dens = np.exp(-0.5 * diffs * diffs).sum(axis=1) / (len(xs) * bw * np.sqrt(2 * np.pi))
    return grid, dens


def default_ranges(records: list[SimilarityRecord]) -> ThresholdRanges:
    """Seed ranges from the pool's score quartiles: Simple gets the top
    quartile (complete objects tend to score high), Hard the 25-50 band."""
    scores = np.array([r.score for r in records])
    q25, q50, q75 = np.percentile(scores, [25, 50, 75])
    return ThresholdRanges(l_s=float(q75), h_s=float(scores.max()),
                           l_h=float(q25), h_h=float(q50))
