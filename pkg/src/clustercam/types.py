"""Core value types: images, feature-map stacks, score vectors, heatmaps.

All types are immutable after construction (arrays are frozen read-only),
so they can be shared freely between threads. Constructors validate their
invariants; a value that exists is a value that passed validation.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from .errors import DimensionMismatchError, NonFiniteError, ValidationError

SCORE_SUM_TOL = 1e-6


def _frozen(a: np.ndarray, dtype=None) -> np.ndarray:
    """Return a read-only float copy of `a`."""
    out = np.array(a, dtype=dtype if dtype is not None else np.result_type(a, np.float32))
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ImageTensor:
    """A 3-channel image in CHW layout, any real-valued units."""

    data: np.ndarray
    source_path: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen(self.data))
        d = self.data
        if d.ndim != 3 or d.shape[0] != 3:
            raise DimensionMismatchError(f"image must be 3xHxW, got shape {d.shape}")
        if d.shape[1] < 1 or d.shape[2] < 1:
            raise ValidationError("image height and width must be >= 1")
        if not np.isfinite(d).all():
            raise NonFiniteError("image contains non-finite values")

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class FeatureMapStack:
    """N single-channel feature maps of identical spatial size from one layer."""

    maps: np.ndarray
    layer_name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "maps", _frozen(self.maps))
        validate_stack(self)

    @property
    def n(self) -> int:
        return self.maps.shape[0]

    @property
    def spatial(self) -> tuple[int, int]:
        return self.maps.shape[1], self.maps.shape[2]


def validate_stack(stack: "FeatureMapStack") -> "FeatureMapStack":
    """Check all FeatureMapStack invariants; return the stack unchanged.

    Raises DimensionMismatchError, NonFiniteError, or ValidationError.
    """
    m = stack.maps
    if m.ndim != 3:
        raise DimensionMismatchError(
            f"feature stack must be N x h x w with one spatial size for all maps, got shape {m.shape}"
        )
    if m.shape[0] < 2:
        raise ValidationError(f"need at least 2 feature maps to cluster, got {m.shape[0]}")
    if not np.isfinite(m).all():
        raise NonFiniteError("feature stack contains non-finite values")
    return stack


def stack_from_maps(maps: list[np.ndarray], layer_name: str = "") -> FeatureMapStack:
    """Build a FeatureMapStack from a list of 2-D maps, checking shapes first."""
    shapes = {np.asarray(m).shape for m in maps}
    if len(shapes) != 1:
        raise DimensionMismatchError(f"feature maps have mixed spatial sizes: {sorted(shapes)}")
    return FeatureMapStack(np.stack([np.asarray(m) for m in maps]), layer_name)


@dataclass(frozen=True)
class ScoreVector:
    """Post-softmax class probabilities for one forward pass."""

    scores: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "scores", _frozen(self.scores, dtype=np.float64))
        s = self.scores
        if s.ndim != 1 or s.size == 0:
            raise DimensionMismatchError(f"scores must be a nonempty vector, got shape {s.shape}")
        if not np.isfinite(s).all():
            raise NonFiniteError("scores contain non-finite values")
        if s.min() < -SCORE_SUM_TOL or s.max() > 1 + SCORE_SUM_TOL:
            raise ValidationError("scores must lie in [0, 1]")
        if abs(float(s.sum()) - 1.0) > SCORE_SUM_TOL:
            raise ValidationError(f"scores must sum to 1 within {SCORE_SUM_TOL}, got {s.sum()}")

    @property
    def class_count(self) -> int:
        return self.scores.shape[0]

    def top1(self) -> int:
        return int(np.argmax(self.scores))


@dataclass(frozen=True)
class Heatmap:
    """Single-channel salience map; `normalized` means values in [0, 1] with max 1."""

    data: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen(self.data, dtype=np.float64))
        d = self.data
        if d.ndim != 2:
            raise DimensionMismatchError(f"heatmap must be 2-D, got shape {d.shape}")
        if not np.isfinite(d).all():
            raise NonFiniteError("heatmap contains non-finite values")
        if self.normalized:
            if d.min() < 0.0 or d.max() > 1.0:
                raise ValidationError("normalized heatmap must lie in [0, 1]")
            if d.max() not in (0.0, 1.0):
                raise ValidationError("normalized heatmap max must be 1 (or the map all zeros)")

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


WeightMethod = Literal["ablation", "score"]


@dataclass(frozen=True)
class ChannelWeights:
    """One weight per feature-map channel, from an ablation or masking probe."""

    weights: np.ndarray
    method: WeightMethod = "score"

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen(self.weights, dtype=np.float64))
        w = self.weights
        if w.ndim != 1:
            raise DimensionMismatchError(f"weights must be a vector, got shape {w.shape}")
        if not np.isfinite(w).all():
            raise NonFiniteError("weights contain non-finite values")
        if self.method not in ("ablation", "score"):
            raise ValidationError(f"unknown weight method {self.method!r}")

    @property
    def n(self) -> int:
        return self.weights.shape[0]


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def minmax_normalize(a: np.ndarray) -> np.ndarray:
    """Map to [0, 1] by (x - min) / (max - min); a constant array maps to zeros."""
    a = np.asarray(a, dtype=np.float64)
    lo, hi = float(a.min()), float(a.max())
    if hi == lo:
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)
