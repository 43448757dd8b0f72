"""Salience heatmap construction.

Cluster-CAM: cluster the layer's feature maps, average each cluster into a
representative map, score the input masked by each representative, then
merge the best-scoring map (cognition base) against the worst-scoring one
(cognition scissors) with a balance factor. Score-CAM and Ablation-CAM
baselines weight every individual channel instead, at N forward passes
against Cluster-CAM's Q.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from .errors import DimensionMismatchError, ParameterError
from .graph import ClusterAssignment, ClusterConfig, ClusterMethod, cluster_feature_maps
from .imaging import bilinear_resize
from .types import (
    ChannelWeights,
    FeatureMapStack,
    Heatmap,
    ImageTensor,
    minmax_normalize,
)

MaskNormalization = Literal["minmax", "none"]
ScoreBaseline = Literal["zero_image", "input_image"]

ABLATION_EPS = 1e-12


@dataclass(frozen=True)
class ClusterCamConfig:
    """Cluster-CAM knobs; `k` (eigenvector count) defaults to q - 1."""

    q: int = 6
    k: Optional[int] = None
    beta: float = 0.5
    method: ClusterMethod = "kmeans_direct"
    seed: int = 0
    theta: float = 0.1
    sigma: float = 1.0
    mask_normalization: MaskNormalization = "minmax"

    def __post_init__(self):
        if self.q < 1:
            raise ParameterError(f"q must be >= 1, got {self.q}")
        if not (0.0 <= self.beta <= 1.0):
            raise ParameterError(f"beta must be in [0, 1], got {self.beta}")

    def effective_k(self) -> int:
        return self.k if self.k is not None else max(self.q - 1, 1)

    def cluster_config(self) -> ClusterConfig:
        return ClusterConfig(q=self.q, method=self.method, k=self.k, seed=self.seed,
                             theta=self.theta, sigma=self.sigma)


@dataclass(frozen=True)
class RepresentativeMaps:
    """Per-cluster mean feature maps, ordered by cluster label."""

    maps: np.ndarray
    cluster_sizes: tuple[int, ...]

    def __post_init__(self):
        m = np.asarray(self.maps, dtype=np.float64)
        m.setflags(write=False)
        object.__setattr__(self, "maps", m)
        if m.shape[0] != len(self.cluster_sizes):
            raise DimensionMismatchError("one size per representative map required")
        if any(s < 1 for s in self.cluster_sizes):
            raise ParameterError("cluster sizes must be positive")

    @property
    def q(self) -> int:
        return self.maps.shape[0]


@dataclass(frozen=True)
class ClusterScoreVector:
    """Target-class score of the input masked by each representative map."""

    y: np.ndarray
    target_class: int

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        y.setflags(write=False)
        object.__setattr__(self, "y", y)
        if y.ndim != 1 or y.size < 1:
            raise DimensionMismatchError("y must be a nonempty vector")
        if y.min() < 0.0 or y.max() > 1.0:
            raise ParameterError("cluster scores must be softmax probabilities in [0, 1]")

    @property
    def q(self) -> int:
        return self.y.shape[0]


def representative_maps(stack: FeatureMapStack, assignment: ClusterAssignment) -> RepresentativeMaps:
    """Elementwise mean of each cluster's member maps, label order preserved."""
    if assignment.n != stack.n:
        raise DimensionMismatchError(
            f"assignment covers {assignment.n} maps but stack has {stack.n}"
        )
    reps = []
    sizes = []
    for label in range(assignment.q):
        members = assignment.members(label)
        if members.size == 0:
            raise ParameterError(f"cluster {label} has no members")
        reps.append(stack.maps[members].mean(axis=0))
        sizes.append(int(members.size))
    return RepresentativeMaps(np.stack(reps), tuple(sizes))


def activation_mask(map2d: np.ndarray, target_h: int, target_w: int,
                    normalization: MaskNormalization = "minmax") -> Heatmap:
    """Upsample a feature map to the input size and scale it for masking.

    minmax maps onto [0, 1] (a constant map becomes all zeros); `none`
    keeps the raw interpolated values.
    """
    m = np.asarray(map2d, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionMismatchError(f"mask source must be 2-D, got {m.shape}")
    if target_h < m.shape[0] or target_w < m.shape[1]:
        raise ParameterError(
            f"target {target_h}x{target_w} is smaller than the map {m.shape[0]}x{m.shape[1]}"
        )
    up = bilinear_resize(m, target_h, target_w)
    if normalization == "minmax":
        return Heatmap(minmax_normalize(up), normalized=True)
    if normalization == "none":
        return Heatmap(up, normalized=False)
    raise ParameterError(f"unknown mask normalization {normalization!r}")


def masked_input(image: ImageTensor, mask: Heatmap | np.ndarray) -> ImageTensor:
    """Hadamard product of the image and a spatial mask, broadcast over channels."""
    m = mask.data if isinstance(mask, Heatmap) else np.asarray(mask, dtype=np.float64)
    if m.shape != (image.height, image.width):
        raise DimensionMismatchError(
            f"mask {m.shape} does not match image {(image.height, image.width)}"
        )
    return ImageTensor(image.data * m[None, :, :], source_path=image.source_path)


def cluster_scores(runner, image: ImageTensor, reps: RepresentativeMaps, target_class: int,
                   mask_normalization: MaskNormalization = "minmax") -> ClusterScoreVector:
    """Score the target class on the input masked by each representative map.

    Consumes exactly reps.q forward passes.
    """
    if target_class >= runner.class_count or target_class < 0:
        raise ParameterError(
            f"target class {target_class} out of range for {runner.class_count} classes"
        )
    ys = []
    for qi in range(reps.q):
        mask = activation_mask(reps.maps[qi], image.height, image.width, mask_normalization)
        scores = runner.infer_scores(masked_input(image, mask))
        ys.append(float(scores.scores[target_class]))
    return ClusterScoreVector(np.array(ys), target_class=target_class)


def select_base_scissors(y: ClusterScoreVector) -> tuple[int, int]:
    """(argmax, argmin) of the cluster scores; ties go to the lowest index."""
    return int(np.argmax(y.y)), int(np.argmin(y.y))


def postprocess(raw: np.ndarray) -> Heatmap:
    """Clamp negatives to zero, then min-max normalize to [0, 1]."""
    return Heatmap(minmax_normalize(np.maximum(raw, 0.0)), normalized=True)


def merge_heatmap(base: np.ndarray, scissors: np.ndarray, beta: float,
                  apply_postprocess: bool = True) -> Heatmap:
    """beta * base - (1 - beta) * scissors, clamped and normalized."""
    if not (0.0 <= beta <= 1.0):
        raise ParameterError(f"beta must be in [0, 1], got {beta}")
    base = np.asarray(base, dtype=np.float64)
    scissors = np.asarray(scissors, dtype=np.float64)
    if base.shape != scissors.shape:
        raise DimensionMismatchError(
            f"base {base.shape} and scissors {scissors.shape} differ"
        )
    merged = beta * base - (1.0 - beta) * scissors
    if not apply_postprocess:
        return Heatmap(merged, normalized=False)
    return postprocess(merged)


def cluster_cam(runner, image: ImageTensor, target_class: int,
                config: ClusterCamConfig = ClusterCamConfig(),
                apply_postprocess: bool = True) -> tuple[Heatmap, dict]:
    """Full Cluster-CAM pipeline: 1 feature-extraction pass + Q masked passes.

    Returns the heatmap at input resolution plus a diagnostics dict with the
    cluster labels, per-cluster scores, chosen base/scissors indices, and
    forward-pass accounting.
    """
    if config.q == 1:
        warnings.warn("q=1 degenerates to a single representative map; "
                      "base and scissors coincide", stacklevel=2)
    fp_before = runner.fp_count
    t0 = time.perf_counter()
    _, stack = runner.infer(image)
    assignment = cluster_feature_maps(stack, config.cluster_config())
    reps = representative_maps(stack, assignment)
    masks = [activation_mask(reps.maps[qi], image.height, image.width,
                             config.mask_normalization)
             for qi in range(reps.q)]
    fp_mark = runner.fp_count
    y = cluster_scores(runner, image, reps, target_class, config.mask_normalization)
    fp_masked = runner.fp_count - fp_mark
    base_idx, scissors_idx = select_base_scissors(y)
    heatmap = merge_heatmap(masks[base_idx].data, masks[scissors_idx].data,
                            config.beta, apply_postprocess)
    wall_ms = (time.perf_counter() - t0) * 1000.0
    diagnostics = {
        "labels": [int(v) for v in assignment.labels],
        "y": [float(v) for v in y.y],
        "base": base_idx,
        "scissors": scissors_idx,
        "beta": config.beta,
        "q": config.q,
        "k": config.effective_k(),
        "method": config.method,
        "fp_masked": int(fp_masked),
        "fp_total": int(runner.fp_count - fp_before),
        "wall_ms": wall_ms,
        "target_class": int(target_class),
    }
    return heatmap, diagnostics


def combine_channels(stack: FeatureMapStack, weights: ChannelWeights,
                     target_h: int, target_w: int) -> np.ndarray:
    """Weighted channel sum, upsampled to the input size (pre-postprocess)."""
    if weights.n != stack.n:
        raise DimensionMismatchError(
            f"{weights.n} weights for {stack.n} channels"
        )
    combined = np.tensordot(weights.weights, stack.maps, axes=1)
    return bilinear_resize(combined, target_h, target_w)


def score_cam_weights(runner, image: ImageTensor, target_class: int,
                      stack: FeatureMapStack,
                      baseline: ScoreBaseline = "zero_image") -> ChannelWeights:
    """Per-channel masked-input score minus the baseline score; N+1 passes."""
    if baseline == "zero_image":
        base_image = ImageTensor(np.zeros_like(image.data))
    elif baseline == "input_image":
        base_image = image
    else:
        raise ParameterError(f"unknown baseline {baseline!r}")
    s_base = float(runner.infer_scores(base_image).scores[target_class])
    ws = []
    for n in range(stack.n):
        mask = activation_mask(stack.maps[n], image.height, image.width, "minmax")
        s_n = float(runner.infer_scores(masked_input(image, mask)).scores[target_class])
        ws.append(s_n - s_base)
    return ChannelWeights(np.array(ws), method="score")


def score_cam(runner, image: ImageTensor, target_class: int,
              baseline: ScoreBaseline = "zero_image",
              apply_postprocess: bool = True) -> Heatmap:
    """Score-CAM baseline: one weight per channel from masked-input scoring."""
    _, stack = runner.infer(image)
    weights = score_cam_weights(runner, image, target_class, stack, baseline)
    raw = combine_channels(stack, weights, image.height, image.width)
    return postprocess(raw) if apply_postprocess else Heatmap(raw, normalized=False)


def ablation_cam_weights(runner, target_class: int, stack: FeatureMapStack,
                         s_original: float) -> ChannelWeights:
    """Relative score drop when each channel is zeroed; N head passes."""
    denom = max(s_original, ABLATION_EPS)
    ws = []
    for n in range(stack.n):
        ablated = np.array(stack.maps)
        ablated[n] = 0.0
        s_n = float(runner.infer_scores_from_stack(ablated).scores[target_class])
        ws.append((s_original - s_n) / denom)
    return ChannelWeights(np.array(ws), method="ablation")


def ablation_cam(runner, image: ImageTensor, target_class: int,
                 apply_postprocess: bool = True) -> Heatmap:
    """Ablation-CAM baseline: weights from zeroing one channel at a time.

    Needs a runner that can re-enter the network at the target layer.
    """
    scores, stack = runner.infer(image)
    s_original = float(scores.scores[target_class])
    weights = ablation_cam_weights(runner, target_class, stack, s_original)
    raw = combine_channels(stack, weights, image.height, image.width)
    return postprocess(raw) if apply_postprocess else Heatmap(raw, normalized=False)
