"""Forward-only model inference with per-runner forward-pass accounting.

Two runner kinds share one interface: a deterministic in-process fixture
network for desk-scale tests, and an ONNX-file runner for exported
classifiers. Load paths of the form ``fixture:<seed>`` dispatch to the
fixture; anything else is treated as an ONNX file.

A runner is not safely shareable during a forward call; concurrent callers
should construct one runner each.
"""
from __future__ import annotations

from typing import Literal, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import onnxio
from .errors import (
    DimensionMismatchError,
    ModelLoadError,
    UnknownLayerError,
)
from .types import FeatureMapStack, ImageTensor, ScoreVector, softmax

SoftmaxMode = Literal["auto", "apply", "never"]

# 64-bit LCG used for fixture weights; MMIX constants, documented so the
# stream can be reproduced in any language:
#   state <- (state * 6364136223846793005 + 1442695040888963407) mod 2^64
#   value  = (state >> 11) / 2^53 - 0.5            (in [-0.5, 0.5))
_LCG_MUL = 6364136223846793005
_LCG_ADD = 1442695040888963407
_MASK64 = (1 << 64) - 1

FIXTURE_LAYER = "conv"
FIXTURE_PREFIX = "fixture:"


class Lcg64:
    """The fixture's weight generator. Seeded, portable, documented above."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_float(self) -> float:
        self.state = (self.state * _LCG_MUL + _LCG_ADD) & _MASK64
        return (self.state >> 11) / float(1 << 53) - 0.5

    def array(self, shape: tuple[int, ...]) -> np.ndarray:
        flat = np.array([self.next_float() for _ in range(int(np.prod(shape)))])
        return flat.reshape(shape)


class RunnerBase:
    """Shared forward-pass counter and softmax handling."""

    def __init__(self, softmax_mode: SoftmaxMode = "auto"):
        self.softmax_mode = softmax_mode
        self._fp_count = 0

    @property
    def fp_count(self) -> int:
        """Exact number of forward evaluations since construction."""
        return self._fp_count

    def _count(self) -> None:
        self._fp_count += 1

    def _to_scores(self, raw: np.ndarray) -> ScoreVector:
        raw = np.asarray(raw, dtype=np.float64).reshape(-1)
        if self.softmax_mode == "never":
            return ScoreVector(raw)
        if self.softmax_mode == "apply":
            return ScoreVector(softmax(raw))
        looks_normalized = (
            raw.min() >= 0.0 and raw.max() <= 1.0 and abs(raw.sum() - 1.0) <= 1e-4
        )
        return ScoreVector(raw if looks_normalized else softmax(raw))

    def _check_image(self, image: ImageTensor) -> None:
        c, h, w = self.input_spec
        if image.data.shape != (c, h, w):
            raise DimensionMismatchError(
                f"image shape {image.data.shape} does not match model input {(c, h, w)}"
            )


class FixtureRunner(RunnerBase):
    """Deterministic tiny CNN for oracle tests.

    Architecture: 3->4 channel 3x3 convolution (stride 1, zero padding 1),
    ReLU, global average pooling, dense 4->3, softmax. Input is 3x8x8; the
    target layer ("conv") is the post-ReLU convolution output, 4 maps of
    8x8. Weights come from the seeded LCG above, drawn in C order as
    conv weight (4,3,3,3), conv bias (4,), dense weight (3,4), dense
    bias (3,).
    """

    def __init__(self, seed: int = 0, keep_logits: bool = False):
        super().__init__(softmax_mode="apply")
        self.seed = seed
        self.input_spec = (3, 8, 8)
        self.class_count = 3
        self.target_layer = FIXTURE_LAYER
        self.keep_logits = keep_logits
        self.last_logits: Optional[np.ndarray] = None
        gen = Lcg64(seed)
        self.conv_w = gen.array((4, 3, 3, 3))
        self.conv_b = gen.array((4,))
        self.fc_w = gen.array((3, 4))
        self.fc_b = gen.array((3,))

    def _conv_relu(self, x: np.ndarray) -> np.ndarray:
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
        win = sliding_window_view(xp, (3, 3), axis=(1, 2))
        out = np.einsum("chwkl,ockl->ohw", win, self.conv_w, optimize=True)
        out = out + self.conv_b[:, None, None]
        return np.maximum(out, 0.0)

    def _head(self, stack: np.ndarray) -> np.ndarray:
        gap = stack.mean(axis=(1, 2))
        return self.fc_w @ gap + self.fc_b

    def infer(self, image: ImageTensor) -> tuple[ScoreVector, FeatureMapStack]:
        self._check_image(image)
        stack = self._conv_relu(np.asarray(image.data, dtype=np.float64))
        logits = self._head(stack)
        if self.keep_logits:
            self.last_logits = logits.copy()
        self._count()
        return self._to_scores(logits), FeatureMapStack(stack, layer_name=self.target_layer)

    def infer_scores(self, image: ImageTensor) -> ScoreVector:
        self._check_image(image)
        stack = self._conv_relu(np.asarray(image.data, dtype=np.float64))
        logits = self._head(stack)
        if self.keep_logits:
            self.last_logits = logits.copy()
        self._count()
        return self._to_scores(logits)

    def infer_scores_from_stack(self, stack: FeatureMapStack | np.ndarray) -> ScoreVector:
        maps = stack.maps if isinstance(stack, FeatureMapStack) else np.asarray(stack)
        if maps.shape != (4, 8, 8):
            raise DimensionMismatchError(f"fixture head expects a 4x8x8 stack, got {maps.shape}")
        logits = self._head(maps.astype(np.float64))
        self._count()
        return self._to_scores(logits)


_CONV_LIKE = ("Conv", "Relu", "MaxPool", "AveragePool", "GlobalAveragePool")


class OnnxRunner(RunnerBase):
    """Runs an ONNX classifier, exposing one internal layer's activation."""

    def __init__(self, path: str, target_layer: str, softmax_mode: SoftmaxMode = "auto",
                 keep_logits: bool = False):
        super().__init__(softmax_mode)
        self.path = path
        self.keep_logits = keep_logits
        self.last_logits: Optional[np.ndarray] = None
        graph = onnxio.load_graph(path)
        self.executor = onnxio.GraphExecutor(graph)
        if not self.executor.input_names:
            raise ModelLoadError(f"{path!r} has no graph inputs")
        self.input_name = self.executor.input_names[0]
        self.score_output = graph.outputs[0]
        if target_layer not in self.executor.node_outputs:
            raise UnknownLayerError(target_layer, conv_like_outputs(graph))
        self.target_layer = target_layer

        shape = self.executor.input_shapes.get(self.input_name) or []
        dims = [int(d) if d and d > 0 else None for d in shape]
        if len(dims) == 4:
            dims = dims[1:]
        if len(dims) != 3:
            dims = [3, None, None]
        self.input_spec = (dims[0] or 3, dims[1] or 224, dims[2] or 224)

        out_shape = graph.output_shapes.get(self.score_output) or []
        known = [int(d) for d in out_shape if d and d > 0]
        self.class_count = known[-1] if known else 0  # resolved on first forward

    def _finish_scores(self, raw: np.ndarray) -> ScoreVector:
        if self.keep_logits:
            self.last_logits = np.asarray(raw, dtype=np.float64).reshape(-1).copy()
        scores = self._to_scores(raw)
        if not self.class_count:
            self.class_count = scores.class_count
        return scores

    def infer(self, image: ImageTensor) -> tuple[ScoreVector, FeatureMapStack]:
        self._check_image(image)
        x = np.asarray(image.data, dtype=np.float32)[None]
        got = self.executor.run({self.input_name: x}, [self.score_output, self.target_layer])
        self._count()
        act = got[self.target_layer]
        if act.ndim != 4 or act.shape[0] != 1:
            raise DimensionMismatchError(
                f"layer {self.target_layer!r} yields shape {act.shape}, expected 1 x N x h x w"
            )
        stack = FeatureMapStack(act[0], layer_name=self.target_layer)
        return self._finish_scores(got[self.score_output]), stack

    def infer_scores(self, image: ImageTensor) -> ScoreVector:
        self._check_image(image)
        x = np.asarray(image.data, dtype=np.float32)[None]
        got = self.executor.run({self.input_name: x}, [self.score_output])
        self._count()
        return self._finish_scores(got[self.score_output])

    def infer_scores_from_stack(self, stack: FeatureMapStack | np.ndarray) -> ScoreVector:
        maps = stack.maps if isinstance(stack, FeatureMapStack) else np.asarray(stack)
        x = maps.astype(np.float32)[None]
        got = self.executor.run({self.target_layer: x}, [self.score_output])
        self._count()
        return self._finish_scores(got[self.score_output])


ModelRunner = FixtureRunner | OnnxRunner


def conv_like_outputs(graph: onnxio.OnnxGraph) -> list[str]:
    """Output names of convolution-stage nodes, in graph order."""
    return [o for node in graph.nodes if node.op_type in _CONV_LIKE
            for o in node.outputs if o]


def fixture_runner(seed: int = 0, **kw) -> FixtureRunner:
    return FixtureRunner(seed, **kw)


def load_model(path: str, target_layer: str, softmax_mode: SoftmaxMode = "auto") -> ModelRunner:
    """Build a runner from ``fixture:<seed>`` or an ONNX file path."""
    if path.startswith(FIXTURE_PREFIX):
        try:
            seed = int(path[len(FIXTURE_PREFIX):])
        except ValueError:
            raise ModelLoadError(f"fixture spec must be fixture:<integer seed>, got {path!r}")
        if target_layer not in ("", FIXTURE_LAYER):
            raise UnknownLayerError(target_layer, [FIXTURE_LAYER])
        return FixtureRunner(seed)
    return OnnxRunner(path, target_layer, softmax_mode=softmax_mode)


def list_layers(path: str) -> list[str]:
    """Conv-like layer names a model exposes for --layer."""
    if path.startswith(FIXTURE_PREFIX):
        return [FIXTURE_LAYER]
    return conv_like_outputs(onnxio.load_graph(path))
