"""Shared test oracles.

Everything here is written independently of the package internals: the
fixture-network oracle uses plain nested loops, the ONNX builder encodes
protobuf wire bytes by hand, and the interpolation/normalization helpers
are scalar re-derivations. Tests compare package output against these.
"""
from __future__ import annotations

import math
import struct
from itertools import product

import numpy as np
import pytest

MASK64 = (1 << 64) - 1
LCG_MUL = 6364136223846793005
LCG_ADD = 1442695040888963407


class FixtureOracle:
    """Nested-loop re-derivation of the fixture CNN from its documented spec."""

    def __init__(self, seed: int):
        self.state = seed & MASK64
        self.conv_w = [[[[self._draw() for _ in range(3)] for _ in range(3)]
                        for _ in range(3)] for _ in range(4)]
        self.conv_b = [self._draw() for _ in range(4)]
        self.fc_w = [[self._draw() for _ in range(4)] for _ in range(3)]
        self.fc_b = [self._draw() for _ in range(3)]

    def _draw(self) -> float:
        self.state = (self.state * LCG_MUL + LCG_ADD) & MASK64
        return (self.state >> 11) / 2.0 ** 53 - 0.5

    def conv_relu(self, x) -> list:
        out = [[[0.0] * 8 for _ in range(8)] for _ in range(4)]
        for o in range(4):
            for i in range(8):
                for j in range(8):
                    acc = self.conv_b[o]
                    for c in range(3):
                        for u in range(3):
                            for v in range(3):
                                ii, jj = i + u - 1, j + v - 1
                                if 0 <= ii < 8 and 0 <= jj < 8:
                                    acc += self.conv_w[o][c][u][v] * float(x[c][ii][jj])
                    out[o][i][j] = max(acc, 0.0)
        return out

    def head(self, stack) -> list:
        logits = []
        for k in range(3):
            acc = self.fc_b[k]
            for o in range(4):
                gap = sum(float(stack[o][i][j]) for i in range(8) for j in range(8)) / 64.0
                acc += self.fc_w[k][o] * gap
            logits.append(acc)
        return logits

    @staticmethod
    def softmax(logits) -> list:
        m = max(logits)
        exps = [math.exp(v - m) for v in logits]
        total = sum(exps)
        return [e / total for e in exps]

    def forward(self, x) -> tuple[list, list]:
        stack = self.conv_relu(x)
        return self.softmax(self.head(stack)), stack

    def forward_scores(self, x) -> list:
        return self.forward(x)[0]

    def head_scores(self, stack) -> list:
        return self.softmax(self.head(stack))


def oracle_bilinear(m, out_h: int, out_w: int) -> list:
    """Scalar corner-aligned bilinear interpolation."""
    h, w = len(m), len(m[0])
    out = [[0.0] * out_w for _ in range(out_h)]
    for i in range(out_h):
        for j in range(out_w):
            y = i * (h - 1) / (out_h - 1) if out_h > 1 else 0.0
            x = j * (w - 1) / (out_w - 1) if out_w > 1 else 0.0
            y0, x0 = int(math.floor(y)), int(math.floor(x))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            wy, wx = y - y0, x - x0
            out[i][j] = (float(m[y0][x0]) * (1 - wy) * (1 - wx)
                         + float(m[y0][x1]) * (1 - wy) * wx
                         + float(m[y1][x0]) * wy * (1 - wx)
                         + float(m[y1][x1]) * wy * wx)
    return out


def oracle_minmax(m) -> list:
    flat = [v for row in m for v in row]
    lo, hi = min(flat), max(flat)
    if hi == lo:
        return [[0.0] * len(m[0]) for _ in m]
    return [[(v - lo) / (hi - lo) for v in row] for row in m]


def best_two_partition(points: np.ndarray) -> tuple[float, list[set]]:
    """Exhaustive minimum-WCSS split of points into 2 nonempty clusters."""
    n = len(points)
    best = (math.inf, None)
    for bits in range(1, 2 ** n - 1):
        groups = [set(), set()]
        for i in range(n):
            groups[(bits >> i) & 1].add(i)
        wcss = 0.0
        for g in groups:
            idx = sorted(g)
            centroid = points[idx].mean(axis=0)
            wcss += float(((points[idx] - centroid) ** 2).sum())
        if wcss < best[0] - 1e-12:
            best = (wcss, groups)
    return best


def best_partition(points: np.ndarray, q: int) -> tuple[float, list[set]]:
    """Exhaustive minimum-WCSS partition into q nonempty clusters (tiny n only)."""
    n = len(points)
    best = (math.inf, None)
    for labels in product(range(q), repeat=n):
        if len(set(labels)) != q:
            continue
        wcss = 0.0
        for g in range(q):
            idx = [i for i in range(n) if labels[i] == g]
            centroid = points[idx].mean(axis=0)
            wcss += float(((points[idx] - centroid) ** 2).sum())
        if wcss < best[0] - 1e-12:
            best = (wcss, [set(i for i in range(n) if labels[i] == g) for g in range(q)])
    return best


def label_sets(labels) -> set[frozenset]:
    groups: dict[int, set] = {}
    for i, lab in enumerate(labels):
        groups.setdefault(int(lab), set()).add(i)
    return {frozenset(g) for g in groups.values()}


# ---------------------------------------------------------------------------
# hand-rolled protobuf encoding for small ONNX test models
# ---------------------------------------------------------------------------

def _varint(v: int) -> bytes:
    v &= MASK64
    out = bytearray()
    while True:
        b = v & 0x7F
        v >>= 7
        if v:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def _field(num: int, wire: int, payload: bytes) -> bytes:
    return _varint((num << 3) | wire) + payload


def _len_field(num: int, data: bytes) -> bytes:
    return _field(num, 2, _varint(len(data)) + data)


def _str(num: int, s: str) -> bytes:
    return _len_field(num, s.encode())


def pb_tensor(name: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    body = b"".join(_field(1, 0, _varint(d)) for d in arr.shape)
    if arr.dtype.kind == "i":
        body += _field(2, 0, _varint(7))
        raw = arr.astype("<i8").tobytes()
    else:
        body += _field(2, 0, _varint(1))
        raw = arr.astype("<f4").tobytes()
    body += _str(8, name)
    body += _len_field(9, raw)
    return body


def pb_attr_int(name: str, v: int) -> bytes:
    return _str(1, name) + _field(3, 0, _varint(v)) + _field(20, 0, _varint(2))


def pb_attr_ints(name: str, vs) -> bytes:
    packed = b"".join(_varint(v) for v in vs)
    return _str(1, name) + _len_field(8, packed) + _field(20, 0, _varint(7))


def pb_attr_float(name: str, v: float) -> bytes:
    return _str(1, name) + _field(2, 5, struct.pack("<f", v)) + _field(20, 0, _varint(1))


def pb_node(op: str, inputs, outputs, attrs=(), name: str = "") -> bytes:
    body = b"".join(_str(1, i) for i in inputs)
    body += b"".join(_str(2, o) for o in outputs)
    body += _str(3, name or op.lower())
    body += _str(4, op)
    body += b"".join(_len_field(5, a) for a in attrs)
    return body


def pb_value_info(name: str, shape) -> bytes:
    dims = b"".join(_len_field(1, _field(1, 0, _varint(d))) for d in shape)
    tensor_type = _field(1, 0, _varint(1)) + _len_field(2, dims)
    return _str(1, name) + _len_field(2, _len_field(1, tensor_type))


def pb_model(nodes, initializers, inputs, outputs) -> bytes:
    g = b"".join(_len_field(1, n) for n in nodes)
    g += _str(2, "net")
    g += b"".join(_len_field(5, t) for t in initializers)
    g += b"".join(_len_field(11, vi) for vi in inputs)
    g += b"".join(_len_field(12, vi) for vi in outputs)
    model = _field(1, 0, _varint(8))
    model += _len_field(7, g)
    model += _len_field(8, _str(1, "") + _field(2, 0, _varint(13)))
    return model


@pytest.fixture
def tiny_onnx(tmp_path):
    """A 3->2 channel conv-net ONNX file plus its weights, for runner tests.

    input(1,3,4,4) -> Conv(pad 1) -> Relu -> GlobalAveragePool -> Flatten
    -> Gemm -> Softmax(prob). The conv-relu output 'relu_out' is the target.
    """
    rng = np.random.default_rng(123)
    conv_w = rng.normal(size=(2, 3, 3, 3)).astype(np.float32)
    conv_b = rng.normal(size=(2,)).astype(np.float32)
    fc_w = rng.normal(size=(2, 2)).astype(np.float32)
    fc_b = rng.normal(size=(2,)).astype(np.float32)
    nodes = [
        pb_node("Conv", ["input", "conv_w", "conv_b"], ["conv_out"],
                attrs=[pb_attr_ints("kernel_shape", [3, 3]),
                       pb_attr_ints("pads", [1, 1, 1, 1]),
                       pb_attr_ints("strides", [1, 1])]),
        pb_node("Relu", ["conv_out"], ["relu_out"]),
        pb_node("GlobalAveragePool", ["relu_out"], ["gap_out"]),
        pb_node("Flatten", ["gap_out"], ["flat_out"], attrs=[pb_attr_int("axis", 1)]),
        pb_node("Gemm", ["flat_out", "fc_w", "fc_b"], ["logits"],
                attrs=[pb_attr_int("transB", 1)]),
        pb_node("Softmax", ["logits"], ["prob"], attrs=[pb_attr_int("axis", 1)]),
    ]
    inits = [pb_tensor("conv_w", conv_w), pb_tensor("conv_b", conv_b),
             pb_tensor("fc_w", fc_w), pb_tensor("fc_b", fc_b)]
    blob = pb_model(nodes, inits,
                    [pb_value_info("input", [1, 3, 4, 4])],
                    [pb_value_info("prob", [1, 2])])
    path = tmp_path / "tiny.onnx"
    path.write_bytes(blob)
    return str(path), dict(conv_w=conv_w, conv_b=conv_b, fc_w=fc_w, fc_b=fc_b)


def tiny_onnx_forward(weights: dict, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nested-loop forward of the tiny_onnx net: (probabilities, relu stack)."""
    conv_w, conv_b = weights["conv_w"], weights["conv_b"]
    fc_w, fc_b = weights["fc_w"], weights["fc_b"]
    stack = np.zeros((2, 4, 4))
    for o in range(2):
        for i in range(4):
            for j in range(4):
                acc = float(conv_b[o])
                for c in range(3):
                    for u in range(3):
                        for v in range(3):
                            ii, jj = i + u - 1, j + v - 1
                            if 0 <= ii < 4 and 0 <= jj < 4:
                                acc += float(conv_w[o, c, u, v]) * float(x[c, ii, jj])
                stack[o, i, j] = max(acc, 0.0)
    gap = [stack[o].mean() for o in range(2)]
    logits = [float(fc_b[k]) + sum(float(fc_w[k, o]) * gap[o] for o in range(2))
              for k in range(2)]
    m = max(logits)
    exps = [math.exp(v - m) for v in logits]
    probs = np.array([e / sum(exps) for e in exps])
    return probs, stack


@pytest.fixture
def fixture_image():
    """A deterministic structured 3x8x8 test input."""
    base = np.linspace(-1.0, 1.0, 64).reshape(8, 8)
    return np.stack([base, base.T, np.flipud(base)])
