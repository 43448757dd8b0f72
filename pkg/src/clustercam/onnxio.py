"""Minimal ONNX model reader and numpy executor.

Parses the protobuf wire format directly (field numbers from the public
onnx.proto schema) and evaluates the graph with numpy, so classifier
exports can run without an ONNX runtime. Supported ops cover standard
feed-forward image classifiers: Conv, Relu, MaxPool, AveragePool,
GlobalAveragePool, Flatten, Reshape, Gemm, MatMul, Add, Softmax,
Dropout, Identity, Constant.

Nodes are evaluated in file order, which ONNX requires to be a valid
topological order.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ModelLoadError, UnsupportedSplitError

# TensorProto.DataType values we accept
_DT_FLOAT = 1
_DT_INT64 = 7
_DT_DOUBLE = 11


# ---------------------------------------------------------------------------
# protobuf wire-format primitives
# ---------------------------------------------------------------------------

def _read_varint(buf: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise ModelLoadError("truncated varint in model file")
        b = buf[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        if not b & 0x80:
            return result, pos
        shift += 7
        if shift > 70:
            raise ModelLoadError("malformed varint in model file")


def _signed64(v: int) -> int:
    return v - (1 << 64) if v >= (1 << 63) else v


def _fields(buf: bytes):
    """Yield (field_number, wire_type, value) triples from a message buffer."""
    pos = 0
    n = len(buf)
    while pos < n:
        tag, pos = _read_varint(buf, pos)
        fnum, wtype = tag >> 3, tag & 7
        if wtype == 0:  # varint
            val, pos = _read_varint(buf, pos)
        elif wtype == 1:  # 64-bit
            val = buf[pos:pos + 8]
            pos += 8
        elif wtype == 2:  # length-delimited
            ln, pos = _read_varint(buf, pos)
            val = buf[pos:pos + ln]
            pos += ln
        elif wtype == 5:  # 32-bit
            val = buf[pos:pos + 4]
            pos += 4
        else:
            raise ModelLoadError(f"unsupported protobuf wire type {wtype}")
        yield fnum, wtype, val


def _packed_varints(buf: bytes) -> list[int]:
    out = []
    pos = 0
    while pos < len(buf):
        v, pos = _read_varint(buf, pos)
        out.append(_signed64(v))
    return out


# ---------------------------------------------------------------------------
# message decoding
# ---------------------------------------------------------------------------

@dataclass
class OnnxNode:
    op_type: str = ""
    name: str = ""
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    attrs: dict = field(default_factory=dict)


@dataclass
class OnnxGraph:
    name: str = ""
    nodes: list[OnnxNode] = field(default_factory=list)
    initializers: dict[str, np.ndarray] = field(default_factory=dict)
    inputs: list[tuple[str, list[int | None]]] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    output_shapes: dict[str, list[int | None]] = field(default_factory=dict)


def _decode_tensor(buf: bytes) -> tuple[str, np.ndarray]:
    dims: list[int] = []
    dtype = _DT_FLOAT
    name = ""
    raw = b""
    float_data: list[float] = []
    int64_data: list[int] = []
    double_data: list[float] = []
    for fnum, wtype, val in _fields(buf):
        if fnum == 1:
            dims.extend(_packed_varints(val) if wtype == 2 else [_signed64(val)])
        elif fnum == 2:
            dtype = val
        elif fnum == 4 and wtype == 2:
            float_data.extend(struct.unpack(f"<{len(val) // 4}f", val))
        elif fnum == 4 and wtype == 5:
            float_data.append(struct.unpack("<f", val)[0])
        elif fnum == 7:
            int64_data.extend(_packed_varints(val) if wtype == 2 else [_signed64(val)])
        elif fnum == 8:
            name = val.decode("utf-8")
        elif fnum == 9:
            raw = val
        elif fnum == 10 and wtype == 2:
            double_data.extend(struct.unpack(f"<{len(val) // 8}d", val))
    if raw:
        if dtype == _DT_FLOAT:
            arr = np.frombuffer(raw, dtype="<f4")
        elif dtype == _DT_INT64:
            arr = np.frombuffer(raw, dtype="<i8")
        elif dtype == _DT_DOUBLE:
            arr = np.frombuffer(raw, dtype="<f8")
        else:
            raise ModelLoadError(f"unsupported tensor data type {dtype}")
    elif float_data:
        arr = np.asarray(float_data, dtype=np.float32)
    elif int64_data:
        arr = np.asarray(int64_data, dtype=np.int64)
    elif double_data:
        arr = np.asarray(double_data, dtype=np.float64)
    else:
        arr = np.zeros(0, dtype=np.float32)
    return name, arr.reshape(dims) if dims else arr


def _decode_shape(buf: bytes) -> list[int | None]:
    dims: list[int | None] = []
    for fnum, _, val in _fields(buf):
        if fnum == 1:  # Dimension
            dim_value = None
            for dfnum, _, dval in _fields(val):
                if dfnum == 1:
                    dim_value = _signed64(dval) if isinstance(dval, int) else None
            dims.append(dim_value)
    return dims


def _decode_value_info(buf: bytes) -> tuple[str, list[int | None]]:
    name = ""
    shape: list[int | None] = []
    for fnum, _, val in _fields(buf):
        if fnum == 1:
            name = val.decode("utf-8")
        elif fnum == 2:  # TypeProto
            for tfnum, _, tval in _fields(val):
                if tfnum == 1:  # tensor_type
                    for sfnum, _, sval in _fields(tval):
                        if sfnum == 2:  # shape
                            shape = _decode_shape(sval)
    return name, shape


def _decode_attribute(buf: bytes):
    name = ""
    value = None
    ints: list[int] = []
    floats: list[float] = []
    for fnum, wtype, val in _fields(buf):
        if fnum == 1:
            name = val.decode("utf-8")
        elif fnum == 2:
            value = struct.unpack("<f", val)[0]
        elif fnum == 3:
            value = _signed64(val)
        elif fnum == 4:
            value = val.decode("utf-8", errors="replace")
        elif fnum == 5:
            value = _decode_tensor(val)[1]
        elif fnum == 7:
            if wtype == 2:
                floats.extend(struct.unpack(f"<{len(val) // 4}f", val))
            else:
                floats.append(struct.unpack("<f", val)[0])
        elif fnum == 8:
            ints.extend(_packed_varints(val) if wtype == 2 else [_signed64(val)])
    if ints:
        value = ints
    elif floats:
        value = floats
    return name, value


def _decode_node(buf: bytes) -> OnnxNode:
    node = OnnxNode()
    for fnum, _, val in _fields(buf):
        if fnum == 1:
            node.inputs.append(val.decode("utf-8"))
        elif fnum == 2:
            node.outputs.append(val.decode("utf-8"))
        elif fnum == 3:
            node.name = val.decode("utf-8")
        elif fnum == 4:
            node.op_type = val.decode("utf-8")
        elif fnum == 5:
            aname, avalue = _decode_attribute(val)
            node.attrs[aname] = avalue
    return node


def _decode_graph(buf: bytes) -> OnnxGraph:
    g = OnnxGraph()
    for fnum, _, val in _fields(buf):
        if fnum == 1:
            g.nodes.append(_decode_node(val))
        elif fnum == 2:
            g.name = val.decode("utf-8")
        elif fnum == 5:
            name, arr = _decode_tensor(val)
            g.initializers[name] = arr
        elif fnum == 11:
            g.inputs.append(_decode_value_info(val))
        elif fnum == 12:
            name, shape = _decode_value_info(val)
            g.outputs.append(name)
            g.output_shapes[name] = shape
    return g


def load_graph(path: str) -> OnnxGraph:
    """Parse an ONNX file into an OnnxGraph. Raises ModelLoadError."""
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as e:
        raise ModelLoadError(f"cannot read model file {path!r}: {e}") from e
    graph = None
    try:
        for fnum, _, val in _fields(buf):
            if fnum == 7:  # ModelProto.graph
                graph = _decode_graph(val)
    except ModelLoadError:
        raise
    except Exception as e:
        raise ModelLoadError(f"cannot parse {path!r} as an ONNX model: {e}") from e
    if graph is None or not graph.nodes:
        raise ModelLoadError(f"{path!r} does not contain an ONNX graph")
    return graph


# ---------------------------------------------------------------------------
# numpy op kernels
# ---------------------------------------------------------------------------

def _pair(v, default):
    if v is None:
        return default
    return tuple(int(x) for x in v)


def _conv2d(x, w, b, attrs):
    if int(attrs.get("group", 1) or 1) != 1:
        raise ModelLoadError("grouped convolution is not supported")
    dil = _pair(attrs.get("dilations"), (1, 1))
    if dil != (1, 1):
        raise ModelLoadError("dilated convolution is not supported")
    kh, kw = _pair(attrs.get("kernel_shape"), w.shape[2:])
    sh, sw = _pair(attrs.get("strides"), (1, 1))
    pt, pl, pb, pr = _pair(attrs.get("pads"), (0, 0, 0, 0))
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    out = np.einsum("nchwkl,ockl->nohw", win, w, optimize=True)
    if b is not None:
        out = out + b[None, :, None, None]
    return out.astype(np.float32)


def _pool2d(x, attrs, reduce_fn, pad_value, count_include_pad=True):
    kh, kw = _pair(attrs["kernel_shape"], None)
    sh, sw = _pair(attrs.get("strides"), (kh, kw))
    pt, pl, pb, pr = _pair(attrs.get("pads"), (0, 0, 0, 0))
    ceil_mode = int(attrs.get("ceil_mode", 0) or 0)
    h, w = x.shape[2], x.shape[3]
    if ceil_mode:
        oh = -(-(h + pt + pb - kh) // sh) + 1
        ow = -(-(w + pl + pr - kw) // sw) + 1
        pb += (oh - 1) * sh + kh - (h + pt + pb)
        pr += (ow - 1) * sw + kw - (w + pl + pr)
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)), constant_values=pad_value)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    out = reduce_fn(win, axis=(-2, -1))
    if not count_include_pad and (pt or pl or pb or pr):
        ones = np.pad(np.ones(x.shape[2:], dtype=np.float32), ((pt, pb), (pl, pr)))
        cnt = sliding_window_view(ones, (kh, kw))[::sh, ::sw].sum(axis=(-2, -1))
        out = out * (kh * kw) / cnt[None, None]
    return out.astype(np.float32)


def _gemm(a, b, c, attrs):
    alpha = float(attrs.get("alpha", 1.0) or 1.0)
    beta = float(attrs.get("beta", 1.0) or 1.0)
    if int(attrs.get("transA", 0) or 0):
        a = a.T
    if int(attrs.get("transB", 0) or 0):
        b = b.T
    out = alpha * (a @ b)
    if c is not None:
        out = out + beta * c
    return out.astype(np.float32)


def _softmax_op(x, axis):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return (e / e.sum(axis=axis, keepdims=True)).astype(np.float32)


def _reshape(x, shape):
    shape = [int(s) for s in shape]
    shape = [x.shape[i] if s == 0 else s for i, s in enumerate(shape)]
    return x.reshape(shape)


class GraphExecutor:
    """Evaluates an OnnxGraph on float32 tensors via numpy."""

    def __init__(self, graph: OnnxGraph):
        self.graph = graph
        init_names = set(graph.initializers)
        self.input_names = [n for n, _ in graph.inputs if n not in init_names]
        self.input_shapes = {n: s for n, s in graph.inputs if n not in init_names}
        self.node_outputs = [o for node in graph.nodes for o in node.outputs if o]

    def run(self, feeds: dict[str, np.ndarray], fetches: list[str]) -> dict[str, np.ndarray]:
        """Evaluate nodes in graph order until every fetch is available.

        `feeds` may name graph inputs or any internal tensor; nodes whose
        inputs never become available are skipped, which is what makes
        re-entry at an internal layer work. Raises UnsupportedSplitError if
        a fetch stays unreachable from the feeds.
        """
        values: dict[str, np.ndarray] = dict(self.graph.initializers)
        values.update(feeds)
        want = set(fetches)
        for node in self.graph.nodes:
            if want.issubset(values):
                break
            if all(o in values for o in node.outputs if o):
                continue  # already fed past this node
            if not all(i in values for i in node.inputs if i):
                continue  # upstream of a mid-graph feed
            self._eval(node, values)
        missing = [f for f in fetches if f not in values]
        if missing:
            raise UnsupportedSplitError(
                f"tensors {missing} are not reachable from feeds {sorted(feeds)}"
            )
        return {f: values[f] for f in fetches}

    def _eval(self, node: OnnxNode, values: dict[str, np.ndarray]) -> None:
        op = node.op_type
        ins = [values[i] if i else None for i in node.inputs]
        a = node.attrs
        if op == "Conv":
            out = _conv2d(ins[0], ins[1], ins[2] if len(ins) > 2 else None, a)
        elif op == "Relu":
            out = np.maximum(ins[0], 0.0)
        elif op == "MaxPool":
            out = _pool2d(ins[0], a, np.max, -np.inf)
        elif op == "AveragePool":
            include_pad = bool(int(a.get("count_include_pad", 0) or 0))
            out = _pool2d(ins[0], a, np.mean, 0.0, count_include_pad=include_pad)
        elif op == "GlobalAveragePool":
            out = ins[0].mean(axis=(2, 3), keepdims=True).astype(np.float32)
        elif op == "Flatten":
            axis = int(a.get("axis", 1) or 1)
            lead = int(np.prod(ins[0].shape[:axis])) if axis else 1
            out = ins[0].reshape(lead, -1)
        elif op == "Reshape":
            out = _reshape(ins[0], ins[1])
        elif op == "Gemm":
            out = _gemm(ins[0], ins[1], ins[2] if len(ins) > 2 else None, a)
        elif op == "MatMul":
            out = (ins[0] @ ins[1]).astype(np.float32)
        elif op == "Add":
            out = (ins[0] + ins[1]).astype(np.float32)
        elif op == "Softmax":
            out = _softmax_op(ins[0], int(a.get("axis", -1) if a.get("axis") is not None else -1))
        elif op in ("Dropout", "Identity"):
            out = ins[0]
        elif op == "Constant":
            out = a.get("value")
        else:
            raise ModelLoadError(f"unsupported op {op!r} (node {node.name!r})")
        values[node.outputs[0]] = out
        for extra in node.outputs[1:]:
            if extra:
                values[extra] = np.zeros(0, dtype=np.float32)  # unused side outputs
