#!/usr/bin/env python3
"""Export pretrained torchvision AlexNet / VGG-16 classifiers to ONNX.

The exported graph is opset-13 ONNX with the softmax baked into the output,
plus a JSON manifest naming the recommended feature layer (the post-ReLU
output of the final convolution block). The protobuf bytes are written
directly, so no onnx package is needed.

    python export.py --model vgg16 --out models/vgg16.onnx \
        --manifest models/vgg16.json

If pretrained weights cannot be downloaded, --weights random exports the
same architecture with seeded random initialization (the file format,
layer names, and shapes are identical).
"""
from __future__ import annotations

import argparse
import json
import struct
import sys
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

MASK64 = (1 << 64) - 1
INPUT_HW = 224


# ---------------------------------------------------------------------------
# protobuf wire-format writers (the ONNX subset these graphs need)
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


def tensor_proto(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    body = b"".join(_field(1, 0, _varint(d)) for d in arr.shape)
    body += _field(2, 0, _varint(1))  # float32
    body += _str(8, name)
    body += _len_field(9, arr.astype("<f4").tobytes())
    return body


def attr_int(name: str, v: int) -> bytes:
    return _str(1, name) + _field(3, 0, _varint(v)) + _field(20, 0, _varint(2))


def attr_ints(name: str, vs) -> bytes:
    packed = b"".join(_varint(int(v)) for v in vs)
    return _str(1, name) + _len_field(8, packed) + _field(20, 0, _varint(7))


def node_proto(op: str, inputs, outputs, attrs=(), name: str = "") -> bytes:
    body = b"".join(_str(1, i) for i in inputs)
    body += b"".join(_str(2, o) for o in outputs)
    body += _str(3, name or outputs[0])
    body += _str(4, op)
    body += b"".join(_len_field(5, a) for a in attrs)
    return body


def value_info(name: str, shape) -> bytes:
    dims = b"".join(_len_field(1, _field(1, 0, _varint(d))) for d in shape)
    tensor_type = _field(1, 0, _varint(1)) + _len_field(2, dims)
    return _str(1, name) + _len_field(2, _len_field(1, tensor_type))


def model_proto(nodes, initializers, inputs, outputs, producer: str) -> bytes:
    g = b"".join(_len_field(1, n) for n in nodes)
    g += _str(2, "classifier")
    g += b"".join(_len_field(5, t) for t in initializers)
    g += b"".join(_len_field(11, vi) for vi in inputs)
    g += b"".join(_len_field(12, vi) for vi in outputs)
    model = _field(1, 0, _varint(8))  # ir_version 8
    model += _str(2, producer)
    model += _len_field(7, g)
    model += _len_field(8, _str(1, "") + _field(2, 0, _varint(13)))  # opset 13
    return model


# ---------------------------------------------------------------------------
# architecture walk
# ---------------------------------------------------------------------------

def _pair(v) -> tuple[int, int]:
    return (v, v) if isinstance(v, int) else (int(v[0]), int(v[1]))


def _adaptive_pool_params(in_hw: int, out_hw: int) -> tuple[int, int]:
    """kernel/stride reproducing AdaptiveAvgPool2d when its windows are uniform."""
    stride = in_hw // out_hw
    kernel = in_hw - (out_hw - 1) * stride
    return kernel, stride


class GraphBuilder:
    def __init__(self):
        self.nodes: list[bytes] = []
        self.inits: list[bytes] = []
        self.counter = 0
        self.last_features_relu = ""

    def walk(self, model: nn.Module) -> str:
        """Emit nodes for features -> avgpool -> flatten -> classifier."""
        cur = "input"
        c, h, w = 3, INPUT_HW, INPUT_HW
        for i, layer in enumerate(model.features):
            cur, (c, h, w) = self._emit(layer, cur, (c, h, w), f"features_{i}")
            if isinstance(layer, nn.ReLU):
                self.last_features_relu = cur
        cur, (c, h, w) = self._emit(model.avgpool, cur, (c, h, w), "avgpool")
        flat = "flatten_out"
        self.nodes.append(node_proto("Flatten", [cur], [flat], attrs=[attr_int("axis", 1)]))
        cur, width = flat, c * h * w
        for i, layer in enumerate(model.classifier):
            if isinstance(layer, nn.Dropout):
                continue  # identity at inference time
            if isinstance(layer, nn.Linear):
                name = f"classifier_{i}"
                w_name, b_name = f"{name}_w", f"{name}_b"
                self.inits.append(tensor_proto(w_name, layer.weight.detach().numpy()))
                self.inits.append(tensor_proto(b_name, layer.bias.detach().numpy()))
                out = f"{name}_gemm"
                self.nodes.append(node_proto("Gemm", [cur, w_name, b_name], [out],
                                             attrs=[attr_int("transB", 1)]))
                cur, width = out, layer.out_features
            elif isinstance(layer, nn.ReLU):
                out = f"classifier_{i}_relu"
                self.nodes.append(node_proto("Relu", [cur], [out]))
                cur = out
            else:
                raise SystemExit(f"unsupported classifier layer {type(layer).__name__}")
        self.nodes.append(node_proto("Softmax", [cur], ["prob"], attrs=[attr_int("axis", 1)]))
        self.class_count = width
        return "prob"

    def _emit(self, layer, cur, chw, name):
        c, h, w = chw
        if isinstance(layer, nn.Conv2d):
            kh, kw = _pair(layer.kernel_size)
            sh, sw = _pair(layer.stride)
            ph, pw = _pair(layer.padding)
            w_name, b_name = f"{name}_w", f"{name}_b"
            self.inits.append(tensor_proto(w_name, layer.weight.detach().numpy()))
            self.inits.append(tensor_proto(b_name, layer.bias.detach().numpy()))
            out = f"{name}_conv"
            self.nodes.append(node_proto(
                "Conv", [cur, w_name, b_name], [out],
                attrs=[attr_ints("kernel_shape", [kh, kw]),
                       attr_ints("pads", [ph, pw, ph, pw]),
                       attr_ints("strides", [sh, sw])]))
            h = (h + 2 * ph - kh) // sh + 1
            w = (w + 2 * pw - kw) // sw + 1
            return out, (layer.out_channels, h, w)
        if isinstance(layer, nn.ReLU):
            out = f"{name}_relu"
            self.nodes.append(node_proto("Relu", [cur], [out]))
            return out, (c, h, w)
        if isinstance(layer, nn.MaxPool2d):
            kh, kw = _pair(layer.kernel_size)
            sh, sw = _pair(layer.stride)
            ph, pw = _pair(layer.padding)
            out = f"{name}_pool"
            self.nodes.append(node_proto(
                "MaxPool", [cur], [out],
                attrs=[attr_ints("kernel_shape", [kh, kw]),
                       attr_ints("pads", [ph, pw, ph, pw]),
                       attr_ints("strides", [sh, sw])]))
            h = (h + 2 * ph - kh) // sh + 1
            w = (w + 2 * pw - kw) // sw + 1
            return out, (c, h, w)
        if isinstance(layer, nn.AdaptiveAvgPool2d):
            out_h, out_w = _pair(layer.output_size)
            kh, sh = _adaptive_pool_params(h, out_h)
            kw, sw = _adaptive_pool_params(w, out_w)
            out = f"{name}_pool"
            self.nodes.append(node_proto(
                "AveragePool", [cur], [out],
                attrs=[attr_ints("kernel_shape", [kh, kw]),
                       attr_ints("strides", [sh, sw])]))
            return out, (c, out_h, out_w)
        raise SystemExit(f"unsupported feature layer {type(layer).__name__}")


def build_model(name: str, weights: str) -> nn.Module:
    import torchvision.models as models

    torch.manual_seed(0)
    if name == "alexnet":
        ctor, enum = models.alexnet, models.AlexNet_Weights.IMAGENET1K_V1
    elif name == "vgg16":
        ctor, enum = models.vgg16, models.VGG16_Weights.IMAGENET1K_V1
    else:
        raise SystemExit(f"unknown model {name!r}; choose alexnet or vgg16")
    if weights == "pretrained":
        try:
            model = ctor(weights=enum)
        except Exception as e:
            raise SystemExit(
                f"could not obtain pretrained weights: {e}\n"
                "use --weights random for an architecture-faithful export "
                "with seeded random initialization"
            )
    else:
        model = ctor(weights=None)
    model.eval()
    return model


def export(model_name: str, out_path: str, manifest_path: str,
           weights: str = "pretrained") -> dict:
    model = build_model(model_name, weights)
    builder = GraphBuilder()
    with torch.no_grad():
        builder.walk(model)
    blob = model_proto(
        builder.nodes, builder.inits,
        [value_info("input", [1, 3, INPUT_HW, INPUT_HW])],
        [value_info("prob", [1, builder.class_count])],
        producer=f"clustercam-export/{model_name}",
    )
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    Path(out_path).write_bytes(blob)
    manifest = {
        "model": model_name,
        "file": str(out_path),
        "input": [3, INPUT_HW, INPUT_HW],
        "target_layer": builder.last_features_relu,
        "class_count": builder.class_count,
        "softmax": "baked",
        "weights": weights,
    }
    Path(manifest_path).parent.mkdir(parents=True, exist_ok=True)
    Path(manifest_path).write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--model", required=True, choices=["alexnet", "vgg16"])
    parser.add_argument("--out", required=True, help="ONNX output path")
    parser.add_argument("--manifest", required=True, help="manifest JSON output path")
    parser.add_argument("--weights", default="pretrained",
                        choices=["pretrained", "random"])
    args = parser.parse_args()
    manifest = export(args.model, args.out, args.manifest, args.weights)
    print(json.dumps(manifest, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
