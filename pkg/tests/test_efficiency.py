"""Forward-pass economy on a 32-channel ONNX toy model, evaluated end to end.

Wall-clock ratios are printed for reference but only the exact FP counts are
asserted; the binding wall-time criterion lives in test_acceptance and needs
a real exported model.
"""
from functools import partial

import numpy as np
import pytest
from PIL import Image

from clustercam import (
    ClusterCamConfig,
    PreprocessConfig,
    evaluate_corpus,
    load_and_preprocess,
    load_model,
)

from conftest import (
    pb_attr_int,
    pb_attr_ints,
    pb_model,
    pb_node,
    pb_tensor,
    pb_value_info,
)


@pytest.fixture(scope="module")
def wide_onnx(tmp_path_factory):
    """3->32 channel convnet on 16x16 input, softmax output, 8 classes."""
    rng = np.random.default_rng(99)
    conv_w = (rng.normal(size=(32, 3, 3, 3)) * 0.2).astype(np.float32)
    conv_b = rng.normal(size=(32,)).astype(np.float32)
    fc_w = (rng.normal(size=(8, 32)) * 0.5).astype(np.float32)
    fc_b = rng.normal(size=(8,)).astype(np.float32)
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
                    [pb_value_info("input", [1, 3, 16, 16])],
                    [pb_value_info("prob", [1, 8])])
    path = tmp_path_factory.mktemp("model") / "wide.onnx"
    path.write_bytes(blob)
    return str(path)


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    rng = np.random.default_rng(7)
    root = tmp_path_factory.mktemp("imgs")
    corpus = []
    for i in range(12):
        arr = rng.integers(0, 256, size=(16, 16, 3)).astype(np.uint8)
        path = root / f"i{i}.png"
        Image.fromarray(arr).save(path)
        corpus.append((str(path), None))
    return corpus


def test_fp_economy_on_onnx_model(wide_onnx, small_corpus):
    loader = partial(load_and_preprocess, config=PreprocessConfig(target_h=16, target_w=16))
    reports = {}
    for method in ("cluster", "score", "ablation"):
        reports[method] = evaluate_corpus(
            lambda: load_model(wide_onnx, "relu_out"), small_corpus, method,
            ClusterCamConfig(q=6, seed=0),
            load_image=loader, timing=True, model_label="wide", layer="relu_out",
        )
    agg = {m: r.aggregate() for m, r in reports.items()}
    assert agg["cluster"]["avg_fp"] == 6.0     # Q, independent of channel count
    assert agg["score"]["avg_fp"] == 32.0      # N
    assert agg["ablation"]["avg_fp"] == 32.0   # N
    assert agg["cluster"]["n_images"] == 12
    ratio = agg["score"]["avg_wall_ms"] / max(agg["cluster"]["avg_wall_ms"], 1e-9)
    print(f"\nwall ms/image cluster={agg['cluster']['avg_wall_ms']:.1f} "
          f"score={agg['score']['avg_wall_ms']:.1f} (ratio {ratio:.1f}x, report only)")


def test_cluster_beats_score_on_masked_passes(wide_onnx, small_corpus):
    loader = partial(load_and_preprocess, config=PreprocessConfig(target_h=16, target_w=16))
    report = evaluate_corpus(
        lambda: load_model(wide_onnx, "relu_out"), small_corpus[:3], "cluster",
        ClusterCamConfig(q=6, seed=0), load_image=loader, timing=False,
    )
    for m in report.per_image:
        assert m.fp_masked == 6 and m.fp_total == 7
