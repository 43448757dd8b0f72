"""Corpus-level quantitative evaluation: confidence drop and increase number.

For each image the original target-class score is compared against the
score of the explanation input (image masked by its own heatmap). The
"increase number" is the share of images whose masked score beats the
original. Forward-pass counts per heatmap are recorded from the runner's
own counter, so efficiency claims are audited rather than assumed.
"""
from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional, Sequence

import numpy as np

from .engine import (
    ClusterCamConfig,
    ScoreBaseline,
    ablation_cam,
    cluster_cam,
    masked_input,
    score_cam,
)
from .errors import ClusterCamError, DimensionMismatchError, ParameterError
from .types import Heatmap, ImageTensor

CamMethod = Literal["cluster", "score", "ablation"]


def confidence_drop(score_original: float, score_masked: float) -> float:
    """Percentage drop of the target-class score after masking; negative
    means the masked input scored higher."""
    if score_original <= 0.0:
        raise ParameterError("confidence drop needs a positive original score")
    return 100.0 * (score_original - score_masked) / score_original


def explanation_input(image: ImageTensor, heatmap: Heatmap) -> ImageTensor:
    """Image masked by its heatmap, channelwise."""
    if heatmap.shape != (image.height, image.width):
        raise DimensionMismatchError(
            f"heatmap {heatmap.shape} does not match image {(image.height, image.width)}"
        )
    return masked_input(image, heatmap)


@dataclass
class PerImageMetrics:
    path: str
    target_class: int
    score_original: float
    score_masked: float
    confidence_drop_pct: float
    increased: bool
    fp_masked: int
    fp_total: int
    wall_ms: float

    def as_dict(self) -> dict:
        return {
            "path": self.path,
            "class": self.target_class,
            "score_original": self.score_original,
            "score_masked": self.score_masked,
            "confidence_drop_pct": self.confidence_drop_pct,
            "increased": self.increased,
            "fp_masked": self.fp_masked,
            "fp_total": self.fp_total,
            "wall_ms": self.wall_ms,
        }


@dataclass
class MetricsReport:
    per_image: list[PerImageMetrics]
    method: str
    model: str
    layer: str
    config: dict
    skipped: list[dict] = field(default_factory=list)

    @property
    def n_images(self) -> int:
        return len(self.per_image)

    def aggregate(self) -> dict:
        n = self.n_images
        drops = [m.confidence_drop_pct for m in self.per_image]
        return {
            "avg_confidence_drop_pct": float(np.mean(drops)) if n else 0.0,
            "increase_number_pct": 100.0 * sum(m.increased for m in self.per_image) / n if n else 0.0,
            "avg_wall_ms": float(np.mean([m.wall_ms for m in self.per_image])) if n else 0.0,
            "avg_fp": float(np.mean([m.fp_masked for m in self.per_image])) if n else 0.0,
            "n_images": n,
            "n_skipped": len(self.skipped),
            "method": self.method,
            "model": self.model,
            "layer": self.layer,
            "config": self.config,
        }

    def as_dict(self) -> dict:
        return {
            "per_image": [m.as_dict() for m in self.per_image],
            "aggregate": self.aggregate(),
            "skipped": self.skipped,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)


def _heatmap_for(runner, image: ImageTensor, target_class: int, method: CamMethod,
                 config: ClusterCamConfig, baseline: ScoreBaseline) -> tuple[Heatmap, int, int]:
    """Heatmap plus (fp_masked, fp_total) measured from the runner counter."""
    before = runner.fp_count
    if method == "cluster":
        heatmap, diag = cluster_cam(runner, image, target_class, config)
        return heatmap, diag["fp_masked"], diag["fp_total"]
    if method == "score":
        heatmap = score_cam(runner, image, target_class, baseline)
        total = runner.fp_count - before
        return heatmap, total - 2, total  # extraction + baseline are not masked passes
    if method == "ablation":
        heatmap = ablation_cam(runner, image, target_class)
        total = runner.fp_count - before
        return heatmap, total - 1, total
    raise ParameterError(f"unknown method {method!r}")


def evaluate_image(runner, image: ImageTensor, target_class: Optional[int],
                   method: CamMethod, config: ClusterCamConfig,
                   baseline: ScoreBaseline = "zero_image",
                   timing: bool = True) -> PerImageMetrics:
    """Original forward, heatmap, masked forward, metrics for one image."""
    scores = runner.infer_scores(image)
    cls = scores.top1() if target_class is None else int(target_class)
    if cls < 0 or cls >= scores.class_count:
        raise ParameterError(f"class {cls} out of range for {scores.class_count} classes")
    s_orig = float(scores.scores[cls])
    t0 = time.perf_counter()
    heatmap, fp_masked, fp_total = _heatmap_for(runner, image, cls, method, config, baseline)
    wall_ms = (time.perf_counter() - t0) * 1000.0 if timing else 0.0
    s_masked = float(runner.infer_scores(explanation_input(image, heatmap)).scores[cls])
    drop = confidence_drop(s_orig, s_masked)
    return PerImageMetrics(
        path=image.source_path or "",
        target_class=cls,
        score_original=s_orig,
        score_masked=s_masked,
        confidence_drop_pct=drop,
        increased=drop < 0.0,
        fp_masked=fp_masked,
        fp_total=fp_total,
        wall_ms=wall_ms,
    )


def evaluate_corpus(runner_factory: Callable[[], object],
                    corpus: Sequence[tuple[str, Optional[int]]],
                    method: CamMethod,
                    config: ClusterCamConfig = ClusterCamConfig(),
                    *,
                    load_image: Optional[Callable[[str], ImageTensor]] = None,
                    baseline: ScoreBaseline = "zero_image",
                    jobs: int = 1,
                    timing: bool = True,
                    model_label: str = "",
                    layer: str = "") -> MetricsReport:
    """Run one CAM method over a corpus of (image path, target class or None).

    Decode failures and per-image errors are recorded in `skipped` and
    excluded from aggregates. With jobs > 1 each worker gets its own runner
    from `runner_factory`; the per-image list keeps corpus order either way.
    """
    if not corpus:
        raise ParameterError("corpus is empty")
    if load_image is None:
        from .imaging import load_and_preprocess
        load_image = load_and_preprocess

    def one(item: tuple[int, str, Optional[int]], runner) -> tuple[int, PerImageMetrics | dict]:
        idx, path, cls = item
        try:
            image = load_image(path)
            image = ImageTensor(image.data, source_path=path)
            return idx, evaluate_image(runner, image, cls, method, config,
                                       baseline=baseline, timing=timing)
        except (ClusterCamError, OSError) as e:
            return idx, {"path": path, "reason": f"{type(e).__name__}: {e}"}

    items = [(i, path, cls) for i, (path, cls) in enumerate(corpus)]
    results: list[tuple[int, PerImageMetrics | dict]] = []
    if jobs <= 1:
        runner = runner_factory()
        results = [one(it, runner) for it in items]
    else:
        import threading

        local = threading.local()

        def worker(it):
            if not hasattr(local, "runner"):
                local.runner = runner_factory()
            return one(it, local.runner)

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(worker, items))

    results.sort(key=lambda r: r[0])
    per_image = [r for _, r in results if isinstance(r, PerImageMetrics)]
    skipped = [r for _, r in results if isinstance(r, dict)]
    config_dict = {
        "q": config.q, "k": config.effective_k(), "beta": config.beta,
        "cluster_method": config.method, "seed": config.seed,
        "theta": config.theta, "sigma": config.sigma,
        "mask_normalization": config.mask_normalization,
        "baseline": baseline, "postprocess": "clamp_minmax",
    }
    return MetricsReport(per_image=per_image, method=method, model=model_label,
                         layer=layer, config=config_dict, skipped=skipped)


def read_manifest(path: str) -> list[tuple[str, Optional[int]]]:
    """Parse a `path,class_index` CSV; header row optional, blank class = top-1."""
    corpus: list[tuple[str, Optional[int]]] = []
    with open(path, newline="") as fh:
        for row_num, row in enumerate(csv.reader(fh)):
            if not row or not row[0].strip():
                continue
            first = row[0].strip()
            if row_num == 0 and first.lower() in ("path", "image", "file", "filename"):
                continue
            cls: Optional[int] = None
            if len(row) > 1 and row[1].strip():
                try:
                    cls = int(row[1].strip())
                except ValueError:
                    raise ParameterError(
                        f"manifest line {row_num + 1}: class index {row[1]!r} is not an integer"
                    )
            corpus.append((first, cls))
    if not corpus:
        raise ParameterError(f"manifest {path!r} lists no images")
    return corpus
