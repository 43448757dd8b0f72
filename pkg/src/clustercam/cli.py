"""Command-line entry point.

Subcommands: explain, evaluate, inspect-clusters, sweep, list-layers.
Options can also come from a JSON config file (--config) whose keys mirror
the flag names; explicit flags win over the file, the file wins over
defaults. Exit codes: 0 ok, 1 bad arguments or validation, 2 runtime
failure.

Outputs are bit-reproducible for identical argv: wall-clock fields are
written as 0.0 unless --timing is given.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from functools import partial
from pathlib import Path

import numpy as np

from . import report as report_mod
from .engine import (
    ClusterCamConfig,
    ablation_cam,
    activation_mask,
    cluster_cam,
    cluster_scores,
    masked_input,
    representative_maps,
    score_cam,
    select_base_scissors,
)
from .errors import ClusterCamError, ModelLoadError, UsageError, ValidationError
from .graph import ClusterConfig, cluster_feature_maps
from .imaging import (
    PreprocessConfig,
    decode_image,
    heatmap_to_rgb,
    load_and_preprocess,
    render_overlay,
    save_png,
)
from .metrics import evaluate_corpus, read_manifest
from .runner import list_layers, load_model

_CLUSTER_METHODS = {"kmeans": "kmeans_direct", "spectral": "spectral"}
_BASELINES = {"zero": "zero_image", "input": "input_image"}

_COMMON_MODEL = [
    (["--model"], dict(help="ONNX model path or fixture:<seed>")),
    (["--layer"], dict(default="", help="target layer (node output name)")),
    (["--softmax"], dict(default="auto", choices=["auto", "apply", "never"],
                         help="softmax handling for model outputs")),
    (["--list-layers"], dict(action="store_true",
                             help="print conv-like layer names and exit")),
]

_METHOD_FLAGS = [
    (["--method"], dict(default="cluster", choices=["cluster", "score", "ablation"])),
    (["--class"], dict(dest="class_index", default="auto",
                       help="target class index, or 'auto' for top-1")),
    (["--q"], dict(type=int, default=6, help="cluster count")),
    (["--k"], dict(type=int, default=None, help="eigenvector count (default q-1)")),
    (["--beta"], dict(type=float, default=0.5, help="base/scissors balance in [0,1]")),
    (["--cluster-method"], dict(default="kmeans", choices=["kmeans", "spectral"])),
    (["--theta"], dict(type=float, default=0.1, help="adjacency similarity threshold")),
    (["--sigma"], dict(type=float, default=1.0, help="adjacency scale")),
    (["--seed"], dict(type=int, default=0)),
    (["--mask-normalization"], dict(default="minmax", choices=["minmax", "none"])),
    (["--baseline"], dict(default="zero", choices=["zero", "input"],
                          help="Score-CAM baseline image")),
    (["--timing"], dict(action="store_true",
                        help="record wall-clock times (breaks bit-reproducibility)")),
]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


def _add(parser: _Parser, specs) -> None:
    for flags, kw in specs:
        parser.add_argument(*flags, **kw)


def _build_parser() -> _Parser:
    parser = _Parser(prog="clustercam",
                     description="Gradient-free CNN salience heatmaps and evaluation")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("explain", parents=[], add_help=True,
                       help="one heatmap for one image")
    _add(p, _COMMON_MODEL + _METHOD_FLAGS)
    _add(p, [
        (["--image"], dict(help="input image (PNG or JPEG)")),
        (["--out"], dict(help="overlay PNG output path")),
        (["--diag"], dict(default=None, help="diagnostics JSON output path")),
        (["--alpha"], dict(type=float, default=0.5, help="overlay blend factor")),
        (["--config"], dict(default=None, help="JSON config file mirroring flag names")),
    ])

    p = sub.add_parser("evaluate", help="metrics over a manifest of images")
    _add(p, _COMMON_MODEL + _METHOD_FLAGS)
    _add(p, [
        (["--manifest"], dict(help="CSV manifest: path,class_index (header optional)")),
        (["--report"], dict(help="metrics JSON output path")),
        (["--jobs"], dict(type=int, default=1, help="parallel workers, one runner each")),
        (["--config"], dict(default=None)),
    ])

    p = sub.add_parser("inspect-clusters",
                       help="per-cluster masks and masked inputs with scores")
    _add(p, _COMMON_MODEL + _METHOD_FLAGS)
    _add(p, [
        (["--image"], dict()),
        (["--out-dir"], dict(help="directory for per-cluster PNGs and panel")),
        (["--alpha"], dict(type=float, default=0.5)),
        (["--config"], dict(default=None)),
    ])

    p = sub.add_parser("sweep", help="heatmap grid over one swept parameter")
    _add(p, _COMMON_MODEL + _METHOD_FLAGS)
    _add(p, [
        (["--image"], dict()),
        (["--param"], dict(choices=["q", "k", "beta", "layer"])),
        (["--values"], dict(default=None, help="comma-separated values to sweep")),
        (["--out-dir"], dict()),
        (["--alpha"], dict(type=float, default=0.5)),
        (["--config"], dict(default=None)),
    ])

    p = sub.add_parser("list-layers", help="print conv-like layer names")
    _add(p, [(["--model"], dict())])
    return parser


def _apply_config_file(args: argparse.Namespace, argv: list[str]) -> argparse.Namespace:
    """Overlay config-file values under any flags the user typed."""
    path = getattr(args, "config", None)
    if not path:
        return args
    try:
        with open(path) as fh:
            file_values = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read config file {path!r}: {e}")
    if not isinstance(file_values, dict):
        raise UsageError(f"config file {path!r} must hold a JSON object")
    typed_flags = {a.split("=")[0].lstrip("-").replace("-", "_")
                   for a in argv if a.startswith("--")}
    for key, value in file_values.items():
        norm = key.replace("-", "_")
        dest = "class_index" if norm == "class" else norm
        if not hasattr(args, dest):
            raise UsageError(f"config file key {key!r} matches no flag")
        if norm in typed_flags or dest in typed_flags:
            continue  # explicit flag wins over the file
        setattr(args, dest, value)
    return args


def _require(args, *names) -> None:
    for name in names:
        if getattr(args, name, None) in (None, ""):
            flag = "--" + name.replace("_", "-")
            raise UsageError(f"{flag} is required")


def _target_class(args) -> int | None:
    raw = str(args.class_index)
    if raw == "auto":
        return None
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"--class must be an integer or 'auto', got {raw!r}")


def _cam_config(args) -> ClusterCamConfig:
    return ClusterCamConfig(
        q=args.q, k=args.k, beta=args.beta,
        method=_CLUSTER_METHODS[args.cluster_method],
        seed=args.seed, theta=args.theta, sigma=args.sigma,
        mask_normalization=args.mask_normalization,
    )


def _runner_and_image(args):
    runner = load_model(args.model, args.layer, softmax_mode=args.softmax)
    pc = PreprocessConfig(target_h=runner.input_spec[1], target_w=runner.input_spec[2])
    image = load_and_preprocess(args.image, pc)
    original_rgb = decode_image(args.image)
    return runner, image, original_rgb


def _maybe_list_layers(args) -> bool:
    if getattr(args, "list_layers", False):
        _require(args, "model")
        for name in list_layers(args.model):
            print(name)
        return True
    return False


def _diag_json(diag: dict, timing: bool) -> str:
    order = ["labels", "y", "base", "scissors", "beta", "q", "k", "method",
             "fp_masked", "fp_total", "wall_ms"]
    out = {key: diag[key] for key in order if key in diag}
    if not timing:
        out["wall_ms"] = 0.0
    for key in sorted(diag):
        if key not in out:
            out[key] = diag[key]
    return json.dumps(out, indent=2)


def cmd_explain(args) -> int:
    if _maybe_list_layers(args):
        return 0
    _require(args, "model", "image", "out")
    runner, image, original_rgb = _runner_and_image(args)
    target = _target_class(args)
    class_mode = "auto" if target is None else "explicit"
    if target is None:
        target = runner.infer_scores(image).top1()
    config = _cam_config(args)
    t0 = time.perf_counter()
    fp_before = runner.fp_count
    if args.method == "cluster":
        heatmap, diag = cluster_cam(runner, image, target, config)
    elif args.method == "score":
        heatmap = score_cam(runner, image, target, _BASELINES[args.baseline])
        total = runner.fp_count - fp_before
        diag = {"method": "score", "fp_masked": total - 2, "fp_total": total,
                "wall_ms": (time.perf_counter() - t0) * 1000.0}
    else:
        heatmap = ablation_cam(runner, image, target)
        total = runner.fp_count - fp_before
        diag = {"method": "ablation", "fp_masked": total - 1, "fp_total": total,
                "wall_ms": (time.perf_counter() - t0) * 1000.0}
    diag["target_class"] = int(target)
    diag["class_mode"] = class_mode
    diag["model"] = args.model
    diag["layer"] = runner.target_layer
    save_png(args.out, render_overlay(original_rgb, heatmap, args.alpha))
    if args.diag:
        Path(args.diag).write_text(_diag_json(diag, args.timing) + "\n")
    return 0


def cmd_evaluate(args) -> int:
    if _maybe_list_layers(args):
        return 0
    _require(args, "model", "manifest", "report")
    corpus = read_manifest(args.manifest)
    manifest_dir = Path(args.manifest).resolve().parent
    corpus = [(str(p if Path(p).is_absolute() or Path(p).exists() else manifest_dir / p), c)
              for p, c in corpus]
    probe = load_model(args.model, args.layer, softmax_mode=args.softmax)
    pc = PreprocessConfig(target_h=probe.input_spec[1], target_w=probe.input_spec[2])
    factory = partial(load_model, args.model, args.layer, softmax_mode=args.softmax)
    target = _target_class(args)
    corpus = [(p, c if c is not None else target) for p, c in corpus]
    metrics = evaluate_corpus(
        factory, corpus, args.method, _cam_config(args),
        load_image=partial(load_and_preprocess, config=pc),
        baseline=_BASELINES[args.baseline], jobs=args.jobs, timing=args.timing,
        model_label=args.model, layer=probe.target_layer,
    )
    report_path = Path(args.report)
    report_path.write_text(metrics.to_json() + "\n")
    report_mod.write_report_csv(metrics, str(report_path.with_suffix(".csv")))
    report_mod.render_report_figure(metrics, str(report_path.with_suffix(".png")))
    agg = metrics.aggregate()
    print(f"{args.method}: n={agg['n_images']} "
          f"avg_drop={agg['avg_confidence_drop_pct']:.2f}% "
          f"increase={agg['increase_number_pct']:.2f}% avg_fp={agg['avg_fp']:.1f}")
    if metrics.skipped:
        print(f"warning: {len(metrics.skipped)} image(s) skipped", file=sys.stderr)
    return 0


def cmd_inspect_clusters(args) -> int:
    if _maybe_list_layers(args):
        return 0
    _require(args, "model", "image", "out_dir")
    runner, image, original_rgb = _runner_and_image(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scores, stack = runner.infer(image)
    target = _target_class(args)
    if target is None:
        target = scores.top1()
    cc = ClusterConfig(q=args.q, method=_CLUSTER_METHODS[args.cluster_method],
                       k=args.k, seed=args.seed, theta=args.theta, sigma=args.sigma)
    assignment = cluster_feature_maps(stack, cc)
    reps = representative_maps(stack, assignment)
    y = cluster_scores(runner, image, reps, target, args.mask_normalization)
    base_idx, scissors_idx = select_base_scissors(y)

    mask_arrays, masked_rgbs = [], []
    for qi in range(reps.q):
        mask = activation_mask(reps.maps[qi], image.height, image.width, "minmax")
        mask_up = np.asarray(
            activation_mask(reps.maps[qi], original_rgb.shape[0], original_rgb.shape[1],
                            "minmax").data)
        mask_arrays.append(mask_up)
        masked_rgb = np.clip(np.floor(original_rgb * mask_up[:, :, None] + 0.5),
                             0, 255).astype(np.uint8)
        masked_rgbs.append(masked_rgb)
        save_png(str(out_dir / f"cluster_{qi}_mask.png"), heatmap_to_rgb(mask))
        save_png(str(out_dir / f"cluster_{qi}_masked.png"), masked_rgb)
    report_mod.render_cluster_panel(original_rgb, mask_arrays, masked_rgbs,
                                    [float(v) for v in y.y], base_idx, scissors_idx,
                                    str(out_dir / "panel.png"))
    summary = {
        "labels": [int(v) for v in assignment.labels],
        "cluster_sizes": list(reps.cluster_sizes),
        "y": [float(v) for v in y.y],
        "base": base_idx,
        "scissors": scissors_idx,
        "target_class": int(target),
        "q": args.q,
        "method": cc.method,
    }
    (out_dir / "scores.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"base=cluster {base_idx} scissors=cluster {scissors_idx} "
          f"scores={[round(float(v), 4) for v in y.y]}")
    return 0


_SWEEP_DEFAULTS = {
    "beta": "0,0.25,0.5,0.75,1",
    "q": "2,3,4,5,6,7,8",
}


def cmd_sweep(args) -> int:
    if _maybe_list_layers(args):
        return 0
    _require(args, "model", "image", "param", "out_dir")
    raw_values = args.values or _SWEEP_DEFAULTS.get(args.param)
    if not raw_values:
        raise UsageError(f"--values is required for --param {args.param}")
    values = [v.strip() for v in str(raw_values).split(",") if v.strip()]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for value in values:
        sweep_args = argparse.Namespace(**vars(args))
        if args.param == "layer":
            sweep_args.layer = value
        elif args.param == "beta":
            sweep_args.beta = float(value)
        else:
            setattr(sweep_args, args.param, int(value))
        runner, image, original_rgb = _runner_and_image(sweep_args)
        target = _target_class(args)
        if target is None:
            target = runner.infer_scores(image).top1()
        if args.method == "cluster":
            heatmap, _ = cluster_cam(runner, image, target, _cam_config(sweep_args))
        elif args.method == "score":
            heatmap = score_cam(runner, image, target, _BASELINES[args.baseline])
        else:
            heatmap = ablation_cam(runner, image, target)
        overlay = render_overlay(original_rgb, heatmap, args.alpha)
        label = f"{args.param}={value}"
        safe = value.replace("/", "_").replace(".", "_")
        save_png(str(out_dir / f"{args.param}_{safe}.png"), overlay)
        entries.append((label, overlay))
    report_mod.render_sweep_grid(entries, f"{args.method} sweep over {args.param}",
                                 str(out_dir / "sweep.png"))
    return 0


def cmd_list_layers(args) -> int:
    _require(args, "model")
    for name in list_layers(args.model):
        print(name)
    return 0


_DISPATCH = {
    "explain": cmd_explain,
    "evaluate": cmd_evaluate,
    "inspect-clusters": cmd_inspect_clusters,
    "sweep": cmd_sweep,
    "list-layers": cmd_list_layers,
}


def run(argv: list[str]) -> int:
    """Parse argv and dispatch; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError(parser.format_usage())
        args = _apply_config_file(args, argv)
        return _DISPATCH[args.command](args)
    except (UsageError, ValidationError, ModelLoadError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ClusterCamError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
