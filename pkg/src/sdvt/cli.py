"""Command-line interface: the whole pipeline behind one executable.

Subcommands: synth | train | distil | fcvit | fcvitprobs | cascade | eval |
bench | export-attn | export-embed.  Every run writes a manifest.json into
--out before any long-running work, and report paths write a matplotlib
figure next to each delimited output.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Config precedence: CLI flags > --config JSON file > built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import shutil
import sys
from pathlib import Path

DESK_DEFAULTS = {
    "epochs": 10,
    "batch_size": 8,
    "lr": 1.5e-3,
    "beta2": 0.95,
    "grad_clip": 1.0,
    "lr_schedule": "warmup_cosine",
    "aug": "mild",
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_common(p, with_model_geometry=False):
    p.add_argument("--out", required=True, help="output directory (all files go here)")
    p.add_argument("--config", default=None, help="JSON file with key/value defaults")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None,
                   help="BLAS thread count (fallback: env SDVT_THREADS, then 1)")
    if with_model_geometry:
        p.add_argument("--paper-config", action="store_true", default=None,
                       help="use the full 224/16/768/12 geometry")
        p.add_argument("--image-size", type=int, default=None)
        p.add_argument("--patch-size", type=int, default=None)
        p.add_argument("--hidden-dim", type=int, default=None)
        p.add_argument("--layers", type=int, default=None)
        p.add_argument("--heads", type=int, default=None)
        p.add_argument("--mlp-dim", type=int, default=None)
        p.add_argument("--dropout", type=float, default=None)


def _add_data_source(p):
    p.add_argument("--data", default=None, help="directory with PNGs and labels.csv")
    p.add_argument("--synth", type=int, default=None,
                   help="generate a synthetic dataset with N samples per class")


def _add_train_knobs(p):
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--beta1", type=float, default=None)
    p.add_argument("--beta2", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--grad-clip", type=float, default=None)
    p.add_argument("--lr-schedule", choices=["none", "cosine", "warmup_cosine"], default=None)
    p.add_argument("--eval-every", type=int, default=None)
    p.add_argument("--aug", choices=["full", "mild", "none"], default=None)
    p.add_argument("--balance", action="store_true", default=None,
                   help="inverse-frequency sampling with replacement")


def build_parser() -> _Parser:
    parser = _Parser(prog="sdvt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("synth", help="write a synthetic dataset (PNGs + labels.csv)")
    p.add_argument("--n-per-class", type=int, default=None)
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--imbalance", default=None, help="comma list of 8 per-class multipliers")
    _add_common(p)

    p = sub.add_parser("train", help="train a model (plain | fcvit | fcvitprobs)")
    p.add_argument("--regime", choices=["plain", "fcvit", "fcvitprobs"], default=None)
    p.add_argument("--per-layer-heads", action="store_true", default=None)
    p.add_argument("--schedule", default=None, help="M,N,P epochs for fcvitprobs")
    p.add_argument("--layer-weights", default=None, help="comma list for fcvit")
    _add_data_source(p)
    _add_train_knobs(p)
    _add_common(p, with_model_geometry=True)

    p = sub.add_parser("distil", help="initialize a student by block selection and distill it")
    p.add_argument("--teacher", required=True, help="teacher checkpoint (.sdvt)")
    p.add_argument("--keep", default=None, help="comma list of teacher blocks to keep")
    p.add_argument("--w-task", type=float, default=None)
    p.add_argument("--w-distil-ce", type=float, default=None)
    p.add_argument("--w-cosine", type=float, default=None)
    p.add_argument("--w-mse", type=float, default=None)
    p.add_argument("--temperature", type=float, default=None)
    _add_data_source(p)
    _add_train_knobs(p)
    _add_common(p)

    p = sub.add_parser("fcvit", help="train with an independent head per layer")
    p.add_argument("--layer-weights", default=None, help="comma list of per-layer CE weights")
    _add_data_source(p)
    _add_train_knobs(p)
    _add_common(p, with_model_geometry=True)

    p = sub.add_parser("fcvitprobs", help="train the KL-chained per-layer heads with the M/N/P schedule")
    p.add_argument("--schedule", default=None, help="M,N,P epochs (default 2,1,5)")
    _add_data_source(p)
    _add_train_knobs(p)
    _add_common(p, with_model_geometry=True)

    p = sub.add_parser("cascade", help="cascading distillation down to one block")
    p.add_argument("--teacher", required=True, help="per-layer-head teacher checkpoint")
    p.add_argument("--epochs-per-step", type=int, default=None)
    p.add_argument("--w-task", type=float, default=None)
    p.add_argument("--w-distil-ce", type=float, default=None)
    p.add_argument("--temperature", type=float, default=None)
    _add_data_source(p)
    _add_train_knobs(p)
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint and write the metrics report")
    p.add_argument("--model", required=True)
    p.add_argument("--batch-size", type=int, default=None)
    _add_data_source(p)
    _add_common(p)

    p = sub.add_parser("bench", help="inference throughput benchmark")
    p.add_argument("--model", default=None, help="checkpoint to benchmark")
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--warmup", type=int, default=None)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--params-only", action="store_true", default=None,
                   help="report parameter counts only (no timed forward passes)")
    p.add_argument("--keep", default=None,
                   help="with --params-only: also report the block-selected student")
    _add_data_source(p)
    _add_common(p, with_model_geometry=True)

    p = sub.add_parser("export-attn", help="export class-token attention overlays")
    p.add_argument("--model", required=True)
    p.add_argument("--layer", type=int, default=None, help="block index (default: last)")
    p.add_argument("--count", type=int, default=None, help="number of images (default 8)")
    _add_data_source(p)
    _add_common(p)

    p = sub.add_parser("export-embed", help="project class-token embeddings to 2-D")
    p.add_argument("--model", required=True)
    p.add_argument("--method", choices=["pca", "tsne"], default=None)
    p.add_argument("--perplexity", type=float, default=None)
    p.add_argument("--tsne-iters", type=int, default=None)
    _add_data_source(p)
    _add_common(p)

    return parser


def _pin_threads(n: int) -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(n)


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """flags > --config JSON > defaults; returns the materialized config."""
    file_cfg = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            file_cfg = json.load(fh)
        if not isinstance(file_cfg, dict):
            raise _UsageError(f"--config {args.config} must hold a JSON object")
    resolved = {}
    for key, default in defaults.items():
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            resolved[key] = flag_val
        elif key in file_cfg:
            resolved[key] = file_cfg[key]
        else:
            resolved[key] = default
    return resolved


def _write_manifest(out_dir: Path, command: str, resolved: dict, threads: int,
                    outputs: list) -> None:
    from . import __version__

    manifest = {
        "tool": "sdvt",
        "version": __version__,
        "command": command,
        "config": resolved,
        "threads": threads,
        "platform": {
            "python": platform.python_version(),
            "system": platform.system(),
            "machine": platform.machine(),
        },
        "outputs": outputs,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _model_config(resolved: dict):
    from .vit import ViTConfig, mini_config, paper_config

    if resolved.get("paper_config"):
        cfg = paper_config(seed=resolved["seed"])
    else:
        cfg = mini_config(seed=resolved["seed"])
    overrides = {}
    for flag, field in (("image_size", "image_size"), ("patch_size", "patch_size"),
                        ("hidden_dim", "hidden_dim"), ("layers", "num_layers"),
                        ("heads", "num_heads"), ("mlp_dim", "mlp_dim"),
                        ("dropout", "dropout_prob")):
        if resolved.get(flag) is not None:
            overrides[field] = resolved[flag]
    if overrides:
        from dataclasses import replace
        cfg = replace(cfg, **overrides).validate()
    return cfg


def _load_samples(resolved: dict, image_size: int):
    from .data import load_image_dataset, synth_lesions

    data_dir = resolved.get("data")
    synth_n = resolved.get("synth")
    if (data_dir is None) == (synth_n is None):
        raise _UsageError("exactly one of --data or --synth is required")
    if data_dir is not None:
        return load_image_dataset(data_dir, Path(data_dir) / "labels.csv", image_size)
    return synth_lesions(synth_n, image_size, seed=resolved["seed"])


def _aug_config(name: str):
    from .data import AugConfig

    if name == "none":
        return None
    if name == "full":
        return AugConfig()
    if name == "mild":
        return desk_augment()
    raise _UsageError(f"unknown augmentation preset {name!r}")


def desk_augment():
    """Milder preset tuned for 10-epoch desk-scale runs."""
    from .data import AugConfig

    return AugConfig(crop_fraction=0.9, max_shift=0.05, max_scale_delta=0.05,
                     max_rotate=15.0, rgb_shift_max=0.04, brightness_delta=0.1,
                     contrast_delta=0.1, p_crop=0.3, p_shift=0.3, p_scale=0.3,
                     p_rotate=0.3, p_rgb_shift=0.3, p_brightness=0.3, p_contrast=0.3)


def _train_config(resolved: dict, regime: str, out_dir: Path, **extra):
    from .train import TrainConfig

    return TrainConfig(
        epochs=resolved["epochs"],
        batch_size=resolved["batch_size"],
        seed=resolved["seed"],
        eval_every=resolved["eval_every"],
        checkpoint_dir=str(out_dir),
        learning_rate=resolved["lr"],
        beta1=resolved["beta1"],
        beta2=resolved["beta2"],
        weight_decay=resolved["weight_decay"],
        grad_clip=resolved["grad_clip"],
        regime=regime,
        augment=_aug_config(resolved["aug"]),
        lr_schedule=resolved["lr_schedule"],
        balance=bool(resolved.get("balance")),
        **extra,
    ).validate()


_TRAIN_DEFAULTS = {
    "seed": 0,
    "epochs": DESK_DEFAULTS["epochs"],
    "batch_size": DESK_DEFAULTS["batch_size"],
    "lr": DESK_DEFAULTS["lr"],
    "beta1": 0.9,
    "beta2": DESK_DEFAULTS["beta2"],
    "weight_decay": 0.0,
    "grad_clip": DESK_DEFAULTS["grad_clip"],
    "lr_schedule": DESK_DEFAULTS["lr_schedule"],
    "eval_every": 1,
    "aug": DESK_DEFAULTS["aug"],
    "balance": False,
    "data": None,
    "synth": None,
    "paper_config": False,
    "image_size": None,
    "patch_size": None,
    "hidden_dim": None,
    "layers": None,
    "heads": None,
    "mlp_dim": None,
    "dropout": None,
}


def _finish_training_outputs(out_dir: Path, model, history, test_set, batch_size: int):
    from .metrics import report_to_csv
    from .plots import save_confusion_figure, save_history_figure
    from .train import evaluate

    report = evaluate(model, test_set, batch_size)
    report_to_csv(report, out_dir / "metrics.csv")
    save_confusion_figure(report.confusion.counts, report.class_names,
                          out_dir / "confusion.png")
    save_history_figure(history, out_dir / "history.png")
    return report


def _cmd_synth(args) -> int:
    defaults = {"n_per_class": 64, "size": 32, "seed": 0, "imbalance": None}
    resolved = _resolve(args, defaults)
    out_dir = Path(args.out)
    threads = _threads_of(args)
    _write_manifest(out_dir, "synth", resolved, threads, ["labels.csv", "*.png"])

    from .data import save_image_dataset, synth_lesions

    imbalance = None
    if resolved["imbalance"]:
        imbalance = [float(x) for x in str(resolved["imbalance"]).split(",")]
    samples = synth_lesions(resolved["n_per_class"], resolved["size"],
                            seed=resolved["seed"], imbalance=imbalance)
    save_image_dataset(samples, out_dir)
    print(f"wrote {len(samples)} images + labels.csv to {out_dir}")
    return 0


def _cmd_train(args, regime_override=None) -> int:
    defaults = dict(_TRAIN_DEFAULTS)
    defaults.update({"regime": "plain", "per_layer_heads": False, "schedule": None,
                     "layer_weights": None})
    resolved = _resolve(args, defaults)
    regime = regime_override or resolved["regime"]
    out_dir = Path(args.out)
    threads = _threads_of(args)
    _write_manifest(out_dir, regime if regime_override else "train", resolved, threads,
                    ["history.csv", "history.png", "metrics.csv", "confusion.png",
                     "best.sdvt", "final.sdvt"])

    from dataclasses import replace

    from .distill import ScheduleConfig
    from .train import train
    from .vit import build

    model_cfg = _model_config(resolved)
    if regime in ("fcvit", "fcvitprobs") or resolved.get("per_layer_heads"):
        model_cfg = replace(model_cfg, per_layer_heads=True)
    samples = _load_samples(resolved, model_cfg.image_size)
    from .data import stratified_split
    train_set, test_set = stratified_split(samples, 0.8, seed=resolved["seed"])

    extra = {}
    if regime == "fcvitprobs" and resolved.get("schedule"):
        m, n_, p_ = (int(x) for x in str(resolved["schedule"]).split(","))
        extra["schedule"] = ScheduleConfig(m, n_, p_)
    if regime == "fcvit" and resolved.get("layer_weights"):
        extra["layer_weights"] = [float(x) for x in str(resolved["layer_weights"]).split(",")]
    cfg = _train_config(resolved, regime, out_dir, **extra)

    model = build(model_cfg)
    model, history = train(model, None, train_set, test_set, cfg)
    report = _finish_training_outputs(out_dir, model, history, test_set, cfg.batch_size)
    print(f"final eval: accuracy {report.accuracy:.4f} BMA {report.bma:.4f}")
    return 0


def _cmd_distil(args) -> int:
    defaults = dict(_TRAIN_DEFAULTS)
    defaults.update({"keep": "0,2,4,7,9,11", "w_task": 1.0, "w_distil_ce": 0.5,
                     "w_cosine": 0.0, "w_mse": 0.0, "temperature": 1.0})
    resolved = _resolve(args, defaults)
    out_dir = Path(args.out)
    threads = _threads_of(args)
    _write_manifest(out_dir, "distil", resolved, threads,
                    ["history.csv", "history.png", "metrics.csv", "confusion.png",
                     "best.sdvt", "final.sdvt"])

    from .checkpoint import load_checkpoint
    from .data import stratified_split
    from .distill import BlockSelection, init_student_from_teacher
    from .losses import LossSpec
    from .train import train

    teacher = load_checkpoint(args.teacher)
    keep = tuple(int(x) for x in str(resolved["keep"]).split(","))
    student = init_student_from_teacher(teacher, BlockSelection(keep))

    samples = _load_samples(resolved, teacher.config.image_size)
    train_set, test_set = stratified_split(samples, 0.8, seed=resolved["seed"])
    spec = LossSpec(w_task=resolved["w_task"], w_distil_ce=resolved["w_distil_ce"],
                    w_cosine=resolved["w_cosine"], w_mse=resolved["w_mse"],
                    temperature=resolved["temperature"]).validate()
    cfg = _train_config(resolved, "skin_distil", out_dir, keep_indices=keep)
    student, history = train(student, teacher, train_set, test_set, cfg, spec)
    report = _finish_training_outputs(out_dir, student, history, test_set, cfg.batch_size)
    print(f"student ({len(keep)} blocks) eval: accuracy {report.accuracy:.4f} "
          f"BMA {report.bma:.4f}")
    return 0


def _cmd_cascade(args) -> int:
    defaults = dict(_TRAIN_DEFAULTS)
    defaults.update({"epochs_per_step": None, "w_task": 1.0, "w_distil_ce": 0.5,
                     "temperature": 1.0})
    resolved = _resolve(args, defaults)
    out_dir = Path(args.out)
    threads = _threads_of(args)
    _write_manifest(out_dir, "cascade", resolved, threads,
                    ["cascade_summary.csv", "cascade.png", "cascade_L*.sdvt"])

    from .checkpoint import load_checkpoint
    from .data import stratified_split
    from .distill import cascade_distill
    from .losses import LossSpec
    from .plots import save_cascade_figure

    teacher = load_checkpoint(args.teacher)
    samples = _load_samples(resolved, teacher.config.image_size)
    train_set, test_set = stratified_split(samples, 0.8, seed=resolved["seed"])
    spec = LossSpec(w_task=resolved["w_task"], w_distil_ce=resolved["w_distil_ce"],
                    temperature=resolved["temperature"]).validate()
    cfg = _train_config(resolved, "cascade_step", out_dir,
                        epochs_per_step=resolved["epochs_per_step"])
    result = cascade_distill(teacher, (train_set, test_set), cfg, spec)
    depths = [e.num_layers for e in result.entries]
    bmas = [e.report.bma for e in result.entries]
    accs = [e.report.accuracy for e in result.entries]
    save_cascade_figure(depths, bmas, accs, out_dir / "cascade.png")
    for d, b, a in zip(depths, bmas, accs):
        print(f"L{d}: BMA {b:.4f} accuracy {a:.4f}")
    return 0


def _cmd_eval(args) -> int:
    defaults = {"seed": 0, "batch_size": 64, "data": None, "synth": None}
    resolved = _resolve(args, defaults)
    out_dir = Path(args.out)
    threads = _threads_of(args)
    _write_manifest(out_dir, "eval", resolved, threads,
                    ["metrics.csv", "confusion.png", "binary_confusion.png"])

    from .checkpoint import load_checkpoint
    from .metrics import report_to_csv
    from .plots import save_confusion_figure
    from .train import evaluate

    model = load_checkpoint(args.model)
    samples = _load_samples(resolved, model.config.image_size)
    report = evaluate(model, samples, resolved["batch_size"])
    report_to_csv(report, out_dir / "metrics.csv")
    save_confusion_figure(report.confusion.counts, report.class_names,
                          out_dir / "confusion.png")
    if report.binary is not None:
        save_confusion_figure(report.binary.confusion, ("benign", "malignant"),
                              out_dir / "binary_confusion.png",
                              title="cancer vs non-cancer")
    print(f"accuracy {report.accuracy:.4f} BMA {report.bma:.4f}")
    return 0


def _cmd_bench(args) -> int:
    defaults = dict(_TRAIN_DEFAULTS)
    defaults.update({"batch_size": 32, "warmup": 1, "reps": 5, "params_only": False,
                     "keep": None, "synth": 64, "model": None})
    resolved = _resolve(args, defaults)
    out_dir = Path(args.out)
    threads = _threads_of(args)
    _write_manifest(out_dir, "bench", resolved, threads, ["bench.csv", "bench.png"])

    from .vit import build, param_count

    if args.model:
        from .checkpoint import load_checkpoint
        model = load_checkpoint(args.model)
    else:
        model = build(_model_config(resolved))

    if resolved["params_only"]:
        lines = ["model,params"]
        lines.append(f"model,{param_count(model)}")
        if resolved["keep"]:
            from .distill import BlockSelection, init_student_from_teacher
            keep = tuple(int(x) for x in str(resolved["keep"]).split(","))
            student = init_student_from_teacher(model, BlockSelection(keep))
            lines.append(f"student,{param_count(student)}")
        (out_dir / "params.csv").write_text("\n".join(lines) + "\n")
        print("\n".join(lines[1:]))
        return 0

    from .metrics import bench_throughput, bench_to_csv
    from .plots import save_bench_figure

    # fall back to synthetic samples when no --data given (exactly one source)
    if resolved.get("data") is None and resolved.get("synth") is None:
        resolved["synth"] = 64
    samples = _load_samples(resolved, model.config.image_size)
    report = bench_throughput(model, samples, resolved["batch_size"],
                              resolved["warmup"], resolved["reps"], threads=threads)
    bench_to_csv(report, out_dir / "bench.csv")
    save_bench_figure([f"{model.config.num_layers} blocks"], [report.items_per_second],
                      out_dir / "bench.png")
    print(f"{report.items_per_second:.2f} items/s over {report.total_samples} samples "
          f"({report.param_count} params)")
    return 0


def _cmd_export_attn(args) -> int:
    defaults = {"seed": 0, "layer": None, "count": 8, "data": None, "synth": None}
    resolved = _resolve(args, defaults)
    out_dir = Path(args.out)
    threads = _threads_of(args)
    _write_manifest(out_dir, "export-attn", resolved, threads,
                    ["attention_summary.csv", "*_attn.png", "*_overlay.png"])

    import numpy as np
    from PIL import Image

    from .checkpoint import load_checkpoint
    from .plots import save_attention_figure
    from .tensor import no_grad
    from .vit import cls_attention_map, forward, upsample_nearest

    model = load_checkpoint(args.model)
    samples = _load_samples(resolved, model.config.image_size)[: resolved["count"]]
    layer = resolved["layer"] if resolved["layer"] is not None else model.config.num_layers - 1

    images = np.stack([s.image for s in samples])
    with no_grad():
        out = forward(model, images, "eval")

    lines = ["filename,layer,argmax_row,argmax_col"]
    for i, s in enumerate(samples):
        grid = cls_attention_map(out, layer, i)
        heat = upsample_nearest(grid, model.config.image_size)
        stem = Path(s.source_id).stem
        # keep a copy of the source image so the overlay sits beside it
        src_png = out_dir / f"{stem}.png"
        rgb = np.clip(s.image * 255.0 + 0.5, 0, 255).astype(np.uint8).transpose(1, 2, 0)
        Image.fromarray(rgb).save(src_png)
        gray = np.clip(heat * 255.0 + 0.5, 0, 255).astype(np.uint8)
        Image.fromarray(gray, mode="L").save(out_dir / f"{stem}_attn.png")
        save_attention_figure(s.image, heat, out_dir / f"{stem}_overlay.png")
        r, c = np.unravel_index(np.argmax(grid), grid.shape)
        lines.append(f"{stem}.png,{layer},{r},{c}")
    (out_dir / "attention_summary.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {len(samples)} attention overlays to {out_dir}")
    return 0


def _cmd_export_embed(args) -> int:
    defaults = {"seed": 0, "method": "tsne", "perplexity": 30.0, "tsne_iters": 1000,
                "data": None, "synth": None, "batch_size": 64}
    resolved = _resolve(args, defaults)
    out_dir = Path(args.out)
    threads = _threads_of(args)
    _write_manifest(out_dir, "export-embed", resolved, threads,
                    ["embedding.csv", "embedding.png"])

    import numpy as np

    from .checkpoint import load_checkpoint
    from .data import default_taxonomy
    from .plots import save_embedding_figure
    from .projection import project_embeddings, write_projection_csv
    from .tensor import layer_norm, no_grad
    from .vit import forward

    model = load_checkpoint(args.model)
    samples = _load_samples(resolved, model.config.image_size)
    feats = []
    labels = [s.label for s in samples]
    with no_grad():
        for i in range(0, len(samples), 64):
            images = np.stack([s.image for s in samples[i:i + 64]])
            out = forward(model, images, "eval")
            cls = out.per_layer_hidden[-1][:, 0]
            normed = layer_norm(cls, model.final_norm.gamma, model.final_norm.beta)
            feats.append(normed.data.copy())
    emb = np.concatenate(feats, axis=0)
    coords = project_embeddings(emb, method=resolved["method"], seed=resolved["seed"],
                                perplexity=resolved["perplexity"],
                                n_iter=resolved["tsne_iters"])
    write_projection_csv(out_dir / "embedding.csv", coords, labels)
    names = default_taxonomy().names if model.config.num_classes == 8 else [
        f"class_{i}" for i in range(model.config.num_classes)]
    save_embedding_figure(coords, labels, names, out_dir / "embedding.png",
                          title=f"{resolved['method']} projection")
    print(f"wrote embedding.csv + embedding.png ({len(samples)} points)")
    return 0


def _threads_of(args) -> int:
    if getattr(args, "threads", None) is not None:
        return args.threads
    env = os.environ.get("SDVT_THREADS")
    if env:
        return int(env)
    return 1


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "distil": _cmd_distil,
    "fcvit": lambda a: _cmd_train(a, regime_override="fcvit"),
    "fcvitprobs": lambda a: _cmd_train(a, regime_override="fcvitprobs"),
    "cascade": _cmd_cascade,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
    "export-attn": _cmd_export_attn,
    "export-embed": _cmd_export_embed,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    if args.command is None:
        parser.print_help(sys.stderr)
        return 1

    _pin_threads(_threads_of(args))

    from .errors import (DataError, InvalidArgumentError, NumericFailureError,
                         NumericInputError)

    try:
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except InvalidArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericInputError, NumericFailureError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
