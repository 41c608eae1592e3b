"""Command-line entry points: synth, stats, train, eval, predict, equicheck, gradcheck.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Every command is deterministic under a fixed --seed in single-threaded mode.
Configuration comes from defaults, then an optional `key = value` config file
(--config), then explicit command-line flags.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, dataclass_from_text, dataclass_to_text

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

LAYER_TOLERANCE = 1e-4
MODEL_TOLERANCE = 1e-3
GRAD_TOLERANCE = 1e-3


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value config file applied before flags")
    p.add_argument("--seed", type=int, default=None, help="rng seed (default 0)")
    p.add_argument("--out", default="runs/out", help="output directory")


def _add_model_flags(p: argparse.ArgumentParser):
    p.add_argument("--group-order", type=int, choices=(2, 4, 8), default=None,
                   help="dihedral group order N (default 4, the desk preset)")
    p.add_argument("--heads", choices=("ref", "rot", "joint"), default=None)
    p.add_argument("--plain", action="store_true",
                   help="non-equivariant baseline with matched parameter count")


def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--resize-max", type=int, default=None,
                   help="resize images so max(H, W) equals this (default 417)")
    p.add_argument("--no-aux", action="store_true",
                   help="drop the auxiliary classification loss")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--val-every", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="symdet",
        description="Dihedral-equivariant reflection/rotation symmetry detection",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic shape dataset")
    _add_common(p)
    p.add_argument("--n-train", type=int, default=600)
    p.add_argument("--n-val", type=int, default=100)
    p.add_argument("--n-test", type=int, default=100)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--min-shapes", type=int, default=1)
    p.add_argument("--max-shapes", type=int, default=3)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="dataset histograms (scale, orientation, folds, centers)")
    _add_common(p)
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--split", default=None, help="restrict to one split")
    p.add_argument("--charts", action="store_true", help="also render PNG charts")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train a model")
    _add_common(p)
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--data", required=True, help="dataset root")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint with both protocols")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", help="model checkpoint (.eqsy)")
    p.add_argument("--scores", help="directory of *_scores.eqsy files from `predict`")
    p.add_argument("--split", default="test")
    p.add_argument("--resize-max", type=int, default=None)
    p.add_argument("--schemes", choices=("both", "dilation", "legacy"), default="both")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write score maps and overlay renders")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--resize-max", type=int, default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("equicheck", help="two-path equivariance report")
    _add_common(p)
    p.add_argument("--group-order", type=int, choices=(2, 4, 8), default=4)
    p.add_argument("--size", type=int, default=64)
    p.set_defaults(func=cmd_equicheck)

    p = sub.add_parser("gradcheck", help="finite-difference gradient report")
    _add_common(p)
    p.add_argument("--group-order", type=int, choices=(2, 4, 8), default=4)
    p.add_argument("--quick", action="store_true", help="2 seeds instead of 5")
    p.set_defaults(func=cmd_gradcheck)

    return parser


# -- config assembly ---------------------------------------------------------


def _seed(args) -> int:
    return 0 if args.seed is None else args.seed


def build_model_config(args):
    from .model import ModelConfig, desk_config

    cfg = desk_config()
    if args.config:
        text = Path(args.config).read_text()
        cfg = _apply_config_text(cfg, text)
    updates = {}
    if getattr(args, "group_order", None) is not None:
        updates["group_order"] = args.group_order
    if getattr(args, "heads", None) is not None:
        updates["heads"] = args.heads
    if getattr(args, "plain", False):
        updates["equivariant"] = False
    return dataclasses.replace(cfg, **updates)


def build_train_config(args):
    from .train import TrainConfig

    cfg = TrainConfig()
    if args.config:
        cfg = _apply_config_text(cfg, Path(args.config).read_text())
    updates = {}
    flag_map = {
        "epochs": "epochs",
        "lr": "learning_rate",
        "batch": "batch_size",
        "resize_max": "resize_max",
        "threads": "num_threads",
        "val_every": "val_every",
        "seed": "rng_seed",
    }
    for flag, field_name in flag_map.items():
        value = getattr(args, flag, None)
        if value is not None:
            updates[field_name] = value
    if getattr(args, "no_aux", False):
        updates["use_aux"] = False
    return dataclasses.replace(cfg, **updates)


def _apply_config_text(cfg, text: str):
    """Apply the subset of keys that belong to cfg's dataclass."""
    known = {f.name for f in dataclasses.fields(cfg)}
    kept = []
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key = stripped.partition("=")[0].strip()
        if key in known:
            kept.append(line)
    return dataclass_from_text(type(cfg), "\n".join(kept)) if kept else cfg


def _apply_defaults(cfg, loaded):
    return dataclasses.replace(cfg, **{f.name: getattr(loaded, f.name) for f in dataclasses.fields(cfg)})


# -- commands ----------------------------------------------------------------


def cmd_synth(args) -> int:
    from .data import SyntheticSpec, generate_synthetic, write_dataset

    spec = SyntheticSpec(
        image_size=args.image_size,
        min_shapes=args.min_shapes,
        max_shapes=args.max_shapes,
        seed=_seed(args),
    )
    total = args.n_train + args.n_val + args.n_test
    samples = generate_synthetic(spec, total)
    out = Path(args.out)
    splits = write_dataset(
        samples, out, {"train": args.n_train, "val": args.n_val, "test": args.n_test}
    )
    (out / "dataset_spec.txt").write_text(dataclass_to_text(spec))
    for name, ids in splits.items():
        print(f"{name}: {len(ids)} images")
    print(f"dataset written to {out}")
    return EXIT_OK


def cmd_stats(args) -> int:
    from .data import compute_stats, parse_annotation_file
    from .data.dataset import read_split
    from .data.stats import render_charts

    root = Path(args.data)
    ann_dir = root / "annotations"
    if args.split:
        ids = read_split(root, args.split)
        paths = [ann_dir / f"{i}.txt" for i in ids]
    else:
        paths = sorted(ann_dir.glob("*.txt"))
    if not paths:
        raise FileNotFoundError(f"no annotation files under {ann_dir}")
    stats = compute_stats([parse_annotation_file(p) for p in paths])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "stats.txt").write_text(stats.text())
    (out / "stats.tsv").write_text(stats.tsv())
    if args.charts:
        for path in render_charts(stats, out):
            print(f"chart: {path}")
    print(stats.text())
    return EXIT_OK


def _load_split(args, train_cfg, split: str):
    from .data.dataset import load_dataset

    return load_dataset(args.data, split, resize_max=train_cfg.resize_max)


def cmd_train(args) -> int:
    import torch

    from .checkpoint import save_model
    from .data.annotations import AnnotationError
    from .model import SymmetryNet, parameter_count
    from .train import metrics_text, train

    model_cfg = build_model_config(args)
    train_cfg = build_train_config(args)
    torch.set_num_threads(train_cfg.num_threads)
    train_samples = _load_split(args, train_cfg, "train")
    try:
        val_samples = _load_split(args, train_cfg, "val")
    except AnnotationError:
        val_samples = []
    torch.manual_seed(train_cfg.rng_seed)
    model = SymmetryNet(model_cfg)
    print(
        f"training {'equivariant' if model_cfg.equivariant else 'plain'} model "
        f"(D_{model_cfg.group_order}, heads={model_cfg.heads}, "
        f"{parameter_count(model)} parameters) on {len(train_samples)} images"
    )
    metrics = train(model, train_samples, val_samples, train_cfg, log=print)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(out / "checkpoint.eqsy", model)
    (out / "metrics.txt").write_text(metrics_text(metrics) if metrics else "")
    (out / "run_config.txt").write_text(
        dataclass_to_text(model_cfg) + dataclass_to_text(train_cfg)
    )
    print(f"checkpoint and metrics written to {out}")
    return EXIT_OK


def _predicted_scores(model, samples):
    import torch

    pairs = {}
    heads = model.config.active_heads()
    model.eval()
    with torch.no_grad():
        for s in samples:
            preds = model(s.image.unsqueeze(0))
            entry = {}
            for task in heads:
                entry[task] = preds.for_task(task)[2].squeeze(0).numpy().astype(np.float32)
            pairs[s.image_id] = entry
    return pairs


def cmd_eval(args) -> int:
    from .checkpoint import load_container, load_model
    from .evaluate import f1_dilation_dataset, f1_legacy_dataset
    from .train import TrainConfig

    train_cfg = TrainConfig(resize_max=args.resize_max or 417)
    samples = _load_split(args, train_cfg, args.split)
    if args.scores:
        scores = {}
        heads = None
        for s in samples:
            path = Path(args.scores) / f"{s.image_id}_scores.eqsy"
            if not path.exists():
                raise FileNotFoundError(f"missing score container {path}")
            _, arrays = load_container(path)
            scores[s.image_id] = {k.removeprefix("y_"): v for k, v in arrays.items()}
            heads = tuple(scores[s.image_id].keys())
    elif args.checkpoint:
        model = load_model(args.checkpoint)
        scores = _predicted_scores(model, samples)
        heads = model.config.active_heads()
    else:
        raise ConfigError("eval needs --checkpoint or --scores")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for task in heads:
        pairs = [
            (scores[s.image_id][task], getattr(s, f"y_{task}").numpy() > 0.5)
            for s in samples
        ]
        if args.schemes in ("both", "dilation"):
            rep = f1_dilation_dataset(pairs)
            lines += rep.lines(prefix=f"{task}.dilation")
            print(f"{task} dilation  best_f1={rep.best_f1:.4f} @ t={rep.best_threshold:.2f}")
        if args.schemes in ("both", "legacy"):
            rep = f1_legacy_dataset(pairs)
            lines += rep.lines(prefix=f"{task}.legacy")
            print(f"{task} legacy    best_f1={rep.best_f1:.4f} @ t={rep.best_threshold:.2f}")
    (out / "eval_report.txt").write_text("\n".join(lines) + "\n")
    print(f"report written to {out / 'eval_report.txt'}")
    return EXIT_OK


def cmd_predict(args) -> int:
    from PIL import Image

    from .checkpoint import load_model, save_container
    from .train import TrainConfig

    model = load_model(args.checkpoint)
    train_cfg = TrainConfig(resize_max=args.resize_max or 417)
    samples = _load_split(args, train_cfg, args.split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scores = _predicted_scores(model, samples)
    for s in samples:
        arrays = {}
        for task, y in scores[s.image_id].items():
            arrays[f"y_{task}"] = y
            gray = np.clip(np.rint(y * 255.0), 0, 255).astype(np.uint8)
            Image.fromarray(gray).save(out / f"{s.image_id}_y{task}.png")
            overlay = s.raw_image * (1.0 - 0.65 * y[..., None])
            overlay[..., 0] += 0.65 * y
            overlay = np.clip(np.rint(overlay * 255.0), 0, 255).astype(np.uint8)
            Image.fromarray(overlay).save(out / f"{s.image_id}_overlay_{task}.png")
        save_container(out / f"{s.image_id}_scores.eqsy", "kind = scores\n", arrays)
    print(f"{len(samples)} predictions written to {out}")
    return EXIT_OK


def cmd_equicheck(args) -> int:
    import torch

    from .fields import FieldType
    from .groups import dihedral
    from .kernels import GROUP_TO_GROUP, SteerableKernelSpec, expand_kernel, kernel_constraint_residual
    from .model import SymmetryNet, desk_config
    from .verify import case_residuals, layer_suite, model_equivariance_residuals, smooth_random_base

    torch.set_num_threads(2)
    group = dihedral(args.group_order)
    seed = _seed(args)
    failures = []

    print(f"== per-layer two-path residuals, D_{group.n} (tolerance {LAYER_TOLERANCE:g})")
    for case in layer_suite(group):
        res = case_residuals(case, group, seed=seed)
        worst_exact = max(r for g, r in res.items() if group.is_axis_aligned(g))
        others = [r for g, r in res.items() if not group.is_axis_aligned(g)]
        note = f"  interpolated max {max(others):.2e}" if others else ""
        status = "ok" if worst_exact <= LAYER_TOLERANCE else "FAIL"
        if status == "FAIL":
            failures.append(case.name)
        print(f"{case.name:22s} max {worst_exact:.2e}  {status}{note}")

    print(f"== end-to-end score-map residuals (tolerance {MODEL_TOLERANCE:g})")
    torch.manual_seed(seed)
    model = SymmetryNet(desk_config("joint", group_order=args.group_order))
    res = model_equivariance_residuals(model, spatial=args.size, seed=seed)
    for task, per_g in res.items():
        worst_exact = max(r for g, r in per_g.items() if group.is_axis_aligned(g))
        others = [r for g, r in per_g.items() if not group.is_axis_aligned(g)]
        note = f"  interpolated max {max(others):.2e}" if others else ""
        status = "ok" if worst_exact <= MODEL_TOLERANCE else "FAIL"
        if status == "FAIL":
            failures.append(f"model.{task}")
        print(f"Y_{task:20s} max {worst_exact:.2e}  {status}{note}")

    print("== D_8 kernel-constraint residuals (exact subgroup asserted; 45-degree reported)")
    g8 = dihedral(8)
    for k in (3, 5):
        rin = FieldType.regular(g8, 2)
        rout = FieldType.regular(g8, 2)
        base = smooth_random_base((2, 2, 16), k, seed=seed)
        weight = expand_kernel(SteerableKernelSpec(rin, rout, k, base, GROUP_TO_GROUP))
        scale = weight.abs().max().item()
        exact = max(
            kernel_constraint_residual(weight, rin, rout, g)
            for g in g8.elements
            if g.rot % 2 == 0
        )
        interp = max(
            kernel_constraint_residual(weight, rin, rout, g)
            for g in g8.elements
            if g.rot % 2 == 1
        ) / scale
        status = "ok" if exact == 0.0 else "FAIL"
        if exact != 0.0:
            failures.append(f"kernel_constraint_k{k}")
        print(f"k={k}: exact-subgroup residual {exact:.1e} {status}; 45-degree relative {interp:.3f}")

    if failures:
        print(f"equicheck FAILED: {', '.join(failures)}")
        return EXIT_NUMERIC
    print("equicheck passed")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    import torch

    from .groups import dihedral
    from .verify import gradcheck_suite, model_loss_fd_check

    torch.set_num_threads(2)
    group = dihedral(args.group_order)
    seeds = (0, 1) if args.quick else (0, 1, 2, 3, 4)
    failures = []
    print(f"== per-layer finite-difference relative errors, D_{group.n} "
          f"(tolerance {GRAD_TOLERANCE:g}, seeds {seeds})")
    for name, err in gradcheck_suite(group, seeds=seeds).items():
        status = "ok" if err <= GRAD_TOLERANCE else "FAIL"
        if err > GRAD_TOLERANCE:
            failures.append(name)
        print(f"{name:22s} {err:.2e}  {status}")
    print("== end-to-end loss gradient (tiny model)")
    for seed in seeds[:2]:
        errs = model_loss_fd_check(heads="joint", seed=seed)
        worst = max(errs.values())
        status = "ok" if worst <= GRAD_TOLERANCE else "FAIL"
        if worst > GRAD_TOLERANCE:
            failures.append(f"model_loss_seed{seed}")
        print(f"seed {seed}: worst {worst:.2e}  {status}")
    if failures:
        print(f"gradcheck FAILED: {', '.join(failures)}")
        return EXIT_NUMERIC
    print("gradcheck passed")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    from .checkpoint import CheckpointError
    from .data.annotations import AnnotationError
    from .train import NumericError

    try:
        return args.func(args)
    except (AnnotationError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
