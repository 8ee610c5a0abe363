"""Command-line front end wiring generation, rendering, fitting and analysis.

Exit codes: 0 success, 1 usage error, 2 runtime failure.  A single --seed
drives all randomness; identical invocations produce identical output bytes
regardless of --threads.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

__version__ = "0.1.0"

CONFIG_ENV_VAR = "SCENEFIT_CONFIG"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_effective_config(path_arg):
    from .config import Config, load_config

    path = path_arg or os.environ.get(CONFIG_ENV_VAR)
    if path:
        return load_config(path)
    return Config()


def _load_bank(path_arg):
    from .efd import PrototypeBank
    from .generator import builtin_bank

    if path_arg:
        return PrototypeBank.load(path_arg)
    return builtin_bank()


def _build_parser() -> _Parser:
    parser = _Parser(prog="scenefit", description=__doc__)
    parser.add_argument("--version", action="version", version=f"scenefit {__version__}")
    parser.add_argument("--config", help=f"JSON config path (or ${CONFIG_ENV_VAR})")
    parser.add_argument("--threads", type=int, default=0,
                        help="worker cap for per-example parallelism (0 = all cores)")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen-dataset", help="materialize a benchmark dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=None, help="square raster size")
    p.add_argument("--max-objects", type=int, default=None)

    p = sub.add_parser("render", help="rasterize a scene JSON to PNG")
    p.add_argument("--scene", required=True)
    p.add_argument("--bank", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--labels", default=None, help="also write a label-map PNG")

    p = sub.add_parser("fit", help="fit scene parameters to a target image")
    p.add_argument("--method", required=True,
                   choices=["opt-iter", "rand-optp", "from-init"])
    p.add_argument("--target", required=True)
    p.add_argument("--init", default=None, help="initial scene JSON (from-init)")
    p.add_argument("--bank", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--objects", type=int, default=4,
                   help="object slots (rand-optp) or cap (opt-iter)")

    p = sub.add_parser("prototypes", help="discover shape prototypes from images")
    p.add_argument("--images", required=True, help="dataset dir or manifest.jsonl")
    p.add_argument("--rounds", type=int, default=3)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--fit-iters", type=int, default=50)
    p.add_argument("--init-scenes", default=None,
                   help="dir of initial scene JSONs; default fits them greedily")
    p.add_argument("--limit", type=int, default=None, help="use first N images")

    p = sub.add_parser("eval", help="score predicted scenes against a dataset")
    p.add_argument("--pred", required=True, help="dir of predicted scene/fit JSONs")
    p.add_argument("--truth", required=True, help="dataset dir or manifest.jsonl")
    p.add_argument("--bank", default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("grad-analysis", help="gradient-alignment study")
    p.add_argument("--dataset", required=True)
    p.add_argument("--pairs", type=int, default=2048)
    p.add_argument("--out", required=True)
    p.add_argument("--bank", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--alphas", default=None, help="comma-separated list")
    p.add_argument("--plot", default=None, help="optional PNG line plot")

    p = sub.add_parser("recovery", help="loss-recovery study")
    p.add_argument("--dataset", required=True)
    p.add_argument("--pairs", type=int, default=64)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--out", required=True)
    p.add_argument("--bank", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--alphas", default=None, help="comma-separated list")

    return parser


def _manifest_path(dataset_arg) -> Path:
    path = Path(dataset_arg)
    return path if path.is_file() else path / "manifest.jsonl"


def _parse_alphas(arg):
    from .analysis import DEFAULT_ALPHAS

    if arg is None:
        return DEFAULT_ALPHAS
    return tuple(float(a) for a in arg.split(","))


def _cmd_gen_dataset(args, config) -> str:
    from dataclasses import replace

    from .generator import generate_dataset

    gen = config.generator
    if args.seed is not None:
        gen = replace(gen, seed=args.seed)
    if args.size is not None:
        gen = replace(gen, width=args.size, height=args.size)
    if args.max_objects is not None:
        gen = replace(gen, n_objects_range=(gen.n_objects_range[0], args.max_objects))
    threads = args.threads if args.threads > 0 else (os.cpu_count() or 1)
    manifest = generate_dataset(gen, args.count, args.out,
                                render_cfg=config.render, threads=threads)
    return f"wrote {args.count} examples to {args.out} (manifest {manifest})"


def _cmd_render(args, config) -> str:
    from .renderer import render, render_labels, write_image_png, write_labels_png
    from .scene import Scene

    scene = Scene.load(args.scene)
    bank = _load_bank(args.bank)
    write_image_png(args.out, render(scene, bank, config.render))
    if args.labels:
        write_labels_png(args.labels, render_labels(scene, bank, config.render))
    return f"rendered {args.scene} -> {args.out}"


def _cmd_fit(args, config) -> str:
    from .optimize import fit_from_init, fit_opt_iter, fit_rand_optp
    from .renderer import read_image_png
    from .scene import Scene

    target = read_image_png(args.target)
    bank = _load_bank(args.bank)
    seed = args.seed if args.seed is not None else config.seed
    opt = config.optimizer
    if args.method == "from-init":
        if not args.init:
            raise UsageError("--init is required for --method from-init")
        report = fit_from_init(target, Scene.load(args.init), bank, config.render,
                               budget=opt.budget, lr=opt.lr)
    elif args.method == "rand-optp":
        report = fit_rand_optp(target, args.objects, bank, config.render,
                               seed=seed, max_iterations=opt.rand_cap, lr=opt.lr)
    else:
        report = fit_opt_iter(target, args.objects, bank, config.render,
                              seed=seed, inner_budget=opt.budget, lr=opt.lr)
    with open(args.out, "w") as f:
        json.dump(report.to_obj(), f)
    return (f"fit {args.method}: best loss {report.best_loss:.6f} "
            f"in {report.iterations} iterations -> {args.out}")


def _load_pred_scene(path: Path):
    from .scene import Scene

    with open(path) as f:
        obj = json.load(f)
    return Scene.from_obj(obj["scene"] if "scene" in obj else obj)


def _cmd_prototypes(args, config) -> str:
    from .generator import load_image, read_manifest
    from .optimize import fit_opt_iter
    from .prototypes import discover_prototypes
    from .scene import Scene

    manifest = _manifest_path(args.images)
    records = read_manifest(manifest)
    if args.limit:
        records = records[: args.limit]
    images = [load_image(manifest, r) for r in records]
    seed = args.seed if args.seed is not None else config.seed
    if args.init_scenes:
        init_dir = Path(args.init_scenes)
        inits = [Scene.load(init_dir / Path(r["scene"]).name) for r in records]
    else:
        inits = [
            fit_opt_iter(img, 4, _load_bank(None), config.render, seed=seed).scene
            for img in images
        ]
    diagnostics = {}
    bank = discover_prototypes(images, inits, rounds=args.rounds,
                               fit_iters=args.fit_iters, cfg=config.render,
                               seed=seed, n_harmonics=config.n_harmonics,
                               diagnostics=diagnostics)
    bank.save(args.out)
    return f"discovered {len(bank)} prototypes (k={diagnostics.get('k')}) -> {args.out}"


def _cmd_eval(args, config) -> str:
    from .generator import load_scene, read_manifest
    from .metrics import evaluate

    manifest = _manifest_path(args.truth)
    records = read_manifest(manifest)
    truth = [load_scene(manifest, r) for r in records]
    pred_dir = Path(args.pred)
    preds = []
    for r in records:
        name = Path(r["scene"]).name
        path = pred_dir / name
        if not path.exists():
            path = pred_dir / f"{r['index']:06d}.json"
        preds.append(_load_pred_scene(path))
    report = evaluate(preds, truth, _load_bank(args.bank), config.render)
    with open(args.out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["example", "mae", "mse", "ssim", "iou", "ari"])
        for i in range(len(truth)):
            writer.writerow([records[i]["index"]] +
                            [f"{report.per_example[k][i]:.8f}"
                             for k in ("mae", "mse", "ssim", "iou", "ari")])
        writer.writerow(["mean", f"{report.mae:.8f}", f"{report.mse:.8f}",
                         f"{report.ssim:.8f}", f"{report.iou:.8f}", f"{report.ari:.8f}"])
    return (f"evaluated {len(truth)} scenes: mae={report.mae:.4f} iou={report.iou:.4f} "
            f"ari={report.ari:.4f} -> {args.out}")


def _cmd_grad_analysis(args, config) -> str:
    from .analysis import gradient_alignment

    seed = args.seed if args.seed is not None else config.seed
    rows = gradient_alignment(_manifest_path(args.dataset), _load_bank(args.bank),
                              alphas=_parse_alphas(args.alphas), n_pairs=args.pairs,
                              seed=seed, cfg=config.render)
    with open(args.out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["alpha", "aspect", "loss_kind", "mean_cosine", "pairs", "skipped"])
        for r in rows:
            writer.writerow([r.alpha, r.aspect, r.loss_kind,
                             f"{r.mean_cosine:.8f}", r.pairs, r.skipped])
    if args.plot:
        _plot_alignment(rows, args.plot)
    return f"wrote {len(rows)} alignment rows -> {args.out}"


def _plot_alignment(rows, out_path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
    for ax, kind in zip(axes, ("mae", "mse")):
        by_aspect = {}
        for r in rows:
            if r.loss_kind == kind:
                by_aspect.setdefault(r.aspect, []).append((r.alpha, r.mean_cosine))
        for aspect, pts in sorted(by_aspect.items()):
            pts.sort()
            ax.plot([p[0] for p in pts], [p[1] for p in pts], label=aspect)
        ax.set_title(kind.upper())
        ax.set_xlabel("alpha")
    axes[0].set_ylabel("mean cosine similarity")
    axes[0].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def _cmd_recovery(args, config) -> str:
    from .analysis import recovery_study

    seed = args.seed if args.seed is not None else config.seed
    rows = recovery_study(_manifest_path(args.dataset), _load_bank(args.bank),
                          alphas=_parse_alphas(args.alphas), n_pairs=args.pairs,
                          budget=args.steps, seed=seed, cfg=config.render)
    with open(args.out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["alpha", "mean_loss_before", "mean_loss_after", "pairs"])
        for r in rows:
            writer.writerow([r.alpha, f"{r.mean_loss_before:.8f}",
                             f"{r.mean_loss_after:.8f}", r.pairs])
    return f"wrote {len(rows)} recovery rows -> {args.out}"


_COMMANDS = {
    "gen-dataset": _cmd_gen_dataset,
    "render": _cmd_render,
    "fit": _cmd_fit,
    "prototypes": _cmd_prototypes,
    "eval": _cmd_eval,
    "grad-analysis": _cmd_grad_analysis,
    "recovery": _cmd_recovery,
}


def run(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        config = _load_effective_config(args.config)
        summary = _COMMANDS[args.command](args, config)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        print(parser.format_usage(), file=sys.stderr, end="")
        return 1
    except SystemExit as exc:  # argparse --version/--help
        code = exc.code if isinstance(exc.code, int) else 0
        return code
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(summary)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
