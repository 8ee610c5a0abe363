"""Gradient-alignment and loss-recovery diagnostics of the render pipeline.

Both studies draw pairs of ground-truth scenes with equal object counts,
blend them as p' = alpha * p1 + (1 - alpha) * p2 (so p' equals the target p2
at alpha = 0), and probe how informative the pixel-space gradient is:

* `gradient_alignment` compares, per scene aspect, the direction of the pixel
  loss gradient at p' against the parameter-space loss gradient toward p2;
* `recovery_study` runs the standard per-scene optimization from p' and
  reports the parameter loss before and after.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .efd import PrototypeBank
from .generator import EmptyManifest, load_scene, read_manifest
from .losses import grad_param_loss, hungarian, matching_cost_matrix, param_loss
from .optimize import DEFAULT_BUDGET, fit_from_init
from .renderer import RenderConfig, raster_core, render, scene_tensors
from .scene import FlatParams, Scene, flatten, unflatten

DEFAULT_ALPHAS = tuple(np.round(np.arange(1, 11) * 0.1, 1))
ASPECT_GROUPS = ("translation", "color", "scale", "rotation", "shape",
                 "confidence", "background")
SKIP_NORM = 1e-12


@dataclass(frozen=True)
class AlignmentRow:
    alpha: float
    aspect: str
    loss_kind: str
    mean_cosine: float
    pairs: int
    skipped: int


@dataclass(frozen=True)
class RecoveryRow:
    alpha: float
    mean_loss_before: float
    mean_loss_after: float
    pairs: int


def interpolate_params(p1: Scene, p2: Scene, alpha: float) -> Scene:
    """Blend matched scenes: alpha * p1 + (1 - alpha) * p2, in p2's object order.

    Objects of p1 are first matched to p2's by minimum assignment cost;
    rotation pairs and shape weights of the blend are renormalized.
    """
    if p1.n_objects != p2.n_objects:
        raise ValueError("scenes must have equal object counts")
    if (p1.width, p1.height) != (p2.width, p2.height):
        raise ValueError("scenes must share raster dimensions")
    match = hungarian(matching_cost_matrix(p2.objects, p1.objects))
    reordered = tuple(p1.objects[ci] for _, ci in match.assignment)
    p1_sorted = Scene(reordered, p1.background, p1.width, p1.height)
    v1 = flatten(p1_sorted).values
    v2 = flatten(p2).values
    blend = alpha * v1 + (1.0 - alpha) * v2
    return unflatten(FlatParams(blend, flatten(p2).layout))


def _sample_pairs(records, n_pairs: int, rng: np.random.Generator):
    """Uniform example pairs; the partner is redrawn until counts match."""
    pairs = []
    for _ in range(n_pairs):
        i = int(rng.integers(len(records)))
        for _ in range(10_000):
            j = int(rng.integers(len(records)))
            if records[j]["n_objects"] == records[i]["n_objects"]:
                break
        pairs.append((i, j))
    return pairs


def _aspect_cosines(g_x: np.ndarray, g_p: np.ndarray, layout):
    out = {}
    for aspect in ASPECT_GROUPS:
        idx = layout.aspect_indices(aspect)
        if idx.size == 0:
            out[aspect] = None
            continue
        a, b = g_x[idx], g_p[idx]
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na < SKIP_NORM or nb < SKIP_NORM:
            out[aspect] = None
        else:
            out[aspect] = float(a @ b / (na * nb))
    return out


def gradient_alignment(manifest_path, bank: PrototypeBank,
                       alphas=DEFAULT_ALPHAS, n_pairs: int = 2048,
                       loss_kinds=("mae", "mse"), seed: int = 0,
                       cfg: RenderConfig | None = None) -> list[AlignmentRow]:
    """Mean per-aspect cosine between pixel-loss and parameter-loss gradients."""
    cfg = cfg or RenderConfig()
    records = read_manifest(manifest_path)
    if len(records) < 2:
        raise EmptyManifest("need at least two examples")
    rng = np.random.default_rng(seed)
    pairs = _sample_pairs(records, n_pairs, rng)
    sums = {(a, asp, k): 0.0 for a in alphas for asp in ASPECT_GROUPS for k in loss_kinds}
    counts = {key: 0 for key in sums}
    skips = {key: 0 for key in sums}
    for i, j in pairs:
        p1 = load_scene(manifest_path, records[i])
        p2 = load_scene(manifest_path, records[j])
        target = torch.from_numpy(render(p2, bank, cfg).reshape(-1, 3))
        for alpha in alphas:
            blended = interpolate_params(p1, p2, alpha)
            flat = flatten(blended, n_prototypes=len(bank))
            leaf = torch.from_numpy(flat.values.copy()).requires_grad_(True)
            contours, colors, confs, bg = scene_tensors(leaf, flat, bank, cfg)
            img, _ = raster_core(contours, colors, confs, bg,
                                 blended.height, blended.width, cfg)
            g_p = grad_param_loss(p2, flat, bank)
            for kind in loss_kinds:
                diff = img - target
                loss = diff.abs().mean() if kind == "mae" else (diff * diff).mean()
                if leaf.grad is not None:
                    leaf.grad = None
                loss.backward(retain_graph=True)
                g_x = leaf.grad.numpy().copy()
                for aspect, cos in _aspect_cosines(g_x, g_p, flat.layout).items():
                    key = (alpha, aspect, kind)
                    if cos is None:
                        skips[key] += 1
                    else:
                        sums[key] += cos
                        counts[key] += 1
    rows = []
    for (alpha, aspect, kind), total in sums.items():
        n = counts[(alpha, aspect, kind)]
        rows.append(AlignmentRow(
            alpha=float(alpha), aspect=aspect, loss_kind=kind,
            mean_cosine=total / n if n else float("nan"),
            pairs=n, skipped=skips[(alpha, aspect, kind)],
        ))
    rows.sort(key=lambda r: (r.alpha, r.aspect, r.loss_kind))
    return rows


def recovery_study(manifest_path, bank: PrototypeBank, alphas=DEFAULT_ALPHAS,
                   n_pairs: int = 64, budget: int = DEFAULT_BUDGET,
                   seed: int = 0, cfg: RenderConfig | None = None,
                   loss_kind: str = "mae") -> list[RecoveryRow]:
    """Parameter loss before/after per-scene optimization from blended starts."""
    cfg = cfg or RenderConfig()
    records = read_manifest(manifest_path)
    if len(records) < 2:
        raise EmptyManifest("need at least two examples")
    rng = np.random.default_rng(seed)
    pairs = _sample_pairs(records, n_pairs, rng)
    rows = []
    for alpha in alphas:
        before, after = [], []
        for i, j in pairs:
            p1 = load_scene(manifest_path, records[i])
            p2 = load_scene(manifest_path, records[j])
            target = render(p2, bank, cfg)
            start = interpolate_params(p1, p2, alpha)
            before.append(param_loss(p2, start, bank))
            report = fit_from_init(target, start, bank, cfg, budget=budget,
                                   loss_kind=loss_kind)
            after.append(param_loss(p2, report.scene, bank))
        rows.append(RecoveryRow(
            alpha=float(alpha),
            mean_loss_before=float(np.mean(before)),
            mean_loss_after=float(np.mean(after)),
            pairs=len(pairs),
        ))
    return rows
