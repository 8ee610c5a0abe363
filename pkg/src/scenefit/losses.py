"""Reconstruction losses: pixel error, object matching, and parameter loss.

The parameter loss first matches predicted candidates to target objects by
minimum-cost assignment on translation/color/confidence, then sums weighted
per-aspect distances over the matched pairs plus a binary cross-entropy on
candidate confidences (matched candidates are positives, leftover candidates
negatives).  Its rotation term is periodic in 2*pi / sym(shape), so e.g. a
square costs nothing when predicted 90 degrees off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment

from .efd import EfdShape, PrototypeBank, symmetry_order
from .scene import FlatParams, ObjectParams, Scene, angle_of, unflatten

TRANSLATION_WEIGHT = 5.0
ROTATION_WEIGHT = 0.05
MATCH_COLOR_WEIGHT = 0.1
MATCH_CONFIDENCE_WEIGHT = 0.01
CONF_CLAMP = 1e-7

# smoothing inside Euclidean norms so their gradient vanishes (instead of
# blowing up) at exactly-matching parameters
_NORM_EPS = 1e-24


class DimensionMismatch(ValueError):
    pass


class NotEnoughCandidates(ValueError):
    pass


def image_loss(a: np.ndarray, b: np.ndarray, kind: str = "mae") -> float:
    """Mean over all pixels and channels of |a-b| (mae) or (a-b)^2 (mse)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    diff = a - b
    kind = kind.lower()
    if kind == "mae":
        return float(np.abs(diff).mean())
    if kind == "mse":
        return float((diff * diff).mean())
    raise ValueError(f"unknown loss kind {kind!r}")


def image_loss_adjoint(pred: np.ndarray, target: np.ndarray, kind: str = "mae") -> np.ndarray:
    """d image_loss(target, pred) / d pred, for driving render_grad."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionMismatch(f"image shapes differ: {pred.shape} vs {target.shape}")
    n = pred.size
    if kind.lower() == "mae":
        return np.sign(pred - target) / n
    if kind.lower() == "mse":
        return 2.0 * (pred - target) / n
    raise ValueError(f"unknown loss kind {kind!r}")


def matching_cost(p: ObjectParams, q: ObjectParams) -> float:
    """Assignment cost: ||dt||_2 + 0.1 ||dc||_2 + 0.01 |dconf|."""
    dt = np.linalg.norm(p.translation - q.translation)
    dc = np.linalg.norm(p.color - q.color)
    df = abs(p.confidence - q.confidence)
    return float(dt + MATCH_COLOR_WEIGHT * dc + MATCH_CONFIDENCE_WEIGHT * df)


def matching_cost_matrix(targets, candidates) -> np.ndarray:
    out = np.zeros((len(targets), len(candidates)))
    for i, p in enumerate(targets):
        for j, q in enumerate(candidates):
            out[i, j] = matching_cost(p, q)
    return out


@dataclass(frozen=True)
class MatchResult:
    assignment: tuple          # ((target_idx, candidate_idx), ...)
    unmatched_candidates: tuple
    total_cost: float


def hungarian(costs: np.ndarray) -> MatchResult:
    """Minimum-cost injective assignment on an n x k cost matrix."""
    costs = np.asarray(costs, dtype=np.float64)
    if costs.ndim != 2:
        raise ValueError("cost matrix must be 2-D")
    if not np.all(np.isfinite(costs)):
        raise ValueError("cost matrix must be finite")
    if costs.size == 0:
        unmatched = tuple(range(costs.shape[1]))
        return MatchResult((), unmatched, 0.0)
    rows, cols = linear_sum_assignment(costs)
    pairs = tuple(sorted(zip(rows.tolist(), cols.tolist())))
    used = {c for _, c in pairs}
    unmatched = tuple(j for j in range(costs.shape[1]) if j not in used)
    return MatchResult(pairs, unmatched, float(costs[rows, cols].sum()))


def match_scenes(target: Scene, pred: Scene) -> MatchResult:
    if pred.n_objects < target.n_objects:
        raise NotEnoughCandidates(
            f"{pred.n_objects} candidates for {target.n_objects} targets"
        )
    return hungarian(matching_cost_matrix(target.objects, pred.objects))


def blended_shape(bank: PrototypeBank, weights: np.ndarray) -> EfdShape:
    """Coefficient-space blend; identical to blending the contours pointwise."""
    return EfdShape(np.tensordot(np.asarray(weights, dtype=np.float64),
                                 bank.coeff_stack(), axes=1))


def _safe_norm(x: np.ndarray) -> float:
    return float(np.sqrt((np.asarray(x) ** 2).sum() + _NORM_EPS))


def param_loss(target: Scene, pred: Scene, bank: PrototypeBank) -> float:
    """Matched parameter-space reconstruction error (see module docstring)."""
    match = match_scenes(target, pred)
    total = _safe_norm(target.background - pred.background)
    for ti, ci in match.assignment:
        p, q = target.objects[ti], pred.objects[ci]
        conf = min(max(q.confidence, CONF_CLAMP), 1.0 - CONF_CLAMP)
        sym = symmetry_order(blended_shape(bank, p.shape_weights))
        da = angle_of(p) - angle_of(q)
        total += (
            -math.log(conf)
            + TRANSLATION_WEIGHT * _safe_norm(p.translation - q.translation)
            + _safe_norm(p.color - q.color)
            + _safe_norm(p.scale - q.scale)
            + _safe_norm(p.shape_weights - q.shape_weights)
            + ROTATION_WEIGHT * (1.0 - math.cos(sym * da)) ** 2
        )
    for ci in match.unmatched_candidates:
        conf = min(max(pred.objects[ci].confidence, CONF_CLAMP), 1.0 - CONF_CLAMP)
        total += -math.log(1.0 - conf)
    return float(total)


def _safe_norm_t(x: torch.Tensor) -> torch.Tensor:
    return torch.sqrt((x * x).sum() + _NORM_EPS)


def param_loss_torch(target: Scene, values: torch.Tensor, layout,
                     bank: PrototypeBank, match: MatchResult) -> torch.Tensor:
    """Differentiable parameter loss at a fixed assignment.

    `values` is a flat parameter tensor for the prediction; constraint
    projections are part of the differentiated graph so gradients agree with
    finite differences of param_loss(unflatten(...)).
    """
    from .renderer import constrained_params

    objs, bg = constrained_params(values, layout)
    bg_t = torch.from_numpy(target.background)
    total = _safe_norm_t(bg_t - bg)
    for ti, ci in match.assignment:
        p = target.objects[ti]
        q = objs[ci]
        conf = q["confidence"].clamp(CONF_CLAMP, 1.0 - CONF_CLAMP)
        sym = symmetry_order(blended_shape(bank, p.shape_weights))
        da = angle_of(p) - torch.atan2(q["rotation"][1], q["rotation"][0])
        total = total + (
            -torch.log(conf)
            + TRANSLATION_WEIGHT * _safe_norm_t(torch.from_numpy(p.translation) - q["translation"])
            + _safe_norm_t(torch.from_numpy(p.color) - q["color"])
            + _safe_norm_t(torch.tensor(p.scale, dtype=torch.float64) - q["scale"])
            + _safe_norm_t(torch.from_numpy(p.shape_weights) - q["shape"])
            + ROTATION_WEIGHT * (1.0 - torch.cos(sym * da)) ** 2
        )
    for ci in match.unmatched_candidates:
        conf = objs[ci]["confidence"].clamp(CONF_CLAMP, 1.0 - CONF_CLAMP)
        total = total + -torch.log(1.0 - conf)
    return total


def grad_param_loss(target: Scene, pred: FlatParams, bank: PrototypeBank) -> np.ndarray:
    """Exact gradient of param_loss w.r.t. the flat prediction vector.

    The assignment is computed once from the projected prediction and held
    fixed during differentiation.
    """
    pred_scene = unflatten(pred)
    match = match_scenes(target, pred_scene)
    values = torch.from_numpy(pred.values.copy()).requires_grad_(True)
    loss = param_loss_torch(target, values, pred.layout, bank, match)
    loss.backward()
    return values.grad.numpy().copy()
