"""Shape-prototype discovery by alternating free-shape fitting and clustering.

Starting from per-image initial scenes (pose, color, background), each object
carries its own trainable coefficient block instead of bank weights.  Rounds
alternate: (1) fit every image against the pixel loss, (2) pool the fitted
shapes and cluster them with k-medoids under a rendering-space distance (k
picked by silhouette), (3) snap every member's shape to its cluster medoid.
The final medoids, normalized, become the prototype bank.

Shapes whose fitted contours degenerate or self-intersect are dropped from the
pool as outliers rather than aborting the run.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import torch

from .efd import DEFAULT_HARMONICS, EfdShape, PrototypeBank, contour_from_efd, normalize_shape
from .optimize import AdamState, DEFAULT_LR, PlateauScheduler, adam_update
from .renderer import (RenderConfig, is_simple_polygon, pose_contour, raster_core,
                       render, torch_basis)
from .scene import ObjectParams, Scene

SHAPE_RASTER = 64
DEFAULT_ROUNDS = 3
DEFAULT_K_RANGE = (2, 6)
DISCOVERY_FIT_ITERS = 50


class InvalidK(ValueError):
    pass


class InvalidRange(ValueError):
    pass


# ---------------------------------------------------------------------------
# rendering-space shape distance
# ---------------------------------------------------------------------------

def _lone_shape_scene(raster: int) -> tuple:
    obj = ObjectParams(
        color=np.ones(3),
        translation=np.array([0.5, 0.5]),
        scale=0.5,
        rotation=np.array([1.0, 0.0]),
        shape_weights=np.array([1.0]),
        confidence=1.0,
    )
    return Scene((obj,), np.zeros(3), raster, raster)


def shape_raster(shape: EfdShape, raster: int = SHAPE_RASTER) -> np.ndarray:
    """Normalized shape rendered alone, white on black, centered, half-frame."""
    scene = _lone_shape_scene(raster)
    bank = PrototypeBank((normalize_shape(shape),))
    return render(scene, bank, RenderConfig())


def shape_distance(a: EfdShape, b: EfdShape, raster: int = SHAPE_RASTER) -> float:
    """MSE between the equally scaled and centered renderings of two shapes."""
    from .losses import image_loss

    return image_loss(shape_raster(a, raster), shape_raster(b, raster), "mse")


# ---------------------------------------------------------------------------
# k-medoids (PAM) and silhouette
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClusterResult:
    k: int
    medoid_indices: tuple
    assignments: np.ndarray
    silhouette: float
    total_cost: float


def _check_distances(distances: np.ndarray) -> np.ndarray:
    d = np.asarray(distances, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError("distance matrix must be square")
    if not np.allclose(d, d.T, atol=1e-9):
        raise ValueError("distance matrix must be symmetric")
    if np.any(d < 0) or np.any(np.abs(np.diag(d)) > 1e-12):
        raise ValueError("distances must be nonnegative with a zero diagonal")
    return d


def silhouette_score(distances: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette on a precomputed distance matrix; singletons score 0."""
    d = np.asarray(distances, dtype=np.float64)
    labels = np.asarray(labels)
    n = len(labels)
    uniq = np.unique(labels)
    if len(uniq) < 2:
        raise ValueError("silhouette needs at least two clusters")
    scores = np.zeros(n)
    for i in range(n):
        own = labels == labels[i]
        n_own = own.sum()
        if n_own <= 1:
            continue
        a = d[i, own].sum() / (n_own - 1)
        b = min(d[i, labels == c].mean() for c in uniq if c != labels[i])
        scores[i] = (b - a) / max(a, b) if max(a, b) > 0 else 0.0
    return float(scores.mean())


def _assign(d: np.ndarray, medoids: list) -> np.ndarray:
    return np.asarray(medoids)[np.argmin(d[:, medoids], axis=1)]


def k_medoids(distances: np.ndarray, k: int, seed: int = 0) -> ClusterResult:
    """PAM clustering: greedy max-spread init, then best-improvement swaps.

    Deterministic: ties resolve to the lowest index (the seed argument is kept
    for interface stability but the procedure draws nothing).
    """
    d = _check_distances(distances)
    n = d.shape[0]
    if not 1 <= k <= n:
        raise InvalidK(f"k={k} outside [1, {n}]")
    medoids = [int(np.argmin(d.sum(axis=1)))]
    while len(medoids) < k:
        nearest = d[:, medoids].min(axis=1)
        nearest[medoids] = -1.0
        medoids.append(int(np.argmax(nearest)))
    medoids = sorted(medoids)

    def cost_of(meds):
        return float(d[:, meds].min(axis=1).sum())

    cost = cost_of(medoids)
    improved = True
    while improved:
        improved = False
        best_swap, best_cost = None, cost
        in_set = set(medoids)
        for mi, m in enumerate(medoids):
            for h in range(n):
                if h in in_set:
                    continue
                trial = medoids[:mi] + [h] + medoids[mi + 1:]
                c = cost_of(trial)
                if c < best_cost - 1e-15:
                    best_cost, best_swap = c, (mi, h)
        if best_swap is not None:
            mi, h = best_swap
            medoids[mi] = h
            medoids = sorted(medoids)
            cost = best_cost
            improved = True
    assignments = _assign(d, medoids)
    sil = silhouette_score(d, assignments) if k > 1 and k < n else 0.0
    return ClusterResult(k=k, medoid_indices=tuple(medoids),
                         assignments=assignments, silhouette=sil,
                         total_cost=cost)


def choose_k(distances: np.ndarray, k_range: tuple = DEFAULT_K_RANGE,
             seed: int = 0) -> int:
    """Smallest k maximizing the mean silhouette over the candidate range."""
    d = _check_distances(distances)
    n = d.shape[0]
    lo, hi = k_range
    if not (2 <= lo <= hi <= n - 1):
        raise InvalidRange(f"k_range {k_range} must sit inside [2, {n - 1}]")
    best_k, best_sil = lo, -np.inf
    for k in range(lo, hi + 1):
        sil = k_medoids(d, k, seed).silhouette
        if sil > best_sil + 1e-12:
            best_k, best_sil = k, sil
    return best_k


def exhaustive_medoids(distances: np.ndarray, k: int) -> float:
    """Brute-force optimal PAM cost; test oracle for small n."""
    d = _check_distances(distances)
    best = np.inf
    for meds in itertools.combinations(range(d.shape[0]), k):
        best = min(best, float(d[:, meds].min(axis=1).sum()))
    return best


# ---------------------------------------------------------------------------
# free-shape fitting
# ---------------------------------------------------------------------------

_FREE_HEAD = 9  # color3 + translation2 + scale1 + rotation2 + confidence1


def _free_vector(scene: Scene, n_harmonics: int) -> np.ndarray:
    """Initial flat vector: poses from the scene, every shape a unit circle."""
    circle = np.zeros((n_harmonics, 4))
    circle[0, 0] = 1.0
    circle[0, 3] = 1.0
    parts = []
    for obj in scene.objects:
        parts.extend([obj.color, obj.translation, [obj.scale], obj.rotation,
                      [obj.confidence], circle.reshape(-1)])
    parts.append(scene.background)
    return np.concatenate(parts)


def _free_project(values: np.ndarray, n_objects: int, n_harmonics: int) -> np.ndarray:
    per = _FREE_HEAD + 4 * n_harmonics
    v = values.copy()
    for i in range(n_objects):
        o = i * per
        v[o:o + 3] = np.clip(v[o:o + 3], 0.0, 1.0)          # color
        v[o + 3:o + 5] = np.clip(v[o + 3:o + 5], 0.0, 1.0)  # translation
        v[o + 5] = max(v[o + 5], 1e-6)                       # scale
        norm = np.hypot(v[o + 6], v[o + 7])
        if norm < 1e-12:
            v[o + 6], v[o + 7] = 1.0, 0.0
        else:
            v[o + 6:o + 8] /= norm
        v[o + 8] = np.clip(v[o + 8], 0.0, 1.0)               # confidence
    v[n_objects * per:] = np.clip(v[n_objects * per:], 0.0, 1.0)
    return v


def _free_tensors(values: torch.Tensor, n_objects: int, n_harmonics: int,
                  cfg: RenderConfig):
    per = _FREE_HEAD + 4 * n_harmonics
    cos_b, sin_b = torch_basis(n_harmonics, cfg.k_points)
    contours, colors, confs = [], [], []
    for i in range(n_objects):
        o = i * per
        color = values[o:o + 3].clamp(0.0, 1.0)
        translation = values[o + 3:o + 5].clamp(0.0, 1.0)
        scale = values[o + 5].clamp_min(1e-6)
        rot = values[o + 6:o + 8]
        rot = rot / torch.hypot(rot[0], rot[1]).clamp_min(1e-12)
        conf = values[o + 8].clamp(0.0, 1.0)
        coeffs = values[o + 9:o + 9 + 4 * n_harmonics].reshape(n_harmonics, 4)
        base = torch.stack([cos_b @ coeffs[:, 0] + sin_b @ coeffs[:, 1],
                            cos_b @ coeffs[:, 2] + sin_b @ coeffs[:, 3]], dim=1)
        obj = {"scale": scale, "rotation": rot, "translation": translation}
        contours.append(pose_contour(base, obj))
        colors.append(color)
        confs.append(conf)
    bg = values[n_objects * per:].clamp(0.0, 1.0)
    return contours, torch.stack(colors), torch.stack(confs), bg


def _fit_free_shapes(image: np.ndarray, values: np.ndarray, n_objects: int,
                     n_harmonics: int, cfg: RenderConfig, iters: int,
                     lr: float = DEFAULT_LR) -> np.ndarray:
    """Minimize the pixel MAE over poses, colors and per-object coefficients."""
    height, width = image.shape[:2]
    target = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float64).reshape(-1, 3))
    state = AdamState(lr=lr)
    sched = PlateauScheduler(lr=lr)
    best_loss, best = np.inf, values.copy()
    for _ in range(iters):
        leaf = torch.from_numpy(values.copy()).requires_grad_(True)
        contours, colors, confs, bg = _free_tensors(leaf, n_objects, n_harmonics, cfg)
        img, _ = raster_core(contours, colors, confs, bg, height, width, cfg)
        loss_t = (img - target).abs().mean()
        loss_t.backward()
        loss = float(loss_t.detach())
        if loss < best_loss:
            best_loss, best = loss, values.copy()
        state.lr = sched.step(loss)
        values = _free_project(adam_update(state, values, leaf.grad.numpy()),
                               n_objects, n_harmonics)
    return best


def _extract_shapes(values: np.ndarray, n_objects: int, n_harmonics: int):
    """(EfdShape, extent) per object from a free-shape vector."""
    per = _FREE_HEAD + 4 * n_harmonics
    out = []
    for i in range(n_objects):
        coeffs = values[i * per + 9:i * per + 9 + 4 * n_harmonics].reshape(n_harmonics, 4)
        shape = EfdShape(coeffs)
        extent = float(np.abs(contour_from_efd(shape, 64)).max())
        out.append((shape, extent))
    return out


def discover_prototypes(images, init_scenes, rounds: int = DEFAULT_ROUNDS,
                        k_range: tuple = DEFAULT_K_RANGE,
                        fit_iters: int = DISCOVERY_FIT_ITERS,
                        n_harmonics: int = DEFAULT_HARMONICS,
                        cfg: RenderConfig | None = None, seed: int = 0,
                        raster: int = SHAPE_RASTER,
                        diagnostics: dict | None = None) -> PrototypeBank:
    """Recover a prototype bank from images given rough initial scenes."""
    images = [np.asarray(im, dtype=np.float64) for im in images]
    init_scenes = list(init_scenes)
    if len(images) != len(init_scenes):
        raise ValueError("one init scene per image required")
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    cfg = cfg or RenderConfig()
    vectors = [_free_vector(s, n_harmonics) for s in init_scenes]
    counts = [s.n_objects for s in init_scenes]
    per = _FREE_HEAD + 4 * n_harmonics

    medoid_shapes: list[EfdShape] = []
    for _ in range(rounds):
        vectors = [
            _fit_free_shapes(img, vec, n, n_harmonics, cfg, fit_iters)
            for img, vec, n in zip(images, vectors, counts)
        ]
        pool = []      # (image index, object index, shape, extent, simple flag)
        rasters = []
        for ii, (vec, n) in enumerate(zip(vectors, counts)):
            for oi, (shape, extent) in enumerate(_extract_shapes(vec, n, n_harmonics)):
                if extent <= 1e-6:
                    continue  # collapsed shape: outlier
                norm = EfdShape(shape.coeffs / extent)
                simple = is_simple_polygon(contour_from_efd(norm, cfg.k_points))
                pool.append((ii, oi, shape, extent, simple))
                rasters.append(shape_raster(norm, raster))
        if len(pool) < 3:
            raise RuntimeError("too few usable shapes to cluster")
        flat = np.stack([r.reshape(-1) for r in rasters])
        sq = (flat * flat).sum(axis=1)
        d = np.maximum(sq[:, None] + sq[None, :] - 2.0 * flat @ flat.T, 0.0) / flat.shape[1]
        np.fill_diagonal(d, 0.0)
        d = 0.5 * (d + d.T)
        hi = min(k_range[1], len(pool) - 1)
        k = choose_k(d, (min(k_range[0], hi), hi), seed)
        result = k_medoids(d, k, seed)
        if diagnostics is not None:
            diagnostics["k"] = k
            diagnostics["silhouette"] = result.silhouette
            diagnostics["pool_size"] = len(pool)
        # each cluster is represented by its medoid, or by the nearest member
        # with a simple contour when intermediate fits pinched a micro-loop
        medoid_norm = {}
        for m in result.medoid_indices:
            rep = m
            if not pool[m][4]:
                members = [i for i in np.flatnonzero(result.assignments == m)
                           if pool[i][4]]
                if members:
                    rep = min(members, key=lambda i: d[m, i])
            _, _, shape, extent, _ = pool[rep]
            medoid_norm[m] = EfdShape(shape.coeffs / extent)
        # snap every member's shape to its cluster representative, preserving
        # the member's rendered size
        for (ii, oi, _, extent, _), medoid in zip(pool, result.assignments):
            o = oi * per
            vectors[ii][o + 9:o + 9 + 4 * n_harmonics] = \
                (medoid_norm[medoid].coeffs * extent).reshape(-1)
        medoid_shapes = [normalize_shape(medoid_norm[m]) for m in result.medoid_indices]
    return PrototypeBank(tuple(medoid_shapes))
