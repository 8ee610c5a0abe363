"""Gradient-based scene fitting against target images.

Three entry points share one Adam + plateau-scheduler loop over the flat scene
parameters:

* `fit_from_init` refines a supplied initial scene (100 steps by default),
* `fit_rand_optp` starts from randomly initialized object slots and runs to a
  convergence test or an iteration cap,
* `fit_opt_iter` grows the scene greedily: find the blurred-residual peak,
  seed a candidate there with the local image color, then re-optimize all
  parameters; repeat up to the object budget, keeping the best scene seen.

Every step re-projects the parameters through the scene constraints, so any
intermediate scene is valid.  All fitters are deterministic given their seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.ndimage import uniform_filter

from .efd import PrototypeBank
from .losses import image_loss
from .renderer import RenderConfig, raster_core, scene_tensors
from .scene import FlatParams, ObjectParams, Scene, flatten, unflatten

DEFAULT_LR = 0.01
DEFAULT_BUDGET = 100
RAND_OPTP_CAP = 500
CONVERGED_LR = 1e-5
CONVERGED_LOSS_DELTA = 1e-7
CONVERGED_FLAT_STEPS = 20

OPT_ITER_BLUR_WINDOW = 9
OPT_ITER_INIT_SCALE = 0.15
OPT_ITER_RESIDUAL_THRESHOLD = 0.02


class ShapeMismatch(ValueError):
    pass


@dataclass
class AdamState:
    """Moment accumulators for one flat parameter vector."""

    lr: float = DEFAULT_LR
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    def ensure(self, n: int):
        if self.m is None:
            self.m = np.zeros(n)
            self.v = np.zeros(n)
        elif self.m.size != n:
            raise ShapeMismatch(f"moment vectors sized {self.m.size}, parameters {n}")


def adam_update(state: AdamState, values: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Raw bias-corrected Adam step on a flat vector (no re-projection)."""
    g = np.asarray(grad, dtype=np.float64)
    if g.shape != values.shape:
        raise ShapeMismatch(f"gradient {g.shape} vs parameters {values.shape}")
    state.ensure(g.size)
    state.step_count += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * g
    state.v = state.beta2 * state.v + (1 - state.beta2) * g * g
    m_hat = state.m / (1 - state.beta1 ** state.step_count)
    v_hat = state.v / (1 - state.beta2 ** state.step_count)
    return values - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def adam_step(state: AdamState, params: FlatParams, grad: np.ndarray) -> FlatParams:
    """One bias-corrected Adam update, re-projected onto valid scenes."""
    new = adam_update(state, params.values, grad)
    return flatten(unflatten(FlatParams(new, params.layout)),
                   n_prototypes=params.layout.n_prototypes)


@dataclass
class PlateauScheduler:
    """Cut the learning rate after `patience` non-improving steps.

    A cut starts a cooldown during which no further cuts happen and the
    bad-step counter stays clear.
    """

    lr: float = DEFAULT_LR
    patience: int = 10
    cooldown: int = 10
    factor: float = 0.5
    best: float = float("inf")
    num_bad: int = 0
    cooldown_left: int = 0

    def __post_init__(self):
        if not 0 < self.factor < 1:
            raise ValueError("factor must lie in (0, 1)")
        if self.patience < 0 or self.cooldown < 0:
            raise ValueError("patience and cooldown must be >= 0")

    def step(self, loss: float) -> float:
        if not np.isfinite(loss):
            raise ValueError("loss must be finite")
        if loss < self.best:
            self.best = loss
            self.num_bad = 0
        else:
            self.num_bad += 1
        if self.cooldown_left > 0:
            self.cooldown_left -= 1
            self.num_bad = 0
        elif self.num_bad >= self.patience:
            self.lr *= self.factor
            self.cooldown_left = self.cooldown
            self.num_bad = 0
        return self.lr


@dataclass(frozen=True)
class FitReport:
    scene: Scene
    loss_trace: np.ndarray
    wall_time: float
    iterations: int
    best_loss: float

    @property
    def final_loss(self) -> float:
        return float(self.loss_trace[-1])

    def to_obj(self) -> dict:
        return {
            "scene": self.scene.to_obj(),
            "loss_trace": self.loss_trace.tolist(),
            "wall_time": self.wall_time,
            "iterations": self.iterations,
            "best_loss": self.best_loss,
        }


def _image_fit_loop(target: np.ndarray, init: Scene, bank: PrototypeBank,
                    cfg: RenderConfig, budget: int, lr: float, loss_kind: str,
                    check_convergence: bool = False) -> tuple[np.ndarray, list, FlatParams]:
    """Shared Adam/plateau loop; returns (best values, trace, layout carrier)."""
    flat = flatten(init, n_prototypes=len(bank))
    params = flat
    state = AdamState(lr=lr)
    sched = PlateauScheduler(lr=lr)
    target_t = torch.from_numpy(np.ascontiguousarray(target, dtype=np.float64).reshape(-1, 3))
    trace: list[float] = []
    best_loss = np.inf
    best_values = params.values.copy()
    flat_steps = 0
    for _ in range(budget):
        leaf = torch.from_numpy(params.values.copy()).requires_grad_(True)
        contours, colors, confs, bg = scene_tensors(leaf, params, bank, cfg)
        img, _ = raster_core(contours, colors, confs, bg, init.height, init.width, cfg)
        diff = img - target_t
        if loss_kind == "mae":
            loss_t = diff.abs().mean()
        else:
            loss_t = (diff * diff).mean()
        loss_t.backward()
        loss = float(loss_t.detach())
        if trace and abs(loss - trace[-1]) < CONVERGED_LOSS_DELTA:
            flat_steps += 1
        else:
            flat_steps = 0
        trace.append(loss)
        if loss < best_loss:
            best_loss = loss
            best_values = params.values.copy()
        state.lr = sched.step(loss)
        params = adam_step(state, params, leaf.grad.numpy())
        if check_convergence and (state.lr < CONVERGED_LR or flat_steps >= CONVERGED_FLAT_STEPS):
            break
    return best_values, trace, FlatParams(best_values, flat.layout)


def fit_from_init(target: np.ndarray, init: Scene, bank: PrototypeBank,
                  cfg: RenderConfig | None = None, budget: int = DEFAULT_BUDGET,
                  lr: float = DEFAULT_LR, loss_kind: str = "mae") -> FitReport:
    """Refine a scene against a target image; returns the best scene seen."""
    cfg = cfg or RenderConfig()
    t0 = time.perf_counter()
    _, trace, best = _image_fit_loop(target, init, bank, cfg, budget, lr, loss_kind)
    return FitReport(
        scene=unflatten(best),
        loss_trace=np.asarray(trace),
        wall_time=time.perf_counter() - t0,
        iterations=len(trace),
        best_loss=float(min(trace)) if trace else float("nan"),
    )


def random_scene(n_objects: int, n_prototypes: int, width: int, height: int,
                 rng: np.random.Generator) -> Scene:
    """Random object slots: the Rand-OptP starting point."""
    objects = []
    for _ in range(n_objects):
        angle = rng.uniform(0.0, 2 * np.pi)
        objects.append(ObjectParams(
            color=rng.uniform(0.0, 1.0, 3),
            translation=rng.uniform(0.05, 0.95, 2),
            scale=float(rng.uniform(0.1, 0.3)),
            rotation=np.array([np.cos(angle), np.sin(angle)]),
            shape_weights=np.full(n_prototypes, 1.0 / n_prototypes),
            confidence=1.0,
        ))
    return Scene(tuple(objects), rng.uniform(0.0, 1.0, 3), width, height)


def fit_rand_optp(target: np.ndarray, n_objects: int, bank: PrototypeBank,
                  cfg: RenderConfig | None = None, seed: int = 0,
                  max_iterations: int = RAND_OPTP_CAP, lr: float = DEFAULT_LR,
                  loss_kind: str = "mae") -> FitReport:
    """Optimize randomly initialized object slots until convergence or cap."""
    if n_objects < 1:
        raise ValueError("n_objects must be >= 1")
    cfg = cfg or RenderConfig()
    height, width = np.asarray(target).shape[:2]
    init = random_scene(n_objects, len(bank), width, height,
                        np.random.default_rng(seed))
    t0 = time.perf_counter()
    _, trace, best = _image_fit_loop(target, init, bank, cfg, max_iterations,
                                     lr, loss_kind, check_convergence=True)
    return FitReport(
        scene=unflatten(best),
        loss_trace=np.asarray(trace),
        wall_time=time.perf_counter() - t0,
        iterations=len(trace),
        best_loss=float(min(trace)),
    )


def _residual_peak(target: np.ndarray, current: np.ndarray,
                   window: int = OPT_ITER_BLUR_WINDOW):
    """Box-blurred L1 residual peak: (row, col, peak value)."""
    residual = np.abs(target - current).sum(axis=2)
    blurred = uniform_filter(residual, size=window, mode="reflect")
    idx = int(np.argmax(blurred))
    row, col = divmod(idx, blurred.shape[1])
    return row, col, float(blurred[row, col])


def _window_mean_color(target: np.ndarray, row: int, col: int,
                       window: int = OPT_ITER_BLUR_WINDOW) -> np.ndarray:
    h, w = target.shape[:2]
    half = window // 2
    r0, r1 = max(row - half, 0), min(row + half + 1, h)
    c0, c1 = max(col - half, 0), min(col + half + 1, w)
    return target[r0:r1, c0:c1].reshape(-1, 3).mean(axis=0)


def fit_opt_iter(target: np.ndarray, max_objects: int, bank: PrototypeBank,
                 cfg: RenderConfig | None = None, seed: int = 0,
                 inner_budget: int = DEFAULT_BUDGET, lr: float = DEFAULT_LR,
                 loss_kind: str = "mae",
                 residual_threshold: float = OPT_ITER_RESIDUAL_THRESHOLD) -> FitReport:
    """Greedy candidate placement at residual peaks with joint re-optimization."""
    if max_objects < 1:
        raise ValueError("max_objects must be >= 1")
    cfg = cfg or RenderConfig()
    target = np.asarray(target, dtype=np.float64)
    height, width = target.shape[:2]
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()

    from .renderer import render

    best_scene = Scene((), np.clip(target.mean(axis=(0, 1)), 0.0, 1.0), width, height)
    best_loss = image_loss(target, render(best_scene, bank, cfg), loss_kind)
    trace = [best_loss]
    attempts = 0
    fail_streak = 0
    while (best_scene.n_objects < max_objects and attempts < max_objects + 2
           and fail_streak < 2):
        attempts += 1
        current_img = render(best_scene, bank, cfg)
        row, col, peak = _residual_peak(target, current_img)
        if peak <= residual_threshold:
            break
        angle = rng.uniform(0.0, 2 * np.pi)
        candidate = ObjectParams(
            color=np.clip(_window_mean_color(target, row, col), 0.0, 1.0),
            translation=np.array([(col + 0.5) / width, (row + 0.5) / height]),
            scale=OPT_ITER_INIT_SCALE,
            rotation=np.array([np.cos(angle), np.sin(angle)]),
            shape_weights=np.full(len(bank), 1.0 / len(bank)),
            confidence=1.0,
        )
        seeded = Scene(best_scene.objects + (candidate,), best_scene.background,
                       width, height)
        report = fit_from_init(target, seeded, bank, cfg, budget=inner_budget,
                               lr=lr, loss_kind=loss_kind)
        trace.extend(report.loss_trace.tolist())
        if report.best_loss < best_loss:
            best_loss = report.best_loss
            best_scene = report.scene
            fail_streak = 0
        else:
            # unhelpful candidate: keep the previous best, retry once with a
            # fresh rotation draw before giving up
            fail_streak += 1
    return FitReport(
        scene=best_scene,
        loss_trace=np.asarray(trace),
        wall_time=time.perf_counter() - t0,
        iterations=len(trace),
        best_loss=best_loss,
    )
