"""Scikit-learn style estimators over the scene-fitting and clustering cores.

These wrappers follow the fit/attributes_ convention (get_params/set_params
come from BaseEstimator) so the fitters compose with pipelines, grid search
and friends.  X is a single target image (H, W, 3) for the scene fitters, a
precomputed distance matrix for KMedoids, and a list of images for
PrototypeDiscovery.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from .efd import PrototypeBank
from .generator import builtin_bank
from .renderer import RenderConfig, render


def check_image(x) -> np.ndarray:
    """Validate an (H, W, 3) float image with entries in [0, 1]."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image values must be finite")
    if arr.min() < -1e-9 or arr.max() > 1 + 1e-9:
        raise ValueError("image values must lie in [0, 1]")
    return np.clip(arr, 0.0, 1.0)


def check_distance_matrix(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"expected a square distance matrix, got shape {arr.shape}")
    return arr


class _BankMixin:
    def _bank(self) -> PrototypeBank:
        return self.bank if self.bank is not None else builtin_bank()

    def _render_cfg(self) -> RenderConfig:
        return RenderConfig(sigma=self.sigma, gamma=self.gamma)


class SceneRefiner(BaseEstimator, _BankMixin):
    """Refine a supplied initial scene against a target image."""

    def __init__(self, bank=None, budget=100, lr=0.01, loss_kind="mae",
                 sigma=1e-4, gamma=1e-4):
        self.bank = bank
        self.budget = budget
        self.lr = lr
        self.loss_kind = loss_kind
        self.sigma = sigma
        self.gamma = gamma

    def fit(self, X, y=None, init=None):
        from .optimize import fit_from_init

        if init is None:
            raise ValueError("SceneRefiner.fit requires an init scene")
        target = check_image(X)
        self.report_ = fit_from_init(target, init, self._bank(), self._render_cfg(),
                                     budget=self.budget, lr=self.lr,
                                     loss_kind=self.loss_kind)
        self.scene_ = self.report_.scene
        return self

    def transform(self, X=None):
        """Rendered reconstruction of the fitted scene."""
        return render(self.scene_, self._bank(), self._render_cfg())


class IterativeSceneFitter(BaseEstimator, _BankMixin):
    """Greedy residual-guided scene fitting (grow one candidate at a time)."""

    def __init__(self, bank=None, max_objects=4, seed=0, inner_budget=100,
                 lr=0.01, loss_kind="mae", sigma=1e-4, gamma=1e-4):
        self.bank = bank
        self.max_objects = max_objects
        self.seed = seed
        self.inner_budget = inner_budget
        self.lr = lr
        self.loss_kind = loss_kind
        self.sigma = sigma
        self.gamma = gamma

    def fit(self, X, y=None):
        from .optimize import fit_opt_iter

        target = check_image(X)
        self.report_ = fit_opt_iter(target, self.max_objects, self._bank(),
                                    self._render_cfg(), seed=self.seed,
                                    inner_budget=self.inner_budget, lr=self.lr,
                                    loss_kind=self.loss_kind)
        self.scene_ = self.report_.scene
        return self

    def transform(self, X=None):
        return render(self.scene_, self._bank(), self._render_cfg())


class RandomInitSceneFitter(BaseEstimator, _BankMixin):
    """Direct parameter optimization from random object slots."""

    def __init__(self, bank=None, n_objects=4, seed=0, max_iterations=500,
                 lr=0.01, loss_kind="mae", sigma=1e-4, gamma=1e-4):
        self.bank = bank
        self.n_objects = n_objects
        self.seed = seed
        self.max_iterations = max_iterations
        self.lr = lr
        self.loss_kind = loss_kind
        self.sigma = sigma
        self.gamma = gamma

    def fit(self, X, y=None):
        from .optimize import fit_rand_optp

        target = check_image(X)
        self.report_ = fit_rand_optp(target, self.n_objects, self._bank(),
                                     self._render_cfg(), seed=self.seed,
                                     max_iterations=self.max_iterations,
                                     lr=self.lr, loss_kind=self.loss_kind)
        self.scene_ = self.report_.scene
        return self

    def transform(self, X=None):
        return render(self.scene_, self._bank(), self._render_cfg())


class KMedoids(BaseEstimator, ClusterMixin):
    """PAM clustering on a precomputed distance matrix."""

    def __init__(self, n_clusters=3, seed=0):
        self.n_clusters = n_clusters
        self.seed = seed

    def fit(self, X, y=None):
        from .prototypes import k_medoids

        d = check_distance_matrix(X)
        result = k_medoids(d, self.n_clusters, self.seed)
        self.medoid_indices_ = np.asarray(result.medoid_indices)
        self.labels_ = result.assignments
        self.inertia_ = result.total_cost
        self.silhouette_ = result.silhouette
        return self


class PrototypeDiscovery(BaseEstimator):
    """Recover a shape-prototype bank from images and rough initial scenes."""

    def __init__(self, rounds=3, k_range=(2, 6), fit_iters=50, seed=0,
                 n_harmonics=16, sigma=1e-4, gamma=1e-4):
        self.rounds = rounds
        self.k_range = k_range
        self.fit_iters = fit_iters
        self.seed = seed
        self.n_harmonics = n_harmonics
        self.sigma = sigma
        self.gamma = gamma

    def fit(self, X, y=None, init_scenes=None):
        from .prototypes import discover_prototypes

        if init_scenes is None:
            raise ValueError("PrototypeDiscovery.fit requires init_scenes")
        images = [check_image(im) for im in X]
        diagnostics = {}
        self.bank_ = discover_prototypes(
            images, init_scenes, rounds=self.rounds, k_range=self.k_range,
            fit_iters=self.fit_iters, n_harmonics=self.n_harmonics,
            cfg=RenderConfig(sigma=self.sigma, gamma=self.gamma),
            seed=self.seed, diagnostics=diagnostics)
        self.k_ = diagnostics.get("k")
        self.silhouette_ = diagnostics.get("silhouette")
        return self
