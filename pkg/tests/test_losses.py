import math

import numpy as np
import pytest

from scenefit.losses import (DimensionMismatch, NotEnoughCandidates,
                             blended_shape, grad_param_loss, hungarian,
                             image_loss, matching_cost, matching_cost_matrix,
                             param_loss)
from scenefit.efd import symmetry_order
from scenefit.scene import ObjectParams, Scene, flatten, unflatten, FlatParams

from oracles import brute_force_assignment, finite_difference_gradient


def obj(color=(0.5, 0.5, 0.5), t=(0.5, 0.5), scale=0.2, angle=0.0,
        weights=(1.0, 0.0, 0.0), conf=1.0):
    return ObjectParams(color=np.array(color, dtype=float),
                        translation=np.array(t, dtype=float), scale=scale,
                        rotation=np.array([math.cos(angle), math.sin(angle)]),
                        shape_weights=np.array(weights, dtype=float),
                        confidence=conf)


def scene_of(objects, bg=(0.3, 0.3, 0.3), size=32):
    return Scene(tuple(objects), np.array(bg, dtype=float), size, size)


# ---------------------------------------------------------------------------
# image loss
# ---------------------------------------------------------------------------

def test_image_loss_basics(rng):
    a = rng.uniform(0, 1, (8, 8, 3))
    assert image_loss(a, a, "mae") == 0.0
    assert image_loss(np.zeros((4, 4, 3)), np.ones((4, 4, 3)), "mae") == 1.0
    assert image_loss(np.zeros((4, 4, 3)), np.ones((4, 4, 3)), "mse") == 1.0
    with pytest.raises(DimensionMismatch):
        image_loss(np.zeros((4, 4, 3)), np.zeros((5, 4, 3)))


def test_image_loss_matches_scalar_loop(rng):
    a = rng.uniform(0, 1, (6, 5, 3))
    b = rng.uniform(0, 1, (6, 5, 3))
    total_abs = total_sq = 0.0
    for i in range(6):
        for j in range(5):
            for c in range(3):
                d = a[i, j, c] - b[i, j, c]
                total_abs += abs(d)
                total_sq += d * d
    assert abs(image_loss(a, b, "mae") - total_abs / 90) < 1e-12
    assert abs(image_loss(a, b, "mse") - total_sq / 90) < 1e-12


# ---------------------------------------------------------------------------
# matching
# ---------------------------------------------------------------------------

def test_matching_cost_examples():
    p = obj()
    assert matching_cost(p, p) == 0.0
    q = obj(t=(0.8, 0.9))
    assert matching_cost(p, q) == pytest.approx(0.5)
    r = obj(color=(1.0, 0.5, 0.5))
    assert matching_cost(p, r) == pytest.approx(0.1 * 0.5)
    full = obj(color=(0.5, 0.5, 1.0))  # one channel off by 0.5
    assert matching_cost(obj(color=(0.5, 0.5, 0.0)), full) == pytest.approx(0.1)


def test_hungarian_small_cases():
    res = hungarian(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert res.assignment == ((0, 0), (1, 1))
    assert res.total_cost == 2.0
    assert res.unmatched_candidates == ()
    res = hungarian(np.array([[5.0, 1.0, 3.0]]))
    assert res.assignment == ((0, 1),)
    assert res.total_cost == 1.0
    assert res.unmatched_candidates == (0, 2)


def test_hungarian_matches_brute_force(rng):
    for _ in range(200):
        n, k = rng.integers(1, 5), rng.integers(1, 7)
        if n > k:
            n, k = k, n
        costs = rng.uniform(0, 1, (n, k))
        assert hungarian(costs).total_cost == pytest.approx(
            brute_force_assignment(costs), abs=1e-12)


def test_hungarian_property_to_5x7(rng):
    for _ in range(50):
        costs = rng.uniform(0, 10, (5, 7))
        assert hungarian(costs).total_cost == pytest.approx(
            brute_force_assignment(costs), abs=1e-12)


# ---------------------------------------------------------------------------
# parameter loss
# ---------------------------------------------------------------------------

def test_param_loss_zero_at_identity(bank):
    scene = scene_of([obj(), obj(t=(0.2, 0.8), weights=(0, 1, 0))])
    assert param_loss(scene, scene, bank) < 1e-6


def test_param_loss_square_quarter_turn_free(bank):
    target = scene_of([obj(weights=(0, 0, 1))])
    pred = scene_of([obj(weights=(0, 0, 1), angle=math.pi / 2)])
    assert param_loss(target, pred, bank) < 1e-6
    # a non-symmetric multiple costs something
    pred8 = scene_of([obj(weights=(0, 0, 1), angle=math.pi / 8)])
    assert param_loss(target, pred8, bank) > 1e-3


def test_param_loss_translation_weight(bank):
    target = scene_of([obj()])
    pred = scene_of([obj(t=(0.6, 0.5))])
    assert param_loss(target, pred, bank) == pytest.approx(0.5, abs=1e-6)


def test_param_loss_unmatched_candidates(bank):
    target = scene_of([obj()])
    pred = scene_of([obj(), obj(t=(0.9, 0.9), conf=0.25)])
    expected = -math.log(1 - 0.25)
    assert param_loss(target, pred, bank) == pytest.approx(expected, abs=1e-6)


def test_param_loss_needs_enough_candidates(bank):
    target = scene_of([obj(), obj(t=(0.2, 0.2))])
    pred = scene_of([obj()])
    with pytest.raises(NotEnoughCandidates):
        param_loss(target, pred, bank)


def test_param_loss_candidate_permutation_invariant(bank, rng):
    objs = [obj(t=(0.2, 0.2), color=(0.9, 0.1, 0.1)),
            obj(t=(0.8, 0.3), color=(0.1, 0.9, 0.1)),
            obj(t=(0.5, 0.8), color=(0.1, 0.1, 0.9))]
    target = scene_of(objs)
    pred_objs = [obj(t=(0.22, 0.18), color=(0.85, 0.15, 0.1)),
                 obj(t=(0.77, 0.33), color=(0.15, 0.88, 0.12)),
                 obj(t=(0.52, 0.79), color=(0.12, 0.14, 0.91))]
    base = param_loss(target, scene_of(pred_objs), bank)
    for perm in ([2, 0, 1], [1, 2, 0], [2, 1, 0]):
        shuffled = scene_of([pred_objs[i] for i in perm])
        assert param_loss(target, shuffled, bank) == base


def test_rotation_term_periodicity(bank):
    target = scene_of([obj(weights=(0, 0, 1))])
    sym = symmetry_order(blended_shape(bank, np.array([0, 0, 1.0])))
    assert sym == 4
    base_angle = 0.3
    period = 2 * math.pi / sym
    vals = [param_loss(target, scene_of([obj(weights=(0, 0, 1),
                                             angle=base_angle + k * period)]), bank)
            for k in range(3)]
    assert abs(vals[0] - vals[1]) < 1e-12
    assert abs(vals[0] - vals[2]) < 1e-12


def test_matching_stability_term(bank):
    # raising a candidate's confidence never increases its cost to any target
    targets = [obj(), obj(t=(0.1, 0.9))]
    for conf_low, conf_high in ((0.2, 0.5), (0.5, 0.9), (0.9, 1.0)):
        low = obj(conf=conf_low)
        high = obj(conf=conf_high)
        for t in targets:
            assert matching_cost(t, high) <= matching_cost(t, low)


def test_grad_param_loss_identity_point(bank):
    scene = scene_of([obj(weights=(0.4, 0.3, 0.3))])
    flat = flatten(scene, n_prototypes=3)
    grad = grad_param_loss(scene, flat, bank)
    lay = flat.layout
    for aspect in ("translation", "color", "scale", "shape", "rotation"):
        assert np.abs(grad[lay.aspect_indices(aspect)]).max() < 1e-9
    assert np.abs(grad[lay.aspect_indices("background")]).max() < 1e-9
    # confidence sits at the clamp boundary: zero slope
    assert np.abs(grad[lay.aspect_indices("confidence")]).max() == 0.0


def test_grad_param_loss_translation_direction(bank):
    target = scene_of([obj()])
    pred = scene_of([obj(t=(0.6, 0.55))])
    flat = flatten(pred, n_prototypes=3)
    grad = grad_param_loss(target, flat, bank)
    delta = np.array([0.1, 0.05])
    expected = 5.0 * delta / np.linalg.norm(delta)
    got = grad[flat.layout.aspect_indices("translation")]
    assert np.abs(got - expected).max() < 1e-9


def test_grad_param_loss_matches_finite_differences(bank, rng):
    target = scene_of([obj(t=(0.3, 0.3), weights=(0.6, 0.2, 0.2)),
                       obj(t=(0.7, 0.6), weights=(0.1, 0.8, 0.1), angle=0.7)])
    pred_objs = [obj(t=(0.35, 0.28), color=(0.4, 0.6, 0.5),
                     weights=(0.5, 0.25, 0.25), angle=0.2, conf=0.7),
                 obj(t=(0.65, 0.66), color=(0.55, 0.45, 0.5),
                     weights=(0.2, 0.6, 0.2), angle=0.9, conf=0.6)]
    pred = scene_of(pred_objs, bg=(0.25, 0.35, 0.45))
    flat = flatten(pred, n_prototypes=3)
    grad = grad_param_loss(target, flat, bank)

    def value(v):
        return param_loss(target, unflatten(FlatParams(v, flat.layout)), bank)

    fd = finite_difference_gradient(value, flat.values, h=1e-5)
    denom = np.maximum(np.maximum(np.abs(grad), np.abs(fd)), 1e-4)
    assert (np.abs(grad - fd) / denom).max() < 1e-4


def test_param_loss_matches_torch_value(bank):
    import torch

    from scenefit.losses import match_scenes, param_loss_torch

    target = scene_of([obj(t=(0.3, 0.3)), obj(t=(0.7, 0.6), weights=(0, 1, 0))])
    pred = scene_of([obj(t=(0.4, 0.25), conf=0.8),
                     obj(t=(0.6, 0.7), weights=(0.2, 0.7, 0.1), conf=0.9)])
    flat = flatten(pred, n_prototypes=3)
    match = match_scenes(target, unflatten(flat))
    torch_val = float(param_loss_torch(
        target, torch.from_numpy(flat.values), flat.layout, bank, match))
    assert torch_val == pytest.approx(param_loss(target, pred, bank), abs=1e-12)
