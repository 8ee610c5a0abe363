import numpy as np
import pytest

from scenefit.efd import EfdShape, symmetry_order
from scenefit.generator import GenConfig, builtin_bank, example_rng, sample_scene
from scenefit.prototypes import (ClusterResult, InvalidK, InvalidRange, choose_k,
                                 discover_prototypes, exhaustive_medoids,
                                 k_medoids, shape_distance, silhouette_score)
from scenefit.renderer import RenderConfig, render
from scenefit.scene import ObjectParams, Scene


def two_group_matrix():
    # points 0-2 tight group, 3-5 tight group, far apart
    pos = np.array([0.0, 0.1, 0.2, 10.0, 10.1, 10.2])
    return np.abs(pos[:, None] - pos[None, :])


def test_shape_distance_identity_and_scale(bank):
    square = bank.shapes[2]
    assert shape_distance(square, square) == 0.0
    tripled = EfdShape(square.coeffs * 3.0)
    assert shape_distance(square, tripled) < 1e-12


def test_shape_distance_orders_similarity(bank, rng):
    square, ellipse = bank.shapes[2], bank.shapes[0]
    wobble = EfdShape(square.coeffs + rng.normal(0, 0.003, square.coeffs.shape))
    assert shape_distance(square, ellipse) > shape_distance(square, wobble)


def test_shape_distance_symmetric(bank):
    a, b = bank.shapes[0], bank.shapes[1]
    assert shape_distance(a, b) == shape_distance(b, a)
    assert shape_distance(a, b) >= 0


def test_k_medoids_k_equals_n():
    d = two_group_matrix()
    res = k_medoids(d, 6)
    assert res.total_cost == 0.0
    assert set(res.medoid_indices) == set(range(6))


def test_k_medoids_two_groups():
    d = two_group_matrix()
    res = k_medoids(d, 2)
    labels = res.assignments
    assert len(set(labels[:3])) == 1
    assert len(set(labels[3:])) == 1
    assert labels[0] != labels[3]
    assert res.silhouette > 0.9


def test_k_medoids_matches_exhaustive_oracle(rng):
    for trial in range(20):
        n = int(rng.integers(4, 9))
        pts = rng.uniform(0, 1, (n, 2))
        d = np.hypot(*(pts[:, None, :] - pts[None, :, :]).transpose(2, 0, 1))
        for k in (2, 3):
            res = k_medoids(d, k)
            assert res.total_cost == pytest.approx(exhaustive_medoids(d, k), abs=1e-12)


def test_k_medoids_invalid_k():
    with pytest.raises(InvalidK):
        k_medoids(two_group_matrix(), 0)
    with pytest.raises(InvalidK):
        k_medoids(two_group_matrix(), 7)


def test_silhouette_matches_sklearn(rng):
    from sklearn.metrics import silhouette_score as sk_sil

    pts = rng.uniform(0, 1, (12, 2))
    d = np.hypot(*(pts[:, None, :] - pts[None, :, :]).transpose(2, 0, 1))
    labels = k_medoids(d, 3).assignments
    ours = silhouette_score(d, labels)
    theirs = sk_sil(d, labels, metric="precomputed")
    assert ours == pytest.approx(theirs, abs=1e-12)


def test_choose_k_three_groups():
    pos = np.array([0.0, 0.1, 0.2, 5.0, 5.1, 5.2, 11.0, 11.1, 11.2])
    d = np.abs(pos[:, None] - pos[None, :])
    assert choose_k(d, (2, 6)) == 3


def test_choose_k_two_groups():
    assert choose_k(two_group_matrix(), (2, 4)) == 2


def test_choose_k_invalid_range():
    with pytest.raises(InvalidRange):
        choose_k(two_group_matrix(), (1, 4))
    with pytest.raises(InvalidRange):
        choose_k(two_group_matrix(), (2, 6))


def gt_init_scene(scene):
    # ground-truth poses with confidence kept, shapes to be rediscovered
    return scene


def test_discovery_single_class_collapses(bank):
    # images containing only squares: medoids must be near-identical
    cfg = GenConfig(width=64, height=64, seed=21, n_objects_range=(1, 2))
    images, inits = [], []
    i = 0
    while len(images) < 8:
        scene = sample_scene(cfg, example_rng(21, i))
        i += 1
        objs = tuple(
            ObjectParams(color=o.color, translation=o.translation, scale=o.scale,
                         rotation=o.rotation, shape_weights=np.array([0.0, 0.0, 1.0]),
                         confidence=1.0)
            for o in scene.objects)
        squares = Scene(objs, scene.background, 64, 64)
        images.append(render(squares, bank))
        inits.append(squares)
    diagnostics = {}
    result = discover_prototypes(images, inits, rounds=1, fit_iters=40,
                                 k_range=(2, 4), seed=0, diagnostics=diagnostics)
    shapes = result.shapes
    assert len(shapes) == diagnostics["k"]
    dists = [shape_distance(a, b) for ai, a in enumerate(shapes)
             for b in shapes[ai + 1:]]
    assert max(dists) < 0.02


def test_discovery_deterministic(bank):
    cfg = GenConfig(width=48, height=48, seed=31, n_objects_range=(1, 1))
    images, inits = [], []
    for i in range(6):
        scene = sample_scene(cfg, example_rng(31, i))
        images.append(render(scene, bank))
        inits.append(scene)
    a = discover_prototypes(images, inits, rounds=1, fit_iters=15, seed=3)
    b = discover_prototypes(images, inits, rounds=1, fit_iters=15, seed=3)
    for sa, sb in zip(a.shapes, b.shapes):
        assert np.array_equal(sa.coeffs, sb.coeffs)
