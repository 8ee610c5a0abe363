"""Multi-object benchmark sampling and dataset materialization.

Scenes hold 1-4 uniformly colored objects (ellipse / heart / square
prototypes) with uniform pose parameters; object positions come from the best
of several candidate placements, scored by the minimum pairwise distance, to
keep overlap moderate.  Datasets are written as PNG image / PNG label / JSON
scene triples plus a JSONL manifest, and are byte-reproducible from the seed:
example i draws from an RNG stream derived from (seed, i), so parallel and
serial generation produce identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import renderer
from .efd import (DEFAULT_CONTOUR_POINTS, DEFAULT_HARMONICS, EfdShape,
                  PrototypeBank, efd_from_contour, normalize_shape)
from .renderer import RenderConfig, render, render_labels
from .scene import ObjectParams, Scene

SHAPE_NAMES = ("ellipse", "heart", "square")


class EmptyManifest(ValueError):
    pass


class IoFailure(OSError):
    pass


@dataclass(frozen=True)
class GenConfig:
    n_objects_range: tuple = (1, 4)
    scale_range: tuple = (0.1, 0.3)
    translation_range: tuple = (0.05, 0.95)
    n_placement_sets: int = 8
    width: int = 128
    height: int = 128
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.n_objects_range
        if not (1 <= lo <= hi <= 8):
            raise ValueError("n_objects_range must be within [1, 8]")
        if not (0 < self.scale_range[0] <= self.scale_range[1]):
            raise ValueError("scale_range must be positive and ordered")
        if not (0 <= self.translation_range[0] <= self.translation_range[1] <= 1):
            raise ValueError("translation_range must sit inside the viewport")
        if self.n_placement_sets < 1:
            raise ValueError("n_placement_sets must be >= 1")
        if self.width < 1 or self.height < 1:
            raise ValueError("raster dimensions must be >= 1")

    def to_obj(self) -> dict:
        return {
            "n_objects_range": list(self.n_objects_range),
            "scale_range": list(self.scale_range),
            "translation_range": list(self.translation_range),
            "n_placement_sets": self.n_placement_sets,
            "width": self.width,
            "height": self.height,
            "seed": self.seed,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "GenConfig":
        return cls(
            n_objects_range=tuple(obj["n_objects_range"]),
            scale_range=tuple(obj["scale_range"]),
            translation_range=tuple(obj["translation_range"]),
            n_placement_sets=int(obj["n_placement_sets"]),
            width=int(obj["width"]),
            height=int(obj["height"]),
            seed=int(obj["seed"]),
        )


# ---------------------------------------------------------------------------
# built-in prototypes
# ---------------------------------------------------------------------------

def _resample_uniform_arclength(points: np.ndarray, k: int) -> np.ndarray:
    seg = points - np.roll(points, 1, axis=0)
    dist = np.hypot(seg[:, 0], seg[:, 1])
    start = np.cumsum(dist) - dist
    total = dist.sum()
    closed = np.vstack([points, points[:1]])
    knots = np.concatenate([start, [total]])
    targets = np.arange(k) / k * total
    idx = np.clip(np.searchsorted(knots, targets, side="right") - 1, 0, len(points) - 1)
    u = (targets - knots[idx]) / np.maximum(knots[idx + 1] - knots[idx], 1e-300)
    return (1 - u[:, None]) * closed[idx] + u[:, None] * closed[idx + 1]


def _ellipse_contour(n: int = 4096) -> np.ndarray:
    th = 2 * np.pi * np.arange(n) / n
    return np.stack([np.cos(th), 0.5 * np.sin(th)], axis=1)


def _heart_contour(n: int = 4096) -> np.ndarray:
    # sin^3 heart; reversed so the contour winds counter-clockwise
    th = 2 * np.pi * np.arange(n) / n
    x = np.sin(th) ** 3
    y = (13 * np.cos(th) - 5 * np.cos(2 * th) - 2 * np.cos(3 * th) - np.cos(4 * th)) / 16
    return np.stack([x, y], axis=1)[::-1]


def _square_contour(n: int = 4096) -> np.ndarray:
    s = np.arange(n) / n * 8.0
    pts = np.zeros((n, 2))
    m = s < 2
    pts[m] = np.stack([np.ones(m.sum()), -1 + s[m]], axis=1)
    m = (s >= 2) & (s < 4)
    pts[m] = np.stack([1 - (s[m] - 2), np.ones(m.sum())], axis=1)
    m = (s >= 4) & (s < 6)
    pts[m] = np.stack([-np.ones(m.sum()), 1 - (s[m] - 4)], axis=1)
    m = s >= 6
    pts[m] = np.stack([-1 + (s[m] - 6), -np.ones(m.sum())], axis=1)
    return pts


def builtin_bank(n_harmonics: int = DEFAULT_HARMONICS) -> PrototypeBank:
    """Normalized ellipse (2:1), heart and square prototypes, in that order."""
    shapes = []
    for make in (_ellipse_contour, _heart_contour, _square_contour):
        contour = _resample_uniform_arclength(make(), 4096)
        shapes.append(normalize_shape(efd_from_contour(contour, n_harmonics)))
    return PrototypeBank(tuple(shapes))


# ---------------------------------------------------------------------------
# scene sampling
# ---------------------------------------------------------------------------

def _min_pairwise_distance(points: np.ndarray) -> float:
    if len(points) < 2:
        return np.inf
    diff = points[:, None, :] - points[None, :, :]
    d = np.hypot(diff[..., 0], diff[..., 1])
    return float(d[np.triu_indices(len(points), k=1)].min())


def sample_scene(cfg: GenConfig, rng: np.random.Generator,
                 n_prototypes: int = 3) -> Scene:
    """Draw one ground-truth scene; every confidence is exactly 1."""
    lo, hi = cfg.n_objects_range
    n = int(rng.integers(lo, hi + 1))
    background = rng.uniform(0.0, 1.0, 3)
    colors = rng.uniform(0.0, 1.0, (n, 3))
    angles = rng.uniform(0.0, 2 * np.pi, n)
    scales = rng.uniform(cfg.scale_range[0], cfg.scale_range[1], n)
    shape_ids = rng.integers(0, n_prototypes, n)
    t_lo, t_hi = cfg.translation_range
    candidate_sets = rng.uniform(t_lo, t_hi, (cfg.n_placement_sets, n, 2))
    if n == 1:
        translations = candidate_sets[0]
    else:
        spreads = [_min_pairwise_distance(c) for c in candidate_sets]
        translations = candidate_sets[int(np.argmax(spreads))]
    objects = []
    for i in range(n):
        weights = np.zeros(n_prototypes)
        weights[shape_ids[i]] = 1.0
        objects.append(ObjectParams(
            color=colors[i],
            translation=translations[i],
            scale=float(scales[i]),
            rotation=np.array([np.cos(angles[i]), np.sin(angles[i])]),
            shape_weights=weights,
            confidence=1.0,
        ))
    return Scene(tuple(objects), background, cfg.width, cfg.height)


def example_rng(seed: int, index: int) -> np.random.Generator:
    """Per-example stream so generation order (or parallelism) cannot matter."""
    return np.random.default_rng([seed, index])


# ---------------------------------------------------------------------------
# dataset files
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetExample:
    image: np.ndarray
    scene: Scene
    labels: np.ndarray


def make_example(cfg: GenConfig, index: int, bank: PrototypeBank,
                 render_cfg: RenderConfig) -> DatasetExample:
    scene = sample_scene(cfg, example_rng(cfg.seed, index), n_prototypes=len(bank))
    return DatasetExample(
        image=render(scene, bank, render_cfg),
        scene=scene,
        labels=render_labels(scene, bank, render_cfg),
    )


def generate_dataset(cfg: GenConfig, count: int, out_dir,
                     bank: PrototypeBank | None = None,
                     render_cfg: RenderConfig | None = None,
                     threads: int = 1) -> Path:
    """Write `count` examples plus manifest.jsonl; returns the manifest path."""
    bank = bank or builtin_bank()
    render_cfg = render_cfg or RenderConfig()
    out = Path(out_dir)
    try:
        for sub in ("images", "labels", "scenes"):
            (out / sub).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create dataset layout under {out}") from exc

    def build(i: int):
        ex = make_example(cfg, i, bank, render_cfg)
        name = f"{i:06d}"
        renderer.write_image_png(out / "images" / f"{name}.png", ex.image)
        renderer.write_labels_png(out / "labels" / f"{name}.png", ex.labels)
        ex.scene.save(out / "scenes" / f"{name}.json")
        return {
            "index": i,
            "image": f"images/{name}.png",
            "labels": f"labels/{name}.png",
            "scene": f"scenes/{name}.json",
            "n_objects": ex.scene.n_objects,
            "seed": cfg.seed,
        }

    if threads > 1 and count > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(build, range(count)))
    else:
        records = [build(i) for i in range(count)]

    with open(out / "meta.json", "w") as f:
        json.dump({"config": cfg.to_obj(), "count": count,
                   "render": {"sigma": render_cfg.sigma, "gamma": render_cfg.gamma,
                              "k_points": render_cfg.k_points}}, f)
    manifest = out / "manifest.jsonl"
    with open(manifest, "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    return manifest


def read_manifest(manifest_path) -> list[dict]:
    path = Path(manifest_path)
    records = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def load_scene(manifest_path, record: dict) -> Scene:
    return Scene.load(Path(manifest_path).parent / record["scene"])


def load_image(manifest_path, record: dict) -> np.ndarray:
    return renderer.read_image_png(Path(manifest_path).parent / record["image"])


def load_label_map(manifest_path, record: dict) -> np.ndarray:
    return renderer.read_labels_png(Path(manifest_path).parent / record["labels"])


def sample_params_from_dataset(manifest_path, rng: np.random.Generator) -> Scene:
    """Ground-truth parameters of a uniformly chosen example."""
    records = read_manifest(manifest_path)
    if not records:
        raise EmptyManifest(f"no examples listed in {manifest_path}")
    return load_scene(manifest_path, records[int(rng.integers(len(records)))])
