"""Interpretable scene parameterization and its flat optimizer-facing view.

A scene is an ordered list of objects over a unit viewport, each object
carrying color, translation, scale, rotation (as a unit cos/sin pair), simplex
weights over a prototype bank, and a confidence, plus a background color and
raster dimensions.  `flatten`/`unflatten` map scenes to flat real vectors and
back; `unflatten` re-projects out-of-range proposals (clamping and
renormalizing) so unconstrained optimizers can propose freely.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

MAX_OBJECTS = 8
SCALE_MIN = 1e-6
ROTATION_TOL = 1e-6
SIMPLEX_TOL = 1e-6

ASPECTS = ("color", "translation", "scale", "rotation", "shape", "confidence")
ASPECT_WIDTHS = {"color": 3, "translation": 2, "scale": 1, "rotation": 2, "confidence": 1}


class LayoutMismatch(ValueError):
    """Flat vector length does not match its layout descriptor."""


def _vec(x, n, name):
    v = np.asarray(x, dtype=np.float64)
    if v.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be finite")
    return v.copy()


@dataclass(frozen=True)
class ObjectParams:
    color: np.ndarray
    translation: np.ndarray
    scale: float
    rotation: np.ndarray
    shape_weights: np.ndarray
    confidence: float

    def __post_init__(self):
        color = _vec(self.color, 3, "color")
        translation = _vec(self.translation, 2, "translation")
        rotation = _vec(self.rotation, 2, "rotation")
        weights = np.asarray(self.shape_weights, dtype=np.float64).copy()
        if weights.ndim != 1 or weights.size < 1:
            raise ValueError("shape_weights must be a nonempty vector")
        if np.any(color < 0) or np.any(color > 1):
            raise ValueError("color components must lie in [0, 1]")
        if np.any(translation < 0) or np.any(translation > 1):
            raise ValueError("translation must lie in the unit viewport")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError("scale must be a positive real")
        if abs(np.hypot(*rotation) - 1.0) > ROTATION_TOL:
            raise ValueError("rotation pair must have unit norm")
        if np.any(weights < -SIMPLEX_TOL) or abs(weights.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError("shape_weights must lie on the simplex")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")
        object.__setattr__(self, "color", color)
        object.__setattr__(self, "translation", translation)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "shape_weights", weights)
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "confidence", float(self.confidence))

    @property
    def n_prototypes(self) -> int:
        return self.shape_weights.size

    def to_obj(self) -> dict:
        return {
            "color": self.color.tolist(),
            "t": self.translation.tolist(),
            "scale": self.scale,
            "rot": self.rotation.tolist(),
            "shape": self.shape_weights.tolist(),
            "conf": self.confidence,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "ObjectParams":
        return cls(
            color=np.asarray(obj["color"], dtype=np.float64),
            translation=np.asarray(obj["t"], dtype=np.float64),
            scale=float(obj["scale"]),
            rotation=np.asarray(obj["rot"], dtype=np.float64),
            shape_weights=np.asarray(obj["shape"], dtype=np.float64),
            confidence=float(obj["conf"]),
        )


def angle_of(obj: ObjectParams) -> float:
    """Rotation angle in (-pi, pi] recovered from the unit cos/sin pair."""
    return math.atan2(obj.rotation[1], obj.rotation[0])


@dataclass(frozen=True)
class Scene:
    objects: tuple
    background: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        objects = tuple(self.objects)
        if any(not isinstance(o, ObjectParams) for o in objects):
            raise TypeError("scene objects must be ObjectParams")
        if len(objects) > MAX_OBJECTS:
            raise ValueError(f"at most {MAX_OBJECTS} objects per scene")
        ms = {o.n_prototypes for o in objects}
        if len(ms) > 1:
            raise ValueError("all objects must share the same bank size")
        background = _vec(self.background, 3, "background")
        if np.any(background < 0) or np.any(background > 1):
            raise ValueError("background components must lie in [0, 1]")
        if self.width < 1 or self.height < 1:
            raise ValueError("raster dimensions must be >= 1")
        object.__setattr__(self, "objects", objects)
        object.__setattr__(self, "background", background)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def n_objects(self) -> int:
        return len(self.objects)

    def to_obj(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "background": self.background.tolist(),
            "objects": [o.to_obj() for o in self.objects],
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "Scene":
        return cls(
            objects=tuple(ObjectParams.from_obj(o) for o in obj["objects"]),
            background=np.asarray(obj["background"], dtype=np.float64),
            width=int(obj["width"]),
            height=int(obj["height"]),
        )

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_obj(), f)

    @classmethod
    def load(cls, path) -> "Scene":
        with open(path) as f:
            return cls.from_obj(json.load(f))


@dataclass(frozen=True)
class FlatLayout:
    """Maps slices of a flat parameter vector to (object, aspect) blocks.

    Per-object layout: color(3), translation(2), scale(1), rotation(2),
    shape(m), confidence(1); the background color occupies the final 3 slots.
    """

    n_objects: int
    n_prototypes: int
    width: int
    height: int

    @property
    def per_object(self) -> int:
        return self.n_prototypes + 9

    def __len__(self) -> int:
        return self.n_objects * self.per_object + 3

    def object_slice(self, i: int) -> slice:
        if not 0 <= i < self.n_objects:
            raise IndexError(f"object index {i} out of range")
        return slice(i * self.per_object, (i + 1) * self.per_object)

    def slice_of(self, i: int, aspect: str) -> slice:
        base = i * self.per_object
        m = self.n_prototypes
        offsets = {
            "color": (0, 3),
            "translation": (3, 5),
            "scale": (5, 6),
            "rotation": (6, 8),
            "shape": (8, 8 + m),
            "confidence": (8 + m, 9 + m),
        }
        lo, hi = offsets[aspect]
        return slice(base + lo, base + hi)

    @property
    def background_slice(self) -> slice:
        return slice(len(self) - 3, len(self))

    def aspect_indices(self, aspect: str) -> np.ndarray:
        """Flat indices of one aspect across all objects ('background' included)."""
        if aspect == "background":
            return np.arange(len(self) - 3, len(self))
        idx = [np.arange(self.slice_of(i, aspect).start, self.slice_of(i, aspect).stop)
               for i in range(self.n_objects)]
        return np.concatenate(idx) if idx else np.empty(0, dtype=np.int64)


@dataclass(frozen=True)
class FlatParams:
    values: np.ndarray
    layout: FlatLayout

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise LayoutMismatch("flat parameter values must be a vector")
        if v.size != len(self.layout):
            raise LayoutMismatch(
                f"vector of length {v.size} does not fit layout of length {len(self.layout)}"
            )
        object.__setattr__(self, "values", v.copy())


def flatten(scene: Scene, n_prototypes: int | None = None) -> FlatParams:
    """Serialize a scene into its canonical flat vector.

    `n_prototypes` pins the bank size for empty scenes, where it cannot be
    inferred from the objects.
    """
    if scene.n_objects:
        m = scene.objects[0].n_prototypes
        if n_prototypes is not None and n_prototypes != m:
            raise LayoutMismatch("n_prototypes disagrees with scene objects")
    else:
        m = 0 if n_prototypes is None else n_prototypes
    layout = FlatLayout(scene.n_objects, m, scene.width, scene.height)
    values = np.empty(len(layout))
    for i, obj in enumerate(scene.objects):
        values[layout.slice_of(i, "color")] = obj.color
        values[layout.slice_of(i, "translation")] = obj.translation
        values[layout.slice_of(i, "scale")] = obj.scale
        values[layout.slice_of(i, "rotation")] = obj.rotation
        values[layout.slice_of(i, "shape")] = obj.shape_weights
        values[layout.slice_of(i, "confidence")] = obj.confidence
    values[layout.background_slice] = scene.background
    return FlatParams(values, layout)


def project_rotation(pair: np.ndarray) -> np.ndarray:
    norm = np.hypot(pair[0], pair[1])
    if abs(norm - 1.0) <= 1e-12:
        return pair  # already unit: keep flatten/unflatten bit-exact
    if norm < 1e-12:
        return np.array([1.0, 0.0])
    return pair / norm


def project_simplex(weights: np.ndarray) -> np.ndarray:
    w = np.clip(weights, 0.0, None)
    total = w.sum()
    if abs(total - 1.0) <= 1e-12:
        return w
    if total < 1e-12:
        return np.full_like(w, 1.0 / max(w.size, 1))
    return w / total


def unflatten(flat: FlatParams) -> Scene:
    """Inverse of flatten with re-projection onto the valid parameter ranges."""
    lay = flat.layout
    v = flat.values
    objects = []
    for i in range(lay.n_objects):
        objects.append(
            ObjectParams(
                color=np.clip(v[lay.slice_of(i, "color")], 0.0, 1.0),
                translation=np.clip(v[lay.slice_of(i, "translation")], 0.0, 1.0),
                scale=max(float(v[lay.slice_of(i, "scale")][0]), SCALE_MIN),
                rotation=project_rotation(v[lay.slice_of(i, "rotation")]),
                shape_weights=project_simplex(v[lay.slice_of(i, "shape")]),
                confidence=float(np.clip(v[lay.slice_of(i, "confidence")][0], 0.0, 1.0)),
            )
        )
    background = np.clip(v[lay.background_slice], 0.0, 1.0)
    return Scene(tuple(objects), background, lay.width, lay.height)
