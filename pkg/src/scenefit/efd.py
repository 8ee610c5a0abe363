"""Spectral shape descriptors for closed 2D contours.

A shape is a bank of per-harmonic coefficient quadruples (A_n, B_n, C_n, D_n)
describing the contour as a pair of truncated Fourier series

    x(t) = sum_n A_n cos(2 pi n t) + B_n sin(2 pi n t)
    y(t) = sum_n C_n cos(2 pi n t) + D_n sin(2 pi n t)

with t running once around the closed path.  The forward transform treats the
input points as uniformly spaced samples of one period, which makes
forward/inverse an exact pair for band-limited contours (the chord-length
weighted sums classically used for digitized outlines are not invertible to
machine precision; callers fitting analytic curves should resample them to
uniform arc length first).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

DEFAULT_HARMONICS = 16
DEFAULT_CONTOUR_POINTS = 64

# relative magnitude below which a complex harmonic is ignored by symmetry_order
SYMMETRY_THRESHOLD = 0.05


class DegenerateContour(ValueError):
    """Contour has no usable geometry (zero extent or < 3 distinct points)."""


class WeightSimplexViolation(ValueError):
    """Blend weights are negative or do not sum to one."""


@dataclass(frozen=True)
class EfdShape:
    """N x 4 array of (A_n, B_n, C_n, D_n), n = 1..N."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        if c.ndim != 2 or c.shape[1] != 4 or c.shape[0] < 1:
            raise ValueError(f"coefficient array must be N x 4, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "coeffs", c.copy())

    @property
    def n_harmonics(self) -> int:
        return self.coeffs.shape[0]

    def to_obj(self) -> dict:
        return {"n": self.n_harmonics, "coeffs": self.coeffs.tolist()}

    @classmethod
    def from_obj(cls, obj: dict) -> "EfdShape":
        shape = cls(np.asarray(obj["coeffs"], dtype=np.float64))
        if shape.n_harmonics != obj["n"]:
            raise ValueError("harmonic count does not match coefficient rows")
        return shape


@dataclass(frozen=True)
class PrototypeBank:
    """Fixed set of pre-normalized shapes blended by simplex weights."""

    shapes: tuple

    def __post_init__(self):
        shapes = tuple(self.shapes)
        if len(shapes) < 1:
            raise ValueError("bank needs at least one prototype")
        if any(not isinstance(s, EfdShape) for s in shapes):
            raise TypeError("bank entries must be EfdShape")
        object.__setattr__(self, "shapes", shapes)

    def __len__(self) -> int:
        return len(self.shapes)

    def coeff_stack(self) -> np.ndarray:
        """(m, N, 4) coefficient array; prototypes must share N."""
        ns = {s.n_harmonics for s in self.shapes}
        if len(ns) != 1:
            raise ValueError("bank prototypes have mixed harmonic counts")
        return np.stack([s.coeffs for s in self.shapes])

    def to_obj(self) -> list:
        return [s.to_obj() for s in self.shapes]

    @classmethod
    def from_obj(cls, obj: list) -> "PrototypeBank":
        return cls(tuple(EfdShape.from_obj(o) for o in obj))

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_obj(), f)

    @classmethod
    def load(cls, path) -> "PrototypeBank":
        with open(path) as f:
            return cls.from_obj(json.load(f))


def _clean_contour(points: np.ndarray) -> np.ndarray:
    """Drop exact-duplicate consecutive points (including the wrap-around)."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"contour must be K x 2, got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("contour coordinates must be finite")
    keep = np.any(pts != np.roll(pts, 1, axis=0), axis=1)
    pts = pts[keep]
    if len(pts) < 3 or len(np.unique(pts, axis=0)) < 3:
        raise DegenerateContour("need at least 3 distinct contour points")
    return pts


def fourier_basis(n_harmonics: int, k_points: int, dtype=np.float64):
    """(K, N) cosine and sine tables at t_p = p/K, p = 1..K."""
    t = np.arange(1, k_points + 1, dtype=dtype) / k_points
    arg = 2.0 * np.pi * np.outer(t, np.arange(1, n_harmonics + 1, dtype=dtype))
    return np.cos(arg), np.sin(arg)


def efd_from_contour(points, n_harmonics: int = DEFAULT_HARMONICS) -> EfdShape:
    """Fit coefficients to a closed contour sampled at (nominally) uniform spacing.

    Duplicate consecutive points are dropped first.  Raises DegenerateContour
    when fewer than 3 distinct points remain.
    """
    if n_harmonics < 1:
        raise ValueError("n_harmonics must be positive")
    pts = _clean_contour(points)
    k = len(pts)
    cos_b, sin_b = fourier_basis(n_harmonics, k)
    scale = 2.0 / k
    coeffs = np.stack(
        [
            scale * (cos_b.T @ pts[:, 0]),
            scale * (sin_b.T @ pts[:, 0]),
            scale * (cos_b.T @ pts[:, 1]),
            scale * (sin_b.T @ pts[:, 1]),
        ],
        axis=1,
    )
    return EfdShape(coeffs)


def contour_from_efd(shape: EfdShape, k_points: int = DEFAULT_CONTOUR_POINTS) -> np.ndarray:
    """Evaluate the contour at K uniform parameters t_p = p/K, p = 1..K."""
    if k_points < 1:
        raise ValueError("k_points must be positive")
    c = shape.coeffs
    cos_b, sin_b = fourier_basis(shape.n_harmonics, k_points)
    x = cos_b @ c[:, 0] + sin_b @ c[:, 1]
    y = cos_b @ c[:, 2] + sin_b @ c[:, 3]
    return np.stack([x, y], axis=1)


def check_simplex(weights, tol: float = 1e-6) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1:
        raise WeightSimplexViolation("weights must be a flat vector")
    if np.any(w < -tol) or abs(w.sum() - 1.0) > tol:
        raise WeightSimplexViolation(
            f"weights must be nonnegative and sum to 1 (sum={w.sum():.8f})"
        )
    return np.clip(w, 0.0, None)


def blend_shapes(bank: PrototypeBank, weights, k_points: int = DEFAULT_CONTOUR_POINTS) -> np.ndarray:
    """Soft-index the bank: per-point weighted sum of the prototype contours."""
    w = check_simplex(weights)
    if len(w) != len(bank):
        raise WeightSimplexViolation(
            f"got {len(w)} weights for a bank of {len(bank)} prototypes"
        )
    contours = np.stack([contour_from_efd(s, k_points) for s in bank.shapes])
    return np.tensordot(w, contours, axes=1)


def normalize_shape(shape: EfdShape, k_points: int = DEFAULT_CONTOUR_POINTS) -> EfdShape:
    """Scale so the reconstructed contour has half-extent 1 (max |x|, |y| = 1).

    Contours synthesized from harmonics n >= 1 are centered already, so
    normalization is a pure rescale; it is idempotent to the last bit.
    """
    pts = contour_from_efd(shape, k_points)
    extent = np.abs(pts).max()
    if extent <= 0.0:
        raise DegenerateContour("shape reconstructs to a single point")
    if abs(extent - 1.0) <= 1e-12:
        return shape  # already normalized: exact idempotence
    return EfdShape(shape.coeffs / extent)


def complex_spectrum(shape: EfdShape):
    """Exponents k in {-N..-1, 1..N} and the matching complex magnitudes.

    The contour z(t) = x(t) + i y(t) expands as sum_k c_k exp(i k 2 pi t) with
    c_{+n} = (A_n + D_n)/2 + i (C_n - B_n)/2 and
    c_{-n} = (A_n - D_n)/2 + i (C_n + B_n)/2.
    """
    a, b, c, d = shape.coeffs.T
    mag_pos = 0.5 * np.hypot(a + d, c - b)
    mag_neg = 0.5 * np.hypot(a - d, c + b)
    n = np.arange(1, shape.n_harmonics + 1)
    ks = np.concatenate([-n[::-1], n])
    mags = np.concatenate([mag_neg[::-1], mag_pos])
    return ks, mags


def symmetry_order(shape: EfdShape, threshold: float = SYMMETRY_THRESHOLD) -> int:
    """Rotational symmetry count inferred from the significant harmonics.

    A k-exponent is significant when its magnitude exceeds threshold times the
    magnitude of the fundamental (k = +1); the order is gcd over |k - 1| of the
    significant exponents other than the fundamental, 1 when none qualify.
    An m-fold symmetric contour only carries energy at k = 1 mod m, so every
    |k - 1| is a multiple of m.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    ks, mags = complex_spectrum(shape)
    ref = mags[ks == 1][0]
    sig = [abs(k - 1) for k, m in zip(ks, mags) if k != 1 and m > threshold * ref]
    if not sig:
        return 1
    return int(np.gcd.reduce(np.asarray(sig, dtype=np.int64)))


def rotate_shape(shape: EfdShape, angle: float) -> EfdShape:
    """Rotate the reconstructed contour by `angle` in coefficient space."""
    ca, sa = math.cos(angle), math.sin(angle)
    a, b, c, d = shape.coeffs.T
    return EfdShape(np.stack([ca * a - sa * c, ca * b - sa * d,
                              sa * a + ca * c, sa * b + ca * d], axis=1))
