"""Geometric and noise transforms over real feature vectors."""

import math

import numpy as np

from augforest.errors import TransformError


def _as_vector(x: np.ndarray) -> np.ndarray:
    array = np.asarray(x, dtype=np.float64)
    if array.ndim != 1:
        raise TransformError(f"Expected a 1-d vector, got shape {array.shape}")
    return array


def rotate2d(x: np.ndarray, magnitude: float, rng_seed: int = 0) -> np.ndarray:
    """Rotate the first two coordinates counter-clockwise by magnitude * pi."""
    x = _as_vector(x)
    if x.shape[0] < 2:
        raise TransformError(f"rotate2d needs at least 2 coordinates, got {x.shape[0]}")
    angle = magnitude * math.pi
    c, s = math.cos(angle), math.sin(angle)
    out = x.copy()
    out[0] = c * x[0] - s * x[1]
    out[1] = s * x[0] + c * x[1]
    return out


def jitter_gaussian(x: np.ndarray, magnitude: float, rng_seed: int = 0) -> np.ndarray:
    x = _as_vector(x)
    rng = np.random.default_rng(rng_seed)
    return x + rng.normal(0.0, magnitude, size=x.shape)


def scale_coords(x: np.ndarray, magnitude: float, rng_seed: int = 0) -> np.ndarray:
    return _as_vector(x) * (1.0 + magnitude)


def translate(x: np.ndarray, magnitude: float, rng_seed: int = 0) -> np.ndarray:
    return _as_vector(x) + magnitude


def axis_flip(x: np.ndarray, magnitude: float, rng_seed: int = 0) -> np.ndarray:
    """Negate one axis; the magnitude picks which (axis floor(magnitude * d), clipped)."""
    x = _as_vector(x)
    if x.shape[0] == 0:
        raise TransformError("axis_flip needs at least 1 coordinate")
    axis = min(int(magnitude * x.shape[0]), x.shape[0] - 1)
    out = x.copy()
    out[axis] = -out[axis]
    return out
