"""2-D gradient (Perlin) noise and its fractal octave sum.

Fields are ``float64`` arrays of shape ``(height, width)``.  Pixel ``i`` of an
axis with ``p`` periods over ``n`` pixels is sampled at lattice coordinate
``i * p / n``, so every pixel whose coordinate is integral sits on a lattice
corner and evaluates to exactly zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .rng import mix, splitmix64_array

# eight unit gradients at multiples of 45 degrees
_ANGLES = np.arange(8) * (math.pi / 4.0)
_GRADIENTS = np.stack([np.cos(_ANGLES), np.sin(_ANGLES)], axis=1)


@dataclass(frozen=True)
class FractalNoiseParams:
    persistence: float = 0.5
    lacunarity: float = 2.0
    res: int = 2
    octaves: int = 5
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.persistence <= 1.0):
            raise ParameterError(f"persistence must lie in (0, 1], got {self.persistence}")
        if not self.lacunarity > 1.0:
            raise ParameterError(f"lacunarity must be > 1, got {self.lacunarity}")
        if int(self.res) != self.res or self.res < 1:
            raise ParameterError(f"res must be a positive integer, got {self.res}")
        if int(self.octaves) != self.octaves or self.octaves < 1:
            raise ParameterError(f"octaves must be a positive integer, got {self.octaves}")

    def octave_periods(self) -> list[int]:
        """Lattice periods per axis for octaves 1..n."""
        return [max(1, int(round(self.res * self.lacunarity ** i))) for i in range(self.octaves)]

    def canonical_size(self) -> int:
        """Grid size ``lacunarity**(octaves-1) * res``, rounded for non-integral lacunarity."""
        return self.octave_periods()[-1]


def fade(t):
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def _lattice_gradients(periods_x: int, periods_y: int, seed: int) -> np.ndarray:
    gx = np.arange(periods_x + 1, dtype=np.uint64)
    gy = np.arange(periods_y + 1, dtype=np.uint64)
    col = splitmix64_array(np.uint64(seed) ^ gx)
    h = splitmix64_array(col[None, :] ^ splitmix64_array(gy)[:, None])
    return _GRADIENTS[(h >> np.uint64(61)).astype(np.intp)]


def _sample_axis(n: int, periods: int) -> tuple[np.ndarray, np.ndarray]:
    coord = (np.arange(n, dtype=np.int64) * periods) / n
    cell = np.floor(coord).astype(np.intp)
    return cell, coord - cell


def gradient_noise(width: int, height: int, periods_x: int, periods_y: int, seed: int) -> np.ndarray:
    """Perlin noise without the divisibility requirement of :func:`perlin2d`."""
    cx, fx = _sample_axis(width, periods_x)
    cy, fy = _sample_axis(height, periods_y)
    if not fx.any() and not fy.any():
        # every sample is a lattice corner
        return np.zeros((height, width))
    grads = _lattice_gradients(periods_x, periods_y, seed)
    gxs, gys = grads[..., 0], grads[..., 1]
    fx = fx[None, :]
    fy = fy[:, None]

    def corner(dr, dc, dx, dy):
        rows = cy + dr
        cols = cx + dc
        gx = gxs.take(rows, axis=0).take(cols, axis=1)
        gy = gys.take(rows, axis=0).take(cols, axis=1)
        return gx * dx + gy * dy

    n00 = corner(0, 0, fx, fy)
    n10 = corner(0, 1, fx - 1.0, fy)
    n01 = corner(1, 0, fx, fy - 1.0)
    n11 = corner(1, 1, fx - 1.0, fy - 1.0)
    u = fade(fx)
    v = fade(fy)
    n0 = n00 * (1.0 - u) + n10 * u
    n1 = n01 * (1.0 - u) + n11 * u
    out = math.sqrt(2.0) * (n0 * (1.0 - v) + n1 * v)
    return np.clip(out, -1.0, 1.0)


def perlin2d(width: int, height: int, periods_x: int, periods_y: int, seed: int) -> np.ndarray:
    """Classic gradient noise with quintic fade; values in [-1, 1].

    ``width`` must be a multiple of ``periods_x`` and ``height`` of
    ``periods_y``.
    """
    if width < 1 or height < 1:
        raise DimensionError(f"field size must be positive, got {width}x{height}")
    if periods_x < 1 or periods_y < 1:
        raise ParameterError(f"periods must be >= 1, got ({periods_x}, {periods_y})")
    if width % periods_x or height % periods_y:
        raise DimensionError(
            f"field {width}x{height} is not divisible by periods ({periods_x}, {periods_y})"
        )
    return gradient_noise(width, height, periods_x, periods_y, seed)


def octave_seed(seed: int, octave: int) -> int:
    """Seed of the 1-based ``octave`` of a fractal field."""
    return mix(seed, octave)


def fractal_perlin2d(width: int, height: int, params: FractalNoiseParams) -> np.ndarray:
    """Sum of ``params.octaves`` independent octaves.

    Octave ``i`` has ``round(res * lacunarity**(i-1))`` periods per axis and
    amplitude ``persistence**(i-1)``.
    """
    if width < 1 or height < 1:
        raise DimensionError(f"field size must be positive, got {width}x{height}")
    periods = params.octave_periods()
    if periods[-1] > min(width, height):
        raise ParameterError(
            f"octave with {periods[-1]} periods exceeds the {width}x{height} grid"
        )
    total = np.zeros((height, width))
    amplitude = 1.0
    for i, p in enumerate(periods, start=1):
        total += amplitude * gradient_noise(width, height, p, p, octave_seed(params.seed, i))
        amplitude *= params.persistence
    return total


def normalize_field(field: np.ndarray) -> np.ndarray:
    """Min-max rescale to [0, 1]; a constant field maps to 0.5 everywhere."""
    field = np.asarray(field, dtype=np.float64)
    if field.size == 0:
        raise ParameterError("cannot normalise an empty field")
    lo, hi = field.min(), field.max()
    if hi == lo:
        return np.full_like(field, 0.5)
    return (field - lo) / (hi - lo)
