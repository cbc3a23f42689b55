"""Pseudo-lesion patches: smoothed circular mask, random affine warp, noise fill."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import ndimage

from .errors import ParameterError
from .perlin import FractalNoiseParams, fractal_perlin2d, normalize_field
from .rng import generator, mix

MAX_AFFINE_TRIES = 10
MIN_DETERMINANT = 0.05


@dataclass
class LesionPatch:
    """Real-valued patch in [0, 1] plus the boolean lesion support."""

    values: np.ndarray
    support: np.ndarray
    radius: Optional[int] = None

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class LesionParams:
    radius_range: tuple[int, int] = (20, 75)
    smoothness_alpha: float = 0.5
    noise: FractalNoiseParams = field(default_factory=FractalNoiseParams)
    affine_seed: int = 0

    def __post_init__(self):
        lo, hi = self.radius_range
        if not (0 < lo <= hi):
            raise ParameterError(f"radius range must satisfy 0 < min <= max, got {self.radius_range}")
        if not (0.0 < self.smoothness_alpha <= 1.0):
            raise ParameterError(f"smoothness alpha must lie in (0, 1], got {self.smoothness_alpha}")


def mask_profile(d, r: float, alpha: float):
    """Radial mask value: 1 in the core, linear ramp over the outer ``alpha`` fraction, 0 outside."""
    d = np.asarray(d, dtype=np.float64)
    ramp = (r - d) / (r * alpha)
    return np.clip(np.where(d <= r * (1.0 - alpha), 1.0, np.where(d <= r, ramp, 0.0)), 0.0, 1.0)


def smoothed_circle_mask(r: int, alpha: float) -> LesionPatch:
    """Disc of radius ``r`` whose outer ``alpha`` fraction ramps linearly to 0."""
    if r < 1 or int(r) != r:
        raise ParameterError(f"radius must be a positive integer, got {r}")
    if not (0.0 < alpha <= 1.0):
        raise ParameterError(f"alpha must lie in (0, 1], got {alpha}")
    r = int(r)
    off = np.arange(-r, r + 1, dtype=np.float64)
    values = mask_profile(np.hypot(off[:, None], off[None, :]), r, alpha)
    return LesionPatch(values, values > 0, radius=r)


def bilinear_sample(img: np.ndarray, qx: np.ndarray, qy: np.ndarray) -> np.ndarray:
    """Sample ``img`` at fractional (col, row) positions; zero outside."""
    h, w = img.shape
    x0 = np.floor(qx).astype(np.intp)
    y0 = np.floor(qy).astype(np.intp)
    wx = qx - x0
    wy = qy - y0
    out = np.zeros(np.broadcast(qx, qy).shape)
    for dy, fy in ((0, 1.0 - wy), (1, wy)):
        for dx, fx in ((0, 1.0 - wx), (1, wx)):
            yy = y0 + dy
            xx = x0 + dx
            ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            vals = np.where(ok, img[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)], 0.0)
            out += fx * fy * vals
    return out


def resize_bilinear(field_: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centre bilinear resize with edge clamping."""
    in_h, in_w = field_.shape
    sy = np.clip((np.arange(out_h) + 0.5) * in_h / out_h - 0.5, 0.0, in_h - 1.0)
    sx = np.clip((np.arange(out_w) + 0.5) * in_w / out_w - 0.5, 0.0, in_w - 1.0)
    return bilinear_sample(field_, sx[None, :], sy[:, None])


def _crop_to_support(values: np.ndarray, support: np.ndarray, radius) -> LesionPatch:
    rows = np.flatnonzero(support.any(axis=1))
    cols = np.flatnonzero(support.any(axis=0))
    if rows.size == 0:
        raise ParameterError("lesion support is empty")
    sl = (slice(rows[0], rows[-1] + 1), slice(cols[0], cols[-1] + 1))
    return LesionPatch(values[sl].copy(), support[sl].copy(), radius=radius)


def sample_affine(rng: np.random.Generator) -> np.ndarray:
    """Rotation x shear x per-axis scale, acting on (x, y) column vectors."""
    theta = rng.uniform(0.0, 2.0 * math.pi)
    sx, sy = rng.uniform(0.6, 1.4, size=2)
    shear = rng.uniform(-0.3, 0.3)
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    return rot @ np.array([[1.0, shear], [0.0, 1.0]]) @ np.diag([sx, sy])


def apply_affine(mask: LesionPatch, matrix: np.ndarray) -> LesionPatch:
    """Warp ``mask`` about its centre by ``matrix`` and crop tight to the support."""
    h, w = mask.values.shape
    matrix = np.asarray(matrix, dtype=np.float64)
    corners = np.array([[-w / 2, -h / 2], [w / 2, -h / 2], [-w / 2, h / 2], [w / 2, h / 2]]).T
    mapped = matrix @ corners
    out_w = max(1, math.ceil(np.ptp(mapped[0]) - 1e-9))
    out_h = max(1, math.ceil(np.ptp(mapped[1]) - 1e-9))
    inv = np.linalg.inv(matrix)
    px, py = np.meshgrid(np.arange(out_w) - (out_w - 1) / 2, np.arange(out_h) - (out_h - 1) / 2)
    qx = inv[0, 0] * px + inv[0, 1] * py + (w - 1) / 2
    qy = inv[1, 0] * px + inv[1, 1] * py + (h - 1) / 2
    # snap float dust so axis-aligned maps land exactly on pixel centres
    for q in (qx, qy):
        near = np.abs(q - np.round(q)) < 1e-9
        q[near] = np.round(q[near])
    values = np.clip(bilinear_sample(mask.values, qx, qy), 0.0, 1.0)
    return _crop_to_support(values, values > 0, mask.radius)


def _connected(support: np.ndarray) -> bool:
    _, n = ndimage.label(support)
    return n == 1


def random_affine(mask: LesionPatch, seed: int, matrix: Optional[np.ndarray] = None) -> LesionPatch:
    """Randomly rotate, shear and scale ``mask``.

    ``matrix`` forces a specific transform (used by tests).  Transforms that
    are near-singular or that split the support are redrawn; after
    ``MAX_AFFINE_TRIES`` failures the identity is used.
    """
    if not mask.support.any():
        raise ParameterError("cannot deform an empty mask")
    if matrix is not None:
        return apply_affine(mask, matrix)
    rng = generator(seed, 0xAFF1)
    for _ in range(MAX_AFFINE_TRIES):
        m = sample_affine(rng)
        if abs(np.linalg.det(m)) < MIN_DETERMINANT:
            continue
        out = apply_affine(mask, m)
        if _connected(out.support):
            return out
    return apply_affine(mask, np.eye(2))


def sample_radius(radius_range: tuple[int, int], rng_seed: int) -> int:
    """Integer radius drawn uniformly from the closed range."""
    lo, hi = radius_range
    return int(generator(rng_seed, 0x1E51).integers(lo, hi + 1))


NoiseFn = Callable[[int, int], np.ndarray]


def make_lesion(params: LesionParams, rng_seed: int, noise_fn: Optional[NoiseFn] = None) -> LesionPatch:
    """Build one pseudo lesion.

    The fractal noise is generated at its canonical grid size, normalised,
    resized to the deformed mask and multiplied into it.  ``noise_fn(h, w)``
    replaces the resized noise when given.
    """
    r = sample_radius(params.radius_range, rng_seed)
    mask = smoothed_circle_mask(r, params.smoothness_alpha)
    deformed = random_affine(mask, mix(params.affine_seed, rng_seed))
    h, w = deformed.values.shape
    if noise_fn is None:
        noise_params = dataclasses.replace(params.noise, seed=mix(params.noise.seed, rng_seed, 2))
        size = noise_params.canonical_size()
        noise = resize_bilinear(normalize_field(fractal_perlin2d(size, size, noise_params)), h, w)
    else:
        noise = np.asarray(noise_fn(h, w), dtype=np.float64)
    values = np.clip(deformed.values * noise, 0.0, 1.0)
    return LesionPatch(values, deformed.support.copy(), radius=r)
