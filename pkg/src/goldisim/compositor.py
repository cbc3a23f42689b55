"""Lesion placement, Beer-Lambert insertion, phantom normals and dataset assembly.

Images are ``uint8`` arrays of shape ``(height, width)``.  Coordinates follow
image convention: ``x`` is the column, ``y`` the row.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ParameterError
from .lesion import LesionParams, LesionPatch, make_lesion
from .perlin import FractalNoiseParams, gradient_noise
from .rng import generator, mix

V_MAX = 255
REFERENCE_CANVAS = 1024
REFERENCE_MARGIN = 240
REFERENCE_RADIUS = (20, 75)
NOISE_OCTAVES = 5

# (name, lower, upper, discrete)
SIM_RANGES = (
    ("persistence", 0.2, 1.0, False),
    ("lacunarity", 2.0, 4.0, False),
    ("res", 2, 5, True),
    ("alpha", 0.2, 0.8, False),
    ("beta", 0.1, 1.0, False),
)


@dataclass(frozen=True)
class BoundingBox:
    x: int
    y: int
    w: int
    h: int
    evaluable: bool = True

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ParameterError(f"box extent must be >= 1, got {self.w}x{self.h}")

    @property
    def area(self) -> int:
        return self.w * self.h

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h, "evaluable": self.evaluable}

    @classmethod
    def from_dict(cls, d: dict) -> "BoundingBox":
        return cls(int(d["x"]), int(d["y"]), int(d["w"]), int(d["h"]), bool(d.get("evaluable", True)))


@dataclass(frozen=True)
class SimParams:
    """One simulator configuration: noise shape, edge smoothness and whiteness."""

    persistence: float = 0.5
    lacunarity: float = 2.0
    res: int = 3
    alpha: float = 0.5
    beta: float = 0.5

    def __post_init__(self):
        for name, lo, hi, discrete in SIM_RANGES:
            v = getattr(self, name)
            if not (lo <= v <= hi) or (discrete and int(v) != v):
                raise ParameterError(f"{name}={v!r} outside [{lo}, {hi}]")

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, name) for name, *_ in SIM_RANGES)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimParams":
        known = {name for name, *_ in SIM_RANGES}
        extra = set(d) - known
        if extra:
            raise ParameterError(f"unknown simulator parameter(s): {sorted(extra)}")
        kw = {}
        for name, lo, hi, discrete in SIM_RANGES:
            if name in d:
                try:
                    kw[name] = int(d[name]) if discrete else float(d[name])
                except (TypeError, ValueError):
                    raise ParameterError(f"malformed value for {name}: {d[name]!r}") from None
        return cls(**kw)

    @classmethod
    def uniform(cls, rng: np.random.Generator) -> "SimParams":
        kw = {}
        for name, lo, hi, discrete in SIM_RANGES:
            kw[name] = int(rng.integers(lo, hi + 1)) if discrete else float(rng.uniform(lo, hi))
        return cls(**kw)

    def lesion_params(self, canvas: int, seed: int = 0) -> LesionParams:
        """Lesion configuration for a canvas whose short side is ``canvas`` pixels."""
        s = canvas / REFERENCE_CANVAS
        rmin = max(1, round(REFERENCE_RADIUS[0] * s))
        rmax = max(rmin, round(REFERENCE_RADIUS[1] * s))
        noise = FractalNoiseParams(self.persistence, self.lacunarity, int(self.res), NOISE_OCTAVES, seed)
        return LesionParams((rmin, rmax), self.alpha, noise, affine_seed=seed)


@dataclass(frozen=True)
class LocationConfig:
    margin: Optional[int] = None  # None: scale the reference 240 px to the canvas
    initial_threshold: int = 90
    max_iteration: int = 20
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.initial_threshold <= V_MAX):
            raise ParameterError(f"threshold must lie in [0, 255], got {self.initial_threshold}")
        if self.max_iteration < 1:
            raise ParameterError("max_iteration must be >= 1")

    def margin_for(self, width: int, height: int) -> int:
        if self.margin is not None:
            return self.margin
        return round(REFERENCE_MARGIN * min(width, height) / REFERENCE_CANVAS)


@dataclass(frozen=True)
class LocationResult:
    x: int
    y: int
    evaluations: int
    threshold: int
    mean: float


def _top_left(center: tuple[int, int], lesion: LesionPatch) -> tuple[int, int]:
    x, y = center
    return x - lesion.width // 2, y - lesion.height // 2


def locate(image: np.ndarray, lesion: LesionPatch, config: LocationConfig = LocationConfig()) -> LocationResult:
    """Adaptive-threshold search for a dark enough insertion site.

    A candidate centre is drawn uniformly inside the margins and accepted when
    the mean image intensity under the lesion support is at most the current
    threshold.  Every ``max_iteration`` rejections raise the threshold by one,
    so the search ends once it reaches 255 at the latest.
    """
    height, width = image.shape
    m = config.margin_for(width, height)
    if 2 * m >= min(width, height):
        raise ParameterError(f"margin {m} leaves no admissible region in a {width}x{height} image")
    need_x = lesion.width - lesion.width // 2
    need_y = lesion.height - lesion.height // 2
    if need_x > m or need_y > m:
        raise ParameterError(
            f"lesion {lesion.width}x{lesion.height} does not fit inside margin {m}"
        )
    rng = generator(config.seed, 0x10CA7E)
    support = lesion.support
    threshold = config.initial_threshold
    rejected = 0
    evaluations = 0
    img = image.astype(np.float64)
    while True:
        x = int(rng.integers(m, width - m + 1))
        y = int(rng.integers(m, height - m + 1))
        left, top = _top_left((x, y), lesion)
        region = img[top:top + lesion.height, left:left + lesion.width]
        mean = float(region[support].mean())
        evaluations += 1
        if mean <= threshold:
            return LocationResult(x, y, evaluations, threshold, mean)
        rejected += 1
        if rejected >= config.max_iteration:
            threshold += 1
            rejected = 0


def decide_location(image: np.ndarray, lesion: LesionPatch, config: LocationConfig = LocationConfig()) -> tuple[int, int]:
    res = locate(image, lesion, config)
    return res.x, res.y


def blend(v_in, v_noise, beta):
    """Beer-Lambert composite of a normalised lesion onto an 8-bit pixel value."""
    scaled = beta * np.asarray(v_noise, dtype=np.float64)
    return np.asarray(v_in, dtype=np.float64) * (1.0 - scaled) + V_MAX * scaled


def round_half_up(v) -> np.ndarray:
    return np.floor(np.asarray(v, dtype=np.float64) + 0.5)


def insert_lesion(image: np.ndarray, lesion: LesionPatch, center: tuple[int, int], beta: float) -> np.ndarray:
    """Return a copy of ``image`` with ``lesion`` composited at ``center``."""
    if not (0.0 <= beta <= 1.0):
        raise ParameterError(f"beta must lie in [0, 1], got {beta}")
    height, width = image.shape
    left, top = _top_left(center, lesion)
    if left < 0 or top < 0 or left + lesion.width > width or top + lesion.height > height:
        raise ParameterError(f"lesion at {center} falls outside the {width}x{height} image")
    out = image.copy()
    region = out[top:top + lesion.height, left:left + lesion.width]
    sup = lesion.support
    composite = round_half_up(blend(region[sup], lesion.values[sup], beta))
    region[sup] = np.clip(composite, 0, V_MAX).astype(np.uint8)
    return out


def placed_box(lesion: LesionPatch, center: tuple[int, int]) -> BoundingBox:
    """Tight box around the lesion support once placed at ``center``."""
    left, top = _top_left(center, lesion)
    rows = np.flatnonzero(lesion.support.any(axis=1))
    cols = np.flatnonzero(lesion.support.any(axis=0))
    return BoundingBox(
        left + int(cols[0]), top + int(rows[0]),
        int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1), True,
    )


def _texture(width: int, height: int, seed: int, base_periods: int = 3, octaves: int = 3) -> np.ndarray:
    total = np.zeros((height, width))
    amp = 1.0
    for i in range(octaves):
        p = base_periods * 2 ** i
        total += amp * gradient_noise(width, height, p, p, mix(seed, i))
        amp *= 0.5
    return total / (2.0 - 2.0 ** (1 - octaves))


def phantom_normal(width: int, height: int, seed: int) -> np.ndarray:
    """Crude chest-radiograph stand-in: two dark lung ellipses on a lighter body."""
    if width < 64 or height < 64:
        raise ParameterError(f"phantom needs at least 64x64 pixels, got {width}x{height}")
    rng = generator(seed, 0xC4E57)
    tex = _texture(width, height, mix(seed, 1))
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    body = 170.0 + 25.0 * tex
    lungs = 60.0 + 20.0 * _texture(width, height, mix(seed, 2), base_periods=4)
    weight = np.zeros((height, width))
    for side in (0.3, 0.7):
        cx = width * (side + rng.uniform(-0.02, 0.02))
        cy = height * (0.5 + rng.uniform(-0.03, 0.03))
        ax = width * 0.13 * (1.0 + rng.uniform(-0.1, 0.1))
        ay = height * 0.30 * (1.0 + rng.uniform(-0.1, 0.1))
        rho = np.sqrt(((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2)
        weight = np.maximum(weight, np.clip((1.0 - rho) / 0.15, 0.0, 1.0))
    img = body * (1.0 - weight) + lungs * weight
    return np.clip(round_half_up(img), 0, V_MAX).astype(np.uint8)


@dataclass
class AnnotatedImage:
    index: int
    image: np.ndarray
    boxes: list[BoundingBox]
    phi: Optional[SimParams] = None
    name: str = ""
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_evaluable(self) -> int:
        return sum(b.evaluable for b in self.boxes)


@dataclass
class AnnotatedDataset:
    images: list[AnnotatedImage] = field(default_factory=list)
    seed: int = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.images)

    def __iter__(self):
        return iter(self.images)

    def __getitem__(self, i):
        return self.images[i]

    @property
    def n_evaluable(self) -> int:
        return sum(im.n_evaluable for im in self.images)

    def merged(self, other: "AnnotatedDataset") -> "AnnotatedDataset":
        return AnnotatedDataset(list(self.images) + list(other.images), self.seed)


def synthesize(normal: np.ndarray, phi: SimParams, seed: int, lesions_per_image: int = 1,
               location: LocationConfig = LocationConfig()) -> tuple[np.ndarray, list[BoundingBox]]:
    """Insert ``lesions_per_image`` lesions drawn with ``phi`` into one normal image."""
    img = np.asarray(normal, dtype=np.uint8)
    canvas = min(img.shape)
    boxes = []
    for j in range(lesions_per_image):
        lesion_seed = mix(seed, j)
        lesion = make_lesion(phi.lesion_params(canvas, lesion_seed), lesion_seed)
        loc_cfg = LocationConfig(location.margin, location.initial_threshold,
                                 location.max_iteration, mix(lesion_seed, 0x70C))
        center = decide_location(img, lesion, loc_cfg)
        img = insert_lesion(img, lesion, center, phi.beta)
        boxes.append(placed_box(lesion, center))
    return img, boxes


def worker_count() -> int:
    import os

    raw = os.environ.get("GOLDISIM_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


def generate_dataset(normals: Sequence[np.ndarray], phi: Optional[SimParams], lesions_per_image: int = 1,
                     seed: int = 0, indices: Optional[Iterable[int]] = None,
                     workers: Optional[int] = None) -> AnnotatedDataset:
    """Turn normal images into annotated abnormal images.

    ``phi=None`` draws an independent uniform simulator configuration per
    image.  Image ``i`` depends only on ``(seed, i)``, so ``indices`` may list
    the images in any order and the result is the same after sorting.
    """
    if lesions_per_image < 1:
        raise ParameterError("lesions_per_image must be >= 1")
    order = list(range(len(normals))) if indices is None else list(indices)

    def build(i: int) -> AnnotatedImage:
        image_seed = mix(seed, i)
        p = phi if phi is not None else SimParams.uniform(generator(image_seed, 0xF1))
        img, boxes = synthesize(normals[i], p, image_seed, lesions_per_image)
        return AnnotatedImage(i, img, boxes, p, name=f"abnormal_{i:05d}.pgm")

    n_workers = workers if workers is not None else worker_count()
    if n_workers > 1 and len(order) > 1:
        with ThreadPoolExecutor(n_workers) as pool:
            items = list(pool.map(build, order))
    else:
        items = [build(i) for i in order]
    return AnnotatedDataset(items, seed)
