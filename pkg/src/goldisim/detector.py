"""Toy sliding-window lesion detector.

A linear logistic scorer over seven hand-made window features stands in for
a convolutional detector.  Window features do not depend on the weights, so
they are computed once per image and cached on the dataset items.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .compositor import AnnotatedImage, BoundingBox
from .errors import DataShapeError, ParameterError
from .metrics import Prediction
from .rng import generator

FEATURE_VERSION = 1
N_FEATURES = 7
BASE_SIDES = (24, 40, 64)
BASE_CANVAS = 256
SCORE_FLOOR = 0.05
NMS_OVERLAP = 0.3
POS_DICE = 0.5
NEG_DICE = 0.1
POSITIVES_PER_GT = 4
NEG_PER_POS = 3


@dataclass
class DetectorParams:
    weights: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if self.weights.shape != (N_FEATURES,):
            raise ParameterError(f"expected {N_FEATURES} weights, got {self.weights.shape}")
        if not (np.all(np.isfinite(self.weights)) and np.isfinite(self.bias)):
            raise ParameterError("detector parameters must be finite")
        self.bias = float(self.bias)

    @classmethod
    def zeros(cls, bias: float = 0.0) -> "DetectorParams":
        return cls(np.zeros(N_FEATURES), bias)

    @classmethod
    def from_vector(cls, theta) -> "DetectorParams":
        theta = np.asarray(theta, dtype=np.float64)
        return cls(theta[:-1].copy(), float(theta[-1]))

    def vector(self) -> np.ndarray:
        return np.append(self.weights, self.bias)

    def digest(self) -> str:
        return hashlib.sha256(self.vector().astype("<f8").tobytes()).hexdigest()[:16]

    def to_json(self) -> dict:
        return {"weights": [float(w) for w in self.weights], "bias": self.bias,
                "feature_version": FEATURE_VERSION}

    @classmethod
    def from_json(cls, d: dict) -> "DetectorParams":
        if d.get("feature_version", FEATURE_VERSION) != FEATURE_VERSION:
            raise DataShapeError(f"unsupported feature_version {d.get('feature_version')}")
        return cls(d["weights"], d["bias"])


def save_checkpoint(path, params: DetectorParams) -> None:
    with open(path, "w") as f:
        json.dump(params.to_json(), f, sort_keys=True)
        f.write("\n")


def load_checkpoint(path) -> DetectorParams:
    with open(path) as f:
        return DetectorParams.from_json(json.load(f))


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def _integral(a: np.ndarray) -> np.ndarray:
    out = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    out[1:, 1:] = a.cumsum(0).cumsum(1)
    return out


def _box_sum(ii: np.ndarray, x0, y0, x1, y1):
    return ii[y1, x1] - ii[y0, x1] - ii[y1, x0] + ii[y0, x0]


def window_features(image: np.ndarray, windows: np.ndarray) -> np.ndarray:
    """Features for ``windows`` given as rows ``(x, y, w, h)``.

    Columns: mean, std, centre-minus-surround contrast, four quadrant means.
    Intensities are scaled by 1/255; the surround is the ring obtained by
    growing the window by half its size on each side, clipped to the image.
    """
    img = np.asarray(image, dtype=np.float64) / 255.0
    H, W = img.shape
    win = np.asarray(windows, dtype=np.intp).reshape(-1, 4)
    x, y, w, h = win.T
    if np.any(x < 0) | np.any(y < 0) | np.any(x + w > W) | np.any(y + h > H) | np.any(w < 1) | np.any(h < 1):
        raise ParameterError("window outside image bounds")
    ii = _integral(img)
    ii2 = _integral(img * img)
    area = (w * h).astype(np.float64)
    s1 = _box_sum(ii, x, y, x + w, y + h)
    s2 = _box_sum(ii2, x, y, x + w, y + h)
    mean = s1 / area
    std = np.sqrt(np.maximum(s2 / area - mean * mean, 0.0))
    gx0 = np.maximum(x - w // 2, 0)
    gy0 = np.maximum(y - h // 2, 0)
    gx1 = np.minimum(x + w + w // 2, W)
    gy1 = np.minimum(y + h + h // 2, H)
    ring_area = (gx1 - gx0) * (gy1 - gy0) - area
    ring_sum = _box_sum(ii, gx0, gy0, gx1, gy1) - s1
    safe = np.where(ring_area > 0, ring_area, 1.0)
    contrast = np.where(ring_area > 0, mean - ring_sum / safe, 0.0)
    hw = np.maximum(w // 2, 1)
    hh = np.maximum(h // 2, 1)
    quads = []
    for qx0, qy0, qx1, qy1 in (
        (x, y, x + hw, y + hh),
        (x + hw, y, x + w, y + hh),
        (x, y + hh, x + hw, y + h),
        (x + hw, y + hh, x + w, y + h),
    ):
        qa = (qx1 - qx0) * (qy1 - qy0)
        qs = _box_sum(ii, qx0, qy0, qx1, qy1)
        quads.append(np.where(qa > 0, qs / np.maximum(qa, 1), mean))
    return np.column_stack([mean, std, contrast] + quads)


def extract_features(image: np.ndarray, window: BoundingBox) -> np.ndarray:
    return window_features(image, np.array([[window.x, window.y, window.w, window.h]]))[0]


def window_grid(height: int, width: int) -> np.ndarray:
    """Square windows at three scales; stride is a quarter of the side."""
    scale = min(height, width) / BASE_CANVAS
    rows = []
    for base in BASE_SIDES:
        side = max(4, int(round(base * scale)))
        if side > min(height, width):
            continue
        stride = max(1, side // 4)
        ys = np.arange(0, height - side + 1, stride)
        xs = np.arange(0, width - side + 1, stride)
        gy, gx = np.meshgrid(ys, xs, indexing="ij")
        n = gx.size
        rows.append(np.column_stack([gx.ravel(), gy.ravel(), np.full(n, side), np.full(n, side)]))
    if not rows:
        return np.zeros((0, 4), dtype=np.intp)
    return np.concatenate(rows).astype(np.intp)


def _image_bank(item) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(item, AnnotatedImage):
        bank = item._cache.get("bank")
        if bank is None:
            win = window_grid(*item.image.shape)
            bank = (win, window_features(item.image, win))
            item._cache["bank"] = bank
        return bank
    img = np.asarray(item)
    win = window_grid(*img.shape)
    return win, window_features(img, win)


def nms(windows: np.ndarray, scores: np.ndarray, overlap: float = NMS_OVERLAP) -> list[int]:
    """Greedy suppression on intersection over the smaller area.

    Equal scores keep the earlier window in scan order.
    """
    order = np.argsort(-scores, kind="stable")
    x0 = windows[:, 0].astype(np.float64)
    y0 = windows[:, 1].astype(np.float64)
    x1 = x0 + windows[:, 2]
    y1 = y0 + windows[:, 3]
    area = windows[:, 2].astype(np.float64) * windows[:, 3]
    keep = []
    while order.size:
        i = order[0]
        keep.append(int(i))
        rest = order[1:]
        iw = np.minimum(x1[i], x1[rest]) - np.maximum(x0[i], x0[rest])
        ih = np.minimum(y1[i], y1[rest]) - np.maximum(y0[i], y0[rest])
        inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
        ov = inter / np.minimum(area[i], area[rest])
        order = rest[ov <= overlap]
    return keep


def detect(params: DetectorParams, image) -> list[Prediction]:
    """Score every grid window, drop scores below 0.05, then apply NMS."""
    win, feats = _image_bank(image)
    if win.shape[0] == 0:
        return []
    scores = sigmoid(feats @ params.weights + params.bias)
    live = np.flatnonzero(scores >= SCORE_FLOOR)
    if live.size == 0:
        return []
    kept = nms(win[live], scores[live])
    out = []
    for k in kept:
        x, y, w, h = (int(v) for v in win[live[k]])
        out.append(Prediction(BoundingBox(x, y, w, h, True), float(scores[live[k]])))
    return out


def _box_dice(win: np.ndarray, b: BoundingBox) -> np.ndarray:
    iw = np.minimum(win[:, 0] + win[:, 2], b.x + b.w) - np.maximum(win[:, 0], b.x)
    ih = np.minimum(win[:, 1] + win[:, 3], b.y + b.h) - np.maximum(win[:, 1], b.y)
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    return 2.0 * inter / (win[:, 2] * win[:, 3] + b.w * b.h)


@dataclass
class WindowSamples:
    X: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.y)

    def augmented(self) -> np.ndarray:
        return np.column_stack([self.X, np.ones(len(self.y))])


def _image_samples(item: AnnotatedImage, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    win, feats = _image_bank(item)
    H, W = item.image.shape
    pos_rows, neg_pool = [], np.ones(len(win), dtype=bool)
    extra_windows = []
    for b in item.boxes:
        d = _box_dice(win, b)
        neg_pool &= d < NEG_DICE
        cand = list(np.flatnonzero(d >= POS_DICE))
        side = int(round(np.sqrt(b.w * b.h)))
        side = max(1, min(side, H, W))
        cx, cy = b.x + b.w / 2.0, b.y + b.h / 2.0
        sx = int(np.clip(round(cx - side / 2.0), 0, W - side))
        sy = int(np.clip(round(cy - side / 2.0), 0, H - side))
        centred = np.array([[sx, sy, side, side]])
        if not b.evaluable:
            continue
        if _box_dice(centred, b)[0] >= POS_DICE:
            extra_windows.append(centred[0])
            cand.append(-len(extra_windows))
        if cand:
            take = rng.choice(len(cand), size=min(POSITIVES_PER_GT, len(cand)), replace=False)
            pos_rows.extend(cand[t] for t in sorted(take))
    pos_feats = []
    if extra_windows:
        extra_feats = window_features(item.image, np.array(extra_windows))
    for r in pos_rows:
        pos_feats.append(feats[r] if r >= 0 else extra_feats[-r - 1])
    n_neg = NEG_PER_POS * max(len(pos_feats), 1)
    pool = np.flatnonzero(neg_pool)
    neg = pool[rng.choice(len(pool), size=min(n_neg, len(pool)), replace=False)] if len(pool) else []
    X = np.array(pos_feats + [feats[i] for i in np.sort(neg)]).reshape(-1, N_FEATURES)
    y = np.concatenate([np.ones(len(pos_feats)), np.zeros(len(X) - len(pos_feats))])
    return X, y


def window_samples(dataset, seed: Optional[int] = None) -> WindowSamples:
    """Labelled windows: positives at dice >= 0.5 with a ground truth, three
    negatives (dice < 0.1 to every box) per positive.

    The draw is seeded from the dataset, so repeated calls agree.
    """
    if isinstance(dataset, WindowSamples):
        return dataset
    seed = dataset.seed if seed is None else seed
    key = ("samples", seed)
    if key in dataset._cache:
        return dataset._cache[key]
    Xs, ys = [], []
    for item in dataset:
        X, y = _image_samples(item, generator(seed, 0x5A3, item.index))
        Xs.append(X)
        ys.append(y)
    if not Xs or sum(len(y) for y in ys) == 0:
        raise ParameterError("dataset yields no labelled windows")
    out = WindowSamples(np.concatenate(Xs), np.concatenate(ys))
    dataset._cache[key] = out
    return out
