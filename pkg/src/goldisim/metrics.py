"""Free-response evaluation: dice matching, FROC curves, FAUC, CPM and TPR@FPI."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .compositor import BoundingBox
from .errors import MetricUndefinedError

MATCH_DICE = 0.2
CPM_FPI = (0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0)

TP, FP, IGNORED = "tp", "fp", "ignored"


@dataclass(frozen=True)
class Prediction:
    box: BoundingBox
    confidence: float

    def to_dict(self) -> dict:
        d = self.box.to_dict()
        d.pop("evaluable")
        d["confidence"] = self.confidence
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Prediction":
        return cls(BoundingBox(int(d["x"]), int(d["y"]), int(d["w"]), int(d["h"])), float(d["confidence"]))


@dataclass
class FrocCurve:
    """Vertices ``(threshold, fp_per_image, tpr)`` ordered by decreasing threshold."""

    points: list[tuple[float, float, float]] = field(default_factory=list)
    n_images: int = 0
    n_evaluable_gt: int = 0

    @property
    def fp_per_image(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    @property
    def tpr(self) -> np.ndarray:
        return np.array([p[2] for p in self.points])

    @classmethod
    def from_xy(cls, fpi: Sequence[float], tpr: Sequence[float]) -> "FrocCurve":
        """Build a curve directly from vertex coordinates (thresholds are synthetic)."""
        n = len(fpi)
        return cls([(float(n - i), float(f), float(t)) for i, (f, t) in enumerate(zip(fpi, tpr))])


def dice(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    inter = max(iw, 0) * max(ih, 0)
    return 2.0 * inter / (a.area + b.area)


def ranked(preds: Sequence[Prediction]) -> list[Prediction]:
    """Descending confidence; ties broken by box x, then y."""
    return sorted(preds, key=lambda p: (-p.confidence, p.box.x, p.box.y))


def classify(preds: Sequence[Prediction], gts: Sequence[BoundingBox]) -> list[str]:
    """Greedy TP/FP/ignored labels for already-ranked predictions of one image.

    A prediction claims the best-matching unclaimed evaluable ground truth
    (dice >= 0.2).  A match to a claimed or non-evaluable ground truth is
    ignored; no match at all is a false positive.
    """
    claimed = [False] * len(gts)
    labels = []
    for p in preds:
        scores = [dice(p.box, g) for g in gts]
        best, best_score = -1, -1.0
        any_match = False
        for j, (g, s) in enumerate(zip(gts, scores)):
            if s < MATCH_DICE:
                continue
            any_match = True
            if g.evaluable and not claimed[j] and s > best_score:
                best, best_score = j, s
        if best >= 0:
            claimed[best] = True
            labels.append(TP)
        elif any_match:
            labels.append(IGNORED)
        else:
            labels.append(FP)
    return labels


def match_at_threshold(preds_per_image, gts_per_image, threshold: float,
                       inclusive: bool = False) -> tuple[int, int, int]:
    """Count (tp, fp, ignored) over all images for predictions above ``threshold``."""
    tp = fp = ign = 0
    for preds, gts in zip(preds_per_image, gts_per_image):
        kept = [p for p in preds if (p.confidence >= threshold if inclusive else p.confidence > threshold)]
        for lab in classify(ranked(kept), gts):
            tp += lab == TP
            fp += lab == FP
            ign += lab == IGNORED
    return tp, fp, ign


def froc(preds_per_image, gts_per_image, n_images: int | None = None) -> FrocCurve:
    """FROC vertices at every distinct confidence, plus a leading (0, 0) sentinel.

    Greedy matching is prefix-stable in the ranking, so each prediction's
    label is computed once and the sweep accumulates counts.
    """
    n_images = len(gts_per_image) if n_images is None else n_images
    if n_images < 1:
        raise MetricUndefinedError("FROC needs at least one image")
    n_gt = sum(g.evaluable for gts in gts_per_image for g in gts)
    if n_gt == 0:
        raise MetricUndefinedError("FROC is undefined without evaluable ground truth")
    conf, is_tp, is_fp = [], [], []
    for preds, gts in zip(preds_per_image, gts_per_image):
        order = ranked(preds)
        for p, lab in zip(order, classify(order, gts)):
            conf.append(p.confidence)
            is_tp.append(lab == TP)
            is_fp.append(lab == FP)
    points = [(math.inf, 0.0, 0.0)]
    if conf:
        conf = np.asarray(conf)
        idx = np.argsort(-conf, kind="stable")
        conf = conf[idx]
        ctp = np.cumsum(np.asarray(is_tp)[idx])
        cfp = np.cumsum(np.asarray(is_fp)[idx])
        # last position of each distinct confidence
        ends = np.flatnonzero(np.append(conf[1:] != conf[:-1], True))
        for e in ends:
            points.append((float(conf[e]), cfp[e] / n_images, ctp[e] / n_gt))
    return FrocCurve(points, n_images, n_gt)


def interpolate_tpr(curve: FrocCurve, fpi: float) -> float:
    """Piecewise-linear TPR at ``fpi``; beyond the last vertex the final TPR is held."""
    xs, ys = curve.fp_per_image, curve.tpr
    if len(xs) == 0:
        return 0.0
    i = int(np.searchsorted(xs, fpi, side="right")) - 1
    if i < 0:
        return float(ys[0])
    if i == len(xs) - 1:
        return float(ys[-1])
    x0, x1, y0, y1 = xs[i], xs[i + 1], ys[i], ys[i + 1]
    return float(y0 + (y1 - y0) * (fpi - x0) / (x1 - x0))


def fauc(curve: FrocCurve, max_fpi: float = 1.0) -> float:
    """Area under the FROC curve over ``[0, max_fpi]`` FP/image, normalised by ``max_fpi``."""
    xs, ys = curve.fp_per_image, curve.tpr
    if len(xs) == 0:
        return 0.0
    area = 0.0
    for x0, x1, y0, y1 in zip(xs[:-1], xs[1:], ys[:-1], ys[1:]):
        if x0 >= max_fpi:
            break
        if x1 > max_fpi:
            y1 = y0 + (y1 - y0) * (max_fpi - x0) / (x1 - x0)
            x1 = max_fpi
        area += (x1 - x0) * (y0 + y1) / 2.0
    if xs[-1] < max_fpi:
        area += (max_fpi - xs[-1]) * ys[-1]
    return float(area / max_fpi)


def cpm(curve: FrocCurve) -> float:
    return float(np.mean([interpolate_tpr(curve, f) for f in CPM_FPI]))


def tpr_at_fpi(curve: FrocCurve, fpi: float = 0.2) -> float:
    return interpolate_tpr(curve, fpi)


def summary(curve: FrocCurve) -> dict:
    return {
        "fauc": fauc(curve),
        "cpm": cpm(curve),
        "tpr_at_fpi_0.2": tpr_at_fpi(curve, 0.2),
        "n_images": curve.n_images,
        "n_gt": curve.n_evaluable_gt,
    }


def write_froc_csv(path, curve: FrocCurve) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["threshold", "fp_per_image", "tpr"])
        for t, x, y in curve.points:
            w.writerow([repr(float(t)), repr(float(x)), repr(float(y))])


def read_froc_csv(path) -> FrocCurve:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return FrocCurve([(float(r["threshold"]), float(r["fp_per_image"]), float(r["tpr"])) for r in rows])


def froc_svg(curve: FrocCurve, max_fpi: float = 8.0, width: int = 480, height: int = 360,
             title: str = "FROC") -> str:
    """Standalone SVG: FP/image on the horizontal axis, TPR on the vertical."""
    ml, mr, mt, mb = 56, 16, 28, 44
    pw, ph = width - ml - mr, height - mt - mb

    def sx(x):
        return ml + pw * min(x, max_fpi) / max_fpi

    def sy(y):
        return mt + ph * (1.0 - y)

    xs, ys = list(curve.fp_per_image), list(curve.tpr)
    if xs and xs[-1] < max_fpi:
        xs.append(max_fpi)
        ys.append(ys[-1])
    path = " ".join(f"{'M' if i == 0 else 'L'}{sx(x):.2f},{sy(y):.2f}" for i, (x, y) in enumerate(zip(xs, ys)))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>',
    ]
    for k in range(int(max_fpi) + 1):
        x = sx(k)
        parts.append(f'<line x1="{x:.2f}" y1="{mt + ph}" x2="{x:.2f}" y2="{mt + ph + 4}" stroke="black"/>')
        parts.append(f'<text x="{x:.2f}" y="{mt + ph + 16}" text-anchor="middle" font-size="10">{k}</text>')
    for k in range(6):
        y = sy(k / 5)
        parts.append(f'<line x1="{ml - 4}" y1="{y:.2f}" x2="{ml}" y2="{y:.2f}" stroke="black"/>')
        parts.append(f'<text x="{ml - 6}" y="{y + 3:.2f}" text-anchor="end" font-size="10">{k / 5:.1f}</text>')
    parts.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" text-anchor="middle" font-size="12">'
                 'false positives per image</text>')
    parts.append(f'<text x="14" y="{mt + ph / 2:.1f}" text-anchor="middle" font-size="12" '
                 f'transform="rotate(-90 14 {mt + ph / 2:.1f})">TPR</text>')
    if path:
        parts.append(f'<path d="{path}" fill="none" stroke="#1f77b4" stroke-width="2"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
