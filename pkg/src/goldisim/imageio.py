"""PGM/PNG raster I/O and JSON Lines annotation files."""

from __future__ import annotations

import json
import os
import re
from pathlib import Path
from typing import Iterable

import numpy as np

from .compositor import AnnotatedDataset, AnnotatedImage, BoundingBox
from .errors import DataIOError, DataShapeError

_PGM_HEADER = re.compile(rb"P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def write_pgm(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise DataShapeError(f"PGM export needs a 2-D uint8 array, got {img.dtype} {img.shape}")
    h, w = img.shape
    try:
        with open(path, "wb") as f:
            f.write(b"P5\n%d %d\n255\n" % (w, h))
            f.write(np.ascontiguousarray(img).tobytes())
    except OSError as e:
        raise DataIOError(f"{path}: {e.strerror or e}") from e


def read_pgm(path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise DataIOError(f"{path}: {e.strerror or e}") from e
    m = _PGM_HEADER.match(data)
    if not m:
        raise DataShapeError(f"{path}: not a binary PGM (P5) file")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise DataShapeError(f"{path}: only maxval 255 is supported, got {maxval}")
    body = data[m.end():m.end() + w * h]
    if len(body) != w * h:
        raise DataShapeError(f"{path}: truncated pixel data")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()


def write_png(path, image: np.ndarray) -> None:
    from PIL import Image

    try:
        Image.fromarray(np.asarray(image, dtype=np.uint8), mode="L").save(path, format="PNG")
    except OSError as e:
        raise DataIOError(f"{path}: {e}") from e


def read_png(path) -> np.ndarray:
    from PIL import Image

    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("L"), dtype=np.uint8).copy()
    except OSError as e:
        raise DataIOError(f"{path}: {e}") from e


def read_image(path) -> np.ndarray:
    return read_png(path) if str(path).lower().endswith(".png") else read_pgm(path)


def write_image(path, image: np.ndarray) -> None:
    (write_png if str(path).lower().endswith(".png") else write_pgm)(path, image)


def list_images(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise DataIOError(f"{d}: not a directory")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in (".pgm", ".png"))


def load_images(directory) -> list[np.ndarray]:
    return [read_image(p) for p in list_images(directory)]


def annotation_record(image_path: str, boxes: Iterable[BoundingBox]) -> dict:
    return {"image": image_path, "boxes": [b.to_dict() for b in boxes]}


def write_jsonl(path, records: Iterable[dict]) -> None:
    try:
        with open(path, "w", encoding="utf-8") as f:
            for rec in records:
                f.write(json.dumps(rec, sort_keys=True) + "\n")
    except OSError as e:
        raise DataIOError(f"{path}: {e.strerror or e}") from e


def read_jsonl(path) -> list[dict]:
    try:
        with open(path, encoding="utf-8") as f:
            lines = [ln for ln in f if ln.strip()]
    except OSError as e:
        raise DataIOError(f"{path}: {e.strerror or e}") from e
    out = []
    for n, ln in enumerate(lines, 1):
        try:
            out.append(json.loads(ln))
        except json.JSONDecodeError as e:
            raise DataShapeError(f"{path}:{n}: malformed JSON ({e.msg})") from e
    return out


def save_dataset(dataset: AnnotatedDataset, out_dir, annotations: str = "annotations.jsonl") -> Path:
    """Write every image as PGM next to a JSONL annotation file; returns its path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for item in dataset:
        name = item.name or f"abnormal_{item.index:05d}.pgm"
        write_image(out / name, item.image)
        rec = annotation_record(name, item.boxes)
        if item.phi is not None:
            rec["phi"] = item.phi.to_dict()
        records.append(rec)
    ann = out / annotations
    write_jsonl(ann, records)
    return ann


def load_dataset(annotation_path) -> AnnotatedDataset:
    """Read a JSONL annotation file; image paths resolve relative to it."""
    from .compositor import SimParams

    ann = Path(annotation_path)
    if not ann.exists():
        raise DataIOError(f"{ann}: annotation file not found")
    items = []
    for i, rec in enumerate(read_jsonl(ann)):
        if "image" not in rec or "boxes" not in rec:
            raise DataShapeError(f"{ann}: record {i} lacks 'image' or 'boxes'")
        img = read_image(ann.parent / rec["image"])
        boxes = [BoundingBox.from_dict(b) for b in rec["boxes"]]
        phi = SimParams.from_dict(rec["phi"]) if "phi" in rec else None
        items.append(AnnotatedImage(i, img, boxes, phi, name=os.fspath(rec["image"])))
    return AnnotatedDataset(items)
