"""Dataset loading, preprocessing and the synthetic toy dataset.

The raster-to-+-1 pipeline must stay in lockstep with the inference
engine's preprocessing (BT.601 luminance, half-pixel bilinear resize,
divide by 255, threshold at 0.5): a checkpoint is only as good as the
agreement between the tensors it was trained on and the tensors the
deployed engine will see.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

LUMINANCE = (0.299, 0.587, 0.114)
THRESHOLD = 0.5


def _resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img
    ys = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bottom = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bottom * wy


def binarize_image(image: np.ndarray, target_size: tuple[int, int]) -> np.ndarray:
    """8-bit raster -> (1, H, W) float32 array of +-1."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 3:
        arr = arr @ np.asarray(LUMINANCE)
    arr = _resize_bilinear(arr, target_size[0], target_size[1])
    signs = np.where(arr / 255.0 >= THRESHOLD, 1.0, -1.0)
    return signs[None, :, :].astype(np.float32)


def read_manifest(path) -> list[tuple[Path, int]]:
    manifest = Path(path)
    rows = []
    with manifest.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["path", "label"]:
            raise ValueError("manifest must have a `path,label` header")
        for record in reader:
            rows.append((manifest.parent / record["path"], int(record["label"])))
    if not rows:
        raise ValueError(f"manifest {manifest} has no rows")
    return rows


@dataclass
class SplitData:
    images: np.ndarray  # (N, 1, H, W) float32 of +-1
    labels: np.ndarray  # (N,) int64


def _load_raster(path) -> np.ndarray:
    with Image.open(path) as img:
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB")
        return np.asarray(img, dtype=np.uint8)


def load_split(manifest, target_size: tuple[int, int]) -> SplitData:
    rows = read_manifest(manifest)
    images = np.stack([binarize_image(_load_raster(p), target_size) for p, _ in rows])
    labels = np.asarray([label for _, label in rows], dtype=np.int64)
    return SplitData(images, labels)


def manifest_from_directory(root, out) -> Path:
    """Write a `path,label` manifest for a directory-per-class image tree.

    Sorted subdirectory names map to labels 0..n-1, the same convention the
    inference engine uses.
    """
    root = Path(root)
    out = Path(out)
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise ValueError(f"no class directories under {root}")
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "label"])
        for label, class_dir in enumerate(class_dirs):
            for img in sorted(class_dir.iterdir()):
                if img.is_file():
                    rel = os.path.relpath(img.resolve(), out.parent.resolve())
                    writer.writerow([rel, label])
    return out


# ---------------------------------------------------------------------------
# toy dataset: three stripe orientations with pixel-flip noise


def _toy_pattern(cls: int, size: tuple[int, int], phase: int) -> np.ndarray:
    h, w = size
    yy, xx = np.mgrid[0:h, 0:w]
    half_period = 3
    if cls == 0:
        base = ((xx + phase) // half_period) % 2
    elif cls == 1:
        base = ((yy + phase) // half_period) % 2
    else:
        base = ((xx + yy + phase) // half_period) % 2
    return (base * 255).astype(np.uint8)


def make_toy_dataset(
    root,
    per_class: int = 100,
    size: tuple[int, int] = (24, 24),
    noise: float = 0.25,
    test_fraction: float = 0.25,
    seed: int = 0,
) -> tuple[Path, Path]:
    """Write PNGs plus train/test manifests; returns the two manifest paths."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    for cls in range(3):
        for i in range(per_class):
            img = _toy_pattern(cls, size, phase=int(rng.integers(0, 6)))
            flip = rng.random(size) < noise
            img = np.where(flip, 255 - img, img).astype(np.uint8)
            name = f"c{cls}_{i:04d}.png"
            Image.fromarray(img, mode="L").save(root / name)
            rows.append((name, cls))
    rng.shuffle(rows)
    split = int(len(rows) * (1 - test_fraction))
    train_manifest = root / "train.csv"
    test_manifest = root / "test.csv"
    for path, chunk in ((train_manifest, rows[:split]), (test_manifest, rows[split:])):
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["path", "label"])
            writer.writerows(chunk)
    return train_manifest, test_manifest
