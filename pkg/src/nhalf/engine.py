"""End-to-end integer-only inference.

The fused forward pass touches nothing but packed bits and small integers:
conv via XNOR/popcount GEMM, integer max pooling, a saturating store into
[-clip, clip] (the 6-bit buffer at clip 31), then per-channel threshold
rules producing the next block's +-1 input. The half block emits raw
integer class scores. An OpCounters instrumented into every kernel proves
the float-operation count stays at zero.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError, NHalfError, ShapeError
from .fusion import BranchMode, apply_rules, fold_bn_prelu, rules_to_arrays
from .kernels import OpCounters, conv_binary, maxpool
from .model import Checkpoint, FusedModel
from .reference import reference_forward
from .tensors import BitTensor, IntTensor, signed_width

BT601_LUMINANCE = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class PreprocessConfig:
    """Raster-to-BitTensor conversion settings."""

    target_size: tuple[int, int] = (48, 48)
    luminance: tuple[float, float, float] = BT601_LUMINANCE
    resize: str = "bilinear"
    threshold: float = 0.5

    def __post_init__(self) -> None:
        if not (0.0 < self.threshold < 1.0):
            raise InputError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.resize not in ("bilinear", "nearest"):
            raise InputError(f"unknown resize method {self.resize!r}")
        if any(v < 1 for v in self.target_size):
            raise InputError("target size extents must be >= 1")


def load_image(path) -> np.ndarray:
    """Decode an 8-bit PNG/PPM raster to (H, W) or (H, W, 3) uint8."""
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as img:
            if img.mode not in ("L", "RGB"):
                img = img.convert("RGB")
            arr = np.asarray(img, dtype=np.uint8)
    except FileNotFoundError as exc:
        raise InputError(f"image not found: {path}") from exc
    except (UnidentifiedImageError, OSError) as exc:
        raise InputError(f"unreadable image {path}: {exc}") from exc
    if arr.size == 0:
        raise InputError(f"empty image: {path}")
    return arr


def _resize(img: np.ndarray, out_h: int, out_w: int, method: str) -> np.ndarray:
    h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img
    # half-pixel-center sampling
    ys = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0, w - 1)
    if method == "nearest":
        return img[np.rint(ys).astype(int)[:, None], np.rint(xs).astype(int)[None, :]]
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bottom = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bottom * wy


def preprocess(image, cfg: PreprocessConfig = PreprocessConfig()) -> BitTensor:
    """Grayscale, resize, scale by 1/255 and binarize to a (1, H, W) BitTensor."""
    if isinstance(image, (str, Path)):
        image = load_image(image)
    arr = np.asarray(image, dtype=np.float64)
    if arr.size == 0:
        raise InputError("empty image")
    if arr.ndim == 3 and arr.shape[2] == 3:
        arr = arr @ np.asarray(cfg.luminance, dtype=np.float64)
    elif arr.ndim != 2:
        raise InputError(f"expected (H, W) or (H, W, 3) raster, got shape {arr.shape}")
    arr = _resize(arr, cfg.target_size[0], cfg.target_size[1], cfg.resize)
    signs = np.where(arr / 255.0 >= cfg.threshold, 1, -1).astype(np.int8)
    return BitTensor.from_signs(signs[None, :, :])


@dataclass(frozen=True)
class ClassScores:
    scores: tuple[int, ...]
    predicted: int
    declared_bits: int

    def top(self, n: int) -> list[tuple[int, int]]:
        """(class, score) pairs, best first, ties broken by lowest class."""
        order = sorted(range(len(self.scores)), key=lambda c: (-self.scores[c], c))
        return [(c, self.scores[c]) for c in order[:n]]


def forward_fused(
    model: FusedModel, input: BitTensor, counters: OpCounters | None = None
) -> ClassScores:
    """Run the integer-only forward pass over all blocks."""
    config = model.config
    expected = (1, *config.input_size)
    if model.plan.blocks[0].in_shape != expected or input.shape.dims != expected:
        raise ShapeError(f"input shape {input.shape.dims} does not match {expected}")
    clip = config.clip
    stored_bits = signed_width(clip)

    x = input
    for i, (spec, block) in enumerate(zip(config.blocks, model.blocks)):
        plan = model.plan.blocks[i]
        if x.shape.dims != plan.in_shape:
            raise ShapeError(f"block {i}: input {x.shape.dims} != planned {plan.in_shape}")
        conv = conv_binary(x, block.weights, spec.geometry(), counters)
        pooled = maxpool(conv, spec.pool_size, spec.pool_stride, counters)
        if conv.values.shape != plan.conv_out or pooled.values.shape != plan.pool_out:
            raise ShapeError(f"block {i}: executed shapes disagree with the plan")
        if spec.kind == "half":
            scores = pooled.values.sum(axis=1)
            if counters is not None:
                counters.int_adds += pooled.values.size
                counters.int_compares += len(scores) - 1
            if counters is not None and counters.float_ops != 0:
                raise NHalfError("fused path performed floating-point work")
            positions = pooled.values.shape[1]
            return ClassScores(
                scores=tuple(int(v) for v in scores),
                predicted=int(np.argmax(scores)),
                declared_bits=signed_width(positions * spec.taps),
            )
        flat = pooled.values.reshape(spec.out_channels, -1)
        staged = np.clip(flat, -clip, clip)
        if counters is not None:
            counters.int_compares += 2 * staged.size
        # the saturating store is the narrow intermediate buffer; prove the bound
        staged = IntTensor(staged, min(stored_bits, pooled.declared_bits)).values
        signs = apply_rules(staged, rules_to_arrays(block.rules), counters)
        if model.plan.flatten_after != i:
            signs = signs.reshape(pooled.values.shape)
        x = BitTensor.from_signs(signs)
    raise ConfigError("architecture has no half block")  # pragma: no cover


# ---------------------------------------------------------------------------
# dataset evaluation


def read_manifest(path) -> list[tuple[Path, int]]:
    """Parse a `path,label` CSV; paths are resolved relative to the manifest."""
    manifest = Path(path)
    if not manifest.is_file():
        raise InputError(f"manifest not found: {manifest}")
    rows: list[tuple[Path, int]] = []
    with manifest.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["path", "label"]:
            raise InputError("manifest must have a `path,label` header")
        for record in reader:
            rows.append((manifest.parent / record["path"], int(record["label"])))
    return rows


def manifest_from_directory(root) -> list[tuple[Path, int]]:
    """Directory-per-class layout: sorted subdirectories become labels 0..n-1."""
    root = Path(root)
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise InputError(f"no class directories under {root}")
    rows = []
    for label, class_dir in enumerate(class_dirs):
        for img in sorted(class_dir.iterdir()):
            if img.is_file():
                rows.append((img, label))
    return rows


@dataclass
class EvalResult:
    total: int
    correct: int
    skipped: int
    accuracy: float
    confusion: np.ndarray
    errors: list[str] = field(default_factory=list)
    counters: OpCounters = field(default_factory=OpCounters)


def evaluate(
    model: FusedModel,
    manifest,
    pre_cfg: PreprocessConfig | None = None,
    threads: int = 1,
) -> EvalResult:
    """Classify every manifest row; skipped rows are reported, not fatal."""
    rows = read_manifest(manifest) if isinstance(manifest, (str, Path)) else list(manifest)
    if not rows:
        raise InputError("no samples in manifest")
    classes = model.config.class_count
    cfg = pre_cfg or PreprocessConfig(target_size=model.config.input_size)
    if cfg.target_size != model.config.input_size:
        raise ConfigError("preprocess target size must match the model input size")

    def run_row(row):
        path, label = row
        counters = OpCounters()
        try:
            if not (0 <= label < classes):
                raise InputError(f"label {label} out of range")
            scores = forward_fused(model, preprocess(path, cfg), counters)
        except NHalfError as exc:
            return (None, label, f"{path}: {exc}", counters)
        return (scores.predicted, label, None, counters)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run_row, rows))
    else:
        outcomes = [run_row(row) for row in rows]

    result = EvalResult(0, 0, 0, 0.0, np.zeros((classes, classes), dtype=np.int64))
    for predicted, label, error, counters in outcomes:
        result.counters.merge(counters)
        if error is not None:
            result.skipped += 1
            result.errors.append(error)
            continue
        result.total += 1
        result.confusion[label, predicted] += 1
        if predicted == label:
            result.correct += 1
    if result.total == 0:
        raise InputError("no samples could be evaluated")
    result.accuracy = result.correct / result.total
    return result


# ---------------------------------------------------------------------------
# distribution statistics


@dataclass(frozen=True)
class HistogramSeries:
    name: str
    edges: np.ndarray
    counts: np.ndarray


def _integer_hist(name: str, values: np.ndarray) -> HistogramSeries:
    values = np.asarray(values).ravel()
    lo, hi = int(values.min()), int(values.max())
    edges = np.arange(lo, hi + 2) - 0.5
    counts, _ = np.histogram(values, bins=edges)
    return HistogramSeries(name, edges, counts)


def _uniform_hist(name: str, values: np.ndarray, bins: int) -> HistogramSeries:
    counts, edges = np.histogram(np.asarray(values, dtype=np.float64).ravel(), bins=bins)
    return HistogramSeries(name, edges, counts)


def distribution_stats(
    model: FusedModel,
    checkpoint: Checkpoint,
    samples,
    bins: int = 64,
) -> list[HistogramSeries]:
    """Histograms of pooled outputs, compiled thresholds and raw zero crossings.

    Pooled-output series come from reference forward passes over the samples
    (raw, and saturated to [-clip, clip] as the fused path stores them);
    threshold series cover every GE/LE rule of the compiled model; the raw
    series shows the unquantized, unclamped crossings from the checkpoint.
    """
    samples = list(samples)
    if not samples:
        raise InputError("distribution_stats needs at least one sample input")
    clip = model.config.clip

    pooled_per_block: list[list[np.ndarray]] = [[] for _ in checkpoint.blocks]
    for sample in samples:
        image = sample.to_signs() if isinstance(sample, BitTensor) else np.asarray(sample)
        trace = reference_forward(image, checkpoint)
        for i, block_trace in enumerate(trace.blocks):
            pooled_per_block[i].append(block_trace.pool_out.ravel())

    series: list[HistogramSeries] = []
    for i, chunks in enumerate(pooled_per_block):
        if checkpoint.config.blocks[i].kind == "half":
            continue
        pooled = np.concatenate(chunks).astype(np.int64)
        series.append(_integer_hist(f"block{i}_pooled_raw", pooled))
        series.append(_integer_hist(f"block{i}_pooled_clipped", np.clip(pooled, -clip, clip)))

    thresholds = [
        t
        for block in model.blocks
        if block.rules
        for r in block.rules
        for mode, t in ((r.pos_mode, r.pos_threshold), (r.neg_mode, r.neg_threshold))
        if mode in (BranchMode.GE, BranchMode.LE)
    ]
    if thresholds:
        series.append(_integer_hist("thresholds", np.asarray(thresholds)))

    crossings = []
    for spec, block in zip(checkpoint.config.blocks, checkpoint.blocks):
        if spec.kind == "half":
            continue
        for channel in range(spec.out_channels):
            affine = fold_bn_prelu(block.params, channel)
            for zero in (affine.pos_zero, affine.neg_zero):
                if zero is not None and np.isfinite(zero):
                    crossings.append(zero)
    if crossings:
        series.append(_uniform_hist("delta_raw", np.asarray(crossings), bins))
    return series


def write_stats_csv(series: list[HistogramSeries], fh) -> None:
    """Emit `series,bin_lo,bin_hi,count` rows."""
    writer = csv.writer(fh)
    writer.writerow(["series", "bin_lo", "bin_hi", "count"])
    for s in series:
        for lo, hi, count in zip(s.edges[:-1], s.edges[1:], s.counts):
            writer.writerow([s.name, repr(float(lo)), repr(float(hi)), int(count)])
