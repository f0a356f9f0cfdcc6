"""Patch-based segmentation harness: split/infer/reassemble, palette label
maps, a small per-pixel segmenter, and dataset mean-IoU evaluation.

Patches carry their grid position so reassembly order is checked, not
assumed. Label maps resize by nearest neighbor only; dataset mIoU uses
global confusion counts summed across images (not a per-image average).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .detmetrics import label_confusion, miou_from_confusion
from .errors import DimensionError, DivergenceError, ValidationError
from .imagecore import Image, resize_bilinear, resize_nearest_labels
from .neuralnet import AdamOptimizer, AdamParams, ConvSpec, load_weights, save_weights, softmax_cross_entropy
from .neuralnet.layers import ConvLayer, Stack, accumulate


@dataclass(frozen=True)
class LabelMap:
    """Integer class id per pixel."""

    labels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 2:
            raise DimensionError(f"label map must be 2-D, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValidationError(f"labels must be integers, got {arr.dtype}")
        if arr.size and arr.min() < 0:
            raise ValidationError("negative label")
        arr = arr.astype(np.int64).copy()
        arr.setflags(write=False)
        object.__setattr__(self, "labels", arr)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


@dataclass(frozen=True)
class PaletteEntry:
    class_id: int
    name: str
    rgb: tuple[int, int, int]


class ClassPalette:
    """Ordered class-id -> color mapping; ids contiguous from 0, colors unique."""

    def __init__(self, entries: list[PaletteEntry]):
        if [e.class_id for e in entries] != list(range(len(entries))):
            raise ValidationError("palette ids must be contiguous from 0")
        colors = [e.rgb for e in entries]
        if len(set(colors)) != len(colors):
            raise ValidationError("palette colors must be unique")
        for c in colors:
            if len(c) != 3 or min(c) < 0 or max(c) > 255:
                raise ValidationError(f"bad palette color {c}")
        self.entries = list(entries)

    def __len__(self) -> int:
        return len(self.entries)

    def color_array(self) -> np.ndarray:
        return np.array([e.rgb for e in self.entries], dtype=np.float64) / 255.0

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(
                [{"id": e.class_id, "name": e.name, "rgb": list(e.rgb)} for e in self.entries],
                f,
                indent=1,
            )

    @classmethod
    def load(cls, path) -> "ClassPalette":
        with open(path) as f:
            doc = json.load(f)
        return cls([PaletteEntry(int(e["id"]), e["name"], tuple(e["rgb"])) for e in doc])


def default_palette() -> ClassPalette:
    """Background/unmachined/machined/holes/defects coloring for cast parts."""
    return ClassPalette(
        [
            PaletteEntry(0, "background", (0, 0, 0)),
            PaletteEntry(1, "gross", (0, 0, 255)),
            PaletteEntry(2, "machined", (255, 255, 0)),
            PaletteEntry(3, "hole", (128, 128, 128)),
            PaletteEntry(4, "defect", (255, 0, 0)),
        ]
    )


@dataclass(frozen=True)
class Patch:
    image: Image
    row: int
    col: int


def split_patches(img: Image, rows: int = 6, cols: int = 6) -> list[Patch]:
    """Row-major equal patches; dimensions must divide exactly (no padding)."""
    if rows < 1 or cols < 1:
        raise ValidationError(f"grid must be at least 1x1, got {rows}x{cols}")
    if img.height % rows or img.width % cols:
        raise DimensionError(
            f"image {img.height}x{img.width} not divisible by grid {rows}x{cols}"
        )
    ph, pw = img.height // rows, img.width // cols
    return [
        Patch(Image(img.pixels[r * ph : (r + 1) * ph, c * pw : (c + 1) * pw]), r, c)
        for r in range(rows)
        for c in range(cols)
    ]


def reassemble(patches: list[Patch], rows: int, cols: int) -> Image:
    """Inverse of split_patches; validates count, positions, and uniform shape."""
    if len(patches) != rows * cols:
        raise DimensionError(f"got {len(patches)} patches for a {rows}x{cols} grid")
    shape = patches[0].image.pixels.shape
    grid: dict[tuple[int, int], Image] = {}
    for p in patches:
        if p.image.pixels.shape != shape:
            raise DimensionError(
                f"patch ({p.row}, {p.col}) shape {p.image.pixels.shape} != {shape}"
            )
        if not (0 <= p.row < rows and 0 <= p.col < cols) or (p.row, p.col) in grid:
            raise ValidationError(f"bad or duplicate patch position ({p.row}, {p.col})")
        grid[(p.row, p.col)] = p.image
    ph, pw = shape[0], shape[1]
    out = np.empty((rows * ph, cols * pw, shape[2]))
    for (r, c), image in grid.items():
        out[r * ph : (r + 1) * ph, c * pw : (c + 1) * pw] = image.pixels
    return Image(out)


def encode_labelmap(lm: LabelMap, palette: ClassPalette) -> Image:
    if lm.labels.max(initial=0) >= len(palette):
        raise ValidationError(f"label {lm.labels.max()} outside palette of {len(palette)}")
    return Image(palette.color_array()[lm.labels])


def decode_labelmap(img: Image, palette: ClassPalette) -> LabelMap:
    """Exact color match back to class ids; unknown colors report coordinates."""
    quantized = np.round(img.pixels * 255.0).astype(int)
    if img.channels == 1:
        quantized = np.repeat(quantized, 3, axis=2)
    colors = np.array([e.rgb for e in palette.entries], dtype=int)
    matches = (quantized[:, :, None, :] == colors[None, None, :, :]).all(axis=3)
    known = matches.any(axis=2)
    if not known.all():
        ys, xs = np.nonzero(~known)
        y, x = int(ys[0]), int(xs[0])
        raise ValidationError(
            f"pixel ({x}, {y}) color {tuple(quantized[y, x])} not in palette"
        )
    return LabelMap(matches.argmax(axis=2))


class PixelSegmenter:
    """Tiny fully-convolutional per-pixel classifier with one multi-rate
    atrous block (parallel dilated 3x3 convolutions, summed)."""

    def __init__(self, num_classes: int, in_channels: int = 3, width: int = 8,
                 rates: tuple[int, ...] = (1, 2, 3), params=None, seed: int = 0):
        self.num_classes = int(num_classes)
        self.in_channels = int(in_channels)
        self.width = int(width)
        self.rates = tuple(int(r) for r in rates)
        if not self.rates:
            raise ValidationError("need at least one atrous rate")
        self.stem = ConvLayer(
            "stem", ConvSpec(in_channels, width, 3, 3, padding=(1, 1, 1, 1)), act="relu"
        )
        self.branches = [
            ConvLayer(f"atrous_r{r}", ConvSpec(width, width, 3, 3, rate=r, padding=(r, r, r, r)))
            for r in self.rates
        ]
        self.head = ConvLayer("head", ConvSpec(width, num_classes, 1, 1))
        if params is None:
            rng = np.random.default_rng(seed)
            params = {}
            self.stem.init_params(params, rng)
            for b in self.branches:
                b.init_params(params, rng)
            self.head.init_params(params, rng)
        self.params = params

    def forward(self, img: Image):
        x = img.pixels * 2.0 - 1.0
        feat, stem_cache = self.stem.forward(x, self.params)
        outs, caches = [], []
        for b in self.branches:
            y, c = b.forward(feat, self.params)
            outs.append(y)
            caches.append(c)
        merged = np.maximum(sum(outs), 0.0)
        logits, head_cache = self.head.forward(merged, self.params)
        return logits, (stem_cache, caches, sum(outs), head_cache)

    def backward(self, cache, d_logits: np.ndarray):
        stem_cache, branch_caches, pre_merge, head_cache = cache
        grads: dict[str, np.ndarray] = {}
        d_merged = self.head.backward(head_cache, d_logits, self.params, grads)
        d_pre = d_merged * (pre_merge > 0.0)
        d_feat = None
        for b, c in zip(self.branches, branch_caches):
            dx = b.backward(c, d_pre, self.params, grads)
            d_feat = dx if d_feat is None else d_feat + dx
        self.stem.backward(stem_cache, d_feat, self.params, grads)
        return grads

    def predict(self, img: Image) -> LabelMap:
        logits, _ = self.forward(img)
        return LabelMap(logits.argmax(axis=2))

    def save(self, path_prefix) -> None:
        meta = {
            "num_classes": self.num_classes,
            "in_channels": self.in_channels,
            "width": self.width,
            "rates": list(self.rates),
        }
        with open(f"{path_prefix}.json", "w") as f:
            json.dump(meta, f, indent=1)
        save_weights(self.params, f"{path_prefix}.lscw")

    @classmethod
    def load(cls, path_prefix) -> "PixelSegmenter":
        with open(f"{path_prefix}.json") as f:
            meta = json.load(f)
        return cls(
            meta["num_classes"],
            in_channels=meta["in_channels"],
            width=meta["width"],
            rates=tuple(meta["rates"]),
            params=load_weights(f"{path_prefix}.lscw"),
        )


def train_pixel_segmenter(
    samples: list[tuple[Image, LabelMap]],
    steps: int,
    batch: int = 2,
    num_classes: int | None = None,
    seed: int = 0,
    adam_params: AdamParams | None = None,
    rates: tuple[int, ...] = (1, 2, 3),
) -> tuple[PixelSegmenter, list[float]]:
    if steps < 1:
        raise ValidationError(f"steps must be >= 1, got {steps}")
    if not samples:
        raise ValidationError("no training samples")
    for img, lm in samples:
        if (img.height, img.width) != (lm.height, lm.width):
            raise DimensionError(
                f"image {img.height}x{img.width} vs label map {lm.height}x{lm.width}"
            )
    if num_classes is None:
        num_classes = int(max(lm.labels.max() for _, lm in samples)) + 1
    model = PixelSegmenter(num_classes, in_channels=samples[0][0].channels, rates=rates, seed=seed)
    optimizer = AdamOptimizer(adam_params or AdamParams(lr=5e-3))
    rng = np.random.default_rng(seed + 1)
    loss_log: list[float] = []
    for step in range(steps):
        idx = rng.integers(0, len(samples), size=batch)
        total: dict[str, np.ndarray] = {}
        loss_sum = 0.0
        for i in idx:
            img, lm = samples[i]
            logits, cache = model.forward(img)
            flat = logits.reshape(-1, num_classes)
            loss, d_flat = softmax_cross_entropy(flat, lm.labels.reshape(-1))
            loss_sum += loss
            accumulate(total, model.backward(cache, d_flat.reshape(logits.shape)))
        mean_loss = loss_sum / batch
        if not np.isfinite(mean_loss):
            raise DivergenceError("segmenter training diverged", step=step)
        loss_log.append(mean_loss)
        for k in total:
            total[k] /= batch
        optimizer.step(model.params, total)
    return model, loss_log


def segment_image(
    model: PixelSegmenter, img: Image, rows: int = 6, cols: int = 6,
    infer_size: int | None = None,
) -> LabelMap:
    """Split -> (resize, classify, resize labels back) per patch -> reassemble."""
    patches = split_patches(img, rows, cols)
    ph, pw = img.height // rows, img.width // cols
    out = np.empty((img.height, img.width), dtype=np.int64)
    for p in patches:
        work = p.image
        if infer_size is not None and (work.height, work.width) != (infer_size, infer_size):
            work = resize_bilinear(work, infer_size, infer_size)
        labels = model.predict(work).labels
        if labels.shape != (ph, pw):
            labels = resize_nearest_labels(labels, ph, pw)
        out[p.row * ph : (p.row + 1) * ph, p.col * pw : (p.col + 1) * pw] = labels
    return LabelMap(out)


def evaluate_segmentation(
    preds: list[LabelMap], gts: list[LabelMap], num_classes: int
) -> tuple[float, dict[int, float]]:
    """Dataset mean IoU from global confusion counts, plus the per-class table."""
    if not preds:
        raise ValidationError("empty dataset")
    if len(preds) != len(gts):
        raise DimensionError(f"{len(preds)} predictions vs {len(gts)} ground truths")
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    for p, g in zip(preds, gts):
        confusion += label_confusion(p, g, num_classes)
    inter = np.diag(confusion).astype(np.float64)
    union = confusion.sum(axis=0) + confusion.sum(axis=1) - inter
    table = {c: float(inter[c] / union[c]) for c in range(num_classes) if union[c] > 0}
    return miou_from_confusion(confusion), table
