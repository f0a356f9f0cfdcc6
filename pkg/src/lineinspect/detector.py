"""Desk-scale single-shot detector: anchors over a separable-conv backbone.

A fixed anchor grid tiles the image (row-major cells, then shape index);
class and box heads are 1x1 convolutions over the last feature map. Boxes
are regressed as (dcx/aw, dcy/ah, log(gw/aw), log(gh/ah)) against their
anchor. Training uses softmax CE over anchors with 3:1 hard-negative
selection plus smooth-L1 on positive-anchor offsets.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import classes
from .detmetrics import BoundingBox, Detection, iou, nms
from .errors import DimensionError, DivergenceError, ValidationError
from .imagecore import Image
from .neuralnet import AdamOptimizer, AdamParams, ConvSpec, load_weights, save_weights, softmax, softmax_cross_entropy, smooth_l1
from .neuralnet.layers import ConvLayer, Stack, accumulate

BACKGROUND = -1  # anchor label for "no object"

OFFSET_LOG_CLIP = 10.0


@dataclass(frozen=True)
class AnchorGrid:
    image_w: int
    image_h: int
    rows: int
    cols: int
    shapes: tuple[tuple[float, float], ...]
    anchors: tuple[BoundingBox, ...]

    @property
    def count(self) -> int:
        return len(self.anchors)


def build_anchors(
    image_w: int, image_h: int, rows: int, cols: int, shapes
) -> AnchorGrid:
    """Anchors centered on a rows x cols cell grid, clipped to image bounds."""
    if rows < 1 or cols < 1:
        raise ValidationError(f"grid must be at least 1x1, got {rows}x{cols}")
    shapes = tuple((float(w), float(h)) for w, h in shapes)
    if not shapes:
        raise ValidationError("anchor shape list is empty")
    cell_w, cell_h = image_w / cols, image_h / rows
    anchors = []
    for r in range(rows):
        for c in range(cols):
            cx, cy = (c + 0.5) * cell_w, (r + 0.5) * cell_h
            for w, h in shapes:
                anchors.append(
                    BoundingBox(
                        max(0.0, cx - w / 2.0),
                        max(0.0, cy - h / 2.0),
                        min(float(image_w), cx + w / 2.0),
                        min(float(image_h), cy + h / 2.0),
                    )
                )
    return AnchorGrid(image_w, image_h, rows, cols, shapes, tuple(anchors))


@dataclass(frozen=True)
class TrainSample:
    image: Image
    gt: tuple[tuple[int, BoundingBox], ...]

    def __post_init__(self):
        for _, box in self.gt:
            if box.x_min < 0 or box.y_min < 0 or box.x_max > self.image.width or box.y_max > self.image.height:
                raise ValidationError(f"ground-truth box {box} outside image bounds")
        object.__setattr__(self, "gt", tuple(self.gt))


def encode_targets(
    gt, grid: AnchorGrid, iou_match: float = 0.5
) -> tuple[np.ndarray, np.ndarray]:
    """Per-anchor class labels (BACKGROUND for none) and box offsets.

    Every anchor with IoU >= iou_match joins its best gt; additionally each gt
    claims its single best-IoU anchor so no object goes unassigned.
    """
    labels = np.full(grid.count, BACKGROUND, dtype=int)
    offsets = np.zeros((grid.count, 4))
    gt = list(gt)
    if not gt:
        return labels, offsets
    mat = np.array([[iou(a, box) for _, box in gt] for a in grid.anchors])
    best_gt = mat.argmax(axis=1)
    assign = np.where(mat[np.arange(grid.count), best_gt] >= iou_match, best_gt, -1)
    for g in range(len(gt)):
        assign[mat[:, g].argmax()] = g  # force the best anchor per object
    for a in np.nonzero(assign >= 0)[0]:
        class_id, box = gt[assign[a]]
        labels[a] = class_id
        offsets[a] = _encode_box(box, grid.anchors[a])
    return labels, offsets


def anchor_max_iou(gt, grid: AnchorGrid) -> np.ndarray:
    """Best IoU each anchor reaches against any ground-truth box."""
    gt = list(gt)
    if not gt:
        return np.zeros(grid.count)
    return np.array([max(iou(a, box) for _, box in gt) for a in grid.anchors])


def _encode_box(gt_box: BoundingBox, anchor: BoundingBox) -> np.ndarray:
    gcx, gcy = gt_box.center
    acx, acy = anchor.center
    return np.array(
        [
            (gcx - acx) / anchor.width,
            (gcy - acy) / anchor.height,
            np.log(gt_box.width / anchor.width),
            np.log(gt_box.height / anchor.height),
        ]
    )


def _decode_box(t: np.ndarray, anchor: BoundingBox, image_w: int, image_h: int) -> BoundingBox | None:
    acx, acy = anchor.center
    cx = acx + t[0] * anchor.width
    cy = acy + t[1] * anchor.height
    w = anchor.width * np.exp(np.clip(t[2], -OFFSET_LOG_CLIP, OFFSET_LOG_CLIP))
    h = anchor.height * np.exp(np.clip(t[3], -OFFSET_LOG_CLIP, OFFSET_LOG_CLIP))
    x0, x1 = np.clip([cx - w / 2.0, cx + w / 2.0], 0.0, image_w)
    y0, y1 = np.clip([cy - h / 2.0, cy + h / 2.0], 0.0, image_h)
    if x1 - x0 <= 1e-6 or y1 - y0 <= 1e-6:
        return None
    return BoundingBox(float(x0), float(y0), float(x1), float(y1))


@dataclass
class RawPrediction:
    """Per-anchor softmax class scores [A, C+1] and box offsets [A, 4]."""

    scores: np.ndarray
    offsets: np.ndarray

    @property
    def flat_size(self) -> int:
        return self.scores.size + self.offsets.size


class DetectorModel:
    def __init__(self, input_size, num_classes, class_names, grid: AnchorGrid,
                 channels, strides=None, params=None, seed: int = 0):
        self.input_size = int(input_size)
        self.num_classes = int(num_classes)
        self.class_names = tuple(class_names)
        self.grid = grid
        self.channels = tuple(int(c) for c in channels)
        self.strides = tuple(int(s) for s in (strides or (2,) * len(self.channels)))
        if len(self.strides) != len(self.channels):
            raise ValidationError("strides and channels must have equal length")
        feat = self.input_size
        for s in self.strides:
            feat //= s
        if feat != grid.rows or feat != grid.cols:
            raise ValidationError(
                f"backbone reduces {self.input_size} to {feat}, grid is {grid.rows}x{grid.cols}"
            )
        per_cell = len(grid.shapes)
        self.trunk = Stack(self._build_trunk())
        self.cls_head = ConvLayer(
            "cls_head", ConvSpec(self.channels[-1], per_cell * (num_classes + 1), 1, 1)
        )
        self.box_head = ConvLayer(
            "box_head", ConvSpec(self.channels[-1], per_cell * 4, 1, 1)
        )
        if params is None:
            rng = np.random.default_rng(seed)
            params = self.trunk.init_params(rng)
            self.cls_head.init_params(params, rng)
            self.box_head.init_params(params, rng)
        self.params = params

    def _build_trunk(self):
        layers = []
        c_in = 3
        for i, (c_out, stride) in enumerate(zip(self.channels, self.strides)):
            dw = ConvSpec(c_in, c_in, 3, 3, stride=stride, groups=c_in, padding=(1, 1, 1, 1))
            pw = ConvSpec(c_in, c_out, 1, 1)
            layers.append(ConvLayer(f"block{i}/depthwise", dw))
            layers.append(ConvLayer(f"block{i}/pointwise", pw, act="relu"))
            c_in = c_out
        return layers

    def _check_image(self, image: Image) -> np.ndarray:
        if image.height != self.input_size or image.width != self.input_size or image.channels != 3:
            raise DimensionError(
                f"image {image.height}x{image.width}x{image.channels} does not match "
                f"model input {self.input_size}x{self.input_size}x3"
            )
        return image.pixels * 2.0 - 1.0

    def _heads(self, feat: np.ndarray):
        cls_raw, cls_cache = self.cls_head.forward(feat, self.params)
        box_raw, box_cache = self.box_head.forward(feat, self.params)
        a = self.grid.count
        logits = cls_raw.reshape(a, self.num_classes + 1)
        offsets = box_raw.reshape(a, 4)
        return logits, offsets, (cls_cache, box_cache, cls_raw.shape, box_raw.shape)

    def forward(self, image: Image) -> RawPrediction:
        x = self._check_image(image)
        feat, _ = self.trunk.forward(x, self.params)
        logits, offsets, _ = self._heads(feat)
        return RawPrediction(scores=softmax(logits, axis=1), offsets=offsets)

    def loss_and_grads(self, image: Image, labels: np.ndarray, target_offsets: np.ndarray,
                       neg_ratio: int = 3, box_weight: float = 1.0,
                       ignore: np.ndarray | None = None):
        """Loss plus parameter gradients for one encoded sample.

        ``ignore`` marks near-miss anchors excluded from the negative pool so
        almost-matching anchors are not pushed toward background.
        """
        x = self._check_image(image)
        feat, trunk_caches = self.trunk.forward(x, self.params)
        logits, offsets, (cls_cache, box_cache, cls_shape, box_shape) = self._heads(feat)

        pos = np.nonzero(labels != BACKGROUND)[0]
        neg_mask = labels == BACKGROUND
        if ignore is not None:
            neg_mask &= ~ignore
        neg = np.nonzero(neg_mask)[0]
        bg_index = self.num_classes
        # hard negatives: the background anchors the model is most wrong about
        neg_scores = softmax(logits[neg], axis=1)[:, bg_index]
        take = min(len(neg), max(1, neg_ratio * max(1, len(pos))))
        hard = neg[np.argsort(neg_scores)[:take]]
        selected = np.concatenate([pos, hard])
        sel_labels = np.where(labels[selected] == BACKGROUND, bg_index, labels[selected])

        ce, d_sel = softmax_cross_entropy(logits[selected], sel_labels)
        d_logits = np.zeros_like(logits)
        d_logits[selected] = d_sel

        box_loss, d_off_pos = smooth_l1(offsets[pos], target_offsets[pos])
        box_loss *= box_weight
        d_offsets = np.zeros_like(offsets)
        d_offsets[pos] = d_off_pos * box_weight

        grads: dict[str, np.ndarray] = {}
        d_feat = self.cls_head.backward(cls_cache, d_logits.reshape(cls_shape), self.params, grads)
        d_feat = d_feat + self.box_head.backward(
            box_cache, d_offsets.reshape(box_shape), self.params, grads
        )
        self.trunk.backward(trunk_caches, d_feat, self.params, grads)
        return ce + box_loss, grads

    def save(self, model_dir) -> None:
        os.makedirs(model_dir, exist_ok=True)
        config = {
            "input_size": self.input_size,
            "num_classes": self.num_classes,
            "class_names": list(self.class_names),
            "rows": self.grid.rows,
            "cols": self.grid.cols,
            "anchor_shapes": [list(s) for s in self.grid.shapes],
            "channels": list(self.channels),
            "strides": list(self.strides),
        }
        with open(os.path.join(model_dir, "config.json"), "w") as f:
            json.dump(config, f, indent=1)
        save_weights(self.params, os.path.join(model_dir, "weights.lscw"))

    @classmethod
    def load(cls, model_dir) -> "DetectorModel":
        with open(os.path.join(model_dir, "config.json")) as f:
            config = json.load(f)
        grid = build_anchors(
            config["input_size"],
            config["input_size"],
            config["rows"],
            config["cols"],
            [tuple(s) for s in config["anchor_shapes"]],
        )
        params = load_weights(os.path.join(model_dir, "weights.lscw"))
        return cls(
            config["input_size"],
            config["num_classes"],
            config["class_names"],
            grid,
            config["channels"],
            strides=config.get("strides"),
            params=params,
        )

    @classmethod
    def build(cls, input_size: int = 32, num_classes: int = classes.NUM_CLASSES,
              class_names=classes.CLASS_NAMES, rows: int = 8, cols: int = 8,
              shapes=((10.0, 12.0), (13.0, 13.0)), channels=(16, 32, 64),
              strides=(2, 2, 1), seed: int = 0) -> "DetectorModel":
        grid = build_anchors(input_size, input_size, rows, cols, shapes)
        return cls(input_size, num_classes, class_names, grid, channels, strides=strides, seed=seed)


def detector_forward(model: DetectorModel, image: Image) -> RawPrediction:
    return model.forward(image)


def decode_detections(
    raw: RawPrediction,
    grid: AnchorGrid,
    prob_threshold: float,
    nms_iou: float = 0.5,
) -> list[Detection]:
    """Offsets applied to anchors; background and sub-threshold anchors dropped."""
    if prob_threshold < 0.0:
        raise ValidationError(f"prob_threshold must be >= 0, got {prob_threshold}")
    bg = raw.scores.shape[1] - 1
    dets = []
    for a in range(grid.count):
        c = int(raw.scores[a].argmax())
        if c == bg:
            continue
        p = float(raw.scores[a, c])
        if p < prob_threshold:
            continue
        box = _decode_box(raw.offsets[a], grid.anchors[a], grid.image_w, grid.image_h)
        if box is not None:
            dets.append(Detection(box, c, p))
    return nms(dets, nms_iou)


def train_detector(
    samples: list[TrainSample],
    steps: int,
    batch: int = 8,
    adam_params: AdamParams | None = None,
    seed: int = 0,
    model: DetectorModel | None = None,
    iou_match: float = 0.5,
    neg_ratio: int = 3,
    box_weight: float = 1.0,
    ignore_iou: float = 0.35,
) -> tuple[DetectorModel, list[float]]:
    """Train from scratch (or continue `model`); returns model and per-step loss log."""
    if steps < 1:
        raise ValidationError(f"steps must be >= 1, got {steps}")
    if not samples:
        raise ValidationError("no training samples")
    if model is None:
        model = DetectorModel.build(input_size=samples[0].image.height, seed=seed)
    adam_params = adam_params or AdamParams(lr=2e-3)
    optimizer = AdamOptimizer(adam_params)
    encoded = [encode_targets(s.gt, model.grid, iou_match=iou_match) for s in samples]
    ignores = [anchor_max_iou(s.gt, model.grid) >= ignore_iou for s in samples]
    rng = np.random.default_rng(seed + 1)
    loss_log: list[float] = []
    for step in range(steps):
        idx = rng.integers(0, len(samples), size=batch)
        total: dict[str, np.ndarray] = {}
        loss_sum = 0.0
        for i in idx:
            loss, grads = model.loss_and_grads(
                samples[i].image, *encoded[i], neg_ratio=neg_ratio, box_weight=box_weight,
                ignore=ignores[i],
            )
            loss_sum += loss
            accumulate(total, grads)
        mean_loss = loss_sum / batch
        if not np.isfinite(mean_loss):
            raise DivergenceError("detector training diverged", step=step)
        loss_log.append(mean_loss)
        for k in total:
            total[k] /= batch
        optimizer.step(model.params, total)
    return model, loss_log
