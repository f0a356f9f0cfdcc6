"""Deterministic synthetic assembly-line data: parts, defects, videos, datasets.

Parts are 2-D parametric shapes on a noisy conveyor background: discs are
annuli with type-specific radii/notch counts, callipers are C-brackets
opening toward the disc. Each (kind, type) pair has a distinct tint so the
six classes stay separable at desk scale. Everything is a pure function of
(config, seed).
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import classes
from .detmetrics import AnnotatedObject, BoundingBox, save_annotations
from .errors import ValidationError
from .imagecore import Image, save_image

BACKGROUND_SHADE = 0.45
NOISE_AMPLITUDE = 0.035

# geometry parameters are fractions of the part's pixel scale
GEOMETRY = {
    ("disc", 1): dict(r_out=0.52, r_in=0.16, notches=0, tint=(1.00, 0.05, 0.05)),
    ("disc", 2): dict(r_out=0.48, r_in=0.20, notches=4, tint=(0.05, 0.95, 0.05)),
    ("disc", 3): dict(r_out=0.46, r_in=0.10, notches=8, tint=(0.10, 0.10, 1.00)),
    ("calliper", 1): dict(w=0.72, h=1.02, arm=0.30, tint=(1.00, 0.90, 0.05)),
    ("calliper", 2): dict(w=0.64, h=0.92, arm=0.40, tint=(0.05, 0.95, 0.95)),
    ("calliper", 3): dict(w=0.80, h=0.84, arm=0.22, tint=(1.00, 0.05, 1.00)),
}

# kit layout as fractions of the frame size
KIT_CALLIPER_X = 0.25
KIT_DISC_X = 0.72
KIT_PART_Y = 0.5
KIT_DISC_SCALE = 0.42
KIT_CALLIPER_SCALE = 0.40


@dataclass(frozen=True)
class PartSpec:
    part_kind: str  # "disc" | "calliper"
    type_id: int

    def __post_init__(self):
        if (self.part_kind, self.type_id) not in GEOMETRY:
            raise ValidationError(f"unknown part ({self.part_kind}, {self.type_id})")

    @property
    def geometry(self) -> dict:
        return GEOMETRY[(self.part_kind, self.type_id)]

    @property
    def class_id(self) -> int:
        if self.part_kind == "disc":
            return classes.disc_class(self.type_id)
        return classes.calliper_class(self.type_id)


@dataclass(frozen=True)
class DefectSpec:
    """Local surface damage; dx/dy are offsets from the part center in px."""

    kind: str  # "scratch" | "blob" | "missing_region"
    dx: float
    dy: float
    size: float
    delta: float

    def __post_init__(self):
        if self.kind not in ("scratch", "blob", "missing_region"):
            raise ValidationError(f"unknown defect kind {self.kind!r}")
        if self.size < 1.0:
            raise ValidationError(f"defect size {self.size} below 1 px")


@dataclass(frozen=True)
class VideoScript:
    """Conveyor pass: per-frame horizontal kit offsets plus a noise seed."""

    x_offsets: tuple[float, ...]
    seed: int = 0

    def __post_init__(self):
        if len(self.x_offsets) < 1:
            raise ValidationError("script must cover at least one frame")

    @property
    def frames(self) -> int:
        return len(self.x_offsets)


def linear_script(frames: int, x_start: float, x_end: float, seed: int = 0) -> VideoScript:
    if frames < 1:
        raise ValidationError(f"frames must be >= 1, got {frames}")
    if frames == 1:
        return VideoScript((x_start,), seed)
    return VideoScript(tuple(np.linspace(x_start, x_end, frames)), seed)


def _pixel_centers(size: int):
    ys, xs = np.mgrid[0:size, 0:size]
    return xs + 0.5, ys + 0.5


def _disc_mask(geo: dict, size: int, cx: float, cy: float, scale: float) -> np.ndarray:
    x, y = _pixel_centers(size)
    dist = np.hypot(x - cx, y - cy)
    mask = (dist <= geo["r_out"] * scale) & (dist >= geo["r_in"] * scale)
    n = geo["notches"]
    if n:
        rim_r = geo["r_out"] * scale  # scallop cuts along the rim
        notch_r = 0.10 * scale
        for k in range(n):
            ang = 2.0 * np.pi * k / n
            nx, ny = cx + rim_r * np.cos(ang), cy + rim_r * np.sin(ang)
            mask &= np.hypot(x - nx, y - ny) > notch_r
    return mask


def _calliper_mask(geo: dict, size: int, cx: float, cy: float, scale: float) -> np.ndarray:
    x, y = _pixel_centers(size)
    hw, hh = geo["w"] * scale / 2.0, geo["h"] * scale / 2.0
    arm = geo["arm"] * scale
    outer = (np.abs(x - cx) <= hw) & (np.abs(y - cy) <= hh)
    cutout = (x >= cx - hw + arm) & (np.abs(y - cy) <= hh - arm)  # opens to the right
    return outer & ~cutout


def _part_mask(spec: PartSpec, size: int, cx: float, cy: float, scale: float) -> np.ndarray:
    if spec.part_kind == "disc":
        return _disc_mask(spec.geometry, size, cx, cy, scale)
    return _calliper_mask(spec.geometry, size, cx, cy, scale)


def _mask_box(mask: np.ndarray) -> BoundingBox | None:
    rows = np.any(mask, axis=1)
    cols = np.any(mask, axis=0)
    if not rows.any():
        return None
    r0, r1 = np.nonzero(rows)[0][[0, -1]]
    c0, c1 = np.nonzero(cols)[0][[0, -1]]
    return BoundingBox(float(c0), float(r0), float(c1 + 1), float(r1 + 1))


def _defect_mask(defect: DefectSpec, size: int, cx: float, cy: float) -> np.ndarray:
    x, y = _pixel_centers(size)
    px, py = cx + defect.dx, cy + defect.dy
    if defect.kind == "blob":
        return np.hypot(x - px, y - py) <= defect.size / 2.0
    if defect.kind == "scratch":
        half_len, half_th = defect.size / 2.0, max(0.75, defect.size / 12.0)
        return (np.abs(x - px) <= half_len) & (np.abs(y - py) <= half_th)
    half = defect.size / 2.0
    return (np.abs(x - px) <= half) & (np.abs(y - py) <= half)


def _paint(canvas: np.ndarray, mask: np.ndarray, tint) -> None:
    canvas[mask] = np.asarray(tint, dtype=np.float64)


def _point_in_part(spec: PartSpec, scale: float, dx: float, dy: float) -> bool:
    """Part-relative membership test, independent of canvas clipping."""
    geo = spec.geometry
    if spec.part_kind == "disc":
        r = float(np.hypot(dx, dy))
        return geo["r_in"] * scale <= r <= geo["r_out"] * scale
    hw, hh = geo["w"] * scale / 2.0, geo["h"] * scale / 2.0
    arm = geo["arm"] * scale
    inside = abs(dx) <= hw and abs(dy) <= hh
    in_cutout = dx >= -hw + arm and abs(dy) <= hh - arm
    return inside and not in_cutout


def _apply_defects(
    canvas: np.ndarray,
    spec: PartSpec,
    scale: float,
    defects,
    size: int,
    cx: float,
    cy: float,
) -> None:
    for defect in defects:
        if not _point_in_part(spec, scale, defect.dx, defect.dy):
            raise ValidationError(
                f"defect center offset ({defect.dx}, {defect.dy}) lies outside the part"
            )
        region = _defect_mask(defect, size, cx, cy)
        if defect.kind == "missing_region":
            canvas[region] = BACKGROUND_SHADE
        else:
            canvas[region] += defect.delta


def _background(size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    canvas = np.full((size, size, 3), BACKGROUND_SHADE)
    noise = rng.uniform(-NOISE_AMPLITUDE, NOISE_AMPLITUDE, size=(size, size, 1))
    return canvas, noise


def render_part(
    spec: PartSpec,
    defects: tuple[DefectSpec, ...] = (),
    size: int = 32,
    seed: int = 0,
    center: tuple[float, float] | None = None,
    scale: float | None = None,
) -> tuple[Image, BoundingBox]:
    """Render one part on a noisy background; returns the image and its tight box."""
    if size < 16:
        raise ValidationError(f"canvas size {size} below minimum 16")
    rng = np.random.default_rng(seed)
    cx, cy = center if center is not None else (size / 2.0, size / 2.0)
    part_scale = scale if scale is not None else 0.52 * size
    canvas, noise = _background(size, rng)
    mask = _part_mask(spec, size, cx, cy, part_scale)
    box = _mask_box(mask)
    if box is None:
        raise ValidationError("part entirely outside the canvas")
    _paint(canvas, mask, spec.geometry["tint"])
    _apply_defects(canvas, spec, part_scale, defects, size, cx, cy)
    return Image(np.clip(canvas + noise, 0.0, 1.0)), box


def render_kit_frame(
    disc: PartSpec,
    calliper: PartSpec,
    size: int = 32,
    seed: int = 0,
    x_offset: float = 0.0,
    disc_defects: tuple[DefectSpec, ...] = (),
    calliper_defects: tuple[DefectSpec, ...] = (),
) -> tuple[Image, list[tuple[int, BoundingBox]]]:
    """One frame of an assembled kit; annotations only for visible parts."""
    if disc.part_kind != "disc" or calliper.part_kind != "calliper":
        raise ValidationError("render_kit_frame wants (disc, calliper) in that order")
    rng = np.random.default_rng(seed)
    canvas, noise = _background(size, rng)
    gts: list[tuple[int, BoundingBox]] = []
    placements = (
        (calliper, KIT_CALLIPER_X * size + x_offset, KIT_CALLIPER_SCALE * size, calliper_defects),
        (disc, KIT_DISC_X * size + x_offset, KIT_DISC_SCALE * size, disc_defects),
    )
    for spec, cx, scale, defects in placements:
        cy = KIT_PART_Y * size
        mask = _part_mask(spec, size, cx, cy, scale)
        box = _mask_box(mask)
        if box is None:
            continue  # fully occluded this frame
        _paint(canvas, mask, spec.geometry["tint"])
        if defects:
            _apply_defects(canvas, spec, scale, defects, size, cx, cy)
        gts.append((spec.class_id, box))
    return Image(np.clip(canvas + noise, 0.0, 1.0)), gts


def render_video(
    disc: PartSpec,
    calliper: PartSpec,
    script: VideoScript,
    size: int = 32,
    disc_defects: tuple[DefectSpec, ...] = (),
    calliper_defects: tuple[DefectSpec, ...] = (),
) -> tuple[list[Image], list[list[tuple[int, BoundingBox]]]]:
    """Render a conveyor pass; returns frames and per-frame ground truth."""
    frames: list[Image] = []
    anns: list[list[tuple[int, BoundingBox]]] = []
    seen: set[int] = set()
    for i, offset in enumerate(script.x_offsets):
        img, gts = render_kit_frame(
            disc,
            calliper,
            size=size,
            seed=_frame_seed(script.seed, i),
            x_offset=float(offset),
            disc_defects=disc_defects,
            calliper_defects=calliper_defects,
        )
        frames.append(img)
        anns.append(gts)
        seen.update(c for c, _ in gts)
    for spec in (disc, calliper):
        if spec.class_id not in seen:
            raise ValidationError(f"{spec.part_kind} never visible under this script")
    return frames, anns


def _frame_seed(base: int, index: int) -> int:
    return int(np.random.SeedSequence([base, index]).generate_state(1)[0])


def write_video(frames, anns, out_dir) -> list[str]:
    """Write frame_%06d.ppm plus matching annotation JSONs; returns frame paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, (img, gts) in enumerate(zip(frames, anns)):
        name = f"frame_{i:06d}.ppm"
        save_image(img, os.path.join(out_dir, name))
        save_annotations(
            os.path.join(out_dir, f"frame_{i:06d}.json"),
            name,
            [AnnotatedObject(c, b, None) for c, b in gts],
        )
        paths.append(os.path.join(out_dir, name))
    return paths


@dataclass
class DatasetConfig:
    image_size: int = 32
    train_per_class: int = 20
    test_per_class: int = 15
    kit_scenes_per_type: int = 0  # extra two-part training scenes
    jitter: float = 2.0
    class_ids: tuple[int, ...] = tuple(range(classes.NUM_CLASSES))

    def __post_init__(self):
        if not self.class_ids:
            raise ValidationError("dataset config has zero classes")
        if self.train_per_class < 1 or self.test_per_class < 1:
            raise ValidationError("per-class counts must be >= 1")
        if self.image_size < 16:
            raise ValidationError(f"image_size {self.image_size} below minimum 16")

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        d = dict(d)
        if "class_ids" in d:
            d["class_ids"] = tuple(d["class_ids"])
        return cls(**d)


def _spec_for_class(class_id: int) -> PartSpec:
    return PartSpec(classes.class_kind(class_id), classes.class_type(class_id))


def make_dataset(config: DatasetConfig, out_dir, seed: int = 0) -> dict:
    """Write images + annotations + manifest.json; returns the manifest dict."""
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    size = config.image_size
    manifest = {"train": [], "test": [], "seed": seed, "config": asdict(config)}
    for split, per_class in (("train", config.train_per_class), ("test", config.test_per_class)):
        idx = 0
        for class_id in config.class_ids:
            spec = _spec_for_class(class_id)
            # render at the kit-layout scale so training matches video frames
            scale = (KIT_DISC_SCALE if spec.part_kind == "disc" else KIT_CALLIPER_SCALE) * size
            for _ in range(per_class):
                cx = size / 2.0 + rng.uniform(-config.jitter, config.jitter)
                cy = size / 2.0 + rng.uniform(-config.jitter, config.jitter)
                img, box = render_part(
                    spec, size=size, seed=int(rng.integers(1 << 31)), center=(cx, cy), scale=scale
                )
                idx += 1
                manifest[split].append(
                    _write_entry(out_dir, f"{split}_{idx:04d}", img, [(class_id, box)])
                )
    for t in classes.PART_TYPES if config.kit_scenes_per_type else ():
        for k in range(config.kit_scenes_per_type):
            img, gts = render_kit_frame(
                PartSpec("disc", t),
                PartSpec("calliper", t),
                size=size,
                seed=int(rng.integers(1 << 31)),
                x_offset=float(rng.uniform(-1.5, 1.5)),
            )
            manifest["train"].append(_write_entry(out_dir, f"train_kit{t}_{k:03d}", img, gts))
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1)
    return manifest


def _write_entry(out_dir, stem: str, img: Image, gts) -> dict:
    image_path = os.path.join(out_dir, f"{stem}.ppm")
    ann_path = os.path.join(out_dir, f"{stem}.json")
    save_image(img, image_path)
    save_annotations(ann_path, f"{stem}.ppm", [AnnotatedObject(c, b, None) for c, b in gts])
    return {"image": image_path, "ann": ann_path}


def make_normal_crops(
    kit_type: int,
    count: int,
    crop_size: int = 32,
    frame_size: int = 32,
    jitter: float = 1.0,
    seed: int = 0,
    disc_defects: tuple[DefectSpec, ...] = (),
) -> list[Image]:
    """Kit crops as the anomaly stage sees them, with jittered crop windows.

    The jitter models detector box noise so calibration covers the spread the
    live pipeline produces.
    """
    from .pipeline import chain_crop  # local import: pipeline sits above this module
    from .detmetrics import Detection

    if count < 1:
        raise ValidationError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    crops = []
    for _ in range(count):
        img, gts = render_kit_frame(
            PartSpec("disc", kit_type),
            PartSpec("calliper", kit_type),
            size=frame_size,
            seed=int(rng.integers(1 << 31)),
            x_offset=float(rng.uniform(-1.0, 1.0)),
            disc_defects=disc_defects,
        )
        boxes = {c: b for c, b in gts}
        disc_box = boxes[classes.disc_class(kit_type)]
        cal_box = boxes[classes.calliper_class(kit_type)]
        crops.append(
            chain_crop(
                img,
                Detection(_jitter_box(cal_box, jitter, rng, frame_size), 0, 1.0),
                Detection(_jitter_box(disc_box, jitter, rng, frame_size), 0, 1.0),
                out_size=crop_size,
            )
        )
    return crops


def _jitter_box(box: BoundingBox, jitter: float, rng: np.random.Generator, size: int) -> BoundingBox:
    d = rng.uniform(-jitter, jitter, size=4)
    return BoundingBox(
        float(np.clip(box.x_min + d[0], 0, size - 2)),
        float(np.clip(box.y_min + d[1], 0, size - 2)),
        float(np.clip(box.x_max + d[2], box.x_min + d[0] + 1, size)),
        float(np.clip(box.y_max + d[3], box.y_min + d[1] + 1, size)),
    )


def save_crop_manifest(crops: list[Image], out_dir, seed: int = 0) -> dict:
    """Write crop images plus a train-only manifest for GAN training."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i, img in enumerate(crops):
        path = os.path.join(out_dir, f"normal_{i:04d}.ppm")
        save_image(img, path)
        entries.append({"image": path})
    manifest = {"train": entries, "test": [], "seed": seed, "config": {}}
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1)
    return manifest
