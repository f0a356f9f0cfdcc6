"""End-to-end kit inspection: detect per frame, vote, crop the best frame,
score it with the per-kit-type specialist anomaly model.

The crop rule: a square whose side runs from the calliper's left edge to the
disc's right edge, vertically centered on the union of both boxes, clamped
to the frame and resized to the configured output size. The best frame is
the one maximizing the weaker of the two component probabilities (both
detections must be reliable for cropping); ties break to the earliest frame.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import classes
from .anomaly import (
    AnomalyReport,
    CalibrationResult,
    InversionParams,
    anomaly_score,
    load_anomaly_model,
    render_colormap,
)
from .detector import DetectorModel, decode_detections
from .detmetrics import Detection
from .errors import ChainingError, ConfigError, GeometryError
from .imagecore import Image, load_image, resample_region, save_image
from .temporalvote import TIE, UNDECIDED, run_session

VERDICT_PASS = "pass"
VERDICT_ANOMALY = "anomaly"
VERDICT_NONCONFORM = "nonconform"
VERDICT_UNDECIDED = "undecided"


def chain_crop(frame: Image, calliper: Detection | None, disc: Detection | None,
               out_size: int = 200) -> Image:
    """Square crop spanning calliper left edge to disc right edge.

    The square is vertically centered on the union of both boxes and sampled
    at float precision; portions overhanging the frame clamp to the nearest
    edge pixels, so the output is always out_size x out_size.
    """
    if calliper is None or disc is None:
        raise ChainingError("both calliper and disc detections are required for cropping")
    side = disc.box.x_max - calliper.box.x_min
    if side <= 0:
        raise GeometryError(
            f"disc right edge {disc.box.x_max} not right of calliper left edge {calliper.box.x_min}"
        )
    x0 = calliper.box.x_min
    union = calliper.box.union_bounds(disc.box)
    cy = (union.y_min + union.y_max) / 2.0
    y0 = cy - side / 2.0
    return resample_region(frame, x0, y0, side, side, out_size, out_size)


def _group_best(dets: Sequence[Detection], group, threshold: float) -> Detection | None:
    best = None
    for d in dets:
        if d.class_id in group and d.probability >= threshold:
            if best is None or d.probability > best.probability:
                best = d
    return best


def select_best_frame(history: Sequence[Sequence[Detection]], prob_threshold: float) -> int:
    """Frame index maximizing min(calliper prob, disc prob); earliest on ties."""
    best_i, best_v = -1, -1.0
    for i, dets in enumerate(history):
        disc = _group_best(dets, classes.DISC_CLASS_IDS, prob_threshold)
        cal = _group_best(dets, classes.CALLIPER_CLASS_IDS, prob_threshold)
        if disc is None or cal is None:
            continue
        v = min(disc.probability, cal.probability)
        if v > best_v:
            best_i, best_v = i, v
    if best_i < 0:
        raise ChainingError("no frame contains both components above the threshold")
    return best_i


@dataclass
class PipelineConfig:
    detector_model: str
    anomaly_models: dict[int, str]  # kit type -> model dir
    calibrations: dict[int, str]  # kit type -> calibration json
    prob_threshold: float = 0.95
    patience: int = 100
    lam: float = 0.1
    inversion: InversionParams = field(default_factory=InversionParams)
    crop_size: int = 200
    nms_iou: float = 0.5

    def validate(self) -> None:
        if not os.path.isdir(self.detector_model):
            raise ConfigError(f"detector model dir not found: {self.detector_model}")
        for table, kind in ((self.anomaly_models, "anomaly model"), (self.calibrations, "calibration")):
            for t, path in table.items():
                if not os.path.exists(path):
                    raise ConfigError(f"{kind} for kit type {t} not found: {path}")

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path) as f:
            doc = json.load(f)
        config = cls(
            detector_model=doc["detector"],
            anomaly_models={int(k): v for k, v in doc["anomaly_models"].items()},
            calibrations={int(k): v for k, v in doc["calibrations"].items()},
            prob_threshold=float(doc.get("prob_threshold", 0.95)),
            patience=int(doc.get("patience", 100)),
            lam=float(doc.get("lambda", 0.1)),
            inversion=InversionParams.from_dict(doc.get("inversion", {})),
            crop_size=int(doc.get("crop_size", 200)),
            nms_iou=float(doc.get("nms_iou", 0.5)),
        )
        config.validate()
        return config


@dataclass
class KitDecision:
    video: str
    disc_type: int | str  # 1..3, or "undecided"/"tie"
    calliper_type: int | str
    conform: bool | None  # None when the vote did not decide
    best_frame: int | None
    report: AnomalyReport | None
    threshold: float | None
    verdict: str

    def to_json_dict(self) -> dict:
        doc = {
            "video": self.video,
            "disc": self.disc_type,
            "calliper": self.calliper_type,
            "conform": self.conform,
            "best_frame": self.best_frame,
            "verdict": self.verdict,
        }
        if self.report is not None:
            doc["anomaly"] = {
                "score": self.report.score,
                "l_r": self.report.residual_loss,
                "l_d": self.report.discrimination_loss,
                "lambda": self.report.lam,
                "threshold": self.threshold,
            }
        return doc


def _decision_to_type(decision) -> int | str:
    if decision in (UNDECIDED, TIE):
        return decision
    return classes.class_type(decision)


def run_kit_pipeline(
    frames: Sequence[Image],
    config: PipelineConfig,
    video: str = "video",
    out_dir: str | None = None,
    detector: DetectorModel | None = None,
) -> KitDecision:
    """Vote over detector output, check conformity, then score the best crop."""
    config.validate()
    model = detector if detector is not None else DetectorModel.load(config.detector_model)

    def source(frame: Image) -> list[Detection]:
        return decode_detections(
            model.forward(frame), model.grid, config.prob_threshold, nms_iou=config.nms_iou
        )

    result = run_session(
        frames,
        source,
        class_groups={"disc": classes.DISC_CLASS_IDS, "calliper": classes.CALLIPER_CLASS_IDS},
        patience=config.patience,
        prob_threshold=config.prob_threshold,
    )
    disc_t = _decision_to_type(result.decisions["disc"])
    cal_t = _decision_to_type(result.decisions["calliper"])

    if isinstance(disc_t, str) or isinstance(cal_t, str):
        decision = KitDecision(video, disc_t, cal_t, None, None, None, None, VERDICT_UNDECIDED)
    elif disc_t != cal_t:
        decision = KitDecision(video, disc_t, cal_t, False, None, None, None, VERDICT_NONCONFORM)
    else:
        kit_type = disc_t
        if kit_type not in config.anomaly_models or kit_type not in config.calibrations:
            raise ConfigError(f"no specialist model/calibration for kit type {kit_type}")
        best = select_best_frame(result.history, config.prob_threshold)
        crop = chain_crop(
            frames[best],
            _group_best(result.history[best], classes.CALLIPER_CLASS_IDS, config.prob_threshold),
            _group_best(result.history[best], classes.DISC_CLASS_IDS, config.prob_threshold),
            out_size=config.crop_size,
        )
        gen, disc_model = load_anomaly_model(config.anomaly_models[kit_type])
        calibration = CalibrationResult.from_json(config.calibrations[kit_type])
        report = anomaly_score(crop, gen, disc_model, config.lam, config.inversion)
        verdict = VERDICT_ANOMALY if report.score > calibration.threshold else VERDICT_PASS
        decision = KitDecision(
            video, disc_t, cal_t, True, best, report, calibration.threshold, verdict
        )
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            save_image(crop, os.path.join(out_dir, "crop.ppm"))
            save_image(
                render_colormap(report.residual_signed), os.path.join(out_dir, "colormap.ppm")
            )
    # anomaly stage is reached iff the vote decided and the types match
    assert (decision.report is not None) == (decision.conform is True)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "decision.json"), "w") as f:
            json.dump(decision.to_json_dict(), f, indent=1)
    return decision


def load_frames(frames_dir) -> list[Image]:
    """Numbered-frame directory (frame_000000.ppm, ...) to an image list."""
    names = sorted(n for n in os.listdir(frames_dir) if n.endswith((".ppm", ".pgm")))
    if not names:
        raise ChainingError(f"no frames found in {frames_dir}")
    return [load_image(os.path.join(frames_dir, n)) for n in names]


def write_score_csv(rows: list[tuple[str, AnomalyReport, str]], path) -> None:
    """Score report: image,score,l_r,l_d,verdict."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["image", "score", "l_r", "l_d", "verdict"])
        for name, report, verdict in rows:
            w.writerow(
                [
                    name,
                    f"{report.score:.6f}",
                    f"{report.residual_loss:.6f}",
                    f"{report.discrimination_loss:.6f}",
                    verdict,
                ]
            )
