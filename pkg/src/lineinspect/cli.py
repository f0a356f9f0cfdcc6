"""Command-line interface for the inspection pipeline.

Exit codes: 0 ok, 1 validation error, 2 I/O error, 3 verdict was
anomaly/nonconform (scriptable).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import classes
from .anomaly import (
    CalibrationResult,
    InversionParams,
    anomaly_score,
    calibrate_threshold,
    load_anomaly_model,
    render_colormap,
    save_anomaly_model,
    train_gan,
)
from .detector import DetectorModel, TrainSample, decode_detections, train_detector
from .detmetrics import ground_truth_pairs, load_annotations, pr_sweep, write_metrics_csv
from .errors import FormatError, InspectError, ValidationError
from .imagecore import load_image, save_image
from .neuralnet import AdamParams
from .pipeline import (
    VERDICT_ANOMALY,
    VERDICT_NONCONFORM,
    PipelineConfig,
    load_frames,
    run_kit_pipeline,
    write_score_csv,
)
from .segpatch import ClassPalette, decode_labelmap, evaluate_segmentation
from .synthline import (
    DatasetConfig,
    DefectSpec,
    PartSpec,
    linear_script,
    make_dataset,
    make_normal_crops,
    render_video,
    save_crop_manifest,
    write_video,
)
from .temporalvote import run_session, write_count_csv, write_decision_json

log = logging.getLogger("lineinspect")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_VERDICT = 3


def _load_manifest(path) -> dict:
    with open(path) as f:
        return json.load(f)


def _load_train_samples(manifest: dict, split: str = "train") -> list[TrainSample]:
    samples = []
    for entry in manifest[split]:
        img = load_image(entry["image"])
        _, objs = load_annotations(entry["ann"])
        samples.append(TrainSample(img, tuple(ground_truth_pairs(objs))))
    return samples


def cmd_synth(args) -> int:
    with open(args.config) as f:
        config = json.load(f)
    os.makedirs(args.out, exist_ok=True)
    if "detection" in config:
        manifest = make_dataset(
            DatasetConfig.from_dict(config["detection"]),
            os.path.join(args.out, "detection"),
            seed=args.seed,
        )
        log.info("detection set: %d train / %d test", len(manifest["train"]), len(manifest["test"]))
    if "normals" in config:
        spec = config["normals"]
        for t in classes.PART_TYPES:
            crops = make_normal_crops(
                kit_type=t,
                count=int(spec.get("per_type", 64)),
                crop_size=int(spec.get("crop_size", 32)),
                frame_size=int(spec.get("frame_size", 32)),
                jitter=float(spec.get("jitter", 0.8)),
                seed=args.seed + t,
            )
            save_crop_manifest(crops, os.path.join(args.out, "normals", f"type{t}"), seed=args.seed + t)
        log.info("normal crops written for %d kit types", len(classes.PART_TYPES))
    for video in config.get("videos", []):
        defects = ()
        if video.get("defect"):
            d = video["defect"]
            defects = (DefectSpec(d["kind"], d["dx"], d["dy"], d["size"], d["delta"]),)
        script = linear_script(
            int(video.get("frames", 40)),
            float(video.get("x_start", -3.0)),
            float(video.get("x_end", 3.0)),
            seed=args.seed + int(video.get("seed_offset", 0)),
        )
        frames, anns = render_video(
            PartSpec("disc", int(video["disc_type"])),
            PartSpec("calliper", int(video["calliper_type"])),
            script,
            size=int(video.get("size", 32)),
            disc_defects=defects,
        )
        write_video(frames, anns, os.path.join(args.out, "videos", video["name"]))
        log.info("video %s: %d frames", video["name"], len(frames))
    return EXIT_OK


def cmd_train_detector(args) -> int:
    manifest = _load_manifest(args.manifest)
    samples = _load_train_samples(manifest)
    model, loss_log = train_detector(
        samples,
        steps=args.steps,
        batch=args.batch,
        adam_params=AdamParams(lr=args.lr),
        seed=args.seed,
        box_weight=args.box_weight,
    )
    model.save(args.out)
    log.info("final loss %.4f -> %s", loss_log[-1], args.out)
    return EXIT_OK


def cmd_detect_eval(args) -> int:
    model = DetectorModel.load(args.model)
    manifest = _load_manifest(args.manifest)
    entries = manifest["test"] or manifest["train"]
    thresholds = [float(t) for t in args.thresholds.split(",") if t.strip()]
    preds, gts = [], []
    for entry in entries:
        img = load_image(entry["image"])
        _, objs = load_annotations(entry["ann"])
        gts.append(ground_truth_pairs(objs))
        raw = model.forward(img)
        preds.append(decode_detections(raw, model.grid, 0.0, nms_iou=args.nms_iou))
    rows = pr_sweep(preds, gts, thresholds)
    write_metrics_csv(rows, args.report)
    log.info("report with %d thresholds x %d images -> %s", len(thresholds), len(entries), args.report)
    return EXIT_OK


def cmd_video_vote(args) -> int:
    model = DetectorModel.load(args.model)
    frames = load_frames(args.frames)

    def source(img):
        return decode_detections(model.forward(img), model.grid, args.threshold)

    result = run_session(
        frames,
        source,
        class_groups={"disc": classes.DISC_CLASS_IDS, "calliper": classes.CALLIPER_CLASS_IDS},
        patience=args.patience,
        prob_threshold=args.threshold,
    )
    video = os.path.basename(os.path.normpath(args.frames))
    decisions = {
        name: d if isinstance(d, str) else classes.class_type(d)
        for name, d in result.decisions.items()
    }
    write_decision_json(video, decisions, args.report)
    if args.counts_csv:
        write_count_csv(result, video, args.counts_csv)
    log.info("decision %s -> %s", decisions, args.report)
    return EXIT_OK


def cmd_train_gan(args) -> int:
    manifest = _load_manifest(args.manifest)
    normals = [load_image(e["image"]) for e in manifest["train"]]
    gen, disc, losses = train_gan(
        normals,
        steps=args.steps,
        batch=args.batch,
        d_adam=AdamParams(lr=args.d_lr, beta1=args.d_beta1),
        g_adam=AdamParams(lr=args.g_lr, beta1=args.g_beta1),
        seed=args.seed,
        z_dim=args.z_dim,
    )
    save_anomaly_model(gen, disc, args.out)
    log.info("final d/g loss %.4f/%.4f -> %s", losses[-1][0], losses[-1][1], args.out)
    return EXIT_OK


def _inversion_from_args(args) -> InversionParams:
    return InversionParams(
        iters=args.iters, step_size=args.step_size, decay=args.decay, seed=args.inv_seed
    )


def cmd_calibrate(args) -> int:
    gen, disc = load_anomaly_model(args.model)
    manifest = _load_manifest(args.manifest)
    normals = [load_image(e["image"]) for e in manifest["train"]]
    result = calibrate_threshold(
        gen, disc, normals, lam=args.lam, inversion=_inversion_from_args(args)
    )
    result.to_json(args.out)
    log.info("threshold %.4f over %d images -> %s", result.threshold, result.sample_count, args.out)
    return EXIT_OK


def cmd_score(args) -> int:
    gen, disc = load_anomaly_model(args.model)
    calibration = CalibrationResult.from_json(args.calibration)
    img = load_image(args.image)
    report = anomaly_score(
        img, gen, disc, lam=calibration.lam, inversion=_inversion_from_args(args)
    )
    verdict = "anomaly" if report.score > calibration.threshold else "normal"
    if args.colormap:
        save_image(render_colormap(report.residual_signed), args.colormap)
    print("image,score,l_r,l_d,verdict")
    print(
        f"{args.image},{report.score:.6f},{report.residual_loss:.6f},"
        f"{report.discrimination_loss:.6f},{verdict}"
    )
    if args.report:
        write_score_csv([(str(args.image), report, verdict)], args.report)
    return EXIT_VERDICT if verdict == "anomaly" else EXIT_OK


def cmd_seg_eval(args) -> int:
    palette = ClassPalette.load(args.palette)
    names = sorted(n for n in os.listdir(args.pred) if n.endswith((".ppm", ".pgm")))
    if not names:
        raise ValidationError(f"no prediction images in {args.pred}")
    preds, gts = [], []
    for name in names:
        gt_path = os.path.join(args.gt, name)
        if not os.path.exists(gt_path):
            raise ValidationError(f"missing ground truth for {name}")
        preds.append(decode_labelmap(load_image(os.path.join(args.pred, name)), palette))
        gts.append(decode_labelmap(load_image(gt_path), palette))
    miou, table = evaluate_segmentation(preds, gts, num_classes=len(palette))
    with open(args.report, "w") as f:
        f.write("class,iou\n")
        for c, v in sorted(table.items()):
            f.write(f"{c},{v:.6f}\n")
        f.write(f"mean,{miou:.6f}\n")
    log.info("mIoU %.4f over %d images -> %s", miou, len(preds), args.report)
    return EXIT_OK


def cmd_run_pipeline(args) -> int:
    config = PipelineConfig.load(args.config)
    frames = load_frames(args.frames)
    video = os.path.basename(os.path.normpath(args.frames))
    decision = run_kit_pipeline(frames, config, video=video, out_dir=args.out)
    log.info("verdict %s (disc %s, calliper %s)", decision.verdict, decision.disc_type, decision.calliper_type)
    print(json.dumps(decision.to_json_dict()))
    if decision.verdict in (VERDICT_ANOMALY, VERDICT_NONCONFORM):
        return EXIT_VERDICT
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lineinspect", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic datasets, normals, and videos")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-detector", help="train the anchor detector")
    p.add_argument("--manifest", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--box-weight", type=float, default=2.0)
    p.set_defaults(func=cmd_train_detector)

    p = sub.add_parser("detect-eval", help="precision/recall sweep over thresholds")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--thresholds", required=True, help='comma list, e.g. "0.6,0.65,0.7"')
    p.add_argument("--report", required=True)
    p.add_argument("--nms-iou", type=float, default=0.5)
    p.set_defaults(func=cmd_detect_eval)

    p = sub.add_parser("video-vote", help="majority-vote a frame directory")
    p.add_argument("--model", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--patience", type=int, default=100)
    p.add_argument("--threshold", type=float, default=0.95)
    p.add_argument("--report", required=True)
    p.add_argument("--counts-csv", default=None)
    p.set_defaults(func=cmd_video_vote)

    p = sub.add_parser("train-gan", help="train a specialist anomaly model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--z-dim", type=int, default=100)
    p.add_argument("--d-lr", type=float, default=1e-5)
    p.add_argument("--d-beta1", type=float, default=0.1)
    p.add_argument("--g-lr", type=float, default=2e-4)
    p.add_argument("--g-beta1", type=float, default=0.5)
    p.set_defaults(func=cmd_train_gan)

    p = sub.add_parser("calibrate", help="max-score threshold over normal images")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--out", required=True)
    _add_inversion_flags(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("score", help="score one image against a calibration")
    p.add_argument("--model", required=True)
    p.add_argument("--calibration", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--colormap", default=None)
    p.add_argument("--report", default=None)
    _add_inversion_flags(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("seg-eval", help="dataset mIoU from palette label maps")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--palette", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_seg_eval)

    p = sub.add_parser("run-pipeline", help="full detect/vote/crop/anomaly run")
    p.add_argument("--config", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run_pipeline)

    return parser


def _add_inversion_flags(p) -> None:
    p.add_argument("--iters", type=int, default=300)
    p.add_argument("--step-size", type=float, default=0.05)
    p.add_argument("--decay", type=float, default=0.97)
    p.add_argument("--inv-seed", type=int, default=0)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FormatError as e:
        log.error("%s", e)
        return EXIT_IO
    except OSError as e:
        log.error("%s", e)
        return EXIT_IO
    except InspectError as e:
        log.error("%s", e)
        return EXIT_VALIDATION


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
