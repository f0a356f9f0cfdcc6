import json

import numpy as np
import pytest

from lineinspect.detmetrics import BoundingBox, Detection
from lineinspect.errors import ChainingError, ConfigError, GeometryError
from lineinspect.imagecore import Image
from lineinspect.pipeline import (
    PipelineConfig,
    chain_crop,
    load_frames,
    select_best_frame,
    write_score_csv,
)


def frame_image(h=40, w=40, seed=0):
    return Image(np.random.default_rng(seed).uniform(0, 1, (h, w, 3)))


def det(x0, y0, x1, y1, cls=0, prob=0.99):
    return Detection(BoundingBox(x0, y0, x1, y1), cls, prob)


class TestChainCrop:
    def test_side_from_calliper_left_to_disc_right(self):
        frame = Image(np.zeros((200, 200, 3)))
        calliper = det(10, 80, 40, 120, cls=3)
        disc = det(60, 80, 110, 130, cls=0)
        out = chain_crop(frame, calliper, disc, out_size=100)
        # side 100 anchored at x=10; output is always out_size squared
        assert out.pixels.shape == (100, 100, 3)

    def test_crop_content_matches_expected_window(self):
        rng = np.random.default_rng(5)
        frame = Image(rng.uniform(0, 1, (64, 64, 3)))
        calliper = det(8, 24, 20, 40, cls=3)
        disc = det(28, 24, 40, 40, cls=0)
        # side 32, x0 8, union y-center 32 -> window [8, 40) x [16, 48)
        out = chain_crop(frame, calliper, disc, out_size=32)
        assert np.allclose(out.pixels, frame.pixels[16:48, 8:40], atol=1e-12)

    def test_missing_detection_raises_chaining_error(self):
        frame = frame_image()
        with pytest.raises(ChainingError):
            chain_crop(frame, None, det(5, 5, 15, 15))
        with pytest.raises(ChainingError):
            chain_crop(frame, det(5, 5, 15, 15), None)

    def test_nonpositive_side_raises_geometry_error(self):
        frame = frame_image()
        calliper = det(30, 5, 39, 15, cls=3)
        disc = det(2, 5, 12, 15, cls=0)  # disc right edge left of calliper
        with pytest.raises(GeometryError):
            chain_crop(frame, calliper, disc)

    def test_overhanging_window_still_full_size(self):
        frame = frame_image(h=20, w=40, seed=2)
        calliper = det(2, 2, 12, 18, cls=3)
        disc = det(20, 2, 38, 18, cls=0)  # side 36 > frame height 20
        out = chain_crop(frame, calliper, disc, out_size=24)
        assert out.pixels.shape == (24, 24, 3)

    def test_deterministic(self):
        frame = frame_image(seed=9)
        calliper = det(4, 10, 14, 30, cls=3)
        disc = det(20, 10, 36, 30, cls=0)
        a = chain_crop(frame, calliper, disc, out_size=16)
        b = chain_crop(frame, calliper, disc, out_size=16)
        assert np.array_equal(a.pixels, b.pixels)


class TestSelectBestFrame:
    def test_single_qualifying_frame(self):
        history = [
            [det(0, 0, 5, 5, cls=0, prob=0.99)],  # disc only
            [det(0, 0, 5, 5, cls=0, prob=0.99), det(6, 0, 11, 5, cls=3, prob=0.98)],
        ]
        assert select_best_frame(history, 0.95) == 1

    def test_maximizes_weaker_probability(self):
        history = [
            [det(0, 0, 5, 5, cls=0, prob=0.96), det(6, 0, 11, 5, cls=3, prob=0.99)],
            [det(0, 0, 5, 5, cls=1, prob=0.98), det(6, 0, 11, 5, cls=4, prob=0.97)],
        ]
        # min-prob: frame0 = 0.96, frame1 = 0.97
        assert select_best_frame(history, 0.95) == 1

    def test_tie_breaks_to_earliest(self):
        frame = [det(0, 0, 5, 5, cls=0, prob=0.98), det(6, 0, 11, 5, cls=3, prob=0.98)]
        assert select_best_frame([frame, list(frame)], 0.95) == 0

    def test_no_qualifying_frame_raises(self):
        history = [[det(0, 0, 5, 5, cls=0, prob=0.99)]] * 3  # never both groups
        with pytest.raises(ChainingError):
            select_best_frame(history, 0.95)

    def test_sub_threshold_detections_do_not_qualify(self):
        history = [[det(0, 0, 5, 5, cls=0, prob=0.5), det(6, 0, 11, 5, cls=3, prob=0.99)]]
        with pytest.raises(ChainingError):
            select_best_frame(history, 0.95)


class TestConfig:
    def write_config(self, tmp_path, **overrides):
        detector_dir = tmp_path / "det"
        detector_dir.mkdir(exist_ok=True)
        model_dir = tmp_path / "anomaly1"
        model_dir.mkdir(exist_ok=True)
        calib = tmp_path / "calib1.json"
        calib.write_text("{}")
        doc = {
            "detector": str(detector_dir),
            "anomaly_models": {"1": str(model_dir)},
            "calibrations": {"1": str(calib)},
            "prob_threshold": 0.95,
            "patience": 100,
            "lambda": 0.1,
            "inversion": {"iters": 50, "step_size": 0.05, "decay": 0.97, "seed": 0},
            "crop_size": 32,
        }
        doc.update(overrides)
        path = tmp_path / "config.json"
        path.write_text(json.dumps(doc))
        return path

    def test_load_valid(self, tmp_path):
        config = PipelineConfig.load(self.write_config(tmp_path))
        assert config.lam == 0.1
        assert config.crop_size == 32
        assert config.anomaly_models == {1: str(tmp_path / "anomaly1")}
        assert config.inversion.iters == 50

    def test_missing_detector_rejected(self, tmp_path):
        path = self.write_config(tmp_path, detector=str(tmp_path / "nope"))
        with pytest.raises(ConfigError):
            PipelineConfig.load(path)

    def test_missing_calibration_rejected(self, tmp_path):
        path = self.write_config(tmp_path, calibrations={"1": str(tmp_path / "nope.json")})
        with pytest.raises(ConfigError):
            PipelineConfig.load(path)


class TestFrameLoading:
    def test_loads_sorted_frames(self, tmp_path):
        from lineinspect.imagecore import save_image

        d = tmp_path / "vid"
        d.mkdir()
        for i in (2, 0, 1):
            # 51/255 per step quantizes exactly in 8-bit
            save_image(Image(np.full((4, 4, 3), i * 51 / 255)), d / f"frame_{i:06d}.ppm")
        frames = load_frames(d)
        assert len(frames) == 3
        assert frames[0].pixels[0, 0, 0] == 0.0
        assert frames[2].pixels[0, 0, 0] == pytest.approx(102 / 255)

    def test_empty_dir_rejected(self, tmp_path):
        d = tmp_path / "vid"
        d.mkdir()
        with pytest.raises(ChainingError):
            load_frames(d)


class TestScoreCsv:
    def test_format(self, tmp_path):
        from lineinspect.anomaly import AnomalyReport

        report = AnomalyReport(
            score=1.5, residual_loss=1.4, discrimination_loss=2.4, lam=0.1,
            best_z=np.zeros(4), residual_signed=np.zeros((2, 2, 3)),
        )
        p = tmp_path / "scores.csv"
        write_score_csv([("img.ppm", report, "anomaly")], p)
        lines = p.read_text().strip().splitlines()
        assert lines[0] == "image,score,l_r,l_d,verdict"
        assert lines[1] == "img.ppm,1.500000,1.400000,2.400000,anomaly"
