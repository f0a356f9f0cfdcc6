import itertools
import json

import numpy as np
import pytest

from lineinspect import classes
from lineinspect.errors import ValidationError
from lineinspect.synthline import (
    DatasetConfig,
    DefectSpec,
    PartSpec,
    VideoScript,
    linear_script,
    make_dataset,
    make_normal_crops,
    render_kit_frame,
    render_part,
    render_video,
    write_video,
)


class TestPartSpecs:
    def test_unknown_part_rejected(self):
        with pytest.raises(ValidationError):
            PartSpec("disc", 9)

    def test_class_ids_cover_catalog(self):
        ids = sorted(
            PartSpec(k, t).class_id for k in ("disc", "calliper") for t in (1, 2, 3)
        )
        assert ids == list(range(classes.NUM_CLASSES))


class TestRenderPart:
    def test_deterministic(self):
        a, _ = render_part(PartSpec("disc", 2), seed=9)
        b, _ = render_part(PartSpec("disc", 2), seed=9)
        assert np.array_equal(a.pixels, b.pixels)

    def test_seed_changes_noise(self):
        a, _ = render_part(PartSpec("disc", 2), seed=9)
        b, _ = render_part(PartSpec("disc", 2), seed=10)
        assert not np.array_equal(a.pixels, b.pixels)

    def test_box_bounds_all_part_pixels(self):
        # oracle: part pixels are exactly those differing from a part-free render
        for kind, t in (("disc", 1), ("disc", 3), ("calliper", 2)):
            img, box = render_part(PartSpec(kind, t), seed=4)
            blank, _ = render_part(PartSpec(kind, t), seed=4)
            # re-render with the part pushed fully out of frame is not possible,
            # so compare against the known background+noise construction instead
            rng = np.random.default_rng(4)
            background = np.full((32, 32, 3), 0.45)
            noise = rng.uniform(-0.035, 0.035, size=(32, 32, 1))
            bg_img = np.clip(background + noise, 0, 1)
            diff = np.abs(img.pixels - bg_img).max(axis=2) > 1e-12
            ys, xs = np.nonzero(diff)
            assert xs.min() >= box.x_min and xs.max() < box.x_max
            assert ys.min() >= box.y_min and ys.max() < box.y_max

    def test_classes_pairwise_separable(self):
        renders = {}
        for kind in ("disc", "calliper"):
            for t in (1, 2, 3):
                img, _ = render_part(PartSpec(kind, t), seed=0)
                renders[(kind, t)] = img.pixels
        for a, b in itertools.combinations(renders, 2):
            assert np.abs(renders[a] - renders[b]).mean() > 0.05

    def test_too_small_canvas_rejected(self):
        with pytest.raises(ValidationError):
            render_part(PartSpec("disc", 1), size=8)

    def test_defect_changes_only_defect_region(self):
        defect = DefectSpec("blob", 4.5, 0.0, 5.0, -0.4)
        clean, _ = render_part(PartSpec("disc", 2), seed=3)
        dirty, _ = render_part(PartSpec("disc", 2), defects=(defect,), seed=3)
        diff = np.abs(clean.pixels - dirty.pixels).max(axis=2)
        ys, xs = np.nonzero(diff > 1e-12)
        assert len(xs) > 0
        cx, cy = 16.0 + 4.5, 16.0
        dist = np.hypot(xs + 0.5 - cx, ys + 0.5 - cy)
        assert dist.max() <= 2.5 + 1e-9  # radius of the blob

    def test_defect_outside_part_rejected(self):
        with pytest.raises(ValidationError):
            render_part(PartSpec("disc", 1), defects=(DefectSpec("blob", 14.0, 0.0, 3.0, 0.5),))

    def test_defect_in_disc_hole_rejected(self):
        with pytest.raises(ValidationError):
            render_part(PartSpec("disc", 2), defects=(DefectSpec("blob", 0.0, 0.0, 3.0, 0.5),))

    def test_tiny_defect_rejected(self):
        with pytest.raises(ValidationError):
            DefectSpec("blob", 0, 0, 0.5, 0.5)


class TestVideos:
    def test_frame_count_matches_script(self):
        script = linear_script(12, -2, 2, seed=1)
        frames, anns = render_video(PartSpec("disc", 1), PartSpec("calliper", 1), script)
        assert len(frames) == 12 and len(anns) == 12

    def test_single_zero_motion_frame_matches_kit_render(self):
        script = VideoScript((0.0,), seed=5)
        frames, anns = render_video(PartSpec("disc", 3), PartSpec("calliper", 3), script)
        img, gts = render_kit_frame(
            PartSpec("disc", 3), PartSpec("calliper", 3), seed=_first_frame_seed(5), x_offset=0.0
        )
        assert np.array_equal(frames[0].pixels, img.pixels)
        assert anns[0] == gts

    def test_occlusion_clips_gt_box(self):
        base = render_kit_frame(PartSpec("disc", 1), PartSpec("calliper", 1), x_offset=0.0)[1]
        shifted = render_kit_frame(PartSpec("disc", 1), PartSpec("calliper", 1), x_offset=8.0)[1]
        disc_id = classes.disc_class(1)
        full = dict(base)[disc_id]
        clipped = dict(shifted)[disc_id]
        assert clipped.x_max == 32.0
        assert clipped.area < full.area

    def test_part_never_visible_rejected(self):
        script = VideoScript((-100.0, -90.0), seed=0)
        with pytest.raises(ValidationError):
            render_video(PartSpec("disc", 1), PartSpec("calliper", 1), script)

    def test_write_video_layout(self, tmp_path):
        script = linear_script(3, -1, 1, seed=2)
        frames, anns = render_video(PartSpec("disc", 2), PartSpec("calliper", 2), script)
        paths = write_video(frames, anns, tmp_path / "vid")
        assert len(paths) == 3
        assert (tmp_path / "vid" / "frame_000000.ppm").exists()
        assert (tmp_path / "vid" / "frame_000002.json").exists()


def _first_frame_seed(base):
    return int(np.random.SeedSequence([base, 0]).generate_state(1)[0])


class TestDataset:
    def test_counts(self, tmp_path):
        config = DatasetConfig(train_per_class=2, test_per_class=1)
        manifest = make_dataset(config, tmp_path / "ds", seed=1)
        assert len(manifest["train"]) == 12  # 2 x 6 classes
        assert len(manifest["test"]) == 6

    def test_paper_scale_counts(self, tmp_path):
        config = DatasetConfig(train_per_class=20, test_per_class=15)
        manifest = make_dataset(config, tmp_path / "ds", seed=1)
        assert len(manifest["train"]) == 120
        assert len(manifest["test"]) == 90

    def test_same_seed_identical_manifest(self, tmp_path):
        config = DatasetConfig(train_per_class=1, test_per_class=1)
        make_dataset(config, tmp_path / "a", seed=5)
        make_dataset(config, tmp_path / "b", seed=5)
        a = (tmp_path / "a" / "manifest.json").read_text().replace(str(tmp_path / "a"), "X")
        b = (tmp_path / "b" / "manifest.json").read_text().replace(str(tmp_path / "b"), "X")
        assert a == b
        img_a = (tmp_path / "a" / "train_0001.ppm").read_bytes()
        img_b = (tmp_path / "b" / "train_0001.ppm").read_bytes()
        assert img_a == img_b

    def test_zero_classes_rejected(self):
        with pytest.raises(ValidationError):
            DatasetConfig(class_ids=())

    def test_annotations_are_valid(self, tmp_path):
        from lineinspect.detmetrics import load_annotations

        config = DatasetConfig(train_per_class=1, test_per_class=1, kit_scenes_per_type=1)
        manifest = make_dataset(config, tmp_path / "ds", seed=2)
        for entry in manifest["train"] + manifest["test"]:
            _, objs = load_annotations(entry["ann"])
            assert objs
            for o in objs:
                assert 0 <= o.class_id < classes.NUM_CLASSES
                assert o.probability is None
                assert 0 <= o.box.x_min < o.box.x_max <= config.image_size
                assert 0 <= o.box.y_min < o.box.y_max <= config.image_size


class TestNormalCrops:
    def test_crop_count_and_shape(self):
        crops = make_normal_crops(kit_type=1, count=3, crop_size=24, seed=0)
        assert len(crops) == 3
        assert all(c.pixels.shape == (24, 24, 3) for c in crops)

    def test_deterministic(self):
        a = make_normal_crops(kit_type=2, count=2, crop_size=24, seed=3)
        b = make_normal_crops(kit_type=2, count=2, crop_size=24, seed=3)
        assert np.array_equal(a[0].pixels, b[0].pixels)
        assert np.array_equal(a[1].pixels, b[1].pixels)

    def test_defect_crops_differ(self):
        clean = make_normal_crops(kit_type=2, count=1, crop_size=32, jitter=0.0, seed=7)[0]
        defect = DefectSpec("blob", 4.5, 0.0, 6.0, 0.9)
        dirty = make_normal_crops(
            kit_type=2, count=1, crop_size=32, jitter=0.0, seed=7, disc_defects=(defect,)
        )[0]
        changed = (np.abs(clean.pixels - dirty.pixels).max(axis=2) > 0.05).sum()
        assert changed >= 0.04 * 32 * 32  # defect area at least 4% of the crop
