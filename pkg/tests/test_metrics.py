import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wildsynth.analytic import AnalyticStaticField, const_color
from wildsynth.errors import UsageError
from wildsynth.fields import FieldBundle
from wildsynth.metrics import (
    CSV_HEADER,
    MetricsRow,
    evaluate,
    psnr,
    ssim,
    write_metrics_csv,
)
from wildsynth.metrics import SSIM_C1


class TestPsnr:
    def test_identical_images_cap(self):
        img = np.random.default_rng(0).uniform(0, 1, (16, 16, 3))
        assert psnr(img, img) == 100.0

    def test_uniform_mse_001(self):
        a = np.zeros((10, 10))
        b = np.full((10, 10), 0.1)  # mse 0.01 -> 20 dB
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)

    def test_uniform_mse_00025(self):
        a = np.zeros((10, 10))
        b = np.full((10, 10), 0.05)  # mse 0.0025 -> 26.0206 dB
        assert psnr(a, b) == pytest.approx(10 * np.log10(1 / 0.0025), abs=1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(UsageError):
            psnr(np.zeros((4, 4)), np.zeros((4, 5)))

    def test_known_noise_variance(self):
        # uniform noise of known variance lands within 0.5 dB of closed form
        rng = np.random.default_rng(1)
        a = rng.uniform(0.2, 0.8, (256, 256))
        amp = 0.05
        noise = rng.uniform(-amp, amp, a.shape)
        expected = 10 * np.log10(1.0 / (amp ** 2 / 3.0))
        assert psnr(a, np.clip(a + noise, 0, 1)) == pytest.approx(expected, abs=0.5)


class TestSsim:
    def test_identical_images(self):
        img = np.random.default_rng(0).uniform(0, 1, (32, 32))
        assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)

    def test_constant_zero_vs_one_closed_form(self):
        a = np.zeros((16, 16))
        b = np.ones((16, 16))
        assert ssim(a, b) == pytest.approx(SSIM_C1 / (1 + SSIM_C1), abs=1e-6)

    @settings(deadline=None, max_examples=10)
    @given(st.integers(0, 2 ** 31))
    def test_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.uniform(0, 1, (20, 20))
        b = rng.uniform(0, 1, (20, 20))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_bounded_above_by_one(self):
        rng = np.random.default_rng(3)
        a = rng.uniform(0, 1, (24, 24))
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
        val = ssim(a, b)
        assert -1.0 < val < 1.0

    def test_color_uses_luma(self):
        rng = np.random.default_rng(4)
        rgb = rng.uniform(0, 1, (16, 16, 3))
        assert ssim(rgb, rgb) == pytest.approx(1.0, abs=1e-12)

    def test_too_small_image(self):
        with pytest.raises(UsageError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))


class FakeCam:
    width = height = 24
    fx = fy = 24.0
    cx = cy = 12.0
    near, far = 0.1, 1.2


class TestEvaluate:
    def make_dataset(self, tmp_path):
        from wildsynth.sceneio import synth_scene

        ds, _ = synth_scene(tmp_path / "s", preset="static", resolution=24,
                            num_times=1, num_cameras=2, seed=0, holdout="view")
        return ds

    def test_empty_split_rejected(self, tmp_path):
        ds = self.make_dataset(tmp_path)
        ds.splits["empty"] = []
        bundle = FieldBundle(static=AnalyticStaticField(
            lambda x: np.zeros(x.shape[:-1]), const_color([0, 0, 0])))
        with pytest.raises(UsageError):
            evaluate(bundle, None, ds, "empty")

    def test_deterministic_and_plausible(self, tmp_path):
        ds = self.make_dataset(tmp_path)
        bundle = FieldBundle(static=AnalyticStaticField(
            lambda x: np.zeros(x.shape[:-1]), const_color([0, 0, 0])),
            scene_box=ds.scene_box)
        a = evaluate(bundle, None, ds, "train", n_samples=8)
        b = evaluate(bundle, None, ds, "train", n_samples=8)
        assert (a.psnr, a.ssim) == (b.psnr, b.ssim)
        assert a.frames == len(ds.splits["train"])
        assert a.config == "full"

    def test_csv_format(self, tmp_path):
        rows = [MetricsRow("scene_a", "test", "full", 31.5, 0.95, 3),
                MetricsRow("scene_a", "test", "background", 12.0, 0.2, 3)]
        path = tmp_path / "m.csv"
        write_metrics_csv(rows, path)
        lines = path.read_text().splitlines()
        assert lines[0] == CSV_HEADER
        assert lines[1] == "scene_a,test,full,31.5000,0.950000,,3"
        assert len(lines) == 3
