import numpy as np
import pytest

from wildsynth.cli import main
from wildsynth.sceneio import load_dataset

TOY_FLAGS = [
    "--rays-per-batch", "48", "--samples-per-ray", "12", "--warmup-prune", "100000",
    "--grid-resolution", "8", "--hash-levels", "2", "--hash-table-log2", "10",
    "--hash-base-resolution", "4", "--hash-growth", "2.0", "--hidden", "16",
    "--geo-features", "7", "--pos-bands", "2", "--dir-bands", "2", "--time-bands", "2",
]


def synth(out, preset="translate", times="3", cameras="2", res="20", seed="0",
          holdout="none"):
    rc = main(["synth", "--out", str(out), "--preset", preset, "--resolution", res,
               "--times", times, "--cameras", cameras, "--seed", seed,
               "--holdout", holdout])
    assert rc == 0


def train(data, ckpt, iters="5", extra=()):
    rc = main(["train", "--data", str(data), "--out", str(ckpt), "--iters", iters,
               "--seed", "7", "--deterministic", *TOY_FLAGS, *extra])
    return rc


class TestSynth:
    def test_static_scene_zero_masks(self, tmp_path):
        synth(tmp_path / "d", preset="static", times="1", cameras="1")
        ds = load_dataset(tmp_path / "d")
        assert not ds.load_mask(0).any()

    def test_same_seed_byte_identical(self, tmp_path):
        synth(tmp_path / "a", seed="3")
        synth(tmp_path / "b", seed="3")
        files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*"))
        files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*"))
        assert files_a == files_b
        for rel in files_a:
            if (tmp_path / "a" / rel).is_file():
                assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_deform_preset_has_motion(self, tmp_path):
        synth(tmp_path / "d", preset="deform", times="3", cameras="1")
        ds = load_dataset(tmp_path / "d")
        assert any(ds.load_mask(i).any() for i in range(len(ds.frames)))

    def test_unknown_flag_exits_2(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as e:
            main(["synth", "--out", str(tmp_path / "d"), "--wat"])
        assert e.value.code == 2


class TestTrain:
    def test_iters_zero_writes_initial_checkpoint(self, tmp_path, capsys):
        synth(tmp_path / "d", preset="static", times="1", cameras="1")
        rc = train(tmp_path / "d", tmp_path / "c.wnrf", iters="0")
        assert rc == 0
        assert (tmp_path / "c.wnrf").exists()
        csv = (tmp_path / "c.wnrf.loss.csv").read_text().splitlines()
        assert csv == ["iter,l_static,l_sceneflow,l_total,lr,wall_ms"]
        assert "trained 0 iterations" in capsys.readouterr().out

    def test_deterministic_runs_identical_csv(self, tmp_path):
        synth(tmp_path / "d")
        assert train(tmp_path / "d", tmp_path / "a.wnrf", iters="6") == 0
        assert train(tmp_path / "d", tmp_path / "b.wnrf", iters="6") == 0
        assert (tmp_path / "a.wnrf.loss.csv").read_bytes() == \
            (tmp_path / "b.wnrf.loss.csv").read_bytes()

    def test_missing_dataset_exits_1(self, tmp_path, capsys):
        rc = train(tmp_path / "nope", tmp_path / "c.wnrf")
        assert rc == 1
        assert capsys.readouterr().err.startswith("error:")

    def test_ablate_flag_recorded(self, tmp_path):
        from wildsynth.training import checkpoint_load

        synth(tmp_path / "d")
        assert train(tmp_path / "d", tmp_path / "c.wnrf", iters="2",
                     extra=["--ablate", "deformation"]) == 0
        state = checkpoint_load(tmp_path / "c.wnrf")
        assert state.config.ablation == "deformation"
        assert state.bundle.ablation == "deformation"

    def test_config_file_layering(self, tmp_path):
        from wildsynth.training import checkpoint_load

        synth(tmp_path / "d", preset="static", times="1", cameras="1")
        cfg = tmp_path / "run.toml"
        cfg.write_text("[train]\nrays_per_batch = 32\nhidden = 24\n")
        rc = main(["train", "--data", str(tmp_path / "d"), "--out",
                   str(tmp_path / "c.wnrf"), "--iters", "0", "--config", str(cfg),
                   "--hidden", "16", "--samples-per-ray", "12", "--warmup-prune", "10",
                   "--grid-resolution", "8", "--hash-levels", "2",
                   "--hash-table-log2", "10", "--hash-base-resolution", "4",
                   "--hash-growth", "2.0", "--geo-features", "7",
                   "--pos-bands", "2", "--dir-bands", "2", "--time-bands", "2"])
        assert rc == 0
        state = checkpoint_load(tmp_path / "c.wnrf")
        assert state.config.rays_per_batch == 32  # from file
        assert state.config.hidden == 16          # flag overrides file

    def test_bad_config_key_exits_1(self, tmp_path, capsys):
        synth(tmp_path / "d", preset="static", times="1", cameras="1")
        cfg = tmp_path / "run.toml"
        cfg.write_text("[train]\nswag = 9\n")
        rc = main(["train", "--data", str(tmp_path / "d"), "--out",
                   str(tmp_path / "c.wnrf"), "--config", str(cfg)])
        assert rc == 1
        assert "swag" in capsys.readouterr().err


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_run")
    synth(root / "d", times="3", cameras="2", holdout="time")
    assert train(root / "d", root / "c.wnrf", iters="250") == 0
    return root


class TestRenderEval:

    def test_render_writes_png_and_depth(self, trained):
        rc = main(["render", "--ckpt", str(trained / "c.wnrf"), "--data",
                   str(trained / "d"), "--camera", "0", "--time", "1",
                   "--out", str(trained / "r.png"), "--depth", str(trained / "r.pfm"),
                   "--samples", "12"])
        assert rc == 0
        from wildsynth.sceneio import read_image_linear, read_pfm

        img = read_image_linear(trained / "r.png")
        assert img.shape == (20, 20, 3)
        assert read_pfm(trained / "r.pfm").shape == (20, 20)

    def test_render_time_sweep_distinct_files(self, trained):
        outs = []
        for t in range(3):
            out = trained / f"sweep_{t}.png"
            rc = main(["render", "--ckpt", str(trained / "c.wnrf"), "--data",
                       str(trained / "d"), "--camera", "0", "--time", str(t),
                       "--out", str(out), "--samples", "12"])
            assert rc == 0
            outs.append(out.read_bytes())
        assert len({o for o in outs}) == len(outs)

    def test_render_camera_out_of_range(self, trained, capsys):
        rc = main(["render", "--ckpt", str(trained / "c.wnrf"), "--data",
                   str(trained / "d"), "--camera", "9", "--time", "0",
                   "--out", str(trained / "x.png")])
        assert rc == 1
        assert capsys.readouterr().err.startswith("error:")

    def test_render_missing_checkpoint_names_path(self, trained, capsys):
        rc = main(["render", "--ckpt", str(trained / "ghost.wnrf"), "--data",
                   str(trained / "d"), "--out", str(trained / "x.png")])
        assert rc == 1
        assert "ghost.wnrf" in capsys.readouterr().err

    def test_eval_writes_csv(self, trained, capsys):
        rc = main(["eval", "--ckpt", str(trained / "c.wnrf"), "--data",
                   str(trained / "d"), "--split", "test", "--out",
                   str(trained / "m.csv"), "--samples", "12"])
        assert rc == 0
        lines = (trained / "m.csv").read_text().splitlines()
        assert lines[0] == "scene,split,config,psnr,ssim,lpips,frames"
        assert len(lines) == 2

    def test_eval_empty_split_exits_1(self, tmp_path, capsys):
        synth(tmp_path / "d", times="3", cameras="1", holdout="none")
        assert train(tmp_path / "d", tmp_path / "c.wnrf", iters="2") == 0
        rc = main(["eval", "--ckpt", str(tmp_path / "c.wnrf"), "--data",
                   str(tmp_path / "d"), "--split", "test", "--out",
                   str(tmp_path / "m.csv")])
        assert rc == 1
        assert capsys.readouterr().err.startswith("error:")
