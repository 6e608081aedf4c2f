import csv
import json

import numpy as np
import pytest
import torch

from tonguetrack.cli import main
from tonguetrack.config import ConfigError, ExperimentConfig, derived_seeds
from tonguetrack.contour import Contour, MaskConfig, contour_to_mask, read_annotation_dir, write_annotation_json
from tonguetrack.metrics import msd
from tonguetrack.models import load_checkpoint, save_checkpoint
from tonguetrack.postprocess import extract_contour

TINY_MODEL = {"arch": "unet", "input_size": 32, "unet_channels": [8, 16, 32]}


def write_config(path, **over):
    cfg = {
        "seed": 1,
        "model": TINY_MODEL,
        "train": {"epochs": 2, "batch_size": 4, "learning_rate": 1e-3},
        "data": {"synthetic": {"n_frames": 20, "image_size": 32, "seed": 4}, "split": [0.6, 0.2, 0.2]},
    }
    cfg.update(over)
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = write_config(root / "exp.json")
    assert main(["train", "--config", str(cfg), "--out", str(root / "run")]) == 0
    return root / "run"


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(out), "--n-frames", "10", "--image-size", "32", "--seed", "2"]) == 0
    return out


class TestTrain:
    def test_outputs(self, trained):
        names = sorted(p.name for p in trained.iterdir())
        assert names == ["config.json", "model.json", "model.pt", "training_log.csv"]
        rows = list(csv.DictReader(open(trained / "training_log.csv")))
        assert len(rows) == 2

    def test_lambda_default_recorded(self, trained):
        sidecar = json.loads((trained / "model.json").read_text())
        assert sidecar["training_meta"]["loss"]["kind"] == "compound"
        assert sidecar["training_meta"]["loss"]["lambda"] == 5.0

    def test_config_echo_has_defaults(self, trained):
        echoed = json.loads((trained / "config.json").read_text())
        assert echoed["mask"] == {"sigma": 4.0, "floor_threshold": 0.4}
        assert echoed["postprocess"]["threshold"] == 0.5
        assert echoed["train"]["epochs"] == 2

    def test_overrides(self, tmp_path):
        cfg = write_config(tmp_path / "exp.json")
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "r"), "--epochs", "1"]) == 0
        assert len(list(csv.DictReader(open(tmp_path / "r" / "training_log.csv")))) == 1

    def test_invalid_config_exit_2(self, tmp_path, capsys):
        bad = write_config(tmp_path / "bad.json", train={"epochs": 0})
        assert main(["train", "--config", str(bad), "--out", str(tmp_path / "r")]) == 2
        assert "error" in capsys.readouterr().err
        (tmp_path / "junk.json").write_text("{not json")
        assert main(["train", "--config", str(tmp_path / "junk.json"), "--out", str(tmp_path / "r")]) == 2
        assert main(["train", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "r")]) == 2

    def test_divergence_exit_3(self, tmp_path):
        cfg = write_config(tmp_path / "exp.json", train={"epochs": 1, "batch_size": 4, "learning_rate": 1e30})
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 3


class TestSynth:
    def test_counts(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path), "--n-frames", "50", "--image-size", "32"]) == 0
        assert len(list((tmp_path / "frames").glob("*.png"))) == 50
        assert len(list((tmp_path / "annotations").glob("*.json"))) == 50
        assert (tmp_path / "manifest.json").exists()

    def test_byte_identical_manifest(self, tmp_path):
        for d in ("a", "b"):
            assert main(["synth", "--out", str(tmp_path / d), "--n-frames", "5", "--seed", "8"]) == 0
        assert (tmp_path / "a/manifest.json").read_bytes() == (tmp_path / "b/manifest.json").read_bytes()

    def test_annotations_round_trip(self, synth_dir):
        for c in read_annotation_dir(synth_dir / "annotations").values():
            out = extract_contour(contour_to_mask(c, MaskConfig(), 32, 32))
            assert msd(out, c) <= 2.0

    def test_split_tags(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path), "--n-frames", "20", "--split", "0.5", "0.25", "0.25"]) == 0
        items = json.loads((tmp_path / "manifest.json").read_text())["items"]
        assert sorted({i["split"] for i in items}) == ["test", "train", "val"]
        assert sum(i["split"] == "train" for i in items) == 10

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["synth", "--out", str(blocker / "sub"), "--n-frames", "2"]) == 2


class TestExtract:
    def test_one_file_per_frame(self, trained, synth_dir, tmp_path, capsys):
        assert main(["extract", "--checkpoint", str(trained), "--input", str(synth_dir / "frames"),
                     "--out", str(tmp_path), "--threshold", "0.3"]) == 0
        written = [p for p in tmp_path.glob("*.json")]
        failures = list(csv.DictReader(open(tmp_path / "failures.csv")))
        assert len(written) + len(failures) == 10
        for p in written:
            assert len(json.loads(p.read_text())["points"]) == 100
        assert "frames/s" in capsys.readouterr().out

    def test_empty_heatmap_is_a_failure(self, trained, synth_dir, tmp_path):
        model, ckpt = load_checkpoint(trained)
        with torch.no_grad():
            model.head.weight.zero_()
            model.head.bias.fill_(-20.0)  # sigmoid ~ 0 everywhere
        ckpt.weights = {k: v.clone() for k, v in model.state_dict().items()}
        save_checkpoint(ckpt, tmp_path / "dark" / "model")
        out = tmp_path / "out"
        assert main(["extract", "--checkpoint", str(tmp_path / "dark"), "--input", str(synth_dir / "frames"),
                     "--out", str(out)]) == 0
        failures = list(csv.DictReader(open(out / "failures.csv")))
        assert len(failures) == 10 and failures[0]["error"] == "no contour detected"
        assert not list(out.glob("frame_*.json"))

    def test_overlay(self, trained, synth_dir, tmp_path):
        assert main(["extract", "--checkpoint", str(trained), "--input", str(synth_dir / "frames"),
                     "--out", str(tmp_path), "--threshold", "0.3", "--overlay"]) == 0
        assert len(list(tmp_path.glob("*_overlay.png"))) == len(list(tmp_path.glob("*.json")))

    def test_bad_checkpoint_exit_2(self, synth_dir, tmp_path):
        (tmp_path / "model.json").write_text("{}")
        assert main(["extract", "--checkpoint", str(tmp_path), "--input", str(synth_dir / "frames"),
                     "--out", str(tmp_path / "o")]) == 2
        assert main(["extract", "--checkpoint", str(tmp_path / "nope"), "--input", str(synth_dir / "frames"),
                     "--out", str(tmp_path / "o")]) == 2

    def test_empty_input_exit_2(self, trained, tmp_path):
        (tmp_path / "empty").mkdir()
        assert main(["extract", "--checkpoint", str(trained), "--input", str(tmp_path / "empty"),
                     "--out", str(tmp_path / "o")]) == 2


def line(y, fid):
    return Contour(np.column_stack([np.linspace(0, 99, 100), np.full(100, float(y))]), fid)


class TestEval:
    def make(self, root, offset):
        for name, dy in (("gold", 0), ("pred", offset)):
            (root / name).mkdir()
            for i in range(4):
                write_annotation_json(root / name / f"f{i}.json", line(30 + i + dy, f"f{i}"))

    def test_identity(self, tmp_path):
        self.make(tmp_path, 0)
        assert main(["eval", "--pred", str(tmp_path / "gold"), "--gold", str(tmp_path / "gold"),
                     "--out", str(tmp_path / "r")]) == 0
        assert json.loads((tmp_path / "r/summary.json").read_text())["msd_px"]["mean"] == 0

    def test_shift_and_units(self, tmp_path):
        self.make(tmp_path, 2)
        assert main(["eval", "--pred", str(tmp_path / "pred"), "--gold", str(tmp_path / "gold"),
                     "--out", str(tmp_path / "r"), "--px-per-mm", "2", "--plot"]) == 0
        s = json.loads((tmp_path / "r/summary.json").read_text())
        assert s["msd_px"]["mean"] == 2.0 and s["msd_px"]["std"] == 0.0
        assert s["msd_mm"]["mean"] == 1.0
        assert (tmp_path / "r/msd_boxplot.png").exists()

    def test_four_px_is_one_mm(self, tmp_path):
        self.make(tmp_path, 4)
        main(["eval", "--pred", str(tmp_path / "pred"), "--gold", str(tmp_path / "gold"), "--out", str(tmp_path / "r")])
        assert json.loads((tmp_path / "r/summary.json").read_text())["msd_mm"]["mean"] == 1.0

    def test_extract_output_scores(self, trained, synth_dir, tmp_path):
        main(["extract", "--checkpoint", str(trained), "--input", str(synth_dir / "frames"),
              "--out", str(tmp_path / "pred"), "--threshold", "0.3"])
        assert main(["eval", "--pred", str(tmp_path / "pred"), "--gold", str(synth_dir / "annotations"),
                     "--out", str(tmp_path / "r")]) == 0
        s = json.loads((tmp_path / "r/summary.json").read_text())
        assert s["n_frames"] + s["n_failed"] == 10

    def test_no_overlap_exit_2(self, tmp_path):
        self.make(tmp_path, 0)
        (tmp_path / "other").mkdir()
        write_annotation_json(tmp_path / "other/zz.json", line(1, "zz"))
        assert main(["eval", "--pred", str(tmp_path / "other"), "--gold", str(tmp_path / "gold"),
                     "--out", str(tmp_path / "r")]) == 2


class TestExperiment:
    def test_loss_sweep(self, tmp_path):
        cfg = write_config(tmp_path / "exp.json", train={"epochs": 1, "batch_size": 4},
                           sweep={"loss": ["dice", "wc", "compound"]})
        assert main(["experiment", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 0
        rows = list(csv.DictReader(open(tmp_path / "x/results.csv")))
        assert [r["loss"] for r in rows] == ["dice", "wc", "compound"]
        assert all(r["error"] == "" for r in rows)
        assert (tmp_path / "x/sweep_loss.png").exists()

    def test_input_size_sweep(self, tmp_path):
        cfg = write_config(tmp_path / "exp.json", train={"epochs": 1, "batch_size": 4},
                           sweep={"input_size": [32, 64]})
        assert main(["experiment", "--config", str(cfg), "--out", str(tmp_path / "x"), "--no-plot"]) == 0
        rows = list(csv.DictReader(open(tmp_path / "x/results.csv")))
        assert [r["input_size"] for r in rows] == ["32", "64"]

    def test_failed_cell_recorded(self, tmp_path):
        # 48 px is fine for the tiny U-Net spec but not the Dense U-Net
        cfg = write_config(tmp_path / "exp.json", model=dict(TINY_MODEL, input_size=48),
                           train={"epochs": 1, "batch_size": 4}, sweep={"arch": ["unet", "dense_unet"]})
        assert main(["experiment", "--config", str(cfg), "--out", str(tmp_path / "x"), "--no-plot"]) == 0
        rows = list(csv.DictReader(open(tmp_path / "x/results.csv")))
        assert rows[0]["error"] == "" and "divisible" in rows[1]["error"]

    def test_needs_sweep(self, tmp_path):
        cfg = write_config(tmp_path / "exp.json")
        assert main(["experiment", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 2


class TestConfig:
    def test_unknown_fields(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"modle": {}})
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"train": {"loss": {"kind": "dice", "gamma": 2}}})
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"sweep": {"depth": [1, 2]}})
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"sweep": {"loss": []}})

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"data": {"manifest": "nowhere.json"}}, tmp_path)

    def test_round_trip(self, tmp_path):
        cfg = ExperimentConfig.from_dict({"seed": 7, "train": {"augmentation": True}, "sweep": {"fraction": [0.1]}})
        cfg.save(tmp_path / "c.json")
        assert ExperimentConfig.load(tmp_path / "c.json") == cfg

    def test_seed_fan_out(self):
        s = derived_seeds(0)
        assert s == derived_seeds(0) and len(set(s.values())) == 4
        assert s != derived_seeds(1)

    def test_manifest_data(self, synth_dir, tmp_path):
        cfg = ExperimentConfig.from_dict({"data": {"manifest": str(synth_dir / "manifest.json")}})
        from tonguetrack.experiment import load_splits
        tr, va, te = load_splits(cfg)
        assert len(tr) + len(va) + len(te) == 10
