import json
import os

import numpy as np
import pytest

from binlab import imaging
from binlab.cli import main


@pytest.fixture(scope="module")
def toy_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("toydata")
    rc = main(["toy-data", "--out", str(root), "--n", "6", "--seed", "3", "--size", "96"])
    assert rc == 0
    return root


TRAIN_ARGS = [
    "--set", "batch_size=4",
    "--set", "patch_size=64",
    "--set", "gen_base_channels=8",
    "--set", "gen_depth=2",
    "--set", "disc_base_channels=8",
    "--set", "disc_depth=2",
]


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory, toy_root):
    out = tmp_path_factory.mktemp("run")
    rc = main(
        ["train", "--stages", "1,2", "--out", str(out), "--data-root", str(toy_root),
         "--seed", "0", *TRAIN_ARGS,
         "--epochs.atanet", "1", "--epochs.udbnet", "1"]
    )
    assert rc == 0
    return out


class TestToyData:
    def test_layout(self, toy_root):
        assert (toy_root / "manifest.json").exists()
        assert len(os.listdir(toy_root / "toy" / "degraded")) == 6
        assert len(os.listdir(toy_root / "toy" / "gt")) == 6


class TestTrain:
    def test_outputs(self, trained_run):
        assert (trained_run / "checkpoints" / "stage_1").is_dir()
        assert (trained_run / "checkpoints" / "stage_2").is_dir()
        config = json.loads((trained_run / "config.json").read_text())
        assert config["train_config"]["epochs"]["atanet"] == 1
        records = [
            json.loads(line)
            for line in (trained_run / "loss_log.jsonl").read_text().splitlines()
        ]
        assert records and all(np.isfinite(r["value"]) for r in records)

    def test_same_seed_identical_log(self, tmp_path, toy_root):
        logs = []
        for name in ("a", "b"):
            out = tmp_path / name
            rc = main(
                ["train", "--stages", "1", "--out", str(out), "--data-root",
                 str(toy_root), "--seed", "7", *TRAIN_ARGS, "--epochs.atanet", "1"]
            )
            assert rc == 0
            logs.append((out / "loss_log.jsonl").read_bytes())
        assert logs[0] == logs[1]

    def test_unknown_config_key_is_usage_error(self, tmp_path, toy_root, capsys):
        rc = main(
            ["train", "--stages", "1", "--out", str(tmp_path / "x"), "--data-root",
             str(toy_root), "--set", "epoch.atanet=1"]
        )
        assert rc == 1
        assert "epoch.atanet" in capsys.readouterr().err

    def test_missing_data_root_is_data_error(self, tmp_path, capsys):
        rc = main(
            ["train", "--stages", "1", "--out", str(tmp_path / "x"),
             "--data-root", str(tmp_path / "missing")]
        )
        assert rc == 2
        assert "missing" in capsys.readouterr().err

    def test_env_var_data_root(self, tmp_path, toy_root, monkeypatch):
        monkeypatch.setenv("BINLAB_DATA_ROOT", str(toy_root))
        rc = main(
            ["train", "--stages", "1", "--out", str(tmp_path / "env_run"),
             "--seed", "1", *TRAIN_ARGS, "--epochs.atanet", "1"]
        )
        assert rc == 0


class TestBinarize:
    def test_otsu_writes_binary_png(self, toy_root, tmp_path):
        src = str(sorted((toy_root / "toy" / "degraded").iterdir())[0])
        out = tmp_path / "bin.png"
        rc = main(["binarize", src, "--method", "otsu", "--out", str(out)])
        assert rc == 0
        binary = imaging.load_binary(out)
        assert set(np.unique(binary)) <= {0, 1}

    def test_sauvola(self, toy_root, tmp_path):
        src = str(sorted((toy_root / "toy" / "degraded").iterdir())[0])
        out = tmp_path / "bin.png"
        rc = main(["binarize", src, "--method", "sauvola", "--out", str(out)])
        assert rc == 0

    def test_unknown_method_usage_error(self, toy_root, tmp_path, capsys):
        src = str(sorted((toy_root / "toy" / "degraded").iterdir())[0])
        rc = main(["binarize", src, "--method", "niblack"])
        assert rc == 1

    def test_neural_output_strictly_binary(self, trained_run, toy_root, tmp_path):
        src = str(sorted((toy_root / "toy" / "degraded").iterdir())[0])
        out = tmp_path / "neural.png"
        rc = main(
            ["binarize", src, "--checkpoint",
             str(trained_run / "checkpoints" / "stage_2"), "--out", str(out)]
        )
        assert rc == 0
        from PIL import Image

        raw = np.asarray(Image.open(out))
        assert set(np.unique(raw)) <= {0, 255}

    def test_constant_input_no_tiling_seams(self, trained_run, tmp_path):
        # A binarizer with a saturated head maps everything to confident
        # background; any seam the tiled path introduced would then show
        # up as non-constant output. 100x100 with 64px patches forces
        # overlapping flush-border tiles.
        import torch

        from binlab.trainer import load_checkpoint, save_checkpoint

        state = load_checkpoint(str(trained_run / "checkpoints" / "stage_2"))
        with torch.no_grad():
            state.nets["f"].out.weight.zero_()
            state.nets["f"].out.bias.fill_(3.0)
        ckpt = tmp_path / "confident"
        save_checkpoint(state, ckpt)

        src = tmp_path / "flat.png"
        imaging.save_image(src, np.full((100, 100), 0.6))
        out = tmp_path / "flat_bin.png"
        rc = main(["binarize", str(src), "--checkpoint", str(ckpt), "--out", str(out)])
        assert rc == 0
        binary = imaging.load_binary(out)
        assert np.unique(binary).size == 1 and binary[0, 0] == 0


class TestSynthesize:
    def test_shape_range_determinism(self, trained_run, toy_root, tmp_path):
        clean = str(sorted((toy_root / "toy" / "gt").iterdir())[0])
        degraded = str(sorted((toy_root / "toy" / "degraded").iterdir())[1])
        outputs = []
        for name in ("g1.png", "g2.png"):
            out = tmp_path / name
            rc = main(
                ["synthesize", "--checkpoint",
                 str(trained_run / "checkpoints" / "stage_1"),
                 "--clean", clean, "--degraded", degraded, "--out", str(out)]
            )
            assert rc == 0
            outputs.append(out.read_bytes())
        assert outputs[0] == outputs[1]
        generated = imaging.load_image(tmp_path / "g1.png")
        assert generated.shape == imaging.load_image(clean).shape[:2]
        assert generated.min() >= 0.0 and generated.max() <= 1.0


class TestEvaluate:
    def _dirs(self, tmp_path, rng, identical=True):
        pred = tmp_path / "pred"
        gt = tmp_path / "gt"
        pred.mkdir()
        gt.mkdir()
        for i in range(2):
            ref = (rng.uniform(size=(32, 32)) < 0.3).astype(np.uint8)
            imaging.save_binary(gt / f"im{i}.png", ref)
            if not identical:
                flip = rng.uniform(size=ref.shape) < 0.05
                ref = ref ^ flip.astype(np.uint8)
            imaging.save_binary(pred / f"im{i}.png", ref)
        return pred, gt

    def test_identical_dirs_perfect_row(self, tmp_path, rng, capsys):
        pred, gt = self._dirs(tmp_path, rng)
        out = tmp_path / "report"
        rc = main(["evaluate", "--pred", str(pred), "--gt", str(gt), "--out", str(out)])
        assert rc == 0
        csv_lines = (out / "metrics.csv").read_text().splitlines()
        mean = csv_lines[-1].split(",")
        assert mean[0] == "mean"
        assert float(mean[1]) == 100.0 and float(mean[2]) == 100.0
        assert float(mean[3]) == 100.0 and float(mean[4]) == 0.0

    def test_empty_intersection_exit_2(self, tmp_path, rng):
        pred, gt = self._dirs(tmp_path, rng)
        for f in gt.iterdir():
            f.rename(gt / ("other_" + f.name))
        assert main(["evaluate", "--pred", str(pred), "--gt", str(gt)]) == 2


class TestReport:
    def _metrics_csv(self, path, f=90.0):
        path.write_text(
            "image,f,f_ps,psnr,drd\n"
            f"img0,{f},91.0,18.0,3.0\n"
            f"mean,{f},91.0,18.0,3.0\n"
        )

    def test_three_method_table(self, tmp_path, capsys):
        for name, f in (("cl", 92.7), ("grl", 93.2), ("flipped", 93.4)):
            self._metrics_csv(tmp_path / f"{name}.csv", f)
        out = tmp_path / "rpt"
        rc = main(
            ["report", "--out", str(out),
             "--metrics", f"UDBNet-CL={tmp_path / 'cl.csv'}",
             "--metrics", f"UDBNet-GRL={tmp_path / 'grl.csv'}",
             "--metrics", f"flipped={tmp_path / 'flipped.csv'}"]
        )
        assert rc == 0
        table = (out / "comparison.txt").read_text()
        header, _, *rows = table.splitlines()
        assert header.split() == ["Method", "F-Measure", "F_PS", "PSNR", "DRD"]
        assert len(rows) == 3
        assert rows[0].startswith("UDBNet-CL")

    def test_byte_stable_across_reruns(self, tmp_path):
        self._metrics_csv(tmp_path / "m.csv")
        outputs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            rc = main(["report", "--out", str(out), "--metrics", f"ours={tmp_path / 'm.csv'}"])
            assert rc == 0
            outputs.append((out / "comparison.txt").read_bytes())
        assert outputs[0] == outputs[1]

    def test_loss_curves_and_malformed_lines(self, tmp_path, capsys):
        self._metrics_csv(tmp_path / "m.csv")
        log = tmp_path / "loss.jsonl"
        log.write_text(
            json.dumps({"step": 1, "stage": 1, "loss": "adv_T", "value": 0.5})
            + "\nnot json at all\n"
            + json.dumps({"step": 2, "stage": 1, "loss": "adv_T", "value": 0.4})
            + "\n"
        )
        out = tmp_path / "rpt"
        rc = main(
            ["report", "--out", str(out), "--metrics", f"ours={tmp_path / 'm.csv'}",
             "--loss-log", str(log)]
        )
        assert rc == 0
        err = capsys.readouterr().err
        assert "1 malformed" in err
        curve = (out / "curves" / "adv_T.csv").read_text().splitlines()
        assert curve == ["step,value", "1,0.5", "2,0.4"]

    def test_empty_log_nonzero_exit(self, tmp_path, capsys):
        self._metrics_csv(tmp_path / "m.csv")
        log = tmp_path / "empty.jsonl"
        log.write_text("")
        rc = main(
            ["report", "--out", str(tmp_path / "rpt"),
             "--metrics", f"ours={tmp_path / 'm.csv'}", "--loss-log", str(log)]
        )
        assert rc == 2

    def test_no_metrics_usage_error(self, tmp_path):
        assert main(["report", "--out", str(tmp_path / "rpt")]) == 1
