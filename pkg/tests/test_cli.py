import json

import numpy as np
import pytest
from scipy.io import wavfile

from otfusion.cli import main

TINY_CONFIG = """
label = tiny
task.n = 6
task.t = 6
task.d = 8
task.train_size = 20
task.val_size = 8
task.test_size = 8
model.d = 8
model.seq_len = 6
model.layers = 2
model.otk_iters = 10
train.runs = 2
train.max_epochs = 3
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(TINY_CONFIG)
    return str(path)


class TestTrainCommand:
    def test_writes_reports_and_reruns_byte_identical(self, tiny_config, tmp_path, capsys):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        assert main(["train", "--config", tiny_config, "--out", str(out_a)]) == 0
        assert main(["train", "--config", tiny_config, "--out", str(out_b)]) == 0
        json_a = (out_a / "tiny.json").read_bytes()
        json_b = (out_b / "tiny.json").read_bytes()
        assert json_a == json_b
        assert (out_a / "tiny.csv").read_bytes() == (out_b / "tiny.csv").read_bytes()
        payload = json.loads(json_a)
        assert payload["label"] == "tiny"
        assert len(payload["runs"]) == 2

    def test_missing_config_is_usage_error(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "nope.cfg"),
                     "--out", str(tmp_path / "out")]) == 3


class TestEvalCommand:
    def test_prints_split_metrics(self, tiny_config, capsys):
        assert main(["eval", "--config", tiny_config, "--seed", "1"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert set(out) == {"train", "val", "test"}
        assert "accuracy" in out["test"]


class TestGradcheckCommand:
    def test_suite_passes(self, capsys):
        assert main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        assert "[pass]" in out
        assert "FAIL" not in out


class TestOtCommand:
    def test_emd_between_point_clouds(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        src = tmp_path / "src.csv"
        tgt = tmp_path / "tgt.csv"
        np.savetxt(src, rng.uniform(0, 1, (4, 2)), delimiter=",")
        np.savetxt(tgt, rng.uniform(0, 1, (4, 2)), delimiter=",")
        plan_path = tmp_path / "plan.csv"
        assert main(["ot", "--src", str(src), "--tgt", str(tgt),
                     "--plan-out", str(plan_path)]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["method"] == "emd"
        assert payload["marginal_violation"] < 1e-9
        plan = np.loadtxt(plan_path, delimiter=",")
        assert plan.shape == (4, 4)

    def test_sinkhorn_method(self, tmp_path, capsys):
        rng = np.random.default_rng(1)
        src = tmp_path / "src.csv"
        tgt = tmp_path / "tgt.csv"
        np.savetxt(src, rng.uniform(0, 1, (3, 2)), delimiter=",")
        np.savetxt(tgt, rng.uniform(0, 1, (5, 2)), delimiter=",")
        assert main(["ot", "--src", str(src), "--tgt", str(tgt),
                     "--method", "sinkhorn", "--eps", "0.1"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["converged"]


class TestCalibCommand:
    def test_metrics_from_csv(self, tmp_path, capsys):
        rows = ["0.9,0.1,0", "0.2,0.8,1", "0.3,0.7,0", "0.6,0.4,0"]
        path = tmp_path / "preds.csv"
        path.write_text("\n".join(rows) + "\n")
        bins_out = tmp_path / "bins.csv"
        assert main(["calib", "--input", str(path), "--ranges", "2",
                     "--bins-out", str(bins_out)]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert 0.0 <= payload["ece"] <= 1.0
        assert 0.0 <= payload["ace"] <= 1.0
        assert bins_out.exists()


class TestAsoCommand:
    def test_dominant_scores(self, tmp_path, capsys):
        a = tmp_path / "a.txt"
        b = tmp_path / "b.txt"
        a.write_text("\n".join(str(x) for x in [10.1, 10.2, 10.3, 10.4, 10.5]))
        b.write_text("\n".join(str(x) for x in [0.1, 0.2, 0.3, 0.4, 0.5]))
        assert main(["aso", str(a), str(b), "--seed", "0"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["eps_min"] < 0.05
        assert payload["verdict"] == "stochastically dominant"


class TestFeaturesCommand:
    def test_wav_to_tensor(self, tmp_path, capsys):
        sr = 8000
        t = np.arange(sr) / sr
        samples = (0.4 * np.sin(2 * np.pi * 440 * t) * 32767).astype(np.int16)
        wav = tmp_path / "tone.wav"
        wavfile.write(wav, sr, samples)
        out = tmp_path / "feat.bin"
        assert main(["features", "--wav", str(wav), "--out", str(out),
                     "--n-fft", "512", "--mels", "40"]) == 0
        from otfusion.audio_features import load_tensor
        tensor = load_tensor(str(out))
        assert tensor.shape == (3, 224, 224)

    def test_missing_wav_is_io_error(self, tmp_path):
        assert main(["features", "--wav", str(tmp_path / "nope.wav"),
                     "--out", str(tmp_path / "f.bin")]) == 3


class TestReportCommand:
    def test_merges_reports(self, tiny_config, tmp_path, capsys):
        out_dir = tmp_path / "r"
        assert main(["train", "--config", tiny_config, "--out", str(out_dir)]) == 0
        capsys.readouterr()
        table = tmp_path / "table.csv"
        assert main(["report", str(out_dir / "tiny.json"), "--out", str(table)]) == 0
        lines = table.read_text().strip().splitlines()
        assert lines[0].startswith("architecture,precision_mean,precision_std,recall_mean")
        assert lines[1].startswith("tiny,")


class TestUsageErrors:
    def test_unknown_subcommand(self):
        assert main(["frobnicate"]) == 1

    def test_bad_axis(self, tiny_config, tmp_path):
        assert main(["ablate", "--config", tiny_config, "--axis", "bogus",
                     "--out", str(tmp_path)]) == 1

    def test_missing_required_argument(self):
        assert main(["train"]) == 1
