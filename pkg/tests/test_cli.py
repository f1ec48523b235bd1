import numpy as np
import pytest

from edgeracer import data, imaging, mixer, trainer
from edgeracer.cli import main
from edgeracer.imaging import PipelineParams
from edgeracer.mixer import MixerConfig


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


class TestParsing:
    def test_no_command_is_usage_error(self, capsys):
        code, _, err = run(capsys)
        assert code == 2

    def test_unknown_command(self, capsys):
        code, _, _ = run(capsys, "frobnicate")
        assert code == 2

    def test_missing_required_flag(self, capsys):
        code, _, _ = run(capsys, "train", "--data", "x")  # --out missing
        assert code == 2

    def test_missing_file_exits_one(self, capsys):
        code, _, err = run(capsys, "preprocess", "/nonexistent.pgm", "/tmp/o.pgm")
        assert code == 1
        assert "missing file" in err


class TestPreprocess:
    def test_pgm_round_trip(self, tmp_path, capsys):
        frame = np.zeros((60, 80), np.uint8)
        frame[:, 40:] = 200
        src = tmp_path / "in.pgm"
        dst = tmp_path / "out.pgm"
        imaging.write_pgm(src, frame)
        code, _, _ = run(capsys, "preprocess", str(src), str(dst))
        assert code == 0
        out = imaging.read_pgm(dst)
        assert out.shape == (64, 64)
        assert set(np.unique(out)) <= {0, 255}
        assert (out == 255).any()  # the step edge survives

    def test_no_edges_flag(self, tmp_path, capsys):
        frame = np.full((60, 80), 128, np.uint8)
        src = tmp_path / "in.pgm"
        dst = tmp_path / "out.pgm"
        imaging.write_pgm(src, frame)
        code, _, _ = run(capsys, "preprocess", "--no-edges", str(src), str(dst))
        assert code == 0
        out = imaging.read_pgm(dst)
        assert out.shape == (64, 64)
        assert np.all(np.abs(out.astype(int) - 128) <= 1)


class TestCollectAndFilter:
    def test_collect_deterministic_bytes(self, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            code, _, _ = run(capsys, "collect", "--track", "oval",
                             "--episodes", "1", "--seed", "3",
                             "--max-steps", "25", "--out", str(out))
            assert code == 0
        assert (a / "oval_sim_0003.ep").read_bytes() \
            == (b / "oval_sim_0003.ep").read_bytes()
        assert (a / "index.txt").read_text() == "oval_sim_0003.ep\n"

    def test_filter_reports(self, tmp_path, capsys):
        raw = tmp_path / "raw"
        code, _, _ = run(capsys, "collect", "--track", "hairpin",
                         "--episodes", "1", "--seed", "0",
                         "--max-steps", "20", "--out", str(raw))
        assert code == 0
        code, out, _ = run(capsys, "filter", "--in", str(raw),
                           "--out", str(tmp_path / "filtered"))
        assert code == 0
        assert "kept per class" in out
        ds = data.Dataset.open(str(tmp_path / "filtered"))
        assert len(ds.files) == 1


class TestTrainEval:
    def test_train_banner_and_checkpoint(self, tmp_path, capsys, monkeypatch):
        # shrink the network so the smoke run stays fast
        def small():
            return MixerConfig(dim=16, depth=1, token_hidden=8,
                               channel_hidden=32)
        small.from_dict = MixerConfig.from_dict
        monkeypatch.setattr(mixer, "MixerConfig", small)
        raw = tmp_path / "raw"
        run(capsys, "collect", "--track", "oval", "--episodes", "2",
            "--seed", "1", "--max-steps", "15", "--out", str(raw))
        ckpt_path = tmp_path / "m.ckpt"
        log_path = tmp_path / "train.log"
        code, out, _ = run(capsys, "train", "--data", str(raw),
                           "--out", str(ckpt_path), "--epochs", "2",
                           "--batch", "8", "--log", str(log_path))
        assert code == 0
        assert "lr=0.0001 patch=8 dim=16 depth=1" in out
        assert log_path.read_text().count("train_loss=") == 2
        ck = trainer.load_checkpoint(ckpt_path)
        assert ck.config.dim == 16
        assert ck.meta["epochs"] == 2

        code, out, _ = run(capsys, "eval-dataset", "--model", str(ckpt_path),
                           "--data", str(raw))
        assert code == 0
        assert "accuracy" in out and "confusion" in out

        code, out, _ = run(capsys, "eval-loop", "--model", str(ckpt_path),
                           "--trials", "2", "--max-steps", "10")
        assert code == 0
        assert "completion rate" in out

        code, out, _ = run(capsys, "bench", "--model", str(ckpt_path),
                           "--iters", "10",
                           "--out", str(tmp_path / "bench.txt"))
        assert code == 0
        assert "median" in (tmp_path / "bench.txt").read_text()
