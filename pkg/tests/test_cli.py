"""Command-line interface: exit codes, config/flag precedence, pipelines,
and help text."""

import csv
from pathlib import Path

import numpy as np
import pytest

from poolnet.cli import main
from poolnet.data import load_map
from poolnet.model import model_from_checkpoint, save_model_with_config

DATA_DIR = Path(__file__).parent / "data"

MICRO_MODEL = ["--backbone-widths", "4,6,6,8,8", "--ppm-sizes", "2",
               "--fam-rates", "2,4"]
QUICK_TRAIN = ["--epochs", "1", "--lr-drop-epoch", "0", "--seed", "0"]


@pytest.fixture(scope="module")
def sal_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli_sal")
    assert main(["synth", "--kind", "saliency", "--count", "4", "--size", "32",
                 "--output-dir", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, sal_dir):
    path = tmp_path_factory.mktemp("cli_run")
    argv = ["train", "--saliency-manifest", str(sal_dir / "manifest.tsv"),
            "--output-dir", str(path), *MICRO_MODEL, *QUICK_TRAIN]
    assert main(argv) == 0
    return path


class TestExitCodes:
    def test_success_is_zero(self, tmp_path):
        assert main(["synth", "--kind", "edge", "--count", "1",
                     "--size", "32", "--output-dir", str(tmp_path)]) == 0

    def test_missing_required_setting_is_two(self, capsys):
        assert main(["train"]) == 2
        assert "config error" in capsys.readouterr().err

    def test_unknown_config_key_is_two(self, tmp_path, capsys):
        config = tmp_path / "run.cfg"
        config.write_text("leraning_rate = 0.1\n")
        assert main(["train", "--config", str(config)]) == 2
        err = capsys.readouterr().err
        assert "leraning_rate" in err and "run.cfg:1" in err

    def test_unparseable_flag_value_is_two(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["bench", "--size", "400by300", *MICRO_MODEL])
        assert info.value.code == 2
        assert "expected a size like 400x300" in capsys.readouterr().err

    def test_bad_thread_cap_is_two(self, monkeypatch, capsys):
        monkeypatch.setenv("POOLNET_THREADS", "-3")
        assert main(["synth", "--kind", "edge", "--count", "1",
                     "--output-dir", "unused"]) == 2
        assert "POOLNET_THREADS" in capsys.readouterr().err

    def test_missing_manifest_file_is_three(self, tmp_path, capsys):
        argv = ["train", "--saliency-manifest", str(tmp_path / "absent.tsv"),
                "--output-dir", str(tmp_path), *MICRO_MODEL, *QUICK_TRAIN]
        assert main(argv) == 3
        assert "data error" in capsys.readouterr().err

    def test_corrupt_checkpoint_is_three(self, tmp_path, sal_dir, capsys):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"not a checkpoint")
        assert main(["infer", "--checkpoint", str(bad),
                     "--manifest", str(sal_dir / "manifest.tsv"),
                     "--output-dir", str(tmp_path)]) == 3
        assert "data error" in capsys.readouterr().err

    def test_poisoned_weights_are_four(self, tmp_path, sal_dir, run_dir, capsys):
        model, state = model_from_checkpoint(run_dir / "final.ckpt")
        model.head.weight.data[:] = np.inf
        poisoned = tmp_path / "poisoned.ckpt"
        save_model_with_config(poisoned, model, state)
        argv = ["train", "--saliency-manifest", str(sal_dir / "manifest.tsv"),
                "--output-dir", str(tmp_path / "out"), "--resume", str(poisoned),
                "--epochs", "2", "--lr-drop-epoch", "1", "--seed", "0"]
        assert main(argv) == 4
        assert "numeric error" in capsys.readouterr().err

    def test_unknown_flag_exits_two(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["train", "--learning-rate", "0.1"])
        assert info.value.code == 2


class TestConfigPrecedence:
    def test_flag_overrides_config_file(self, tmp_path, sal_dir):
        config = tmp_path / "run.cfg"
        config.write_text("backbone_widths = 4,6,6,8,8\n"
                          "ppm_sizes = 2\n"
                          "fam_rates = 2,4\n"
                          "lr = 0.1  # flag should beat this\n"
                          "epochs = 1\n"
                          "lr_drop_epoch = 0\n")
        out = tmp_path / "out"
        argv = ["train", "--config", str(config), "--lr", "0.05",
                "--saliency-manifest", str(sal_dir / "manifest.tsv"),
                "--output-dir", str(out)]
        assert main(argv) == 0
        rows = list(csv.DictReader(open(out / "train_log.csv")))
        # drop epoch 0 divides by 10 from the start: 0.05 -> 0.005 (a winning
        # file value would log 0.01)
        assert {row["lr"] for row in rows} == {"0.005"}

    def test_config_file_settings_reach_the_model(self, tmp_path, sal_dir):
        config = tmp_path / "run.cfg"
        config.write_text("backbone_widths = 4,4,6,6,8\n"
                          "ppm_sizes = 2\n"
                          "fam_rates = 2\n"
                          "enable_edge = true\n"
                          "epochs = 1\n"
                          "lr_drop_epoch = 0\n")
        out = tmp_path / "out"
        assert main(["train", "--config", str(config),
                     "--saliency-manifest", str(sal_dir / "manifest.tsv"),
                     "--output-dir", str(out)]) == 0
        model, _ = model_from_checkpoint(out / "final.ckpt")
        assert model.config.backbone_widths == (4, 4, 6, 6, 8)
        assert model.config.enable_edge is True


class TestPipeline:
    def test_train_writes_checkpoints_and_log(self, run_dir):
        assert (run_dir / "epoch_001.ckpt").is_file()
        assert (run_dir / "final.ckpt").is_file()
        log = (run_dir / "train_log.csv").read_text().splitlines()
        assert log[0] == "epoch,step,loss_type,loss_value,lr"
        assert len(log) == 1 + 4

    def test_infer_writes_one_map_per_entry(self, tmp_path, sal_dir, run_dir):
        out = tmp_path / "pred"
        assert main(["infer", "--checkpoint", str(run_dir / "final.ckpt"),
                     "--manifest", str(sal_dir / "manifest.tsv"),
                     "--output-dir", str(out)]) == 0
        maps = sorted(out.glob("*.pgm"))
        assert len(maps) == 4
        for path in maps:
            values = load_map(path)
            assert values.shape == (32, 32)
            assert values.min() >= 0.0 and values.max() <= 1.0

    def test_infer_is_deterministic(self, tmp_path, sal_dir, run_dir):
        outputs = []
        for run in ("a", "b"):
            out = tmp_path / run
            main(["infer", "--checkpoint", str(run_dir / "final.ckpt"),
                  "--manifest", str(sal_dir / "manifest.tsv"),
                  "--output-dir", str(out)])
            outputs.append(b"".join(p.read_bytes() for p in sorted(out.glob("*.pgm"))))
        assert outputs[0] == outputs[1]

    def test_eval_scores_predictions(self, tmp_path, sal_dir, run_dir, capsys):
        pred = tmp_path / "pred"
        main(["infer", "--checkpoint", str(run_dir / "final.ckpt"),
              "--manifest", str(sal_dir / "manifest.tsv"), "--output-dir", str(pred)])
        out_csv = tmp_path / "metrics.csv"
        assert main(["eval", "--manifest", str(sal_dir / "manifest.tsv"),
                     "--pred-dir", str(pred), "--out", str(out_csv)]) == 0
        stdout = capsys.readouterr().out
        lines = [line for line in stdout.splitlines() if line]
        max_f = float(lines[-2].split()[1])
        mae = float(lines[-1].split()[1])
        assert lines[-2].startswith("max_f ") and lines[-1].startswith("mae ")
        assert 0.0 <= max_f <= 1.0 and 0.0 <= mae <= 1.0
        rows = list(csv.reader(open(out_csv)))
        assert rows[0] == ["max_f", "mae", "empty_gt_count"]
        assert float(rows[1][0]) == pytest.approx(max_f, abs=5e-7)

    def test_eval_missing_prediction_is_three(self, tmp_path, sal_dir, capsys):
        (tmp_path / "pred").mkdir()
        assert main(["eval", "--manifest", str(sal_dir / "manifest.tsv"),
                     "--pred-dir", str(tmp_path / "pred")]) == 3
        assert "missing prediction" in capsys.readouterr().err


class TestAblate:
    def test_writes_six_row_table(self, tmp_path, sal_dir):
        out = tmp_path / "ablation"
        argv = ["ablate", "--saliency-manifest", str(sal_dir / "manifest.tsv"),
                "--output-dir", str(out), *MICRO_MODEL, *QUICK_TRAIN]
        assert main(argv) == 0
        rows = list(csv.reader(open(out / "ablation.csv")))
        assert rows[0] == ["row", "ppm", "ggf", "fam", "max_f", "mae"]
        assert [row[:4] for row in rows[1:]] == [
            ["1", "0", "0", "0"], ["2", "1", "0", "0"], ["3", "0", "1", "0"],
            ["4", "1", "1", "0"], ["5", "0", "0", "1"], ["6", "1", "1", "1"]]
        for row in rows[1:]:
            assert 0.0 <= float(row[4]) <= 1.0
            assert 0.0 <= float(row[5]) <= 1.0


class TestBench:
    def test_reports_latency_statistics(self, capsys):
        assert main(["bench", "--size", "40x30", "--iters", "3", "--warmup", "1",
                     *MICRO_MODEL]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "input 40x30 (padded 48x32), 3 iters after 1 warm-up"
        stats = dict(line.split() for line in lines[1:])
        assert set(stats) == {"mean_ms", "p50_ms", "p95_ms", "fps"}
        assert float(stats["mean_ms"]) > 0.0
        assert float(stats["fps"]) == pytest.approx(1000.0 / float(stats["mean_ms"]),
                                                    rel=1e-2)

    def test_zero_iterations_rejected(self, capsys):
        assert main(["bench", "--iters", "0", *MICRO_MODEL]) == 2


class TestSynth:
    def test_dataset_is_reproducible(self, tmp_path):
        digests = []
        for run in ("a", "b"):
            out = tmp_path / run
            assert main(["synth", "--kind", "saliency", "--count", "3",
                         "--size", "32", "--seed", "9", "--output-dir", str(out)]) == 0
            digests.append(b"".join(p.read_bytes() for p in sorted(out.iterdir())))
        assert digests[0] == digests[1]

    def test_invalid_count_is_three(self, tmp_path, capsys):
        assert main(["synth", "--kind", "saliency", "--count", "0",
                     "--output-dir", str(tmp_path)]) == 3


class TestHelpText:
    @pytest.mark.parametrize("golden,argv", [
        ("help_main", ["--help"]),
        ("help_train", ["train", "--help"]),
        ("help_infer", ["infer", "--help"]),
        ("help_eval", ["eval", "--help"]),
        ("help_ablate", ["ablate", "--help"]),
        ("help_bench", ["bench", "--help"]),
        ("help_synth", ["synth", "--help"]),
    ])
    def test_matches_golden(self, golden, argv, capsys, monkeypatch):
        monkeypatch.setenv("COLUMNS", "80")
        with pytest.raises(SystemExit) as info:
            main(argv)
        assert info.value.code == 0
        assert capsys.readouterr().out == (DATA_DIR / f"{golden}.txt").read_text()
