import json

import numpy as np
import pytest

from cbpf.cli import ExperimentConfig, build_base_data, load_config, main
from cbpf.dataset import load_binary
from cbpf.errors import ConfigError


def tiny_config(out_dir, **overrides):
    classifier = {
        "architecture": "mlp",
        "hidden_sizes": [32],
        "num_classes": 3,
        "epochs": 3,
        "batch_size": 32,
        "learning_rate": 0.02,
        "lr_decay_epochs": [],
        "seed": 0,
    }
    doc = {
        "schema_version": 1,
        "seed": 4,
        "out_dir": str(out_dir),
        "dataset": {
            "synthetic": {
                "num_classes": 3,
                "samples_per_class": 45,
                "height": 16,
                "width": 16,
                "channels": 3,
                "noise_amplitude": 40,
            }
        },
        "attack": {"kind": "badnet_patch", "target_label": 0, "rate": 0.1, "clean_label": False},
        "pipeline": {
            "t_early": 2,
            "a_p": 0.05,
            "a_c": 0.02,
            "n_filters": 1,
            "benign_trigger": {"kind": "benign_patch", "patch_size": 3, "corner": "bottom_left",
                               "pattern_id": "checker", "patch_value": 255},
            "filter_train_config": classifier,
            "composite_train_config": {**classifier, "epochs": 5},
            "clean_train_config": classifier,
            "seed": 4,
        },
        "eval": {"test_per_class": 5},
    }
    doc.update(overrides)
    return doc


def write_config(tmp_path, **overrides):
    doc = tiny_config(tmp_path / "run", **overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path, doc


class TestConfigLoading:
    def test_defaults_without_file(self):
        config = load_config(None)
        assert config.pipeline.a_p == 0.03
        assert config.pipeline.t_early == 5

    def test_unknown_field_rejected(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"schema_version": 1, "bogus": 1}))
        with pytest.raises(ConfigError):
            load_config(path)

    def test_bad_schema_version(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"schema_version": 99}))
        with pytest.raises(ConfigError):
            load_config(path)

    def test_dataset_source_exclusive(self):
        config = ExperimentConfig(dataset={"synthetic": {"preset": "desk10"}, "path": "x"})
        with pytest.raises(ConfigError):
            build_base_data(config)


class TestPoisonCommand:
    def test_writes_dataset_and_manifest(self, tmp_path, capsys):
        config_path, doc = write_config(tmp_path)
        assert main(["poison", "--config", str(config_path)]) == 0
        out = tmp_path / "run"
        assert (out / "train_poisoned.cbpf").exists()
        assert (out / "train_clean.cbpf").exists()
        assert (out / "test_clean.cbpf").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        # 3 classes x 40 train samples after the 5-per-class test split
        assert len(manifest["poisoned_indices"]) == 12
        assert manifest["attack"]["kind"] == "badnet_patch"
        train = load_binary(out / "train_poisoned.cbpf")
        assert (train.labels[manifest["poisoned_indices"]] == 0).all()
        test = load_binary(out / "test_clean.cbpf")
        assert len(test) == 15

    def test_rate_flag_overrides(self, tmp_path):
        config_path, _ = write_config(tmp_path)
        main(["poison", "--config", str(config_path), "--rate", "0.2"])
        manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
        assert manifest["poisoning_rate"] == 0.2
        assert len(manifest["poisoned_indices"]) == 24

    def test_unknown_kind_fails(self, tmp_path, capsys):
        config_path, _ = write_config(tmp_path)
        code = main(["poison", "--config", str(config_path), "--kind", "confetti"])
        assert code == 2
        assert "confetti" in capsys.readouterr().err

    def test_clean_label_flag(self, tmp_path):
        config_path, _ = write_config(tmp_path)
        main(["poison", "--config", str(config_path), "--clean-label", "--rate", "0.05"])
        manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
        assert manifest["clean_label"] is True
        clean = load_binary(tmp_path / "run" / "train_clean.cbpf")
        assert (clean.labels[manifest["poisoned_indices"]] == 0).all()


@pytest.fixture()
def poisoned_run(tmp_path):
    config_path, doc = write_config(tmp_path)
    main(["poison", "--config", str(config_path)])
    return config_path, tmp_path / "run"


class TestDefendCommand:
    def test_report_schema_and_summary(self, poisoned_run, capsys):
        config_path, out = poisoned_run
        assert main(["defend", "--config", str(config_path)]) == 0
        line = capsys.readouterr().out.strip().splitlines()[-1]
        assert line.startswith("TPR=") and "FPR=" in line and "ASR=" in line and "CAR=" in line
        report = json.loads((out / "report.json").read_text())
        for key in ("config", "score_csv_path", "isolation", "pools",
                    "decision_labels", "metrics", "timings"):
            assert key in report, key
        assert set(report["metrics"]) == {"tpr", "fpr", "asr", "car"}
        assert report["metrics"]["tpr"] is not None
        assert (out / "scores.csv").exists()
        assert (out / "clean_model.ckpt").exists()
        assert (out / "metrics.csv").exists()
        n = 3 * 40
        assert len(report["pools"]["poison"]) + len(report["pools"]["clean"]) == n

    def test_a_p_override_lands_in_report(self, poisoned_run):
        config_path, out = poisoned_run
        main(["defend", "--config", str(config_path), "--a_p", "0.08"])
        report = json.loads((out / "report.json").read_text())
        assert report["config"]["pipeline"]["a_p"] == 0.08
        assert len(report["isolation"]["poison_indices"]) == int(np.ceil(0.08 * 120))

    def test_defense_runs_without_manifest(self, poisoned_run):
        config_path, out = poisoned_run
        (out / "manifest.json").unlink()
        assert main(["defend", "--config", str(config_path)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["metrics"]["tpr"] is None
        assert report["metrics"]["fpr"] is None
        assert report["metrics"]["asr"] is not None
        assert report["metrics"]["car"] is not None

    def test_missing_dataset_is_error(self, tmp_path, capsys):
        config_path, _ = write_config(tmp_path)
        code = main(["defend", "--config", str(config_path)])
        assert code == 2
        assert "poison" in capsys.readouterr().err

    def test_rerun_from_report_config_reproduces_pools(self, poisoned_run, tmp_path):
        config_path, out = poisoned_run
        main(["defend", "--config", str(config_path)])
        report = json.loads((out / "report.json").read_text())

        replay_dir = tmp_path / "replay"
        replay_config = dict(report["config"])
        replay_config["out_dir"] = str(replay_dir)
        replay_path = tmp_path / "replay.json"
        replay_path.write_text(json.dumps(replay_config))
        main(["poison", "--config", str(replay_path)])
        main(["defend", "--config", str(replay_path)])
        replay_report = json.loads((replay_dir / "report.json").read_text())
        assert replay_report["pools"] == report["pools"]
        assert replay_report["isolation"] == report["isolation"]


class TestSweepCommand:
    def test_a_p_sweep_rows(self, tmp_path):
        config_path, _ = write_config(tmp_path)
        assert main(["sweep", "--config", str(config_path), "--axis", "a_p",
                     "--values", "0.03,0.06"]) == 0
        csv = (tmp_path / "run" / "sweep_a_p.csv").read_text().splitlines()
        assert csv[0] == "axis_value,tpr,fpr,asr,car"
        assert len(csv) == 3
        md = (tmp_path / "run" / "sweep_a_p.md").read_text()
        assert md.startswith("| a_p | TPR | FPR | ASR | CAR |")

    def test_rate_sweep_repoisons(self, tmp_path):
        config_path, _ = write_config(tmp_path)
        main(["sweep", "--config", str(config_path), "--axis", "rate", "--values", "0.05,0.1"])
        m1 = json.loads((tmp_path / "run" / "rate_0.05" / "manifest.json").read_text())
        m2 = json.loads((tmp_path / "run" / "rate_0.1" / "manifest.json").read_text())
        assert len(m1["poisoned_indices"]) == 6
        assert len(m2["poisoned_indices"]) == 12

    def test_bad_axis(self, tmp_path, capsys):
        config_path, _ = write_config(tmp_path)
        code = main(["sweep", "--config", str(config_path), "--axis", "a_p",
                     "--values", "0.06,0.03"])
        assert code == 2
        assert "sorted" in capsys.readouterr().err

    def test_empty_values(self, tmp_path, capsys):
        config_path, _ = write_config(tmp_path)
        assert main(["sweep", "--config", str(config_path), "--axis", "a_p",
                     "--values", ""]) == 2

    def test_failed_run_records_error_row(self, tmp_path):
        config_path, _ = write_config(tmp_path)
        # a_p + a_c > 1 inside the run -> error marker row, sweep continues
        main(["sweep", "--config", str(config_path), "--axis", "a_p", "--values", "0.05,0.999"])
        csv = (tmp_path / "run" / "sweep_a_p.csv").read_text().splitlines()
        assert len(csv) == 3
        assert "ERROR" in csv[2]
        assert "ERROR" not in csv[1]


class TestEvalAndReport:
    def test_eval_checkpoint(self, poisoned_run, capsys, tmp_path):
        config_path, out = poisoned_run
        main(["defend", "--config", str(config_path)])
        capsys.readouterr()
        code = main([
            "eval", "--config", str(config_path),
            "--model", str(out / "clean_model.ckpt"),
            "--dataset", str(out / "test_clean.cbpf"),
            "--with-attack",
        ])
        assert code == 0
        line = capsys.readouterr().out.strip()
        assert "CAR=" in line and "ASR=" in line

    def test_report_renders_markdown(self, poisoned_run, capsys, tmp_path):
        config_path, out = poisoned_run
        main(["defend", "--config", str(config_path)])
        capsys.readouterr()
        md_out = tmp_path / "table.md"
        assert main(["report", str(out / "report.json"), "--out", str(md_out)]) == 0
        text = md_out.read_text()
        assert text.splitlines()[0] == "| Attack | TPR | FPR |"
        assert "badnet_patch" in text
        printed = capsys.readouterr().out
        assert "| Attack | TPR | FPR |" in printed
