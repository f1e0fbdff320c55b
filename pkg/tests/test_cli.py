import json
import os
import subprocess
import sys
import threading

import numpy as np
import pytest

from mpcinfer import nn
from mpcinfer.approx import ApproximationSpec
from mpcinfer.cli import main


def run_cli(argv):
    return main(argv)


class TestDemoAdd:
    def test_exit_zero_and_table_values(self, capsys):
        assert run_cli(["demo-add"]) == 0
        out = capsys.readouterr().out
        assert "[x]_1 = -3" in out and "[x]_2 = 4" in out
        assert "[y]_1 = 50" in out and "[y]_2 = -48" in out
        assert "party 1 -> 3" in out and "party 2 -> 3" in out


class TestBench:
    def test_gelu_report_files_and_quad_single_round(self, tmp_path, capsys):
        report = tmp_path / "gelu.json"
        assert run_cli(["bench", "--function", "gelu", "--seq", "8",
                        "--report", str(report)]) == 0
        data = json.loads(report.read_text())
        rows = {r["variant"]: r for r in data["rows"]}
        assert rows["quad"]["rounds"] == 1
        assert rows["quad"]["rounds"] < rows["exact"]["rounds"]
        assert (tmp_path / "gelu.csv").exists()
        assert (tmp_path / "gelu.png").exists()

    def test_softmax_ordering_and_determinism(self, tmp_path):
        r1 = tmp_path / "a.json"
        r2 = tmp_path / "b.json"
        for r in (r1, r2):
            assert run_cli(["bench", "--function", "softmax", "--seq", "8",
                            "--seed", "4", "--report", str(r)]) == 0
        a, b = json.loads(r1.read_text()), json.loads(r2.read_text())
        a.pop("timing"), b.pop("timing")
        assert a == b
        rows = {r["variant"]: r for r in a["rows"]}
        assert rows["two_quad"]["rounds"] < rows["two_relu"]["rounds"] < rows["exact"]["rounds"]
        assert rows["two_quad"]["speedup_vs_exact"] > rows["two_relu"]["speedup_vs_exact"] > 1.0
        assert rows["exact"]["speedup_vs_exact"] == 1.0  # baseline vs itself


class TestProfile:
    def test_breakdown_labels_sum_to_total(self, tmp_path):
        report = tmp_path / "p.json"
        assert run_cli(["profile", "--seq", "16", "--report", str(report)]) == 0
        data = json.loads(report.read_text())
        rows = {r["label"]: r for r in data["rows"]}
        total = rows.pop("total")
        assert total["rounds"] == sum(r["rounds"] for r in rows.values())
        assert total["bytes_sent"] == sum(r["bytes_sent"] for r in rows.values())
        assert set(rows) == {"MatMul", "GeLU", "Softmax", "LayerNorm", "Other"}


@pytest.fixture
def model_files(tmp_path):
    cfg = nn.toy_config(ApproximationSpec("quad", "two_quad"))
    weights = nn.init_weights(cfg, seed=5)
    wpath = tmp_path / "model.mpcw"
    nn.save_weights(str(wpath), cfg, weights)
    cpath = tmp_path / "config.doc"
    cpath.write_text(nn.config_doc(cfg))
    ipath = tmp_path / "input.doc"
    tokens = np.arange(cfg.max_seq) % cfg.vocab
    ipath.write_text("tokens = " + " ".join(map(str, tokens)) + "\n")
    return cfg, wpath, cpath, ipath


class TestInfer:
    def test_in_process(self, model_files, tmp_path, capsys):
        _, wpath, _, ipath = model_files
        report = tmp_path / "infer.json"
        assert run_cli(["infer", "--party", "all", "--weights", str(wpath),
                        "--input", str(ipath), "--seed", "3",
                        "--report", str(report)]) == 0
        out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert len(out["logits"]) == 4
        data = json.loads(report.read_text())
        rows = {r["label"]: r for r in data["rows"]}
        assert rows["total"]["rounds"] > 0

    def test_bad_arguments_are_clean_errors(self, tmp_path):
        assert run_cli(["bench", "--function", "softmax", "--seq", "0"]) == 2
        missing = tmp_path / "nope.mpcw"
        with pytest.raises(FileNotFoundError):
            run_cli(["infer", "--party", "all", "--weights", str(missing),
                     "--input", str(missing)])


class TestDistillCli:
    def test_micro_pipeline(self, tmp_path, capsys):
        cfgdoc = tmp_path / "distill.doc"
        cfgdoc.write_text("\n".join([
            "dataset_seed = 5", "n_train = 96", "n_test = 48",
            "n_downstream = 48", "seeds = 0",
            "teacher_epochs = 2", "stage1_epochs = 1", "stage2_epochs = 1",
            "baseline_epochs = 1",
        ]) + "\n")
        out = tmp_path / "student.mpcw"
        report = tmp_path / "ablation.json"
        assert run_cli(["distill", "--config", str(cfgdoc),
                        "--out", str(out), "--report", str(report)]) == 0
        data = json.loads(report.read_text())
        methods = [r["method"] for r in data["rows"]]
        assert methods == ["teacher", "distilled", "no_distill", "no_init_no_distill"]
        assert (tmp_path / "ablation.png").exists()
        cfg, tensors = nn.load_weights(str(out))
        assert cfg.approx.softmax_variant == "two_quad"

        # rerun with the same config reproduces the table exactly
        report2 = tmp_path / "ablation2.json"
        assert run_cli(["distill", "--config", str(cfgdoc),
                        "--report", str(report2)]) == 0
        again = json.loads(report2.read_text())
        assert again["rows"] == data["rows"]
        assert again["metrics"] == data["metrics"]
