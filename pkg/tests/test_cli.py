"""Command-line behavior: exit codes, outputs, and end-to-end flows."""

import subprocess
import sys
from types import SimpleNamespace

import numpy as np
import pytest

from cunet import cli
from cunet.config import CUNetConfig
from cunet.graph import build_cu_net
from cunet.synth import write_dataset
from cunet.trainer import load_checkpoint, save_checkpoint
from oracles import parse_dot

TINY = ["--u", "1", "--m", "4", "--n", "2", "--depth", "1",
        "--keypoints", "16", "--input-res", "32"]
SMALL = ["--u", "2", "--m", "8", "--n", "4", "--depth", "2",
         "--keypoints", "16", "--input-res", "32"]


def _dataset(path, count=10, seed=1):
    write_dataset(path, count, seed=seed, input_res=32)
    return str(path)


class TestUsageErrors:
    def test_no_subcommand(self, capsys):
        assert cli.dispatch([]) == 1

    def test_unknown_subcommand(self, capsys):
        assert cli.dispatch(["frobnicate"]) == 1

    def test_missing_required_flag(self, capsys):
        assert cli.dispatch(["gen-data", "--out", "/tmp/x"]) == 1

    def test_bad_flag_value(self, capsys):
        assert cli.dispatch(["count-params", "--u", "lots"]) == 1

    def test_help_exits_zero(self, capsys):
        assert cli.dispatch(["--help"]) == 0


class TestCountParams:
    def test_default_config(self, capsys):
        assert cli.dispatch(["count-params"]) == 0
        out = capsys.readouterr().out
        assert "u = 2" in out and "m = 32" in out
        assert "TOTAL" in out

    def test_breakdown_sums_to_total(self, capsys):
        assert cli.dispatch(["count-params", *SMALL]) == 0
        rows = {}
        for line in capsys.readouterr().out.splitlines():
            parts = line.split()
            if len(parts) == 2 and parts[1].isdigit():
                rows[parts[0]] = int(parts[1])
        total = rows.pop("TOTAL")
        assert sum(rows.values()) == total

    def test_config_file_with_overrides(self, capsys, tmp_path):
        doc = tmp_path / "net.cfg"
        doc.write_text("u = 3\nm = 8\nn = 4\ndepth = 2\nkeypoints = 4\n"
                       "in_channels = 1\ninput_res = 32\ncoupling = true\n"
                       "supervisions = 1\nseed = 0\n")
        assert cli.dispatch(["count-params", "--config", str(doc), "--u", "2"]) == 0
        assert "u = 2" in capsys.readouterr().out

    def test_dense_arch_is_parameter_matched(self, capsys):
        assert cli.dispatch(["count-params", *SMALL]) == 0
        cu_total = int(capsys.readouterr().out.split("TOTAL")[1].split()[0])
        assert cli.dispatch(["count-params", *SMALL, "--arch", "dense"]) == 0
        out = capsys.readouterr().out
        assert "arch = dense" in out
        dense_total = int(out.split("TOTAL")[1].split()[0])
        assert abs(dense_total - cu_total) / cu_total <= 0.02

    def test_invalid_config_exits_two(self, capsys):
        assert cli.dispatch(["count-params", "--u", "0"]) == 2

    def test_missing_config_file_exits_three(self, capsys):
        assert cli.dispatch(["count-params", "--config", "/nope/net.cfg"]) == 3


class TestInspect:
    def test_writes_parseable_dot(self, capsys, tmp_path):
        dot = tmp_path / "net.dot"
        code = cli.dispatch(["inspect", "--u", "3", "--m", "8", "--n", "4",
                             "--depth", "2", "--keypoints", "4",
                             "--input-res", "32", "--dot", str(dot)])
        assert code == 0
        out = capsys.readouterr().out
        assert "coupling edges 15" in out
        name, nodes, edges = parse_dot(dot.read_text())
        assert name == "cu"
        assert len([e for e in edges if e[2].get("label") == "coupling"]) == 15

    def test_unwritable_output_exits_three(self, capsys, tmp_path):
        missing = tmp_path / "no" / "such" / "dir" / "net.dot"
        assert cli.dispatch(["inspect", *TINY, "--dot", str(missing)]) == 3


class TestGradCheck:
    def test_passes_on_tiny_config(self, capsys):
        code = cli.dispatch(["grad-check", *TINY, "--samples", "2"])
        assert code == 0
        assert "gradient check passed" in capsys.readouterr().out

    def test_failure_exits_two(self, capsys, monkeypatch):
        over = SimpleNamespace(kink_blocked=False)
        stuck = SimpleNamespace(kink_blocked=True)

        class Failing:
            passed = False
            max_rel_err = 1.0

            def failures(self):
                return [over, stuck]

            def __str__(self):
                return "stub"

        monkeypatch.setattr(cli, "finite_diff_check",
                            lambda *a, **kw: Failing())
        assert cli.dispatch(["grad-check", *TINY, "--samples", "1"]) == 2
        err = capsys.readouterr().err
        assert "FAILED" in err
        assert "1 parameter group(s) above tol" in err
        assert "could not be probed" in err


class TestGenData:
    def test_writes_dataset(self, capsys, tmp_path):
        out = tmp_path / "ds"
        code = cli.dispatch(["gen-data", "--out", str(out), "--count", "3",
                             "--seed", "5", "--input-res", "32"])
        assert code == 0
        from cunet.synth import DatasetReader
        reader = DatasetReader(out)
        assert len(reader) == 3 and reader.seed == 5

    def test_bad_resolution_exits_two(self, capsys, tmp_path):
        assert cli.dispatch(["gen-data", "--out", str(tmp_path / "d"),
                             "--count", "1", "--input-res", "30"]) == 2


class TestTrainEvalFlow:
    def test_train_then_eval(self, capsys, tmp_path):
        data = _dataset(tmp_path / "ds", count=10)
        out = tmp_path / "run"
        code = cli.dispatch(["train", *TINY, "--data", data, "--out", str(out),
                             "--epochs", "1", "--batch-size", "4"])
        assert code == 0
        stdout = capsys.readouterr().out
        assert "holding out the last 1 of 10" in stdout
        assert "best pckh@0.5" in stdout
        assert (out / "checkpoint.bin").exists()
        assert (out / "log.csv").read_text().startswith("epoch,")

        metrics = tmp_path / "m.csv"
        code = cli.dispatch(["eval", "--checkpoint", str(out / "checkpoint.bin"),
                             "--data", data, "--out", str(metrics)])
        assert code == 0
        assert metrics.read_text().startswith("joint,correct,total,pck")
        assert "pckh@0.5" in capsys.readouterr().out

    def test_eval_to_stdout(self, capsys, tmp_path):
        data = _dataset(tmp_path / "ds", count=4)
        ck = tmp_path / "ck.bin"
        cfg = CUNetConfig(u=1, m=4, n=2, depth=1, keypoints=16, in_channels=1,
                          input_res=32)
        save_checkpoint(ck, build_cu_net(cfg))
        code = cli.dispatch(["eval", "--checkpoint", str(ck), "--data", data,
                             "--out", "-"])
        assert code == 0
        out = capsys.readouterr().out
        assert "joint,correct,total,pck" in out
        assert "ALL," in out

    def test_eval_resolution_mismatch_exits_two(self, capsys, tmp_path):
        data = _dataset(tmp_path / "ds", count=2)
        ck = tmp_path / "ck.bin"
        cfg = CUNetConfig(u=1, m=4, n=2, depth=1, keypoints=16, in_channels=1,
                          input_res=64)
        save_checkpoint(ck, build_cu_net(cfg))
        assert cli.dispatch(["eval", "--checkpoint", str(ck), "--data", data,
                             "--out", "-"]) == 2

    def test_separate_validation_set(self, capsys, tmp_path):
        data = _dataset(tmp_path / "train", count=6)
        val = _dataset(tmp_path / "val", count=3, seed=2)
        out = tmp_path / "run"
        code = cli.dispatch(["train", *TINY, "--data", data, "--val-data", val,
                             "--out", str(out), "--epochs", "1",
                             "--batch-size", "4"])
        assert code == 0
        assert "holding out" not in capsys.readouterr().out

    def test_missing_data_exits_three(self, capsys, tmp_path):
        assert cli.dispatch(["train", *TINY, "--data", str(tmp_path / "nope"),
                             "--out", str(tmp_path / "run")]) == 3

    def test_single_sample_needs_explicit_val(self, capsys, tmp_path):
        data = _dataset(tmp_path / "ds", count=1)
        assert cli.dispatch(["train", *TINY, "--data", data,
                             "--out", str(tmp_path / "run"),
                             "--epochs", "1"]) == 2

    def test_missing_checkpoint_exits_three(self, capsys, tmp_path):
        data = _dataset(tmp_path / "ds", count=2)
        assert cli.dispatch(["eval", "--checkpoint", str(tmp_path / "no.bin"),
                             "--data", data]) == 3


class TestCompare:
    def test_three_way_comparison(self, capsys, tmp_path):
        data = _dataset(tmp_path / "ds", count=10)
        out = tmp_path / "cmp"
        code = cli.dispatch(["compare", *SMALL, "--data", data,
                             "--out", str(out), "--epochs", "1",
                             "--batch-size", "4"])
        assert code == 0
        stdout = capsys.readouterr().out
        assert "param counts:" in stdout
        assert "gap direction:" in stdout and "not asserted" in stdout
        lines = (out / "comparison.csv").read_text().strip().split("\n")
        assert lines[0] == "arch,params,val_pck"
        archs = [ln.split(",")[0] for ln in lines[1:]]
        assert archs == ["coupled", "stacked", "dense"]
        coupled, dense = int(lines[1].split(",")[1]), int(lines[3].split(",")[1])
        assert abs(dense - coupled) / coupled <= 0.02
        for name in archs:
            assert (out / name / "checkpoint.bin").exists()


class TestModuleEntry:
    def test_python_dash_m(self):
        proc = subprocess.run([sys.executable, "-m", "cunet", "count-params",
                               *TINY], capture_output=True, text=True)
        assert proc.returncode == 0
        assert "TOTAL" in proc.stdout

    def test_checkpoint_config_echoed_on_eval(self, capsys, tmp_path):
        data = _dataset(tmp_path / "ds", count=2)
        ck = tmp_path / "ck.bin"
        cfg = CUNetConfig(u=1, m=4, n=2, depth=1, keypoints=16, in_channels=1,
                          input_res=32, seed=3)
        save_checkpoint(ck, build_cu_net(cfg))
        assert cli.dispatch(["eval", "--checkpoint", str(ck), "--data", data,
                             "--out", "-"]) == 0
        assert "seed = 3" in capsys.readouterr().out
