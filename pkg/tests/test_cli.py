import pytest

import diffqkv.kernel
from diffqkv.cli import main
from diffqkv.config import format_config_text, toy_preset


class TestVerifyCommand:
    def test_cost_suite_passes_and_reports_rate(self, capsys):
        assert main(["verify", "--suite", "cost"]) == 0
        out = capsys.readouterr().out
        assert "37.5000%" in out
        assert "PASS" in out and "FAIL" not in out

    def test_unknown_suite_exit_2(self, capsys):
        assert main(["verify", "--suite", "bogus"]) == 2
        assert "unknown suite" in capsys.readouterr().err

    def test_corrupted_head_map_fails_equivalence(self, monkeypatch, capsys):
        real = diffqkv.kernel.head_index_map

        def corrupted(idx_q, n_q, n_i):
            value = real(idx_q, n_q, n_i)
            return (value + 1) % n_i if n_i > 1 else value

        monkeypatch.setattr(diffqkv.kernel, "head_index_map", corrupted)
        assert main(["verify", "--suite", "equivalence", "--instances", "8"]) == 1
        out = capsys.readouterr().out
        assert "[FAIL] flexhead_attention == naive reference" in out


class TestCostCommand:
    def test_writes_csv_and_prints_rate(self, tmp_path, capsys):
        out_path = tmp_path / "cost.csv"
        assert main(["cost", "--std", "gqa-16", "--sigma", "sigma-1.5b",
                     "--grid", "long", "--out", str(out_path)]) == 0
        lines = out_path.read_text().strip().split("\n")
        assert len(lines) == 37  # header + 6x6 grid
        assert "3/8 (37.5000%)" in capsys.readouterr().out

    def test_custom_grid_spec(self, tmp_path):
        out_path = tmp_path / "cost.csv"
        assert main(["cost", "--grid", "8,16:4", "--out", str(out_path)]) == 0
        assert len(out_path.read_text().strip().split("\n")) == 3

    def test_bad_grid_spec_exit_2(self, tmp_path):
        assert main(["cost", "--grid", "nope", "--out", str(tmp_path / "x.csv")]) == 2

    def test_unknown_config_exit_1(self, tmp_path):
        assert main(["cost", "--std", "missing.cfg", "--out", str(tmp_path / "x.csv")]) == 1


class TestBenchCommand:
    def test_small_bench_run(self, tmp_path, capsys):
        out_path = tmp_path / "bench.csv"
        code = main(["bench", "--grid", "8,32:8", "--reps", "3", "--out", str(out_path)])
        assert code == 0
        assert out_path.exists()
        assert "0.625" in capsys.readouterr().out

    def test_reps_below_three_exit_2(self, tmp_path):
        assert main(["bench", "--grid", "8:8", "--reps", "2", "--out", str(tmp_path / "x.csv")]) == 2


class TestTrainAndDecode:
    def test_train_writes_checkpoint_and_decode_runs(self, tmp_path, capsys):
        ckpt = tmp_path / "toy.ckpt"
        code = main(["train-toy", "--steps", "3", "--seed", "1",
                     "--batch", "4", "--seq-len", "8", "--out", str(ckpt)])
        assert code == 0
        assert ckpt.exists()
        out = capsys.readouterr().out
        assert "step     1" in out and "final loss" in out

        assert main(["decode", "--checkpoint", str(ckpt), "--prompt", "3 1 4 1", "--n", "5"]) == 0
        tokens = capsys.readouterr().out.split()
        assert len(tokens) == 9
        assert tokens[:4] == ["3", "1", "4", "1"]

    def test_train_accepts_config_file(self, tmp_path):
        cfg_path = tmp_path / "toy.cfg"
        cfg_path.write_text(format_config_text(toy_preset("gqa-4")))
        assert main(["train-toy", "--config", str(cfg_path), "--steps", "2",
                     "--batch", "2", "--seq-len", "6"]) == 0

    def test_decode_bad_prompt_exit_2(self, tmp_path):
        ckpt = tmp_path / "toy.ckpt"
        main(["train-toy", "--steps", "1", "--batch", "2", "--seq-len", "6", "--out", str(ckpt)])
        assert main(["decode", "--checkpoint", str(ckpt), "--prompt", "abc", "--n", "2"]) == 2

    def test_env_seed_override(self, tmp_path, capsys, monkeypatch):
        def run():
            main(["train-toy", "--steps", "2", "--batch", "2", "--seq-len", "6"])
            return capsys.readouterr().out

        monkeypatch.setenv("DIFFQKV_SEED", "7")
        with_env = run()
        monkeypatch.setenv("DIFFQKV_SEED", "8")
        other_env = run()
        monkeypatch.setenv("DIFFQKV_SEED", "7")
        assert run() == with_env
        assert with_env != other_env


class TestArgparseBehaviour:
    def test_missing_subcommand_exit_2(self):
        with pytest.raises(SystemExit) as excinfo:
            main([])
        assert excinfo.value.code == 2
