"""End-to-end command-line workflows on miniature budgets."""

import csv
from pathlib import Path

import numpy as np
import pytest

from frozenhist.cli import main, read_curve
from frozenhist.config import ConfigError, parse_config

FAST_TRAIN = [
    "--set", "total_steps=512", "--set", "num_envs=4", "--set", "rollout=16",
    "--set", "minibatches=2", "--set", "vocab=16", "--set", "dim=16",
    "--set", "layers=1", "--set", "heads=2", "--set", "ffw=16",
    "--set", "mem_len=8",
]


def rows_of(path: Path):
    with path.open() as fh:
        return list(csv.DictReader(fh))


class TestConfig:
    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            parse_config(None, ["flux_capacitance=1"])

    def test_file_plus_overrides(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("env = randmaze\nseed = 5  # comment\n\n# full-line comment\n")
        cfg = parse_config(cfg_file, ["seed=9"])
        assert cfg["env"] == "randmaze"
        assert cfg["seed"] == 9

    def test_env_defaults_resolve(self):
        key = parse_config(None, ["env=keytask"])
        assert key["beta"] == 100.0 and key["rollout"] == 128
        tm = parse_config(None, ["env=tmaze"])
        assert tm["lam"] == 0.95

    def test_bad_value_type(self):
        with pytest.raises(ConfigError, match="seed"):
            parse_config(None, ["seed=banana"])

    def test_malformed_line_number_reported(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("env = tmaze\nthis line is wrong\n")
        with pytest.raises(ConfigError, match=":2:"):
            parse_config(cfg_file)

    def test_invalid_vocab_rejected_before_work(self):
        assert main(["train", "--out", "/tmp/nonexistent-unused",
                     "--set", "vocab=0"]) == 2


class TestTrainCommand:
    def test_seeds_produce_one_curve_each(self, tmp_path):
        out = tmp_path / "run"
        code = main(["train", "--out", str(out), "--set", "env=tmaze",
                     "--set", "corridor_length=2", "--set", "seeds=3",
                     "--set", "agent=markov", *FAST_TRAIN])
        assert code == 0
        curves = sorted(out.glob("curve_seed*.csv"))
        assert [c.name for c in curves] == [
            "curve_seed0.csv", "curve_seed1.csv", "curve_seed2.csv"]
        assert (out / "config.txt").exists()
        assert (out / "final.ckpt").exists()

    def test_rerun_bit_exact(self, tmp_path):
        args = ["train", "--set", "env=tmaze", "--set", "corridor_length=2",
                "--set", "seed=3", *FAST_TRAIN]
        assert main([*args, "--out", str(tmp_path / "a")]) == 0
        assert main([*args, "--out", str(tmp_path / "b")]) == 0
        a = (tmp_path / "a" / "curve_seed3.csv").read_bytes()
        b = (tmp_path / "b" / "curve_seed3.csv").read_bytes()
        assert a == b

    def test_parallel_seed_jobs(self, tmp_path):
        out = tmp_path / "par"
        code = main(["train", "--out", str(out), "--set", "env=tmaze",
                     "--set", "corridor_length=2", "--set", "seeds=2",
                     "--set", "jobs=2", "--set", "agent=markov", *FAST_TRAIN])
        assert code == 0
        assert len(list(out.glob("curve_seed*.csv"))) == 2

    def test_resolved_config_reparses_identically(self, tmp_path):
        out = tmp_path / "run"
        main(["train", "--out", str(out), "--set", "env=tmaze",
              "--set", "agent=markov", *FAST_TRAIN])
        resolved = parse_config(out / "config.txt")
        assert resolved["env"] == "tmaze"
        assert resolved["rollout"] == 16
        assert resolved["total_steps"] == 512


class TestPretrainCommand:
    def test_pretrain_writes_checkpoint_and_log(self, tmp_path):
        out = tmp_path / "pre"
        code = main(["pretrain", "--out", str(out),
                     "--set", "vocab=8", "--set", "dim=16", "--set", "layers=1",
                     "--set", "heads=2", "--set", "ffw=16", "--set", "mem_len=8",
                     "--set", "pretrain_steps=30", "--set", "corpus_length=2000"])
        assert code == 0
        assert (out / "memory.ckpt").exists()
        log = rows_of(out / "perplexity.csv")
        assert log[0]["step"] == "0"
        assert float(log[-1]["holdout_perplexity"]) > 0


class TestStatsCommand:
    def _write_run(self, out: Path, label_overrides, scores):
        out.mkdir(parents=True)
        main_args = ["train", "--out", str(out), *label_overrides, *FAST_TRAIN,
                     "--set", "total_steps=0"]
        assert main(main_args) == 0
        for seed, value in enumerate(scores):
            curve = out / f"curve_seed{seed}.csv"
            lines = ["step,episode,return,length,seed"]
            for ep in range(120):
                lines.append(f"{ep * 10},{ep},{value + 0.001 * ep},{5},{seed}")
            curve.write_text("\n".join(lines) + "\n")

    def test_summary_and_pairwise(self, tmp_path):
        run_a = tmp_path / "markov"
        run_b = tmp_path / "recurrent"
        self._write_run(run_a, ["--set", "agent=markov", "--set", "env=tmaze"],
                        [0.1, 0.15, 0.2])
        self._write_run(run_b, ["--set", "agent=trained-recurrent",
                                "--set", "env=tmaze"], [0.7, 0.75, 0.8])
        out = tmp_path / "summary"
        assert main(["stats", str(run_a), str(run_b), "--out", str(out)]) == 0
        summary = rows_of(out / "summary.csv")
        assert {r["method"] for r in summary} == {"markov", "trained-recurrent"}
        for r in summary:
            assert r["env"] == "tmaze"
            assert int(r["n_seeds"]) == 3
            assert float(r["ci_lo"]) <= float(r["iqm"]) <= float(r["ci_hi"])
        pairs = rows_of(out / "pairwise.csv")
        assert len(pairs) == 2
        lookup = {(r["method_a"], r["method_b"]): float(r["p_value"]) for r in pairs}
        assert lookup[("trained-recurrent", "markov")] < 0.05
        assert lookup[("markov", "trained-recurrent")] > 0.9

    def test_single_run_single_row(self, tmp_path):
        run = tmp_path / "solo"
        self._write_run(run, ["--set", "agent=markov"], [0.4, 0.5])
        out = tmp_path / "s"
        assert main(["stats", str(run), "--out", str(out)]) == 0
        assert len(rows_of(out / "summary.csv")) == 1

    def test_malformed_curve_reports_line(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("step,episode,return,length,seed\n1,2,not-a-number,4,5\n")
        with pytest.raises(ValueError, match=":2:"):
            read_curve(bad)

    def test_wrong_header_rejected(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b,c\n")
        with pytest.raises(ValueError, match="header"):
            read_curve(bad)


class TestAnalyzeCommand:
    def test_artifacts_present_and_wellformed(self, tmp_path):
        out = tmp_path / "analysis"
        code = main(["analyze", "--out", str(out), "--set", "env=tmaze",
                     "--set", "corridor_length=3", "--set", "vocab=16",
                     "--set", "dim=16", "--set", "layers=1", "--set", "heads=2",
                     "--set", "ffw=16", "--set", "mem_len=8",
                     "--set", "analyze_samples=12", "--set", "betas=1,10,100"])
        assert code == 0
        for beta in ("1", "10", "100"):
            assert (out / f"dist_beta{beta}.csv").exists()
        assert (out / "dist_obs.csv").exists()
        tokens = rows_of(out / "tokens.csv")
        assert all(0 <= int(r["token_index"]) < 16 for r in tokens)
        jl = rows_of(out / "jl_report.csv")[0]
        assert float(jl["theoretical_delta"]) > 0
        # attention PGMs: binary grayscale with zero upper triangle
        pgm = next(out.glob("attention_l0h0.pgm")).read_bytes()
        assert pgm.startswith(b"P5\n")
        header, rest = pgm.split(b"255\n", 1)
        dims = header.split(b"\n")[1].split()
        w, h = int(dims[0]), int(dims[1])
        img = np.frombuffer(rest, dtype=np.uint8).reshape(h, w)
        assert np.all(img[np.triu_indices(h, k=1)] == 0)
        rows = rows_of(out / "attention_l0h0.csv")
        assert len(rows) == h


class TestAgentCheckpointRoundTrip:
    def test_trained_agent_reloads_and_acts_identically(self, tmp_path):
        from frozenhist.config import parse_config, train_settings
        from frozenhist.ppo import load_agent

        out = tmp_path / "run"
        assert main(["train", "--out", str(out), "--set", "env=tmaze",
                     "--set", "corridor_length=2", *FAST_TRAIN]) == 0
        cfg = parse_config(out / "config.txt")
        settings = train_settings(cfg, cfg["seed"], None)
        agent = load_agent(settings, out / "final.ckpt")
        obs = np.zeros((1, 3, 3), dtype=np.int64)
        a = agent.act(obs, agent.init_state(1), greedy=True)
        b = agent.act(obs, agent.init_state(1), greedy=True)
        np.testing.assert_array_equal(a.actions, b.actions)
        np.testing.assert_allclose(a.value, b.value)

    def test_analyze_with_trained_policy(self, tmp_path):
        out = tmp_path / "run"
        assert main(["train", "--out", str(out), "--set", "env=tmaze",
                     "--set", "corridor_length=2", *FAST_TRAIN]) == 0
        analysis = tmp_path / "analysis"
        code = main(["analyze", "--out", str(analysis), "--set", "env=tmaze",
                     "--set", "corridor_length=2", *FAST_TRAIN,
                     "--set", f"agent_ckpt={out / 'final.ckpt'}",
                     "--set", "analyze_samples=10"])
        assert code == 0
        assert (analysis / "tokens.csv").exists()

    def test_runtime_fault_exits_one(self, tmp_path):
        # stats over a directory with no curves is a runtime fault, not a
        # config error
        missing = tmp_path / "empty"
        missing.mkdir()
        (missing / "config.txt").write_text("env = tmaze\n")
        assert main(["stats", str(missing), "--out", str(tmp_path / "s")]) == 1


class TestRolloutCommand:
    def test_random_rollout_runs(self, tmp_path, capsys):
        code = main(["rollout", "--out", str(tmp_path / "r"),
                     "--set", "env=tmaze", "--set", "corridor_length=2",
                     "--set", "episodes=3"])
        assert code == 0
        text = capsys.readouterr().out
        assert "mean return over 3 episodes" in text

    def test_render_emits_frames(self, tmp_path, capsys):
        code = main(["rollout", "--out", str(tmp_path / "r"), "--render",
                     "--set", "env=tmaze", "--set", "corridor_length=1",
                     "--set", "episodes=1"])
        assert code == 0
        assert "A" in capsys.readouterr().out


class TestAblateCommand:
    def test_variant_matrix_smoke(self, tmp_path):
        out = tmp_path / "ablate"
        code = main(["ablate", "--out", str(out),
                     "--variants", "frozen-random,noise,markov",
                     "--set", "env=tmaze", "--set", "corridor_length=2",
                     "--set", "seeds=2", *FAST_TRAIN])
        assert code == 0
        for variant in ("frozen-random", "noise", "markov"):
            curves = list((out / variant).glob("curve_seed*.csv"))
            assert len(curves) == 2, variant
        summary = rows_of(out / "summary.csv")
        assert {r["method"] for r in summary} == {"frozen-random", "noise", "markov"}

    def test_unknown_variant_rejected(self, tmp_path):
        assert main(["ablate", "--out", str(tmp_path / "x"),
                     "--variants", "oracle"]) == 2

    def test_helm_variant_requires_checkpoint(self, tmp_path):
        assert main(["ablate", "--out", str(tmp_path / "y"),
                     "--variants", "helm", *FAST_TRAIN]) == 2
