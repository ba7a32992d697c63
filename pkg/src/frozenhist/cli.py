"""Command-line entry point.

Subcommands:

    pretrain  next-token pretraining of the memory model on a synthetic stream
    train     PPO training of an agent, multi-seed
    ablate    the memory-variant matrix over shared seeds, plus a stats summary
    analyze   distance matrices, token annotations, attention maps, projection report
    stats     aggregate learning-curve CSVs into summary + pairwise tables
    rollout   run episodes with a random or trained policy (``--render`` for ASCII)

Every run writes its resolved config into the output directory.  Exit codes:
0 on success, 2 for configuration errors, 1 for runtime faults.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np

from . import memory as memmod
from . import stats as statsmod
from . import tokenmap
from .checkpoint import load_arrays, save_arrays
from .config import (ConfigError, RunConfig, VARIANTS, memory_config,
                     parse_config, train_settings, write_resolved)
from .envs import make_env
from .ppo import CURVE_HEADER, train
from .rng import Rng, split_seed


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--out", required=True, help="output directory")


def _parsed(args) -> RunConfig:
    return parse_config(args.config, args.set)


# ---------------------------------------------------------------------------
# pretrain
# ---------------------------------------------------------------------------


def cmd_pretrain(args) -> int:
    cfg = _parsed(args)
    out = Path(args.out)
    write_resolved(cfg, out)
    mcfg = memory_config(cfg)
    corpus = memmod.make_mixed_corpus(cfg["vocab"], cfg["corpus_length"], cfg["seed"])
    weights, history = memmod.pretrain_clm(
        mcfg, corpus, steps=cfg["pretrain_steps"], seed=cfg["seed"],
        lr=cfg["pretrain_lr"], batch=cfg["pretrain_batch"],
    )
    save_arrays(out / "memory.ckpt", {**weights, **mcfg.to_arrays()})
    with (out / "perplexity.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "holdout_perplexity"])
        w.writerows(history)
    print(f"pretrained {cfg['pretrain_steps']} steps; "
          f"final holdout perplexity {history[-1][1]:.4f}")
    return 0


def _load_memory_weights(cfg: RunConfig) -> dict | None:
    if cfg["memory"] != "pretrained":
        return None
    path = cfg["memory_ckpt"]
    if not path:
        raise ConfigError("memory = pretrained requires memory_ckpt = <file>")
    arrays = load_arrays(path)
    return {k: v for k, v in arrays.items() if not k.startswith("cfg.")}


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _train_one(packed) -> list:
    settings, method = packed
    record = train(settings)
    record.method = method
    return record.rows


def cmd_train(args) -> int:
    cfg = _parsed(args)
    out = Path(args.out)
    write_resolved(cfg, out)
    weights = _load_memory_weights(cfg)
    seeds = [cfg["seed"] + i for i in range(cfg["seeds"])]
    jobs = [(train_settings(cfg, s, out, memory_weights=weights), cfg.method_label())
            for s in seeds]
    if cfg["jobs"] > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg["jobs"]) as pool:
            list(pool.map(_train_one, jobs))
    else:
        for job in jobs:
            _train_one(job)
    print(f"wrote {len(seeds)} learning curve(s) to {out}")
    return 0


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------


def cmd_ablate(args) -> int:
    cfg = _parsed(args)
    out = Path(args.out)
    write_resolved(cfg, out)
    requested = args.variants.split(",") if args.variants else list(VARIANTS)
    for name in requested:
        if name not in VARIANTS:
            raise ConfigError(f"unknown ablation variant {name!r}; "
                              f"expected a subset of {','.join(VARIANTS)}")
    seeds = [cfg["seed"] + i for i in range(cfg["seeds"])]
    scores: dict[tuple[str, str], list[float]] = {}
    for name in requested:
        agent_kind, memory_kind = VARIANTS[name]
        vcfg = RunConfig({**cfg.values, "agent": agent_kind, "memory": memory_kind})
        weights = None
        if memory_kind == "pretrained":
            if not cfg["memory_ckpt"]:
                raise ConfigError("the helm variant requires memory_ckpt = <file> "
                                  "(run the pretrain subcommand first)")
            weights = _load_memory_weights(vcfg)
        vdir = out / name
        vdir.mkdir(parents=True, exist_ok=True)
        write_resolved(vcfg, vdir)
        for seed in seeds:
            record = train(train_settings(vcfg, seed, vdir, memory_weights=weights))
            score = statsmod.final_score(record)
            scores.setdefault((name, cfg["env"]), []).append(score)
            print(f"{name} seed {seed}: final score {score:.4f}")
    _write_summary(out, scores, cfg["seed"])
    return 0


def _write_summary(out: Path, scores, seed: int) -> None:
    summaries, pairwise = statsmod.summarize_methods(scores, seed=seed)
    with (out / "summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "env", "iqm", "ci_lo", "ci_hi", "n_seeds"])
        for s in summaries:
            w.writerow([s.method, s.env, s.iqm, s.ci_lo, s.ci_hi, s.n_seeds])
    with (out / "pairwise.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method_a", "method_b", "p_value"])
        w.writerows(pairwise)


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------


def _write_matrix_csv(path: Path, matrix: np.ndarray, labels: list[str]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id"] + labels)
        for label, row in zip(labels, matrix):
            w.writerow([label] + [repr(float(v)) for v in row])


def write_pgm(path: Path, weights: np.ndarray) -> None:
    """8-bit binary PGM with pixel = round(255 * weight)."""
    img = np.clip(np.round(weights * 255.0), 0, 255).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode()
    path.write_bytes(header + img.tobytes())


def cmd_analyze(args) -> int:
    cfg = _parsed(args)
    out = Path(args.out)
    write_resolved(cfg, out)
    mcfg = memory_config(cfg)
    if cfg["memory"] == "pretrained":
        weights = _load_memory_weights(cfg)
        mem = memmod.TransformerMemory(mcfg, weights)
    else:
        mem = memmod.make_memory("frozen-random", mcfg, split_seed(cfg["seed"], "memory"))

    env = make_env(cfg["env"], split_seed(cfg["seed"], "analyze-env"),
                   corridor_length=cfg["corridor_length"])
    rng = Rng(split_seed(cfg["seed"], "analyze-policy"))
    agent = None
    if cfg["agent_ckpt"]:
        from .ppo import load_agent

        agent = load_agent(train_settings(cfg, cfg["seed"], None,
                                          memory_weights=_load_memory_weights(cfg)),
                           cfg["agent_ckpt"])
    observations: list[np.ndarray] = []
    episode_obs: list[np.ndarray] = []
    while len(observations) < cfg["analyze_samples"]:
        obs = env.reset()
        state = agent.init_state(1) if agent is not None else None
        first_episode = not episode_obs
        for _ in range(mcfg.mem_len):
            observations.append(obs)
            if first_episode:
                episode_obs.append(obs)
            if agent is None:
                action = rng.integers(0, env.n_actions)
            else:
                decision = agent.act(obs[None], state, rng)
                action = int(decision.actions[0])
                state = decision.state
            stepped = env.step(action)
            obs = stepped.observation
            if stepped.done or len(observations) >= cfg["analyze_samples"]:
                break
    flat = np.stack([tokenmap.flatten_observation(o) for o in observations])

    proj = tokenmap.sample_projection(flat.shape[1], mcfg.dim,
                                      split_seed(cfg["seed"], "agent-projection"))
    mapping = tokenmap.TokenSpaceMap(mem.embeddings, proj, cfg["beta"])
    betas = [float(b) for b in cfg["betas"].split(",")]
    labels = [f"obs{i}" for i in range(len(flat))]
    before, after = tokenmap.distance_matrices(flat, mapping, betas)
    _write_matrix_csv(out / "dist_obs.csv", before, labels)
    for beta, matrix in after.items():
        _write_matrix_csv(out / f"dist_beta{beta:g}.csv", matrix, labels)

    episode_flat = np.stack([tokenmap.flatten_observation(o) for o in episode_obs])
    tokens = tokenmap.nearest_token(mapping, episode_flat)
    with (out / "tokens.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "token_index"])
        w.writerows(enumerate(int(t) for t in tokens))

    x_seq = tokenmap.embed(mapping, episode_flat)
    maps = memmod.attention_maps(mem, x_seq)
    for li in range(maps.shape[0]):
        for hi in range(maps.shape[1]):
            write_pgm(out / f"attention_l{li}h{hi}.pgm", maps[li, hi])
            _write_matrix_csv(out / f"attention_l{li}h{hi}.csv", maps[li, hi],
                              [f"t{j}" for j in range(maps.shape[2])])

    pair_rng = Rng(split_seed(cfg["seed"], "analyze-pairs"))
    half = len(flat) // 2
    if half >= 1:
        report = tokenmap.distortion_stats(proj, flat[:half], flat[half : 2 * half],
                                           cfg["jl_eps"])
        with (out / "jl_report.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eps", "embed_dim", "theoretical_delta",
                        "violation_fraction", "pairs", "mean_ratio"])
            w.writerow([report.eps, report.embed_dim,
                        report.theoretical_failure_prob,
                        report.violation_fraction, report.pair_count,
                        report.mean_ratio])
    print(f"analysis artifacts written to {out}")
    return 0


# ---------------------------------------------------------------------------
# stats
# ---------------------------------------------------------------------------


def read_curve(path: Path) -> list[tuple[int, int, float, int]]:
    rows = []
    with path.open() as fh:
        header = fh.readline().strip()
        if header != CURVE_HEADER:
            raise ValueError(f"{path}:1: expected header {CURVE_HEADER!r}, got {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
            try:
                rows.append((int(parts[0]), int(parts[1]), float(parts[2]), int(parts[3])))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return rows


def cmd_stats(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scores: dict[tuple[str, str], list[float]] = {}
    base_seed = 0
    for run_dir in args.runs:
        run_dir = Path(run_dir)
        cfg = parse_config(run_dir / "config.txt")
        base_seed = cfg["seed"]
        label = cfg.method_label()
        curves = sorted(run_dir.glob("curve_seed*.csv"))
        if not curves:
            raise FileNotFoundError(f"no curve_seed*.csv files in {run_dir}")
        for curve in curves:
            rows = read_curve(curve)
            seed = int(curve.stem.replace("curve_seed", ""))
            record = statsmod.RunRecord(seed=seed, rows=rows, method=label)
            scores.setdefault((label, cfg["env"]), []).append(
                statsmod.final_score(record))
    _write_summary(out, scores, base_seed)
    print(f"summary written to {out}")
    return 0


# ---------------------------------------------------------------------------
# rollout
# ---------------------------------------------------------------------------


def cmd_rollout(args) -> int:
    cfg = _parsed(args)
    out = Path(args.out)
    write_resolved(cfg, out)
    env = make_env(cfg["env"], split_seed(cfg["seed"], "rollout-env"),
                   corridor_length=cfg["corridor_length"])
    rng = Rng(split_seed(cfg["seed"], "rollout-policy"))
    returns = []
    for ep in range(cfg["episodes"]):
        env.reset()
        total = 0.0
        done = False
        while not done:
            if args.render:
                print(env.render())
                print()
            stepped = env.step(rng.integers(0, env.n_actions))
            total += stepped.reward
            done = stepped.done
        returns.append(total)
        print(f"episode {ep}: return {total:.3f} length {stepped.info['length']}")
    print(f"mean return over {len(returns)} episodes: {np.mean(returns):.4f}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="frozenhist", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="next-token pretraining of the memory model")
    _add_common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="PPO training, multi-seed")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="memory-variant matrix over shared seeds")
    _add_common(p)
    p.add_argument("--variants", default="",
                   help=f"comma list from {{{','.join(VARIANTS)}}} (default: all)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("analyze", help="representation analysis artifacts")
    _add_common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("stats", help="aggregate learning-curve CSVs")
    p.add_argument("runs", nargs="+", help="train/ablate output directories")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("rollout", help="run episodes with a random policy")
    _add_common(p)
    p.add_argument("--render", action="store_true", help="print ASCII frames")
    p.set_defaults(func=cmd_rollout)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime fault: distinct exit code
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
