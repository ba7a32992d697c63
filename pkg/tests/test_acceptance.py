"""The acceptance gate: one test per criterion, at its stated tolerance.

Each test prints a PASS line on success (visible with ``pytest -v -s``); the
two RL criteria train real agents and are marked ``slow`` (deselect with
``-m "not slow"``).  Budgets and hyperparameters for the RL criteria were
calibrated once on the reference 2-core box and are frozen here.
"""

import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest

from frozenhist import autodiff as ad
from frozenhist import hopfield as hf
from frozenhist import memory as mem
from frozenhist import stats as fstats
from frozenhist import tokenmap as tm
from frozenhist.agent import AgentSettings, build_agent
from frozenhist.memory import MemoryConfig
from frozenhist.ppo import PpoConfig, TrainSettings, gae, train
from frozenhist.rng import Rng, split_seed


def ok(name: str, detail: str = ""):
    print(f"ACCEPTANCE PASS: {name}" + (f" ({detail})" if detail else ""))


# ---------------------------------------------------------------------------
# 1. capacity-bound constants
# ---------------------------------------------------------------------------


def test_c01_capacity_bound_constants():
    one = hf.capacity_bound(beta=1.0, pattern_norm_scale=3.0, dim=20,
                            failure_prob=0.001)
    s1 = one.a + np.log(one.b)
    assert 1.27 < s1 < 1.28
    assert abs(one.c - 3.1546) <= 1e-3
    two = hf.capacity_bound(beta=1.0, pattern_norm_scale=1.0, dim=75,
                            failure_prob=0.001)
    s2 = two.a + np.log(two.b)
    assert -0.95 < s2 < -0.94
    assert abs(two.c - 1.3718) <= 1e-3
    ok("capacity-bound constants",
       f"c={one.c:.4f}/{two.c:.4f}, a+ln b={s1:.4f}/{s2:.4f}")


# ---------------------------------------------------------------------------
# 2. Lambert-W residuals
# ---------------------------------------------------------------------------


def test_c02_lambert_w_residuals():
    worst = 0.0
    for x in np.logspace(-6, 6, 121):
        w = hf.lambert_w0(x)
        worst = max(worst, float(abs(w * np.exp(w) - np.longdouble(x))))
    assert worst < 1e-12
    ok("Lambert-W residuals", f"worst |w e^w - x| = {worst:.2e}")


# ---------------------------------------------------------------------------
# 3. retrieval-error bound soundness
# ---------------------------------------------------------------------------


def test_c03_retrieval_bound_soundness():
    rng = Rng(1701)
    trials = 0
    while trials < 1000:
        k = 2 + rng.integers(0, 15)          # k <= 16
        m = max(k, 4 + rng.integers(0, 61))  # m <= 64
        beta = 25.0 + rng.uniform() * 100.0
        scale = 0.5 + rng.uniform() * 1.0
        gauss = rng.normal(m * m).reshape(m, m)
        q, _ = np.linalg.qr(gauss)
        store = hf.PatternStore.create(q[:k] * scale, beta)
        if not all(hf.well_separated(store, i) for i in range(k)):
            continue
        i = rng.integers(0, k)
        xi = store.patterns[i] + rng.normal(m) * (0.05 * scale)
        measured = np.linalg.norm(hf.retrieve(store, xi).retrieved - store.patterns[i])
        _, bound = hf.retrieval_error_bound(store, xi, i)
        assert measured <= bound, (trials, measured, bound)
        trials += 1
    ok("retrieval-error bound soundness", "1000/1000 trials under the bound")


# ---------------------------------------------------------------------------
# 4. retrieval limits and energy descent
# ---------------------------------------------------------------------------


def test_c04_retrieval_limits_and_energy_descent():
    rng = Rng(1702)
    # soft limit: pattern mean
    for _ in range(20):
        k = 2 + rng.integers(0, 7)
        m = 4 + rng.integers(0, 13)
        store = hf.PatternStore.create(rng.normal(k * m).reshape(k, m), 1e-8)
        err = np.linalg.norm(hf.retrieve(store, rng.normal(m)).retrieved
                             - store.patterns.mean(axis=0))
        assert err < 1e-6
    # sharp limit: dot-product argmax pattern on well-separated stores
    for _ in range(20):
        k = 2 + rng.integers(0, 7)
        m = max(k, 8 + rng.integers(0, 9))
        gauss = rng.normal(m * m).reshape(m, m)
        q, _ = np.linalg.qr(gauss)
        store = hf.PatternStore.create(q[:k], 1e4)
        xi = store.patterns[rng.integers(0, k)] + rng.normal(m) * 0.05
        target = store.patterns[int(np.argmax(store.patterns @ xi))]
        assert np.linalg.norm(hf.retrieve(store, xi).retrieved - target) < 1e-6
    # energy never increases across one update
    for _ in range(1000):
        k = 2 + rng.integers(0, 7)
        m = 4 + rng.integers(0, 13)
        beta = float(10 ** (rng.uniform() * 4 - 2))
        store = hf.PatternStore.create(rng.normal(k * m).reshape(k, m), beta)
        rep = hf.retrieve(store, rng.normal(m) * 2)
        assert rep.energy_after <= rep.energy_before + 1e-9
    ok("retrieval limits + energy descent")


# ---------------------------------------------------------------------------
# 5. projection distortion statistics
# ---------------------------------------------------------------------------


def test_c05_projection_distortion():
    n, m, eps, pairs = 1024, 256, 0.5, 10_000
    rng = Rng(1703)
    proj = tm.sample_projection(n, m, seed=99)
    a = rng.normal(pairs * n).reshape(pairs, n)
    b = rng.normal(pairs * n).reshape(pairs, n)
    report = tm.distortion_stats(proj, a, b, eps)
    violations = round(report.violation_fraction * report.pair_count)
    assert violations <= 5
    assert 0.95 <= report.mean_ratio <= 1.05
    delta = tm.jl_failure_prob(m, eps)
    assert 4e-5 < delta < 6e-5  # the output-dimension failure bound
    ok("projection distortion",
       f"{violations} violations / {pairs} pairs, mean ratio {report.mean_ratio:.4f}")


# ---------------------------------------------------------------------------
# 6. gradient correctness, primitives + full PPO loss
# ---------------------------------------------------------------------------


def test_c06_gradient_correctness():
    from tests.test_autodiff import FD_TOL, fd_check, _leaf

    rng = np.random.default_rng(1704)
    checks = 0
    cases = [
        (lambda a, b: ad.add(a, b), [(3, 4), (4,)]),
        (lambda a, b: ad.sub(a, b), [(3, 4), (3, 4)]),
        (lambda a, b: ad.mul(a, b), [(3, 4), (3, 4)]),
        (lambda a, b: ad.div(a, ad.add(ad.mul(b, b), 1.0)), [(3, 4), (3, 4)]),
        (lambda a: ad.neg(a), [(6,)]),
        (lambda a, b: ad.matmul(a, b), [(3, 4), (4, 5)]),
        (lambda a, b: ad.matmul(a, b), [(2, 3, 4), (2, 4, 5)]),
        (lambda a: ad.relu(a), [(5, 5)]),
        (lambda a: ad.tanh(a), [(5, 5)]),
        (lambda a: ad.sigmoid(a), [(5, 5)]),
        (lambda a: ad.exp(a), [(5, 5)]),
        (lambda a: ad.log(ad.add(ad.mul(a, a), 0.5)), [(5, 5)]),
        (lambda a, b: ad.minimum(a, b), [(5, 5), (5, 5)]),
        (lambda a: ad.clip(a, -0.5, 0.5), [(5, 5)]),
        (lambda a: ad.sum_(a, axis=-1), [(4, 6)]),
        (lambda a: ad.mean(a, axis=0), [(4, 6)]),
        (lambda a: ad.reshape(a, (2, 12)), [(4, 6)]),
        (lambda a: ad.transpose(a, (1, 0)), [(4, 6)]),
        (lambda a, b: ad.concat([a, b], axis=-1), [(4, 2), (4, 3)]),
        (lambda a: ad.softmax(a), [(5, 7)]),
        (lambda a: ad.log_softmax(a), [(5, 7)]),
        (lambda a, g, b: ad.layernorm(a, g, b), [(5, 7), (7,), (7,)]),
    ]
    for build, shapes in cases:
        tensors = [_leaf(rng, *s) for s in shapes]
        worst = fd_check(build, tensors, rng, samples_per_tensor=5)
        assert worst < FD_TOL
        checks += sum(min(5, t.data.size) for t in tensors)
    # gathers
    table = _leaf(rng, 8, 5)
    ids = rng.integers(0, 8, size=(3, 4))
    assert fd_check(lambda t: ad.embedding(t, ids), [table], rng, 10) < FD_TOL
    x = _leaf(rng, 6, 5)
    picks = rng.integers(0, 5, size=6)
    assert fd_check(lambda t: ad.take_along(t, picks), [x], rng, 10) < FD_TOL
    checks += 20

    # the full PPO loss graph on a real agent and synthetic rollout
    from frozenhist.ppo import _normalized, _surrogate_loss

    settings = AgentSettings(obs_shape=(3, 3), n_actions=4, feat_dim=16)
    memcfg = MemoryConfig(vocab=16, dim=16, layers=1, heads=2, ffw=16, mem_len=8)
    agent = build_agent("memory", settings, seed=5, memory_cfg=memcfg)
    srng = Rng(6)
    batch = 12
    obs = srng.integers(0, 8, batch * 9).reshape(batch, 3, 3)
    state = agent.init_state(batch)
    out = agent.act(obs, state, srng)
    adv = _normalized(srng.normal(batch))
    rets = srng.normal(batch)
    cfg = PpoConfig()

    def build_loss():
        feat = agent.features_graph(obs, out.h)
        logits, values = agent.head_graph(feat)
        loss, _ = _surrogate_loss(cfg, logits, values, out.actions, out.logp,
                                  adv, rets)
        return loss

    tape = ad.Tape()
    with tape:
        loss = build_loss()
    tape.backward(loss)
    fd_rng = np.random.default_rng(7)
    worst = 0.0
    fd_checks = 0
    for p in agent.trainable():
        for _ in range(9):
            idx = np.unravel_index(fd_rng.integers(0, p.data.size), p.data.shape)
            old = p.data[idx]
            h = 1e-4
            p.data[idx] = old + h
            lp = float(build_loss().data)
            p.data[idx] = old - h
            lm = float(build_loss().data)
            p.data[idx] = old
            fd = (lp - lm) / (2 * h)
            an = 0.0 if p.grad is None else float(p.grad[idx])
            worst = max(worst, abs(fd - an) / max(1.0, abs(fd), abs(an)))
            fd_checks += 1
    assert worst < FD_TOL, worst
    assert fd_checks >= 100
    ok("gradient correctness",
       f"{checks} primitive probes + {fd_checks} PPO-loss probes, worst {worst:.2e}")


# ---------------------------------------------------------------------------
# 7. advantage-estimation oracle equivalence
# ---------------------------------------------------------------------------


def test_c07_gae_oracle():
    from tests.test_ppo import gae_oracle

    rng = Rng(1705)
    for _ in range(1000):
        t_len = 1 + rng.integers(0, 32)
        batch = 1 + rng.integers(0, 2)
        r = rng.normal(t_len * batch).reshape(t_len, batch)
        v = rng.normal(t_len * batch).reshape(t_len, batch)
        d = (rng.uniform(t_len * batch).reshape(t_len, batch) < 0.25).astype(float)
        boot = rng.normal(batch)
        gamma, lam = 0.5 + 0.5 * rng.uniform(), rng.uniform()
        adv, ret = gae(r, v, d, boot, gamma, lam)
        adv_o, ret_o = gae_oracle(r, v, d, boot, gamma, lam)
        np.testing.assert_allclose(adv, adv_o, atol=1e-12)
        np.testing.assert_allclose(ret, ret_o, atol=1e-12)
    ok("advantage estimation vs recursive oracle", "1000 rollouts at 1e-12")


# ---------------------------------------------------------------------------
# 8. streaming-register equivalence
# ---------------------------------------------------------------------------


def test_c08_streaming_equivalence():
    rng = Rng(1706)
    cfg = MemoryConfig(vocab=16, dim=16, layers=2, heads=2, ffw=32, mem_len=32)
    for model_i in range(100):
        model = mem.TransformerMemory(cfg, mem.init_weights(cfg, 9000 + model_i))
        t_len = 1 + rng.integers(0, cfg.mem_len)
        xs = rng.normal(t_len * cfg.dim).reshape(t_len, cfg.dim)
        full = model.full_forward(xs)
        state = model.init_state(1)
        for t in range(t_len):
            h, state = model.step(state, xs[t][None])
            assert np.abs(h[0] - full[t]).max() < 1e-8
    ok("streaming equivalence", "100 models, T <= 32, tol 1e-8")


# ---------------------------------------------------------------------------
# 9. pretraining perplexities
# ---------------------------------------------------------------------------


def test_c09_pretraining_perplexity():
    # fully predictable period-8 stream: holdout perplexity < 1.2
    cfg = MemoryConfig(vocab=8, dim=16, layers=2, heads=2, ffw=32, mem_len=16)
    cyclic = mem.make_cyclic_corpus(8, 4000)
    _, hist = mem.pretrain_clm(cfg, cyclic, steps=2000, seed=1, lr=3e-3,
                               batch=8, window=16, eval_every=500)
    cyclic_ppl = hist[-1][1]
    assert cyclic_ppl < 1.2

    # first-order chain: perplexity within 10% of the analytic entropy rate
    vocab = 6
    mcfg = MemoryConfig(vocab=vocab, dim=16, layers=2, heads=2, ffw=32, mem_len=16)
    chain = mem.make_markov_chain(vocab, seed=2)
    corpus = mem.sample_markov_corpus(chain, 30_000, seed=3)
    _, hist2 = mem.pretrain_clm(mcfg, corpus, steps=1500, seed=1, lr=3e-3,
                                batch=8, window=16, eval_every=500)
    target = float(np.exp(mem.markov_entropy_rate(chain)))
    markov_ppl = hist2[-1][1]
    assert abs(markov_ppl - target) / target < 0.10
    ok("pretraining perplexity",
       f"cyclic {cyclic_ppl:.3f} < 1.2; chain {markov_ppl:.3f} vs rate {target:.3f}")


# ---------------------------------------------------------------------------
# 10/11. the RL experiments (slow)
# ---------------------------------------------------------------------------

TMAZE_BUDGET = 250_000   # calibrated; criterion allows up to 300k
MAZE_BUDGET = 500_000

TMAZE_MEMCFG = MemoryConfig(vocab=256, dim=64, layers=2, heads=4, ffw=64,
                            mem_len=32)


def _tmaze_settings(seed: int, agent_kind: str) -> TrainSettings:
    # the baseline shares the encoder architecture (output dim matched to
    # the memory width) and differs only in the missing frozen branch
    return TrainSettings(
        env_kind="tmaze", corridor_length=8, agent_kind=agent_kind,
        memory_kind="frozen-random",
        memory_cfg=TMAZE_MEMCFG if agent_kind == "memory" else None,
        feat_dim=64,
        beta=100.0, seed=seed,
        ppo=PpoConfig(total_steps=TMAZE_BUDGET, rollout=64, num_envs=16,
                      minibatches=8, lr=5e-4, entropy_coef=1e-2, gamma=0.99,
                      lam=0.95),
    )


def _run_tmaze(packed):
    seed, kind = packed
    record = train(_tmaze_settings(seed, kind))
    return fstats.final_score(record)


@pytest.mark.slow
def test_c10_memory_separation_on_corridor_task():
    seeds = list(range(1, 11))
    jobs = [(s, "memory") for s in seeds] + [(s, "markov") for s in seeds]
    workers = min(2, os.cpu_count() or 1)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(_run_tmaze, jobs))
    memory_scores = results[: len(seeds)]
    markov_scores = results[len(seeds):]
    passing = sum(s >= 0.8 for s in memory_scores)
    markov_iqm = fstats.iqm(markov_scores)
    p = fstats.wilcoxon_rank_sum_one_sided(memory_scores, markov_scores)
    assert passing >= 8, f"memory scores: {np.round(memory_scores, 3)}"
    assert markov_iqm <= 0.2, f"markov IQM {markov_iqm}"
    assert p < 0.05, f"rank-sum p {p}"
    ok("corridor-task memory separation",
       f"{passing}/10 seeds >= 0.8; markov IQM {markov_iqm:.3f}; p {p:.2e}")


def _maze_settings(seed: int, agent_kind: str) -> TrainSettings:
    # memory dim 16 calibrated: a compact frozen feature block keeps pace
    # with the purely reactive baseline on this task
    return TrainSettings(
        env_kind="randmaze", agent_kind=agent_kind,
        memory_kind="frozen-random",
        memory_cfg=MemoryConfig(vocab=256, dim=16, layers=2, heads=2,
                                ffw=64, mem_len=32) if agent_kind == "memory" else None,
        feat_dim=16 if agent_kind == "memory" else 32,
        beta=100.0, seed=seed,
        ppo=PpoConfig(total_steps=MAZE_BUDGET, rollout=64, num_envs=16,
                      minibatches=8, lr=3e-4, entropy_coef=1e-2, gamma=0.99,
                      lam=0.95),
    )


def _run_maze(packed):
    seed, kind = packed
    record = train(_maze_settings(seed, kind))
    return fstats.final_score(record)


def _random_policy_maze_score(seed: int, episodes: int = 300) -> float:
    from frozenhist.envs import make_env

    env = make_env("randmaze", seed)
    rng = Rng(split_seed(seed, "baseline-policy"))
    totals = []
    for _ in range(episodes):
        env.reset()
        total, done = 0.0, False
        while not done:
            step = env.step(rng.integers(0, 4))
            total += step.reward
            done = step.done
        totals.append(total)
    return float(np.mean(totals))


@pytest.mark.slow
def test_c11_maze_qualitative_ordering():
    seeds = list(range(1, 11))
    jobs = [(s, "memory") for s in seeds] + [(s, "markov") for s in seeds]
    workers = min(2, os.cpu_count() or 1)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(_run_maze, jobs))
    memory_scores = results[: len(seeds)]
    markov_scores = results[len(seeds):]
    memory_iqm = fstats.iqm(memory_scores)
    markov_iqm = fstats.iqm(markov_scores)
    markov_lo, _ = fstats.bootstrap_ci(markov_scores, seed=0)
    random_baseline = _random_policy_maze_score(7)
    # ordering with confidence-interval overlap allowance: the memory agent
    # may not fall below the markov CI floor, and both must clearly beat
    # the random policy
    assert memory_iqm >= markov_lo, (memory_iqm, markov_lo)
    assert memory_iqm > random_baseline + 0.05
    assert markov_iqm > random_baseline + 0.05
    ok("maze qualitative ordering",
       f"memory IQM {memory_iqm:.3f} vs markov {markov_iqm:.3f} "
       f"(CI floor {markov_lo:.3f}); random {random_baseline:.3f}")


# ---------------------------------------------------------------------------
# 12. statistics oracles
# ---------------------------------------------------------------------------


def test_c12_statistics_oracles():
    p = fstats.wilcoxon_rank_sum_one_sided([1, 2, 3], [4, 5, 6])
    assert p == 0.95  # exact: 1 - 1/C(6,3)
    assert fstats.iqm(range(1, 9)) == pytest.approx(4.5)
    from tests.test_stats import iqm_oracle, wilcoxon_oracle_exact
    assert wilcoxon_oracle_exact([1, 2, 3], [4, 5, 6]) == pytest.approx(0.95)
    assert iqm_oracle(range(1, 9)) == pytest.approx(4.5)
    ok("statistics oracles", "rank-sum p = 0.95 exact; IQM([1..8]) = 4.5")


# ---------------------------------------------------------------------------
# 13. bit-exact training determinism
# ---------------------------------------------------------------------------


def test_c13_training_determinism(tmp_path):
    def run(where):
        settings = TrainSettings(
            env_kind="tmaze", corridor_length=4, agent_kind="memory",
            memory_kind="frozen-random",
            memory_cfg=MemoryConfig(vocab=32, dim=16, layers=1, heads=2,
                                    ffw=16, mem_len=8),
            feat_dim=16, seed=12345,
            ppo=PpoConfig(total_steps=4096, rollout=32, num_envs=4,
                          minibatches=4),
            out_dir=where)
        train(settings)
        return (where / "curve_seed12345.csv").read_bytes()

    first = run(tmp_path / "one")
    second = run(tmp_path / "two")
    assert first == second
    assert len(first.splitlines()) > 10
    ok("training determinism", "curve CSV bit-identical across reruns")
