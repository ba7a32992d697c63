"""On-policy training: rollout collection, advantage estimation, clipped
surrogate updates.

The loop alternates between collecting a fixed-length rollout from a batch of
environments (storing observations, frozen-memory summaries h_t, actions,
rewards, done flags, log-probs and values; the frozen memory is never re-run
during updates) and several epochs of minibatch updates on

    L = -E[min(ratio * A, clip(ratio, 1 +- eps) * A)]
        + c_v E[(V - returns)^2] - c_e E[entropy],

with advantages from generalized advantage estimation

    delta_t = r_{t+1} + gamma (1 - done_t) V_{t+1} - V_t
    A_t     = delta_t + gamma lambda (1 - done_t) A_{t+1},

normalized per minibatch.  Gradients are clipped to a global norm before each
AdamW step.  Episode boundaries reset the per-environment memory state, so a
post-reset h_t always comes from an empty register.

With a fixed seed and single-threaded execution a run is bit-reproducible,
learning-curve CSV included.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .agent import AgentSettings, build_agent
from .checkpoint import save_arrays
from .envs import make_env
from .memory import MemoryConfig
from .optim import AdamW, clip_grad_norm_
from .rng import Rng, split_seed
from .stats import RunRecord

CURVE_HEADER = "step,episode,return,length,seed"


@dataclass
class PpoConfig:
    lr: float = 1e-4
    rollout: int = 64
    entropy_coef: float = 1e-2
    value_coef: float = 0.5
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    epochs: int = 3
    minibatches: int = 8
    max_grad_norm: float = 0.5
    num_envs: int = 16
    total_steps: int = 100_000

    def __post_init__(self):
        if self.clip <= 0:
            raise ValueError(f"clip range must be positive, got {self.clip}")
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0 <= self.lam <= 1:
            raise ValueError(f"lambda must be in [0, 1], got {self.lam}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")


def gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
        bootstrap: np.ndarray, gamma: float, lam: float
        ) -> tuple[np.ndarray, np.ndarray]:
    """Advantages and returns over a (T, B) rollout, truncated-tail bootstrap."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    bootstrap = np.asarray(bootstrap, dtype=np.float64)
    if not (rewards.shape == values.shape == dones.shape):
        raise ValueError(
            f"column shapes differ: rewards {rewards.shape}, values {values.shape}, "
            f"dones {dones.shape}"
        )
    t_len = rewards.shape[0]
    adv = np.zeros_like(rewards)
    carry = np.zeros_like(bootstrap)
    for t in range(t_len - 1, -1, -1):
        v_next = values[t + 1] if t + 1 < t_len else bootstrap
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * nonterminal * v_next - values[t]
        carry = delta + gamma * lam * nonterminal * carry
        adv[t] = carry
    return adv, adv + values


@dataclass
class RolloutBuffer:
    """Per-step records for one rollout across all environments."""

    obs: np.ndarray       # (T, B, *obs_shape) integer grids
    h: np.ndarray | None  # (T, B, dim) frozen-memory summaries, or None
    actions: np.ndarray   # (T, B)
    rewards: np.ndarray   # (T, B) reward following the action
    dones: np.ndarray     # (T, B)
    logp: np.ndarray      # (T, B)
    values: np.ndarray    # (T, B)
    prev_actions: np.ndarray  # (T, B) action taken before each step, -1 at episode start
    h0: np.ndarray | None = None  # recurrent hidden at rollout start (B, dim)

    @classmethod
    def allocate(cls, t_len: int, batch: int, obs_shape: tuple, h_dim: int | None):
        return cls(
            obs=np.zeros((t_len, batch) + obs_shape, dtype=np.int64),
            h=None if h_dim is None else np.zeros((t_len, batch, h_dim)),
            actions=np.zeros((t_len, batch), dtype=np.int64),
            rewards=np.zeros((t_len, batch)),
            dones=np.zeros((t_len, batch)),
            logp=np.zeros((t_len, batch)),
            values=np.zeros((t_len, batch)),
            prev_actions=np.full((t_len, batch), -1, dtype=np.int64),
        )


def _entropy_term(log_probs: ad.Tensor) -> ad.Tensor:
    return ad.neg(ad.mean(ad.sum_(ad.mul(ad.exp(log_probs), log_probs), axis=-1)))


def _surrogate_loss(cfg: PpoConfig, logits: ad.Tensor, values: ad.Tensor,
                    actions: np.ndarray, old_logp: np.ndarray, adv: np.ndarray,
                    returns: np.ndarray) -> tuple[ad.Tensor, dict]:
    ls = ad.log_softmax(logits)
    new_logp = ad.take_along(ls, actions)
    ratio = ad.exp(ad.sub(new_logp, ad.Tensor(old_logp)))
    clipped = ad.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip)
    adv_t = ad.Tensor(adv)
    policy_loss = ad.neg(ad.mean(ad.minimum(ad.mul(ratio, adv_t), ad.mul(clipped, adv_t))))
    value_err = ad.sub(values, ad.Tensor(returns))
    value_loss = ad.mean(ad.mul(value_err, value_err))
    entropy = _entropy_term(ls)
    loss = ad.sub(ad.add(policy_loss, ad.mul(cfg.value_coef, value_loss)),
                  ad.mul(cfg.entropy_coef, entropy))
    diag = {
        "policy_loss": float(policy_loss.data),
        "value_loss": float(value_loss.data),
        "entropy": float(entropy.data),
        "ratio_mean": float(ratio.data.mean()),
    }
    return loss, diag


def _normalized(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def ppo_update(agent, buf: RolloutBuffer, adv: np.ndarray, returns: np.ndarray,
               cfg: PpoConfig, opt: AdamW, rng: Rng) -> dict:
    """Run cfg.epochs x cfg.minibatches clipped updates; returns diagnostics."""
    t_len, batch = buf.actions.shape
    diag: dict = {}
    if agent.kind == "trained-recurrent":
        _recurrent_update(agent, buf, adv, returns, cfg, opt, rng)
        return {"mode": "recurrent"}
    n = t_len * batch
    obs_flat = buf.obs.reshape((n,) + buf.obs.shape[2:])
    h_flat = None if buf.h is None else buf.h.reshape(n, -1)
    act_flat = buf.actions.reshape(n)
    logp_flat = buf.logp.reshape(n)
    adv_flat = adv.reshape(n)
    ret_flat = returns.reshape(n)
    for _ in range(cfg.epochs):
        perm = rng.shuffled_indices(n)
        for chunk in np.array_split(perm, cfg.minibatches):
            mb_adv = _normalized(adv_flat[chunk])
            tape = ad.Tape()
            with tape:
                feat = agent.features_graph(obs_flat[chunk],
                                            None if h_flat is None else h_flat[chunk])
                logits, values = agent.head_graph(feat)
                loss, diag = _surrogate_loss(cfg, logits, values,
                                             act_flat[chunk], logp_flat[chunk],
                                             mb_adv, ret_flat[chunk])
            if not np.isfinite(loss.data):
                raise RuntimeError(f"non-finite PPO loss; diagnostics: {diag}")
            opt.zero_grad()
            tape.backward(loss)
            clip_grad_norm_(agent.trainable(), cfg.max_grad_norm)
            opt.step()
    return diag


def _recurrent_update(agent, buf: RolloutBuffer, adv: np.ndarray,
                      returns: np.ndarray, cfg: PpoConfig, opt: AdamW, rng: Rng):
    """Sequence minibatches over environments, replayed through the cell."""
    t_len, batch = buf.actions.shape
    n_mb = min(cfg.minibatches, batch)
    for _ in range(cfg.epochs):
        perm = rng.shuffled_indices(batch)
        for chunk in np.array_split(perm, n_mb):
            idx = np.asarray(chunk)
            mb_adv = _normalized(adv[:, idx].reshape(-1))
            mb_ret = returns[:, idx].reshape(-1)
            mb_act = buf.actions[:, idx].reshape(-1)
            mb_logp = buf.logp[:, idx].reshape(-1)
            tape = ad.Tape()
            with tape:
                hidden = ad.Tensor(buf.h0[idx])  # gradient truncates at rollout start
                step_feats = []
                for t in range(t_len):
                    enc = agent.encode_graph(agent._flatten(buf.obs[t, idx]))
                    hidden = agent.gru_graph(enc, hidden)
                    step_feats.append(hidden)
                    # fresh state after an episode boundary inside the rollout
                    if t + 1 < t_len and buf.dones[t, idx].any():
                        mask = buf.dones[t, idx][:, None]
                        hidden = ad.mul(hidden, ad.Tensor(1.0 - mask))
                feat = ad.concat([ad.reshape(f, (1, len(idx), agent.settings.feat_dim))
                                  for f in step_feats], axis=0)
                feat = ad.reshape(feat, (t_len * len(idx), agent.settings.feat_dim))
                logits, values = agent.head_graph(feat)
                loss, diag = _surrogate_loss(cfg, logits, values, mb_act,
                                             mb_logp, mb_adv, mb_ret)
            if not np.isfinite(loss.data):
                raise RuntimeError(f"non-finite PPO loss; diagnostics: {diag}")
            opt.zero_grad()
            tape.backward(loss)
            clip_grad_norm_(agent.trainable(), cfg.max_grad_norm)
            opt.step()


@dataclass
class TrainSettings:
    env_kind: str = "tmaze"
    corridor_length: int = 8
    agent_kind: str = "memory"
    memory_kind: str = "frozen-random"
    memory_cfg: MemoryConfig | None = None
    memory_weights: dict[str, np.ndarray] | None = None
    feat_dim: int = 32
    enc_hidden: int = 128
    head_hidden: int = 128
    beta: float = 10.0
    include_action: bool = False
    seed: int = 0
    ppo: PpoConfig = field(default_factory=PpoConfig)
    out_dir: Path | None = None
    checkpoint_every: int = 0  # extra checkpoints every N env steps; 0 = start/end only


def write_curve(path: Path, record: RunRecord) -> None:
    lines = [CURVE_HEADER]
    for step, episode, ret, length in record.rows:
        lines.append(f"{step},{episode},{ret!r},{length},{record.seed}")
    path.write_text("\n".join(lines) + "\n")


def train(settings: TrainSettings) -> RunRecord:
    """Run the full on-policy loop; returns the per-episode learning curve."""
    cfg = settings.ppo
    seed = settings.seed
    envs = [make_env(settings.env_kind, split_seed(seed, f"env{i}"),
                     corridor_length=settings.corridor_length)
            for i in range(cfg.num_envs)]
    proto = envs[0]
    agent_settings = AgentSettings(
        obs_shape=proto.obs_shape,
        n_actions=proto.n_actions,
        feat_dim=settings.feat_dim,
        enc_hidden=settings.enc_hidden,
        head_hidden=settings.head_hidden,
        beta=settings.beta,
        include_action=settings.include_action,
    )
    agent = build_agent(settings.agent_kind, agent_settings, seed,
                        memory_kind=settings.memory_kind,
                        memory_cfg=settings.memory_cfg,
                        memory_weights=settings.memory_weights)
    opt = AdamW(agent.trainable(), lr=cfg.lr)
    act_rng = Rng(split_seed(seed, "actions"))
    update_rng = Rng(split_seed(seed, "updates"))

    batch = cfg.num_envs
    obs = np.stack([e.reset() for e in envs])
    state = agent.init_state(batch)
    prev_actions = np.full(batch, -1, dtype=np.int64)
    ep_return = np.zeros(batch)
    ep_length = np.zeros(batch, dtype=np.int64)
    rows: list[tuple[int, int, float, int]] = []

    out_dir = settings.out_dir
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _save_agent(out_dir / "initial.ckpt", agent)

    h_dim = settings.feat_dim if agent.kind == "memory" else None
    iters = cfg.total_steps // (cfg.rollout * batch)
    try:
        _run_loop(settings, cfg, agent, opt, envs, act_rng, update_rng, obs,
                  state, prev_actions, ep_return, ep_length, rows, out_dir,
                  h_dim, iters)
    except Exception:
        # keep the newest weights around for post-mortems
        if out_dir is not None:
            _save_agent(out_dir / "aborted.ckpt", agent)
        raise

    record = RunRecord(seed=seed, rows=rows)
    if out_dir is not None:
        _save_agent(out_dir / "final.ckpt", agent)
        write_curve(out_dir / f"curve_seed{seed}.csv", record)
    return record


def _run_loop(settings, cfg, agent, opt, envs, act_rng, update_rng, obs, state,
              prev_actions, ep_return, ep_length, rows, out_dir, h_dim, iters):
    proto = envs[0]
    batch = cfg.num_envs
    global_step = 0
    episode_counter = 0
    next_checkpoint = settings.checkpoint_every or None
    for _ in range(iters):
        buf = RolloutBuffer.allocate(cfg.rollout, batch, proto.obs_shape, h_dim)
        if agent.kind == "trained-recurrent":
            buf.h0 = state.copy()
        for t in range(cfg.rollout):
            out = agent.act(obs, state, act_rng, prev_actions=prev_actions)
            buf.obs[t] = obs
            if buf.h is not None:
                buf.h[t] = out.h
            buf.actions[t] = out.actions
            buf.logp[t] = out.logp
            buf.values[t] = out.value
            buf.prev_actions[t] = prev_actions
            state = out.state
            prev_actions = out.actions.copy()
            new_obs = np.empty_like(obs)
            for b, env in enumerate(envs):
                stepped = env.step(int(out.actions[b]))
                buf.rewards[t, b] = stepped.reward
                buf.dones[t, b] = float(stepped.done)
                ep_return[b] += stepped.reward
                ep_length[b] += 1
                if stepped.done:
                    episode_counter += 1
                    rows.append((global_step + batch, episode_counter,
                                 float(ep_return[b]), int(ep_length[b])))
                    ep_return[b] = 0.0
                    ep_length[b] = 0
                    new_obs[b] = env.reset()
                    prev_actions[b] = -1
                else:
                    new_obs[b] = stepped.observation
            done_mask = buf.dones[t].astype(bool)
            if done_mask.any():
                if agent.kind == "memory":
                    state = state.reset_slots(done_mask)
                elif agent.kind == "trained-recurrent":
                    state = state.copy()
                    state[done_mask] = 0.0
            obs = new_obs
            global_step += batch
        bootstrap = agent.value_only(obs, state, prev_actions=prev_actions)
        adv, returns = gae(buf.rewards, buf.values, buf.dones, bootstrap,
                           cfg.gamma, cfg.lam)
        ppo_update(agent, buf, adv, returns, cfg, opt, update_rng)
        if out_dir is not None and next_checkpoint and global_step >= next_checkpoint:
            _save_agent(out_dir / f"step{global_step}.ckpt", agent)
            next_checkpoint += settings.checkpoint_every


def _save_agent(path: Path, agent) -> None:
    arrays = {f"param.{k}": v.data for k, v in agent.params.items()}
    arrays.update({f"frozen.{k}": v for k, v in agent.frozen_arrays().items()})
    save_arrays(path, arrays)


def load_agent(settings: TrainSettings, path: str | Path):
    """Rebuild the agent described by ``settings`` and restore a checkpoint.

    Trainable parameters are overwritten from the ``param.*`` entries; for
    memory agents the frozen projection, embedding table, and memory weights
    are restored from the ``frozen.*`` entries (the checkpoint is
    authoritative over reconstruction-from-seed).
    """
    from .checkpoint import load_arrays
    from .tokenmap import RandomProjection, TokenSpaceMap

    probe_env = make_env(settings.env_kind, 0, corridor_length=settings.corridor_length)
    agent_settings = AgentSettings(
        obs_shape=probe_env.obs_shape,
        n_actions=probe_env.n_actions,
        feat_dim=settings.feat_dim,
        enc_hidden=settings.enc_hidden,
        head_hidden=settings.head_hidden,
        beta=settings.beta,
        include_action=settings.include_action,
    )
    agent = build_agent(settings.agent_kind, agent_settings, settings.seed,
                        memory_kind=settings.memory_kind,
                        memory_cfg=settings.memory_cfg,
                        memory_weights=settings.memory_weights)
    arrays = load_arrays(path)
    for name, tensor in agent.params.items():
        key = f"param.{name}"
        if key not in arrays:
            raise ValueError(f"{path}: missing parameter {name}")
        if arrays[key].shape != tensor.data.shape:
            raise ValueError(f"{path}: shape mismatch for {name}")
        tensor.data = arrays[key]
    memory_weights = {k[len("frozen.memory."):]: v for k, v in arrays.items()
                      if k.startswith("frozen.memory.")}
    if memory_weights and hasattr(agent.memory, "weights") and agent.memory.weights:
        agent.memory.weights = memory_weights
    if "frozen.projection" in arrays and getattr(agent, "mapper", None) is not None:
        agent.mapper = TokenSpaceMap(
            arrays.get("frozen.embeddings", agent.mapper.embeddings),
            RandomProjection(arrays["frozen.projection"], agent.mapper.projection.seed),
            agent.mapper.beta,
        )
    return agent
