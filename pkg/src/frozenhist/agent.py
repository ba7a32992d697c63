"""Actor-critic agents over gridworld observations.

The memory agent follows the per-step pipeline

    x_t = token-space embedding of o_t        (frozen projection + retrieval)
    h_t, state' = memory.step(state, x_t)     (frozen)
    feat = [h_t ; encoder(o_t)]               (encoder trained)
    action ~ Categorical(actor(feat)),  value = critic(feat),

so gradients reach only the encoder and the two heads; the projection, the
token embeddings, and the memory weights never change, which is checked by
fingerprint in the tests.  Baselines drop the frozen branch: the Markov agent
acts on encoder(o_t) alone, the recurrent agent feeds encoder output through
a trainable gated recurrent cell trained by backprop through the rollout.

Rollout-time action selection runs in plain numpy; the training path rebuilds
the same functions as a differentiable graph (``features_graph``/
``head_graph``), and the first-epoch importance ratio of exactly one in the
PPO tests pins the two paths together.

Heads are one-hidden-layer MLPs with zero-initialized output layers, so a
fresh agent starts from a uniform policy and zero value.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .memory import MemoryConfig, MemoryState, TransformerMemory, make_memory
from .rng import Rng, split_seed
from .tokenmap import GRID_CODE_SCALE, TokenSpaceMap, embed, sample_projection

AGENT_KINDS = ("memory", "markov", "trained-recurrent")


@dataclass
class AgentSettings:
    obs_shape: tuple[int, int]
    n_actions: int
    feat_dim: int = 32          # memory output dim; encoder output matches it
    enc_hidden: int = 128
    head_hidden: int = 128
    beta: float = 10.0
    include_action: bool = False  # append previous-action one-hot before projection

    @property
    def obs_dim(self) -> int:
        return int(np.prod(self.obs_shape))

    @property
    def proj_dim(self) -> int:
        return self.obs_dim + (self.n_actions if self.include_action else 0)


@dataclass
class AgentOutput:
    actions: np.ndarray
    logp: np.ndarray
    value: np.ndarray
    h: np.ndarray | None
    state: object


def weights_fingerprint(arrays: dict[str, np.ndarray]) -> str:
    """Order-independent SHA-256 over named arrays; detects any drift."""
    digest = hashlib.sha256()
    for name in sorted(arrays):
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(arrays[name], dtype=np.float64).tobytes())
    return digest.hexdigest()


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _log_softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class _AgentBase:
    settings: AgentSettings
    params: dict[str, ad.Tensor]

    def _init_mlp(self, rng: Rng, prefix: str, dims: list[int], zero_out: bool):
        """Chain of dense layers; optionally zero the final layer."""
        for li in range(len(dims) - 1):
            fan_in, fan_out = dims[li], dims[li + 1]
            last = li == len(dims) - 2
            if zero_out and last:
                w = np.zeros((fan_in, fan_out))
            else:
                bound = 1.0 / np.sqrt(fan_in)
                w = (rng.uniform(fan_in * fan_out) * 2.0 - 1.0).reshape(fan_in, fan_out) * bound
            self.params[f"{prefix}.w{li + 1}"] = ad.parameter(w, f"{prefix}.w{li + 1}")
            self.params[f"{prefix}.b{li + 1}"] = ad.parameter(np.zeros(fan_out), f"{prefix}.b{li + 1}")

    def trainable(self) -> list[ad.Tensor]:
        return list(self.params.values())

    # ---- numpy fast paths (rollout) ----

    def _p(self, name: str) -> np.ndarray:
        return self.params[name].data

    def _encode_np(self, obs_raw: np.ndarray) -> np.ndarray:
        h = _relu(obs_raw @ self._p("enc.w1") + self._p("enc.b1"))
        return h @ self._p("enc.w2") + self._p("enc.b2")

    def _heads_np(self, feat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ha = _relu(feat @ self._p("actor.w1") + self._p("actor.b1"))
        logits = ha @ self._p("actor.w2") + self._p("actor.b2")
        hc = _relu(feat @ self._p("critic.w1") + self._p("critic.b1"))
        value = (hc @ self._p("critic.w2") + self._p("critic.b2"))[:, 0]
        return logits, value

    def _pick(self, logits: np.ndarray, rng: Rng | None, greedy: bool
              ) -> tuple[np.ndarray, np.ndarray]:
        ls = _log_softmax_np(logits)
        if greedy:
            actions = np.argmax(logits, axis=-1)
        else:
            actions = rng.categorical_rows(np.exp(ls))
        logp = np.take_along_axis(ls, actions[:, None], axis=-1)[:, 0]
        return actions, logp

    # ---- differentiable twins (updates) ----

    def encode_graph(self, obs_raw: np.ndarray) -> ad.Tensor:
        x = ad.Tensor(obs_raw)
        h = ad.relu(ad.add(ad.matmul(x, self.params["enc.w1"]), self.params["enc.b1"]))
        return ad.add(ad.matmul(h, self.params["enc.w2"]), self.params["enc.b2"])

    def head_graph(self, feat: ad.Tensor) -> tuple[ad.Tensor, ad.Tensor]:
        ha = ad.relu(ad.add(ad.matmul(feat, self.params["actor.w1"]), self.params["actor.b1"]))
        logits = ad.add(ad.matmul(ha, self.params["actor.w2"]), self.params["actor.b2"])
        hc = ad.relu(ad.add(ad.matmul(feat, self.params["critic.w1"]), self.params["critic.b1"]))
        value = ad.reshape(
            ad.add(ad.matmul(hc, self.params["critic.w2"]), self.params["critic.b2"]),
            (feat.shape[0],),
        )
        return logits, value

    # ---- shared obs handling ----

    def _flatten(self, obs: np.ndarray) -> np.ndarray:
        obs = np.asarray(obs)
        if obs.shape[1:] != self.settings.obs_shape:
            raise ValueError(
                f"observation shape {obs.shape[1:]} != expected {self.settings.obs_shape}"
            )
        return obs.reshape(obs.shape[0], -1).astype(np.float64)


class MemoryAgent(_AgentBase):
    """Frozen token mapping + frozen memory + trained encoder and heads."""

    kind = "memory"

    def __init__(self, settings: AgentSettings, memory, seed: int,
                 embeddings: np.ndarray | None = None):
        self.settings = settings
        self.memory = memory
        if settings.feat_dim != memory.dim:
            raise ValueError(f"feat_dim {settings.feat_dim} != memory dim {memory.dim}")
        self.consumes_input = isinstance(memory, TransformerMemory)
        if self.consumes_input:
            table = memory.embeddings if embeddings is None else embeddings
            proj = sample_projection(settings.proj_dim, memory.dim,
                                     split_seed(seed, "agent-projection"))
            self.mapper = TokenSpaceMap(table, proj, settings.beta)
        else:
            self.mapper = None
        self.params: dict[str, ad.Tensor] = {}
        rng = Rng(split_seed(seed, "agent-init"))
        self._init_mlp(rng, "enc", [settings.obs_dim, settings.enc_hidden, settings.feat_dim],
                       zero_out=False)
        feat = 2 * settings.feat_dim
        self._init_mlp(rng, "actor", [feat, settings.head_hidden, settings.n_actions],
                       zero_out=True)
        self._init_mlp(rng, "critic", [feat, settings.head_hidden, 1], zero_out=True)

    def frozen_arrays(self) -> dict[str, np.ndarray]:
        out = {f"memory.{k}": v for k, v in self.memory.weights.items()}
        if self.mapper is not None:
            out["projection"] = self.mapper.projection.matrix
            out["embeddings"] = self.mapper.embeddings
        return out

    def init_state(self, batch: int) -> MemoryState:
        return self.memory.init_state(batch)

    def _token_input(self, obs_scaled: np.ndarray, prev_actions: np.ndarray | None
                     ) -> np.ndarray:
        if not self.settings.include_action:
            return obs_scaled
        onehot = np.zeros((obs_scaled.shape[0], self.settings.n_actions))
        if prev_actions is not None:
            live = prev_actions >= 0
            onehot[np.arange(len(prev_actions))[live], prev_actions[live]] = 1.0
        return np.concatenate([obs_scaled, onehot], axis=1)

    def compress(self, obs: np.ndarray, state: MemoryState,
                 prev_actions: np.ndarray | None = None
                 ) -> tuple[np.ndarray, MemoryState]:
        """Token-map the observation batch and advance the frozen memory."""
        raw = self._flatten(obs)
        if self.consumes_input:
            x = embed(self.mapper, self._token_input(raw / GRID_CODE_SCALE, prev_actions))
        else:
            x = np.zeros((raw.shape[0], self.memory.dim))
        return self.memory.step(state, x)

    def act(self, obs: np.ndarray, state: MemoryState, rng: Rng | None = None,
            greedy: bool = False, prev_actions: np.ndarray | None = None) -> AgentOutput:
        h, new_state = self.compress(obs, state, prev_actions)
        raw = self._flatten(obs)
        feat = np.concatenate([h, self._encode_np(raw)], axis=1)
        logits, value = self._heads_np(feat)
        actions, logp = self._pick(logits, rng, greedy)
        return AgentOutput(actions, logp, value, h, new_state)

    def value_only(self, obs: np.ndarray, state: MemoryState,
                   prev_actions: np.ndarray | None = None) -> np.ndarray:
        h, _ = self.compress(obs, state, prev_actions)
        feat = np.concatenate([h, self._encode_np(self._flatten(obs))], axis=1)
        return self._heads_np(feat)[1]

    def features_graph(self, obs: np.ndarray, h: np.ndarray) -> ad.Tensor:
        enc = self.encode_graph(self._flatten(obs))
        return ad.concat([ad.Tensor(h), enc], axis=-1)


class MarkovAgent(_AgentBase):
    """Encoder and heads only; blind to anything before the current step."""

    kind = "markov"

    def __init__(self, settings: AgentSettings, seed: int):
        self.settings = settings
        self.params = {}
        rng = Rng(split_seed(seed, "agent-init"))
        self._init_mlp(rng, "enc", [settings.obs_dim, settings.enc_hidden, settings.feat_dim],
                       zero_out=False)
        self._init_mlp(rng, "actor", [settings.feat_dim, settings.head_hidden, settings.n_actions],
                       zero_out=True)
        self._init_mlp(rng, "critic", [settings.feat_dim, settings.head_hidden, 1], zero_out=True)

    def frozen_arrays(self) -> dict[str, np.ndarray]:
        return {}

    def init_state(self, batch: int):
        return None

    def act(self, obs: np.ndarray, state=None, rng: Rng | None = None,
            greedy: bool = False, prev_actions=None) -> AgentOutput:
        feat = self._encode_np(self._flatten(obs))
        logits, value = self._heads_np(feat)
        actions, logp = self._pick(logits, rng, greedy)
        return AgentOutput(actions, logp, value, None, None)

    def value_only(self, obs: np.ndarray, state=None, prev_actions=None) -> np.ndarray:
        return self._heads_np(self._encode_np(self._flatten(obs)))[1]

    def features_graph(self, obs: np.ndarray, h=None) -> ad.Tensor:
        return self.encode_graph(self._flatten(obs))


class RecurrentAgent(_AgentBase):
    """Encoder into a trainable gated recurrent cell, trained through time."""

    kind = "trained-recurrent"

    def __init__(self, settings: AgentSettings, seed: int):
        self.settings = settings
        self.params = {}
        rng = Rng(split_seed(seed, "agent-init"))
        d = settings.feat_dim
        self._init_mlp(rng, "enc", [settings.obs_dim, settings.enc_hidden, d], zero_out=False)
        bound = 1.0 / np.sqrt(d)

        def mat(name):
            w = (rng.uniform(d * d) * 2.0 - 1.0).reshape(d, d) * bound
            self.params[name] = ad.parameter(w, name)

        for gate in ("z", "r", "h"):
            mat(f"gru.w{gate}")
            mat(f"gru.u{gate}")
            self.params[f"gru.b{gate}"] = ad.parameter(np.zeros(d), f"gru.b{gate}")
        self._init_mlp(rng, "actor", [d, settings.head_hidden, settings.n_actions], zero_out=True)
        self._init_mlp(rng, "critic", [d, settings.head_hidden, 1], zero_out=True)

    def frozen_arrays(self) -> dict[str, np.ndarray]:
        return {}

    def init_state(self, batch: int) -> np.ndarray:
        return np.zeros((batch, self.settings.feat_dim))

    def _gru_np(self, x: np.ndarray, h: np.ndarray) -> np.ndarray:
        p = self._p
        z = 1.0 / (1.0 + np.exp(-(x @ p("gru.wz") + h @ p("gru.uz") + p("gru.bz"))))
        r = 1.0 / (1.0 + np.exp(-(x @ p("gru.wr") + h @ p("gru.ur") + p("gru.br"))))
        n = np.tanh(x @ p("gru.wh") + (r * h) @ p("gru.uh") + p("gru.bh"))
        return (1.0 - z) * n + z * h

    def gru_graph(self, x: ad.Tensor, h: ad.Tensor) -> ad.Tensor:
        p = self.params
        z = ad.sigmoid(ad.add(ad.add(ad.matmul(x, p["gru.wz"]), ad.matmul(h, p["gru.uz"])), p["gru.bz"]))
        r = ad.sigmoid(ad.add(ad.add(ad.matmul(x, p["gru.wr"]), ad.matmul(h, p["gru.ur"])), p["gru.br"]))
        n = ad.tanh(ad.add(ad.add(ad.matmul(x, p["gru.wh"]), ad.matmul(ad.mul(r, h), p["gru.uh"])), p["gru.bh"]))
        return ad.add(ad.mul(ad.sub(1.0, z), n), ad.mul(z, h))

    def act(self, obs: np.ndarray, state: np.ndarray, rng: Rng | None = None,
            greedy: bool = False, prev_actions=None) -> AgentOutput:
        enc = self._encode_np(self._flatten(obs))
        h = self._gru_np(enc, state)
        logits, value = self._heads_np(h)
        actions, logp = self._pick(logits, rng, greedy)
        return AgentOutput(actions, logp, value, h, h)

    def value_only(self, obs: np.ndarray, state: np.ndarray, prev_actions=None) -> np.ndarray:
        enc = self._encode_np(self._flatten(obs))
        return self._heads_np(self._gru_np(enc, state))[1]


def build_agent(kind: str, settings: AgentSettings, seed: int,
                memory_kind: str = "frozen-random",
                memory_cfg: MemoryConfig | None = None,
                memory_weights: dict[str, np.ndarray] | None = None):
    """Agent factory; ``kind`` in {memory, markov, trained-recurrent}."""
    if kind == "memory":
        cfg = memory_cfg or MemoryConfig(dim=settings.feat_dim)
        if cfg.dim != settings.feat_dim:
            raise ValueError(f"memory dim {cfg.dim} != feat_dim {settings.feat_dim}")
        memory = make_memory(memory_kind, cfg, split_seed(seed, "memory"),
                             weights=memory_weights)
        return MemoryAgent(settings, memory, seed)
    if kind == "markov":
        return MarkovAgent(settings, seed)
    if kind == "trained-recurrent":
        return RecurrentAgent(settings, seed)
    raise ValueError(f"unknown agent kind {kind!r}; expected one of {AGENT_KINDS}")
