"""The frozen history-compression model and its ablation stand-ins.

A small pre-layernorm causal transformer compresses a stream of token-space
vectors x_1, x_2, ... into per-step summaries h_t.  Instead of re-running the
whole sequence, each layer keeps a register of its last L-1 input activations
(L = ``mem_len``, which counts the current step); a step attends over
register plus current input, then shifts the current input in and evicts the
oldest entry.  Stepwise outputs match a full-sequence forward pass exactly
for sequences up to length L.

Positions enter through a per-head relative bias added to attention logits
(one scalar per head per backward offset 0..L-1), which keeps the streaming
and full-sequence paths identical without absolute position bookkeeping.

The model can be pretrained with next-token prediction on a synthetic token
stream and is then frozen for RL use.  Ablation variants substitute the
transformer with fresh random weights, per-step Gaussian noise, or a pure
sinusoidal encoding of the step index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .optim import AdamW, clip_grad_norm_
from .rng import Rng, normals_at, split_seed

_NEG = -1e30  # additive mask value; exp underflows to exactly 0 after the max shift

MEMORY_KINDS = ("pretrained", "frozen-random", "noise", "positional")


@dataclass(frozen=True)
class MemoryConfig:
    vocab: int = 256
    dim: int = 32
    layers: int = 2
    heads: int = 2
    ffw: int = 64
    mem_len: int = 32  # register length L, including the current step
    pos: str = "relbias"

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.mem_len < 1:
            raise ValueError(f"mem_len must be >= 1, got {self.mem_len}")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {
            "cfg.vocab": np.array(float(self.vocab)),
            "cfg.dim": np.array(float(self.dim)),
            "cfg.layers": np.array(float(self.layers)),
            "cfg.heads": np.array(float(self.heads)),
            "cfg.ffw": np.array(float(self.ffw)),
            "cfg.mem_len": np.array(float(self.mem_len)),
        }

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "MemoryConfig":
        return cls(
            vocab=int(arrays["cfg.vocab"]),
            dim=int(arrays["cfg.dim"]),
            layers=int(arrays["cfg.layers"]),
            heads=int(arrays["cfg.heads"]),
            ffw=int(arrays["cfg.ffw"]),
            mem_len=int(arrays["cfg.mem_len"]),
        )


def init_weights(cfg: MemoryConfig, seed: int) -> dict[str, np.ndarray]:
    """Fresh weights: dense uniform(+-1/sqrt(fan_in)), embeddings N(0, 0.02^2),
    layernorm affine at identity, relative bias at zero."""
    rng = Rng(split_seed(seed, "memory-init"))

    def dense(fan_in: int, *shape: int) -> np.ndarray:
        bound = 1.0 / np.sqrt(fan_in)
        return (rng.uniform(int(np.prod(shape))) * 2.0 - 1.0).reshape(shape) * bound

    def relbias(layer: int) -> np.ndarray:
        # linear ramps over backward distance with alternating sign and
        # geometrically shrinking slope, so a fresh stack always contains
        # both recency-leaning and far-reaching heads; pretraining is free
        # to reshape them
        dist = np.arange(cfg.mem_len, dtype=np.float64)
        rows = []
        for h in range(cfg.heads):
            k = layer * cfg.heads + h
            slope = 0.5 * (0.5 ** (k // 2)) * (1.0 if k % 2 == 0 else -1.0)
            rows.append(slope * dist)
        return np.stack(rows)

    w: dict[str, np.ndarray] = {}
    w["embed"] = rng.normal(cfg.vocab * cfg.dim).reshape(cfg.vocab, cfg.dim) * 0.02
    for i in range(cfg.layers):
        p = f"l{i}."
        w[p + "ln1.g"] = np.ones(cfg.dim)
        w[p + "ln1.b"] = np.zeros(cfg.dim)
        w[p + "wq"] = dense(cfg.dim, cfg.dim, cfg.dim)
        w[p + "wk"] = dense(cfg.dim, cfg.dim, cfg.dim)
        w[p + "wv"] = dense(cfg.dim, cfg.dim, cfg.dim)
        w[p + "wo"] = dense(cfg.dim, cfg.dim, cfg.dim)
        w[p + "bo"] = np.zeros(cfg.dim)
        w[p + "relbias"] = relbias(i)
        w[p + "ln2.g"] = np.ones(cfg.dim)
        w[p + "ln2.b"] = np.zeros(cfg.dim)
        w[p + "ffw.w1"] = dense(cfg.dim, cfg.dim, cfg.ffw)
        w[p + "ffw.b1"] = np.zeros(cfg.ffw)
        w[p + "ffw.w2"] = dense(cfg.ffw, cfg.ffw, cfg.dim)
        w[p + "ffw.b2"] = np.zeros(cfg.dim)
    w["lnf.g"] = np.ones(cfg.dim)
    w["lnf.b"] = np.zeros(cfg.dim)
    return w


def _ln_np(x: np.ndarray, g: np.ndarray, b: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / np.sqrt(var + eps) * g + b


def _softmax_np(s: np.ndarray) -> np.ndarray:
    z = s - s.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class MemoryState:
    """Per-environment streaming registers: one input cache per layer.

    Caches are right-aligned rings of shape (batch, L-1, dim); ``counts``
    says how many trailing slots are valid.  States must not be shared
    between environments; ``step`` returns a fresh state.
    """

    caches: list[np.ndarray]
    counts: np.ndarray
    steps: np.ndarray

    @property
    def batch(self) -> int:
        return self.counts.shape[0]

    def reset_slots(self, mask: np.ndarray) -> "MemoryState":
        """Clear the register of every environment where ``mask`` is true."""
        mask = np.asarray(mask, dtype=bool)
        caches = []
        for c in self.caches:
            c = c.copy()
            c[mask] = 0.0
            caches.append(c)
        counts = np.where(mask, 0, self.counts)
        steps = np.where(mask, 0, self.steps)
        return MemoryState(caches, counts, steps)


class TransformerMemory:
    """Frozen streaming transformer over externally produced input vectors."""

    def __init__(self, cfg: MemoryConfig, weights: dict[str, np.ndarray]):
        self.cfg = cfg
        self.weights = weights

    @property
    def dim(self) -> int:
        return self.cfg.dim

    @property
    def embeddings(self) -> np.ndarray:
        return self.weights["embed"]

    def init_state(self, batch: int) -> MemoryState:
        cfg = self.cfg
        caches = [np.zeros((batch, cfg.mem_len - 1, cfg.dim)) for _ in range(cfg.layers)]
        return MemoryState(caches, np.zeros(batch, dtype=np.int64),
                           np.zeros(batch, dtype=np.int64))

    def step(self, state: MemoryState, x: np.ndarray) -> tuple[np.ndarray, MemoryState]:
        """One streaming step: x (batch, dim) -> (h (batch, dim), new state)."""
        cfg, w = self.cfg, self.weights
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != cfg.dim:
            raise ValueError(f"step input shape {x.shape} != (batch, {cfg.dim})")
        bsz = x.shape[0]
        if bsz != state.batch:
            raise ValueError(f"state batch {state.batch} != input batch {bsz}")
        L, H, hd = cfg.mem_len, cfg.heads, cfg.head_dim
        slots = np.arange(L)
        # slot j is at backward distance L-1-j from the current step
        dist = L - 1 - slots
        # slot j in the cache is valid when at least L-1-j entries are cached
        valid = slots[None, :] >= (L - 1 - state.counts[:, None])
        valid[:, -1] = True
        bias_mask = np.where(valid[:, None, :], 0.0, _NEG)  # (B, 1, L)

        u = x
        new_caches = []
        for i in range(cfg.layers):
            p = f"l{i}."
            window = np.concatenate([state.caches[i], u[:, None, :]], axis=1)  # (B, L, d)
            z = _ln_np(window, w[p + "ln1.g"], w[p + "ln1.b"])
            q = (z[:, -1] @ w[p + "wq"]).reshape(bsz, H, hd)
            k = (z @ w[p + "wk"]).reshape(bsz, L, H, hd)
            v = (z @ w[p + "wv"]).reshape(bsz, L, H, hd)
            scores = np.einsum("bhd,blhd->bhl", q, k) / np.sqrt(hd)
            scores += w[p + "relbias"][None, :, dist]
            scores += bias_mask
            att = _softmax_np(scores)
            mixed = np.einsum("bhl,blhd->bhd", att, v).reshape(bsz, cfg.dim)
            u_att = u + mixed @ w[p + "wo"] + w[p + "bo"]
            z2 = _ln_np(u_att, w[p + "ln2.g"], w[p + "ln2.b"])
            hidden = np.maximum(z2 @ w[p + "ffw.w1"] + w[p + "ffw.b1"], 0.0)
            u_next = u_att + hidden @ w[p + "ffw.w2"] + w[p + "ffw.b2"]
            new_caches.append(window[:, 1:])
            u = u_next
        h = _ln_np(u, w["lnf.g"], w["lnf.b"])
        new_state = MemoryState(
            new_caches,
            np.minimum(state.counts + 1, L - 1),
            state.steps + 1,
        )
        return h, new_state

    def full_forward(self, x_seq: np.ndarray,
                     collect_attention: bool = False):
        """Whole-sequence forward pass: (B, T, dim) -> (B, T, dim).

        Restricted to T <= mem_len, the window the streaming register can
        reproduce.  Optionally returns the per-layer, per-head attention
        weight matrices.
        """
        cfg, w = self.cfg, self.weights
        x = np.asarray(x_seq, dtype=np.float64)
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        bsz, t, _ = x.shape
        if t > cfg.mem_len:
            raise ValueError(f"sequence length {t} exceeds register length {cfg.mem_len}")
        H, hd = cfg.heads, cfg.head_dim
        idx = np.arange(t)
        dist = idx[:, None] - idx[None, :]
        causal = np.where(dist >= 0, 0.0, _NEG)
        dist_c = np.clip(dist, 0, cfg.mem_len - 1)
        maps = []
        u = x
        for i in range(cfg.layers):
            p = f"l{i}."
            z = _ln_np(u, w[p + "ln1.g"], w[p + "ln1.b"])
            q = (z @ w[p + "wq"]).reshape(bsz, t, H, hd).transpose(0, 2, 1, 3)
            k = (z @ w[p + "wk"]).reshape(bsz, t, H, hd).transpose(0, 2, 1, 3)
            v = (z @ w[p + "wv"]).reshape(bsz, t, H, hd).transpose(0, 2, 1, 3)
            scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(hd)
            scores += w[p + "relbias"][None, :, dist_c]
            scores += causal
            att = _softmax_np(scores)
            if collect_attention:
                maps.append(att)
            mixed = (att @ v).transpose(0, 2, 1, 3).reshape(bsz, t, cfg.dim)
            u = u + mixed @ w[p + "wo"] + w[p + "bo"]
            z2 = _ln_np(u, w[p + "ln2.g"], w[p + "ln2.b"])
            hidden = np.maximum(z2 @ w[p + "ffw.w1"] + w[p + "ffw.b1"], 0.0)
            u = u + hidden @ w[p + "ffw.w2"] + w[p + "ffw.b2"]
        h = _ln_np(u, w["lnf.g"], w["lnf.b"])
        if squeeze:
            h = h[0]
        if collect_attention:
            return h, np.stack([m[0] if squeeze else m for m in maps])
        return h


def attention_maps(memory: TransformerMemory, x_seq: np.ndarray) -> np.ndarray:
    """Per-layer, per-head causal attention weights for one episode.

    x_seq is (T, dim) with T <= mem_len; the result has shape
    (layers, heads, T, T), each row a distribution over positions <= its own.
    """
    _, maps = memory.full_forward(x_seq, collect_attention=True)
    return maps


class NoiseMemory:
    """Ablation: h_t is i.i.d. N(0, I_dim) per step, reproducible per seed."""

    def __init__(self, cfg: MemoryConfig, seed: int):
        self.cfg = cfg
        self.seed = split_seed(seed, "noise-memory")
        self.weights: dict[str, np.ndarray] = {}

    @property
    def dim(self) -> int:
        return self.cfg.dim

    def init_state(self, batch: int) -> MemoryState:
        return MemoryState([], np.zeros(batch, dtype=np.int64), np.zeros(batch, dtype=np.int64))

    def step(self, state: MemoryState, x: np.ndarray) -> tuple[np.ndarray, MemoryState]:
        bsz = state.batch
        h = np.empty((bsz, self.cfg.dim))
        for b in range(bsz):
            slot_seed = split_seed(self.seed, f"slot{b}")
            h[b] = normals_at(slot_seed, int(state.steps[b]) * self.cfg.dim, self.cfg.dim)
        return h, MemoryState([], state.counts, state.steps + 1)


class PositionalMemory:
    """Ablation: h_t is the sinusoidal encoding of the step index."""

    def __init__(self, cfg: MemoryConfig, seed: int = 0):
        self.cfg = cfg
        self.weights: dict[str, np.ndarray] = {}
        half = np.arange(cfg.dim // 2, dtype=np.float64)
        self._freq = 1.0 / (10000.0 ** (2.0 * half / cfg.dim))

    @property
    def dim(self) -> int:
        return self.cfg.dim

    def encode(self, t: np.ndarray) -> np.ndarray:
        ang = np.asarray(t, dtype=np.float64)[:, None] * self._freq[None, :]
        out = np.empty((len(ang), self.cfg.dim))
        out[:, 0::2] = np.sin(ang)
        out[:, 1::2] = np.cos(ang)
        return out

    def init_state(self, batch: int) -> MemoryState:
        return MemoryState([], np.zeros(batch, dtype=np.int64), np.zeros(batch, dtype=np.int64))

    def step(self, state: MemoryState, x: np.ndarray) -> tuple[np.ndarray, MemoryState]:
        return self.encode(state.steps), MemoryState([], state.counts, state.steps + 1)


def make_memory(kind: str, cfg: MemoryConfig, seed: int,
                weights: dict[str, np.ndarray] | None = None):
    """Build a memory variant: pretrained | frozen-random | noise | positional."""
    if kind == "pretrained":
        if weights is None:
            raise ValueError("pretrained memory requires trained weights")
        return TransformerMemory(cfg, weights)
    if kind == "frozen-random":
        return TransformerMemory(cfg, init_weights(cfg, seed))
    if kind == "noise":
        return NoiseMemory(cfg, seed)
    if kind == "positional":
        return PositionalMemory(cfg, seed)
    raise ValueError(f"unknown memory kind {kind!r}; expected one of {MEMORY_KINDS}")


# ---------------------------------------------------------------------------
# next-token pretraining
# ---------------------------------------------------------------------------


def _graph_forward(params: dict[str, ad.Tensor], cfg: MemoryConfig,
                   x: ad.Tensor, t: int) -> ad.Tensor:
    """Differentiable twin of ``full_forward`` for training; x is (B, T, dim)."""
    H, hd = cfg.heads, cfg.head_dim
    idx = np.arange(t)
    dist = idx[:, None] - idx[None, :]
    causal = ad.Tensor(np.where(dist >= 0, 0.0, _NEG))
    dist_c = np.clip(dist, 0, cfg.mem_len - 1)
    bsz = x.shape[0]
    u = x
    for i in range(cfg.layers):
        p = f"l{i}."
        z = ad.layernorm(u, params[p + "ln1.g"], params[p + "ln1.b"])
        q = ad.transpose(ad.reshape(ad.matmul(z, params[p + "wq"]), (bsz, t, H, hd)), (0, 2, 1, 3))
        k = ad.transpose(ad.reshape(ad.matmul(z, params[p + "wk"]), (bsz, t, H, hd)), (0, 2, 1, 3))
        v = ad.transpose(ad.reshape(ad.matmul(z, params[p + "wv"]), (bsz, t, H, hd)), (0, 2, 1, 3))
        scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(hd))
        # gather per-offset bias: (L, heads) table indexed by the offset matrix
        bias = ad.transpose(ad.embedding(ad.transpose(params[p + "relbias"], (1, 0)), dist_c), (2, 0, 1))
        scores = ad.add(ad.add(scores, bias), causal)
        att = ad.softmax(scores)
        mixed = ad.reshape(ad.transpose(ad.matmul(att, v), (0, 2, 1, 3)), (bsz, t, cfg.dim))
        u = ad.add(u, ad.add(ad.matmul(mixed, params[p + "wo"]), params[p + "bo"]))
        z2 = ad.layernorm(u, params[p + "ln2.g"], params[p + "ln2.b"])
        hidden = ad.relu(ad.add(ad.matmul(z2, params[p + "ffw.w1"]), params[p + "ffw.b1"]))
        u = ad.add(u, ad.add(ad.matmul(hidden, params[p + "ffw.w2"]), params[p + "ffw.b2"]))
    return ad.layernorm(u, params["lnf.g"], params["lnf.b"])


def clm_loss(params: dict[str, ad.Tensor], cfg: MemoryConfig,
             tokens: np.ndarray) -> ad.Tensor:
    """Mean next-token cross entropy on (B, T+1) token windows, tied readout."""
    inputs = tokens[:, :-1]
    targets = tokens[:, 1:]
    bsz, t = inputs.shape
    x = ad.embedding(params["embed"], inputs)
    h = _graph_forward(params, cfg, x, t)
    logits = ad.matmul(h, ad.transpose(params["embed"], (1, 0)))
    ls = ad.log_softmax(ad.reshape(logits, (bsz * t, cfg.vocab)))
    picked = ad.take_along(ls, targets.reshape(-1))
    return ad.neg(ad.mean(picked))


def eval_perplexity(weights: dict[str, np.ndarray], cfg: MemoryConfig,
                    tokens: np.ndarray) -> float:
    """exp(mean next-token NLL) over (B, T+1) windows, numpy path."""
    mem = TransformerMemory(cfg, weights)
    inputs, targets = tokens[:, :-1], tokens[:, 1:]
    x = weights["embed"][inputs]
    h = mem.full_forward(x)
    logits = h @ weights["embed"].T
    z = logits - logits.max(axis=-1, keepdims=True)
    ls = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    nll = -np.take_along_axis(ls, targets[..., None], axis=-1).mean()
    return float(np.exp(nll))


def _windows(corpus: np.ndarray, window: int, starts: np.ndarray) -> np.ndarray:
    return np.stack([corpus[s : s + window + 1] for s in starts])


def pretrain_clm(cfg: MemoryConfig, corpus: np.ndarray, steps: int, seed: int,
                 lr: float = 3e-3, batch: int = 16, window: int | None = None,
                 grad_clip: float = 0.5, eval_every: int = 200,
                 holdout_fraction: float = 0.1,
                 ) -> tuple[dict[str, np.ndarray], list[tuple[int, float]]]:
    """Next-token pretraining on a token stream; returns weights to freeze.

    The trailing ``holdout_fraction`` of the corpus is never trained on and
    supplies the perplexity log returned alongside the weights.  ``steps=0``
    returns the freshly initialized weights untouched.
    """
    corpus = np.asarray(corpus, dtype=np.int64)
    if corpus.min() < 0 or corpus.max() >= cfg.vocab:
        raise ValueError(
            f"corpus token {int(corpus.max())} overflows vocabulary of size {cfg.vocab}"
        )
    window = cfg.mem_len if window is None else min(window, cfg.mem_len)
    split = max(int(len(corpus) * (1.0 - holdout_fraction)), window + 2)
    train_part, hold_part = corpus[:split], corpus[split:]
    if len(hold_part) < window + 2:
        hold_part = corpus[-(window + 2):]

    weights = init_weights(cfg, seed)
    params = {k: ad.parameter(v, k) for k, v in weights.items()}
    opt = AdamW(list(params.values()), lr=lr)
    rng = Rng(split_seed(seed, "pretrain-batches"))

    hold_starts = np.arange(0, len(hold_part) - window - 1, max(1, window // 2))[:64]
    hold_windows = _windows(hold_part, window, hold_starts)

    def snapshot() -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in params.items()}

    history: list[tuple[int, float]] = []
    history.append((0, eval_perplexity(snapshot(), cfg, hold_windows)))
    for step_i in range(1, steps + 1):
        starts = rng.integers(0, len(train_part) - window - 1, batch)
        tokens = _windows(train_part, window, starts)
        tape = ad.Tape()
        with tape:
            loss = clm_loss(params, cfg, tokens)
        opt.zero_grad()
        tape.backward(loss)
        clip_grad_norm_(list(params.values()), grad_clip)
        opt.step()
        if step_i % eval_every == 0 or step_i == steps:
            history.append((step_i, eval_perplexity(snapshot(), cfg, hold_windows)))
    return snapshot(), history


# ---------------------------------------------------------------------------
# synthetic corpora
# ---------------------------------------------------------------------------


def make_cyclic_corpus(vocab: int, length: int) -> np.ndarray:
    """Fully predictable stream: token t is t mod vocab."""
    return (np.arange(length) % vocab).astype(np.int64)


def make_markov_chain(vocab: int, seed: int, sharpness: float = 4.0) -> np.ndarray:
    """A random row-stochastic transition matrix, sharpened so rows are uneven."""
    rng = Rng(split_seed(seed, "markov-transitions"))
    t = rng.uniform(vocab * vocab).reshape(vocab, vocab) ** sharpness + 1e-3
    return t / t.sum(axis=1, keepdims=True)


def sample_markov_corpus(transition: np.ndarray, length: int, seed: int) -> np.ndarray:
    rng = Rng(split_seed(seed, "markov-sample"))
    vocab = transition.shape[0]
    out = np.empty(length, dtype=np.int64)
    state = rng.integers(0, vocab)
    for i in range(length):
        out[i] = state
        state = rng.choice(transition[state])
    return out


def markov_entropy_rate(transition: np.ndarray) -> float:
    """Asymptotic per-token entropy (nats) of the stationary chain."""
    vocab = transition.shape[0]
    pi = np.full(vocab, 1.0 / vocab)
    for _ in range(10000):
        nxt = pi @ transition
        if np.abs(nxt - pi).max() < 1e-14:
            pi = nxt
            break
        pi = nxt
    logt = np.where(transition > 0, np.log(transition), 0.0)
    return float(-(pi[:, None] * transition * logt).sum())


def make_mixed_corpus(vocab: int, length: int, seed: int,
                      motif_every: int = 97) -> np.ndarray:
    """Default pretraining stream: a sharpened first-order chain with a short
    fixed motif spliced in at regular intervals."""
    base = sample_markov_corpus(make_markov_chain(vocab, seed), length, seed)
    motif = np.array([3, 1, 4, 1, 5, 9, 2, 6], dtype=np.int64) % vocab
    for start in range(0, length - len(motif), motif_every):
        base[start : start + len(motif)] = motif
    return base


def make_recall_corpus(vocab: int, length: int, seed: int,
                       min_gap: int = 4, max_gap: int = 11) -> np.ndarray:
    """Stream with long-range recall structure embedded in a first-order chain.

    Repeatedly: a uniformly random marker token, a chain-sampled filler of
    random length, then the marker again.  Predicting the second marker
    requires copying content from ``gap + 1`` positions back, so next-token
    pretraining rewards attention heads that retrieve distant inputs rather
    than just local statistics.
    """
    rng = Rng(split_seed(seed, "recall-corpus"))
    transition = make_markov_chain(vocab, seed)
    out = np.empty(length, dtype=np.int64)
    state = rng.integers(0, vocab)
    i = 0
    while i < length:
        marker = rng.integers(0, vocab)
        gap = rng.integers(min_gap, max_gap + 1)
        segment = [marker]
        for _ in range(gap):
            state = rng.choice(transition[state])
            segment.append(state)
        segment.append(marker)
        take = min(len(segment), length - i)
        out[i : i + take] = segment[:take]
        i += take
    return out
