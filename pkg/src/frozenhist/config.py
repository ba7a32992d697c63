"""Flat key=value run configuration.

A config is a text file of ``key = value`` lines (``#`` comments allowed)
plus ``--set key=value`` overrides; nothing is nested, so configs diff
cleanly.  Unknown keys are rejected up front.  A few hyperparameters default
per environment; every run writes its fully resolved config next to its
outputs so the run can be reconstructed from the directory alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .memory import MEMORY_KINDS, MemoryConfig
from .ppo import PpoConfig, TrainSettings


class ConfigError(ValueError):
    """Bad key, bad value, or bad combination; exits with status 2."""


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (parser, global default); None means "resolved per environment"
_SCHEMA: dict[str, tuple] = {
    "seed": (int, 0),
    "seeds": (int, 1),
    "jobs": (int, 1),
    "env": (str, "tmaze"),
    "corridor_length": (int, 8),
    "agent": (str, "memory"),
    "memory": (str, "frozen-random"),
    "memory_ckpt": (str, ""),
    "vocab": (int, 256),
    "dim": (int, 32),
    "layers": (int, 2),
    "heads": (int, 2),
    "ffw": (int, 64),
    "mem_len": (int, 32),
    "beta": (float, None),
    "include_action": (_bool, False),
    "enc_hidden": (int, 128),
    "head_hidden": (int, 128),
    "lr": (float, 1e-4),
    "rollout": (int, None),
    "entropy_coef": (float, None),
    "value_coef": (float, 0.5),
    "gamma": (float, 0.99),
    "lam": (float, None),
    "clip": (float, 0.2),
    "epochs": (int, 3),
    "minibatches": (int, 8),
    "max_grad_norm": (float, 0.5),
    "num_envs": (int, 16),
    "total_steps": (int, 100_000),
    "checkpoint_every": (int, 0),
    "pretrain_steps": (int, 2000),
    "pretrain_lr": (float, 3e-3),
    "pretrain_batch": (int, 16),
    "corpus_length": (int, 40_000),
    "agent_ckpt": (str, ""),
    "betas": (str, "1,10,100"),
    "jl_eps": (float, 0.5),
    "analyze_samples": (int, 64),
    "episodes": (int, 4),
}

# per-environment defaults for the keys whose global default is None
_ENV_DEFAULTS = {
    "keytask": {"rollout": 128, "entropy_coef": 5e-2, "lam": 0.99, "beta": 100.0},
    "randmaze": {"rollout": 64, "entropy_coef": 1e-2, "lam": 0.95, "beta": 10.0},
    "tmaze": {"rollout": 64, "entropy_coef": 1e-2, "lam": 0.95, "beta": 10.0},
}

VARIANTS = {
    "helm": ("memory", "pretrained"),
    "frozen-random": ("memory", "frozen-random"),
    "noise": ("memory", "noise"),
    "positional": ("memory", "positional"),
    "markov": ("markov", "frozen-random"),
    "trained-recurrent": ("trained-recurrent", "frozen-random"),
}


@dataclass
class RunConfig:
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def method_label(self) -> str:
        agent = self.values["agent"]
        if agent != "memory":
            return agent
        memory = self.values["memory"]
        return "helm" if memory == "pretrained" else memory


def parse_config(path: str | Path | None = None,
                 overrides: list[str] | None = None) -> RunConfig:
    raw: dict[str, str] = {}
    if path is not None:
        text = Path(path).read_text()
        for lineno, line in enumerate(text.splitlines(), start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, value = body.split("=", 1)
            raw[key.strip()] = value.strip()
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        raw[key.strip()] = value.strip()

    values: dict = {}
    for key, text in raw.items():
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        parser, _ = _SCHEMA[key]
        try:
            values[key] = parser(text)
        except ValueError as exc:
            raise ConfigError(f"config key {key}: {exc}") from None
    for key, (_, default) in _SCHEMA.items():
        values.setdefault(key, default)

    env = values["env"]
    if env not in _ENV_DEFAULTS:
        raise ConfigError(f"unknown env {values['env']!r}")
    for key, default in _ENV_DEFAULTS[env].items():
        if values[key] is None:
            values[key] = default

    if values["agent"] not in ("memory", "markov", "trained-recurrent"):
        raise ConfigError(f"unknown agent kind {values['agent']!r}")
    if values["memory"] not in MEMORY_KINDS:
        raise ConfigError(f"unknown memory kind {values['memory']!r}")
    if values["vocab"] < 1 or values["dim"] < 1:
        raise ConfigError("vocab and dim must be positive")
    if values["dim"] % values["heads"] != 0:
        raise ConfigError(f"dim {values['dim']} not divisible by heads {values['heads']}")
    if values["seeds"] < 1:
        raise ConfigError("seeds must be >= 1")
    return RunConfig(values)


def write_resolved(cfg: RunConfig, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"{key} = {cfg.values[key]}" for key in sorted(cfg.values)]
    path = out_dir / "config.txt"
    path.write_text("\n".join(lines) + "\n")
    return path


def memory_config(cfg: RunConfig) -> MemoryConfig:
    return MemoryConfig(
        vocab=cfg["vocab"],
        dim=cfg["dim"],
        layers=cfg["layers"],
        heads=cfg["heads"],
        ffw=cfg["ffw"],
        mem_len=cfg["mem_len"],
    )


def train_settings(cfg: RunConfig, seed: int, out_dir: Path | None,
                   memory_weights: dict | None = None) -> TrainSettings:
    ppo = PpoConfig(
        lr=cfg["lr"],
        rollout=cfg["rollout"],
        entropy_coef=cfg["entropy_coef"],
        value_coef=cfg["value_coef"],
        gamma=cfg["gamma"],
        lam=cfg["lam"],
        clip=cfg["clip"],
        epochs=cfg["epochs"],
        minibatches=cfg["minibatches"],
        max_grad_norm=cfg["max_grad_norm"],
        num_envs=cfg["num_envs"],
        total_steps=cfg["total_steps"],
    )
    return TrainSettings(
        env_kind=cfg["env"],
        corridor_length=cfg["corridor_length"],
        agent_kind=cfg["agent"],
        memory_kind=cfg["memory"],
        memory_cfg=memory_config(cfg),
        memory_weights=memory_weights,
        feat_dim=cfg["dim"],
        enc_hidden=cfg["enc_hidden"],
        head_hidden=cfg["head_hidden"],
        beta=cfg["beta"],
        include_action=cfg["include_action"],
        seed=seed,
        ppo=ppo,
        out_dir=out_dir,
        checkpoint_every=cfg["checkpoint_every"],
    )
