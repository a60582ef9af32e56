"""Dataclass configs for every component, plus a flat `section.key=value` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


@dataclass
class TokenizerConfig:
    frame_size: int = 64
    channels: int = 64
    res_blocks: int = 2
    attn_resolutions: tuple[int, ...] = (8, 16)
    levels: int = 4
    vocab_size: int = 512       # N
    tokens_per_frame: int = 16  # K
    embed_dim: int = 512        # d
    perceptual: str = "random"  # off | random
    perceptual_seed: int = 77
    reinit_unused_codes: bool = False

    def __post_init__(self):
        grid = self.frame_size // (2 ** self.levels)
        if grid * grid != self.tokens_per_frame:
            raise ValueError(
                f"tokens_per_frame={self.tokens_per_frame} incompatible with "
                f"frame_size={self.frame_size} and {self.levels} downsampling levels "
                f"(encoder yields {grid * grid} tokens)"
            )
        if self.perceptual not in ("off", "random"):
            raise ValueError(f"unknown perceptual mode {self.perceptual!r}")


@dataclass
class DynamicsConfig:
    embed_dim: int = 256        # D
    layers: int = 10            # M
    heads: int = 4
    timesteps: int = 20         # L
    embed_dropout: float = 0.1
    attn_dropout: float = 0.1
    resid_dropout: float = 0.1
    weight_decay: float = 0.01
    reward_mode: str = "sign"   # sign (3-class CE on clipped rewards) | mse

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise ValueError("embed_dim must be divisible by heads")
        if self.reward_mode not in ("sign", "mse"):
            raise ValueError(f"unknown reward_mode {self.reward_mode!r}")


@dataclass
class AgentConfig:
    conv_channels: tuple[int, ...] = (32, 32, 64, 64)
    hidden_dim: int = 512

    def __post_init__(self):
        if len(self.conv_channels) != 4:
            raise ValueError("agent trunk uses exactly 4 conv/pool stages")


@dataclass
class RLConfig:
    gamma: float = 0.995
    td_lambda: float = 0.95
    entropy_coef: float = 0.001  # eta
    horizon: int = 20            # H
    burn_in: int = 20            # max real context frames fed before dreaming
    sample_rewards: bool = True  # sample reward/done heads; False = expected-value mode

    def __post_init__(self):
        if not (0.0 < self.gamma < 1.0):
            raise ValueError("gamma must lie in (0, 1)")
        if not (0.0 < self.td_lambda < 1.0):
            raise ValueError("td_lambda must lie in (0, 1)")
        if self.entropy_coef < 0.0:
            raise ValueError("entropy_coef must be >= 0")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


@dataclass
class TrainConfig:
    env: str = "pixelcatch"
    seed: int = 0
    epochs: int = 600
    collection_epochs: int = 500
    env_steps_per_epoch: int = 200
    training_steps_per_epoch: int = 200
    start_tokenizer: int = 5
    start_dynamics: int = 25
    start_agent: int = 50
    batch_tokenizer: int = 256
    batch_dynamics: int = 64
    batch_agent: int = 64
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    max_grad_norm: float = 10.0
    collect_epsilon: float = 0.01
    collect_temperature: float = 1.0
    eval_temperature: float = 0.5
    eval_episodes: int = 100
    checkpoint_every: int = 25

    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    rl: RLConfig = field(default_factory=RLConfig)

    def __post_init__(self):
        if not (self.start_tokenizer <= self.start_dynamics <= self.start_agent):
            raise ValueError("start epochs must be ordered tokenizer <= dynamics <= agent")
        if self.collection_epochs > self.epochs:
            raise ValueError("collection_epochs must not exceed epochs")


def pixelcatch_toy_config(seed: int = 0) -> TrainConfig:
    """Reduced PixelCatch setup: small nets, 60 epochs, CPU-friendly batches."""
    return TrainConfig(
        env="pixelcatch",
        seed=seed,
        epochs=60,
        collection_epochs=50,
        env_steps_per_epoch=100,
        training_steps_per_epoch=100,
        start_tokenizer=2,
        start_dynamics=10,
        start_agent=20,
        batch_tokenizer=24,
        batch_dynamics=8,
        batch_agent=8,
        checkpoint_every=0,
        tokenizer=TokenizerConfig(
            frame_size=64, channels=16, res_blocks=1, attn_resolutions=(),
            vocab_size=128, tokens_per_frame=16, embed_dim=128,
        ),
        dynamics=DynamicsConfig(embed_dim=128, layers=4, heads=4, timesteps=10),
        agent=AgentConfig(conv_channels=(16, 32, 32, 64), hidden_dim=512),
        rl=RLConfig(horizon=10, burn_in=6),
    )


_SECTIONS = ("tokenizer", "dynamics", "agent", "rl")


def _parse_value(raw: str, current: Any) -> Any:
    if isinstance(current, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        items = [p for p in raw.replace("(", "").replace(")", "").split(",") if p.strip()]
        return tuple(int(p) for p in items)
    return raw


def apply_flat(config: TrainConfig, flat: dict[str, str]) -> TrainConfig:
    """Apply `section.key` / `train.key` string values onto a TrainConfig."""
    for key, raw in flat.items():
        target: Any = config
        name = key
        if "." in key:
            section, name = key.split(".", 1)
            if section in _SECTIONS:
                target = getattr(config, section)
            elif section != "train":
                raise KeyError(f"unknown config section {section!r}")
        if not hasattr(target, name):
            raise KeyError(f"unknown config key {key!r}")
        setattr(target, name, _parse_value(str(raw), getattr(target, name)))
    # re-validate derived constraints
    for section in _SECTIONS:
        sub = getattr(config, section)
        sub.__post_init__()
    config.__post_init__()
    return config


def to_flat(config: TrainConfig) -> dict[str, Any]:
    """Flatten a TrainConfig into dotted keys with JSON-friendly values."""
    flat: dict[str, Any] = {}
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if f.name in _SECTIONS:
            for sf in dataclasses.fields(value):
                v = getattr(value, sf.name)
                flat[f"{f.name}.{sf.name}"] = list(v) if isinstance(v, tuple) else v
        else:
            flat[f"train.{f.name}"] = value
    return flat


def from_flat(flat: dict[str, Any]) -> TrainConfig:
    config = TrainConfig()
    strings = {}
    for key, value in flat.items():
        if isinstance(value, (list, tuple)):
            strings[key] = ",".join(str(v) for v in value)
        else:
            strings[key] = str(value)
    return apply_flat(config, strings)


def load_config_file(path: str | Path, base: TrainConfig | None = None) -> TrainConfig:
    """Read `key=value` lines (# comments allowed) onto a config."""
    config = base if base is not None else TrainConfig()
    flat: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        flat[key.strip()] = value.strip()
    return apply_flat(config, flat)


def save_config_file(config: TrainConfig, path: str | Path) -> None:
    lines = []
    for key, value in to_flat(config).items():
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key}={value}")
    Path(path).write_text("\n".join(lines) + "\n")
