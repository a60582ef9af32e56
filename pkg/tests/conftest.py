from pathlib import Path

import numpy as np
import pytest
import torch

REPO = Path(__file__).resolve().parent.parent

from tokenworld.config import (
    AgentConfig,
    DynamicsConfig,
    RLConfig,
    TokenizerConfig,
    TrainConfig,
)


def tiny_tokenizer_config(**overrides) -> TokenizerConfig:
    base = dict(
        frame_size=64, channels=16, res_blocks=1, attn_resolutions=(),
        vocab_size=32, tokens_per_frame=16, embed_dim=32,
    )
    base.update(overrides)
    return TokenizerConfig(**base)


def tiny_dynamics_config(**overrides) -> DynamicsConfig:
    base = dict(embed_dim=64, layers=2, heads=2, timesteps=4)
    base.update(overrides)
    return DynamicsConfig(**base)


def tiny_agent_config(**overrides) -> AgentConfig:
    base = dict(conv_channels=(8, 8, 16, 16), hidden_dim=32)
    base.update(overrides)
    return AgentConfig(**base)


def tiny_train_config(**overrides) -> TrainConfig:
    base = dict(
        env="pixelcatch",
        seed=0,
        epochs=4,
        collection_epochs=4,
        env_steps_per_epoch=32,
        training_steps_per_epoch=2,
        start_tokenizer=1,
        start_dynamics=1,
        start_agent=2,
        batch_tokenizer=4,
        batch_dynamics=2,
        batch_agent=2,
        checkpoint_every=0,
        tokenizer=tiny_tokenizer_config(),
        dynamics=tiny_dynamics_config(timesteps=6),
        agent=tiny_agent_config(),
        rl=RLConfig(horizon=4, burn_in=4),
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(1234)
