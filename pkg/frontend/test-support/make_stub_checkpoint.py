"""Build tiny checkpoints for frontend tests.

`normal` is a briefly-trained PixelCatch checkpoint; `always-done` forces the
termination head to predict an episode end every step.
"""

import sys
from pathlib import Path

import torch

from tokenworld.config import (
    AgentConfig,
    DynamicsConfig,
    RLConfig,
    TokenizerConfig,
    TrainConfig,
)
from tokenworld.trainer import Trainer


def tiny_config() -> TrainConfig:
    return TrainConfig(
        env="pixelcatch",
        seed=0,
        epochs=1,
        collection_epochs=1,
        env_steps_per_epoch=32,
        training_steps_per_epoch=1,
        start_tokenizer=1,
        start_dynamics=1,
        start_agent=1,
        batch_tokenizer=4,
        batch_dynamics=2,
        batch_agent=2,
        checkpoint_every=0,
        tokenizer=TokenizerConfig(frame_size=64, channels=16, res_blocks=1,
                                  attn_resolutions=(), vocab_size=32,
                                  tokens_per_frame=16, embed_dim=32),
        dynamics=DynamicsConfig(embed_dim=64, layers=2, heads=2, timesteps=6),
        agent=AgentConfig(conv_channels=(8, 8, 16, 16), hidden_dim=32),
        rl=RLConfig(horizon=4, burn_in=4),
    )


def main() -> int:
    kind, out_dir = sys.argv[1], Path(sys.argv[2])
    trainer = Trainer(tiny_config(), out_dir)
    trainer.run_epoch(0)
    trainer.epoch = 1
    if kind == "always-done":
        with torch.no_grad():
            trainer.dynamics.termination_head.weight.zero_()
            trainer.dynamics.termination_head.bias.copy_(torch.tensor([-50.0, 50.0]))
    elif kind != "normal":
        raise SystemExit(f"unknown checkpoint kind {kind!r}")
    trainer.save_checkpoint(out_dir / "checkpoint.ckpt")
    print(out_dir / "checkpoint.ckpt")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
