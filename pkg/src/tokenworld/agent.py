"""Actor-critic with a shared conv + LSTM trunk, and the imagination losses."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from tokenworld.config import AgentConfig


class ActorCritic(nn.Module):
    """Shared trunk: 4 x (conv3x3 / ReLU / maxpool2) into an LSTM cell.

    Actor and critic share everything except their final linear heads.
    """

    def __init__(self, cfg: AgentConfig, action_count: int, frame_size: int = 64):
        super().__init__()
        self.cfg = cfg
        self.action_count = action_count
        convs: list[nn.Module] = []
        in_ch = 3
        for out_ch in cfg.conv_channels:
            convs += [nn.Conv2d(in_ch, out_ch, 3, stride=1, padding=1), nn.ReLU(), nn.MaxPool2d(2, 2)]
            in_ch = out_ch
        self.trunk = nn.Sequential(*convs)
        spatial = frame_size // 16
        self.cell = nn.LSTMCell(cfg.conv_channels[-1] * spatial * spatial, cfg.hidden_dim)
        self.actor_head = nn.Linear(cfg.hidden_dim, action_count)
        self.critic_head = nn.Linear(cfg.hidden_dim, 1)

    def initial_state(self, batch: int, device=None) -> tuple[torch.Tensor, torch.Tensor]:
        h = torch.zeros(batch, self.cfg.hidden_dim, device=device)
        return h, h.clone()

    def forward(self, frames01: torch.Tensor, state: tuple[torch.Tensor, torch.Tensor]):
        feat = self.trunk(frames01 * 2.0 - 1.0).flatten(1)
        h, c = self.cell(feat, state)
        return self.actor_head(h), self.critic_head(h).squeeze(-1), (h, c)


def act(
    logits: torch.Tensor,
    temperature: float,
    epsilon: float,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Epsilon-greedy over temperature-scaled sampling; temperature 0 is argmax."""
    if temperature < 0:
        raise ValueError(f"temperature must be >= 0, got {temperature}")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    squeeze = logits.ndim == 1
    if squeeze:
        logits = logits[None]
    b, a = logits.shape
    explore = torch.rand(b, generator=generator) < epsilon
    uniform = torch.randint(0, a, (b,), generator=generator)
    if temperature == 0.0:
        base = logits.argmax(dim=-1)
    else:
        probs = F.softmax(logits / temperature, dim=-1)
        base = torch.multinomial(probs, 1, generator=generator).squeeze(-1)
    actions = torch.where(explore, uniform, base)
    return actions[0] if squeeze else actions


def lambda_returns(
    rewards: torch.Tensor,
    dones: torch.Tensor,
    values: torch.Tensor,
    gamma: float,
    lam: float,
) -> torch.Tensor:
    """Exponentially mixed n-step bootstrapped targets over the time (last) axis.

    values has one more entry than rewards; termination masks the bootstrap so
    a terminal step's target is exactly its reward.
    """
    t = rewards.shape[-1]
    if dones.shape != rewards.shape or values.shape[-1] != t + 1:
        raise ValueError("rewards/dones need T entries and values T+1")
    cont = 1.0 - dones.float()
    out = torch.empty_like(rewards, dtype=values.dtype)
    nxt = values[..., t]
    for i in reversed(range(t)):
        nxt = rewards[..., i] + gamma * cont[..., i] * (
            (1.0 - lam) * values[..., i + 1] + lam * nxt
        )
        out[..., i] = nxt
    return out


def _masked_mean(x: torch.Tensor, valid: torch.Tensor | None) -> torch.Tensor:
    if valid is None:
        return x.mean()
    return x[valid].mean()


def value_loss(
    values: torch.Tensor, targets: torch.Tensor, valid: torch.Tensor | None = None
) -> torch.Tensor:
    """Squared error against detached targets."""
    if values.shape != targets.shape:
        raise ValueError("values and targets must align")
    return _masked_mean((values - targets.detach()) ** 2, valid)


def policy_loss(
    log_probs: torch.Tensor,
    returns: torch.Tensor,
    baselines: torch.Tensor,
    entropies: torch.Tensor,
    entropy_coef: float,
    valid: torch.Tensor | None = None,
) -> torch.Tensor:
    """Score-function objective with detached advantages plus an entropy bonus."""
    advantage = (returns - baselines).detach()
    return -_masked_mean(log_probs * advantage + entropy_coef * entropies, valid)
