"""Autoregressive transformer over interleaved frame-token / action-token sequences.

One environment step occupies K frame-token positions followed by one action
position. Transition logits at position p predict the token at p+1; reward and
termination logits are read at action positions.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from tokenworld.config import DynamicsConfig
from tokenworld.errors import CapacityError

FRAME_KIND = 0
ACTION_KIND = 1


def interleave(token_grids: torch.Tensor, actions: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """(B, L, K) frame tokens + (B, L) actions -> (B, L*(K+1)) ids and kind flags."""
    if token_grids.ndim == 2:
        token_grids = token_grids[None]
        actions = actions[None]
    b, l, k = token_grids.shape
    if actions.shape != (b, l):
        raise ValueError(f"got {l} token grids but actions of shape {tuple(actions.shape)}")
    ids = torch.cat([token_grids, actions[..., None]], dim=-1).reshape(b, l * (k + 1))
    kinds = torch.full((l, k + 1), FRAME_KIND, dtype=torch.long, device=ids.device)
    kinds[:, -1] = ACTION_KIND
    return ids, kinds.reshape(1, -1).expand(b, -1)


class KVCache:
    """Per-layer key/value memory for one committed prefix of a rollout stream."""

    def __init__(self, layers: int, batch: int, heads: int, head_dim: int, capacity: int,
                 dtype=torch.float32, device=None):
        self.capacity = capacity
        self.length = 0
        self.k = [torch.zeros(batch, heads, capacity, head_dim, dtype=dtype, device=device)
                  for _ in range(layers)]
        self.v = [torch.zeros(batch, heads, capacity, head_dim, dtype=dtype, device=device)
                  for _ in range(layers)]

    def append(self, layer: int, k_new: torch.Tensor, v_new: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        t_new = k_new.shape[2]
        end = self.length + t_new
        if end > self.capacity:
            raise CapacityError(f"cache overflow: {end} > capacity {self.capacity}")
        self.k[layer][:, :, self.length:end] = k_new
        self.v[layer][:, :, self.length:end] = v_new
        return self.k[layer][:, :, :end], self.v[layer][:, :, :end]

    def commit(self, t_new: int) -> None:
        self.length += t_new


class SelfAttention(nn.Module):
    def __init__(self, cfg: DynamicsConfig):
        super().__init__()
        self.heads = cfg.heads
        self.head_dim = cfg.embed_dim // cfg.heads
        self.qkv = nn.Linear(cfg.embed_dim, 3 * cfg.embed_dim)
        self.proj = nn.Linear(cfg.embed_dim, cfg.embed_dim)
        self.attn_dropout = cfg.attn_dropout
        self.resid_dropout = nn.Dropout(cfg.resid_dropout)

    def forward(self, x, mask, cache: KVCache | None, layer: int):
        b, t, d = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.view(b, t, self.heads, self.head_dim).transpose(1, 2)
        k = k.view(b, t, self.heads, self.head_dim).transpose(1, 2)
        v = v.view(b, t, self.heads, self.head_dim).transpose(1, 2)
        if cache is not None:
            k, v = cache.append(layer, k, v)
        out = F.scaled_dot_product_attention(
            q, k, v, attn_mask=mask, dropout_p=self.attn_dropout if self.training else 0.0
        )
        out = out.transpose(1, 2).reshape(b, t, d)
        return self.resid_dropout(self.proj(out))


class Block(nn.Module):
    def __init__(self, cfg: DynamicsConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.embed_dim)
        self.attn = SelfAttention(cfg)
        self.ln2 = nn.LayerNorm(cfg.embed_dim)
        self.mlp = nn.Sequential(
            nn.Linear(cfg.embed_dim, 4 * cfg.embed_dim),
            nn.GELU(),
            nn.Linear(4 * cfg.embed_dim, cfg.embed_dim),
            nn.Dropout(cfg.resid_dropout),
        )

    def forward(self, x, mask, cache, layer):
        x = x + self.attn(self.ln1(x), mask, cache, layer)
        return x + self.mlp(self.ln2(x))


@dataclass
class HeadOutputs:
    transition: torch.Tensor   # (B, T, N)
    reward: torch.Tensor       # (B, T, 3) or (B, T, 1) in mse mode
    termination: torch.Tensor  # (B, T, 2)


class DynamicsModel(nn.Module):
    def __init__(self, cfg: DynamicsConfig, vocab_size: int, action_count: int, tokens_per_frame: int):
        super().__init__()
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.action_count = action_count
        self.tokens_per_frame = tokens_per_frame
        self.context = cfg.timesteps * (tokens_per_frame + 1)

        self.frame_embed = nn.Embedding(vocab_size, cfg.embed_dim)
        self.action_embed = nn.Embedding(action_count, cfg.embed_dim)
        self.pos_embed = nn.Embedding(self.context, cfg.embed_dim)
        self.drop = nn.Dropout(cfg.embed_dropout)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.layers))
        self.ln_f = nn.LayerNorm(cfg.embed_dim)
        self.transition_head = nn.Linear(cfg.embed_dim, vocab_size)
        self.reward_head = nn.Linear(cfg.embed_dim, 3 if cfg.reward_mode == "sign" else 1)
        self.termination_head = nn.Linear(cfg.embed_dim, 2)
        self.apply(self._init)

    @staticmethod
    def _init(module):
        if isinstance(module, nn.Linear):
            nn.init.normal_(module.weight, std=0.02)
            if module.bias is not None:
                nn.init.zeros_(module.bias)
        elif isinstance(module, nn.Embedding):
            nn.init.normal_(module.weight, std=0.02)

    def new_cache(self, batch: int, device=None) -> KVCache:
        return KVCache(
            layers=self.cfg.layers,
            batch=batch,
            heads=self.cfg.heads,
            head_dim=self.cfg.embed_dim // self.cfg.heads,
            capacity=self.context,
            device=device,
        )

    def _embed(self, ids: torch.Tensor, kinds: torch.Tensor, offset: int) -> torch.Tensor:
        if ids.numel():
            frame_ids = ids[kinds == FRAME_KIND]
            action_ids = ids[kinds == ACTION_KIND]
            if frame_ids.numel() and (frame_ids.min() < 0 or frame_ids.max() >= self.vocab_size):
                raise IndexError(f"frame token out of range [0, {self.vocab_size})")
            if action_ids.numel() and (action_ids.min() < 0 or action_ids.max() >= self.action_count):
                raise IndexError(f"action token out of range [0, {self.action_count})")
        emb = torch.where(
            (kinds == FRAME_KIND)[..., None],
            self.frame_embed(ids.clamp(0, self.vocab_size - 1)),
            self.action_embed(ids.clamp(0, self.action_count - 1)),
        )
        positions = torch.arange(offset, offset + ids.shape[1], device=ids.device)
        return self.drop(emb + self.pos_embed(positions))

    def forward(
        self,
        ids: torch.Tensor,
        kinds: torch.Tensor,
        cache: KVCache | None = None,
        valid: torch.Tensor | None = None,
    ) -> HeadOutputs:
        """Head logits for every input position.

        With a cache, the new positions are appended to it and see the cached
        prefix; the caller must be in eval mode. `valid` marks positions usable
        as attention keys (padding is excluded; a position may always attend to
        itself).
        """
        if cache is not None and self.training:
            raise ValueError("cached forward is an inference path; call eval() first")
        b, t = ids.shape
        offset = cache.length if cache is not None else 0
        total = offset + t
        if total > self.context:
            raise CapacityError(f"sequence of {total} positions exceeds context {self.context}")

        x = self._embed(ids, kinds, offset)
        mask = self._mask(b, t, offset, valid, ids.device)
        for layer, block in enumerate(self.blocks):
            x = block(x, mask, cache, layer)
        if cache is not None:
            cache.commit(t)
        x = self.ln_f(x)
        return HeadOutputs(
            transition=self.transition_head(x),
            reward=self.reward_head(x),
            termination=self.termination_head(x),
        )

    def _mask(self, b, t, offset, valid, device):
        if t == 1 and valid is None:
            return None  # single appended query sees the whole prefix
        q_pos = torch.arange(offset, offset + t, device=device)
        k_pos = torch.arange(0, offset + t, device=device)
        mask = k_pos[None, :] <= q_pos[:, None]
        if valid is not None:
            if valid.shape != (b, offset + t):
                raise ValueError("valid mask must cover all cached + new positions")
            mask = mask[None] & valid[:, None, :]
            self_idx = q_pos[:, None] == k_pos[None, :]
            mask = mask | self_idx[None]
            return mask[:, None]
        return mask[None, None]


def position_steps(length: int, tokens_per_frame: int, device=None) -> torch.Tensor:
    return torch.arange(length, device=device) // (tokens_per_frame + 1)


def dynamics_loss(
    model: DynamicsModel,
    tokens: torch.Tensor,
    actions: torch.Tensor,
    rewards: torch.Tensor,
    dones: torch.Tensor,
    step_valid: torch.Tensor,
) -> dict[str, torch.Tensor]:
    """Per-head losses on a batch of L-step segments.

    Transition targets are the frame tokens of every step with a valid
    predecessor step (the first observed frame of a segment has no
    conditioning and is never a target). Reward and termination targets sit at
    the action positions of valid steps. Padded steps contribute nothing.
    """
    b, l, k = tokens.shape
    ids, kinds = interleave(tokens, actions)
    t_total = ids.shape[1]
    pos_valid = step_valid[:, :, None].expand(b, l, k + 1).reshape(b, t_total)
    out = model(ids, kinds, valid=pos_valid)

    steps = position_steps(t_total, k, device=ids.device)
    prev_step_valid = torch.cat(
        [torch.zeros(b, 1, dtype=torch.bool, device=ids.device), step_valid[:, :-1]], dim=1
    )
    # targets: position p predicts ids[p + 1] when p+1 holds a frame token
    target_kind_frame = kinds[:, 1:] == FRAME_KIND
    target_steps = steps[1:]
    transition_mask = (
        target_kind_frame
        & step_valid[:, target_steps]
        & prev_step_valid[:, target_steps]
    )
    zero = torch.zeros((), device=ids.device)
    if transition_mask.any():
        logits = out.transition[:, :-1][transition_mask]
        targets = ids[:, 1:][transition_mask]
        transition_ce = F.cross_entropy(logits, targets)
    else:
        transition_ce = zero.clone()

    action_positions = torch.arange(k, t_total, k + 1, device=ids.device)
    reward_logits = out.reward[:, action_positions]
    term_logits = out.termination[:, action_positions]
    mask = step_valid
    if mask.any():
        if model.cfg.reward_mode == "sign":
            classes = (torch.sign(rewards).long() + 1)[mask]
            reward_loss = F.cross_entropy(reward_logits[mask], classes)
        else:
            reward_loss = F.mse_loss(reward_logits[mask].squeeze(-1), rewards[mask])
        termination_ce = F.cross_entropy(term_logits[mask], dones[mask].long())
    else:
        reward_loss = zero.clone()
        termination_ce = zero.clone()

    return {
        "transition_ce": transition_ce,
        "reward_loss": reward_loss,
        "termination_ce": termination_ce,
        "total": transition_ce + reward_loss + termination_ce,
    }


@torch.no_grad()
def predict_distributions(
    model: DynamicsModel,
    cache: KVCache,
    new_ids: torch.Tensor,
    new_kinds: torch.Tensor,
) -> dict[str, torch.Tensor]:
    """Append positions to the cache and read softmax distributions at the last one."""
    out = model(new_ids, new_kinds, cache=cache)
    res = {
        "transition": F.softmax(out.transition[:, -1], dim=-1),
        "termination": F.softmax(out.termination[:, -1], dim=-1),
    }
    if model.cfg.reward_mode == "sign":
        res["reward"] = F.softmax(out.reward[:, -1], dim=-1)
    else:
        res["reward"] = out.reward[:, -1]
    return res
