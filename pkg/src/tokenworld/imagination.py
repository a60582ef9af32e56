"""Rolling out the composed world model under a policy, for H imagined steps."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from tokenworld.agent import ActorCritic
from tokenworld.dynamics import ACTION_KIND, FRAME_KIND, DynamicsModel, KVCache, interleave, predict_distributions
from tokenworld.errors import CapacityError, StateError
from tokenworld.experience import frames_to_tensor
from tokenworld.tokenizer import FrameTokenizer

REWARD_SUPPORT = torch.tensor([-1.0, 0.0, 1.0])


@dataclass
class DreamState:
    tokens: torch.Tensor                         # (B, K) current frame tokens
    cache: KVCache
    frame: torch.Tensor                          # (B, 3, S, S) current decoded frame
    policy_state: tuple[torch.Tensor, torch.Tensor]
    t: int = 0
    done: torch.Tensor = None                    # (B,) bool
    grids: list[torch.Tensor] = field(default_factory=list)   # token history for window slides
    acts: list[torch.Tensor] = field(default_factory=list)

    @property
    def batch(self) -> int:
        return self.tokens.shape[0]


def _row_multinomial(probs: torch.Tensor, generators, skip: torch.Tensor | None) -> torch.Tensor:
    """Per-row draws with per-row generators; skipped rows take argmax, no draw."""
    out = torch.empty(probs.shape[0], dtype=torch.long)
    for b in range(probs.shape[0]):
        if skip is not None and bool(skip[b]):
            out[b] = probs[b].argmax()
        else:
            gen = generators[b] if generators is not None else None
            out[b] = torch.multinomial(probs[b], 1, generator=gen).item()
    return out


@torch.no_grad()
def init_dream(
    tokenizer: FrameTokenizer,
    model: DynamicsModel,
    agent: ActorCritic,
    contexts: list,
    device=None,
) -> DreamState:
    """Prime a dream from replay frames.

    Each context element is (context frames, context actions, start frame) as
    produced by the replay buffer. The dynamics cache is primed with the start
    frame's tokens; the policy's recurrent state is warmed by feeding the
    reconstructions of the preceding real frames, and stays zero without them.
    """
    tokenizer.eval()
    model.eval()
    agent.eval()
    batch = len(contexts)
    size = tokenizer.cfg.frame_size
    lengths = [len(ctx[0]) for ctx in contexts]
    max_ctx = max(lengths) if lengths else 0

    policy_state = agent.initial_state(batch, device=device)
    for slot in range(max_ctx):
        stacked = []
        active = []
        for b in range(batch):
            offset = slot - (max_ctx - lengths[b])
            if offset >= 0:
                stacked.append(frames_to_tensor(contexts[b][0][offset], device=device))
                active.append(True)
            else:
                stacked.append(torch.zeros(3, size, size, device=device))
                active.append(False)
        obs = tokenizer.reconstruct(torch.stack(stacked))
        _, _, new_state = agent(obs, policy_state)
        gate = torch.tensor(active, device=device)[:, None].float()
        policy_state = (
            gate * new_state[0] + (1 - gate) * policy_state[0],
            gate * new_state[1] + (1 - gate) * policy_state[1],
        )

    x0 = torch.stack([frames_to_tensor(ctx[2], device=device) for ctx in contexts])
    _, tokens = tokenizer.encode(x0)
    frame = tokenizer.decode(tokens)
    cache = model.new_cache(batch, device=device)
    model(tokens, torch.full_like(tokens, FRAME_KIND), cache=cache)
    return DreamState(
        tokens=tokens,
        cache=cache,
        frame=frame,
        policy_state=policy_state,
        t=0,
        done=torch.zeros(batch, dtype=torch.bool, device=device),
        grids=[tokens],
        acts=[],
    )


def _slide_window(model: DynamicsModel, state: DreamState) -> None:
    """Drop the oldest dreamed steps and rebuild the cache on fresh positions."""
    k = model.tokens_per_frame
    keep = (model.context - k) // (k + 1) - 1  # steps retained alongside their leading frame
    if keep < 0:
        raise CapacityError(f"context {model.context} cannot hold a frame plus one step")
    state.grids = state.grids[-(keep + 1):]
    state.acts = state.acts[-keep:] if keep else []
    cache = model.new_cache(state.batch, device=state.tokens.device)
    if state.acts:
        ids, kinds = interleave(torch.stack(state.grids[:-1], dim=1), torch.stack(state.acts, dim=1))
        ids = torch.cat([ids, state.grids[-1]], dim=1)
        kinds = torch.cat([kinds, torch.full_like(state.grids[-1], FRAME_KIND)], dim=1)
    else:
        ids = state.grids[-1]
        kinds = torch.full_like(ids, FRAME_KIND)
    model(ids, kinds, cache=cache)
    state.cache = cache


@torch.no_grad()
def dream_step(
    tokenizer: FrameTokenizer,
    model: DynamicsModel,
    state: DreamState,
    actions: torch.Tensor,
    generators=None,
    sample_heads: bool = True,
    on_overflow: str = "slide",
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, DreamState]:
    """Advance the dream one step: commit the actions, read reward and
    termination, sample the next frame token by token, decode it.

    Rows already done are carried along frozen: they consume no randomness and
    their outputs are ignored. When the context window is full, the oldest
    steps are dropped (`slide`) or a CapacityError is raised (`error`).
    """
    if bool(state.done.all()):
        raise StateError("dream_step on a finished dream")
    k = model.tokens_per_frame
    if state.cache.length + k + 1 > model.context:
        if on_overflow == "error":
            raise CapacityError(
                f"dream step needs {k + 1} positions, cache at {state.cache.length}/{model.context}"
            )
        _slide_window(model, state)

    batch = state.batch
    device = state.tokens.device
    dists = predict_distributions(
        model, state.cache, actions[:, None],
        torch.full((batch, 1), ACTION_KIND, dtype=torch.long, device=device),
    )
    support = REWARD_SUPPORT.to(device)
    if model.cfg.reward_mode == "sign":
        if sample_heads:
            rewards = support[_row_multinomial(dists["reward"], generators, state.done)]
        else:
            rewards = (dists["reward"] * support).sum(-1)
    else:
        rewards = dists["reward"].squeeze(-1)
    if sample_heads:
        dones_new = _row_multinomial(dists["termination"], generators, state.done).bool().to(device)
    else:
        dones_new = dists["termination"].argmax(dim=-1).bool()

    token_dist = dists["transition"]
    new_tokens = torch.empty(batch, k, dtype=torch.long, device=device)
    frame_kind = torch.full((batch, 1), FRAME_KIND, dtype=torch.long, device=device)
    for j in range(k):
        new_tokens[:, j] = _row_multinomial(token_dist, generators, state.done)
        token_dist = predict_distributions(
            model, state.cache, new_tokens[:, j : j + 1], frame_kind
        )["transition"]

    decoded = tokenizer.decode(new_tokens)
    alive = ~state.done
    state.tokens = torch.where(alive[:, None], new_tokens, state.tokens)
    state.frame = torch.where(alive[:, None, None, None], decoded, state.frame)
    state.grids.append(state.tokens)
    state.acts.append(actions)
    rewards = torch.where(alive, rewards.float(), torch.zeros_like(rewards, dtype=torch.float32))
    dones_new = dones_new & alive
    state.done = state.done | dones_new
    state.t += 1
    return state.frame, rewards, dones_new, state


@dataclass
class ImaginedTrajectory:
    """Batched imagined rollout; rows may end early on a predicted termination."""

    frames: torch.Tensor     # (B, T+1, 3, S, S)
    actions: torch.Tensor    # (B, T)
    rewards: torch.Tensor    # (B, T)
    dones: torch.Tensor      # (B, T)
    values: torch.Tensor     # (B, T+1): one value per visited state, last included
    log_probs: torch.Tensor  # (B, T)
    entropies: torch.Tensor  # (B, T)
    mask: torch.Tensor       # (B, T) bool, True where the row actually stepped
    lengths: torch.Tensor    # (B,)


def rollout(
    tokenizer: FrameTokenizer,
    model: DynamicsModel,
    agent: ActorCritic,
    contexts: list,
    horizon: int,
    generators=None,
    sample_heads: bool = True,
    device=None,
    policy_grad: bool = False,
) -> ImaginedTrajectory:
    """Dream `horizon` steps (fewer on a predicted episode end) under the policy.

    With policy_grad=True the recorded values, log-probs and entropies keep
    their graph so the behavior losses can backpropagate through the policy;
    the world model always stays frozen (its side runs under no_grad).
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    state = init_dream(tokenizer, model, agent, contexts, device=device)

    frames = [state.frame]
    values, log_probs, entropies = [], [], []
    actions, rewards, dones, mask = [], [], [], []

    grad_ctx = torch.enable_grad if policy_grad else torch.no_grad
    with grad_ctx():
        for t in range(horizon + 1):
            logits, value, new_ps = agent(state.frame, state.policy_state)
            values.append(value)
            if t == horizon or bool(state.done.all()):
                break

            log_all = F.log_softmax(logits, dim=-1)
            probs = log_all.exp()
            acts_t = _row_multinomial(probs.detach(), generators, state.done).to(device)
            alive = ~state.done
            log_probs.append(torch.where(alive, log_all.gather(1, acts_t[:, None]).squeeze(1),
                                         torch.zeros_like(value)))
            entropies.append(torch.where(alive, -(probs * log_all).sum(-1),
                                         torch.zeros_like(value)))
            actions.append(torch.where(alive, acts_t, torch.zeros_like(acts_t)))
            mask.append(alive)

            gate = alive[:, None].float()
            state.policy_state = (
                gate * new_ps[0] + (1 - gate) * state.policy_state[0],
                gate * new_ps[1] + (1 - gate) * state.policy_state[1],
            )
            with torch.no_grad():
                frame, r_t, d_t, state = dream_step(
                    tokenizer, model, state, acts_t, generators, sample_heads=sample_heads
                )
            rewards.append(r_t)
            dones.append(d_t.float())
            frames.append(frame)

    return ImaginedTrajectory(
        frames=torch.stack(frames, dim=1),
        actions=torch.stack(actions, dim=1),
        rewards=torch.stack(rewards, dim=1),
        dones=torch.stack(dones, dim=1),
        values=torch.stack(values, dim=1),
        log_probs=torch.stack(log_probs, dim=1),
        entropies=torch.stack(entropies, dim=1),
        mask=torch.stack(mask, dim=1),
        lengths=torch.stack(mask, dim=1).sum(1),
    )
