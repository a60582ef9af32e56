"""Replay storage of real episodes, segment/frame/context sampling, collection."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from tokenworld.agent import ActorCritic, act
from tokenworld.errors import StateError

EPISODE_SUFFIX = ".twep"


def frames_to_tensor(frames_u8: np.ndarray, device=None) -> torch.Tensor:
    """uint8 (..., S, S, 3) -> float32 (..., 3, S, S) in [0, 1]."""
    t = torch.from_numpy(np.ascontiguousarray(frames_u8)).to(device=device, dtype=torch.float32)
    return t.div_(255.0).movedim(-1, -3)

def tensor_to_frames(frames01: torch.Tensor) -> np.ndarray:
    """float32 (..., 3, S, S) in [0, 1] -> uint8 (..., S, S, 3)."""
    arr = frames01.detach().clamp(0.0, 1.0).movedim(-3, -1).mul(255.0).round()
    return arr.to(torch.uint8).cpu().numpy()

def quantize_frame(frame01: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(frame01 * 255.0), 0, 255).astype(np.uint8)


@dataclass
class Episode:
    """Frames x_0..x_T (post-step frame included) with aligned (a, r, d) for t < T."""

    frames: list[np.ndarray] = field(default_factory=list)
    actions: list[int] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    dones: list[int] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.actions)

    def append(self, action: int, reward: float, done: bool, next_frame_u8: np.ndarray) -> None:
        self.actions.append(int(action))
        self.rewards.append(float(reward))
        self.dones.append(int(done))
        self.frames.append(next_frame_u8)

    @property
    def ret(self) -> float:
        return float(sum(self.rewards))


@dataclass
class SegmentSample:
    """L consecutive steps from one episode; padded positions carry mask 0."""

    frames: np.ndarray   # (B, L, S, S, 3) uint8
    actions: np.ndarray  # (B, L) int64
    rewards: np.ndarray  # (B, L) float32
    dones: np.ndarray    # (B, L) uint8
    mask: np.ndarray     # (B, L) bool


class ReplayBuffer:
    """Completed episodes plus the one episode currently being collected."""

    def __init__(self):
        self.episodes: list[Episode] = []
        self.current: Episode | None = None
        self.saved_count = 0  # episodes already persisted to disk

    def begin_episode(self, first_frame_u8: np.ndarray) -> None:
        if self.current is not None:
            raise StateError("previous episode still open")
        self.current = Episode(frames=[first_frame_u8])

    def append_step(self, action: int, reward: float, done: bool, next_frame_u8: np.ndarray) -> None:
        if self.current is None:
            raise StateError("no open episode")
        self.current.append(action, reward, done, next_frame_u8)
        if done:
            self.episodes.append(self.current)
            self.current = None

    def _all_episodes(self) -> list[Episode]:
        eps = list(self.episodes)
        if self.current is not None and self.current.steps > 0:
            eps.append(self.current)
        return eps

    @property
    def n_steps(self) -> int:
        return sum(ep.steps for ep in self._all_episodes())

    @property
    def n_frames(self) -> int:
        return sum(len(ep.frames) for ep in self._all_episodes())

    def sample_frames(self, batch: int, rng: np.random.Generator) -> np.ndarray:
        eps = self._all_episodes()
        if not eps:
            raise StateError("replay buffer is empty")
        counts = np.array([len(ep.frames) for ep in eps])
        edges = np.cumsum(counts)
        picks = rng.integers(0, edges[-1], size=batch)
        out = np.empty((batch, *eps[0].frames[0].shape), dtype=np.uint8)
        for i, pick in enumerate(picks):
            ep_idx = int(np.searchsorted(edges, pick, side="right"))
            offset = pick - (edges[ep_idx - 1] if ep_idx else 0)
            out[i] = eps[ep_idx].frames[offset]
        return out

    def sample_segments(self, batch: int, length: int, rng: np.random.Generator) -> SegmentSample:
        eps = [ep for ep in self._all_episodes() if ep.steps >= 1]
        if not eps:
            raise StateError("replay buffer holds no transitions")
        counts = np.array([max(ep.steps - length + 1, 1) for ep in eps])
        edges = np.cumsum(counts)
        shape = eps[0].frames[0].shape
        frames = np.zeros((batch, length, *shape), dtype=np.uint8)
        actions = np.zeros((batch, length), dtype=np.int64)
        rewards = np.zeros((batch, length), dtype=np.float32)
        dones = np.zeros((batch, length), dtype=np.uint8)
        mask = np.zeros((batch, length), dtype=bool)
        picks = rng.integers(0, edges[-1], size=batch)
        for i, pick in enumerate(picks):
            ep_idx = int(np.searchsorted(edges, pick, side="right"))
            start = int(pick - (edges[ep_idx - 1] if ep_idx else 0))
            ep = eps[ep_idx]
            take = min(length, ep.steps - start)
            pad = length - take
            for j in range(take):
                frames[i, pad + j] = ep.frames[start + j]
            actions[i, pad:] = ep.actions[start : start + take]
            rewards[i, pad:] = ep.rewards[start : start + take]
            dones[i, pad:] = ep.dones[start : start + take]
            mask[i, pad:] = True
            if pad:
                frames[i, :pad] = ep.frames[start]  # repeat first observation
        return SegmentSample(frames, actions, rewards, dones, mask)

    def sample_initial_contexts(
        self, batch: int, context: int, rng: np.random.Generator
    ) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """Per element: (context frames (C,S,S,3), context actions (C,), start frame)."""
        eps = self._all_episodes()
        if not eps:
            raise StateError("replay buffer is empty")
        counts = np.array([len(ep.frames) for ep in eps])
        edges = np.cumsum(counts)
        out = []
        for pick in rng.integers(0, edges[-1], size=batch):
            ep_idx = int(np.searchsorted(edges, pick, side="right"))
            idx = int(pick - (edges[ep_idx - 1] if ep_idx else 0))
            ep = eps[ep_idx]
            lo = max(0, idx - context)
            ctx_frames = np.stack(ep.frames[lo:idx]) if idx > lo else np.zeros(
                (0, *ep.frames[0].shape), dtype=np.uint8
            )
            ctx_actions = np.array(ep.actions[lo:idx], dtype=np.int64)
            out.append((ctx_frames, ctx_actions, ep.frames[idx]))
        return out

    # --- persistence -------------------------------------------------------

    def save_new_episodes(self, directory: str | Path, env_id: str, action_count: int) -> int:
        """Write completed episodes not yet on disk; returns how many were written."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = 0
        for idx in range(self.saved_count, len(self.episodes)):
            save_episode(directory / f"episode_{idx:06d}{EPISODE_SUFFIX}",
                         self.episodes[idx], env_id, action_count)
            written += 1
        self.saved_count = len(self.episodes)
        return written

    @classmethod
    def load_dir(cls, directory: str | Path) -> "ReplayBuffer":
        buffer = cls()
        for path in sorted(Path(directory).glob(f"*{EPISODE_SUFFIX}")):
            buffer.episodes.append(load_episode(path))
        buffer.saved_count = len(buffer.episodes)
        return buffer


def save_episode(path: str | Path, episode: Episode, env_id: str, action_count: int) -> None:
    header = {
        "steps": episode.steps,
        "frame_shape": list(episode.frames[0].shape),
        "action_count": action_count,
        "env_id": env_id,
        "version": 1,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(np.stack(episode.frames).tobytes())
        fh.write(np.asarray(episode.actions, dtype="<i8").tobytes())
        fh.write(np.asarray(episode.rewards, dtype="<f4").tobytes())
        fh.write(np.asarray(episode.dones, dtype="<u1").tobytes())


def load_episode(path: str | Path) -> Episode:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        steps = header["steps"]
        shape = tuple(header["frame_shape"])
        n_frames = steps + 1
        frames = np.frombuffer(fh.read(n_frames * int(np.prod(shape))), dtype=np.uint8)
        frames = frames.reshape(n_frames, *shape)
        actions = np.frombuffer(fh.read(steps * 8), dtype="<i8")
        rewards = np.frombuffer(fh.read(steps * 4), dtype="<f4")
        dones = np.frombuffer(fh.read(steps), dtype="<u1")
    return Episode(
        frames=[frames[i].copy() for i in range(n_frames)],
        actions=[int(a) for a in actions],
        rewards=[float(r) for r in rewards],
        dones=[int(d) for d in dones],
    )


@torch.no_grad()
def collect(
    env,
    tokenizer,
    agent: ActorCritic,
    buffer: ReplayBuffer,
    n_steps: int,
    epsilon: float,
    temperature: float,
    generator: torch.Generator | None = None,
    agent_state: tuple[torch.Tensor, torch.Tensor] | None = None,
    device=None,
) -> tuple[list[float], tuple[torch.Tensor, torch.Tensor]]:
    """Run the policy in the real env for n_steps, appending transitions.

    The policy never sees raw frames: each observation passes through the
    autoencoder first, exactly as it will during imagination. Episodes continue
    across calls; the env only resets at the start and after terminations.
    """
    tokenizer.eval()
    agent.eval()
    returns: list[float] = []
    if buffer.current is None:
        buffer.begin_episode(quantize_frame(env.reset()))
        agent_state = agent.initial_state(1, device=device)
    elif agent_state is None:
        raise ValueError("agent_state required when resuming an open episode")

    frame_u8 = buffer.current.frames[-1]
    for _ in range(n_steps):
        obs = tokenizer.reconstruct(frames_to_tensor(frame_u8[None], device=device))
        logits, _, agent_state = agent(obs, agent_state)
        action = int(act(logits[0], temperature, epsilon, generator))
        next_frame, reward, done = env.step(action)
        next_u8 = quantize_frame(next_frame)
        buffer.append_step(action, reward, done, next_u8)
        if done:
            returns.append(buffer.episodes[-1].ret)
            buffer.begin_episode(quantize_frame(env.reset()))
            agent_state = agent.initial_state(1, device=device)
        frame_u8 = buffer.current.frames[-1]
    return returns, agent_state
