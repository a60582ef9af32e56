"""Environment contract, the PixelCatch verification env, and the emulator adapter."""

from __future__ import annotations

from typing import Protocol, runtime_checkable

import numpy as np

from tokenworld.errors import StateError

FRAME_SIZE = 64

# PixelCatch geometry. The frame is split into 16 ball columns of 4 px; the
# ball drops one cell (4 px) per step and meets the bottom band after 15 steps.
N_COLUMNS = 16
CELL = 4
PADDLE_WIDTH = 8
PADDLE_STEP = 4
EPISODE_STEPS = 15

BALL_COLOR = (255, 64, 64)
PADDLE_COLOR = (64, 255, 64)


@runtime_checkable
class EnvContract(Protocol):
    action_count: int

    def reset(self) -> np.ndarray: ...

    def step(self, action: int) -> tuple[np.ndarray, float, bool]: ...


class PixelCatch:
    """Deterministic catch game rendered as 64x64 RGB frames.

    Actions: 0 = left, 1 = stay, 2 = right. The only nonzero reward arrives at
    bottom contact on step 15: +1 when the paddle overlaps the ball column,
    -1 otherwise.
    """

    action_count = 3
    action_labels = ("left", "stay", "right")

    def __init__(self, seed: int | np.random.Generator = 0):
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.ball_col = 0
        self.ball_row = 0
        self.paddle_x = (FRAME_SIZE - PADDLE_WIDTH) // 2
        self.done = True

    def reset(self) -> np.ndarray:
        self.ball_col = int(self.rng.integers(0, N_COLUMNS))
        self.ball_row = 0
        self.paddle_x = (FRAME_SIZE - PADDLE_WIDTH) // 2
        self.done = False
        return self._frame()

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        if self.done:
            raise StateError("PixelCatch.step called on a finished episode; call reset()")
        if action not in (0, 1, 2):
            raise ValueError(f"action must be 0, 1 or 2, got {action}")
        self.paddle_x = int(
            np.clip(self.paddle_x + (action - 1) * PADDLE_STEP, 0, FRAME_SIZE - PADDLE_WIDTH)
        )
        self.ball_row += 1
        reward = 0.0
        if self.ball_row >= EPISODE_STEPS:
            ball_x = self.ball_col * CELL
            overlap = ball_x < self.paddle_x + PADDLE_WIDTH and self.paddle_x < ball_x + CELL
            reward = 1.0 if overlap else -1.0
            self.done = True
        return self._frame(), reward, self.done

    def render_u8(self) -> np.ndarray:
        frame = np.zeros((FRAME_SIZE, FRAME_SIZE, 3), dtype=np.uint8)
        by = self.ball_row * CELL
        bx = self.ball_col * CELL
        frame[by : by + CELL, bx : bx + CELL] = BALL_COLOR
        frame[FRAME_SIZE - CELL :, self.paddle_x : self.paddle_x + PADDLE_WIDTH] = PADDLE_COLOR
        return frame

    def _frame(self) -> np.ndarray:
        return self.render_u8().astype(np.float32) / 255.0

    def get_state(self) -> dict:
        return {
            "ball_col": self.ball_col,
            "ball_row": self.ball_row,
            "paddle_x": self.paddle_x,
            "done": self.done,
            "rng": self.rng.bit_generator.state,
        }

    def set_state(self, state: dict) -> None:
        self.ball_col = state["ball_col"]
        self.ball_row = state["ball_row"]
        self.paddle_x = state["paddle_x"]
        self.done = state["done"]
        self.rng.bit_generator.state = state["rng"]


def track_policy(env: PixelCatch) -> int:
    """Scripted reference policy: center the paddle over the ball column."""
    target = env.ball_col * CELL - (PADDLE_WIDTH - CELL) // 2
    if env.paddle_x < target:
        return 2
    if env.paddle_x > target:
        return 0
    return 1


class EmulatorAdapter:
    """Wrap an external emulator into the frame/reward/done contract.

    Frames are resized to 64x64 RGB with area interpolation and clamped to
    [0, 1]; rewards and termination pass through untouched.
    """

    def __init__(self, env_id: str):
        try:
            import gymnasium
        except ImportError as exc:
            raise RuntimeError(
                f"adapter:{env_id} needs the 'gymnasium' package (and the matching emulator "
                f"extras); install it or use the built-in 'pixelcatch' env"
            ) from exc
        self._env = gymnasium.make(env_id)
        space = self._env.action_space
        if not hasattr(space, "n"):
            raise ValueError(f"adapter requires a discrete action space, got {space}")
        self.action_count = int(space.n)
        self.action_labels = tuple(f"action_{i}" for i in range(self.action_count))

    @staticmethod
    def _convert(obs: np.ndarray) -> np.ndarray:
        import cv2

        frame = np.asarray(obs)
        if frame.ndim == 2:
            frame = np.repeat(frame[..., None], 3, axis=-1)
        if frame.dtype == np.uint8:
            frame = frame.astype(np.float32) / 255.0
        frame = cv2.resize(frame, (FRAME_SIZE, FRAME_SIZE), interpolation=cv2.INTER_AREA)
        return np.clip(frame.astype(np.float32), 0.0, 1.0)

    def reset(self) -> np.ndarray:
        obs, _ = self._env.reset()
        return self._convert(obs)

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        obs, reward, terminated, truncated, _ = self._env.step(action)
        return self._convert(obs), float(reward), bool(terminated or truncated)


def make_env(env_id: str, seed: int = 0) -> EnvContract:
    if env_id == "pixelcatch":
        return PixelCatch(seed=seed)
    if env_id.startswith("adapter:"):
        return EmulatorAdapter(env_id.removeprefix("adapter:"))
    raise ValueError(f"unknown env id {env_id!r} (expected 'pixelcatch' or 'adapter:<id>')")
