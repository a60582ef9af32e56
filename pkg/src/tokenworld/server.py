"""HTTP/JSON dream server: interactive sessions against a trained world model."""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel

from tokenworld.envs import make_env
from tokenworld.errors import CapacityError, StateError
from tokenworld.experience import ReplayBuffer, quantize_frame
from tokenworld.imagination import DreamState, dream_step, init_dream
from tokenworld.trainer import Bundle, checkpoint_hash, frame_to_png_b64, load_bundle

DEFAULT_IDLE_TIMEOUT = 600.0


class CreateSession(BaseModel):
    source: str = "replay"
    seed: int | None = None


class StepSession(BaseModel):
    action: int


@dataclass
class Session:
    id: str
    state: DreamState
    generator: torch.Generator
    source: str
    seed: int
    status: str = "active"
    step: int = 0
    last_access: float = field(default_factory=time.monotonic)
    lock: threading.Lock = field(default_factory=threading.Lock)


def _error(status_code: int, error: str, detail: str) -> JSONResponse:
    return JSONResponse(status_code=status_code, content={"error": error, "detail": detail})


def create_app(
    bundle: Bundle | str | Path,
    episodes_dir: str | Path | None = None,
    idle_timeout: float = DEFAULT_IDLE_TIMEOUT,
) -> FastAPI:
    if not isinstance(bundle, Bundle):
        bundle = load_bundle(bundle)
    replay = None
    if episodes_dir is not None and Path(episodes_dir).exists():
        replay = ReplayBuffer.load_dir(episodes_dir)
        if not replay.episodes:
            replay = None

    try:
        probe = make_env(bundle.env_id, seed=0)
        labels = list(getattr(probe, "action_labels", ())) or [
            f"action_{i}" for i in range(bundle.action_count)
        ]
    except Exception:
        labels = [f"action_{i}" for i in range(bundle.action_count)]

    app = FastAPI(title="dream server")
    sessions: dict[str, Session] = {}
    registry_lock = threading.Lock()
    ckpt_hash = checkpoint_hash(bundle.checkpoint_path)
    k = bundle.config.tokenizer.tokens_per_frame
    capacity = bundle.config.dynamics.timesteps * (k + 1)

    @app.exception_handler(RequestValidationError)
    async def _validation_handler(request: Request, exc: RequestValidationError):
        return _error(400, "validation", str(exc.errors()))

    def _purge() -> None:
        now = time.monotonic()
        with registry_lock:
            stale = [sid for sid, s in sessions.items() if now - s.last_access > idle_timeout]
            for sid in stale:
                sessions.pop(sid, None)

    def _observe(session: Session) -> tuple[int, float]:
        """Feed the current frame to the policy; sample its suggestion."""
        with torch.no_grad():
            logits, value, new_ps = bundle.agent(session.state.frame, session.state.policy_state)
            session.state.policy_state = new_ps
            probs = F.softmax(logits[0], dim=-1)
            suggestion = int(torch.multinomial(probs, 1, generator=session.generator).item())
        return suggestion, float(value[0])

    @app.get("/meta")
    def meta():
        return {
            "checkpoint": ckpt_hash,
            "env": bundle.env_id,
            "tokens_per_frame": k,
            "vocab_size": bundle.config.tokenizer.vocab_size,
            "horizon": bundle.config.rl.horizon,
            "context_capacity": capacity,
            "action_space": bundle.action_count,
            "labels": labels,
        }

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSession):
        _purge()
        seed = body.seed if body.seed is not None else int(time.time_ns() % (2 ** 31))
        if body.source == "replay":
            if replay is None:
                return _error(400, "input", "no replay episodes available; use source='env'")
            rng = np.random.default_rng(seed)
            contexts = replay.sample_initial_contexts(1, bundle.config.rl.burn_in, rng)
        elif body.source == "env":
            env = make_env(bundle.env_id, seed=seed)
            frame = quantize_frame(env.reset())
            contexts = [(np.zeros((0, *frame.shape), dtype=np.uint8), np.zeros(0, dtype=np.int64), frame)]
        else:
            return _error(400, "input", f"unknown source {body.source!r}")

        state = init_dream(bundle.tokenizer, bundle.dynamics, bundle.agent, contexts)
        session = Session(
            id=uuid.uuid4().hex,
            state=state,
            generator=torch.Generator().manual_seed(seed),
            source=body.source,
            seed=seed,
        )
        suggestion, value = _observe(session)
        with registry_lock:
            sessions[session.id] = session
        return {
            "id": session.id,
            "frame": frame_to_png_b64(state.frame[0]),
            "action_space": bundle.action_count,
            "labels": labels,
            "value": value,
            "suggested_action": suggestion,
            "step": 0,
        }

    @app.post("/sessions/{sid}/actions")
    def step_session(sid: str, body: StepSession):
        _purge()
        session = sessions.get(sid)
        if session is None:
            return _error(404, "not_found", "unknown or expired session")
        if not 0 <= body.action < bundle.action_count:
            return _error(400, "input", f"action must lie in [0, {bundle.action_count})")
        with session.lock:
            session.last_access = time.monotonic()
            if session.status != "active":
                return _error(409, "done", "session already finished")
            actions = torch.tensor([body.action], dtype=torch.long)
            try:
                frame, reward, done, _ = dream_step(
                    bundle.tokenizer, bundle.dynamics, session.state, actions,
                    generators=[session.generator], on_overflow="error",
                )
            except CapacityError as exc:
                session.status = "done"
                return _error(409, "capacity", str(exc))
            except StateError as exc:
                session.status = "done"
                return _error(409, "done", str(exc))
            session.step += 1
            suggestion, value = _observe(session)
            finished = bool(done[0])
            if finished:
                session.status = "done"
            return {
                "frame": frame_to_png_b64(frame[0]),
                "reward": float(reward[0]),
                "done": int(finished),
                "step": session.step,
                "suggested_action": suggestion,
                "value": value,
            }

    @app.get("/sessions/{sid}")
    def session_status(sid: str):
        _purge()
        session = sessions.get(sid)
        if session is None:
            return _error(404, "not_found", "unknown or expired session")
        return {
            "id": session.id,
            "status": session.status,
            "step": session.step,
            "source": session.source,
            "seed": session.seed,
        }

    @app.delete("/sessions/{sid}", status_code=204)
    def delete_session(sid: str):
        with registry_lock:
            if sessions.pop(sid, None) is None:
                return _error(404, "not_found", "unknown or expired session")
        return Response(status_code=204)

    return app


def serve(checkpoint: str | Path, port: int, host: str = "127.0.0.1",
          episodes_dir: str | Path | None = None) -> None:
    import uvicorn

    app = create_app(checkpoint, episodes_dir=episodes_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
