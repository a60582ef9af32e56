"""Training loop: collect real experience, fit the world model, dream-train the agent."""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from tokenworld.agent import ActorCritic, act, lambda_returns, policy_loss, value_loss
from tokenworld.checkpoint import (
    load_archive,
    load_module,
    load_optimizer,
    module_tensors,
    optimizer_tensors,
    save_archive,
)
from tokenworld.config import TrainConfig, from_flat, to_flat
from tokenworld.dynamics import DynamicsModel, dynamics_loss, interleave
from tokenworld.envs import make_env
from tokenworld.experience import ReplayBuffer, collect, frames_to_tensor
from tokenworld.imagination import rollout
from tokenworld.tokenizer import FrameTokenizer


def build_models(config: TrainConfig, action_count: int) -> tuple[FrameTokenizer, DynamicsModel, ActorCritic]:
    tokenizer = FrameTokenizer(config.tokenizer)
    dynamics = DynamicsModel(
        config.dynamics,
        vocab_size=config.tokenizer.vocab_size,
        action_count=action_count,
        tokens_per_frame=config.tokenizer.tokens_per_frame,
    )
    agent = ActorCritic(config.agent, action_count, frame_size=config.tokenizer.frame_size)
    return tokenizer, dynamics, agent


def _decay_groups(model: DynamicsModel, weight_decay: float) -> list[dict]:
    decay, no_decay = [], []
    for name, param in model.named_parameters():
        (decay if param.ndim >= 2 and "embed" not in name else no_decay).append(param)
    return [
        {"params": decay, "weight_decay": weight_decay},
        {"params": no_decay, "weight_decay": 0.0},
    ]


class Trainer:
    def __init__(self, config: TrainConfig, out_dir: str | Path, device: str = "cpu"):
        self.config = config
        self.device = torch.device(device)
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.episodes_dir = self.out_dir / "episodes"

        torch.manual_seed(config.seed)
        self.np_rng = np.random.default_rng(config.seed)
        self.env = make_env(config.env, seed=config.seed + 1)
        self.action_count = self.env.action_count

        self.tokenizer, self.dynamics, self.agent = build_models(config, self.action_count)
        betas = (config.adam_beta1, config.adam_beta2)
        self.opt_tokenizer = torch.optim.Adam(
            [p for p in self.tokenizer.parameters() if p.requires_grad],
            lr=config.learning_rate, betas=betas,
        )
        self.opt_dynamics = torch.optim.AdamW(
            _decay_groups(self.dynamics, config.dynamics.weight_decay),
            lr=config.learning_rate, betas=betas,
        )
        self.opt_agent = torch.optim.Adam(
            self.agent.parameters(), lr=config.learning_rate, betas=betas
        )

        self.buffer = ReplayBuffer()
        self.collect_state: tuple[torch.Tensor, torch.Tensor] | None = None
        self.epoch = 0
        self.counters = {"env_steps": 0, "tokenizer_steps": 0, "dynamics_steps": 0, "agent_steps": 0}
        self._metrics_fh = None

    # --- metrics -----------------------------------------------------------

    def _log(self, epoch: int, step: int, name: str, value: float) -> None:
        if self._metrics_fh is None:
            self._metrics_fh = open(self.out_dir / "metrics.ndjson", "a")
        record = {"epoch": epoch, "step": step, "name": name, "value": float(value)}
        self._metrics_fh.write(json.dumps(record) + "\n")

    def _flush(self) -> None:
        if self._metrics_fh is not None:
            self._metrics_fh.flush()

    # --- optimisation ------------------------------------------------------

    def _check_finite(self, loss: torch.Tensor, where: str) -> None:
        if not bool(torch.isfinite(loss)):
            path = self.out_dir / "abort.ckpt"
            self.save_checkpoint(path)
            raise RuntimeError(f"non-finite loss in {where}; diagnostic checkpoint at {path}")

    def _step(self, optimizer, module, loss: torch.Tensor, where: str) -> float:
        self._check_finite(loss, where)
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        params = [p for p in module.parameters() if p.grad is not None]
        torch.nn.utils.clip_grad_norm_(params, self.config.max_grad_norm)
        post = math.sqrt(sum(float((p.grad ** 2).sum()) for p in params))
        optimizer.step()
        return post

    def update_world_model(self, epoch: int) -> None:
        cfg = self.config
        frames = frames_to_tensor(
            self.buffer.sample_frames(cfg.batch_tokenizer, self.np_rng), device=self.device
        )
        self.tokenizer.train()
        losses = self.tokenizer.loss(frames)
        norm = self._step(self.opt_tokenizer, self.tokenizer, losses["total"], "tokenizer")
        self.counters["tokenizer_steps"] += 1
        step = self.counters["tokenizer_steps"]
        for key in ("total", "recon", "commit", "perceptual"):
            self._log(epoch, step, f"tokenizer/{key}", losses[key].item())
        self._log(epoch, step, "tokenizer/grad_norm", norm)
        if cfg.tokenizer.reinit_unused_codes:
            with torch.no_grad():
                pre, tokens = self.tokenizer.encode(frames)
            self.tokenizer.reinit_unused_codes(pre, tokens)

        if epoch < cfg.start_dynamics:
            return
        seg = self.buffer.sample_segments(cfg.batch_dynamics, cfg.dynamics.timesteps, self.np_rng)
        b, l = seg.actions.shape
        self.tokenizer.eval()
        with torch.no_grad():
            flat = frames_to_tensor(seg.frames.reshape(b * l, *seg.frames.shape[2:]), device=self.device)
            _, tokens = self.tokenizer.encode(flat)
        tokens = tokens.reshape(b, l, -1)
        self.dynamics.train()
        losses = dynamics_loss(
            self.dynamics,
            tokens,
            torch.from_numpy(seg.actions).to(self.device),
            torch.from_numpy(seg.rewards).to(self.device),
            torch.from_numpy(seg.dones).to(self.device),
            torch.from_numpy(seg.mask).to(self.device),
        )
        norm = self._step(self.opt_dynamics, self.dynamics, losses["total"], "dynamics")
        self.counters["dynamics_steps"] += 1
        step = self.counters["dynamics_steps"]
        for key in ("transition_ce", "reward_loss", "termination_ce"):
            self._log(epoch, step, f"dynamics/{key}", losses[key].item())
        self._log(epoch, step, "dynamics/grad_norm", norm)

    def update_behavior(self, epoch: int) -> None:
        cfg = self.config
        contexts = self.buffer.sample_initial_contexts(
            cfg.batch_agent, cfg.rl.burn_in, self.np_rng
        )
        seeds = self.np_rng.integers(0, 2 ** 62, size=len(contexts))
        generators = [torch.Generator().manual_seed(int(s)) for s in seeds]
        traj = rollout(
            self.tokenizer, self.dynamics, self.agent, contexts,
            horizon=cfg.rl.horizon, generators=generators,
            sample_heads=cfg.rl.sample_rewards, device=self.device, policy_grad=True,
        )
        targets = lambda_returns(
            traj.rewards, traj.dones, traj.values.detach(), cfg.rl.gamma, cfg.rl.td_lambda
        )
        v_loss = value_loss(traj.values[:, :-1], targets, valid=traj.mask)
        p_loss = policy_loss(
            traj.log_probs, targets, traj.values[:, :-1], traj.entropies,
            cfg.rl.entropy_coef, valid=traj.mask,
        )
        norm = self._step(self.opt_agent, self.agent, v_loss + p_loss, "agent")
        self.counters["agent_steps"] += 1
        step = self.counters["agent_steps"]
        self._log(epoch, step, "agent/value_loss", v_loss.item())
        self._log(epoch, step, "agent/policy_loss", p_loss.item())
        self._log(epoch, step, "agent/entropy", traj.entropies[traj.mask].mean().item())
        self._log(epoch, step, "agent/imagined_return", traj.rewards.sum(1).mean().item())
        self._log(epoch, step, "agent/grad_norm", norm)

    # --- loop --------------------------------------------------------------

    def run_epoch(self, epoch: int) -> None:
        cfg = self.config
        if epoch < cfg.collection_epochs:
            returns, self.collect_state = collect(
                self.env, self.tokenizer, self.agent, self.buffer,
                cfg.env_steps_per_epoch, cfg.collect_epsilon, cfg.collect_temperature,
                generator=None, agent_state=self.collect_state, device=self.device,
            )
            self.counters["env_steps"] += cfg.env_steps_per_epoch
            self._log(epoch, self.counters["env_steps"], "collect/env_steps", cfg.env_steps_per_epoch)
            for ret in returns:
                self._log(epoch, self.counters["env_steps"], "collect/episode_return", ret)
        if epoch >= cfg.start_tokenizer:
            for _ in range(cfg.training_steps_per_epoch):
                self.update_world_model(epoch)
        if epoch >= cfg.start_agent:
            for _ in range(cfg.training_steps_per_epoch):
                self.update_behavior(epoch)
        self._flush()

    def run(self) -> Path:
        cfg = self.config
        while self.epoch < cfg.epochs:
            epoch = self.epoch
            self.run_epoch(epoch)
            self.epoch += 1
            if cfg.checkpoint_every and (self.epoch % cfg.checkpoint_every == 0):
                self.save_checkpoint(self.out_dir / f"checkpoint_ep{self.epoch:04d}.ckpt")
        final = self.out_dir / "checkpoint.ckpt"
        self.save_checkpoint(final)
        self._flush()
        return final

    # --- checkpointing -----------------------------------------------------

    def _named_param_lists(self):
        return {
            "tokenizer": [(n, p) for n, p in self.tokenizer.named_parameters() if p.requires_grad],
            "dynamics": list(self.dynamics.named_parameters()),
            "agent": list(self.agent.named_parameters()),
        }

    def save_checkpoint(self, path: str | Path) -> None:
        self.buffer.save_new_episodes(self.episodes_dir, self.config.env, self.action_count)
        tensors: dict[str, torch.Tensor | np.ndarray] = {}
        tensors.update(module_tensors("tokenizer", self.tokenizer))
        tensors.update(module_tensors("dynamics", self.dynamics))
        tensors.update(module_tensors("agent", self.agent))
        named = self._named_param_lists()
        tensors.update(optimizer_tensors("opt/tokenizer", self.opt_tokenizer, named["tokenizer"]))
        tensors.update(optimizer_tensors("opt/dynamics", self.opt_dynamics, named["dynamics"]))
        tensors.update(optimizer_tensors("opt/agent", self.opt_agent, named["agent"]))
        tensors["rng/torch"] = torch.get_rng_state().numpy()

        open_episode = self.buffer.current is not None
        if open_episode:
            ep = self.buffer.current
            tensors["collector/frames"] = np.stack(ep.frames)
            tensors["collector/actions"] = np.asarray(ep.actions, dtype=np.int64)
            tensors["collector/rewards"] = np.asarray(ep.rewards, dtype=np.float32)
            tensors["collector/dones"] = np.asarray(ep.dones, dtype=np.uint8)
            tensors["collector/agent_h"] = self.collect_state[0]
            tensors["collector/agent_c"] = self.collect_state[1]

        extra = {
            "epoch": self.epoch,
            "counters": dict(self.counters),
            "action_count": self.action_count,
            "env_id": self.config.env,
            "n_episodes": len(self.buffer.episodes),
            "open_episode": open_episode,
            "rng_numpy": self.np_rng.bit_generator.state,
            "env_state": self.env.get_state() if hasattr(self.env, "get_state") else None,
        }
        save_archive(path, tensors, config=to_flat(self.config), extra=extra)

    @classmethod
    def resume(cls, checkpoint_path: str | Path, out_dir: str | Path | None = None,
               device: str = "cpu") -> "Trainer":
        tensors, config_flat, extra = load_archive(checkpoint_path)
        config = from_flat(config_flat)
        if out_dir is None:
            out_dir = Path(checkpoint_path).parent
        trainer = cls(config, out_dir, device=device)

        load_module("tokenizer", trainer.tokenizer, tensors)
        load_module("dynamics", trainer.dynamics, tensors)
        load_module("agent", trainer.agent, tensors)
        named = trainer._named_param_lists()
        load_optimizer("opt/tokenizer", trainer.opt_tokenizer, named["tokenizer"], tensors)
        load_optimizer("opt/dynamics", trainer.opt_dynamics, named["dynamics"], tensors)
        load_optimizer("opt/agent", trainer.opt_agent, named["agent"], tensors)
        torch.set_rng_state(torch.from_numpy(tensors["rng/torch"].copy()))
        trainer.np_rng.bit_generator.state = extra["rng_numpy"]
        if extra["env_state"] is not None and hasattr(trainer.env, "set_state"):
            trainer.env.set_state(extra["env_state"])

        buffer = ReplayBuffer.load_dir(trainer.episodes_dir)
        buffer.episodes = buffer.episodes[: extra["n_episodes"]]
        buffer.saved_count = extra["n_episodes"]
        if extra["open_episode"]:
            frames = tensors["collector/frames"]
            buffer.current = None
            buffer.begin_episode(frames[0])
            for i in range(len(tensors["collector/actions"])):
                buffer.current.append(
                    int(tensors["collector/actions"][i]),
                    float(tensors["collector/rewards"][i]),
                    bool(tensors["collector/dones"][i]),
                    frames[i + 1],
                )
            trainer.collect_state = (
                torch.from_numpy(tensors["collector/agent_h"].copy()),
                torch.from_numpy(tensors["collector/agent_c"].copy()),
            )
        trainer.buffer = buffer
        trainer.epoch = extra["epoch"]
        trainer.counters = dict(extra["counters"])
        return trainer


# --- evaluation and serving helpers ---------------------------------------


@dataclass
class Bundle:
    config: TrainConfig
    tokenizer: FrameTokenizer
    dynamics: DynamicsModel
    agent: ActorCritic
    action_count: int
    env_id: str
    extra: dict
    checkpoint_path: Path


def load_bundle(checkpoint_path: str | Path, device: str = "cpu") -> Bundle:
    tensors, config_flat, extra = load_archive(checkpoint_path)
    config = from_flat(config_flat)
    action_count = extra["action_count"]
    tokenizer, dynamics, agent = build_models(config, action_count)
    load_module("tokenizer", tokenizer, tensors)
    load_module("dynamics", dynamics, tensors)
    load_module("agent", agent, tensors)
    tokenizer.eval()
    dynamics.eval()
    agent.eval()
    return Bundle(
        config=config, tokenizer=tokenizer, dynamics=dynamics, agent=agent,
        action_count=action_count, env_id=extra["env_id"], extra=extra,
        checkpoint_path=Path(checkpoint_path),
    )


@torch.no_grad()
def run_eval(
    tokenizer: FrameTokenizer,
    agent: ActorCritic,
    env,
    episodes: int,
    temperature: float,
    epsilon: float = 0.0,
    generator: torch.Generator | None = None,
    device=None,
) -> list[float]:
    """Play full episodes in the real env, observing through the autoencoder."""
    tokenizer.eval()
    agent.eval()
    returns = []
    for _ in range(episodes):
        frame = env.reset()
        state = agent.initial_state(1, device=device)
        total, done = 0.0, False
        while not done:
            obs = tokenizer.reconstruct(
                frames_to_tensor(np.clip(np.rint(frame * 255), 0, 255).astype(np.uint8)[None],
                                 device=device)
            )
            logits, _, state = agent(obs, state)
            action = int(act(logits[0], temperature, epsilon, generator))
            frame, reward, done = env.step(action)
            total += reward
        returns.append(total)
    return returns


def evaluate_checkpoint(
    checkpoint_path: str | Path,
    episodes: int = 100,
    temperature: float = 0.5,
    seed: int = 0,
    device: str = "cpu",
) -> list[float]:
    bundle = load_bundle(checkpoint_path, device=device)
    env = make_env(bundle.env_id, seed=seed)
    generator = torch.Generator().manual_seed(seed)
    return run_eval(
        bundle.tokenizer, bundle.agent, env, episodes, temperature,
        generator=generator, device=torch.device(device),
    )


@torch.no_grad()
def teacher_forcing_accuracy(
    tokenizer: FrameTokenizer,
    dynamics: DynamicsModel,
    episodes,
    max_transitions: int = 500,
    device=None,
) -> dict[str, float]:
    """Replay real transitions through the dynamics model on ground-truth tokens.

    Each transition is scored from a window of up to L steps ending at it; the
    reward and termination predictions are read at its action position.
    """
    tokenizer.eval()
    dynamics.eval()
    length = dynamics.cfg.timesteps
    hit_r = hit_d = seen = 0
    for ep in episodes:
        if seen >= max_transitions:
            break
        frames = frames_to_tensor(np.stack(ep.frames[: ep.steps]), device=device)
        _, tokens = tokenizer.encode(frames)
        for t in range(ep.steps):
            if seen >= max_transitions:
                break
            lo = max(0, t - length + 1)
            acts = torch.tensor(ep.actions[lo : t + 1], dtype=torch.long, device=device)
            ids, kinds = interleave(tokens[lo : t + 1][None], acts[None])
            out = dynamics(ids, kinds)
            pred_r = int(out.reward[0, -1].argmax())
            pred_d = int(out.termination[0, -1].argmax())
            true_r = int(np.sign(ep.rewards[t])) + 1
            hit_r += int(pred_r == true_r)
            hit_d += int(pred_d == int(ep.dones[t]))
            seen += 1
    return {
        "reward_accuracy": hit_r / max(seen, 1),
        "termination_accuracy": hit_d / max(seen, 1),
        "transitions": seen,
    }


def checkpoint_hash(path: str | Path) -> str:
    import hashlib

    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def frame_to_png_b64(frame01: torch.Tensor) -> str:
    """(3, S, S) float frame in [0,1] -> base64-encoded PNG."""
    import io

    from PIL import Image

    from tokenworld.experience import tensor_to_frames

    u8 = tensor_to_frames(frame01)
    buf = io.BytesIO()
    Image.fromarray(u8).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()
