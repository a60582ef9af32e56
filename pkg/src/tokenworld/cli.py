"""Command-line entry points: train, eval, imagine, serve, scores."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def _cmd_train(args) -> int:
    from tokenworld.config import TrainConfig, load_config_file, save_config_file
    from tokenworld.trainer import Trainer

    if args.resume:
        trainer = Trainer.resume(args.resume, out_dir=args.out)
    else:
        config = TrainConfig()
        if args.config:
            config = load_config_file(args.config, base=config)
        if args.env:
            config.env = args.env
        if args.seed is not None:
            config.seed = args.seed
        trainer = Trainer(config, args.out)
        save_config_file(trainer.config, Path(args.out) / "config.used")
    final = trainer.run()
    print(f"final checkpoint: {final}")
    return 0


def _cmd_eval(args) -> int:
    from tokenworld.trainer import evaluate_checkpoint

    returns = evaluate_checkpoint(
        args.checkpoint, episodes=args.episodes, temperature=args.temperature, seed=args.seed
    )
    result = {
        "episodes": len(returns),
        "mean_return": float(np.mean(returns)),
        "returns": returns,
    }
    print(json.dumps(result))
    return 0


def _cmd_imagine(args) -> int:
    import torch

    from tokenworld.envs import make_env
    from tokenworld.experience import ReplayBuffer, quantize_frame, tensor_to_frames
    from tokenworld.imagination import rollout
    from tokenworld.trainer import load_bundle

    bundle = load_bundle(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    if args.episodes_dir and Path(args.episodes_dir).exists():
        buffer = ReplayBuffer.load_dir(args.episodes_dir)
        contexts = buffer.sample_initial_contexts(1, bundle.config.rl.burn_in, rng)
    else:
        env = make_env(bundle.env_id, seed=args.seed)
        frame = quantize_frame(env.reset())
        contexts = [(np.zeros((0, *frame.shape), dtype=np.uint8), np.zeros(0, dtype=np.int64), frame)]

    generators = [torch.Generator().manual_seed(args.seed)]
    traj = rollout(
        bundle.tokenizer, bundle.dynamics, bundle.agent, contexts,
        horizon=max(args.frames - 1, 1), generators=generators,
    )
    from PIL import Image

    frames_u8 = tensor_to_frames(traj.frames[0])
    for i in range(frames_u8.shape[0]):
        Image.fromarray(frames_u8[i]).save(out / f"frame_{i:04d}.png")
    summary = {
        "frames": int(frames_u8.shape[0]),
        "rewards": traj.rewards[0].tolist(),
        "dones": traj.dones[0].tolist(),
        "values": traj.values[0].tolist(),
        "actions": traj.actions[0].tolist(),
    }
    (out / "rollout.json").write_text(json.dumps(summary, indent=2))
    print(f"wrote {frames_u8.shape[0]} frames to {out}")
    return 0


def _cmd_serve(args) -> int:
    from tokenworld.server import serve

    serve(args.checkpoint, port=args.port, host=args.host, episodes_dir=args.episodes_dir)
    return 0


def _cmd_scores(args) -> int:
    from tokenworld import evalkit

    table = evalkit.ScoreTable.from_csv(args.csv)
    if args.resamples > 0:
        report = evalkit.report_with_intervals(
            table, resamples=args.resamples, level=args.level, seed=args.seed
        )
    else:
        report = evalkit.aggregates(table)
    payload = json.dumps(report.to_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(payload)
    print(payload)
    if args.profile_out:
        pooled = np.concatenate(list(table.normalized_runs().values()))
        taus = np.linspace(0.0, max(float(pooled.max()), 1.0) * 1.05, args.profile_points)
        fractions = evalkit.performance_profile(table, taus)
        lines = ["threshold,fraction"]
        lines += [f"{t:.6f},{f:.6f}" for t, f in zip(taus, fractions)]
        Path(args.profile_out).write_text("\n".join(lines) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tokenworld")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the training loop")
    p.add_argument("--config", default=None, help="flat key=value config file")
    p.add_argument("--env", default=None, help="env id (pixelcatch or adapter:<id>)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint in the real env")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--temperature", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("imagine", help="render an imagined rollout as image files")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--out", required=True)
    p.add_argument("--episodes-dir", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_imagine)

    p = sub.add_parser("serve", help="start the dream server")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--episodes-dir", default=None)
    p.set_defaults(fn=_cmd_serve)

    p = sub.add_parser("scores", help="aggregate human-normalized benchmark scores")
    p.add_argument("--csv", required=True, help="columns: game, random, human, run_id, score")
    p.add_argument("--out", default=None, help="write the JSON report here too")
    p.add_argument("--resamples", type=int, default=0, help="bootstrap resamples (0 = point estimates)")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--profile-out", default=None, help="write a performance-profile CSV")
    p.add_argument("--profile-points", type=int, default=101)
    p.set_defaults(fn=_cmd_scores)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
