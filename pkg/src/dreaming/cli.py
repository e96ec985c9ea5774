"""Command line interface.

Subcommands: train, eval, ablate, plot, probe, video. Environment variables
DREAMING_OUTDIR and DREAMING_SEED override the output directory and seed for training
runs (they beat both the config file and the command line).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import PRESETS, ConfigError, TrainConfig


def _parse_override(item: str) -> tuple[str, object]:
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def _resolve_config(args) -> TrainConfig:
    if args.config:
        cfg = TrainConfig.load(args.config)
    else:
        cfg = PRESETS[args.preset]()
    overrides = dict(_parse_override(s) for s in (args.set or []))
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.outdir is not None:
        overrides["outdir"] = str(args.outdir)
    if os.environ.get("DREAMING_SEED"):
        overrides["seed"] = int(os.environ["DREAMING_SEED"])
    if os.environ.get("DREAMING_OUTDIR"):
        overrides["outdir"] = os.environ["DREAMING_OUTDIR"]
    return cfg.replace(**overrides) if overrides else cfg


def cmd_train(args) -> int:
    from .trainer import train

    cfg = _resolve_config(args)
    outdir = train(cfg, cfg.outdir, resume=args.resume)
    summary = json.loads((outdir / "summary.json").read_text())
    print(f"run finished: {outdir}")
    print(f"final eval return: {summary['final_eval_mean']:.1f} "
          f"+- {summary['final_eval_std']:.1f} "
          f"({summary['env_steps']} env steps, {summary['grad_steps']} grad steps)")
    return 0


def cmd_eval(args) -> int:
    from .trainer import evaluate

    mean, std, returns = evaluate(args.ckpt, n_episodes=args.episodes, seed=args.seed)
    print(f"eval over {args.episodes} episodes: {mean:.1f} +- {std:.1f}")
    print("returns:", " ".join(f"{r:.1f}" for r in returns))
    return 0


def cmd_ablate(args) -> int:
    from .ablation import ablate, load_matrix

    if args.config:
        base = TrainConfig.load(args.config)
    else:
        base = PRESETS[args.preset]()
    matrix = load_matrix(args.matrix) if args.matrix else dict()
    if not matrix:
        from .ablation import DEFAULT_MATRIX
        matrix = dict(DEFAULT_MATRIX)
    outdir = Path(os.environ.get("DREAMING_OUTDIR", args.outdir))
    table = ablate(base, matrix, outdir)
    print((outdir / "table.txt").read_text())
    print(f"results: {outdir / 'results.json'} ({len(table['cells'])} cells)")
    return 0


def cmd_plot(args) -> int:
    from .plotting import plot_runs

    out = plot_runs(args.rundirs, args.out)
    print(f"wrote {out}")
    return 0


def cmd_probe(args) -> int:
    from .diagnostics import probe_checkpoint

    report = probe_checkpoint(args.ckpt, n_episodes=args.episodes, seed=args.seed,
                              task=args.task)
    names = ["agent_x", "agent_y", "agent_vx", "agent_vy", "target_x", "target_y"]
    print(f"linear probe ({report.n_samples} samples, source={report.latent_source}):")
    for name, r2 in zip(names, report.r2):
        print(f"  {name:<10} R^2 = {r2:+.4f}")
    print(f"  target position mean R^2 = {report.r2[4:6].mean():+.4f}")
    return 0


def cmd_video(args) -> int:
    from .agent import Agent
    from .diagnostics import open_loop_video, save_video, train_probe_decoder
    from .replay import load_episode

    agent, _ = Agent.load(args.ckpt)
    episode = load_episode(args.episode)
    decoder = train_probe_decoder(agent, [episode], steps=args.decoder_steps,
                                  seed=args.seed)
    frames = open_loop_video(agent, decoder, episode, context=args.context,
                             horizon=args.horizon, seed=args.seed)
    gif = save_video(frames, args.out, name="open_loop")
    print(f"wrote {len(frames)} frames and {gif}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dreaming",
                               description="decoder-free latent world-model RL on "
                                           "built-in pixel tasks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one training job")
    p.add_argument("--config", type=Path, help="config JSON path")
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.add_argument("--seed", type=int)
    p.add_argument("--outdir", type=Path)
    p.add_argument("--resume", type=Path, help="checkpoint to resume from")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config field")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the ablation matrix")
    p.add_argument("--config", type=Path)
    p.add_argument("--preset", choices=sorted(PRESETS), default="smoke")
    p.add_argument("--matrix", type=Path, help="matrix JSON (defaults to full grid)")
    p.add_argument("--outdir", type=Path, default=Path("runs/ablation"))
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("plot", help="plot learning curves for run directories")
    p.add_argument("rundirs", nargs="+", type=Path)
    p.add_argument("--out", type=Path, default=Path("curves.png"))
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("probe", help="linear-probe a checkpoint's latents")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--task", choices=["dot_reach", "dot_catch"],
                   help="probe on a different task (default: the checkpoint's)")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("video", help="open-loop video prediction from a checkpoint")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--episode", type=Path, required=True, help="saved episode .npz")
    p.add_argument("--horizon", type=int, default=20)
    p.add_argument("--context", type=int, default=5)
    p.add_argument("--decoder-steps", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("video_out"))
    p.set_defaults(func=cmd_video)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
