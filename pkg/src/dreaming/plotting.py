"""Learning-curve plots: evaluation return vs environment steps, with seed replicas of
one configuration grouped into a mean line plus a deviation band."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .config import TrainConfig
from .trainer import read_metrics


def _run_label(cfg: TrainConfig) -> str:
    label = f"{cfg.task}/{cfg.mode}"
    if cfg.mode != "dreamer_recon":
        label += f" K={cfg.overshoot}"
        if cfg.shared_dynamics:
            label += " shared"
    return label


def load_run(run_dir: str | Path) -> tuple[TrainConfig, np.ndarray, np.ndarray]:
    """Return (config, env_steps, eval_returns) for one run directory."""
    run_dir = Path(run_dir)
    metrics_path = run_dir / "metrics.jsonl"
    if not metrics_path.exists():
        raise FileNotFoundError(f"no metrics file in {run_dir}")
    cfg = TrainConfig.load(run_dir / "config.json")
    records = [r for r in read_metrics(metrics_path) if "eval_return" in r]
    steps = np.array([r["env_step"] for r in records], dtype=float)
    rets = np.array([r["eval_return"] for r in records], dtype=float)
    return cfg, steps, rets


def plot_runs(run_dirs: list[str | Path], out_path: str | Path) -> Path:
    """One curve per configuration family; multi-seed families get a shaded band."""
    groups: dict[str, dict] = {}
    for rd in run_dirs:
        cfg, steps, rets = load_run(rd)
        g = groups.setdefault(cfg.family_hash(), {"label": _run_label(cfg), "runs": []})
        g["runs"].append((steps, rets))
    fig, ax = plt.subplots(figsize=(7, 4.5), dpi=120)
    for g in groups.values():
        runs = g["runs"]
        if len(runs) == 1:
            steps, rets = runs[0]
            ax.plot(steps, rets, label=g["label"])
        else:
            grid = sorted({float(s) for steps, _ in runs for s in steps})
            grid = np.asarray(grid)
            curves = np.stack([np.interp(grid, steps, rets) for steps, rets in runs])
            mean, std = curves.mean(0), curves.std(0)
            line, = ax.plot(grid, mean, label=f"{g['label']} ({len(runs)} seeds)")
            ax.fill_between(grid, mean - std, mean + std, alpha=0.25,
                            color=line.get_color(), linewidth=0)
    ax.set_xlabel("environment steps")
    ax.set_ylabel("evaluation return")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(out_path, metadata={"Software": ""})
    plt.close(fig)
    return out_path
