"""Shared helpers for the acceptance suite.

The learning-analog and ablation-matrix criteria need real training runs that take tens
of minutes each on a small CPU. Runs live under acceptance_runs/ at the repo root; a
finished run whose config hash and budget match is reused, anything else is (re)trained
through the ordinary trainer entry point.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from dreaming.config import TrainConfig

REPO_ROOT = Path(__file__).resolve().parents[1]
RUNS_ROOT = Path(os.environ.get("DREAMING_ACCEPT_RUNS", REPO_ROOT / "acceptance_runs"))

ACCEPT_SEEDS = (0, 1, 2)
ACCEPT_MODES = ("dreaming", "dreamer_recon")
ACCEPT_ENV_STEPS = 30_000


def accept_config(mode: str, seed: int) -> TrainConfig:
    """The canonical desk-scale config for the learning-analog criterion."""
    return TrainConfig.desk(mode=mode, seed=seed, total_env_steps=ACCEPT_ENV_STEPS)


def run_dir_for(mode: str, seed: int) -> Path:
    return RUNS_ROOT / "c8" / f"{mode}_seed{seed}"


def run_is_complete(run_dir: Path, cfg: TrainConfig) -> bool:
    summary_path = run_dir / "summary.json"
    config_path = run_dir / "config.json"
    ckpt_path = run_dir / "checkpoint" / "agent.pt"
    if not (summary_path.exists() and config_path.exists() and ckpt_path.exists()):
        return False
    stored = TrainConfig.load(config_path)
    summary = json.loads(summary_path.read_text())
    return (stored.config_hash() == cfg.config_hash()
            and summary["env_steps"] >= cfg.total_env_steps)


def ensure_run(mode: str, seed: int) -> Path:
    """Return a finished run directory for (mode, seed), training it if needed."""
    from dreaming.trainer import train

    cfg = accept_config(mode, seed)
    run_dir = run_dir_for(mode, seed)
    if run_is_complete(run_dir, cfg):
        return run_dir
    return train(cfg.replace(outdir=str(run_dir)), run_dir)


def ablation_outdir() -> Path:
    return RUNS_ROOT / "c9"


def ablation_base_config() -> TrainConfig:
    return TrainConfig.smoke(total_grad_steps=500)


def ablation_matrix() -> dict:
    return {
        "dynamics": ["linear", "shared"],
        "crop": [True, False],
        "jitter": [False, True],
        "overshoot": [1, 3, 5, 7],
        "seeds": [0],
        "grad_steps": 500,
    }


def ensure_ablation() -> Path:
    """Return the completed ablation-matrix directory, running the matrix if needed."""
    from dreaming.ablation import ablate

    outdir = ablation_outdir()
    results = outdir / "results.json"
    if results.exists():
        table = json.loads(results.read_text())
        if len(table.get("cells", [])) == 32 and table.get("grad_steps_per_cell") == 500:
            return outdir
    ablate(ablation_base_config(), ablation_matrix(), outdir)
    return outdir
