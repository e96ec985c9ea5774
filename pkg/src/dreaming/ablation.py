"""Ablation matrix runner: {dynamics} x {crop, jitter} x {overshoot distance K}, one
training run per cell per seed, emitting a machine-readable results file and a formatted
text table."""

from __future__ import annotations

import itertools
import json
from pathlib import Path

import numpy as np

from .config import ConfigError, TrainConfig
from .trainer import train

DEFAULT_MATRIX = {
    "dynamics": ["linear", "shared"],
    "crop": [True, False],
    "jitter": [False, True],
    "overshoot": [1, 3, 5, 7],
    "seeds": [0],
}


def load_matrix(path: str | Path) -> dict:
    matrix = dict(DEFAULT_MATRIX)
    matrix.update(json.loads(Path(path).read_text()))
    unknown = set(matrix) - set(DEFAULT_MATRIX) - {"grad_steps"}
    if unknown:
        raise ConfigError(f"unknown matrix keys: {sorted(unknown)}")
    for dyn in matrix["dynamics"]:
        if dyn not in ("linear", "shared"):
            raise ConfigError(f"dynamics must be linear|shared, got {dyn!r}")
    return matrix


def cell_name(dynamics: str, crop: bool, jitter: bool, overshoot: int) -> str:
    aug = ("crop" if crop else "nocrop") + ("+jitter" if jitter else "")
    return f"{dynamics}_{aug}_K{overshoot}"


def ablate(base: TrainConfig, matrix: dict, outdir: str | Path) -> dict:
    """Run every cell of the matrix and collect final evaluation returns."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    grad_steps = int(matrix.get("grad_steps", base.total_grad_steps or 0))
    results = []
    cells = list(itertools.product(matrix["dynamics"], matrix["crop"], matrix["jitter"],
                                   matrix["overshoot"]))
    for dynamics, crop, jitter, overshoot in cells:
        for seed in matrix["seeds"]:
            name = cell_name(dynamics, crop, jitter, overshoot)
            run_dir = outdir / name / f"seed{seed}"
            cfg = base.replace(
                mode="dreaming", shared_dynamics=(dynamics == "shared"), crop=crop,
                jitter=jitter, overshoot=overshoot, seed=seed,
                total_grad_steps=grad_steps or base.total_grad_steps,
                outdir=str(run_dir))
            train(cfg, run_dir)
            summary = json.loads((run_dir / "summary.json").read_text())
            results.append({
                "dynamics": dynamics, "crop": crop, "jitter": jitter,
                "overshoot": overshoot, "seed": seed,
                "return_mean": summary["final_eval_mean"],
                "return_std": summary["final_eval_std"],
                "run_dir": str(run_dir),
            })
    table = {"task": base.task, "grad_steps_per_cell": grad_steps, "cells": results}
    (outdir / "results.json").write_text(json.dumps(table, indent=2) + "\n")
    (outdir / "table.txt").write_text(format_table(table))
    return table


def _cell_stats(cells: list[dict]) -> str:
    means = [c["return_mean"] for c in cells]
    return f"{np.mean(means):7.1f} +- {np.std(means):5.1f}" if means else "   n/a"


def format_table(table: dict) -> str:
    """Flat per-cell grid plus one marginal section per ablation factor."""
    cells = table["cells"]
    lines = [f"task: {table['task']}   budget: {table['grad_steps_per_cell']} grad steps/cell",
             "", f"{'cell':<28}{'seeds':>6}{'return':>18}", "-" * 52]
    seen = {}
    for c in cells:
        key = cell_name(c["dynamics"], c["crop"], c["jitter"], c["overshoot"])
        seen.setdefault(key, []).append(c)
    for key, group in seen.items():
        lines.append(f"{key:<28}{len(group):>6}{_cell_stats(group):>18}")

    def marginal(title: str, keyfn) -> None:
        lines.extend(["", title, "-" * len(title)])
        values = sorted({keyfn(c) for c in cells}, key=str)
        for v in values:
            group = [c for c in cells if keyfn(c) == v]
            lines.append(f"{str(v):<28}{_cell_stats(group):>24}")

    marginal("dynamics (linear vs shared)", lambda c: c["dynamics"])
    marginal("augmentation (crop/jitter)",
             lambda c: ("crop" if c["crop"] else "nocrop") + ("+jitter" if c["jitter"] else ""))
    marginal("overshooting distance K", lambda c: c["overshoot"])
    return "\n".join(lines) + "\n"
