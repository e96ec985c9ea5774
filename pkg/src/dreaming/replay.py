"""Episodic replay: whole trajectories in, fixed-length subsequences out.

Episodes store raw uint8 frames at 72x72 plus aligned actions/rewards/terminals; index t
carries the action taken AFTER observing frame t (the final slot holds zeros) and the
reward received WITH frame t (zero at t=0). Sampling normalizes pixels to [-0.5, 0.5]
and never crosses an episode boundary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class BufferNotReady(RuntimeError):
    """No stored episode is long enough to sample from yet."""


@dataclass
class Episode:
    images: np.ndarray      # (L, 72, 72, 3) uint8
    actions: np.ndarray     # (L, A) float32
    rewards: np.ndarray     # (L,) float32
    terminals: np.ndarray   # (L,) bool
    ground_truth: np.ndarray | None = None  # (L, G) float64, probes only
    task: str = ""
    seed: int = -1

    def __post_init__(self):
        L = len(self.images)
        if not (len(self.actions) == len(self.rewards) == len(self.terminals) == L):
            raise ValueError("episode arrays must share their leading length")
        if self.images.dtype != np.uint8:
            raise ValueError("episode images must be uint8")

    def __len__(self) -> int:
        return len(self.images)


@dataclass
class SequenceBatch:
    """Time-major-fields batch: images (B,T,H,W,C) in [-0.5, 0.5], actions (B,T,A),
    rewards (B,T), discounts (B,T) in {0, gamma}."""

    images: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    discounts: np.ndarray


def normalize_images(images: np.ndarray) -> np.ndarray:
    """uint8 pixels -> float32 in [-0.5, 0.5]."""
    return images.astype(np.float32) / 255.0 - 0.5


class EpisodeStore:
    """FIFO whole-episode buffer bounded by total stored steps."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.episodes: list[Episode] = []
        self.total_steps = 0

    def add_episode(self, episode: Episode) -> None:
        if len(episode) > self.capacity:
            raise ValueError("episode longer than buffer capacity")
        for arr in (episode.images, episode.actions, episode.rewards, episode.terminals):
            arr.setflags(write=False)  # stored episodes are immutable
        self.episodes.append(episode)
        self.total_steps += len(episode)
        while self.total_steps > self.capacity:
            evicted = self.episodes.pop(0)
            self.total_steps -= len(evicted)

    def sample_batch(self, batch_size: int, seq_len: int, rng: np.random.Generator,
                     discount: float = 0.99) -> SequenceBatch:
        eligible = [ep for ep in self.episodes if len(ep) >= seq_len]
        if not eligible:
            raise BufferNotReady(
                f"no stored episode has length >= {seq_len} (stored: {len(self.episodes)})")
        images, actions, rewards, discounts = [], [], [], []
        for _ in range(batch_size):
            ep = eligible[int(rng.integers(len(eligible)))]
            off = int(rng.integers(len(ep) - seq_len + 1))
            sl = slice(off, off + seq_len)
            images.append(normalize_images(ep.images[sl]))
            actions.append(ep.actions[sl].astype(np.float32))
            rewards.append(ep.rewards[sl].astype(np.float32))
            discounts.append((discount * (1.0 - ep.terminals[sl])).astype(np.float32))
        return SequenceBatch(np.stack(images), np.stack(actions), np.stack(rewards),
                             np.stack(discounts))


# -- on-disk episode archive ------------------------------------------------------


def save_episode(episode: Episode, directory: str | Path, name: str) -> Path:
    """One .npz of raw arrays plus a sidecar .json header per episode."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{name}.npz"
    arrays = dict(images=episode.images, actions=episode.actions,
                  rewards=episode.rewards, terminals=episode.terminals)
    if episode.ground_truth is not None:
        arrays["ground_truth"] = episode.ground_truth
    np.savez_compressed(path, **arrays)
    header = {"length": len(episode), "task": episode.task, "seed": episode.seed}
    (directory / f"{name}.json").write_text(json.dumps(header, indent=2) + "\n")
    return path


def load_episode(path: str | Path) -> Episode:
    path = Path(path)
    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files}
    header_path = path.with_suffix(".json")
    header = json.loads(header_path.read_text()) if header_path.exists() else {}
    return Episode(images=arrays["images"], actions=arrays["actions"],
                   rewards=arrays["rewards"], terminals=arrays["terminals"],
                   ground_truth=arrays.get("ground_truth"),
                   task=header.get("task", ""), seed=header.get("seed", -1))
