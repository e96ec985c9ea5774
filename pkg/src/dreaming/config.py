"""Run configuration: every hyperparameter and mode switch, presets, and disk round-trip.

A config is a flat dataclass. It is persisted verbatim as JSON next to every run, and a
hash of it is embedded in checkpoints so that resuming with a different setup is refused.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

MODES = ("dreaming", "dreamer_recon", "plain_nce")
TASKS = ("dot_reach", "dot_catch")
BACKGROUNDS = ("plain", "checker")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass
class TrainConfig:
    # task
    task: str = "dot_reach"
    target_radius_px: int = 2
    background: str = "plain"
    episode_len: int = 200          # control steps per episode
    action_repeat: int = 2          # physics substeps per control step (env frames each)

    # objective mode
    mode: str = "dreaming"          # dreaming | dreamer_recon | plain_nce
    overshoot: int = 3              # K, prediction/overshooting distance
    crop: bool = True               # random-crop augmentation (two independent branches)
    jitter: bool = False            # color-jitter augmentation (ablation only)
    jitter_strength: float = 1.0
    shared_dynamics: bool = False   # ablation: contrastive branch reuses the GRU prior

    # model dimensions
    deter_dim: int = 200            # recurrent state h
    stoch_dim: int = 30             # stochastic state s
    embed_dim: int = 1024           # CNN embedding e
    hidden_dim: int = 200           # dense layers inside the recurrent model
    head_dim: int = 300             # reward/actor/critic MLP width
    head_layers: int = 2
    conv_base: int = 32             # encoder channel progression base*(1,2,4,8)
    min_std: float = 0.1
    free_nats: float = 3.0

    # behavior learning
    horizon: int = 15
    discount: float = 0.99
    return_lambda: float = 0.95
    explore_noise: float = 0.3
    random_episode_frac: float = 0.25  # fraction of collection episodes w/ random actions

    # replay
    capacity: int = 100_000         # total stored steps
    batch_size: int = 50
    seq_len: int = 50
    prefill_episodes: int = 5

    # optimization
    model_lr: float = 6e-4
    actor_lr: float = 8e-5
    critic_lr: float = 8e-5
    grad_clip: float = 100.0

    # schedule
    total_env_steps: int = 100_000
    total_grad_steps: int = 0       # 0 = unlimited, otherwise hard stop (smoke runs)
    train_steps_per_episode: int = 100
    eval_every_episodes: int = 10
    eval_episodes: int = 10
    checkpoint_every_episodes: int = 25

    # run identity
    seed: int = 0
    outdir: str = "runs/run"
    deterministic: bool = True      # single-threaded torch, fully seeded streams

    # -- validation ---------------------------------------------------------

    def validate(self) -> "TrainConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.background not in BACKGROUNDS:
            raise ConfigError(f"background must be one of {BACKGROUNDS}")
        if self.target_radius_px not in (1, 2, 3):
            raise ConfigError("target_radius_px must be 1, 2, or 3")
        if self.overshoot < 1:
            raise ConfigError("overshoot distance must be >= 1")
        if self.seq_len < self.overshoot + 1:
            raise ConfigError(
                f"seq_len must be >= overshoot+1 ({self.overshoot + 1}), got {self.seq_len}"
            )
        if self.horizon < 1:
            raise ConfigError("imagination horizon must be >= 1")
        if not 0.0 <= self.return_lambda <= 1.0:
            raise ConfigError("return_lambda must lie in [0, 1]")
        if not 0.0 <= self.random_episode_frac <= 1.0:
            raise ConfigError("random_episode_frac must lie in [0, 1]")
        if not 0.0 < self.discount <= 1.0:
            raise ConfigError("discount must lie in (0, 1]")
        for name in ("deter_dim", "stoch_dim", "embed_dim", "hidden_dim", "head_dim",
                     "conv_base", "batch_size", "episode_len", "capacity"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.min_std <= 0:
            raise ConfigError("min_std must be positive")
        if self.shared_dynamics and self.mode != "dreaming":
            raise ConfigError("shared_dynamics is an ablation of dreaming mode only")
        return self

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data).validate()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def replace(self, **kwargs) -> "TrainConfig":
        return dataclasses.replace(self, **kwargs).validate()

    # -- identity -----------------------------------------------------------

    def config_hash(self) -> str:
        """Hash of everything that defines the run, ignoring where it is written."""
        payload = {k: v for k, v in self.to_dict().items() if k != "outdir"}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]

    def family_hash(self) -> str:
        """Hash ignoring seed and outdir; groups seed replicas of one setup for plots."""
        payload = {k: v for k, v in self.to_dict().items() if k not in ("outdir", "seed")}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]

    # -- presets ------------------------------------------------------------

    @classmethod
    def full(cls, **overrides) -> "TrainConfig":
        """Full-scale defaults (GPU-class budgets)."""
        return cls().replace(**overrides)

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Small preset that trains on a laptop-class CPU in tens of minutes.

        free_nats shrinks with the latent width: the 3.0 convention is calibrated for
        30-dim stochastic states, and at 16 dims it would swallow the whole KL and
        leave the prior untrained.
        """
        cfg = cls(
            deter_dim=64, stoch_dim=16, embed_dim=128, hidden_dim=128,
            head_dim=128, head_layers=2, conv_base=8, free_nats=0.5,
            batch_size=8, seq_len=16, capacity=40_000,
            total_env_steps=30_000, train_steps_per_episode=100,
            eval_every_episodes=10, checkpoint_every_episodes=25,
        )
        return cfg.replace(**overrides)

    @classmethod
    def smoke(cls, **overrides) -> "TrainConfig":
        """Very small preset for smoke runs and the ablation matrix at smoke scale."""
        cfg = cls(
            deter_dim=32, stoch_dim=8, embed_dim=32, hidden_dim=32,
            head_dim=32, head_layers=1, conv_base=4, free_nats=0.5,
            batch_size=4, seq_len=10, capacity=20_000,
            episode_len=100, horizon=8,
            total_env_steps=100_000, total_grad_steps=500,
            train_steps_per_episode=50, prefill_episodes=2,
            eval_every_episodes=5, eval_episodes=3, checkpoint_every_episodes=10,
        )
        return cfg.replace(**overrides)


PRESETS = {"full": TrainConfig.full, "desk": TrainConfig.desk, "smoke": TrainConfig.smoke}
