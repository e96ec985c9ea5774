"""Built-in synthetic pixel tasks: a damped point mass that must reach (or sit on) a
target whose rendered disc is only a few pixels wide, so that reward-relevant objects
occupy well under a percent of the image.

Frames are 72x72x3 uint8, rendered deterministically from a snap-to-pixel rasterizer;
rewards come from a DMC-style tolerance() band with a long-tail falloff. Each control
step integrates `action_repeat` physics substeps (one frame per control step), and the
env-step counter advances by `action_repeat` so budgets count raw frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError, TrainConfig

IMAGE_SIZE = 72
ACTION_DIM = 2
GROUND_TRUTH_DIM = 6  # agent xy, agent velocity xy, target xy

AGENT_RADIUS_PX = 4
ARENA_LOW, ARENA_HIGH = -1.0, 1.0
SPAWN_LIMIT = 0.8  # discs spawn away from walls

BACKGROUND_PLAIN = np.array([60, 60, 70], dtype=np.uint8)
BACKGROUND_CHECKER = np.array([96, 96, 106], dtype=np.uint8)
CHECKER_TILE = 12
AGENT_COLOR = np.array([80, 150, 240], dtype=np.uint8)
TARGET_COLOR = np.array([240, 70, 60], dtype=np.uint8)


class EpisodeOverError(RuntimeError):
    """step() was called after the episode already terminated."""


def tolerance(x, bounds: tuple[float, float] = (0.0, 0.04), margin: float = 0.0,
              value_at_margin: float = 0.1):
    """Reward 1 inside [low, high]; outside, a long-tail falloff of the normalized
    distance d to the nearest bound that equals value_at_margin at d = 1.

    margin=0 degenerates to a hard indicator. Works on scalars and arrays.
    """
    low, high = bounds
    if low > high:
        raise ConfigError(f"invalid bounds {bounds}: low > high")
    if margin < 0:
        raise ConfigError("margin must be >= 0")
    if not 0.0 < value_at_margin < 1.0:
        raise ConfigError("value_at_margin must lie in (0, 1)")
    x = np.asarray(x, dtype=np.float64)
    in_bounds = (x >= low) & (x <= high)
    if margin == 0:
        out = in_bounds.astype(np.float64)
    else:
        d = np.where(x < low, low - x, np.where(x > high, x - high, 0.0)) / margin
        scale = np.sqrt(1.0 / value_at_margin - 1.0)
        out = np.where(in_bounds, 1.0, 1.0 / (1.0 + (d * scale) ** 2))
    return float(out) if out.ndim == 0 else out


@dataclass
class EnvStep:
    image: np.ndarray           # (72, 72, 3) uint8
    reward: float               # in [0, 1]
    terminal: bool
    ground_truth: np.ndarray    # (6,) float64, probes only, never fed to the agent


@dataclass
class DotTaskConfig:
    task: str = "dot_reach"
    target_radius_px: int = 2
    background: str = "plain"
    episode_len: int = 200
    action_repeat: int = 2
    # physics (per substep)
    dt: float = 0.1
    accel: float = 2.0
    damping: float = 2.0
    # reward
    goal_radius: float = 0.15
    margin: float = 0.5
    value_at_margin: float = 0.1

    @classmethod
    def from_train_config(cls, cfg: TrainConfig) -> "DotTaskConfig":
        margin = 0.5 if cfg.task == "dot_reach" else 0.0
        return cls(task=cfg.task, target_radius_px=cfg.target_radius_px,
                   background=cfg.background, episode_len=cfg.episode_len,
                   action_repeat=cfg.action_repeat, goal_radius=0.15, margin=margin)


def _to_pixel(pos: np.ndarray) -> np.ndarray:
    """Arena coordinates [-1, 1] -> integer pixel centers [0, 71] (snap to grid)."""
    return np.rint((pos - ARENA_LOW) / (ARENA_HIGH - ARENA_LOW) * (IMAGE_SIZE - 1)).astype(int)


def _draw_disc(img: np.ndarray, center_px: np.ndarray, radius: int, color: np.ndarray) -> None:
    cx, cy = int(center_px[0]), int(center_px[1])
    lo_r, hi_r = max(0, cy - radius), min(IMAGE_SIZE - 1, cy + radius)
    lo_c, hi_c = max(0, cx - radius), min(IMAGE_SIZE - 1, cx + radius)
    rows = np.arange(lo_r, hi_r + 1)
    cols = np.arange(lo_c, hi_c + 1)
    mask = ((rows[:, None] - cy) ** 2 + (cols[None, :] - cx) ** 2) <= radius ** 2
    img[lo_r:hi_r + 1, lo_c:hi_c + 1][mask] = color


def render_frame(agent_pos: np.ndarray, target_pos: np.ndarray, target_radius_px: int,
                 background: str = "plain") -> np.ndarray:
    """Pure rasterizer: background, target disc, agent disc (agent occludes target)."""
    img = np.empty((IMAGE_SIZE, IMAGE_SIZE, 3), dtype=np.uint8)
    img[:] = BACKGROUND_PLAIN
    if background == "checker":
        idx = np.add.outer(np.arange(IMAGE_SIZE) // CHECKER_TILE,
                           np.arange(IMAGE_SIZE) // CHECKER_TILE) % 2
        img[idx == 1] = BACKGROUND_CHECKER
    _draw_disc(img, _to_pixel(target_pos), target_radius_px, TARGET_COLOR)
    _draw_disc(img, _to_pixel(agent_pos), AGENT_RADIUS_PX, AGENT_COLOR)
    return img


@dataclass
class DotState:
    agent_pos: np.ndarray
    agent_vel: np.ndarray
    target_pos: np.ndarray
    step_count: int = 0


class DotEnv:
    """Damped double-integrator point mass with a randomly placed per-episode target."""

    action_dim = ACTION_DIM

    def __init__(self, cfg: DotTaskConfig, seed: int = 0):
        self.cfg = cfg
        self._rng = np.random.default_rng(seed)
        self._state: DotState | None = None
        self._done = True
        self.env_steps = 0  # raw frames, advances by action_repeat per control step

    @property
    def state(self) -> DotState:
        if self._state is None:
            raise RuntimeError("reset() the environment first")
        return self._state

    def _ground_truth(self) -> np.ndarray:
        s = self.state
        return np.concatenate([s.agent_pos, s.agent_vel, s.target_pos]).astype(np.float64)

    def _reward(self) -> float:
        dist = float(np.linalg.norm(self.state.agent_pos - self.state.target_pos))
        return tolerance(dist, bounds=(0.0, self.cfg.goal_radius), margin=self.cfg.margin,
                         value_at_margin=self.cfg.value_at_margin)

    def _observe(self, reward: float) -> EnvStep:
        img = render_frame(self.state.agent_pos, self.state.target_pos,
                           self.cfg.target_radius_px, self.cfg.background)
        return EnvStep(img, reward, self._done, self._ground_truth())

    def reset(self, seed: int | None = None) -> EnvStep:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self._state = DotState(
            agent_pos=self._rng.uniform(-SPAWN_LIMIT, SPAWN_LIMIT, size=2),
            agent_vel=np.zeros(2),
            target_pos=self._rng.uniform(-SPAWN_LIMIT, SPAWN_LIMIT, size=2),
        )
        self._done = False
        return self._observe(0.0)

    def step(self, action: np.ndarray) -> EnvStep:
        if self._done:
            raise EpisodeOverError("episode is over; call reset()")
        action = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        s = self.state
        for _ in range(self.cfg.action_repeat):
            s.agent_vel = s.agent_vel + self.cfg.dt * (
                self.cfg.accel * action - self.cfg.damping * s.agent_vel)
            s.agent_pos = s.agent_pos + self.cfg.dt * s.agent_vel
            hit = (s.agent_pos < ARENA_LOW) | (s.agent_pos > ARENA_HIGH)
            s.agent_pos = np.clip(s.agent_pos, ARENA_LOW, ARENA_HIGH)
            s.agent_vel[hit] = 0.0
        s.step_count += 1
        self.env_steps += self.cfg.action_repeat
        self._done = s.step_count >= self.cfg.episode_len
        return self._observe(self._reward())


def make_env(cfg: TrainConfig, seed: int = 0) -> DotEnv:
    return DotEnv(DotTaskConfig.from_train_config(cfg), seed=seed)
