"""Behavior learning on imagined latent rollouts: tanh-Gaussian actor, value critic,
lambda-return targets, and the actor/critic losses.

Imagination consumes only latent states and the GRU prior; it never sees images and it
never touches the contrastive branch's linear dynamics. Start states must be detached
from the model-learning graph; parameter updates stay inside the actor/critic optimizers
even though pathwise gradients flow through the frozen dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ConfigError, TrainConfig
from .world_model import LatentState, WorldModel, sample_gaussian
from .nets import mlp


class Actor(nn.Module):
    """Squashed-Gaussian policy head over latent features.

    The pre-squash mean is bounded by mean_scale * tanh(raw / mean_scale) and the std
    starts high, so early imagination explores the action box instead of pinning
    tanh outputs at +-1 where gradients die.
    """

    def __init__(self, feature_dim: int, action_dim: int, hidden: int, layers: int,
                 init_std: float = 5.0, min_std: float = 1e-4, mean_scale: float = 5.0):
        super().__init__()
        self.action_dim = action_dim
        self.net = mlp(feature_dim, hidden, layers, 2 * action_dim)
        self.raw_init = float(torch.log(torch.expm1(torch.tensor(init_std))))
        self.min_std = min_std
        self.mean_scale = mean_scale

    def params(self, feature: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        mean, raw_std = self.net(feature).chunk(2, dim=-1)
        mean = self.mean_scale * torch.tanh(mean / self.mean_scale)
        return mean, F.softplus(raw_std + self.raw_init) + self.min_std

    def sample(self, feature: torch.Tensor, generator: torch.Generator | None = None,
               ) -> torch.Tensor:
        """Reparameterized action tanh(mean + std * eps), inside (-1, 1)."""
        mean, std = self.params(feature)
        eps = torch.randn(mean.shape, generator=generator, dtype=mean.dtype,
                          device=mean.device)
        return torch.tanh(mean + std * eps)

    def mode(self, feature: torch.Tensor) -> torch.Tensor:
        mean, _ = self.params(feature)
        return torch.tanh(mean)


class Critic(nn.Module):
    def __init__(self, feature_dim: int, hidden: int, layers: int):
        super().__init__()
        self.net = mlp(feature_dim, hidden, layers, 1)

    def forward(self, feature: torch.Tensor) -> torch.Tensor:
        return self.net(feature).squeeze(-1)


@dataclass
class ImaginedTrajectory:
    """H steps imagined from N start states; index 0 is the first imagined step."""

    latents: LatentState            # (H, N, ...)
    actions: torch.Tensor           # (H, N, A), action that produced each state
    rewards: torch.Tensor           # (H, N), predicted at each imagined state
    values: torch.Tensor            # (H, N), critic at each imagined state
    discounts: torch.Tensor         # (H, N)


def imagine(model: WorldModel, actor: Actor, critic: Critic, start: LatentState,
            horizon: int, discount: float, generator: torch.Generator | None = None,
            ) -> ImaginedTrajectory:
    """Open-loop rollout of the GRU prior under the actor, from detached start states."""
    if horizon < 1:
        raise ConfigError("imagination horizon must be >= 1")
    state = start.detach()
    states, actions = [], []
    for _ in range(horizon):
        action = actor.sample(state.feature(), generator=generator)
        h, prior = model.prior_step(state, action)
        s = sample_gaussian(prior, generator)
        state = LatentState(h, s, prior.mean, prior.std)
        states.append(state)
        actions.append(action)
    latents = LatentState(*[torch.stack([getattr(s, f) for s in states])
                            for f in ("h", "s_sample", "s_mean", "s_std")])
    feats = latents.feature()
    # reward head is supervised on mean features; evaluate it on the same kind here
    rewards = model.reward_mean(latents.mean_feature())
    values = critic(feats)
    discounts = torch.full_like(rewards, discount)
    return ImaginedTrajectory(latents, torch.stack(actions), rewards, values, discounts)


def lambda_returns(rewards: torch.Tensor, values: torch.Tensor, discounts: torch.Tensor,
                   lam: float) -> torch.Tensor:
    """Backward-recursion lambda targets.

    rewards/discounts are (L, N); values is (L+1, N) whose final row is the terminal
    bootstrap: V(tau) = r_tau + d_tau * ((1-lam) * v_{tau+1} + lam * V(tau+1)),
    V(L) = v_L.
    """
    if not 0.0 <= lam <= 1.0:
        raise ConfigError("lambda must lie in [0, 1]")
    if values.shape[0] != rewards.shape[0] + 1:
        raise ValueError("values must have one more row (the bootstrap) than rewards")
    out = []
    target = values[-1]
    for t in range(rewards.shape[0] - 1, -1, -1):
        target = rewards[t] + discounts[t] * ((1.0 - lam) * values[t + 1] + lam * target)
        out.append(target)
    return torch.stack(out[::-1])


def actor_loss(targets: torch.Tensor) -> torch.Tensor:
    """Maximize mean lambda returns through the dynamics pathwise derivative."""
    return -targets.mean()


def critic_loss(critic: Critic, features: torch.Tensor, targets: torch.Tensor,
                ) -> torch.Tensor:
    """Squared-error regression of values onto stop-gradient targets."""
    return 0.5 * ((critic(features.detach()) - targets.detach()) ** 2).mean()


# Task contract: tolerance rewards live in [0, 1], so any true value lies in
# [0, 1/(1-gamma)]. Clamping imagined rewards and targets to that feasible range keeps
# the critic's bootstrap from amplifying its own off-manifold extrapolations.
REWARD_RANGE = (0.0, 1.0)


def behavior_losses(model: WorldModel, actor: Actor, critic: Critic, start: LatentState,
                    cfg: TrainConfig, generator: torch.Generator | None = None,
                    ) -> tuple[torch.Tensor, torch.Tensor, dict]:
    """One imagination rollout and both losses; needs horizon >= 2 for a return window."""
    traj = imagine(model, actor, critic, start, cfg.horizon, cfg.discount, generator)
    rewards = traj.rewards.clamp(*REWARD_RANGE)
    targets = lambda_returns(rewards[:-1], traj.values, traj.discounts[:-1],
                             cfg.return_lambda)
    horizon_gain = 1.0 / max(1.0 - cfg.discount, 1e-6)
    targets = targets.clamp(REWARD_RANGE[0] * horizon_gain, REWARD_RANGE[1] * horizon_gain)
    a_loss = actor_loss(targets)
    c_loss = critic_loss(critic, traj.latents.feature()[:-1], targets)
    metrics = {
        "actor_loss": float(a_loss.detach()),
        "critic_loss": float(c_loss.detach()),
        "mean_value": float(traj.values.mean().detach()),
        "mean_imagined_reward": float(traj.rewards.mean().detach()),
    }
    return a_loss, c_loss, metrics


def act(actor: Actor, feature: torch.Tensor, explore: bool, explore_noise: float = 0.3,
        generator: torch.Generator | None = None) -> torch.Tensor:
    """Action for environment interaction.

    explore=False returns the squashed mode. explore=True draws from the policy (whose
    std anneals as training sharpens it) and adds N(0, explore_noise^2) noise, both
    before the tanh squash, so actions stay in (-1, 1).
    """
    mean, std = actor.params(feature)
    if explore:
        draw = lambda: torch.randn(mean.shape, generator=generator, dtype=mean.dtype,
                                   device=mean.device)
        mean = mean + std * draw() + explore_noise * draw()
    return torch.tanh(mean)
