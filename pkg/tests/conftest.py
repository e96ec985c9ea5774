"""Shared fixtures: tiny double-precision models for oracle and gradient checks."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from dreaming.agent import Agent
from dreaming.config import TrainConfig

torch.set_num_threads(1)


def tiny_config(**overrides) -> TrainConfig:
    base = dict(
        deter_dim=4, stoch_dim=4, embed_dim=8, hidden_dim=8,
        head_dim=8, head_layers=1, conv_base=2,
        batch_size=2, seq_len=6, overshoot=2, horizon=4,
        episode_len=30, capacity=5_000, prefill_episodes=1,
        total_env_steps=2_000, train_steps_per_episode=5,
        eval_every_episodes=2, eval_episodes=2, checkpoint_every_episodes=2,
    )
    base.update(overrides)
    return TrainConfig(**base).validate()


def tiny_agent(mode="dreaming", dtype=torch.float64, seed=0, **overrides) -> Agent:
    torch.manual_seed(seed)
    agent = Agent(tiny_config(mode=mode, **overrides))
    for mod in agent.modules().values():
        mod.to(dtype)
    return agent


def seeded_batch(cfg: TrainConfig, dtype=torch.float64, seed=0, image_hw=64):
    """Random (images, actions, rewards) tensors honoring the data contracts."""
    rng = np.random.default_rng(seed)
    B, T = cfg.batch_size, cfg.seq_len
    images = torch.as_tensor(
        rng.uniform(-0.5, 0.5, size=(B, T, image_hw, image_hw, 3)), dtype=dtype)
    actions = torch.as_tensor(rng.uniform(-1, 1, size=(B, T, 2)), dtype=dtype)
    rewards = torch.as_tensor(rng.uniform(0, 1, size=(B, T)), dtype=dtype)
    return images, actions, rewards


def finite_diff_check(loss_fn, params, n_select=60, h=1e-5, seed=0, rtol=1e-4,
                      floor=1e-4) -> float:
    """Compare autograd gradients of loss_fn() against central finite differences on
    randomly selected coordinates of `params`. Returns the worst relative error.

    loss_fn must be re-evaluatable (it should reseed its own noise internally).
    """
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    rng = np.random.default_rng(seed)
    worst = 0.0
    flat_sizes = [p.numel() for p in params]
    total = sum(flat_sizes)
    picks = rng.choice(total, size=min(n_select, total), replace=False)
    for pick in picks:
        pi, off = 0, int(pick)
        while off >= flat_sizes[pi]:
            off -= flat_sizes[pi]
            pi += 1
        param, grad = params[pi], grads[pi]
        g = 0.0 if grad is None else float(grad.reshape(-1)[off])
        with torch.no_grad():
            orig = float(param.reshape(-1)[off])
            step = h * max(1.0, abs(orig))
            param.reshape(-1)[off] = orig + step
            up = float(loss_fn().detach())
            param.reshape(-1)[off] = orig - step
            down = float(loss_fn().detach())
            param.reshape(-1)[off] = orig
        fd = (up - down) / (2.0 * step)
        err = abs(fd - g) / max(abs(fd), abs(g), floor)
        assert err < rtol, (f"grad mismatch at param {pi} offset {off}: "
                            f"autograd {g:.3e} vs fd {fd:.3e} (rel {err:.2e})")
        worst = max(worst, err)
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(0)
