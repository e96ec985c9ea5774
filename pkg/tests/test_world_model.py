"""Recurrent state-space model: filtering, KL/overshooting losses, heads."""

import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from conftest import finite_diff_check, seeded_batch, tiny_agent, tiny_config
from dreaming.config import ConfigError
from dreaming.world_model import (GaussianParams, LatentState, ModeError, gaussian_kl,
                                  gaussian_nll, kl_overshoot_loss, sample_gaussian)

LOG_2PI = math.log(2 * math.pi)


def make_wm(mode="dreaming", seed=0, **overrides):
    return tiny_agent(mode=mode, seed=seed, **overrides).world_model


# -- encoder --------------------------------------------------------------------------


def test_encode_zero_image_finite():
    wm = make_wm()
    e = wm.encode(torch.zeros(64, 64, 3, dtype=torch.float64))
    assert e.shape == (8,)
    assert torch.isfinite(e).all()


def test_encode_deterministic_bitwise():
    wm = make_wm()
    img = torch.rand(3, 64, 64, 3, dtype=torch.float64) - 0.5
    assert torch.equal(wm.encode(img), wm.encode(img))


def test_encode_rejects_uncropped_source():
    wm = make_wm()
    with pytest.raises(ValueError):
        wm.encode(torch.zeros(72, 72, 3, dtype=torch.float64))


# -- prior / posterior ------------------------------------------------------------------


def test_prior_step_deterministic_and_std_floor():
    wm = make_wm()
    state = wm.initial(3)
    action = torch.zeros(3, 2, dtype=torch.float64)
    h1, p1 = wm.prior_step(state, action)
    h2, p2 = wm.prior_step(state, action)
    assert torch.equal(h1, h2) and torch.equal(p1.mean, p2.mean)
    assert float(p1.std.detach().min()) >= 0.1


def test_prior_step_std_floor_random_inputs(rng):
    wm = make_wm()
    for _ in range(10):
        state = LatentState(
            torch.as_tensor(rng.normal(size=(2, 4)), dtype=torch.float64),
            torch.as_tensor(rng.normal(size=(2, 4)), dtype=torch.float64),
            torch.zeros(2, 4, dtype=torch.float64),
            torch.ones(2, 4, dtype=torch.float64))
        action = torch.as_tensor(rng.uniform(-1, 1, size=(2, 2)), dtype=torch.float64)
        _, prior = wm.prior_step(state, action)
        assert float(prior.std.detach().min()) >= 0.1


def test_prior_step_rejects_nonfinite():
    wm = make_wm()
    state = wm.initial(1)
    bad = torch.full((1, 2), float("nan"), dtype=torch.float64)
    with pytest.raises(FloatingPointError):
        wm.prior_step(state, bad)


def test_posterior_deterministic():
    wm = make_wm()
    h = torch.randn(2, 4, dtype=torch.float64)
    e = torch.randn(2, 8, dtype=torch.float64)
    p1, p2 = wm.posterior_params(h, e), wm.posterior_params(h, e)
    assert torch.equal(p1.mean, p2.mean) and torch.equal(p1.std, p2.std)
    assert float(p1.std.detach().min()) >= 0.1


def test_posterior_mean_gradient_matches_finite_differences():
    wm = make_wm()
    torch.manual_seed(1)
    h = torch.randn(1, 4, dtype=torch.float64)
    e = torch.randn(1, 8, dtype=torch.float64, requires_grad=True)
    w = torch.randn(1, 4, dtype=torch.float64)

    def loss_fn():
        return (w * wm.posterior_params(h, e).mean).sum()

    worst = finite_diff_check(loss_fn, [e], n_select=8)
    assert worst < 1e-4


def test_multi_step_prior_k1_equals_prior_step():
    wm = make_wm()
    torch.manual_seed(2)
    state = LatentState(torch.randn(2, 4, dtype=torch.float64),
                        torch.randn(2, 4, dtype=torch.float64),
                        torch.zeros(2, 4, dtype=torch.float64),
                        torch.ones(2, 4, dtype=torch.float64))
    action = torch.rand(1, 2, 2, dtype=torch.float64) * 2 - 1
    _, direct = wm.prior_step(state, action[0])
    _, chained = wm.multi_step_prior(state, action, generator=torch.Generator().manual_seed(0))
    assert torch.equal(direct.mean, chained.mean)
    assert torch.equal(direct.std, chained.std)


# -- sequence filtering -------------------------------------------------------------------


def test_observe_single_step():
    agent = tiny_agent()
    images, actions, _ = seeded_batch(agent.cfg)
    posts, priors = agent.world_model.observe(images[:1, :1], actions[:1, :1],
                                              generator=torch.Generator().manual_seed(0))
    assert posts.h.shape == (1, 1, 4)
    assert priors.mean.shape == (1, 1, 4)


def test_observe_is_causal():
    agent = tiny_agent()
    images, actions, _ = seeded_batch(agent.cfg)
    full, _ = agent.world_model.observe(images, actions,
                                        generator=torch.Generator().manual_seed(3))
    cut = 3
    trunc, _ = agent.world_model.observe(images[:, :cut], actions[:, :cut],
                                         generator=torch.Generator().manual_seed(3))
    assert torch.allclose(full.h[:, :cut], trunc.h)
    assert torch.allclose(full.s_mean[:, :cut], trunc.s_mean)


def test_observe_zeroed_mean_head_matches_seeded_noise():
    agent = tiny_agent()
    wm = agent.world_model
    with torch.no_grad():
        wm.post_stats.weight.zero_()
        wm.post_stats.bias.zero_()
    images, actions, _ = seeded_batch(agent.cfg)
    posts, _ = wm.observe(images, actions, generator=torch.Generator().manual_seed(11))
    std_const = float(F.softplus(torch.zeros(1, dtype=torch.float64)) + 0.1)
    replay = torch.Generator().manual_seed(11)
    B, T = agent.cfg.batch_size, agent.cfg.seq_len
    for t in range(T):
        noise = torch.randn((B, 4), generator=replay, dtype=torch.float64)
        assert torch.equal(posts.s_sample[:, t], std_const * noise)
        assert torch.equal(posts.s_mean[:, t], torch.zeros(B, 4, dtype=torch.float64))


def test_reparameterization_is_exact():
    params = GaussianParams(torch.randn(5, 4, dtype=torch.float64),
                            torch.rand(5, 4, dtype=torch.float64) + 0.1)
    noise = torch.randn(5, 4, dtype=torch.float64)
    assert torch.equal(sample_gaussian(params, noise=noise),
                       params.mean + params.std * noise)


# -- KL and overshooting --------------------------------------------------------------------


def test_kl_identical_gaussians_is_zero():
    p = GaussianParams(torch.randn(3, 4, dtype=torch.float64),
                       torch.rand(3, 4, dtype=torch.float64) + 0.1)
    assert torch.equal(gaussian_kl(p, p), torch.zeros(3, dtype=torch.float64))


def test_kl_closed_form_unit_shift():
    # KL[N(0,1) || N(1,1)] = 0.5 per dimension
    dims = 6
    q = GaussianParams(torch.zeros(dims, dtype=torch.float64),
                       torch.ones(dims, dtype=torch.float64))
    p = GaussianParams(torch.ones(dims, dtype=torch.float64),
                       torch.ones(dims, dtype=torch.float64))
    assert float(gaussian_kl(q, p)) == pytest.approx(0.5 * dims, abs=1e-12)


def test_kl_closed_form_matches_monte_carlo(rng):
    for _ in range(3):
        sigma_q = rng.uniform(0.1, 2.0, size=2)
        sigma_p = np.clip(sigma_q * np.exp(rng.uniform(-0.3, 0.3, size=2)), 0.1, 2.0)
        mu_q = rng.uniform(-1, 1, size=2)
        mu_p = mu_q + rng.uniform(-0.5, 0.5, size=2) * sigma_p
        q = GaussianParams(torch.as_tensor(mu_q), torch.as_tensor(sigma_q))
        p = GaussianParams(torch.as_tensor(mu_p), torch.as_tensor(sigma_p))
        x = rng.normal(size=(100_000, 2)) * sigma_q + mu_q
        log_q = (-0.5 * ((x - mu_q) / sigma_q) ** 2 - np.log(sigma_q)).sum(-1)
        log_p = (-0.5 * ((x - mu_p) / sigma_p) ** 2 - np.log(sigma_p)).sum(-1)
        mc = (log_q - log_p).mean()
        assert float(gaussian_kl(q, p)) == pytest.approx(mc, abs=1e-2)


def test_free_nats_clamp_zeroes_small_kl():
    # KL below the free-nats floor contributes exactly zero
    q = GaussianParams(torch.zeros(2, 3, 4, dtype=torch.float64),
                       torch.ones(2, 3, 4, dtype=torch.float64))
    p = GaussianParams(torch.full((2, 2, 4), 0.05, dtype=torch.float64),
                       torch.ones(2, 2, 4, dtype=torch.float64))
    kl_value = float(gaussian_kl(q[:, 1:], p)[0, 0])
    assert kl_value < 3.0
    total, per_k = kl_overshoot_loss(q, [p], free_nats=3.0)
    assert float(total) == 0.0 and float(per_k[0]) == 0.0
    total0, _ = kl_overshoot_loss(q, [p], free_nats=0.0)
    assert float(total0) == pytest.approx(kl_value, rel=1e-12)


def test_overshoot_k0_equals_standard_prior():
    agent = tiny_agent()
    images, actions, _ = seeded_batch(agent.cfg)
    gen = torch.Generator().manual_seed(4)
    posts, priors = agent.world_model.observe(images, actions, generator=gen)
    chains = agent.world_model.overshoot_priors(posts, actions, 0,
                                                generator=torch.Generator().manual_seed(0))
    assert torch.allclose(chains[0].mean, priors.mean[:, 1:], atol=1e-12)
    assert torch.allclose(chains[0].std, priors.std[:, 1:], atol=1e-12)


def test_overshoot_rejects_too_long_horizon():
    agent = tiny_agent()
    images, actions, _ = seeded_batch(agent.cfg)
    posts, _ = agent.world_model.observe(images, actions,
                                         generator=torch.Generator().manual_seed(0))
    with pytest.raises(ConfigError):
        agent.world_model.overshoot_priors(posts, actions, agent.cfg.seq_len)


def test_overshoot_shapes_cover_shrinking_windows():
    agent = tiny_agent()
    images, actions, _ = seeded_batch(agent.cfg)
    posts, _ = agent.world_model.observe(images, actions,
                                         generator=torch.Generator().manual_seed(0))
    K, T = 2, agent.cfg.seq_len
    chains = agent.world_model.overshoot_priors(posts, actions, K,
                                                generator=torch.Generator().manual_seed(1))
    for k, prior in enumerate(chains):
        assert prior.mean.shape == (agent.cfg.batch_size, T - k - 1, 4)


# -- heads ------------------------------------------------------------------------------------


def test_reward_nll_zero_residual():
    pred = torch.zeros(5, dtype=torch.float64)
    assert torch.allclose(gaussian_nll(pred, pred),
                          torch.full((5,), 0.5 * LOG_2PI, dtype=torch.float64))


def test_reward_nll_unit_residual_gap():
    zero = torch.zeros((), dtype=torch.float64)
    one = torch.ones((), dtype=torch.float64)
    gap = float(gaussian_nll(one, zero) - gaussian_nll(zero, zero))
    assert gap == pytest.approx(0.5, abs=1e-15)


def test_reward_head_gradient_matches_finite_differences():
    wm = make_wm()
    torch.manual_seed(5)
    z = torch.randn(4, 8, dtype=torch.float64)
    target = torch.rand(4, dtype=torch.float64)

    def loss_fn():
        return gaussian_nll(wm.reward_mean(z), target).mean()

    worst = finite_diff_check(loss_fn, list(wm.reward.parameters()), n_select=20)
    assert worst < 1e-4


def test_decoder_shape_and_perfect_reconstruction_loss():
    wm = make_wm(mode="dreamer_recon")
    z = torch.randn(2, 8, dtype=torch.float64)
    out = wm.decode(z)
    assert out.shape == (2, 64, 64, 3)
    nll = gaussian_nll(out, out).sum(dim=(-1, -2, -3))
    expected = 0.5 * LOG_2PI * 64 * 64 * 3
    assert torch.allclose(nll, torch.full((2,), expected, dtype=torch.float64))


def test_decoder_absent_in_contrastive_mode():
    wm = make_wm(mode="dreaming")
    assert wm.decoder is None
    with pytest.raises(ModeError):
        wm.decode(torch.zeros(1, 8, dtype=torch.float64))


def test_losses_finite_on_random_inputs(rng):
    from dreaming.contrastive import combined_loss

    agent = tiny_agent()
    images, actions, rewards = seeded_batch(agent.cfg, seed=9)
    total, metrics, _ = combined_loss(agent.world_model, agent.contrastive, images,
                                      images, actions, rewards, agent.cfg,
                                      torch.Generator().manual_seed(0))
    assert torch.isfinite(total)
    assert all(np.isfinite(v) for v in metrics.values())


def test_feature_is_h_then_s_concatenation():
    state = LatentState(torch.tensor([[1.0, 2.0]]), torch.tensor([[3.0]]),
                        torch.tensor([[0.0]]), torch.tensor([[1.0]]))
    assert torch.equal(state.feature(), torch.tensor([[1.0, 2.0, 3.0]]))
    assert state.feature().shape[-1] == 2 + 1
