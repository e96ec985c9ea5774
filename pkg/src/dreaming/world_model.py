"""Recurrent latent state-space model: deterministic GRU path h, stochastic path s.

The latent is z = [h; s]. The posterior filters s_t from (h_t, e_t) where e_t is the CNN
embedding of the current frame; the prior predicts s_t from h_t alone. Sampling is
always reparameterized (mean + std * noise) so gradients flow and so that a fixed
generator makes every forward pass exactly reproducible.

Sequence alignment contract: action[t] is the action taken AFTER observing image[t], so
the transition into step t consumes action[t-1]; the first step of a sequence uses a
zero action from the initial state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ConfigError, TrainConfig
from .nets import ConvDecoder, ConvEncoder, mlp

LOG_TWO_PI = math.log(2.0 * math.pi)


class ModeError(RuntimeError):
    """An operation that belongs to a different training mode was requested."""


@dataclass
class GaussianParams:
    """Diagonal-Gaussian parameters; std is strictly positive (>= min_std)."""

    mean: torch.Tensor
    std: torch.Tensor

    def detach(self) -> "GaussianParams":
        return GaussianParams(self.mean.detach(), self.std.detach())

    def __getitem__(self, idx) -> "GaussianParams":
        return GaussianParams(self.mean[idx], self.std[idx])


@dataclass
class LatentState:
    """RSSM state: deterministic h plus stochastic s (sample and its parameters)."""

    h: torch.Tensor
    s_sample: torch.Tensor
    s_mean: torch.Tensor
    s_std: torch.Tensor

    def feature(self) -> torch.Tensor:
        """Concatenated latent [h; s_sample], the z-vector consumed by every head."""
        return torch.cat([self.h, self.s_sample], dim=-1)

    def mean_feature(self) -> torch.Tensor:
        """Deterministic variant [h; s_mean], used for evaluation-time filtering."""
        return torch.cat([self.h, self.s_mean], dim=-1)

    def detach(self) -> "LatentState":
        return LatentState(self.h.detach(), self.s_sample.detach(),
                           self.s_mean.detach(), self.s_std.detach())

    def __getitem__(self, idx) -> "LatentState":
        return LatentState(self.h[idx], self.s_sample[idx], self.s_mean[idx], self.s_std[idx])

    def flatten(self) -> "LatentState":
        """Merge all leading dims into one batch dim."""
        d = {k: getattr(self, k).reshape(-1, getattr(self, k).shape[-1])
             for k in ("h", "s_sample", "s_mean", "s_std")}
        return LatentState(**d)


def sample_gaussian(params: GaussianParams, generator: torch.Generator | None = None,
                    noise: torch.Tensor | None = None) -> torch.Tensor:
    """Reparameterized draw mean + std * noise; noise from `generator` unless given."""
    if noise is None:
        noise = torch.randn(params.mean.shape, generator=generator,
                            dtype=params.mean.dtype, device=params.mean.device)
    return params.mean + params.std * noise


def gaussian_kl(q: GaussianParams, p: GaussianParams) -> torch.Tensor:
    """Closed-form KL[q || p] for diagonal Gaussians, summed over the last dim."""
    var_ratio = (q.std / p.std) ** 2
    mean_term = ((q.mean - p.mean) / p.std) ** 2
    return 0.5 * (var_ratio + mean_term - 1.0 - torch.log(var_ratio)).sum(-1)


def gaussian_nll(pred_mean: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Elementwise negative log-likelihood under a unit-variance Gaussian."""
    return 0.5 * (pred_mean - target) ** 2 + 0.5 * LOG_TWO_PI


class WorldModel(nn.Module):
    """Encoder + RSSM + reward head, plus a decoder head in reconstruction mode only."""

    def __init__(self, cfg: TrainConfig, action_dim: int):
        super().__init__()
        self.cfg = cfg
        self.action_dim = action_dim
        self.deter_dim = cfg.deter_dim
        self.stoch_dim = cfg.stoch_dim
        self.feature_dim = cfg.deter_dim + cfg.stoch_dim
        self.min_std = cfg.min_std

        self.encoder = ConvEncoder(cfg.embed_dim, base=cfg.conv_base)
        self.cell_in = nn.Sequential(
            nn.Linear(cfg.stoch_dim + action_dim, cfg.hidden_dim), nn.ELU())
        self.cell = nn.GRUCell(cfg.hidden_dim, cfg.deter_dim)
        self.prior_trunk = nn.Sequential(nn.Linear(cfg.deter_dim, cfg.hidden_dim), nn.ELU())
        self.prior_stats = nn.Linear(cfg.hidden_dim, 2 * cfg.stoch_dim)
        self.post_trunk = nn.Sequential(
            nn.Linear(cfg.deter_dim + cfg.embed_dim, cfg.hidden_dim), nn.ELU())
        self.post_stats = nn.Linear(cfg.hidden_dim, 2 * cfg.stoch_dim)
        self.reward = mlp(self.feature_dim, cfg.head_dim, cfg.head_layers, 1)
        # The decoder exists only for the reconstruction baseline; in contrastive modes
        # it is not constructed at all, so it cannot leak into the training graph.
        self.decoder = ConvDecoder(self.feature_dim, base=cfg.conv_base) \
            if cfg.mode == "dreamer_recon" else None

    # -- primitives ----------------------------------------------------------

    def initial(self, batch: int, dtype: torch.dtype | None = None) -> LatentState:
        p = next(self.parameters())
        dtype = dtype or p.dtype
        zeros = lambda d: torch.zeros(batch, d, dtype=dtype, device=p.device)
        return LatentState(zeros(self.deter_dim), zeros(self.stoch_dim),
                           zeros(self.stoch_dim), torch.ones_like(zeros(self.stoch_dim)))

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        return self.encoder(images)

    def _stats(self, raw: torch.Tensor) -> GaussianParams:
        mean, std_raw = raw.chunk(2, dim=-1)
        return GaussianParams(mean, F.softplus(std_raw) + self.min_std)

    def prior_step(self, prev: LatentState, action: torch.Tensor) -> tuple[torch.Tensor, GaussianParams]:
        """One step of the generative model: h' = GRU(h, [s, a]), prior over s'."""
        if not (torch.isfinite(prev.h).all() and torch.isfinite(prev.s_sample).all()
                and torch.isfinite(action).all()):
            raise FloatingPointError("non-finite state or action in prior step")
        x = self.cell_in(torch.cat([prev.s_sample, action], dim=-1))
        h = self.cell(x, prev.h)
        prior = self._stats(self.prior_stats(self.prior_trunk(h)))
        return h, prior

    def posterior_params(self, h: torch.Tensor, embed: torch.Tensor) -> GaussianParams:
        """Filtering distribution over s given the recurrent state and frame embedding."""
        return self._stats(self.post_stats(self.post_trunk(torch.cat([h, embed], dim=-1))))

    def _make_state(self, h: torch.Tensor, params: GaussianParams,
                    generator: torch.Generator | None, sample: bool = True) -> LatentState:
        s = sample_gaussian(params, generator) if sample else params.mean
        return LatentState(h, s, params.mean, params.std)

    # -- sequence filtering ----------------------------------------------------

    def observe(self, images: torch.Tensor, actions: torch.Tensor,
                init: LatentState | None = None,
                generator: torch.Generator | None = None,
                ) -> tuple[LatentState, GaussianParams]:
        """Filter a (B, T, ...) sequence.

        Returns posterior states stacked along time (B, T, ...) and the one-step prior
        parameters at each step. Noise is drawn once per step with shape (B, stoch_dim).
        """
        B, T = images.shape[0], images.shape[1]
        embeds = self.encode(images)
        state = init if init is not None else self.initial(B, dtype=images.dtype)
        posts, priors = [], []
        for t in range(T):
            action = actions[:, t - 1] if t > 0 else torch.zeros(
                B, self.action_dim, dtype=images.dtype, device=images.device)
            h, prior = self.prior_step(state, action)
            post = self.posterior_params(h, embeds[:, t])
            state = self._make_state(h, post, generator)
            posts.append(state)
            priors.append(prior)
        stack = lambda xs: torch.stack(xs, dim=1)
        post_seq = LatentState(stack([p.h for p in posts]), stack([p.s_sample for p in posts]),
                               stack([p.s_mean for p in posts]), stack([p.s_std for p in posts]))
        prior_seq = GaussianParams(stack([p.mean for p in priors]), stack([p.std for p in priors]))
        return post_seq, prior_seq

    # -- multi-step prediction -------------------------------------------------

    def multi_step_prior(self, start: LatentState, actions: torch.Tensor,
                         generator: torch.Generator | None = None,
                         ) -> tuple[LatentState, GaussianParams]:
        """Roll the prior k steps from `start` under actions (k, B, A); sampling at each
        intermediate step. Returns the final state and the final-step prior params."""
        if actions.shape[0] < 1:
            raise ConfigError("multi_step_prior needs at least one action")
        state, prior = start, None
        for j in range(actions.shape[0]):
            h, prior = self.prior_step(state, actions[j])
            state = self._make_state(h, prior, generator)
        return state, prior

    def overshoot_priors(self, posts: LatentState, actions: torch.Tensor, k_max: int,
                         generator: torch.Generator | None = None) -> list[GaussianParams]:
        """Multi-step prior parameters for overshooting terms k = 0..k_max.

        Element k holds the prior at target times tau = k+1 .. T-1 (shape B x (T-k-1)),
        predicted by rolling k+1 sampled prior steps from the posterior at tau-(k+1).
        k = 0 is exactly the standard one-step prior of the ELBO.
        """
        B, T = posts.h.shape[0], posts.h.shape[1]
        if k_max > T - 1:
            raise ConfigError(f"overshooting distance {k_max} needs sequences longer than {T}")
        out: list[GaussianParams] = []
        # Anchor grid: predictions indexed by anchor time; after j steps the slot for
        # anchor t0 holds the prediction at time t0+j. Folding anchors into the batch
        # dim lets one prior_step advance every chain at once.
        state = LatentState(posts.h, posts.s_sample, posts.s_mean, posts.s_std)
        for j in range(k_max + 1):
            n = T - 1 - j  # anchors that can still advance one step
            if n <= 0:
                out.append(GaussianParams(
                    posts.s_mean.new_zeros(B, 0, self.stoch_dim),
                    posts.s_std.new_ones(B, 0, self.stoch_dim)))
                continue
            cur = LatentState(state.h[:, :n], state.s_sample[:, :n],
                              state.s_mean[:, :n], state.s_std[:, :n])
            act = actions[:, j:j + n]  # action at time t0+j drives t0+j -> t0+j+1
            flat = cur.flatten()
            h, prior = self.prior_step(flat, act.reshape(-1, act.shape[-1]))
            prior = GaussianParams(prior.mean.reshape(B, n, -1), prior.std.reshape(B, n, -1))
            noise = torch.randn(prior.mean.shape, generator=generator,
                                dtype=prior.mean.dtype, device=prior.mean.device)
            state = LatentState(h.reshape(B, n, -1), sample_gaussian(prior, noise=noise),
                                prior.mean, prior.std)
            out.append(prior)
        return out

    # -- heads -----------------------------------------------------------------

    def reward_mean(self, feature: torch.Tensor) -> torch.Tensor:
        return self.reward(feature).squeeze(-1)

    def decode(self, feature: torch.Tensor) -> torch.Tensor:
        if self.decoder is None:
            raise ModeError("decoder head exists only in dreamer_recon mode")
        return self.decoder(feature)


# -- losses ---------------------------------------------------------------------


def kl_overshoot_loss(posteriors: GaussianParams, priors_k: list[GaussianParams],
                      free_nats: float = 3.0) -> tuple[torch.Tensor, list[torch.Tensor]]:
    """Sum over k of the free-nats-clamped mean KL[q || p_k].

    `posteriors` are the filtering parameters (B, T, S); priors_k[k] covers target times
    k+1..T-1 as produced by overshoot_priors. The k=0 term is the plain ELBO KL; for
    k >= 1 the posterior side is stop-gradiented so only the prior chases it.
    """
    total = None
    per_k: list[torch.Tensor] = []
    for k, prior in enumerate(priors_k):
        q = posteriors[:, k + 1:]
        if k >= 1:
            q = q.detach()
        if q.mean.shape[1] == 0:
            term = posteriors.mean.new_zeros(())
        else:
            kl = gaussian_kl(q, prior)
            term = torch.clamp(kl - free_nats, min=0.0).mean()
        per_k.append(term)
        total = term if total is None else total + term
    return total, per_k


def reward_loss(model: WorldModel, features: torch.Tensor, rewards: torch.Tensor) -> torch.Tensor:
    """Mean unit-variance Gaussian NLL of predicted rewards."""
    return gaussian_nll(model.reward_mean(features), rewards).mean()


def reconstruction_loss(model: WorldModel, features: torch.Tensor, images: torch.Tensor,
                        ) -> torch.Tensor:
    """Pixel NLL summed over pixels/channels, averaged over batch and time."""
    nll = gaussian_nll(model.decode(features), images)
    return nll.sum(dim=(-1, -2, -3)).mean()


def elbo_loss(model: WorldModel, images: torch.Tensor, actions: torch.Tensor,
              rewards: torch.Tensor, free_nats: float,
              generator: torch.Generator | None = None,
              ) -> tuple[torch.Tensor, dict, LatentState]:
    """Reconstruction-baseline objective: pixel NLL + reward NLL + one-step KL."""
    posts, priors = model.observe(images, actions, generator=generator)
    q = GaussianParams(posts.s_mean, posts.s_std)
    kl = torch.clamp(gaussian_kl(q, priors) - free_nats, min=0.0).mean()
    pixel = reconstruction_loss(model, posts.feature(), images)
    rew = reward_loss(model, posts.mean_feature(), rewards)
    total = pixel + rew + kl
    metrics = {"pixel_nll": float(pixel.detach()), "reward_nll": float(rew.detach()),
               "kl_0": float(kl.detach()), "model_loss": float(total.detach())}
    return total, metrics, posts
