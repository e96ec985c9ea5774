"""Decoder-free training objective: linear latent dynamics, bilinear discriminator,
logit-matrix construction, the InfoNCE-with-overshooting loss, and the combined model
objective.

Two distinct dynamics models coexist on purpose: the NCE branch predicts future latents
with a plain linear map that exists only inside this loss, while the KL branch (and
behavior learning) use the expressive GRU prior. Rows/columns of every logit matrix are
flattened batch-major over (batch item, offset k); the diagonal holds the matching
pairs.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .config import ConfigError, TrainConfig
from .world_model import (GaussianParams, LatentState, WorldModel, kl_overshoot_loss,
                          reward_loss, sample_gaussian)


class ContrastiveHead(nn.Module):
    """Bilinear similarity weights plus (in dreaming mode) the linear dynamics."""

    def __init__(self, feature_dim: int, embed_dim: int, action_dim: int,
                 linear_dynamics: bool = True):
        super().__init__()
        w = torch.empty(feature_dim, embed_dim)
        nn.init.xavier_uniform_(w)
        self.w_bilinear = nn.Parameter(w)
        if linear_dynamics:
            # Persistence init: predictions start as the anchor latent itself.
            self.w_latent = nn.Parameter(torch.eye(feature_dim))
            self.w_action = nn.Parameter(torch.zeros(feature_dim, action_dim))
        else:
            self.w_latent = None
            self.w_action = None

    def linear_step(self, z: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        """One step of the bias-free linear dynamics z' = W_z z + W_a a."""
        if self.w_latent is None:
            raise ConfigError("linear dynamics not constructed for this mode")
        return z @ self.w_latent.T + action @ self.w_action.T

    def multi_step_predict(self, z_start: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
        """Compose k linear steps; actions has shape (k, ..., A) with k >= 1."""
        if actions.shape[0] < 1:
            raise ConfigError("multi_step_predict needs k >= 1 (k=0 pairs the anchor itself)")
        z = z_start
        for j in range(actions.shape[0]):
            z = self.linear_step(z, actions[j])
        return z

    def bilinear_logit(self, z: torch.Tensor, embed: torch.Tensor) -> torch.Tensor:
        """Similarity score z^T W e; no temperature or normalization."""
        return ((z @ self.w_bilinear) * embed).sum(-1)


def nce_loss(logits: torch.Tensor) -> torch.Tensor:
    """Mean softmax cross-entropy over rows with the diagonal as the true class.

    Accepts (..., N, N); leading dims are averaged too. Stable via logsumexp.
    """
    if logits.shape[-1] != logits.shape[-2]:
        raise ValueError(f"logit matrix must be square, got {tuple(logits.shape)}")
    diag = torch.diagonal(logits, dim1=-2, dim2=-1)
    return (torch.logsumexp(logits, dim=-1) - diag).mean()


def _predict_latents(head: ContrastiveHead, model: WorldModel, posts: LatentState,
                     actions: torch.Tensor, K: int, shared_dynamics: bool,
                     ) -> list[torch.Tensor]:
    """Latents predicted k=1..K steps ahead of every anchor t0 in 0..T-K-1.

    Returns a list over k of (B, M, Z) tensors, M = T - K anchors. The shared-dynamics
    ablation replaces the linear map with a deterministic GRU-prior rollout that carries
    the prior mean forward.
    """
    B, T = posts.h.shape[:2]
    M = T - K
    if shared_dynamics:
        state = LatentState(posts.h[:, :M], posts.s_sample[:, :M],
                            posts.s_mean[:, :M], posts.s_std[:, :M]).flatten()
        preds = []
        for k in range(1, K + 1):
            act = actions[:, k - 1:k - 1 + M].reshape(-1, actions.shape[-1])
            h, prior = model.prior_step(state, act)
            state = LatentState(h, prior.mean, prior.mean, prior.std)
            preds.append(state.feature().reshape(B, M, -1))
        return preds
    z = posts.feature()[:, :M]  # (B, M, Z) anchors
    preds = []
    for k in range(1, K + 1):
        z = head.linear_step(z, actions[:, k - 1:k - 1 + M])
        preds.append(z)
    return preds


def build_logit_matrix(posts: LatentState, actions: torch.Tensor,
                       target_embeds: torch.Tensor, K: int, head: ContrastiveHead,
                       model: WorldModel | None = None, shared_dynamics: bool = False,
                       ) -> torch.Tensor:
    """Similarity logits between predicted latents and target embeddings.

    One (B*K) x (B*K) matrix per anchor step t0 in 0..T-K-1, stacked to
    (M, B*K, B*K). Row/column i = (b, k) with b = i // K, k = i % K + 1; rows are
    predictions z'_{b, t0+k}, columns are embeddings e_{b, t0+k} from the second
    augmentation branch, so the diagonal holds the positive pairs.
    """
    B, T = posts.h.shape[:2]
    if T < K + 1:
        raise ConfigError(f"need T >= K+1 for K={K}, got T={T}")
    M = T - K
    preds = _predict_latents(head, model, posts, actions, K, shared_dynamics)
    pred = torch.stack(preds, dim=2)                      # (B, M, K, Z)
    targ = torch.stack([target_embeds[:, k:k + M] for k in range(1, K + 1)], dim=2)
    proj = targ @ head.w_bilinear.T                       # (B, M, K, Z)
    pred = pred.permute(1, 0, 2, 3).reshape(M, B * K, -1)
    proj = proj.permute(1, 0, 2, 3).reshape(M, B * K, -1)
    return pred @ proj.transpose(1, 2)                    # (M, B*K, B*K)


def _plain_nce_logits(posts: LatentState, target_embeds: torch.Tensor,
                      head: ContrastiveHead) -> torch.Tensor:
    """No-prediction baseline: per time step, pair z_t against all e_t (B x B)."""
    z = posts.feature()                                   # (B, T, Z)
    proj = target_embeds @ head.w_bilinear.T              # (B, T, Z)
    return torch.einsum("btz,ctz->tbc", z, proj)          # (T, B, B)


def combined_loss(model: WorldModel, head: ContrastiveHead, images_a: torch.Tensor,
                  images_b: torch.Tensor, actions: torch.Tensor, rewards: torch.Tensor,
                  cfg: TrainConfig, generator: torch.Generator | None = None,
                  ) -> tuple[torch.Tensor, dict, LatentState]:
    """Full decoder-free model objective on one two-branch batch.

    loss = sum_{k=1..K} NCE_k + sum_{k=0..K} clamped KL_k + reward NLL. Branch a feeds
    the recurrent filter, branch b supplies the target embeddings; gradients flow into
    the encoder from both. In plain_nce mode prediction is disabled in both branches
    (positives pair z_t with e_t, only the k=0 KL remains).
    """
    posts, _ = model.observe(images_a, actions, generator=generator)
    target_embeds = model.encode(images_b)
    metrics: dict[str, float] = {}

    if cfg.mode == "plain_nce":
        logits = _plain_nce_logits(posts, target_embeds, head)
        nce_total = nce_loss(logits)
        metrics["nce_0"] = float(nce_total.detach())
        k_max = 0
    else:
        K = cfg.overshoot
        logits = build_logit_matrix(posts, actions, target_embeds, K, head,
                                    model=model, shared_dynamics=cfg.shared_dynamics)
        diag = torch.diagonal(logits, dim1=-2, dim2=-1)
        row_ce = torch.logsumexp(logits, dim=-1) - diag   # (M, B*K)
        per_k = row_ce.reshape(row_ce.shape[0], -1, K).mean(dim=(0, 1))
        nce_total = per_k.sum()
        for k in range(K):
            metrics[f"nce_{k + 1}"] = float(per_k[k].detach())
        k_max = K

    priors_k = model.overshoot_priors(posts, actions, k_max, generator=generator)
    q = GaussianParams(posts.s_mean, posts.s_std)
    kl_total, kl_terms = kl_overshoot_loss(q, priors_k, free_nats=cfg.free_nats)
    for k, term in enumerate(kl_terms):
        metrics[f"kl_{k}"] = float(term.detach())

    # Mean features give the reward head a noise-free regression target; the sampling
    # noise of s at small scale otherwise blurs the narrow high-reward region.
    rew = reward_loss(model, posts.mean_feature(), rewards)
    total = nce_total + kl_total + rew
    metrics["reward_nll"] = float(rew.detach())
    metrics["nce_total"] = float(nce_total.detach())
    metrics["kl_total"] = float(kl_total.detach())
    metrics["model_loss"] = float(total.detach())
    return total, metrics, posts
