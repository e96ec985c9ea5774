"""Representation-quality instrumentation: linear probes from latents to ground-truth
state (the small-object perception test), the InfoNCE mutual-information lower bound,
and an independently trained probe decoder for open-loop video prediction.

The probe decoder only ever sees detached latents, so the world model is bit-identical
before and after probe training; tests pin this with a parameter checksum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .agent import Agent
from .augment import center_crop
from .config import TrainConfig
from .envs import make_env
from .nets import ConvDecoder
from .replay import Episode, normalize_images
from .trainer import collect_episode
from .world_model import LatentState, gaussian_nll, sample_gaussian


@dataclass
class ProbeReport:
    """Held-out R^2 of a ridge regression from latents to ground-truth targets."""

    r2: np.ndarray            # per target dimension
    n_samples: int
    latent_source: str = ""   # e.g. "dreaming" vs "dreamer_recon"

    @property
    def mean_r2(self) -> float:
        return float(self.r2.mean())


def linear_probe(latents: np.ndarray, targets: np.ndarray, ridge: float = 1e-4,
                 train_frac: float = 0.75, seed: int = 0, latent_source: str = "",
                 ) -> ProbeReport:
    """Closed-form ridge regression on a split, R^2 reported on the held-out part."""
    n, d = latents.shape
    if n < 10 * d:
        raise ValueError(f"need >= 10x latent-dim samples, got {n} for dim {d}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    cut = int(n * train_frac)
    tr, te = order[:cut], order[cut:]
    x_mean = latents[tr].mean(0)
    y_mean = targets[tr].mean(0)
    xc, yc = latents[tr] - x_mean, targets[tr] - y_mean
    gram = xc.T @ xc + ridge * np.eye(d)
    weights = np.linalg.solve(gram, xc.T @ yc)
    pred = (latents[te] - x_mean) @ weights + y_mean
    resid = ((targets[te] - pred) ** 2).sum(0)
    total = ((targets[te] - targets[te].mean(0)) ** 2).sum(0)
    r2 = 1.0 - resid / np.maximum(total, 1e-12)
    return ProbeReport(r2=r2, n_samples=n, latent_source=latent_source)


def mi_lower_bound(nce_loss_value: float, n: int) -> float:
    """InfoNCE mutual-information bound log N - loss, clamped at 0 for reporting."""
    if n < 1:
        raise ValueError("matrix size must be >= 1")
    return max(0.0, math.log(n) - float(nce_loss_value))


# -- probe data collection -------------------------------------------------------------


@torch.no_grad()
def collect_probe_data(agent: Agent, n_episodes: int = 10, seed: int = 0,
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Random-action episodes filtered with the center crop.

    Returns ([h; s_mean] latents, ground-truth vectors); the same protocol for every
    mode keeps probe comparisons fair.
    """
    env = make_env(agent.cfg, seed=seed)
    rng = np.random.default_rng(seed)
    latents, truths = [], []
    for _ in range(n_episodes):
        ep = collect_episode(env, None, False, rng, keep_ground_truth=True)
        images = torch.from_numpy(center_crop(normalize_images(ep.images))[None])
        actions = torch.from_numpy(ep.actions[None])
        posts, _ = agent.world_model.observe(images, actions,
                                             generator=torch.Generator().manual_seed(seed))
        latents.append(posts.mean_feature()[0].numpy())
        truths.append(ep.ground_truth)
    return np.concatenate(latents), np.concatenate(truths)


def probe_checkpoint(checkpoint: str | Path, n_episodes: int = 10, seed: int = 0,
                     task: str | None = None) -> ProbeReport:
    """CLI entry: probe a saved model, by default on its own task's ground truth."""
    agent, _ = Agent.load(checkpoint)
    if task is not None and task != agent.cfg.task:
        agent.cfg = agent.cfg.replace(task=task)
    latents, truths = collect_probe_data(agent, n_episodes, seed)
    return linear_probe(latents, truths, seed=seed, latent_source=agent.cfg.mode)


# -- probe decoder and open-loop video ---------------------------------------------------


def train_probe_decoder(agent: Agent, episodes: list[Episode], steps: int = 200,
                        batch: int = 16, seq_len: int = 8, lr: float = 3e-4,
                        seed: int = 0) -> ConvDecoder:
    """Fit a decoder on detached filtered latents; world-model parameters stay frozen."""
    cfg = agent.cfg
    decoder = ConvDecoder(agent.world_model.feature_dim, base=cfg.conv_base)
    opt = torch.optim.Adam(decoder.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    gen = torch.Generator().manual_seed(seed)
    usable = [ep for ep in episodes if len(ep) >= seq_len]
    if not usable:
        raise ValueError(f"no episode of length >= {seq_len} to train the probe decoder")
    for _ in range(steps):
        imgs, acts = [], []
        for _ in range(batch):
            ep = usable[int(rng.integers(len(usable)))]
            off = int(rng.integers(len(ep) - seq_len + 1))
            imgs.append(center_crop(normalize_images(ep.images[off:off + seq_len])))
            acts.append(ep.actions[off:off + seq_len])
        images = torch.from_numpy(np.stack(imgs))
        actions = torch.from_numpy(np.stack(acts))
        with torch.no_grad():
            posts, _ = agent.world_model.observe(images, actions, generator=gen)
            feats = posts.feature()
        loss = gaussian_nll(decoder(feats), images).sum(dim=(-1, -2, -3)).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
    return decoder


@torch.no_grad()
def open_loop_video(agent: Agent, decoder: ConvDecoder, episode: Episode,
                    context: int = 5, horizon: int = 20, seed: int = 0) -> np.ndarray:
    """First `context` frames reconstructed from filtered posteriors, the rest generated
    open-loop from the GRU prior under the episode's recorded actions."""
    if context + horizon > len(episode):
        raise ValueError(f"context+horizon {context + horizon} exceeds episode "
                         f"length {len(episode)}")
    gen = torch.Generator().manual_seed(seed)
    images = torch.from_numpy(center_crop(normalize_images(episode.images))[None])
    actions = torch.from_numpy(episode.actions[None])
    posts, _ = agent.world_model.observe(images[:, :context], actions[:, :context],
                                         generator=gen)
    frames = [decoder(posts.feature()[0, t]) for t in range(context)]
    state = posts[:, -1]
    for t in range(context - 1, context - 1 + horizon):
        h, prior = agent.world_model.prior_step(state, actions[:, t])
        s = sample_gaussian(prior, gen)
        state = LatentState(h, s, prior.mean, prior.std)
        frames.append(decoder(state.feature())[0])
    video = torch.stack(frames).clamp(-0.5, 0.5).numpy()
    return video


def save_video(frames: np.ndarray, outdir: str | Path, name: str = "video") -> Path:
    """Write frames as numbered PNGs plus an animated GIF; returns the GIF path."""
    from PIL import Image

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    imgs = []
    for i, frame in enumerate(frames):
        arr = ((frame + 0.5) * 255.0).clip(0, 255).astype(np.uint8)
        img = Image.fromarray(arr)
        img.save(outdir / f"{name}_{i:03d}.png")
        imgs.append(img)
    gif = outdir / f"{name}.gif"
    imgs[0].save(gif, save_all=True, append_images=imgs[1:], duration=120, loop=0)
    return gif


def world_model_checksum(agent: Agent) -> str:
    """Order-stable hash of every world-model parameter's bytes."""
    import hashlib

    h = hashlib.sha256()
    for name, p in sorted(agent.world_model.named_parameters()):
        h.update(name.encode())
        h.update(p.detach().numpy().tobytes())
    return h.hexdigest()
