"""Agent bundle: world model + mode-specific contrastive head + actor/critic, the
filtering state used when acting in an environment, and checkpoint round-trip.

Mode isolation happens at construction time: dreaming builds no decoder, dreamer_recon
builds no bilinear/linear-dynamics parameters, plain_nce builds a bilinear head but no
linear dynamics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .augment import center_crop
from .behavior import Actor, Critic, act
from .config import TrainConfig
from .contrastive import ContrastiveHead
from .envs import ACTION_DIM
from .replay import normalize_images
from .world_model import LatentState, WorldModel


class CheckpointError(RuntimeError):
    """Missing, corrupt, or mismatched checkpoint."""


@dataclass
class PolicyState:
    """Filtering state carried across control steps while acting."""

    latent: LatentState
    prev_action: torch.Tensor


class Agent:
    def __init__(self, cfg: TrainConfig):
        cfg.validate()
        self.cfg = cfg
        self.action_dim = ACTION_DIM
        self.world_model = WorldModel(cfg, self.action_dim)
        feature_dim = self.world_model.feature_dim
        if cfg.mode in ("dreaming", "plain_nce"):
            linear = cfg.mode == "dreaming" and not cfg.shared_dynamics
            self.contrastive = ContrastiveHead(feature_dim, cfg.embed_dim,
                                               self.action_dim, linear_dynamics=linear)
        else:
            self.contrastive = None
        self.actor = Actor(feature_dim, self.action_dim, cfg.head_dim, cfg.head_layers)
        self.critic = Critic(feature_dim, cfg.head_dim, cfg.head_layers)

    # -- parameter groups -----------------------------------------------------

    def model_parameters(self):
        params = list(self.world_model.parameters())
        if self.contrastive is not None:
            params += list(self.contrastive.parameters())
        return params

    def modules(self) -> dict[str, torch.nn.Module]:
        mods = {"world_model": self.world_model, "actor": self.actor, "critic": self.critic}
        if self.contrastive is not None:
            mods["contrastive"] = self.contrastive
        return mods

    # -- acting ----------------------------------------------------------------

    def initial_policy_state(self, batch: int = 1) -> PolicyState:
        latent = self.world_model.initial(batch)
        action = torch.zeros(batch, self.action_dim, dtype=latent.h.dtype)
        return PolicyState(latent, action)

    @torch.no_grad()
    def policy_step(self, state: PolicyState, image_uint8: np.ndarray, explore: bool,
                    generator: torch.Generator | None = None,
                    ) -> tuple[np.ndarray, PolicyState]:
        """Filter one 72x72 frame (center crop) and emit an action.

        Filtering always samples the posterior (the distribution the model is trained
        on); determinism comes from seeding `generator`. explore only controls the
        action noise: False takes the actor mode.
        """
        frame = center_crop(normalize_images(image_uint8)[None, None])[0, 0]
        obs = torch.from_numpy(frame)
        embed = self.world_model.encode(obs)
        h, _ = self.world_model.prior_step(state.latent, state.prev_action)
        post = self.world_model.posterior_params(h, embed[None])
        s = post.mean + post.std * torch.randn(post.mean.shape, generator=generator,
                                               dtype=post.mean.dtype)
        latent = LatentState(h, s, post.mean, post.std)
        action = act(self.actor, latent.feature(), explore=explore,
                     explore_noise=self.cfg.explore_noise, generator=generator)
        return action[0].numpy().astype(np.float32), PolicyState(latent, action)

    # -- checkpointing -----------------------------------------------------------

    def save(self, directory: str | Path, env_step: int, grad_step: int,
             optimizers: dict[str, torch.optim.Optimizer] | None = None) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        payload = {
            "config": self.cfg.to_dict(),
            "config_hash": self.cfg.config_hash(),
            "env_step": env_step,
            "grad_step": grad_step,
            "state": {name: mod.state_dict() for name, mod in self.modules().items()},
        }
        if optimizers:
            payload["optimizers"] = {k: v.state_dict() for k, v in optimizers.items()}
        path = directory / "agent.pt"
        torch.save(payload, path)
        manifest = {
            "step": env_step,
            "grad_step": grad_step,
            "config_hash": self.cfg.config_hash(),
            "parameters": {f"{m}.{n}": list(p.shape)
                           for m, mod in self.modules().items()
                           for n, p in mod.named_parameters()},
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> tuple["Agent", dict]:
        """Rebuild an agent from a checkpoint file or its directory."""
        path = Path(path)
        if path.is_dir():
            path = path / "agent.pt"
        if not path.exists():
            raise CheckpointError(f"no checkpoint at {path}")
        try:
            payload = torch.load(path, map_location="cpu", weights_only=False)
        except Exception as exc:  # torch.load failures span pickle/zip/runtime errors
            raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
        try:
            cfg = TrainConfig.from_dict(payload["config"])
            agent = cls(cfg)
            for name, mod in agent.modules().items():
                mod.load_state_dict(payload["state"][name])
        except (KeyError, TypeError, RuntimeError) as exc:
            raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
        return agent, payload
