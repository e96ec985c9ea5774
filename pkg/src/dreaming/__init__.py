"""Decoder-free latent world models trained with a contrastive InfoMax objective,
behaviors learned by latent imagination, on built-in synthetic pixel tasks."""

from .agent import Agent
from .config import ConfigError, TrainConfig
from .world_model import (GaussianParams, LatentState, WorldModel, gaussian_kl,
                          kl_overshoot_loss, sample_gaussian)
from .contrastive import ContrastiveHead, build_logit_matrix, combined_loss, nce_loss
from .behavior import (Actor, Critic, ImaginedTrajectory, act, actor_loss, critic_loss,
                       imagine, lambda_returns)
from .augment import CropSpec, center_crop, color_jitter, random_crop
from .envs import DotEnv, EnvStep, make_env, render_frame, tolerance
from .replay import Episode, EpisodeStore, SequenceBatch, load_episode, save_episode
from .trainer import Trainer, evaluate, random_policy_returns, train
from .diagnostics import (ProbeReport, linear_probe, mi_lower_bound, open_loop_video,
                          train_probe_decoder)

__version__ = "0.1.0"

__all__ = [
    "Agent", "TrainConfig", "ConfigError",
    "WorldModel", "LatentState", "GaussianParams", "gaussian_kl", "kl_overshoot_loss",
    "sample_gaussian",
    "ContrastiveHead", "build_logit_matrix", "combined_loss", "nce_loss",
    "Actor", "Critic", "ImaginedTrajectory", "imagine", "lambda_returns", "actor_loss",
    "critic_loss", "act",
    "CropSpec", "random_crop", "center_crop", "color_jitter",
    "DotEnv", "EnvStep", "make_env", "render_frame", "tolerance",
    "Episode", "EpisodeStore", "SequenceBatch", "save_episode", "load_episode",
    "Trainer", "train", "evaluate", "random_policy_returns",
    "ProbeReport", "linear_probe", "mi_lower_bound", "train_probe_decoder",
    "open_loop_video",
]
