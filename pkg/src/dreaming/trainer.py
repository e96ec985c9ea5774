"""Outer training loop: alternate environment interaction, model learning on replayed
two-branch batches, and behavior learning on imagined rollouts; plus deterministic
evaluation and the metrics/checkpoint plumbing.

Every stochastic component draws from its own seeded stream (env, eval env, replay
sampling, each crop/jitter branch, torch sampling), so one seed fixes the entire run.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .agent import Agent, CheckpointError
from .augment import center_crop, color_jitter, random_crop
from .behavior import behavior_losses
from .config import TrainConfig
from .contrastive import combined_loss
from .envs import DotEnv, make_env
from .replay import BufferNotReady, Episode, EpisodeStore, SequenceBatch
from .world_model import elbo_loss


@dataclass
class RunStreams:
    env: np.random.Generator
    eval_env: np.random.Generator
    replay: np.random.Generator
    crop_a: np.random.Generator
    crop_b: np.random.Generator
    jitter_a: np.random.Generator
    jitter_b: np.random.Generator
    torch_gen: torch.Generator
    collect_gen: torch.Generator


def make_streams(seed: int) -> RunStreams:
    ss = np.random.SeedSequence(seed)
    children = ss.spawn(9)
    return RunStreams(
        env=np.random.default_rng(children[0]),
        eval_env=np.random.default_rng(children[1]),
        replay=np.random.default_rng(children[2]),
        crop_a=np.random.default_rng(children[3]),
        crop_b=np.random.default_rng(children[4]),
        jitter_a=np.random.default_rng(children[5]),
        jitter_b=np.random.default_rng(children[6]),
        torch_gen=torch.Generator().manual_seed(int(children[7].generate_state(1)[0])),
        collect_gen=torch.Generator().manual_seed(int(children[8].generate_state(1)[0])),
    )


class MetricsWriter:
    """Append-only JSON-lines metrics stream, one record per logged event."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def write(self, record: dict) -> None:
        with self.path.open("a") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")


def read_metrics(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line]


# -- environment interaction -------------------------------------------------------


def collect_episode(env: DotEnv, agent: Agent | None, explore: bool,
                    env_rng: np.random.Generator,
                    generator: torch.Generator | None = None,
                    keep_ground_truth: bool = False) -> Episode:
    """Roll one episode; agent=None means uniform random actions (prefill)."""
    step = env.reset(seed=int(env_rng.integers(2 ** 31)))
    images, actions, rewards, terminals, truths = [step.image], [], [0.0], [False], \
        [step.ground_truth]
    state = agent.initial_policy_state() if agent is not None else None
    while not step.terminal:
        if agent is None:
            action = env_rng.uniform(-1.0, 1.0, size=env.action_dim).astype(np.float32)
        else:
            action, state = agent.policy_step(state, images[-1], explore, generator)
        step = env.step(action)
        actions.append(action)
        images.append(step.image)
        rewards.append(step.reward)
        terminals.append(step.terminal)
        truths.append(step.ground_truth)
    actions.append(np.zeros(env.action_dim, dtype=np.float32))  # after the final frame
    return Episode(
        images=np.stack(images),
        actions=np.stack(actions).astype(np.float32),
        rewards=np.asarray(rewards, dtype=np.float32),
        terminals=np.asarray(terminals, dtype=bool),
        ground_truth=np.stack(truths) if keep_ground_truth else None,
        task=env.cfg.task,
    )


def episode_return(episode: Episode) -> float:
    return float(episode.rewards.sum())


def random_policy_returns(cfg: TrainConfig, n_episodes: int, seed: int = 0) -> np.ndarray:
    """Monte-Carlo reference: uniform-random actions on the configured task."""
    env = make_env(cfg, seed=seed)
    rng = np.random.default_rng(seed)
    return np.array([episode_return(collect_episode(env, None, False, rng))
                     for _ in range(n_episodes)])


# -- batch preparation ---------------------------------------------------------------


def two_branch_batch(batch: SequenceBatch, cfg: TrainConfig, streams: RunStreams,
                     ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Apply the two independent preprocessing branches and convert to tensors."""
    if cfg.crop:
        imgs_a, _ = random_crop(batch.images, streams.crop_a)
        imgs_b, _ = random_crop(batch.images, streams.crop_b)
    else:
        imgs_a = center_crop(batch.images)
        imgs_b = imgs_a.copy()
    if cfg.jitter:
        imgs_a = color_jitter(imgs_a, streams.jitter_a, strength=cfg.jitter_strength)
        imgs_b = color_jitter(imgs_b, streams.jitter_b, strength=cfg.jitter_strength)
    to_t = torch.from_numpy
    return (to_t(imgs_a), to_t(imgs_b), to_t(batch.actions), to_t(batch.rewards))


# -- gradient steps -------------------------------------------------------------------


class Trainer:
    def __init__(self, cfg: TrainConfig, outdir: str | Path | None = None):
        cfg.validate()
        self.cfg = cfg
        self.outdir = Path(outdir if outdir is not None else cfg.outdir)
        if cfg.deterministic:
            torch.set_num_threads(1)
        torch.manual_seed(cfg.seed)
        self.agent = Agent(cfg)
        self.streams = make_streams(cfg.seed)
        self.env = make_env(cfg, seed=cfg.seed)
        self.buffer = EpisodeStore(cfg.capacity)
        self.model_opt = torch.optim.Adam(self.agent.model_parameters(), lr=cfg.model_lr)
        self.actor_opt = torch.optim.Adam(self.agent.actor.parameters(), lr=cfg.actor_lr)
        self.critic_opt = torch.optim.Adam(self.agent.critic.parameters(), lr=cfg.critic_lr)
        self.env_step = 0
        self.grad_step = 0
        self.metrics = MetricsWriter(self.outdir / "metrics.jsonl")

    # -- single gradient steps ------------------------------------------------------

    def model_step(self, batch: SequenceBatch) -> tuple[dict, "LatentState"]:
        cfg = self.cfg
        imgs_a, imgs_b, actions, rewards = two_branch_batch(batch, cfg, self.streams)
        if cfg.mode == "dreamer_recon":
            loss, metrics, posts = elbo_loss(self.agent.world_model, imgs_a, actions,
                                             rewards, cfg.free_nats, self.streams.torch_gen)
        else:
            loss, metrics, posts = combined_loss(self.agent.world_model,
                                                 self.agent.contrastive, imgs_a, imgs_b,
                                                 actions, rewards, cfg,
                                                 self.streams.torch_gen)
        self.model_opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(self.agent.model_parameters(), cfg.grad_clip)
        self.model_opt.step()
        return metrics, posts

    def behavior_step(self, posts) -> dict:
        cfg = self.cfg
        start = posts.detach().flatten()
        a_loss, c_loss, metrics = behavior_losses(
            self.agent.world_model, self.agent.actor, self.agent.critic, start, cfg,
            self.streams.torch_gen)
        # Separate backwards: the actor loss also reaches critic/world-model leaves
        # through the value targets and dynamics, and those grads must not leak into
        # the critic update (its optimizer zeroes after the actor backward).
        self.actor_opt.zero_grad()
        a_loss.backward()
        torch.nn.utils.clip_grad_norm_(self.agent.actor.parameters(), cfg.grad_clip)
        self.actor_opt.step()
        self.critic_opt.zero_grad()
        c_loss.backward()
        torch.nn.utils.clip_grad_norm_(self.agent.critic.parameters(), cfg.grad_clip)
        self.critic_opt.step()
        return metrics

    def train_cycle(self) -> dict:
        """cfg.train_steps_per_episode gradient steps on replayed batches."""
        cfg = self.cfg
        sums: dict[str, float] = {}
        steps = 0
        for _ in range(cfg.train_steps_per_episode):
            if cfg.total_grad_steps and self.grad_step >= cfg.total_grad_steps:
                break
            batch = self.buffer.sample_batch(cfg.batch_size, cfg.seq_len,
                                             self.streams.replay, discount=cfg.discount)
            metrics, posts = self.model_step(batch)
            metrics.update(self.behavior_step(posts))
            self.grad_step += 1
            steps += 1
            for k, v in metrics.items():
                sums[k] = sums.get(k, 0.0) + v
        return {k: v / max(steps, 1) for k, v in sums.items()}

    # -- outer loop -------------------------------------------------------------------

    def run(self) -> Path:
        cfg = self.cfg
        self.outdir.mkdir(parents=True, exist_ok=True)
        cfg.save(self.outdir / "config.json")
        start_time = time.time()
        for _ in range(cfg.prefill_episodes):
            ep = collect_episode(self.env, None, False, self.streams.env)
            self.buffer.add_episode(ep)
            self.env_step += (len(ep) - 1) * cfg.action_repeat
        episode_idx = 0
        while self.env_step < cfg.total_env_steps:
            if cfg.total_grad_steps and self.grad_step >= cfg.total_grad_steps:
                break
            averages = self.train_cycle()
            # a persistent random-action fraction keeps rare high-reward states
            # flowing into replay so the reward head never starves
            use_random = self.streams.env.random() < cfg.random_episode_frac
            ep = collect_episode(self.env, None if use_random else self.agent, True,
                                 self.streams.env, self.streams.collect_gen)
            self.buffer.add_episode(ep)
            self.env_step += (len(ep) - 1) * cfg.action_repeat
            episode_idx += 1
            record = {"env_step": self.env_step, "grad_step": self.grad_step,
                      "train_return": episode_return(ep), **averages}
            if episode_idx % cfg.eval_every_episodes == 0:
                mean, std, _ = self.evaluate(cfg.eval_episodes)
                record["eval_return"] = mean
                record["eval_return_std"] = std
            self.metrics.write(record)
            if episode_idx % cfg.checkpoint_every_episodes == 0:
                self.save_checkpoint()
        self.save_checkpoint()
        mean, std, _ = self.evaluate(cfg.eval_episodes)
        summary = {"final_eval_mean": mean, "final_eval_std": std,
                   "env_steps": self.env_step, "grad_steps": self.grad_step,
                   "config_hash": cfg.config_hash(), "wall_time": time.time() - start_time}
        (self.outdir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
        return self.outdir

    # -- evaluation and checkpoints -----------------------------------------------------

    def evaluate(self, n_episodes: int) -> tuple[float, float, list[float]]:
        return evaluate_agent(self.agent, n_episodes, seed=self.cfg.seed + 1_000_003)

    def save_checkpoint(self) -> Path:
        opts = {"model": self.model_opt, "actor": self.actor_opt, "critic": self.critic_opt}
        return self.agent.save(self.outdir / "checkpoint", self.env_step, self.grad_step,
                               optimizers=opts)

    def restore(self, checkpoint: str | Path) -> None:
        agent, payload = Agent.load(checkpoint)
        if payload["config_hash"] != self.cfg.config_hash():
            raise CheckpointError(
                "refusing to resume: checkpoint config hash "
                f"{payload['config_hash']} != current {self.cfg.config_hash()}")
        self.agent = agent
        self.model_opt = torch.optim.Adam(self.agent.model_parameters(), lr=self.cfg.model_lr)
        self.actor_opt = torch.optim.Adam(self.agent.actor.parameters(), lr=self.cfg.actor_lr)
        self.critic_opt = torch.optim.Adam(self.agent.critic.parameters(), lr=self.cfg.critic_lr)
        for name, opt in (("model", self.model_opt), ("actor", self.actor_opt),
                          ("critic", self.critic_opt)):
            if "optimizers" in payload and name in payload["optimizers"]:
                opt.load_state_dict(payload["optimizers"][name])
        self.env_step = payload["env_step"]
        self.grad_step = payload["grad_step"]


def evaluate_agent(agent: Agent, n_episodes: int, seed: int = 0,
                   ) -> tuple[float, float, list[float]]:
    """Deterministic evaluation: mode actions, center crop, own seeded streams."""
    env = make_env(agent.cfg, seed=seed)
    rng = np.random.default_rng(seed)
    gen = torch.Generator().manual_seed(seed)
    returns = [episode_return(collect_episode(env, agent, False, rng, gen))
               for _ in range(n_episodes)]
    arr = np.asarray(returns)
    return float(arr.mean()), float(arr.std()), returns


def train(cfg: TrainConfig, outdir: str | Path | None = None,
          resume: str | Path | None = None) -> Path:
    """Run one training job end to end; returns the run directory."""
    trainer = Trainer(cfg, outdir)
    if resume is not None:
        trainer.restore(resume)
    return trainer.run()


def evaluate(checkpoint: str | Path, n_episodes: int = 10, seed: int = 0,
             ) -> tuple[float, float, list[float]]:
    """Evaluate a checkpoint with the deterministic protocol."""
    agent, _ = Agent.load(checkpoint)
    return evaluate_agent(agent, n_episodes, seed=seed)
