"""Training entry points for both hierarchy levels."""

from __future__ import annotations

import os
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from ..config import RunConfig
from ..floorplan import FloorPlan, default_holdout_size, enumerate_floorplans, get_template, split_plans
from ..langspec import EnhancedInstruction, encode
from ..navenv import CONTROLLER_ACTIONS, NavEnv
from ..rlcore import (
    CheckpointError,
    ConfigError,
    RecurrentPolicy,
    load_policy,
    policy_meta,
    save_checkpoint,
    train_ppo,
)
from .abstract import ENHANCEMENTS, AbstractRoomEnv, meta_reward


def object_set(name: str):
    from ..langspec import HOLDOUT_OBJECTS, TRAIN_OBJECTS

    return {"train": TRAIN_OBJECTS, "holdout": HOLDOUT_OBJECTS, "all": TRAIN_OBJECTS + HOLDOUT_OBJECTS}[name]


def plans_for(cfg: RunConfig, split: str) -> list[FloorPlan]:
    """Plans of ``split`` (static, train, holdout, all) for the configured template."""
    plans = enumerate_floorplans(get_template(cfg.environment.template))
    if split == "static":
        return plans[:1]
    if split == "all":
        return plans
    n = cfg.environment.holdout_plans
    n = default_holdout_size(len(plans)) if n < 0 else n
    parts = split_plans(plans, n, cfg.seeds.plans)
    ids = {"train": parts.train, "holdout": parts.holdout}.get(split)
    if ids is None:
        raise ConfigError("split", f"unknown split {split!r}")
    out = [plans[i] for i in ids]
    if not out:
        raise ConfigError("split", f"split {split!r} is empty")
    return out


def _save(model, out_dir, name, kind, cfg, history, **extra):
    if not out_dir:
        return None
    path = os.path.join(out_dir, name)
    last = history[-1] if history else {}
    save_checkpoint(path, model, policy_meta(model, kind, config_hash=cfg.hash(),
                                             env_steps=last.get("env_steps", 0), **extra))
    return path


def train_controller(cfg: RunConfig, out_dir: Optional[str] = None,
                     callback: Optional[Callable[[dict], bool]] = None):
    """PPO on Forward/Left/Right/Query with (optionally) oracle-enhanced instructions."""
    env_cfg = cfg.environment
    plans = plans_for(cfg, cfg.rl.plans)
    ppo = cfg.rl.ppo
    envs = [NavEnv(plans, env_cfg.params(), mode="controller", enhance=cfg.hierarchy.enhance,
                   objects=object_set("train"), n_distractors=env_cfg.distractors,
                   soft_termination=env_cfg.soft_termination, seed=cfg.seeds.env * 1000 + i)
            for i in range(ppo.n_workers)]
    torch.manual_seed(cfg.seeds.train)
    model = RecurrentPolicy(len(CONTROLLER_ACTIONS), cfg.rl.arch)
    metrics = os.path.join(out_dir, "controller_metrics.csv") if out_dir else None
    model, history = train_ppo(model, envs, ppo, cfg.rl.total_steps, seed=cfg.seeds.train,
                               metrics_path=metrics, callback=callback)
    path = _save(model, out_dir, "controller.npz", "controller", cfg, history, enhance=cfg.hierarchy.enhance,
                 template=env_cfg.template)
    return model, history, path


def train_flat(cfg: RunConfig, out_dir: Optional[str] = None,
               callback: Optional[Callable[[dict], bool]] = None):
    """Non-hierarchical baseline: Forward/Left/Right/Done on the base instruction."""
    env_cfg = cfg.environment
    plans = plans_for(cfg, cfg.rl.plans)
    ppo = cfg.rl.ppo
    envs = [NavEnv(plans, env_cfg.params(), mode="flat", enhance="none", objects=object_set("train"),
                   n_distractors=env_cfg.distractors, soft_termination=env_cfg.soft_termination,
                   seed=cfg.seeds.env * 1000 + i)
            for i in range(ppo.n_workers)]
    torch.manual_seed(cfg.seeds.train)
    model = RecurrentPolicy(4, cfg.rl.arch)
    metrics = os.path.join(out_dir, "baseline_metrics.csv") if out_dir else None
    model, history = train_ppo(model, envs, ppo, cfg.rl.total_steps, seed=cfg.seeds.train,
                               metrics_path=metrics, callback=callback)
    path = _save(model, out_dir, "baseline.npz", "flat", cfg, history, template=env_cfg.template)
    return model, history, path


def train_meta_coverage(cfg: RunConfig, out_dir: Optional[str] = None,
                        callback: Optional[Callable[[dict], bool]] = None):
    """PPO over the abstract room MDP; needs no controller."""
    hcfg = cfg.hierarchy
    plans = plans_for(cfg, cfg.rl.plans)
    ppo = hcfg.meta_ppo
    envs = [AbstractRoomEnv(plans, hcfg.abstract_horizon, seed=cfg.seeds.meta * 1000 + i)
            for i in range(ppo.n_workers)]
    torch.manual_seed(cfg.seeds.meta)
    model = RecurrentPolicy(len(ENHANCEMENTS), cfg.rl.arch)
    metrics = os.path.join(out_dir, "meta_metrics.csv") if out_dir else None
    model, history = train_ppo(model, envs, ppo, hcfg.meta_steps, seed=cfg.seeds.meta,
                               metrics_path=metrics, callback=callback)
    path = _save(model, out_dir, "meta.npz", "meta", cfg, history, scheme="coverage", c=hcfg.c,
                 template=cfg.environment.template)
    return model, history, path


@torch.no_grad()
def evaluate_coverage(model: RecurrentPolicy, plans: Sequence[FloorPlan], horizon: int = 14,
                      episodes: int = 200, seed: int = 0, greedy: bool = True) -> float:
    """Mean rooms visited by ``model`` in the abstract MDP."""
    env = AbstractRoomEnv(plans, horizon, seed=seed)
    gen = torch.Generator().manual_seed(seed)
    counts = []
    for _ in range(episodes):
        obs = env.reset()
        h = model.initial_state(1)
        done = False
        info = {}
        while not done:
            logits, _, h = model.step(torch.from_numpy(obs["image"][None]), torch.from_numpy(obs["tokens"][None]), h)
            if greedy:
                a = int(logits.argmax(-1))
            else:
                a = int(torch.multinomial(logits.softmax(-1), 1, generator=gen))
            obs, _, done, info = env.step(a)
        counts.append(info["rooms_visited"])
    return float(np.mean(counts))


class FrozenMetaEnv:
    """Meta-level environment driving a frozen controller for ``c`` steps per decision.

    The meta observation is the frame at window start plus the base
    instruction; the transition reward is :func:`meta_reward` of the window.
    """

    def __init__(self, nav: NavEnv, controller: RecurrentPolicy, c: int, gamma: float, seed: int = 0):
        self.nav = nav
        self.controller = controller
        self.c = c
        self.gamma = gamma
        self.gen = torch.Generator().manual_seed(seed)
        self._obs = None
        self._h = None

    n_actions = len(ENHANCEMENTS)

    def _meta_obs(self):
        return {"image": self._obs["image"], "tokens": encode(self.nav.instruction)}

    def reset(self):
        self._obs = self.nav.reset()
        self._h = self.controller.initial_state(1)
        return self._meta_obs()

    @torch.no_grad()
    def step(self, z: int):
        room = ENHANCEMENTS[z]
        tokens = torch.from_numpy(encode(EnhancedInstruction(self.nav.instruction, room))[None])
        rewards = []
        done = False
        info = {}
        for _ in range(self.c):
            img = torch.from_numpy(self._obs["image"][None])
            logits, _, self._h = self.controller.step(img, tokens, self._h)
            a = int(torch.multinomial(logits.softmax(-1), 1, generator=self.gen))
            self._obs, r, done, info = self.nav.step(a)
            rewards.append(r)
            if done:
                break
        return self._meta_obs(), meta_reward(rewards, self.gamma, self.c), done, info


def load_controller(path: str) -> RecurrentPolicy:
    try:
        model, meta = load_policy(path)
    except (CheckpointError, OSError) as e:
        raise ConfigError("hierarchy.controller", str(e)) from None
    if meta.get("kind") != "controller" or meta.get("n_actions") != len(CONTROLLER_ACTIONS):
        raise ConfigError("hierarchy.controller", f"{path} is not a controller checkpoint")
    return model


def train_meta_frozen(controller: RecurrentPolicy, cfg: RunConfig, out_dir: Optional[str] = None,
                      callback: Optional[Callable[[dict], bool]] = None):
    """PPO over enhancements with the controller held fixed."""
    if not isinstance(controller, RecurrentPolicy) or controller.n_actions != len(CONTROLLER_ACTIONS):
        raise ConfigError("hierarchy.controller", "incompatible controller")
    controller.eval()
    for p in controller.parameters():
        p.requires_grad_(False)
    env_cfg = cfg.environment
    hcfg = cfg.hierarchy
    plans = plans_for(cfg, cfg.rl.plans)
    ppo = hcfg.meta_ppo
    envs = []
    for i in range(ppo.n_workers):
        nav = NavEnv(plans, env_cfg.params(), mode="controller", enhance="none", objects=object_set("train"),
                     n_distractors=env_cfg.distractors, soft_termination=env_cfg.soft_termination,
                     seed=cfg.seeds.meta * 1000 + i)
        envs.append(FrozenMetaEnv(nav, controller, hcfg.c, ppo.gamma, seed=cfg.seeds.meta * 1000 + i))
    torch.manual_seed(cfg.seeds.meta)
    model = RecurrentPolicy(len(ENHANCEMENTS), controller.arch)
    metrics = os.path.join(out_dir, "meta_metrics.csv") if out_dir else None
    model, history = train_ppo(model, envs, ppo, hcfg.meta_steps, seed=cfg.seeds.meta,
                               metrics_path=metrics, callback=callback)
    path = _save(model, out_dir, "meta.npz", "meta", cfg, history, scheme="frozen", c=hcfg.c,
                 template=env_cfg.template)
    return model, history, path
