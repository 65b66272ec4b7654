"""Rollout collection, generalized advantage estimation and clipped PPO updates."""

from __future__ import annotations

import csv
import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .policy import ConfigError, RecurrentPolicy

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


class EnvWorkerError(RuntimeError):
    def __init__(self, worker: int, cause: Exception):
        super().__init__(f"worker {worker}: {type(cause).__name__}: {cause}")
        self.worker = worker


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    epochs: int = 4
    minibatches: int = 4
    lr: float = 2.5e-4
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    max_grad_norm: float = 0.5
    rollout_len: int = 128
    n_workers: int = 8

    def validate(self, prefix: str = "rl") -> "PpoConfig":
        for name in ("gamma", "lam"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{prefix}.{name}", f"must be in [0, 1], got {v}")
        if self.clip <= 0:
            raise ConfigError(f"{prefix}.clip", f"must be > 0, got {self.clip}")
        for name in ("epochs", "minibatches", "rollout_len", "n_workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{prefix}.{name}", "must be >= 1")
        if self.lr <= 0:
            raise ConfigError(f"{prefix}.lr", "must be > 0")
        return self


def compute_gae(rewards, values, dones, bootstrap_value, gamma: float, lam: float):
    """Advantages and returns over the leading time axis.

    ``dones[t]`` marks that the episode ended after step ``t``; the value of
    the following state is then not bootstrapped.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if not (rewards.shape == values.shape == dones.shape):
        raise ConfigError("gae", f"shape mismatch {rewards.shape}, {values.shape}, {dones.shape}")
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    last = np.zeros(rewards.shape[1:])
    next_value = np.asarray(bootstrap_value, dtype=np.float64)
    for t in reversed(range(T)):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
        next_value = values[t]
    return adv, adv + values


def normalize_advantages(adv: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + eps)


def clipped_surrogate(ratio: torch.Tensor, adv: torch.Tensor, clip: float) -> torch.Tensor:
    return torch.min(ratio * adv, torch.clamp(ratio, 1.0 - clip, 1.0 + clip) * adv)


@dataclass
class RolloutBatch:
    """Storage for ``T`` steps of ``N`` workers; time-major arrays."""

    obs: np.ndarray          # (T, N, H, W, 3) uint8
    tokens: np.ndarray       # (T, N, L) int64
    actions: np.ndarray      # (T, N)
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray        # episode ended after this step
    starts: np.ndarray       # hidden state is zeroed before this step
    h0: np.ndarray           # (N, hidden) state at segment start
    bootstrap_value: np.ndarray
    episodes: list = field(default_factory=list)  # finished-episode stats dicts

    @property
    def size(self) -> int:
        return self.rewards.size


def ppo_loss(model: RecurrentPolicy, mb: dict, cfg: PpoConfig):
    """Total loss and diagnostics for one minibatch of whole segments."""
    logits, values = model.forward_sequence(mb["obs"], mb["tokens"], mb["starts"], mb["h0"])
    logp_all = F.log_softmax(logits, dim=-1)
    logp = logp_all.gather(-1, mb["actions"][..., None]).squeeze(-1)
    ratio = torch.exp(logp - mb["old_log_probs"])
    surrogate = clipped_surrogate(ratio, mb["advantages"], cfg.clip).mean()
    value_loss = ((values - mb["returns"]) ** 2).mean()
    entropy = -(logp_all.exp() * logp_all).sum(-1).mean()
    loss = -surrogate + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
    with torch.no_grad():
        stats = {
            "loss": loss.item(),
            "policy_loss": -surrogate.item(),
            "value_loss": value_loss.item(),
            "entropy": entropy.item(),
            "clip_frac": ((ratio - 1.0).abs() > cfg.clip).float().mean().item(),
            "approx_kl": (mb["old_log_probs"] - logp).mean().item(),
        }
    return loss, stats


def batch_tensors(batch: RolloutBatch, workers, adv: np.ndarray, returns: np.ndarray, dtype=torch.float32) -> dict:
    w = np.asarray(workers)
    return {
        "obs": torch.from_numpy(np.ascontiguousarray(batch.obs[:, w])),
        "tokens": torch.from_numpy(batch.tokens[:, w]),
        "starts": torch.from_numpy(batch.starts[:, w]).to(dtype),
        "h0": torch.from_numpy(batch.h0[w]).to(dtype),
        "actions": torch.from_numpy(batch.actions[:, w]).long(),
        "old_log_probs": torch.from_numpy(batch.log_probs[:, w]).to(dtype),
        "advantages": torch.from_numpy(adv[:, w]).to(dtype),
        "returns": torch.from_numpy(returns[:, w]).to(dtype),
    }


class PPO:
    """Owns the optimizer; ``update`` consumes one rollout batch."""

    def __init__(self, model: RecurrentPolicy, cfg: PpoConfig, seed: int = 0):
        self.model = model
        self.cfg = cfg.validate()
        self.optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
        self.rng = np.random.default_rng(seed)

    def update(self, batch: RolloutBatch) -> dict:
        cfg = self.cfg
        adv, returns = compute_gae(batch.rewards, batch.values, batch.dones, batch.bootstrap_value,
                                   cfg.gamma, cfg.lam)
        adv = normalize_advantages(adv)
        n = batch.rewards.shape[1]
        n_mb = min(cfg.minibatches, n)
        sums: dict[str, float] = {}
        count = 0
        for _ in range(cfg.epochs):
            for workers in np.array_split(self.rng.permutation(n), n_mb):
                mb = batch_tensors(batch, workers, adv, returns)
                loss, stats = ppo_loss(self.model, mb, cfg)
                if not torch.isfinite(loss):
                    raise DivergenceError(f"non-finite loss; last stats {stats}")
                self.optimizer.zero_grad()
                loss.backward()
                nn.utils.clip_grad_norm_(self.model.parameters(), cfg.max_grad_norm)
                self.optimizer.step()
                for k, v in stats.items():
                    sums[k] = sums.get(k, 0.0) + v
                count += 1
        return {k: v / count for k, v in sums.items()}


def ppo_update(model: RecurrentPolicy, batch: RolloutBatch, cfg: PpoConfig, seed: int = 0):
    """One-shot update with a fresh optimizer; returns ``(model, stats)``."""
    stats = PPO(model, cfg, seed).update(batch)
    return model, stats


class RolloutCollector:
    """Steps a list of environments with the current policy.

    Environments expose ``reset() -> obs`` and ``step(a) -> (obs, reward,
    done, info)`` where ``obs`` is a dict with ``image`` (uint8 HxWx3) and
    ``tokens``. Finished episodes are reset immediately and their recurrent
    state zeroed.
    """

    def __init__(self, model: RecurrentPolicy, envs: Sequence, rollout_len: int, seed: int = 0):
        self.model = model
        self.envs = list(envs)
        self.rollout_len = rollout_len
        self.gen = torch.Generator().manual_seed(seed)
        self.obs = [self._call(i, env.reset) for i, env in enumerate(self.envs)]
        self.hidden = model.initial_state(len(self.envs))
        self.starts = np.ones(len(self.envs), dtype=np.float32)
        self._ep_return = np.zeros(len(self.envs))
        self._ep_len = np.zeros(len(self.envs), dtype=np.int64)
        self.env_steps = 0

    @staticmethod
    def _call(i, fn, *args):
        try:
            return fn(*args)
        except Exception as e:  # re-raised with the worker index
            raise EnvWorkerError(i, e) from e

    def _stack(self):
        return (np.stack([o["image"] for o in self.obs]), np.stack([o["tokens"] for o in self.obs]))

    @torch.no_grad()
    def collect(self) -> RolloutBatch:
        T, N = self.rollout_len, len(self.envs)
        img0 = self.obs[0]["image"]
        obs = np.zeros((T, N) + img0.shape, dtype=np.uint8)
        tokens = np.zeros((T, N, len(self.obs[0]["tokens"])), dtype=np.int64)
        actions = np.zeros((T, N), dtype=np.int64)
        log_probs = np.zeros((T, N), dtype=np.float32)
        values = np.zeros((T, N), dtype=np.float32)
        rewards = np.zeros((T, N), dtype=np.float64)
        dones = np.zeros((T, N), dtype=np.float32)
        starts = np.zeros((T, N), dtype=np.float32)
        h0 = self.hidden.numpy().copy()
        episodes = []
        for t in range(T):
            img, tok = self._stack()
            obs[t], tokens[t], starts[t] = img, tok, self.starts
            h = self.hidden * torch.from_numpy(1.0 - self.starts)[:, None].to(self.hidden.dtype)
            logits, value, h = self.model.step(torch.from_numpy(img), torch.from_numpy(tok), h)
            logp_all = F.log_softmax(logits, dim=-1)
            a = torch.multinomial(logp_all.exp(), 1, generator=self.gen).squeeze(-1)
            actions[t] = a.numpy()
            log_probs[t] = logp_all.gather(-1, a[:, None]).squeeze(-1).numpy()
            values[t] = value.numpy()
            self.hidden = h
            for i, env in enumerate(self.envs):
                o, r, d, info = self._call(i, env.step, int(actions[t, i]))
                rewards[t, i] = r
                dones[t, i] = float(d)
                self._ep_return[i] += r
                self._ep_len[i] += 1
                if d:
                    episodes.append({"return": float(self._ep_return[i]), "length": int(self._ep_len[i]),
                                     "success": bool(info.get("success", False)), **info.get("episode", {})})
                    self._ep_return[i] = 0.0
                    self._ep_len[i] = 0
                    o = self._call(i, env.reset)
                self.obs[i] = o
            self.starts = dones[t].copy()
            self.env_steps += N
        img, tok = self._stack()
        h = self.hidden * torch.from_numpy(1.0 - self.starts)[:, None].to(self.hidden.dtype)
        _, boot, _ = self.model.step(torch.from_numpy(img), torch.from_numpy(tok), h)
        return RolloutBatch(obs, tokens, actions, log_probs, values, rewards, dones, starts, h0,
                            boot.numpy().astype(np.float64), episodes)


def collect_rollouts(model, envs, rollout_len: int, seed: int = 0) -> RolloutBatch:
    return RolloutCollector(model, envs, rollout_len, seed).collect()


METRIC_FIELDS = ("update", "env_steps", "episodes", "mean_return", "success_rate",
                 "policy_loss", "value_loss", "entropy", "clip_frac", "approx_kl", "wall_time")


class MetricsWriter:
    def __init__(self, path: Optional[str]):
        self.path = path
        if path:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            with open(path, "w", newline="") as fh:
                csv.writer(fh).writerow(METRIC_FIELDS)

    def write(self, row: dict):
        if self.path:
            with open(self.path, "a", newline="") as fh:
                csv.writer(fh).writerow([row.get(k, "") for k in METRIC_FIELDS])


def train_ppo(model: RecurrentPolicy, envs: Sequence, cfg: PpoConfig, total_steps: int, *,
              seed: int = 0, metrics_path: Optional[str] = None, window: int = 100,
              callback: Optional[Callable[[dict], bool]] = None) -> tuple[RecurrentPolicy, list]:
    """Generic PPO loop. ``callback(row)`` returning True stops training early.

    ``total_steps`` is a ceiling: only whole rollout batches that fit are run
    (at least one).
    """
    trainer = PPO(model, cfg, seed)
    collector = RolloutCollector(model, envs, cfg.rollout_len, seed + 1)
    writer = MetricsWriter(metrics_path)
    recent: list = []
    history = []
    t0 = time.time()
    update = 0
    n_updates = max(1, total_steps // (cfg.rollout_len * len(envs)))
    while update < n_updates:
        batch = collector.collect()
        stats = trainer.update(batch)
        recent = (recent + batch.episodes)[-window:]
        update += 1
        row = {
            "update": update,
            "env_steps": collector.env_steps,
            "episodes": len(batch.episodes),
            "mean_return": float(np.mean([e["return"] for e in recent])) if recent else math.nan,
            "success_rate": float(np.mean([e["success"] for e in recent])) if recent else math.nan,
            "wall_time": round(time.time() - t0, 2),
            **stats,
        }
        history.append(row)
        writer.write(row)
        if update % 10 == 0:
            log.info("update %d steps %d return %.3f success %.3f entropy %.3f", update,
                     row["env_steps"], row["mean_return"], row["success_rate"], row["entropy"])
        if callback is not None and callback(row):
            break
    return model, history
