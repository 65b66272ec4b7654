"""Goal assessment: does this frame show the instructed object close enough?

Labels come from simulator ground truth (visible pixel count and geodesic
distance); at inference the classifier sees only pixels and tokens.
"""

from __future__ import annotations

import logging
import math
import os
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .floorplan import FloorPlan
from .langspec import COLORS, SHAPES, TRAIN_OBJECTS, Instruction, all_instructions, encode, parse_instruction
from .renderer import to_uint8, visible_pixels
from .rlcore import ArchConfig, CheckpointError, read_checkpoint, save_checkpoint
from .rlcore.policy import ImageEncoder, TokenEncoder
from .simworld import AgentPose, EnvParams, EpisodeConfig, PlacementError, World

log = logging.getLogger(__name__)

DATASET_VERSION = 1
MIN_VISIBLE_PIXELS = 20
NEAR_RING = (0.5, 1.5)
WORLD_CACHE = 16
DISTANCE_LIMIT = 3.0  # goal distances beyond this are stored as inf


class TrainingError(RuntimeError):
    pass


def combo_index(color: str, shape: str) -> int:
    return COLORS.index(color) * len(SHAPES) + SHAPES.index(shape)


@dataclass
class GaDataset:
    """Stacked samples. ``qualifying`` is a bitmask over color/shape combos
    that are visible-and-near in the frame."""

    images: np.ndarray        # (N, H, W, 3) uint8
    tokens: np.ndarray        # (N, SEQ_LEN) int64
    labels: np.ndarray        # (N,) uint8
    goal_distance: np.ndarray  # (N,) float32, nearest instance matching the instruction
    goal_pixels: np.ndarray   # (N,) int32, visible pixels of that instance
    qualifying: np.ndarray    # (N,) int32
    texts: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "GaDataset":
        idx = np.asarray(idx)
        return GaDataset(self.images[idx], self.tokens[idx], self.labels[idx], self.goal_distance[idx],
                         self.goal_pixels[idx], self.qualifying[idx], [self.texts[i] for i in idx])

    @property
    def positive_fraction(self) -> float:
        return float(self.labels.mean()) if len(self) else math.nan


def _empty(image_size: int = 64) -> GaDataset:
    return GaDataset(np.zeros((0, image_size, image_size, 3), np.uint8), np.zeros((0, 8), np.int64),
                     np.zeros(0, np.uint8), np.zeros(0, np.float32), np.zeros(0, np.int32), np.zeros(0, np.int32), [])


def _near_pose(world: World, rng: np.random.Generator, target) -> Optional[AgentPose]:
    """Pose on a ring around ``target`` facing it, or None if none is free."""
    p = world.params
    ox, oy = target.position
    for _ in range(20):
        r = rng.uniform(*NEAR_RING)
        theta = rng.uniform(0, 2 * math.pi)
        x, y = ox + r * math.cos(theta), oy + r * math.sin(theta)
        ix, iy = world.grid.cell_of(x, y)
        if not world.grid.free[iy, ix]:
            continue
        if any(math.hypot(x - o.position[0], y - o.position[1]) < p.agent_radius + p.object_radius
               for o in world.state.objects):
            continue
        facing = math.atan2(oy - y, ox - x)
        k = int(round(facing / (2 * math.pi) * p.n_headings)) + int(rng.integers(-1, 2))
        return AgentPose(x, y, k % p.n_headings)
    return None


class _FrameFacts:
    """Visible pixels per object; geodesic distances computed on demand."""

    def __init__(self, world: World, limit: float):
        self.world = world
        self.limit = limit
        self.px = visible_pixels(world.object_ids, len(world.state.objects))
        self._dist: dict[int, float] = {}

    def dist(self, k: int) -> float:
        d = self._dist.get(k)
        if d is None:
            w, s = self.world, self.world.state
            if k == s.goal_index:
                d = w.goal_distance(s.pose.x, s.pose.y)
                d = d if d <= self.limit else math.inf
            else:
                d = w.grid.local_geodesic((s.pose.x, s.pose.y), s.objects[k].position, self.limit)
            self._dist[k] = d
        return d


def collect_ga_dataset(plans: Sequence[FloorPlan], n_frames: int, seed: int, *,
                       objects=TRAIN_OBJECTS, params: EnvParams = EnvParams(), n_distractors: int = 5,
                       episode_len: int = 32, near_spawn_prob: float = 0.5,
                       min_pixels: int = MIN_VISIBLE_PIXELS) -> GaDataset:
    """Random-walk frames labeled against the instruction set ``objects``."""
    if n_frames <= 0:
        return _empty(params.camera.width)
    rng = np.random.default_rng(seed)
    instructions = all_instructions(objects)
    combos = np.array([combo_index(i.color, i.shape) for i in instructions])
    worlds: OrderedDict[int, World] = OrderedDict()  # bounded: each world pins its grid and fields
    images = np.empty((n_frames, params.camera.height, params.camera.width, 3), np.uint8)
    rows = []
    radius = params.success_radius
    while len(rows) < n_frames:
        plan = plans[rng.integers(len(plans))]
        world = worlds.pop(plan.plan_id, None) or World(plan, params)
        worlds[plan.plan_id] = world
        if len(worlds) > WORLD_CACHE:
            worlds.popitem(last=False)
        goal = instructions[rng.integers(len(instructions))]
        try:
            world.reset(EpisodeConfig(plan.plan_id, goal, n_distractors, soft_termination=True,
                                      max_steps=episode_len + 1, seed=int(rng.integers(2**31))))
        except PlacementError:
            continue
        if rng.random() < near_spawn_prob:
            objs = world.state.objects
            pose = _near_pose(world, rng, objs[rng.integers(len(objs))])
            if pose is not None:
                world.place_agent(pose)
        for t in range(episode_len):
            if len(rows) >= n_frames:
                break
            images[len(rows)] = to_uint8(world._obs)
            facts = _FrameFacts(world, DISTANCE_LIMIT)
            px = facts.px
            objs = world.state.objects
            qual_objs = [k for k, o in enumerate(objs)
                         if px[k] >= min_pixels and combo_index(o.color, o.shape) in combos
                         and facts.dist(k) <= radius]
            mask = 0
            for k in qual_objs:
                mask |= 1 << combo_index(objs[k].color, objs[k].shape)
            if qual_objs and rng.random() < 0.5:
                o = objs[qual_objs[rng.integers(len(qual_objs))]]
                instr, label = Instruction(o.color, o.shape), 1
            else:
                pool = [i for i, c in zip(instructions, combos) if not mask >> c & 1]
                instr, label = pool[rng.integers(len(pool))], 0
            match = [k for k, o in enumerate(objs) if instr.matches(o.color, o.shape)]
            if match:
                k = min(match, key=lambda j: (facts.dist(j), -px[j]))
                gd, gp = float(facts.dist(k)), int(px[k])
            else:
                gd, gp = math.inf, 0
            rows.append((encode(instr), label, gd, gp, mask, str(instr)))
            world.step(int(rng.integers(3)))  # Forward / TurnLeft / TurnRight
    tokens, labels, gd, gp, mask, texts = zip(*rows)
    return GaDataset(images, np.stack(tokens), np.array(labels, np.uint8), np.array(gd, np.float32),
                     np.array(gp, np.int32), np.array(mask, np.int32), list(texts))


def label_violations(ds: GaDataset, success_radius: float = 1.0, min_pixels: int = MIN_VISIBLE_PIXELS) -> int:
    """Positives that break the visible-and-near rule."""
    pos = ds.labels == 1
    bad = pos & ((ds.goal_pixels < min_pixels) | ~(ds.goal_distance <= success_radius))
    return int(bad.sum())


def save_dataset(ds: GaDataset, out_dir) -> str:
    """PNG frames plus a tab-separated index; returns the index path."""
    from PIL import Image

    os.makedirs(os.path.join(out_dir, "frames"), exist_ok=True)
    index = os.path.join(out_dir, "index.tsv")
    with open(index, "w", encoding="utf-8") as fh:
        fh.write(f"# roomnav-ga-dataset v{DATASET_VERSION}\n")
        fh.write("path\tinstruction\tlabel\tgoal_distance\tgoal_pixels\tqualifying\n")
        for i in range(len(ds)):
            rel = f"frames/{i:06d}.png"
            Image.fromarray(ds.images[i]).save(os.path.join(out_dir, rel), compress_level=1)
            fh.write(f"{rel}\t{ds.texts[i]}\t{int(ds.labels[i])}\t{float(ds.goal_distance[i]):.4f}\t"
                     f"{int(ds.goal_pixels[i])}\t{int(ds.qualifying[i])}\n")
    return index


def load_dataset(path) -> GaDataset:
    """Read a directory written by :func:`save_dataset` (or its index file)."""
    from PIL import Image

    index = path if os.path.isfile(path) else os.path.join(path, "index.tsv")
    root = os.path.dirname(index)
    with open(index, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != f"# roomnav-ga-dataset v{DATASET_VERSION}":
            raise ValueError(f"{index}: unsupported dataset header {header!r}")
        fh.readline()
        rows = [line.rstrip("\n").split("\t") for line in fh if line.strip()]
    if not rows:
        return _empty()
    images = np.stack([np.asarray(Image.open(os.path.join(root, r[0])).convert("RGB")) for r in rows])
    texts = [r[1] for r in rows]
    tokens = np.stack([encode(parse_instruction(t)) for t in texts])
    return GaDataset(images, tokens, np.array([int(r[2]) for r in rows], np.uint8),
                     np.array([float(r[3]) for r in rows], np.float32), np.array([int(r[4]) for r in rows], np.int32),
                     np.array([int(r[5]) for r in rows], np.int32), texts)


class GoalAssessor(nn.Module):
    """Image and instruction features fused into one logit."""

    def __init__(self, arch: ArchConfig = ArchConfig()):
        super().__init__()
        self.arch = arch
        self.image = ImageEncoder(arch)
        self.tokens = TokenEncoder(arch)
        self.gate = nn.Linear(arch.embed_dim, arch.feat_dim)
        self.fuse = nn.Linear(arch.feat_dim + arch.embed_dim, arch.hidden)
        self.head = nn.Linear(arch.hidden, 1)

    def forward(self, obs: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        img = self.image(obs)
        tok = self.tokens(tokens)
        # Instruction-dependent gating of image features keeps the decision conditional.
        img = img * torch.sigmoid(self.gate(tok))
        h = F.relu(self.fuse(torch.cat([img, tok], dim=-1)))
        return self.head(h).squeeze(-1)


@torch.no_grad()
def predict_proba(model: GoalAssessor, images: np.ndarray, tokens: np.ndarray, batch: int = 512) -> np.ndarray:
    model.eval()
    out = []
    for i in range(0, len(images), batch):
        logits = model(torch.from_numpy(images[i:i + batch]), torch.from_numpy(tokens[i:i + batch]))
        out.append(torch.sigmoid(logits).numpy())
    return np.concatenate(out) if out else np.zeros(0, np.float32)


@torch.no_grad()
def assess(model: GoalAssessor, obs: np.ndarray, tokens: np.ndarray, threshold: float = 0.5) -> int:
    """1 iff sigmoid(logit) >= threshold."""
    model.eval()
    logit = model(torch.from_numpy(np.asarray(obs)[None]), torch.from_numpy(np.asarray(tokens)[None]))
    return int(torch.sigmoid(logit).item() >= threshold)


def accuracy(model: GoalAssessor, ds: GaDataset, threshold: float = 0.5) -> float:
    if len(ds) == 0:
        return math.nan
    return float(((predict_proba(model, ds.images, ds.tokens) >= threshold) == (ds.labels == 1)).mean())


def recall_precision(model: GoalAssessor, ds: GaDataset, threshold: float = 0.5) -> dict:
    if len(ds) == 0:
        return {"recall": math.nan, "precision": math.nan}
    pred = predict_proba(model, ds.images, ds.tokens) >= threshold
    truth = ds.labels == 1
    tp = float((pred & truth).sum())
    return {"recall": tp / truth.sum() if truth.any() else math.nan,
            "precision": tp / pred.sum() if pred.any() else math.nan}


def flip_error(model: GoalAssessor, ds: GaDataset, seed: int = 0, threshold: float = 0.5,
               objects=TRAIN_OBJECTS) -> float:
    """Fraction of true positives still judged positive after swapping in a non-matching instruction."""
    rng = np.random.default_rng(seed)
    instructions = all_instructions(objects)
    pos = np.flatnonzero(ds.labels == 1)
    if len(pos) == 0:
        return math.nan
    flipped = []
    for i in pos:
        pool = [ins for ins in instructions if not ds.qualifying[i] >> combo_index(ins.color, ins.shape) & 1]
        flipped.append(encode(pool[rng.integers(len(pool))]))
    probs = predict_proba(model, ds.images[pos], np.stack(flipped))
    return float((probs >= threshold).mean())


def train_ga(ds: GaDataset, *, epochs: int = 12, patience: int = 3, batch_size: int = 128, lr: float = 1e-3,
             val_fraction: float = 0.2, seed: int = 0, arch: ArchConfig = ArchConfig(),
             balance: bool = True, metrics_path=None):
    """Binary cross-entropy with early stopping on validation accuracy.

    With ``balance`` positives are weighted by the negative/positive ratio so
    the rare positive class is not ignored. Returns ``(model, report)``; the
    best-validation weights are kept.
    """
    if len(ds) == 0 or len(np.unique(ds.labels)) < 2:
        raise TrainingError("dataset needs both positive and negative samples")
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    order = rng.permutation(len(ds))
    n_val = int(round(val_fraction * len(ds))) if len(ds) >= 5 else 0
    val_idx, train_idx = order[:n_val], order[n_val:]
    train, val = ds.subset(np.sort(train_idx)), ds.subset(np.sort(val_idx))
    model = GoalAssessor(arch)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    labels = torch.from_numpy(train.labels.astype(np.float32))
    n_pos = max(int(train.labels.sum()), 1)
    pos_weight = torch.tensor((len(train) - n_pos) / n_pos if balance else 1.0)
    best, best_state, best_epoch, stale = -1.0, None, 0, 0
    history = []
    for epoch in range(1, epochs + 1):
        model.train()
        perm = rng.permutation(len(train))
        total = 0.0
        for i in range(0, len(perm), batch_size):
            b = np.sort(perm[i:i + batch_size])
            logits = model(torch.from_numpy(train.images[b]), torch.from_numpy(train.tokens[b]))
            loss = F.binary_cross_entropy_with_logits(logits, labels[b], pos_weight=pos_weight)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(b)
        score = accuracy(model, val) if n_val else accuracy(model, train)
        history.append({"epoch": epoch, "train_loss": total / len(train), "val_accuracy": score})
        log.info("ga epoch %d loss %.4f val_acc %.4f", epoch, total / len(train), score)
        if score > best:
            best, best_epoch, stale = score, epoch, 0
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
        else:
            stale += 1
            if stale >= patience:
                break
    model.load_state_dict(best_state)
    model.eval()
    report = {
        "n_train": len(train), "n_val": n_val, "best_epoch": best_epoch,
        "train_accuracy": accuracy(model, train),
        "val_accuracy": accuracy(model, val) if n_val else math.nan,
        "val_flip_error": flip_error(model, val, seed) if n_val else math.nan,
        **{f"val_{k}": v for k, v in recall_precision(model, val).items()},
        "positive_fraction": ds.positive_fraction,
    }
    if metrics_path:
        import csv

        with open(metrics_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(history[0]))
            w.writeheader()
            w.writerows(history)
    return model, report


def save_ga(path, model: GoalAssessor, threshold: float = 0.5, **extra) -> None:
    save_checkpoint(path, model, {"model": "goal_assessor", "kind": "ga", "arch": model.arch.to_dict(),
                                  "threshold": threshold, **extra})


def load_ga(path) -> GoalAssessor:
    meta, state = read_checkpoint(path)
    if meta.get("model") != "goal_assessor":
        raise CheckpointError(f"{path}: holds a {meta.get('model')!r}, not a goal assessor")
    model = GoalAssessor(ArchConfig.from_dict(meta["arch"]))
    model.load_state_dict(state)
    model.eval()
    return model
