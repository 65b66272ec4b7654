"""Evaluation: seeded success-rate runs, failure modes, room coverage, plots."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .floorplan import FloorPlan, RoomId
from .langspec import HOLDOUT_OBJECTS, TRAIN_OBJECTS, all_instructions
from .rlcore import ConfigError
from .simworld import Action, EnvParams, EpisodeConfig, World

STUCK_WINDOW = 10
STUCK_TOL = 1e-3
FAILURE_MODES = ("Detection", "Stuck", "Timeout")
TRACE_VERSION = 1


@dataclass
class EpisodeTrace:
    """Per-step records of one episode plus the spawn state.

    Record keys: step, action, reward, x, y, heading, room, geodesic_distance,
    used_done, query_fired, enhancement.
    """

    records: list
    outcome: str                 # Success | Failure
    start: dict = field(default_factory=dict)
    plan_id: int = -1
    instruction: str = ""
    seed: int = 0
    success_radius: float = 1.0
    n_rooms: int = 7

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            head = {k: v for k, v in asdict(self).items() if k != "records"}
            fh.write(json.dumps({"trace_version": TRACE_VERSION, **head}) + "\n")
            for r in self.records:
                fh.write(json.dumps(r) + "\n")

    @classmethod
    def load(cls, path) -> "EpisodeTrace":
        with open(path, encoding="utf-8") as fh:
            lines = [json.loads(line) for line in fh if line.strip()]
        head = dict(lines[0])
        if head.pop("trace_version", None) != TRACE_VERSION:
            raise ValueError(f"{path}: unsupported trace version")
        return cls(records=lines[1:], **head)


def classify_failure(trace: EpisodeTrace) -> str:
    """Detection > Stuck > Timeout."""
    if trace.outcome != "Failure":
        raise ValueError("classify_failure expects a failed episode")
    recs = trace.records
    if recs and recs[-1]["used_done"] and recs[-1]["geodesic_distance"] > trace.success_radius:
        return "Detection"
    if len(recs) < STUCK_WINDOW + 1:
        return "Timeout"
    if abs(recs[-1]["geodesic_distance"] - recs[-1 - STUCK_WINDOW]["geodesic_distance"]) <= STUCK_TOL:
        return "Stuck"
    return "Timeout"


def rooms_entered(trace: EpisodeTrace) -> set:
    rooms = {trace.start.get("room")} | {r["room"] for r in trace.records}
    return {r for r in rooms if r is not None and r != RoomId.CORRIDOR.label}


def room_coverage(trace: EpisodeTrace) -> float:
    """Percent of the house's rooms entered (corridor excluded)."""
    return 100.0 * len(rooms_entered(trace)) / trace.n_rooms


def run_episode(agent, world: World, config: EpisodeConfig) -> EpisodeTrace:
    _, obs = world.reset(config)
    s = world.state
    start = {"x": s.pose.x, "y": s.pose.y, "heading": s.pose.heading_index, "room": s.current_room.label,
             "geodesic_distance": world.geodesic}
    agent.reset(world, config.goal, config.seed)
    image = np.round(obs * 255.0).astype(np.uint8)
    records = []
    while not s.terminated:
        action = agent.act(world, image)
        res = world.step(action)
        image = np.round(res.observation * 255.0).astype(np.uint8)
        records.append({
            "step": s.step_count,
            "action": Action(action).name.lower(),
            "reward": res.reward,
            "x": s.pose.x,
            "y": s.pose.y,
            "heading": s.pose.heading_index,
            "room": s.current_room.label,
            "geodesic_distance": res.info["geodesic_distance"],
            "used_done": res.info["used_done"],
            "query_fired": bool(getattr(agent, "queried", False)),
            "enhancement": agent.enhancement.label if getattr(agent, "enhancement", None) is not None else None,
        })
    return EpisodeTrace(records, "Success" if s.succeeded else "Failure", start, world.plan.plan_id,
                        str(config.goal), config.seed, world.params.success_radius,
                        len(world.plan.template.nav_rooms))


@dataclass
class EvalReport:
    agent: str
    split: str
    objects: str
    success_rate: float          # percent, mean over runs
    std: float                   # percent, over runs
    room_coverage: float         # percent
    failure_histogram: dict
    per_run: list
    n_runs: int
    n_episodes: int
    config_hash: str = ""
    traces: list = field(default_factory=list, repr=False)

    def row(self) -> dict:
        return {"agent": self.agent, "split": self.split, "objects": self.objects,
                "success_rate": round(self.success_rate, 3), "std": round(self.std, 3),
                "room_coverage": round(self.room_coverage, 3), "n_runs": self.n_runs,
                "n_episodes": self.n_episodes, **{m.lower(): self.failure_histogram[m] for m in FAILURE_MODES},
                "config_hash": self.config_hash}


def episode_configs(plans: Sequence[FloorPlan], n_episodes: int, seed: int, run: int, *,
                    objects=TRAIN_OBJECTS, n_distractors: int = 0, soft_termination: bool = False,
                    max_steps: int = 500) -> list[EpisodeConfig]:
    """Episode list for one run; identical across agents for paired comparisons."""
    rng = np.random.default_rng([seed, run])
    instructions = all_instructions(objects)
    out = []
    for _ in range(n_episodes):
        plan = plans[rng.integers(len(plans))]
        goal = instructions[rng.integers(len(instructions))]
        out.append(EpisodeConfig(plan.plan_id, goal, n_distractors, soft_termination, max_steps,
                                 int(rng.integers(2**31))))
    return out


def run_eval(agent, plans: Sequence[FloorPlan], *, split: str = "static", objects_mode: str = "single",
             n_runs: int = 10, n_episodes: int = 100, seed: int = 0, params: EnvParams = EnvParams(),
             instructions=TRAIN_OBJECTS, n_distractors: int = 5, soft_termination: bool = False,
             keep_traces: bool = False, config_hash: str = "") -> EvalReport:
    """``n_runs`` seeded runs of ``n_episodes``; mean and std of per-run success in percent."""
    if not plans:
        raise ConfigError("eval.split", f"split {split!r} has no plans")
    if objects_mode not in ("single", "multiple"):
        raise ConfigError("eval.objects", f"expected single|multiple, got {objects_mode!r}")
    distractors = n_distractors if objects_mode == "multiple" else 0
    worlds = {p.plan_id: World(p, params) for p in plans}
    per_run, coverage, traces = [], [], []
    hist = {m: 0 for m in FAILURE_MODES}
    for run in range(n_runs):
        wins = 0
        for cfg in episode_configs(plans, n_episodes, seed, run, objects=instructions, n_distractors=distractors,
                                   soft_termination=soft_termination, max_steps=params.max_steps):
            trace = run_episode(agent, worlds[cfg.plan_id], cfg)
            coverage.append(room_coverage(trace))
            if trace.outcome == "Success":
                wins += 1
            else:
                hist[classify_failure(trace)] += 1
            if keep_traces:
                traces.append(trace)
        per_run.append(100.0 * wins / n_episodes)
    return EvalReport(getattr(agent, "kind", type(agent).__name__), split, objects_mode,
                      float(np.mean(per_run)), float(np.std(per_run)), float(np.mean(coverage)), hist,
                      per_run, n_runs, n_episodes, config_hash, traces)


def transfer_eval(agent, mode: str, *, train_plans=None, holdout_plans=None, ga_objects=None, **kw) -> EvalReport:
    """Zero-shot evaluation on holdout plans or on holdout object combinations.

    For ``holdout_objects`` the agent's assessor must have been trained on
    the holdout vocabulary (``ga_objects``).
    """
    if mode == "holdout_plans":
        return run_eval(agent, holdout_plans, split="holdout", **kw)
    if mode == "holdout_objects":
        if ga_objects is None or not set(HOLDOUT_OBJECTS) <= set(map(tuple, ga_objects)):
            raise ConfigError("ga.objects", "assessor was not trained on the holdout object combinations")
        return run_eval(agent, train_plans, instructions=HOLDOUT_OBJECTS, **kw)
    raise ConfigError("mode", f"expected holdout_plans|holdout_objects, got {mode!r}")


def flat_baseline(cfg, out_dir: Optional[str] = None):
    """Train the non-hierarchical PPO baseline (Forward/Left/Right/Done)."""
    from .hierarchy import train_flat

    return train_flat(cfg, out_dir)


# reports ------------------------------------------------------------------

REPORT_FIELDS = ("agent", "split", "objects", "success_rate", "std", "room_coverage", "n_runs", "n_episodes",
                 "detection", "stuck", "timeout", "config_hash")


def write_reports(reports: Sequence[EvalReport], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_FIELDS)
        w.writeheader()
        for r in reports:
            w.writerow(r.row())


def read_reports(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def failure_histogram(traces: Sequence[EpisodeTrace]) -> dict:
    hist = {m: 0 for m in FAILURE_MODES}
    for t in traces:
        if t.outcome == "Failure":
            hist[classify_failure(t)] += 1
    return hist


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_success(rows: Sequence[dict], path) -> None:
    """Bar chart of success rate per setting with run std as error bars."""
    plt = _pyplot()
    labels = [f"{r['agent']}\n{r['split']}/{r['objects']}" for r in rows]
    fig, ax = plt.subplots(figsize=(max(4, 1.3 * len(rows)), 3.5))
    ax.bar(range(len(rows)), [float(r["success_rate"]) for r in rows],
           yerr=[float(r["std"]) for r in rows], capsize=3, color="#4c72b0")
    ax.set_xticks(range(len(rows)), labels, fontsize=7)
    ax.set_ylabel("success rate (%)")
    ax.set_ylim(0, 100)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_failures(hist: dict, path, title: str = "") -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.bar(list(hist), list(hist.values()), color=["#c44e52", "#8172b2", "#ccb974"][:len(hist)])
    ax.set_ylabel("failed episodes")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_training(metrics_paths: Sequence[str], path, key: str = "success_rate") -> None:
    """Training curves (``key`` against environment steps) from metrics CSVs."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for p in metrics_paths:
        with open(p, newline="") as fh:
            rows = list(csv.DictReader(fh))
        xs = [int(r["env_steps"]) for r in rows]
        ys = [float(r[key]) if r[key] not in ("", "nan") else math.nan for r in rows]
        ax.plot(xs, ys, label=os.path.basename(os.path.dirname(p)) or os.path.basename(p))
    ax.set_xlabel("environment steps")
    ax.set_ylabel(key.replace("_", " "))
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
