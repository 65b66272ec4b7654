"""Room-level abstractions: the meta reward and the room-coverage MDP.

The coverage MDP assumes a controller that always reaches the requested
room when it is one hop away (directly or through the corridor).
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..floorplan import ROOMS, FloorPlan, RoomId
from ..langspec import TRAIN_OBJECTS, all_instructions, encode
from ..renderer import DEFAULT_CAMERA, render_layers, to_uint8
from ..simworld import AgentPose

NEW_ROOM_REWARD = 0.1
SLACK_PENALTY = -0.01
ENHANCEMENTS = ROOMS  # meta action index -> room


def meta_reward(extrinsic: Sequence[float], gamma: float, c: int | None = None) -> float:
    """Discounted window reward normalised by the nominal window length ``c``.

    A window cut short by termination keeps the nominal normaliser.
    """
    if len(extrinsic) == 0:
        return 0.0
    c = len(extrinsic) if c is None else c
    total = 0.0
    discount = 1.0
    for r in extrinsic:
        total += discount * r
        discount *= gamma
    return total / c


@dataclass(frozen=True)
class AbstractRoomState:
    current: RoomId
    visited: frozenset = field(default_factory=frozenset)
    steps: int = 0

    def __post_init__(self):
        if self.current not in self.visited:
            object.__setattr__(self, "visited", self.visited | {self.current})


def one_hop(plan: FloorPlan, current: RoomId, target: RoomId) -> bool:
    """``target`` is reachable from ``current`` through one doorway or via the corridor."""
    if target == current or target not in plan.room_graph:
        return False
    nbrs = plan.room_graph[current]
    if target in nbrs:
        return True
    return RoomId.CORRIDOR in nbrs and target in plan.room_graph[RoomId.CORRIDOR]


def abstract_step(plan: FloorPlan, state: AbstractRoomState, z: RoomId) -> tuple[AbstractRoomState, float]:
    if not one_hop(plan, state.current, z):
        return AbstractRoomState(state.current, state.visited, state.steps + 1), SLACK_PENALTY
    reward = NEW_ROOM_REWARD if z not in state.visited else SLACK_PENALTY
    return AbstractRoomState(z, state.visited | {z}, state.steps + 1), reward


@functools.lru_cache(maxsize=2048)
def room_view(plan: FloorPlan, room: RoomId, heading_index: int = 0) -> np.ndarray:
    """uint8 view from the center of ``room``."""
    cx, cy = plan.template.room(room).footprint.center
    img, _ = render_layers(plan, AgentPose(cx, cy, heading_index), [], DEFAULT_CAMERA)
    return to_uint8(img)


class AbstractRoomEnv:
    """Coverage MDP as a learning environment with a fixed horizon."""

    def __init__(self, plans: Sequence[FloorPlan], horizon: int = 14, seed: int = 0,
                 objects=TRAIN_OBJECTS):
        self.plans = list(plans)
        self.horizon = horizon
        self.rng = np.random.default_rng(seed)
        self.instructions = all_instructions(objects)
        self.plan = None
        self.state = None
        self._tokens = None

    n_actions = len(ENHANCEMENTS)

    def reset(self, plan: FloorPlan | None = None, start: RoomId | None = None) -> dict:
        self.plan = plan or self.plans[self.rng.integers(len(self.plans))]
        rooms = self.plan.template.nav_rooms
        start = start if start is not None else rooms[self.rng.integers(len(rooms))]
        self.state = AbstractRoomState(start)
        self._tokens = encode(self.instructions[self.rng.integers(len(self.instructions))])
        return self._obs()

    def _obs(self) -> dict:
        return {"image": room_view(self.plan, self.state.current), "tokens": self._tokens}

    def step(self, a: int):
        self.state, reward = abstract_step(self.plan, self.state, ENHANCEMENTS[a])
        done = self.state.steps >= self.horizon
        info = {"rooms_visited": len(self.state.visited), "current_room": self.state.current}
        if done:
            info["episode"] = {"rooms_visited": len(self.state.visited)}
        return self._obs(), reward, done, info


def best_coverage_return(plan: FloorPlan, start: RoomId, horizon: int) -> float:
    """Optimal undiscounted return of the coverage MDP by dynamic programming."""

    @functools.lru_cache(maxsize=None)
    def best(current: RoomId, visited: frozenset, left: int) -> float:
        if left == 0:
            return 0.0
        out = -math.inf
        for z in ENHANCEMENTS:
            nxt, r = abstract_step(plan, AbstractRoomState(current, visited), z)
            out = max(out, r + best(nxt.current, nxt.visited, left - 1))
        return out

    return best(start, frozenset({start}), horizon)
