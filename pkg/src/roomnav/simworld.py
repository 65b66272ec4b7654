"""Continuous 2D house simulator with geodesic-progress reward.

Per-step reward is ``-(geo_after - geo_before) - slack`` plus a success bonus
when a Done action is issued within ``success_radius`` of the goal object.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .floorplan import AGENT_RADIUS, FloorPlan, RoomId
from .langspec import COLORS, SHAPES, Instruction
from .navgrid import nav_grid, point_segment_distance, swept_clearance
from .renderer import DEFAULT_CAMERA, Camera, render_layers

N_HEADINGS = 16
SLACK = 0.01
SUCCESS_BONUS = 10.0


class Action(enum.IntEnum):
    FORWARD = 0
    TURN_LEFT = 1
    TURN_RIGHT = 2
    DONE = 3
    QUERY = 4


class PlacementError(RuntimeError):
    pass


class LifecycleError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvParams:
    step_len: float = 0.4
    n_headings: int = N_HEADINGS
    agent_radius: float = AGENT_RADIUS
    success_radius: float = 1.0
    max_steps: int = 500
    object_radius: float = 0.2
    wall_clearance: float = 0.5
    object_spacing: float = 0.8
    camera: Camera = DEFAULT_CAMERA


@dataclass(frozen=True)
class AgentPose:
    x: float
    y: float
    heading_index: int

    @property
    def heading(self) -> float:
        return (2 * math.pi * self.heading_index / N_HEADINGS) % (2 * math.pi)


@dataclass(frozen=True)
class ObjectInstance:
    shape: str
    color: str
    position: tuple[float, float]
    room: RoomId


@dataclass(frozen=True)
class EpisodeConfig:
    plan_id: int
    goal: Instruction
    n_distractors: int = 0
    soft_termination: bool = False
    max_steps: int = 500
    seed: int = 0
    goal_room: Optional[RoomId] = None
    distractor_objects: Optional[tuple] = None  # (color, shape) pool; default all combos

    def __post_init__(self):
        if self.max_steps <= 0:
            raise ValueError("max_steps must be positive")
        if self.n_distractors < 0:
            raise ValueError("n_distractors must be non-negative")


@dataclass
class WorldState:
    pose: AgentPose
    objects: list
    goal_index: int
    step_count: int = 0
    cumulative_reward: float = 0.0
    current_room: RoomId = RoomId.CORRIDOR
    visited_rooms: set = field(default_factory=set)
    terminated: bool = False
    succeeded: bool = False

    @property
    def goal_object(self) -> ObjectInstance:
        return self.objects[self.goal_index]


@dataclass
class StepResult:
    observation: Optional[np.ndarray]
    reward: float
    terminated: bool
    info: dict


def _sample_object_position(rng, footprint, clearance, placed, spacing, tries=200):
    for _ in range(tries):
        x = rng.uniform(footprint.x0 + clearance, footprint.x1 - clearance)
        y = rng.uniform(footprint.y0 + clearance, footprint.y1 - clearance)
        if all(math.hypot(x - o.position[0], y - o.position[1]) >= spacing for o in placed):
            return x, y
    return None


class World:
    """One environment instance bound to a floor plan.

    ``reset`` samples a new episode, ``step`` advances it. The goal-object
    distance field is cached for the episode.
    """

    def __init__(self, plan: FloorPlan, params: EnvParams = EnvParams()):
        self.plan = plan
        self.params = params
        self.grid = nav_grid(plan)
        self.state: Optional[WorldState] = None
        self.config: Optional[EpisodeConfig] = None
        self._field = None
        self._geo = math.nan
        self._obs = None
        self._ids = None

    # episode lifecycle --------------------------------------------------
    def reset(self, config: EpisodeConfig) -> tuple[WorldState, np.ndarray]:
        p = self.params
        rng = np.random.default_rng(config.seed)
        rooms = self.plan.template.nav_rooms
        goal_room = config.goal_room if config.goal_room is not None else rooms[rng.integers(len(rooms))]
        pool = config.distractor_objects or tuple((c, s) for c in COLORS for s in SHAPES)
        pool = [o for o in pool if not config.goal.matches(*o)]
        if config.n_distractors and not pool:
            raise PlacementError("no non-matching distractor objects available")

        objects: list[ObjectInstance] = []
        specs = [(config.goal.color, config.goal.shape, goal_room)]
        for _ in range(config.n_distractors):
            color, shape = pool[rng.integers(len(pool))]
            specs.append((color, shape, rooms[rng.integers(len(rooms))]))
        for color, shape, room in specs:
            foot = self.plan.template.room(room).footprint
            pos = _sample_object_position(rng, foot, p.wall_clearance, objects, p.object_spacing)
            if pos is None:
                raise PlacementError(f"could not place {color} {shape} in {room.label}")
            objects.append(ObjectInstance(shape, color, pos, room))

        cells = self.grid.free_cells(rooms)
        centers = np.stack(self.grid.cell_center(cells[:, 0], cells[:, 1]), axis=1)
        clear = np.ones(len(cells), dtype=bool)
        for o in objects:
            clear &= np.hypot(centers[:, 0] - o.position[0], centers[:, 1] - o.position[1]) \
                >= p.agent_radius + p.object_radius
        if not clear.any():
            raise PlacementError("no free spawn cell")
        cx, cy = centers[rng.choice(np.flatnonzero(clear))]
        pose = AgentPose(float(cx), float(cy), int(rng.integers(p.n_headings)))
        room = self.grid.room_at(pose.x, pose.y)
        self.state = WorldState(pose, objects, 0, current_room=room, visited_rooms={room})
        self.config = config
        gx, gy = self.grid.snap(*objects[0].position)
        self._field = self.grid.distance_field(gx, gy)
        self._geo = self.goal_distance(pose.x, pose.y)
        return self.state, self.observe()

    def place_agent(self, pose: AgentPose) -> np.ndarray:
        """Teleport the agent mid-episode (data collection only); returns the new view."""
        s = self.state
        if s is None:
            raise LifecycleError("place_agent() before reset()")
        self.grid.snap(pose.x, pose.y)
        s.pose = pose
        s.current_room = self.grid.room_at(pose.x, pose.y)
        s.visited_rooms.add(s.current_room)
        self._geo = self.goal_distance(pose.x, pose.y)
        return self.observe()

    def goal_distance(self, x: float, y: float) -> float:
        ix, iy = self.grid.snap(x, y)
        return float(self._field[iy, ix])

    @property
    def geodesic(self) -> float:
        return self._geo

    def observe(self) -> np.ndarray:
        self._obs, self._ids = render_layers(self.plan, self.state.pose, self.state.objects, self.params.camera)
        return self._obs

    @property
    def object_ids(self) -> np.ndarray:
        """Object index buffer of the last rendered observation."""
        return self._ids

    def _blocked(self, p0, p1) -> bool:
        p = self.params
        if swept_clearance(p0, p1, self.grid.walls) < p.agent_radius - 1e-9:
            return True
        motion = np.array([[p0[0], p0[1], p1[0], p1[1]]])
        for o in self.state.objects:
            if point_segment_distance(o.position[0], o.position[1], motion)[0] < p.agent_radius + p.object_radius:
                return True
        return False

    def step(self, action: Action, render: bool = True) -> StepResult:
        s = self.state
        if s is None or s.terminated:
            raise LifecycleError("step() on a terminated or unstarted episode")
        action = Action(action)
        p = self.params
        pose = s.pose
        used_done = action is Action.DONE
        query_fired = action is Action.QUERY
        if action is Action.FORWARD:
            h = pose.heading
            nx, ny = pose.x + p.step_len * math.cos(h), pose.y + p.step_len * math.sin(h)
            if not self._blocked((pose.x, pose.y), (nx, ny)):
                pose = AgentPose(nx, ny, pose.heading_index)
        elif action is Action.TURN_LEFT:
            pose = AgentPose(pose.x, pose.y, (pose.heading_index + 1) % p.n_headings)
        elif action is Action.TURN_RIGHT:
            pose = AgentPose(pose.x, pose.y, (pose.heading_index - 1) % p.n_headings)

        before = self._geo
        after = self.goal_distance(pose.x, pose.y) if pose is not s.pose else before
        reward = -(after - before) - SLACK
        s.pose = pose
        s.step_count += 1
        s.current_room = self.grid.room_at(pose.x, pose.y)
        s.visited_rooms.add(s.current_room)
        self._geo = after

        success = used_done and after <= p.success_radius
        if success:
            reward += SUCCESS_BONUS
            s.terminated = s.succeeded = True
        elif used_done and not self.config.soft_termination:
            s.terminated = True
        timeout = not s.terminated and s.step_count >= self.config.max_steps
        if timeout:
            s.terminated = True
        s.cumulative_reward += reward
        obs = self.observe() if render else None
        info = {
            "geodesic_distance": after,
            "current_room": s.current_room,
            "used_done": used_done,
            "query_fired": query_fired,
            "success": success,
            "timeout": timeout,
        }
        return StepResult(obs, reward, s.terminated, info)


def reset(plan: FloorPlan, config: EpisodeConfig, params: EnvParams = EnvParams()):
    """Functional form: returns ``(world, state, observation)``."""
    world = World(plan, params)
    state, obs = world.reset(config)
    return world, state, obs


# trace log -------------------------------------------------------------

TRACE_FIELDS = ("step", "action", "reward", "x", "y", "heading", "room",
                "geodesic_distance", "used_done", "query_fired", "terminated", "succeeded")
TRACE_VERSION = 1


def trace_record(world: World, action: Action, result: StepResult) -> dict:
    s = world.state
    return {
        "step": s.step_count,
        "action": Action(action).name.lower(),
        "reward": result.reward,
        "x": s.pose.x,
        "y": s.pose.y,
        "heading": s.pose.heading_index,
        "room": s.current_room.label,
        "geodesic_distance": result.info["geodesic_distance"],
        "used_done": result.info["used_done"],
        "query_fired": result.info["query_fired"],
        "terminated": s.terminated,
        "succeeded": s.succeeded,
    }


def write_trace(path, records: Sequence[dict], header: Optional[dict] = None) -> None:
    """One JSON object per line, keys in ``TRACE_FIELDS`` order; optional header first."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"trace_version": TRACE_VERSION, "fields": list(TRACE_FIELDS), **(header or {})}) + "\n")
        for rec in records:
            fh.write(json.dumps({k: rec[k] for k in TRACE_FIELDS}) + "\n")


def read_trace(path) -> tuple[dict, list[dict]]:
    with open(path, encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    return lines[0], lines[1:]
