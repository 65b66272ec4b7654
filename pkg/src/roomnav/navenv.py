"""Learning-facing wrapper around :class:`World`.

Maps policy action indices to simulator actions, supplies instruction tokens
(optionally with room enhancements) and resamples episodes on reset.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .floorplan import FloorPlan, RoomId, shortest_room_path
from .langspec import TRAIN_OBJECTS, EnhancedInstruction, Instruction, all_instructions, encode
from .renderer import to_uint8
from .simworld import Action, EnvParams, EpisodeConfig, World

CONTROLLER_ACTIONS = (Action.FORWARD, Action.TURN_LEFT, Action.TURN_RIGHT, Action.QUERY)
FLAT_ACTIONS = (Action.FORWARD, Action.TURN_LEFT, Action.TURN_RIGHT, Action.DONE)


def oracle_enhance(plan: FloorPlan, current_room: RoomId, goal_room: RoomId) -> RoomId:
    """Next room to visit on the shortest room path; corridor hops are skipped."""
    if current_room == goal_room:
        return goal_room
    for room in shortest_room_path(plan, current_room, goal_room)[1:]:
        if room is not RoomId.CORRIDOR:
            return room
    return goal_room


def ground_truth_gate(world: World, obs=None, instruction=None) -> bool:
    return world.geodesic <= world.params.success_radius


class NavEnv:
    """Episodic environment over a pool of floor plans.

    ``mode`` is ``"controller"`` (Forward/Left/Right/Query) or ``"flat"``
    (Forward/Left/Right/Done). ``enhance`` is ``"oracle"`` or ``"none"``.
    A Query is resolved by ``gate``; a positive gate turns it into Done.
    """

    def __init__(self, plans: Sequence[FloorPlan], params: EnvParams = EnvParams(), *,
                 mode: str = "controller", enhance: str = "oracle",
                 objects: Sequence[tuple[str, str]] = TRAIN_OBJECTS, n_distractors: int = 0,
                 soft_termination: bool = True, seed: int = 0,
                 gate: Callable = ground_truth_gate):
        if mode not in ("controller", "flat"):
            raise ValueError(f"unknown mode {mode!r}")
        if enhance not in ("oracle", "none"):
            raise ValueError(f"unknown enhance {enhance!r}")
        self.plans = list(plans)
        self.params = params
        self.mode = mode
        self.actions = CONTROLLER_ACTIONS if mode == "controller" else FLAT_ACTIONS
        self.enhance = enhance
        self.instructions = all_instructions(objects)
        self.n_distractors = n_distractors
        self.soft_termination = soft_termination
        self.gate = gate
        self.rng = np.random.default_rng(seed)
        self._worlds: dict[int, World] = {}
        self.world: Optional[World] = None
        self.instruction: Optional[Instruction] = None
        self.enhancement: Optional[RoomId] = None
        self._room = None

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    def _world(self, plan: FloorPlan) -> World:
        w = self._worlds.get(plan.plan_id)
        if w is None:
            w = self._worlds[plan.plan_id] = World(plan, self.params)
        return w

    def episode_config(self) -> EpisodeConfig:
        plan = self.plans[self.rng.integers(len(self.plans))]
        instr = self.instructions[self.rng.integers(len(self.instructions))]
        return EpisodeConfig(plan.plan_id, instr, self.n_distractors, self.soft_termination,
                             self.params.max_steps, int(self.rng.integers(2**31)))

    def reset(self, config: Optional[EpisodeConfig] = None) -> dict:
        config = config or self.episode_config()
        plan = next(p for p in self.plans if p.plan_id == config.plan_id)
        self.world = self._world(plan)
        _, obs = self.world.reset(config)
        self.instruction = config.goal
        self._room = None
        self._refresh_enhancement()
        return self._obs(obs)

    def _refresh_enhancement(self):
        s = self.world.state
        if self.enhance == "oracle" and s.current_room != self._room:
            self.enhancement = oracle_enhance(self.world.plan, s.current_room, s.goal_object.room)
        elif self.enhance == "none":
            self.enhancement = None
        self._room = s.current_room

    def tokens(self) -> np.ndarray:
        return encode(EnhancedInstruction(self.instruction, self.enhancement))

    def _obs(self, obs) -> dict:
        return {"image": to_uint8(obs), "tokens": self.tokens()}

    def step(self, a: int):
        action = self.actions[a]
        query = action is Action.QUERY
        if query and self.gate(self.world, self.world._obs, self.instruction):
            action = Action.DONE
        res = self.world.step(action)
        self._refresh_enhancement()
        info = dict(res.info)
        info["query_fired"] = query
        if res.terminated:
            s = self.world.state
            info["episode"] = {"rooms_visited": len(s.visited_rooms - {RoomId.CORRIDOR})}
        return self._obs(res.observation), res.reward, res.terminated, info
