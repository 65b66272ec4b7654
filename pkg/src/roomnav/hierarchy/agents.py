"""Closed-loop agents used at evaluation time.

All agents share ``reset(world, instruction, seed)`` and ``act(world, image)``
returning a simulator :class:`Action`. ``image`` is the uint8 observation.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np
import torch

from ..floorplan import RoomId
from ..langspec import EnhancedInstruction, Instruction, encode
from ..navenv import CONTROLLER_ACTIONS, FLAT_ACTIONS, oracle_enhance
from ..rlcore import CheckpointError, RecurrentPolicy, load_policy, read_checkpoint
from ..simworld import Action, World
from .abstract import ENHANCEMENTS

Gate = Callable[[World, np.ndarray, Instruction], bool]


class CompositionError(ValueError):
    pass


def oracle_gate(world: World, image=None, instruction=None) -> bool:
    """Ground truth: the matching goal object is within the success radius."""
    return world.geodesic <= world.params.success_radius


def never_gate(world: World, image=None, instruction=None) -> bool:
    return False


class GaGate:
    """Wraps a trained goal-assessment model as a gate."""

    def __init__(self, model, threshold: float = 0.5):
        self.model = model
        self.threshold = threshold

    def __call__(self, world, image, instruction) -> bool:
        from ..goalassess import assess

        return bool(assess(self.model, image, encode(instruction), self.threshold))


class _PolicyDriver:
    """Recurrent policy stepping with either sampled or greedy actions."""

    def __init__(self, model: RecurrentPolicy, greedy: bool = False):
        self.model = model
        self.greedy = greedy
        self.gen = torch.Generator()
        self.h = None

    def reset(self, seed: int):
        self.gen.manual_seed(int(seed))
        self.h = self.model.initial_state(1)

    @torch.no_grad()
    def __call__(self, image: np.ndarray, tokens: np.ndarray) -> int:
        logits, _, self.h = self.model.step(torch.from_numpy(image[None]), torch.from_numpy(tokens[None]), self.h)
        if self.greedy:
            return int(logits.argmax(-1))
        return int(torch.multinomial(logits.softmax(-1), 1, generator=self.gen))


class ControllerAgent:
    """Controller alone, enhanced by the training oracle (or not at all)."""

    kind = "controller"
    queried = False

    def __init__(self, controller: RecurrentPolicy, enhance: str = "oracle", gate: Gate = oracle_gate,
                 greedy: bool = False):
        self.driver = _PolicyDriver(controller, greedy)
        self.enhance = enhance
        self.gate = gate
        self.instruction = None
        self.enhancement: Optional[RoomId] = None
        self._room = None

    def reset(self, world: World, instruction: Instruction, seed: int = 0):
        self.driver.reset(seed)
        self.instruction = instruction
        self.enhancement = None
        self._room = None

    def act(self, world: World, image: np.ndarray) -> Action:
        s = world.state
        if self.enhance == "oracle" and s.current_room != self._room:
            self.enhancement = oracle_enhance(world.plan, s.current_room, s.goal_object.room)
        self._room = s.current_room
        a = CONTROLLER_ACTIONS[self.driver(image, encode(EnhancedInstruction(self.instruction, self.enhancement)))]
        self.queried = a is Action.QUERY
        if self.queried and self.gate(world, image, self.instruction):
            return Action.DONE
        return a


class FlatAgent:
    kind = "flat"
    queried = False

    def __init__(self, policy: RecurrentPolicy, greedy: bool = False):
        self.driver = _PolicyDriver(policy, greedy)
        self.tokens = None
        self.enhancement = None

    def reset(self, world: World, instruction: Instruction, seed: int = 0):
        self.driver.reset(seed)
        self.tokens = encode(instruction)

    def act(self, world: World, image: np.ndarray) -> Action:
        return FLAT_ACTIONS[self.driver(image, self.tokens)]


class HierarchicalAgent:
    """Meta-controller picks a room every ``c`` steps; the controller moves; the gate confirms Done."""

    kind = "composed"
    queried = False

    def __init__(self, meta: RecurrentPolicy, controller: RecurrentPolicy, gate: Gate, c: int = 50,
                 greedy: bool = False):
        self.meta = _PolicyDriver(meta, greedy)
        self.controller = _PolicyDriver(controller, greedy)
        self.gate = gate
        self.c = c
        self.instruction = None
        self.enhancement: Optional[RoomId] = None
        self.t = 0

    def reset(self, world: World, instruction: Instruction, seed: int = 0):
        self.meta.reset(seed)
        self.controller.reset(seed + 1)
        self.instruction = instruction
        self.enhancement = None
        self.t = 0

    def act(self, world: World, image: np.ndarray) -> Action:
        if self.t % self.c == 0:
            self.enhancement = ENHANCEMENTS[self.meta(image, encode(self.instruction))]
        self.t += 1
        a = CONTROLLER_ACTIONS[self.controller(image, encode(EnhancedInstruction(self.instruction, self.enhancement)))]
        self.queried = a is Action.QUERY
        if self.queried and self.gate(world, image, self.instruction):
            return Action.DONE
        return a


def _load(src, what: str):
    if isinstance(src, RecurrentPolicy):
        return src, {"vocab_hash": None, "arch": src.arch.to_dict(), "n_actions": src.n_actions}
    try:
        return load_policy(src)
    except (CheckpointError, OSError) as e:
        raise CompositionError(f"{what}: {e}") from None


def compose_agent(meta, controller, ga, c: int = 50, greedy: bool = False) -> HierarchicalAgent:
    """Build the two-level agent from checkpoints (paths) or modules.

    ``ga`` is a gate callable, a goal-assessment model, or a checkpoint path.
    """
    meta_model, meta_info = _load(meta, "meta")
    ctrl_model, ctrl_info = _load(controller, "controller")
    if meta_info["n_actions"] != len(ENHANCEMENTS):
        raise CompositionError(f"meta: expected {len(ENHANCEMENTS)} actions, got {meta_info['n_actions']}")
    if ctrl_info["n_actions"] != len(CONTROLLER_ACTIONS):
        raise CompositionError(f"controller: expected {len(CONTROLLER_ACTIONS)} actions, got {ctrl_info['n_actions']}")
    infos = [("meta", meta_info), ("controller", ctrl_info)]
    if isinstance(ga, str):
        try:
            ga_info, _ = read_checkpoint(ga)
        except (CheckpointError, OSError) as e:
            raise CompositionError(f"ga: {e}") from None
        infos.append(("ga", ga_info))
        from ..goalassess import load_ga

        ga_model = load_ga(ga)
        gate = GaGate(ga_model, ga_info.get("threshold", 0.5))
    elif callable(ga) and not isinstance(ga, torch.nn.Module):
        gate = ga
    else:
        gate = GaGate(ga)
    hashes = {name: info.get("vocab_hash") for name, info in infos if info.get("vocab_hash")}
    if len(set(hashes.values())) > 1:
        raise CompositionError(f"vocabulary hash mismatch: {hashes}")
    for key in ("image_size", "vocab_size"):
        vals = {name: info["arch"][key] for name, info in infos if "arch" in info}
        if len(set(vals.values())) > 1:
            raise CompositionError(f"architecture mismatch on {key}: {vals}")
    return HierarchicalAgent(meta_model, ctrl_model, gate, c, greedy)
