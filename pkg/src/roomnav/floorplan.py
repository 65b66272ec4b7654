"""House templates, doorway enumeration and plan splits.

A house is a fixed set of rectangular rooms around a corridor. Only the set
of open doorways changes between floor plans; every subset of the candidate
doorways that keeps all rooms reachable is a valid plan.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

AGENT_RADIUS = 0.25
DOOR_WIDTH = 1.0


class RoomId(enum.IntEnum):
    GARAGE = 0
    STORAGE = 1
    BEDROOM = 2
    BATHROOM = 3
    LIVING_ROOM = 4
    DINING_ROOM = 5
    KITCHEN = 6
    CORRIDOR = 7

    @property
    def label(self) -> str:
        return self.name.lower()

    @property
    def words(self) -> str:
        """Human form, e.g. ``dining room``."""
        return self.name.lower().replace("_", " ")

    @classmethod
    def from_label(cls, label: str) -> "RoomId":
        return cls[label.strip().upper().replace(" ", "_")]


ROOMS = tuple(r for r in RoomId if r is not RoomId.CORRIDOR)


class InvalidSplitError(ValueError):
    pass


@dataclass(frozen=True)
class Rect:
    x0: float
    y0: float
    x1: float
    y1: float

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    def overlaps(self, other: "Rect") -> bool:
        return (min(self.x1, other.x1) > max(self.x0, other.x0)
                and min(self.y1, other.y1) > max(self.y0, other.y0))


@dataclass(frozen=True)
class RoomTemplate:
    room_id: RoomId
    footprint: Rect
    wall_signature: tuple[float, float, float]
    floor_signature: tuple[float, float, float]


@dataclass(frozen=True)
class Doorway:
    """An opening in the wall shared by two rooms.

    ``portal`` is the gap segment ((x0, y0), (x1, y1)) on the shared wall.
    """

    endpoints: frozenset
    portal: tuple[tuple[float, float], tuple[float, float]]
    width: float = DOOR_WIDTH

    @property
    def rooms(self) -> tuple[RoomId, RoomId]:
        a, b = sorted(self.endpoints)
        return RoomId(a), RoomId(b)

    def __str__(self) -> str:
        a, b = self.rooms
        return f"{a.label}-{b.label}"


# Muted signatures keep room colors far from the saturated object colors.
WALL_SIGNATURES = {
    RoomId.GARAGE: (0.55, 0.55, 0.60),
    RoomId.STORAGE: (0.65, 0.45, 0.30),
    RoomId.BEDROOM: (0.70, 0.55, 0.80),
    RoomId.BATHROOM: (0.45, 0.80, 0.85),
    RoomId.LIVING_ROOM: (0.85, 0.75, 0.50),
    RoomId.DINING_ROOM: (0.50, 0.35, 0.55),
    RoomId.KITCHEN: (0.92, 0.92, 0.88),
    RoomId.CORRIDOR: (0.35, 0.50, 0.40),
}
FLOOR_SIGNATURES = {
    RoomId.GARAGE: (0.30, 0.30, 0.30),
    RoomId.STORAGE: (0.40, 0.30, 0.20),
    RoomId.BEDROOM: (0.45, 0.35, 0.50),
    RoomId.BATHROOM: (0.75, 0.75, 0.75),
    RoomId.LIVING_ROOM: (0.50, 0.35, 0.25),
    RoomId.DINING_ROOM: (0.30, 0.20, 0.15),
    RoomId.KITCHEN: (0.60, 0.55, 0.45),
    RoomId.CORRIDOR: (0.25, 0.30, 0.35),
}


def _shared_edge(a: Rect, b: Rect) -> tuple[tuple[float, float], tuple[float, float]] | None:
    if a.x1 == b.x0 or b.x1 == a.x0:
        x = a.x1 if a.x1 == b.x0 else a.x0
        lo, hi = max(a.y0, b.y0), min(a.y1, b.y1)
        if hi > lo:
            return (x, lo), (x, hi)
    if a.y1 == b.y0 or b.y1 == a.y0:
        y = a.y1 if a.y1 == b.y0 else a.y0
        lo, hi = max(a.x0, b.x0), min(a.x1, b.x1)
        if hi > lo:
            return (lo, y), (hi, y)
    return None


def _centered_portal(edge, width: float):
    (x0, y0), (x1, y1) = edge
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    if x0 == x1:
        return (x0, cy - width / 2), (x0, cy + width / 2)
    return (cx - width / 2, y0), (cx + width / 2, y0)


@dataclass(frozen=True)
class HouseTemplate:
    name: str
    rooms: tuple[RoomTemplate, ...]
    candidates: tuple[Doorway, ...]

    @classmethod
    def build(cls, name: str, footprints: dict[RoomId, Rect],
              links: Sequence[tuple[RoomId, RoomId]]) -> "HouseTemplate":
        rooms = tuple(
            RoomTemplate(rid, footprints[rid], WALL_SIGNATURES[rid], FLOOR_SIGNATURES[rid])
            for rid in sorted(footprints)
        )
        doors = []
        for a, b in links:
            edge = _shared_edge(footprints[a], footprints[b])
            if edge is None:
                raise ValueError(f"{a.label} and {b.label} are not adjacent")
            doors.append(Doorway(frozenset((a, b)), _centered_portal(edge, DOOR_WIDTH)))
        return cls(name, rooms, tuple(doors))

    @property
    def room_ids(self) -> tuple[RoomId, ...]:
        return tuple(r.room_id for r in self.rooms)

    @property
    def nav_rooms(self) -> tuple[RoomId, ...]:
        """Rooms that can hold objects and be enhancement targets."""
        return tuple(r for r in self.room_ids if r is not RoomId.CORRIDOR)

    def room(self, rid: RoomId) -> RoomTemplate:
        for r in self.rooms:
            if r.room_id == rid:
                return r
        raise KeyError(rid)

    @property
    def bounds(self) -> Rect:
        return Rect(min(r.footprint.x0 for r in self.rooms), min(r.footprint.y0 for r in self.rooms),
                    max(r.footprint.x1 for r in self.rooms), max(r.footprint.y1 for r in self.rooms))

    def room_at(self, x: float, y: float) -> RoomId | None:
        # Rooms before corridor so a point on a doorway line belongs to the room.
        for r in self.rooms:
            if r.footprint.contains(x, y):
                return r.room_id
        return None


def _full_house() -> HouseTemplate:
    R = RoomId
    foot = {
        R.GARAGE: Rect(0, 6, 4, 10),
        R.STORAGE: Rect(4, 6, 8, 10),
        R.BEDROOM: Rect(8, 6, 12, 10),
        R.BATHROOM: Rect(12, 6, 16, 10),
        R.LIVING_ROOM: Rect(0, 0, 4, 4),
        R.DINING_ROOM: Rect(4, 0, 8, 4),
        R.KITCHEN: Rect(8, 0, 12, 4),
        R.CORRIDOR: Rect(0, 4, 16, 6),
    }
    links = [(r, R.CORRIDOR) for r in ROOMS] + [
        (R.KITCHEN, R.DINING_ROOM),
        (R.DINING_ROOM, R.LIVING_ROOM),
        (R.BEDROOM, R.BATHROOM),
        (R.GARAGE, R.STORAGE),
    ]
    return HouseTemplate.build("full", foot, links)


def _mini_house() -> HouseTemplate:
    R = RoomId
    foot = {
        R.DINING_ROOM: Rect(0, 6, 4, 10),
        R.KITCHEN: Rect(4, 6, 8, 10),
        R.BEDROOM: Rect(0, 0, 4, 4),
        R.CORRIDOR: Rect(0, 4, 8, 6),
    }
    links = [(R.DINING_ROOM, R.CORRIDOR), (R.KITCHEN, R.CORRIDOR),
             (R.BEDROOM, R.CORRIDOR), (R.KITCHEN, R.DINING_ROOM)]
    return HouseTemplate.build("mini", foot, links)


FULL_HOUSE = _full_house()
MINI_HOUSE = _mini_house()
TEMPLATES = {t.name: t for t in (FULL_HOUSE, MINI_HOUSE)}


def get_template(name: str) -> HouseTemplate:
    try:
        return TEMPLATES[name]
    except KeyError:
        raise ValueError(f"unknown house template {name!r}; expected one of {sorted(TEMPLATES)}") from None


@dataclass(frozen=True)
class FloorPlan:
    plan_id: int
    mask: int
    enabled_doorways: tuple[Doorway, ...]
    room_graph: dict = field(hash=False)
    template: HouseTemplate = field(repr=False, compare=False)

    def neighbors(self, room: RoomId) -> tuple[RoomId, ...]:
        return self.room_graph[room]

    def adjacency_text(self) -> str:
        return " ".join(
            f"{r.label}:{','.join(n.label for n in self.room_graph[r])}" for r in sorted(self.room_graph)
        )


def room_graph_from(template: HouseTemplate, doors: Iterable[Doorway]) -> dict[RoomId, tuple[RoomId, ...]]:
    adj: dict[RoomId, set[RoomId]] = {r: set() for r in template.room_ids}
    for d in doors:
        a, b = d.rooms
        adj[a].add(b)
        adj[b].add(a)
    return {r: tuple(sorted(adj[r])) for r in sorted(adj)}


def is_connected(graph: dict[RoomId, tuple[RoomId, ...]]) -> bool:
    nodes = list(graph)
    seen = {nodes[0]}
    stack = [nodes[0]]
    while stack:
        u = stack.pop()
        for v in graph[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == len(nodes)


def make_plan(template: HouseTemplate, mask: int, plan_id: int = -1) -> FloorPlan:
    doors = tuple(d for i, d in enumerate(template.candidates) if mask >> i & 1)
    return FloorPlan(plan_id, mask, doors, room_graph_from(template, doors), template)


def enumerate_floorplans(template: HouseTemplate = FULL_HOUSE) -> list[FloorPlan]:
    """All connected doorway subsets, ordered by ascending bitmask."""
    plans = []
    for mask in range(1 << len(template.candidates)):
        plan = make_plan(template, mask, len(plans))
        if is_connected(plan.room_graph):
            plans.append(plan)
    return plans


def default_holdout_size(total: int) -> int:
    return 30 if total >= 60 else math.ceil(0.23 * total)


@dataclass(frozen=True)
class PlanSplit:
    train: tuple[int, ...]
    holdout: tuple[int, ...]


def split_plans(plans: Sequence[FloorPlan], holdout_n: int, seed: int) -> PlanSplit:
    if holdout_n < 0 or holdout_n >= len(plans):
        raise InvalidSplitError(f"holdout_n={holdout_n} must be in [0, {len(plans)})")
    ids = np.array([p.plan_id for p in plans])
    order = ids[np.random.default_rng(seed).permutation(len(ids))]
    cut = len(ids) - holdout_n
    return PlanSplit(tuple(sorted(int(i) for i in order[:cut])), tuple(sorted(int(i) for i in order[cut:])))


def room_distances(plan: FloorPlan, target: RoomId) -> dict[RoomId, int]:
    dist = {target: 0}
    queue = deque([target])
    while queue:
        u = queue.popleft()
        for v in plan.room_graph[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def shortest_room_path(plan: FloorPlan, start: RoomId, goal: RoomId) -> list[RoomId]:
    """Shortest room sequence from ``start`` to ``goal``, both included.

    Among equally short paths the one with the lowest-ordinal next hop wins,
    applied at every step.
    """
    dist = room_distances(plan, goal)
    if start not in dist:
        raise ValueError(f"{goal.label} unreachable from {start.label}")
    path = [start]
    while path[-1] != goal:
        here = path[-1]
        path.append(min(v for v in plan.room_graph[here] if dist.get(v) == dist[here] - 1))
    return path


def format_plan_line(plan: FloorPlan) -> str:
    width = (len(plan.template.candidates) + 3) // 4
    return f"{plan.plan_id}\t0x{plan.mask:0{width}x}\t{plan.adjacency_text()}"


def write_plan_file(path, plans: Sequence[FloorPlan], split: PlanSplit) -> None:
    """Plan list plus split as tab-separated text, one plan per line."""
    tmpl = plans[0].template
    lines = [
        "# roomnav floor plans v1",
        f"# template={tmpl.name} candidates={','.join(str(d) for d in tmpl.candidates)}",
        f"# count={len(plans)}",
        "# plan_id\tmask\tadjacency\tsplit",
    ]
    holdout = set(split.holdout)
    for p in plans:
        lines.append(f"{format_plan_line(p)}\t{'holdout' if p.plan_id in holdout else 'train'}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
