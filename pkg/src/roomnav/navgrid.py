"""Wall geometry, occupancy grid and geodesic distance fields for a floor plan."""

from __future__ import annotations

import functools
import math

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .floorplan import AGENT_RADIUS, FloorPlan, RoomId

LATTICE = 0.5  # every wall and portal endpoint lies on this lattice
GRID_RES = 0.05
SNAP_RADIUS = 0.2
FIELD_CACHE = 4  # distance fields kept per grid (about 0.5 MB each on the full house)


class GeometryError(ValueError):
    pass


def build_walls(plan: FloorPlan) -> np.ndarray:
    """Wall segments ``(S, 4)`` as x0, y0, x1, y1 with closed doorways included."""
    pieces: set[tuple[str, int, int]] = set()  # (axis, fixed coord, start), in lattice units

    def add_edge(axis: str, fixed: float, lo: float, hi: float):
        f = round(fixed / LATTICE)
        for k in range(round(lo / LATTICE), round(hi / LATTICE)):
            pieces.add((axis, f, k))

    for room in plan.template.rooms:
        r = room.footprint
        add_edge("h", r.y0, r.x0, r.x1)
        add_edge("h", r.y1, r.x0, r.x1)
        add_edge("v", r.x0, r.y0, r.y1)
        add_edge("v", r.x1, r.y0, r.y1)
    for door in plan.enabled_doorways:
        (x0, y0), (x1, y1) = door.portal
        if x0 == x1:
            gap = {("v", round(x0 / LATTICE), k) for k in range(round(y0 / LATTICE), round(y1 / LATTICE))}
        else:
            gap = {("h", round(y0 / LATTICE), k) for k in range(round(x0 / LATTICE), round(x1 / LATTICE))}
        pieces -= gap

    segs = []
    for axis in ("h", "v"):
        lines: dict[int, list[int]] = {}
        for a, f, k in pieces:
            if a == axis:
                lines.setdefault(f, []).append(k)
        for f in sorted(lines):
            ks = sorted(lines[f])
            start = prev = ks[0]
            for k in ks[1:] + [None]:
                if k is not None and k == prev + 1:
                    prev = k
                    continue
                lo, hi, c = start * LATTICE, (prev + 1) * LATTICE, f * LATTICE
                segs.append((lo, c, hi, c) if axis == "h" else (c, lo, c, hi))
                if k is not None:
                    start = prev = k
    return np.array(segs, dtype=np.float64)


def point_segment_distance(px, py, segs: np.ndarray) -> np.ndarray:
    """Distance from points (broadcast) to each segment; returns ``(..., S)``."""
    px = np.asarray(px, dtype=np.float64)[..., None]
    py = np.asarray(py, dtype=np.float64)[..., None]
    x0, y0, x1, y1 = segs[:, 0], segs[:, 1], segs[:, 2], segs[:, 3]
    dx, dy = x1 - x0, y1 - y0
    denom = dx * dx + dy * dy
    t = np.clip(((px - x0) * dx + (py - y0) * dy) / np.where(denom > 0, denom, 1.0), 0.0, 1.0)
    cx, cy = x0 + t * dx, y0 + t * dy
    return np.hypot(px - cx, py - cy)


def _segments_intersect(p0, p1, segs: np.ndarray) -> np.ndarray:
    def cross(ax, ay, bx, by):
        return ax * by - ay * bx

    q0 = segs[:, :2]
    q1 = segs[:, 2:]
    r = np.subtract(p1, p0)
    s = q1 - q0
    denom = cross(r[0], r[1], s[:, 0], s[:, 1])
    qp = q0 - np.asarray(p0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = cross(qp[:, 0], qp[:, 1], s[:, 0], s[:, 1]) / denom
        u = cross(qp[:, 0], qp[:, 1], r[0], r[1]) / denom
    return (denom != 0) & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)


def swept_clearance(p0, p1, segs: np.ndarray) -> float:
    """Minimum distance between the motion segment p0->p1 and any wall."""
    if len(segs) == 0:
        return math.inf
    if _segments_intersect(p0, p1, segs).any():
        return 0.0
    motion = np.array([[p0[0], p0[1], p1[0], p1[1]]])
    d = min(
        point_segment_distance(p0[0], p0[1], segs).min(),
        point_segment_distance(p1[0], p1[1], segs).min(),
        point_segment_distance(segs[:, 0], segs[:, 1], motion).min(),
        point_segment_distance(segs[:, 2], segs[:, 3], motion).min(),
    )
    return float(d)


class NavGrid:
    """Occupancy grid over the house in agent-center configuration space.

    A cell is free when its center is inside the house and at least the agent
    radius away from every wall. Geodesic distances are shortest paths on the
    8-connected free cells with diagonal cost sqrt(2) * cell.
    """

    def __init__(self, plan: FloorPlan, res: float = GRID_RES, radius: float = AGENT_RADIUS):
        self.plan = plan
        self.res = res
        self.radius = radius
        self.walls = build_walls(plan)
        b = plan.template.bounds
        self.origin = (b.x0, b.y0)
        self.nx = int(round(b.width / res))
        self.ny = int(round(b.height / res))
        xs = b.x0 + (np.arange(self.nx) + 0.5) * res
        ys = b.y0 + (np.arange(self.ny) + 0.5) * res
        gx, gy = np.meshgrid(xs, ys)  # (ny, nx)
        room = np.full(gx.shape, -1, dtype=np.int8)
        for r in reversed(plan.template.rooms):  # rooms overwrite corridor on shared lines
            f = r.footprint
            inside = (gx >= f.x0) & (gx <= f.x1) & (gy >= f.y0) & (gy <= f.y1)
            room[inside] = int(r.room_id)
        self.room_map = room
        clearance = point_segment_distance(gx, gy, self.walls).min(axis=-1)
        self.free = (room >= 0) & (clearance >= radius - 1e-9)
        self._graph = None
        self._fields: dict[int, np.ndarray] = {}

    # cell helpers -----------------------------------------------------
    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        ix = int(math.floor((x - self.origin[0]) / self.res))
        iy = int(math.floor((y - self.origin[1]) / self.res))
        return min(max(ix, 0), self.nx - 1), min(max(iy, 0), self.ny - 1)

    def cell_center(self, ix: int, iy: int) -> tuple[float, float]:
        return (self.origin[0] + (ix + 0.5) * self.res, self.origin[1] + (iy + 0.5) * self.res)

    def snap(self, x: float, y: float) -> tuple[int, int]:
        """Nearest free cell, searching at most ``SNAP_RADIUS`` away."""
        ix, iy = self.cell_of(x, y)
        if self.free[iy, ix]:
            return ix, iy
        k = int(math.ceil(SNAP_RADIUS / self.res)) + 1
        x0, x1 = max(ix - k, 0), min(ix + k + 1, self.nx)
        y0, y1 = max(iy - k, 0), min(iy + k + 1, self.ny)
        sub = self.free[y0:y1, x0:x1]
        jy, jx = np.nonzero(sub)
        if len(jx) == 0:
            raise GeometryError(f"no walkable cell within {SNAP_RADIUS} m of ({x:.3f}, {y:.3f})")
        cx = self.origin[0] + (jx + x0 + 0.5) * self.res
        cy = self.origin[1] + (jy + y0 + 0.5) * self.res
        d = np.hypot(cx - x, cy - y)
        best = int(np.argmin(d))
        if d[best] > SNAP_RADIUS:
            raise GeometryError(f"no walkable cell within {SNAP_RADIUS} m of ({x:.3f}, {y:.3f})")
        return int(jx[best] + x0), int(jy[best] + y0)

    def room_at(self, x: float, y: float) -> RoomId:
        room = self.plan.template.room_at(x, y)
        if room is None:
            raise GeometryError(f"({x:.3f}, {y:.3f}) is outside the house")
        return room

    def free_cells(self, rooms=None) -> np.ndarray:
        """Indices ``(K, 2)`` as (ix, iy) of free cells, optionally restricted to rooms."""
        mask = self.free
        if rooms is not None:
            mask = mask & np.isin(self.room_map, [int(r) for r in rooms])
        iy, ix = np.nonzero(mask)
        return np.stack([ix, iy], axis=1)

    # distance fields --------------------------------------------------
    def _build_graph(self):
        n = self.nx * self.ny
        idx = np.arange(n).reshape(self.ny, self.nx)
        rows, cols, w = [], [], []
        for dy, dx, cost in ((0, 1, 1.0), (1, 0, 1.0), (1, 1, math.sqrt(2)), (1, -1, math.sqrt(2))):
            a = self.free[max(0, -dy): self.ny - max(0, dy), max(0, -dx): self.nx - max(0, dx)]
            b = self.free[max(0, dy): self.ny - max(0, -dy) or None, max(0, dx): self.nx - max(0, -dx) or None]
            ia = idx[max(0, -dy): self.ny - max(0, dy), max(0, -dx): self.nx - max(0, dx)]
            ib = idx[max(0, dy): self.ny - max(0, -dy) or None, max(0, dx): self.nx - max(0, -dx) or None]
            ok = a & b
            rows.append(ia[ok])
            cols.append(ib[ok])
            w.append(np.full(int(ok.sum()), cost * self.res))
        rows, cols, w = np.concatenate(rows), np.concatenate(cols), np.concatenate(w)
        return coo_matrix((w, (rows, cols)), shape=(n, n)).tocsr()

    def distance_field(self, ix: int, iy: int) -> np.ndarray:
        """Geodesic distance (meters) from cell (ix, iy) to every cell, shape (ny, nx)."""
        key = iy * self.nx + ix
        field = self._fields.get(key)
        if field is None:
            if self._graph is None:
                self._graph = self._build_graph()
            field = dijkstra(self._graph, directed=False, indices=key).reshape(self.ny, self.nx)
            if len(self._fields) >= FIELD_CACHE:
                self._fields.pop(next(iter(self._fields)))
            self._fields[key] = field
        return field

    def local_geodesic(self, a: tuple[float, float], b: tuple[float, float], limit: float) -> float:
        """Geodesic distance if it is at most ``limit``, else ``inf``. Cheap for small limits."""
        if math.hypot(a[0] - b[0], a[1] - b[1]) > limit + 2 * SNAP_RADIUS:
            return math.inf
        if self._graph is None:
            self._graph = self._build_graph()
        bx, by = self.snap(*b)
        ax, ay = self.snap(*a)
        d = dijkstra(self._graph, directed=False, indices=by * self.nx + bx, limit=limit + 1e-9)
        return float(d[ay * self.nx + ax])

    def geodesic(self, a: tuple[float, float], b: tuple[float, float]) -> float:
        bx, by = self.snap(*b)
        ax, ay = self.snap(*a)
        return float(self.distance_field(bx, by)[ay, ax])


@functools.lru_cache(maxsize=64)
def _cached_grid(template_name: str, mask: int, res: float, radius: float, plan: FloorPlan) -> NavGrid:
    return NavGrid(plan, res, radius)


def nav_grid(plan: FloorPlan, res: float = GRID_RES, radius: float = AGENT_RADIUS) -> NavGrid:
    """Shared read-only grid per (plan, resolution, radius)."""
    return _cached_grid(plan.template.name, plan.mask, res, radius, plan)


def geodesic_distance(plan: FloorPlan, start: tuple[float, float], goal: tuple[float, float]) -> float:
    return nav_grid(plan).geodesic(start, goal)
