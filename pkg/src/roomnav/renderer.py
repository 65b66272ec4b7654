"""Egocentric RGB rendering by column raycasting.

Walls are vertical spans colored with the wall signature of the room the ray
travels through, shaded by ``1 / (1 + k * distance)``. Floor and ceiling are
flat per-room colors. Objects are camera-facing glyphs, depth-tested against
the wall buffer and drawn far to near.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .floorplan import FLOOR_SIGNATURES, WALL_SIGNATURES, FloorPlan, RoomId
from .navgrid import nav_grid

OBJECT_COLORS = {
    "red": (0.90, 0.10, 0.10),
    "green": (0.10, 0.75, 0.15),
    "blue": (0.10, 0.25, 0.95),
    "yellow": (0.95, 0.85, 0.10),
}


@dataclass(frozen=True)
class Camera:
    width: int = 64
    height: int = 64
    fov_deg: float = 60.0
    eye_height: float = 0.4
    wall_height: float = 1.2
    shading: float = 0.15
    object_size: float = 0.4
    near: float = 0.05

    @property
    def focal(self) -> float:
        return (self.width / 2) / math.tan(math.radians(self.fov_deg) / 2)

    @property
    def column_offsets(self) -> np.ndarray:
        """Angle of each column's ray relative to the heading (positive = left)."""
        c = np.arange(self.width) + 0.5 - self.width / 2
        return -np.arctan(c / self.focal)


DEFAULT_CAMERA = Camera()

_WALL_LUT = np.zeros((9, 3))
_FLOOR_LUT = np.zeros((9, 3))
for _r in RoomId:
    _WALL_LUT[int(_r)] = WALL_SIGNATURES[_r]
    _FLOOR_LUT[int(_r)] = FLOOR_SIGNATURES[_r]
_CEIL_LUT = 0.5 * (_FLOOR_LUT + 1.0)
_CEIL_LUT[8] = 0.0  # index 8 catches points outside the house (room id -1)


def cast_rays(walls: np.ndarray, x: float, y: float, angles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distance to the first wall along each ray and the wall index hit."""
    dx, dy = np.cos(angles)[:, None], np.sin(angles)[:, None]
    qx, qy = walls[:, 0] - x, walls[:, 1] - y
    sx, sy = walls[:, 2] - walls[:, 0], walls[:, 3] - walls[:, 1]
    denom = dx * sy - dy * sx
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (qx * sy - qy * sx) / denom
        u = (qx * dy - qy * dx) / denom
    hit = (denom != 0) & (t > 1e-9) & (u >= -1e-9) & (u <= 1 + 1e-9)
    t = np.where(hit, t, np.inf)
    idx = np.argmin(t, axis=1)
    return t[np.arange(len(angles)), idx], idx


def _room_lookup(grid, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    ix = np.floor((px - grid.origin[0]) / grid.res).astype(np.int64)
    iy = np.floor((py - grid.origin[1]) / grid.res).astype(np.int64)
    inside = (ix >= 0) & (ix < grid.nx) & (iy >= 0) & (iy < grid.ny)
    rooms = np.full(px.shape, -1, dtype=np.int64)
    rooms[inside] = grid.room_map[iy[inside], ix[inside]]
    return rooms


def _glyph_mask(shape: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if shape == "ball":
        return a * a + b * b <= 1.0
    if shape == "key":
        return (np.abs(a) <= 0.3) | (np.abs(b) <= 0.3)
    return np.ones(np.broadcast(a, b).shape, dtype=bool)


def render_layers(plan: FloorPlan, pose, objects, camera: Camera = DEFAULT_CAMERA):
    """Render and also return a per-pixel object index buffer (-1 = none)."""
    grid = nav_grid(plan)
    W, H, f = camera.width, camera.height, camera.focal
    x, y, heading = pose.x, pose.y, pose.heading
    offsets = camera.column_offsets
    angles = heading + offsets
    cos_off = np.cos(offsets)
    dist, _ = cast_rays(grid.walls, x, y, angles)
    depth = dist * cos_off

    # walls
    dirx, diry = np.cos(angles), np.sin(angles)
    wall_room = _room_lookup(grid, x + (dist - 1e-3) * dirx, y + (dist - 1e-3) * diry)
    wall_rgb = _WALL_LUT[wall_room] / (1.0 + camera.shading * dist)[:, None]
    rows = np.arange(H) + 0.5
    top = H / 2 - f * (camera.wall_height - camera.eye_height) / depth
    bottom = H / 2 + f * camera.eye_height / depth
    is_wall = (rows[:, None] >= top[None, :]) & (rows[:, None] < bottom[None, :])

    # floor and ceiling: per-row perpendicular distance, flat room colors
    dy_rows = rows - H / 2
    below = dy_rows > 0
    perp = np.where(below, f * camera.eye_height / np.abs(dy_rows),
                    f * (camera.wall_height - camera.eye_height) / np.abs(dy_rows))
    reach = perp[:, None] / cos_off[None, :]
    fl_room = _room_lookup(grid, x + reach * dirx[None, :], y + reach * diry[None, :])
    flat = np.where(below[:, None, None], _FLOOR_LUT[fl_room], _CEIL_LUT[fl_room])

    img = np.where(is_wall[:, :, None], wall_rgb[None, :, :], flat)
    ids = np.full((H, W), -1, dtype=np.int64)

    # objects, far to near
    ch, sh = math.cos(heading), math.sin(heading)
    sprites = []
    for k, obj in enumerate(objects):
        ox, oy = obj.position[0] - x, obj.position[1] - y
        z = ox * ch + oy * sh
        if z < camera.near:
            continue
        lateral = -ox * sh + oy * ch
        sprites.append((z, k, lateral))
    sprites.sort(key=lambda s: -s[0])
    cols = np.arange(W) + 0.5
    for z, k, lateral in sprites:
        obj = objects[k]
        half = 0.5 * f * camera.object_size / z
        xc = W / 2 - f * lateral / z
        yc = H / 2 + f * (camera.eye_height - camera.object_size / 2) / z
        c0, c1 = max(int(math.floor(xc - half)), 0), min(int(math.ceil(xc + half)), W)
        r0, r1 = max(int(math.floor(yc - half)), 0), min(int(math.ceil(yc + half)), H)
        if c0 >= c1 or r0 >= r1:
            continue
        a = (cols[c0:c1][None, :] - xc) / half
        b = (rows[r0:r1][:, None] - yc) / half
        mask = (np.abs(a) <= 1) & (np.abs(b) <= 1) & _glyph_mask(obj.shape, a, b)
        mask &= (z < depth[c0:c1])[None, :]
        img[r0:r1, c0:c1][mask] = OBJECT_COLORS[obj.color]
        ids[r0:r1, c0:c1][mask] = k
    return np.clip(img, 0.0, 1.0).astype(np.float32), ids


def render(plan: FloorPlan, state, camera: Camera = DEFAULT_CAMERA) -> np.ndarray:
    """Observation ``(H, W, 3)`` float32 in [0, 1] for a world state."""
    return render_layers(plan, state.pose, state.objects, camera)[0]


def visible_pixels(ids: np.ndarray, n_objects: int) -> np.ndarray:
    return np.bincount(ids[ids >= 0].ravel(), minlength=n_objects)


def to_uint8(obs: np.ndarray) -> np.ndarray:
    return np.round(np.asarray(obs) * 255.0).astype(np.uint8)


def write_ppm(path, obs: np.ndarray) -> None:
    """Binary portable pixmap (P6)."""
    img = to_uint8(obs)
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h = int(fields[1]), int(fields[2])
    pos += 1  # single whitespace byte before the raster
    pix = np.frombuffer(data[pos: pos + w * h * 3], dtype=np.uint8).reshape(h, w, 3)
    return pix.astype(np.float32) / 255.0
