import itertools
import math

import numpy as np
import pytest

from roomnav.floorplan import ROOMS, WALL_SIGNATURES, RoomId
from roomnav.hierarchy.abstract import room_view
from roomnav.navgrid import nav_grid
from roomnav.renderer import (
    DEFAULT_CAMERA,
    OBJECT_COLORS,
    cast_rays,
    read_ppm,
    render_layers,
    to_uint8,
    visible_pixels,
    write_ppm,
)
from roomnav.simworld import AgentPose, ObjectInstance


def _color_hist(img, bins=8):
    x = img.astype(np.float64) / 255.0
    h = [np.histogram(x[..., c], bins=bins, range=(0, 1))[0] / x[..., c].size for c in range(3)]
    return np.concatenate(h) / 3


def test_wall_signatures_distinct():
    for a, b in itertools.combinations(RoomId, 2):
        d = sum(abs(u - v) for u, v in zip(WALL_SIGNATURES[a], WALL_SIGNATURES[b]))
        assert d >= 0.3 - 1e-12, (a, b)


def test_wall_shading_law(plan0):
    # living room center facing the west wall at x = 0
    img, _ = render_layers(plan0, AgentPose(2.0, 2.0, 8), [])
    offsets = DEFAULT_CAMERA.column_offsets
    for col in (20, 31, 32, 44):
        dist = 2.0 / math.cos(offsets[col])
        want = np.array(WALL_SIGNATURES[RoomId.LIVING_ROOM]) / (1 + 0.15 * dist)
        assert img[32, col] == pytest.approx(want, abs=1e-6)


def test_shading_decreases_with_distance(plan0):
    near, _ = render_layers(plan0, AgentPose(1.0, 2.0, 8), [])
    far, _ = render_layers(plan0, AgentPose(3.5, 2.0, 8), [])
    assert near[32, 32].sum() > far[32, 32].sum()


def test_rays_never_escape(plans):
    rng = np.random.default_rng(0)
    angles = np.linspace(0, 2 * np.pi, 360, endpoint=False)
    for p in [plans[i] for i in rng.choice(len(plans), 10, replace=False)]:
        g = nav_grid(p)
        cells = g.free_cells()
        for k in rng.choice(len(cells), 5):
            x, y = g.cell_center(*cells[k])
            dist, _ = cast_rays(g.walls, x, y, angles)
            assert np.all(np.isfinite(dist))
            assert np.all(dist <= math.hypot(16, 10))


def test_room_views_distinguishable(plans):
    for p in plans[::23]:
        hists = {r: _color_hist(room_view(p, r)) for r in ROOMS}
        for a, b in itertools.combinations(ROOMS, 2):
            assert np.abs(hists[a] - hists[b]).sum() >= 0.1, (p.plan_id, a, b)


def test_object_colors_and_ids(plan0):
    obj = ObjectInstance("box", "blue", (2.0, 2.0), RoomId.LIVING_ROOM)
    img, ids = render_layers(plan0, AgentPose(2.0, 0.8, 4), [obj])  # facing north at the box
    px = ids == 0
    assert px.sum() > 20
    assert np.allclose(img[px], OBJECT_COLORS["blue"], atol=1e-6)
    assert visible_pixels(ids, 1)[0] == px.sum()


def test_visibility_monotone_in_distance(plan0):
    obj = ObjectInstance("ball", "red", (2.0, 3.4), RoomId.LIVING_ROOM)
    counts = []
    for y in (2.8, 2.4, 2.0, 1.5, 1.0, 0.6):
        _, ids = render_layers(plan0, AgentPose(2.0, y, 4), [obj])
        counts.append(int((ids == 0).sum()))
    assert all(a >= b for a, b in zip(counts, counts[1:])), counts
    assert counts[0] > counts[-1]


def test_object_hidden_behind_wall(plan0):
    # box in the dining room, agent in the living room looking east at the shared wall
    obj = ObjectInstance("key", "green", (6.0, 2.0), RoomId.DINING_ROOM)
    _, ids = render_layers(plan0, AgentPose(2.0, 2.0, 0), [obj])
    assert (ids == 0).sum() == 0


def test_object_behind_agent_invisible(plan0):
    obj = ObjectInstance("box", "yellow", (2.0, 1.0), RoomId.LIVING_ROOM)
    _, ids = render_layers(plan0, AgentPose(2.0, 2.0, 4), [obj])
    assert (ids == 0).sum() == 0


def test_nearer_object_occludes(plan0):
    far = ObjectInstance("box", "red", (2.0, 3.2), RoomId.LIVING_ROOM)
    near = ObjectInstance("box", "green", (2.0, 2.0), RoomId.LIVING_ROOM)
    _, ids = render_layers(plan0, AgentPose(2.0, 1.0, 4), [far, near])
    assert ids[40, 32] == 1


def test_render_deterministic_and_range(plan0):
    pose = AgentPose(5.0, 5.0, 3)
    a, _ = render_layers(plan0, pose, [])
    b, _ = render_layers(plan0, pose, [])
    assert a.tobytes() == b.tobytes()
    assert a.dtype == np.float32 and a.min() >= 0 and a.max() <= 1


def test_ppm_roundtrip(tmp_path, plan0):
    img, _ = render_layers(plan0, AgentPose(5.0, 5.0, 3), [])
    path = tmp_path / "obs.ppm"
    write_ppm(path, img)
    assert path.read_bytes().startswith(b"P6\n64 64\n255\n")
    assert np.array_equal(to_uint8(read_ppm(path)), to_uint8(img))
