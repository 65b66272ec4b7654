"""Shared fixtures for tests: scripted agents and a synthetic failure corpus."""

import math

import numpy as np

from roomnav.evalbench import EpisodeTrace
from roomnav.simworld import Action, AgentPose


class SpinAgent:
    """Turns in place forever; never makes geodesic progress."""

    kind = "spin"
    queried = False
    enhancement = None

    def reset(self, world, instruction, seed=0):
        pass

    def act(self, world, image):
        return Action.TURN_LEFT


class DoneAgent(SpinAgent):
    kind = "done"

    def act(self, world, image):
        return Action.DONE


class GreedyAgent(SpinAgent):
    """Follows the goal distance field; declares Done inside the success radius."""

    kind = "greedy"

    def act(self, world, image):
        if world.geodesic <= world.params.success_radius - 0.05:
            return Action.DONE
        s, p = world.state, world.params
        best, best_h = math.inf, s.pose.heading_index
        for h in range(p.n_headings):
            ang = 2 * math.pi * h / p.n_headings
            nxt = (s.pose.x + p.step_len * math.cos(ang), s.pose.y + p.step_len * math.sin(ang))
            if world._blocked((s.pose.x, s.pose.y), nxt):
                continue
            d = world.goal_distance(*nxt)
            if d < best - 1e-9:
                best, best_h = d, h
        diff = (best_h - s.pose.heading_index) % p.n_headings
        if diff == 0:
            return Action.FORWARD
        return Action.TURN_LEFT if diff <= p.n_headings // 2 else Action.TURN_RIGHT


def _rec(step, geo, done=False, room="kitchen"):
    return {"step": step, "action": "done" if done else "forward", "reward": -0.01, "x": 0.0, "y": 0.0,
            "heading": 0, "room": room, "geodesic_distance": geo, "used_done": done, "query_fired": False,
            "enhancement": None}


def _trace(geos, done_last=False, radius=1.0, earlier_done=()):
    recs = [_rec(i + 1, g, done=(done_last and i == len(geos) - 1) or i in earlier_done) for i, g in enumerate(geos)]
    return EpisodeTrace(recs, "Failure", {"room": "kitchen"}, 0, "find the red box", 0, radius, 7)


def synthetic_corpus(seed=0):
    """50 failed traces with the expected label, covering every precedence overlap."""
    rng = np.random.default_rng(seed)
    out = []

    def moving(n):
        return list(5.0 + np.cumsum(rng.uniform(0.05, 0.4, n) * rng.choice([-1, 1], n)).clip(1.5, None) + 0.3
                    * np.arange(n))

    for n in (1, 5, 12, 30):
        # Done far away: Detection, whatever the rest of the trace looks like
        out.append((_trace(moving(n), done_last=True), "Detection"))
        out.append((_trace([4.0] * n, done_last=True), "Detection"))  # also stuck
    out.append((_trace([1.0 + 1e-9], done_last=True), "Detection"))  # just outside the radius
    out.append((_trace([3.0] * 20, done_last=True, radius=2.5), "Detection"))
    for n in (11, 12, 40, 500):
        out.append((_trace([2.5] * n), "Stuck"))
        g = moving(n - 11) + [3.0 + 0.00005 * k for k in range(11)]
        out.append((_trace(g), "Stuck"))  # drift inside tolerance
        g = moving(n - 11) + [3.0] + [3.5] * 9 + [3.0]
        out.append((_trace(g), "Stuck"))  # moved and came back: endpoints equal
    for tol in (0.0, 0.0009, 0.001):
        out.append((_trace([2.0] * 5 + [2.0 + tol] + [2.0] * 10), "Stuck"))
    for n in (11, 15, 60, 500):
        out.append((_trace(moving(n - 1) + [moving(1)[0] + 100.0]), "Timeout"))
        out.append((_trace([3.0] * (n - 1) + [3.0011]), "Timeout"))  # just over tolerance
    for n in (1, 2, 5, 10):
        out.append((_trace([2.0] * n), "Timeout"))  # too short to judge stuck
    # an earlier (soft) Done does not make the episode a detection failure
    out.append((_trace([4.0] * 20, earlier_done=(3,)), "Stuck"))
    out.append((_trace(moving(19) + [50.0], earlier_done=(3, 7)), "Timeout"))
    # Done inside the radius recorded as failure (e.g. replay with a larger radius): not Detection
    out.append((_trace([0.5] * 12, done_last=True), "Stuck"))
    out.append((_trace(list(np.linspace(6, 0.5, 12)), done_last=True), "Timeout"))
    while len(out) < 50:
        n = int(rng.integers(11, 80))
        out.append((_trace([7.0] * n), "Stuck"))
    return out[:50]


def pose_near(world, target, dist=0.6):
    for dx, dy in ((dist, 0), (-dist, 0), (0, dist), (0, -dist)):
        try:
            world.grid.snap(target[0] + dx, target[1] + dy)
            return AgentPose(target[0] + dx, target[1] + dy, 0)
        except Exception:
            continue
    return None
