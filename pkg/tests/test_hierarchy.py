import itertools
import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from roomnav.config import load_config
from roomnav.floorplan import MINI_HOUSE, ROOMS, RoomId, make_plan
from roomnav.hierarchy import (
    ENHANCEMENTS,
    AbstractRoomEnv,
    AbstractRoomState,
    CompositionError,
    ControllerAgent,
    FrozenMetaEnv,
    HierarchicalAgent,
    abstract_step,
    best_coverage_return,
    compose_agent,
    evaluate_coverage,
    load_controller,
    meta_reward,
    never_gate,
    one_hop,
    oracle_gate,
    plans_for,
    train_controller,
    train_meta_coverage,
)
from roomnav.langspec import Instruction
from roomnav.navenv import CONTROLLER_ACTIONS, NavEnv, oracle_enhance
from roomnav.rlcore import ArchConfig, ConfigError, RecurrentPolicy, policy_meta, save_checkpoint
from roomnav.simworld import Action, EnvParams, EpisodeConfig, World

SMALL = ArchConfig(convs=((4, 8, 8), (4, 4, 2)), feat_dim=16, embed_dim=8, hidden=16)


def _loop_reward(rs, gamma, c):
    return sum(r * gamma ** k for k, r in enumerate(rs)) / c if rs else 0.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-20, 20), max_size=60), st.floats(0.0, 1.0), st.integers(1, 60))
def test_meta_reward_matches_loop(rs, gamma, c):
    assert meta_reward(rs, gamma, c) == pytest.approx(_loop_reward(rs, gamma, c), abs=1e-12, rel=1e-12)


def test_meta_reward_cases():
    assert meta_reward([], 0.99, 50) == 0.0
    assert meta_reward([1.0, 1.0], 0.5, 4) == pytest.approx(1.5 / 4)
    assert meta_reward([2.0, 2.0], 0.99) == pytest.approx((2.0 + 2.0 * 0.99) / 2)
    assert meta_reward([1.0, 1.0], 1.0) == pytest.approx(1.0)


def _one_hop_oracle(plan, a, b):
    g = plan.room_graph
    return a != b and (b in g[a] or (RoomId.CORRIDOR in g[a] and b in g[RoomId.CORRIDOR]))


def test_one_hop(plans):
    for p in plans[::17]:
        for a, b in itertools.product(ROOMS, ROOMS):
            assert one_hop(p, a, b) == _one_hop_oracle(p, a, b)


def test_abstract_step_rewards(plan0):
    s = AbstractRoomState(RoomId.KITCHEN)
    s, r = abstract_step(plan0, s, RoomId.BEDROOM)
    assert (s.current, r) == (RoomId.BEDROOM, 0.1)
    s, r = abstract_step(plan0, s, RoomId.KITCHEN)
    assert (s.current, r) == (RoomId.KITCHEN, -0.01)
    s2, r = abstract_step(plan0, s, RoomId.KITCHEN)  # self-loop is not a move
    assert (s2.current, r, s2.steps) == (RoomId.KITCHEN, -0.01, s.steps + 1)


def test_unreachable_target_keeps_state():
    # mini house: rooms of the full house that do not exist are never reachable
    p = make_plan(MINI_HOUSE, 0b1111)
    s = AbstractRoomState(RoomId.BEDROOM)
    s2, r = abstract_step(p, s, RoomId.GARAGE)
    assert s2.current == RoomId.BEDROOM and r == -0.01


def test_repeat_one_enhancement(plan0):
    s, total, rewards = AbstractRoomState(RoomId.KITCHEN), 0.0, []
    for _ in range(14):
        s, r = abstract_step(plan0, s, RoomId.BEDROOM)
        rewards.append(r)
    assert rewards[0] == 0.1 and all(r == -0.01 for r in rewards[1:])


def _brute_force(plan, start, horizon):
    best = -np.inf
    for seq in itertools.product(ENHANCEMENTS, repeat=horizon):
        s, total = AbstractRoomState(start), 0.0
        for z in seq:
            s, r = abstract_step(plan, s, z)
            total += r
        best = max(best, total)
    return best


@pytest.mark.parametrize("horizon", [1, 3, 5])
def test_dp_matches_brute_force(plans, horizon):
    for p in (plans[0], plans[100], plans[-1]):
        for start in (RoomId.GARAGE, RoomId.KITCHEN):
            assert best_coverage_return(p, start, horizon) == pytest.approx(_brute_force(p, start, horizon), abs=1e-12)


def test_dp_full_horizon_optimum(plans):
    for p in plans[::11]:
        assert best_coverage_return(p, RoomId.LIVING_ROOM, 14) == pytest.approx(6 * 0.1 - 8 * 0.01)


def test_abstract_env_episode(plans):
    env = AbstractRoomEnv(plans[:5], horizon=14, seed=0)
    obs = env.reset()
    assert obs["image"].shape == (64, 64, 3) and obs["image"].dtype == np.uint8
    for t in range(14):
        obs, r, done, info = env.step(t % 7)
        assert done == (t == 13)
    assert info["episode"]["rooms_visited"] == len(env.state.visited)


def test_oracle_enhance(plan0, plans):
    assert oracle_enhance(plan0, RoomId.KITCHEN, RoomId.BEDROOM) == RoomId.BEDROOM
    assert oracle_enhance(plan0, RoomId.KITCHEN, RoomId.KITCHEN) == RoomId.KITCHEN
    # garage only reachable through storage
    p = next(p for p in plans if p.neighbors(RoomId.GARAGE) == (RoomId.STORAGE,))
    start = next(r for r in ROOMS if r not in (RoomId.GARAGE, RoomId.STORAGE) and RoomId.CORRIDOR in p.neighbors(r))
    assert oracle_enhance(p, start, RoomId.GARAGE) == RoomId.STORAGE


def _world(plan0, seed=0):
    w = World(plan0)
    w.reset(EpisodeConfig(0, Instruction("red", "box"), seed=seed, max_steps=200))
    return w


def test_gates(plan0):
    w = _world(plan0)
    assert oracle_gate(w) == (w.geodesic <= 1.0)
    assert never_gate(w) is False


def test_controller_agent_query_becomes_done(plan0):
    torch.manual_seed(0)
    model = RecurrentPolicy(4, SMALL)
    with torch.no_grad():
        model.pi.bias.copy_(torch.tensor([-50.0, -50.0, -50.0, 50.0]))  # always Query
    w = _world(plan0)
    agent = ControllerAgent(model, gate=lambda *a: True)
    agent.reset(w, Instruction("red", "box"), 0)
    img = (w.observe() * 255).astype(np.uint8)
    assert agent.act(w, img) is Action.DONE and agent.queried
    agent = ControllerAgent(model, gate=never_gate)
    agent.reset(w, Instruction("red", "box"), 0)
    assert agent.act(w, img) is Action.QUERY
    assert agent.enhancement == oracle_enhance(plan0, w.state.current_room, w.state.goal_object.room)


def test_hierarchical_agent_switches_every_c(plan0):
    torch.manual_seed(0)
    meta, ctrl = RecurrentPolicy(7, SMALL), RecurrentPolicy(4, SMALL)
    agent = HierarchicalAgent(meta, ctrl, never_gate, c=3)
    w = _world(plan0, seed=2)
    agent.reset(w, Instruction("red", "box"), 0)
    calls = []
    orig = agent.meta.__call__

    class Spy:
        def __call__(self, *a):
            calls.append(w.state.step_count)
            return orig(*a)

        def reset(self, seed):
            pass

    agent.meta = Spy()
    img = (w.observe() * 255).astype(np.uint8)
    for _ in range(7):
        a = agent.act(w, img)
        img = (w.step(a).observation * 255).astype(np.uint8)
    assert calls == [0, 3, 6]
    assert agent.enhancement in ENHANCEMENTS


def test_compose_validates(tmp_path):
    meta, ctrl = RecurrentPolicy(7, SMALL), RecurrentPolicy(4, SMALL)
    agent = compose_agent(meta, ctrl, oracle_gate, c=10)
    assert isinstance(agent, HierarchicalAgent) and agent.c == 10
    with pytest.raises(CompositionError, match="meta"):
        compose_agent(RecurrentPolicy(4, SMALL), ctrl, oracle_gate)
    with pytest.raises(CompositionError, match="controller"):
        compose_agent(meta, RecurrentPolicy(7, SMALL), oracle_gate)
    with pytest.raises(CompositionError, match="image_size"):
        compose_agent(meta, RecurrentPolicy(4, ArchConfig(image_size=32, convs=((4, 8, 8),))), oracle_gate)
    path = tmp_path / "m.npz"
    save_checkpoint(path, meta, policy_meta(meta, "meta"))
    data = dict(np.load(path))
    head = json.loads(bytes(data["__meta__"]).decode())
    head["vocab_hash"] = "0" * 16
    data["__meta__"] = np.frombuffer(json.dumps(head).encode(), dtype=np.uint8)
    np.savez(tmp_path / "bad.npz", **data)
    with pytest.raises(CompositionError):
        compose_agent(str(tmp_path / "bad.npz"), ctrl, oracle_gate)
    with pytest.raises(CompositionError):
        compose_agent(str(tmp_path / "missing.npz"), ctrl, oracle_gate)


def test_navenv_query_gate(plan0):
    env = NavEnv([plan0], EnvParams(max_steps=20), gate=lambda *a: True, seed=0)
    env.reset()
    _, r, done, info = env.step(CONTROLLER_ACTIONS.index(Action.QUERY))
    assert info["query_fired"] and info["used_done"]
    assert done == info["success"]  # soft termination: only a correct Done ends the episode


def test_navenv_enhancement_tokens(plan0):
    env = NavEnv([plan0], seed=0)
    obs = env.reset()
    assert env.enhancement is not None and obs["tokens"][4] != 0
    env = NavEnv([plan0], enhance="none", seed=0)
    assert env.reset()["tokens"][4] == 0


def test_plans_for_splits():
    cfg = load_config()
    assert len(plans_for(cfg, "static")) == 1
    tr, ho = plans_for(cfg, "train"), plans_for(cfg, "holdout")
    assert (len(tr), len(ho)) == (194, 30)
    assert not {p.plan_id for p in tr} & {p.plan_id for p in ho}
    mini = load_config(overrides=["environment.template=mini"])
    assert len(plans_for(mini, "all")) == 4
    with pytest.raises(ConfigError):
        plans_for(cfg, "bogus")


def _tiny_cfg(**extra):
    over = ["environment.template=mini", "rl.plans=all", "rl.n_workers=2", "rl.rollout_len=8",
            "rl.total_steps=32", "rl.arch.feat_dim=16", "rl.arch.hidden=16", "hierarchy.meta_steps=64",
            "hierarchy.meta_ppo.n_workers=2", "hierarchy.meta_ppo.rollout_len=14", "environment.max_steps=20"]
    return load_config(overrides=over + [f"{k}={v}" for k, v in extra.items()])


def test_train_controller_smoke(tmp_path):
    model, hist, path = train_controller(_tiny_cfg(), str(tmp_path))
    assert hist[-1]["env_steps"] == 32
    assert (tmp_path / "controller_metrics.csv").exists()
    back = load_controller(path)
    assert back.n_actions == 4
    with pytest.raises(ConfigError, match="hierarchy.controller"):
        load_controller(str(tmp_path / "nope.npz"))


def test_train_meta_coverage_smoke(tmp_path):
    model, hist, path = train_meta_coverage(_tiny_cfg(), str(tmp_path))
    assert model.n_actions == 7 and path.endswith("meta.npz")
    cov = evaluate_coverage(model, plans_for(_tiny_cfg(), "all"), episodes=3)
    assert 1.0 <= cov <= 3.0


def test_frozen_meta_env_reward(plan0):
    torch.manual_seed(0)
    ctrl = RecurrentPolicy(4, SMALL)
    nav = NavEnv([plan0], EnvParams(max_steps=30), enhance="none", seed=1)
    env = FrozenMetaEnv(nav, ctrl, c=10, gamma=0.9, seed=0)
    env.reset()
    seen = []
    step = nav.step

    def spy(a):
        out = step(a)
        seen.append(out[1])
        return out

    nav.step = spy
    _, r, done, _ = env.step(0)
    assert len(seen) == 10 or done
    assert r == pytest.approx(_loop_reward(seen, 0.9, 10), abs=1e-12)
