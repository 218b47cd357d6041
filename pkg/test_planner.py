#!/usr/bin/env python3
"""
RRT-Connect, shortcutting and discretization checks on a small two-link scene.
"""

import math

import numpy as np
from scipy.ndimage import label

from mopa_pd.config import ArmSpec, Obstacle, PlannerConfig, Task, default_env_config
from mopa_pd.env import reset
from mopa_pd.geometry import config_collides, configs_collide
from mopa_pd.planner import discretize_path, path_length, rrt_connect, shortcut, validate_path

ARM = ArmSpec(link_lengths=[0.5, 0.5], joint_limits=[(-math.pi, math.pi)] * 2, link_radius=0.01)
# block straddling the x axis: the straight arm cannot swing across it
WALL = [Obstacle.box(0.6, 0.8, -0.1, 0.1)]
START = np.array([0.5, 0.0])
GOAL = np.array([-0.5, 0.0])
# horizontal slot to the right of the base; only a nearly straight arm fits into it
SLOT = [Obstacle.box(0.55, 1.2, 0.07, 1.2), Obstacle.box(0.55, 1.2, -1.2, -0.07)]
CFG = PlannerConfig(seed=4)


def _solve():
    path = rrt_connect(START, GOAL, ARM, WALL, CFG)
    assert path is not None
    return path


def test_path_connects_start_to_goal_without_collision():
    path = _solve()
    assert np.allclose(path.start, START) and np.allclose(path.end, GOAL)
    assert validate_path(path, ARM, WALL, CFG.collision_resolution)


def test_planner_is_deterministic_in_seed():
    first, second = _solve(), _solve()
    assert np.array_equal(first.waypoints, second.waypoints)


def test_start_equals_goal():
    path = rrt_connect(START, START, ARM, WALL, CFG)
    assert len(path) == 1
    assert discretize_path(path, 0.1) == []
    assert path_length(path) == 0.0


def test_colliding_goal_returns_none():
    blocked_goal = np.array([0.0, 0.0])
    assert config_collides(ARM, blocked_goal, WALL)
    assert rrt_connect(START, blocked_goal, ARM, WALL, CFG) is None


def test_goal_within_tolerance_is_already_reached():
    nudged = START + np.array([5e-7, 0.0])
    assert len(rrt_connect(START, nudged, ARM, WALL, CFG)) == 1
    exact = rrt_connect(START, nudged, ARM, WALL, PlannerConfig(seed=4, goal_tolerance=0.0))
    assert len(exact) >= 2
    assert np.array_equal(exact.start, START) and np.array_equal(exact.end, nudged)


def _free_components(arm, obstacles, cells: int = 181):
    """Component id of a configuration on a labelled free-space grid (0 = blocked cell)."""
    lo, hi = np.array(arm.joint_limits).T
    axes = [np.linspace(lo[i], hi[i], cells) for i in range(2)]
    grid = np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1).reshape(-1, 2)
    free = ~configs_collide(arm, grid, obstacles).reshape(cells, cells)
    labels, _ = label(free)

    def component(q):
        idx = tuple(int(round((q[i] - lo[i]) / (hi[i] - lo[i]) * (cells - 1))) for i in range(2))
        return labels[idx]

    return component


def test_narrow_passage_benchmark():
    cfg = PlannerConfig(seed=0)
    component = _free_components(ARM, SLOT)
    rng = np.random.default_rng(7)
    lo, hi = np.array(ARM.joint_limits).T
    queries = []
    while len(queries) < 100:
        start, goal = rng.uniform(lo, hi), rng.uniform(lo, hi)
        if config_collides(ARM, start, SLOT) or config_collides(ARM, goal, SLOT):
            continue
        if component(start) == 0 or component(start) != component(goal):
            continue
        queries.append((start, goal))

    solved = 0
    for i, (start, goal) in enumerate(queries):
        path = rrt_connect(start, goal, ARM, SLOT, cfg.model_copy(update={'seed': i}))
        if path is None:
            continue
        solved += 1
        assert np.array_equal(path.start, start) and np.array_equal(path.end, goal)
        assert validate_path(path, ARM, SLOT, cfg.collision_resolution / 10)
        replayed = start + np.sum(discretize_path(path, 0.1), axis=0)
        assert np.max(np.abs(replayed - goal)) <= 1e-9
    print(f"narrow passage: {solved}/{len(queries)} feasible queries solved")
    assert solved >= 95


def test_shortcut_is_valid_shorter_and_idempotent():
    path = _solve()
    once = shortcut(path, ARM, WALL, CFG)
    twice = shortcut(once, ARM, WALL, CFG)
    assert validate_path(once, ARM, WALL, CFG.collision_resolution)
    assert path_length(once) <= path_length(path) + 1e-12
    assert np.allclose(once.start, START) and np.allclose(once.end, GOAL)
    assert np.array_equal(once.waypoints, twice.waypoints)


def test_discretized_actions_replay_onto_the_goal():
    path = shortcut(_solve(), ARM, WALL, CFG)
    step = 0.1
    actions = discretize_path(path, step)
    assert actions
    assert all(np.max(np.abs(a)) <= step + 1e-12 for a in actions)
    replayed = START + np.sum(actions, axis=0)
    assert np.max(np.abs(replayed - GOAL)) <= 1e-9


def test_plans_inside_the_push_box():
    cfg = default_env_config(Task.PUSH)
    start = reset(cfg, 0, with_image=False).state.q.angles
    goal = reset(cfg, 1, with_image=False).state.q.angles
    path = rrt_connect(start, goal, cfg.arm, cfg.obstacles, PlannerConfig())
    assert path is not None
    assert validate_path(path, cfg.arm, cfg.obstacles, PlannerConfig().collision_resolution)


if __name__ == "__main__":
    test_path_connects_start_to_goal_without_collision()
    test_planner_is_deterministic_in_seed()
    test_start_equals_goal()
    test_colliding_goal_returns_none()
    test_goal_within_tolerance_is_already_reached()
    test_shortcut_is_valid_shorter_and_idempotent()
    test_discretized_actions_replay_onto_the_goal()
    test_plans_inside_the_push_box()
    test_narrow_passage_benchmark()
    print("All planner tests passed.")
