#!/usr/bin/env python3
"""
Kinematics and collision checks against independent numpy oracles.
"""

import math

import numpy as np
import pytest

from mopa_pd.config import ArmSpec, Obstacle
from mopa_pd.errors import ContractViolation
from mopa_pd.geometry import (
    JointConfig,
    Vec2,
    config_collides,
    end_effector,
    forward_kinematics,
    interpolate,
    motion_collides,
    segments_collide,
)


def _arm(lengths, radius=0.0):
    return ArmSpec(link_lengths=list(lengths), joint_limits=[(-math.pi, math.pi)] * len(lengths),
                   link_radius=radius)


def _point_oracle(a, b, rect, samples=2001, margin=0.0):
    """Dense point sampling along a segment; true when any sample is inside the (grown) rectangle."""
    t = np.linspace(0.0, 1.0, samples)[:, None]
    pts = np.asarray(a) + t * (np.asarray(b) - np.asarray(a))
    xmin, xmax, ymin, ymax = rect[0] - margin, rect[1] + margin, rect[2] - margin, rect[3] + margin
    return bool(np.any((pts[:, 0] >= xmin) & (pts[:, 0] <= xmax) & (pts[:, 1] >= ymin) & (pts[:, 1] <= ymax)))


def test_fk_identity_and_quarter_turn():
    arm = _arm([1.0, 1.0])
    assert np.allclose(end_effector(arm, [0.0, 0.0]), [2.0, 0.0], atol=1e-12)
    assert np.allclose(end_effector(arm, [math.pi / 2, 0.0]), [0.0, 2.0], atol=1e-12)


def test_fk_matches_trig_oracle():
    arm = _arm([1.0, 0.7, 0.5])
    q = [0.3, -0.4, 1.1]
    a1, a2, a3 = q[0], q[0] + q[1], q[0] + q[1] + q[2]
    expected = (1.0 * math.cos(a1) + 0.7 * math.cos(a2) + 0.5 * math.cos(a3),
                1.0 * math.sin(a1) + 0.7 * math.sin(a2) + 0.5 * math.sin(a3))
    assert np.max(np.abs(end_effector(arm, q) - expected)) <= 1e-9

    points = forward_kinematics(arm, q)
    assert np.allclose(points[0], [0.0, 0.0])
    assert np.allclose(np.linalg.norm(np.diff(points, axis=0), axis=1), [1.0, 0.7, 0.5])


def test_fk_rejects_wrong_dimension():
    with pytest.raises(ContractViolation):
        forward_kinematics(_arm([1.0, 1.0]), [0.1, 0.2, 0.3])


def test_fk_lipschitz():
    arm = _arm([1.0, 0.7, 0.5])
    rng = np.random.default_rng(0)
    bound = sum(arm.link_lengths) * arm.n_joints * 1e-6 + 1e-9
    for _ in range(200):
        q = rng.uniform(-math.pi, math.pi, 3)
        delta = rng.uniform(-1e-6, 1e-6, 3)
        moved = np.linalg.norm(end_effector(arm, q + delta) - end_effector(arm, q))
        assert moved <= bound


def test_joint_config_clamps():
    arm = ArmSpec(link_lengths=[1.0, 1.0], joint_limits=[(-1.0, 1.0), (-0.5, 0.5)])
    q = JointConfig.clamped(arm, [2.0, -3.0], gripper=1.7)
    assert q.angles.tolist() == [1.0, -0.5]
    assert q.gripper == 1.0
    with pytest.raises(ContractViolation):
        Vec2(float('nan'), 0.0)


def test_segment_rect_hit_agrees_with_sampling_oracle():
    rect = (0.4, 0.6, -0.1, 0.1)
    segment = np.array([[[0.0, 0.0], [1.0, 0.0]]])
    hit = segments_collide(segment, [Obstacle.box(*rect)], link_radius=0.0)[0]
    assert hit == _point_oracle((0.0, 0.0), (1.0, 0.0), rect) == True  # noqa: E712

    rng = np.random.default_rng(1)
    for _ in range(200):
        a, b = rng.uniform(-0.2, 1.2, 2), rng.uniform(-0.2, 1.2, 2)
        got = segments_collide(np.array([[a, b]]), [Obstacle.box(*rect)], 0.0)[0]
        if _point_oracle(a, b, rect):
            assert got
        elif got:
            # corner clip between oracle samples
            assert _point_oracle(a, b, rect, margin=1e-3)


def test_config_collides_basic_cases():
    arm = _arm([1.0, 1.0], radius=0.05)
    far = [Obstacle.box(5.0, 6.0, 5.0, 6.0), Obstacle.disk(-4.0, -4.0, 0.5)]
    assert not config_collides(arm, [0.0, 0.0], far)
    assert not config_collides(arm, [0.0, 0.0], [])
    assert config_collides(arm, [0.0, 0.0], [Obstacle.disk(1.5, 0.04, 0.01)])


def test_config_collides_permutation_invariant():
    arm = _arm([0.5, 0.45, 0.35], radius=0.015)
    obstacles = [Obstacle.box(0.57, 0.60, -0.23, 0.15), Obstacle.disk(0.3, 0.6, 0.1),
                 Obstacle.box(0.57, 0.98, -0.23, -0.20)]
    rng = np.random.default_rng(2)
    for _ in range(100):
        q = rng.uniform(-math.pi, math.pi, 3)
        assert config_collides(arm, q, obstacles) == config_collides(arm, q, obstacles[::-1])


def test_motion_collides_degenerate_and_mid_sweep():
    arm = _arm([1.0, 1.0], radius=0.0)
    wall = [Obstacle.box(1.2, 1.4, 0.6, 0.9)]
    q_a, q_b = np.array([0.0, 0.0]), np.array([math.pi / 2, 0.0])
    assert not config_collides(arm, q_a, wall) and not config_collides(arm, q_b, wall)
    assert motion_collides(arm, q_a, q_b, wall, resolution=0.01)
    # 10x finer oracle agrees
    assert motion_collides(arm, q_a, q_b, wall, resolution=0.001)
    for q in (q_a, q_b):
        assert motion_collides(arm, q, q, wall) == config_collides(arm, q, wall)


def test_resolution_refinement_is_monotone():
    arm = _arm([0.5, 0.45, 0.35], radius=0.015)
    obstacles = [Obstacle.box(0.57, 0.60, -0.23, 0.15), Obstacle.disk(0.2, 0.7, 0.08)]
    rng = np.random.default_rng(3)
    for _ in range(1000):
        q_a, q_b = rng.uniform(-math.pi, math.pi, 3), rng.uniform(-math.pi, math.pi, 3)
        if motion_collides(arm, q_a, q_b, obstacles, resolution=0.2):
            assert motion_collides(arm, q_a, q_b, obstacles, resolution=0.1)


def test_interpolate_includes_endpoints_and_bounds_step():
    q_a, q_b = np.array([0.0, 0.0]), np.array([0.5, -0.3])
    samples = interpolate(q_a, q_b, 0.02)
    assert np.allclose(samples[0], q_a) and np.allclose(samples[-1], q_b)
    assert np.max(np.abs(np.diff(samples, axis=0))) <= 0.02 + 1e-12
    with pytest.raises(ContractViolation):
        interpolate(q_a, q_b, 0.0)


if __name__ == "__main__":
    test_fk_identity_and_quarter_turn()
    test_fk_matches_trig_oracle()
    test_fk_rejects_wrong_dimension()
    test_fk_lipschitz()
    test_joint_config_clamps()
    test_segment_rect_hit_agrees_with_sampling_oracle()
    test_config_collides_basic_cases()
    test_config_collides_permutation_invariant()
    test_motion_collides_degenerate_and_mid_sweep()
    test_resolution_refinement_is_monotone()
    test_interpolate_includes_endpoints_and_bounds_step()
    print("All geometry tests passed.")
