#!/usr/bin/env python3
"""
Planar obstructed-manipulation tasks: Push, Lift and Assembly.

The functional API (reset, step_direct, compute_reward, is_success) is
pure: every call returns a new EnvState. PlanarArmEnv wraps it in the
usual reset(seed)/step(action) object for training loops.

Control is kinematic: an action is a joint displacement applied in one
step if the swept motion is collision-free, otherwise the arm stays put.
"""

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from mopa_pd.config import EnvConfig, Task
from mopa_pd.errors import ConfigurationError, ContractViolation
from mopa_pd.geometry import (
    JointConfig,
    clamp_angles,
    config_collides,
    end_effector,
    forward_kinematics,
    forward_kinematics_batch,
    interpolate,
    motion_collides,
    point_in_region,
    tool_points_batch,
)
from mopa_pd.render import AppearanceParams, render, sample_appearance

logger = logging.getLogger(__name__)

RESET_ATTEMPTS = 1000
ACTION_TOLERANCE = 1e-9

# Lift shaping weights: reach, grasp, lift
LIFT_STAGES = (0.3, 0.35, 0.35)


@dataclass(frozen=True)
class EnvState:
    q: JointConfig
    qdot: np.ndarray
    object_pos: np.ndarray
    goal_pos: np.ndarray
    grasped: bool
    contact: bool
    step_count: int
    seed: int
    appearance: AppearanceParams


@dataclass(frozen=True)
class Observation:
    """Actor input: rendered image (None when rendering is off) and joint features."""
    image: Optional[np.ndarray]
    joint_features: np.ndarray


@dataclass(frozen=True)
class StepOutcome:
    state: EnvState
    state_vec: np.ndarray
    obs: Observation
    reward: float
    done: bool
    success: bool
    blocked: bool = False


# -------------------------------------------------------------------------
# Dimensions
# -------------------------------------------------------------------------

def action_dim(cfg: EnvConfig) -> int:
    return cfg.arm.n_joints + (1 if cfg.task == Task.LIFT else 0)


def joint_feature_dim(cfg: EnvConfig) -> int:
    return 3 * cfg.arm.n_joints + 1


def state_dim(cfg: EnvConfig) -> int:
    k = cfg.arm.n_joints
    return {Task.PUSH: 3 * k + 8, Task.LIFT: 3 * k + 9, Task.ASSEMBLY: 3 * k + 7}[cfg.task]


# -------------------------------------------------------------------------
# Observables
# -------------------------------------------------------------------------

def _sin_cos(angles: np.ndarray) -> np.ndarray:
    return np.stack([np.sin(angles), np.cos(angles)], axis=1).ravel()


def joint_features(state: EnvState) -> np.ndarray:
    """[sin q_i, cos q_i per joint] + joint velocities + gripper."""
    return np.concatenate([
        _sin_cos(state.q.angles), state.qdot, [state.q.gripper]
    ]).astype(np.float32)


def peg_points(cfg: EnvConfig, state: EnvState):
    tail, head = tool_points_batch(cfg.arm, state.q.angles[None, :])
    return tail[0], head[0]


def active_distance(state: EnvState, cfg: EnvConfig) -> float:
    """Distance the shaping reward is computed from."""
    if cfg.task == Task.ASSEMBLY:
        _, head = peg_points(cfg, state)
        return float(np.linalg.norm(head - state.goal_pos))
    if cfg.task == Task.PUSH and state.contact:
        return float(np.linalg.norm(state.object_pos - state.goal_pos))
    ee = end_effector(cfg.arm, state.q)
    return float(np.linalg.norm(ee - state.object_pos))


def state_vector(state: EnvState, cfg: EnvConfig) -> np.ndarray:
    sc = _sin_cos(state.q.angles)
    ee = end_effector(cfg.arm, state.q)
    if cfg.task == Task.PUSH:
        parts = [
            sc, state.qdot, ee, state.object_pos, state.goal_pos,
            [np.linalg.norm(ee - state.object_pos), np.linalg.norm(state.object_pos - state.goal_pos)],
        ]
    elif cfg.task == Task.LIFT:
        parts = [
            sc, state.qdot, [state.q.gripper], state.object_pos, ee, state.goal_pos,
            [np.linalg.norm(ee - state.object_pos), float(state.grasped)],
        ]
    else:
        tail, head = peg_points(cfg, state)
        parts = [sc, state.qdot, state.goal_pos, head, tail, [np.linalg.norm(head - state.goal_pos)]]
    return np.concatenate([np.ravel(p) for p in parts]).astype(np.float32)


def observe(state: EnvState, cfg: EnvConfig, with_image: bool = True) -> Observation:
    image = render(state, cfg, state.appearance) if with_image else None
    return Observation(image=image, joint_features=joint_features(state))


# -------------------------------------------------------------------------
# Reward and success
# -------------------------------------------------------------------------

def is_success(state: EnvState, cfg: EnvConfig) -> bool:
    if cfg.task == Task.LIFT:
        return bool(state.grasped and state.object_pos[1] > cfg.wall_top + cfg.object_radius)
    if cfg.task == Task.ASSEMBLY:
        return active_distance(state, cfg) < cfg.success_dist
    return bool(np.linalg.norm(state.object_pos - state.goal_pos) < cfg.success_dist)


def lift_progress(state: EnvState, cfg: EnvConfig) -> float:
    span = cfg.wall_top + cfg.object_radius - cfg.floor_y
    return float(np.clip((state.object_pos[1] - cfg.floor_y) / span, 0.0, 1.0))


def compute_reward(state: EnvState, cfg: EnvConfig) -> float:
    eps = cfg.epsilon
    if cfg.task == Task.LIFT:
        reach_w, grasp_w, lift_w = LIFT_STAGES
        if state.grasped:
            shaping = reach_w + grasp_w + lift_w * lift_progress(state, cfg)
        else:
            shaping = reach_w * max(0.0, eps - active_distance(state, cfg)) / eps
    else:
        shaping = max(0.0, eps - active_distance(state, cfg)) / eps
    reward = cfg.reward_scale * shaping
    if is_success(state, cfg):
        reward += cfg.success_bonus
    return float(reward)


# -------------------------------------------------------------------------
# Reset / step
# -------------------------------------------------------------------------

def _arm_outside(cfg: EnvConfig, angles: np.ndarray) -> bool:
    if cfg.box_region is None:
        return True
    points = forward_kinematics(cfg.arm, angles)
    return not any(point_in_region(p, cfg.box_region, cfg.arm.link_radius) for p in points)


def _sample_start(cfg: EnvConfig, rng: np.random.Generator) -> np.ndarray:
    center = np.asarray(cfg.init_q_center, dtype=np.float64)
    for _ in range(RESET_ATTEMPTS):
        angles = clamp_angles(cfg.arm, center + rng.uniform(-cfg.init_q_noise, cfg.init_q_noise, center.shape))
        if config_collides(cfg.arm, angles, cfg.obstacles):
            continue
        if not _arm_outside(cfg, angles):
            continue
        return angles
    raise ConfigurationError(
        f"no collision-free start for task '{cfg.task.value}' after {RESET_ATTEMPTS} attempts"
    )


def _uniform_in(region, rng: np.random.Generator) -> np.ndarray:
    xmin, xmax, ymin, ymax = region
    return np.array([rng.uniform(xmin, xmax), rng.uniform(ymin, ymax)])


def reset(cfg: EnvConfig, seed: int, with_image: bool = True) -> StepOutcome:
    """Sample a start state from the task's initial distribution; deterministic in seed."""
    rng = np.random.default_rng(seed)
    angles = _sample_start(cfg, rng)
    q = JointConfig.clamped(cfg.arm, angles, gripper=0.0)

    if cfg.task == Task.PUSH:
        obj = _uniform_in(cfg.object_region, rng)
        goal = _uniform_in(cfg.goal_region, rng)
        for _ in range(RESET_ATTEMPTS):
            if np.linalg.norm(goal - obj) >= cfg.min_goal_dist:
                break
            goal = _uniform_in(cfg.goal_region, rng)
    elif cfg.task == Task.LIFT:
        obj = np.array([rng.uniform(cfg.object_region[0], cfg.object_region[1]), cfg.floor_y])
        goal = np.array([obj[0], cfg.wall_top + 2 * cfg.object_radius])
    else:
        goal = _uniform_in(cfg.goal_region, rng)
        obj = tool_points_batch(cfg.arm, angles[None, :])[1][0]

    appearance = sample_appearance(cfg, rng)
    state = EnvState(
        q=q,
        qdot=np.zeros(cfg.arm.n_joints),
        object_pos=obj,
        goal_pos=goal,
        grasped=False,
        contact=False,
        step_count=0,
        seed=int(seed),
        appearance=appearance,
    )
    logger.debug(f"reset task={cfg.task.value} seed={seed} q={np.round(angles, 3)}")
    return StepOutcome(
        state=state,
        state_vec=state_vector(state, cfg),
        obs=observe(state, cfg, with_image),
        reward=0.0,
        done=False,
        success=False,
    )


def _push_object(cfg: EnvConfig, state: EnvState, angles_from: np.ndarray,
                 angles_to: np.ndarray):
    """Sweep the end-effector and shove the disk out of its way."""
    samples = interpolate(angles_from, angles_to, cfg.collision_resolution)
    ee_path = forward_kinematics_batch(cfg.arm, samples)[:, -1]
    contact_radius = cfg.object_radius + cfg.arm.link_radius
    obj = state.object_pos.copy()
    touched = False
    for prev, p in zip(ee_path[:-1], ee_path[1:]):
        offset = obj - p
        dist = float(np.hypot(*offset))
        if dist >= contact_radius:
            continue
        if dist < 1e-12:
            offset = p - prev
            dist = float(np.hypot(*offset))
            if dist < 1e-12:
                continue
        obj = p + offset / dist * contact_radius
        touched = True
    if cfg.push_region is not None:
        xmin, xmax, ymin, ymax = cfg.push_region
        obj = np.array([np.clip(obj[0], xmin, xmax), np.clip(obj[1], ymin, ymax)])
    return obj, touched


def step_direct(state: EnvState, action: np.ndarray, cfg: EnvConfig,
                with_image: bool = True) -> StepOutcome:
    """Apply one bounded joint displacement (plus gripper delta for Lift)."""
    a = np.asarray(action, dtype=np.float64)
    k = cfg.arm.n_joints
    if a.shape != (action_dim(cfg),):
        raise ContractViolation(f"expected action of shape ({action_dim(cfg)},), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractViolation("non-finite action")
    if np.max(np.abs(a)) > cfg.delta_q_step + ACTION_TOLERANCE:
        raise ContractViolation(
            f"|a|_inf = {np.max(np.abs(a)):.6f} exceeds delta_q_step {cfg.delta_q_step}"
        )
    if state.step_count >= cfg.horizon or is_success(state, cfg):
        raise ContractViolation("step on a finished episode")

    q_from = state.q.angles
    q_to = clamp_angles(cfg.arm, q_from + a[:k])
    blocked = bool(np.any(q_to != q_from)) and motion_collides(
        cfg.arm, q_from, q_to, cfg.obstacles, cfg.collision_resolution
    )
    if blocked:
        q_to = q_from

    gripper = state.q.gripper
    if cfg.task == Task.LIFT:
        gripper = float(np.clip(gripper + cfg.gripper_gain * a[k], 0.0, 1.0))
    q_new = JointConfig.clamped(cfg.arm, q_to, gripper)

    obj = state.object_pos
    grasped = state.grasped
    contact = state.contact
    if cfg.task == Task.PUSH and not blocked:
        obj, touched = _push_object(cfg, state, q_from, q_to)
        contact = contact or touched
    elif cfg.task == Task.LIFT:
        ee = end_effector(cfg.arm, q_new)
        if grasped and gripper <= 0.5:
            grasped = False
            obj = np.array([obj[0], cfg.floor_y])
        elif not grasped and gripper > 0.5 and np.linalg.norm(ee - obj) < cfg.grasp_radius:
            grasped = True
        if grasped:
            obj = ee.copy()
    elif cfg.task == Task.ASSEMBLY:
        obj = tool_points_batch(cfg.arm, q_new.angles[None, :])[1][0]

    new_state = replace(
        state,
        q=q_new,
        qdot=q_to - q_from,
        object_pos=obj,
        grasped=grasped,
        contact=contact,
        step_count=state.step_count + 1,
    )
    success = is_success(new_state, cfg)
    done = success or new_state.step_count >= cfg.horizon
    return StepOutcome(
        state=new_state,
        state_vec=state_vector(new_state, cfg),
        obs=observe(new_state, cfg, with_image),
        reward=compute_reward(new_state, cfg),
        done=done,
        success=success,
        blocked=blocked,
    )


class PlanarArmEnv:
    """Stateful wrapper: reset(seed) -> outcome, step(action) -> outcome."""

    def __init__(self, cfg: EnvConfig, render: bool = True):
        self.cfg = cfg
        self.render = render
        self.outcome: Optional[StepOutcome] = None

    @property
    def state(self) -> EnvState:
        if self.outcome is None:
            raise ContractViolation("environment has not been reset")
        return self.outcome.state

    def reset(self, seed: int) -> StepOutcome:
        self.outcome = reset(self.cfg, seed, self.render)
        return self.outcome

    def step(self, action: np.ndarray) -> StepOutcome:
        self.outcome = step_direct(self.state, action, self.cfg, self.render)
        return self.outcome
