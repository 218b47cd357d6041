#!/usr/bin/env python3
"""
Planar kinematics and collision primitives.

Links are capsules (segments with radius arm.link_radius); obstacles are
axis-aligned rectangles and circles. Distances are computed with shapely's
vectorized functions over every (segment, obstacle) pair at once.
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence, Tuple, Union

import numpy as np
import shapely

from mopa_pd.config import ArmSpec, Obstacle, ObstacleKind
from mopa_pd.errors import ContractViolation

logger = logging.getLogger(__name__)

DEFAULT_RESOLUTION = 0.02


@dataclass(frozen=True)
class Vec2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ContractViolation(f"non-finite point ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class JointConfig:
    """Joint angles (radians) plus the gripper opening used by Lift."""
    angles: np.ndarray
    gripper: float = 0.0

    @classmethod
    def clamped(cls, arm: ArmSpec, angles: Sequence[float], gripper: float = 0.0) -> 'JointConfig':
        q = clamp_angles(arm, angles)
        q.setflags(write=False)
        return cls(angles=q, gripper=float(min(max(gripper, 0.0), 1.0)))


QLike = Union[JointConfig, Sequence[float], np.ndarray]


def as_angles(arm: ArmSpec, q: QLike) -> np.ndarray:
    angles = q.angles if isinstance(q, JointConfig) else q
    angles = np.asarray(angles, dtype=np.float64)
    if angles.shape != (arm.n_joints,):
        raise ContractViolation(
            f"expected {arm.n_joints} joint angles, got shape {angles.shape}"
        )
    return angles


def joint_limit_arrays(arm: ArmSpec) -> Tuple[np.ndarray, np.ndarray]:
    limits = np.asarray(arm.joint_limits, dtype=np.float64)
    return limits[:, 0], limits[:, 1]


def clamp_angles(arm: ArmSpec, angles: Sequence[float]) -> np.ndarray:
    lo, hi = joint_limit_arrays(arm)
    return np.clip(as_angles(arm, angles), lo, hi)


# -------------------------------------------------------------------------
# Kinematics
# -------------------------------------------------------------------------

def forward_kinematics_batch(arm: ArmSpec, configs: np.ndarray) -> np.ndarray:
    """Joint positions for N configurations, shape (N, k+1, 2)."""
    configs = np.asarray(configs, dtype=np.float64)
    if configs.ndim != 2 or configs.shape[1] != arm.n_joints:
        raise ContractViolation(
            f"expected configs of shape (N, {arm.n_joints}), got {configs.shape}"
        )
    heading = np.cumsum(configs, axis=1)
    lengths = np.asarray(arm.link_lengths)
    steps = np.stack([np.cos(heading), np.sin(heading)], axis=-1) * lengths[None, :, None]
    points = np.zeros((configs.shape[0], arm.n_joints + 1, 2))
    points[:, 0] = arm.base
    points[:, 1:] = np.asarray(arm.base) + np.cumsum(steps, axis=1)
    return points


def forward_kinematics(arm: ArmSpec, q: QLike) -> np.ndarray:
    """
    Joint positions of one configuration.

    Returns a (k+1, 2) array: row 0 is the base, the last row the end-effector.
    """
    return forward_kinematics_batch(arm, as_angles(arm, q)[None, :])[0]


def end_effector(arm: ArmSpec, q: QLike) -> np.ndarray:
    return forward_kinematics(arm, q)[-1]


def tool_points_batch(arm: ArmSpec, configs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(tail, head) of the rigid tool for N configurations, each (N, 2)."""
    points = forward_kinematics_batch(arm, configs)
    heading = np.sum(np.asarray(configs, dtype=np.float64), axis=1)
    direction = np.stack([np.cos(heading), np.sin(heading)], axis=-1)
    tail = points[:, -1]
    return tail, tail + arm.tool_length * direction


def tool_head(arm: ArmSpec, q: QLike) -> np.ndarray:
    tail, head = tool_points_batch(arm, as_angles(arm, q)[None, :])
    return head[0]


def link_segments(arm: ArmSpec, configs: np.ndarray) -> np.ndarray:
    """Capsule axes for N configurations, shape (N, S, 2, 2); the tool is one more segment."""
    points = forward_kinematics_batch(arm, configs)
    segments = np.stack([points[:, :-1], points[:, 1:]], axis=2)
    if arm.tool_length > 0:
        tail, head = tool_points_batch(arm, configs)
        segments = np.concatenate([segments, np.stack([tail, head], axis=1)[:, None]], axis=1)
    return segments


# -------------------------------------------------------------------------
# Collision
# -------------------------------------------------------------------------

@lru_cache(maxsize=64)
def _obstacle_field(key: Tuple) -> Tuple[np.ndarray, np.ndarray]:
    geoms = []
    clearances = []
    for kind, rect, center, radius in key:
        if kind == ObstacleKind.RECT.value:
            xmin, xmax, ymin, ymax = rect
            geoms.append(shapely.box(xmin, ymin, xmax, ymax))
            clearances.append(0.0)
        else:
            geoms.append(shapely.points(center[0], center[1]))
            clearances.append(radius)
    return np.array(geoms, dtype=object), np.asarray(clearances, dtype=np.float64)


def obstacle_field(obstacles: Iterable[Obstacle]) -> Tuple[np.ndarray, np.ndarray]:
    """shapely geometries and the distance each must keep from a segment axis."""
    key = tuple(
        (ObstacleKind(o.kind).value, o.rect, o.center, o.radius) for o in obstacles
    )
    return _obstacle_field(key)


def segments_collide(segments: np.ndarray, obstacles: Sequence[Obstacle],
                     link_radius: float) -> np.ndarray:
    """Per-segment hit flags for segments shaped (..., 2, 2)."""
    segments = np.asarray(segments, dtype=np.float64)
    lead_shape = segments.shape[:-2]
    if not obstacles:
        return np.zeros(lead_shape, dtype=bool)
    geoms, clearances = obstacle_field(obstacles)
    lines = shapely.linestrings(segments.reshape(-1, 2, 2))
    dist = shapely.distance(lines[:, None], geoms[None, :])
    hits = np.any(dist <= clearances[None, :] + link_radius, axis=1)
    return hits.reshape(lead_shape)


def configs_collide(arm: ArmSpec, configs: np.ndarray, obstacles: Sequence[Obstacle]) -> np.ndarray:
    """Collision flag for each of N configurations."""
    configs = np.asarray(configs, dtype=np.float64)
    if not obstacles:
        return np.zeros(len(configs), dtype=bool)
    return segments_collide(link_segments(arm, configs), obstacles, arm.link_radius).any(axis=1)


def config_collides(arm: ArmSpec, q: QLike, obstacles: Sequence[Obstacle]) -> bool:
    return bool(configs_collide(arm, as_angles(arm, q)[None, :], obstacles)[0])


def interpolate(q_a: np.ndarray, q_b: np.ndarray, resolution: float) -> np.ndarray:
    """
    Sample the straight joint-space segment q_a -> q_b, endpoints included.

    The number of intervals is a power of two with step <= resolution, so
    halving the resolution only ever adds samples.
    """
    if not resolution > 0:
        raise ContractViolation(f"resolution must be > 0, got {resolution}")
    span = float(np.max(np.abs(q_b - q_a))) if len(q_a) else 0.0
    if span == 0.0:
        return q_a[None, :].copy()
    n = 1 << max(0, math.ceil(math.log2(span / resolution)))
    t = np.arange(n + 1, dtype=np.float64) / n
    return q_a[None, :] + t[:, None] * (q_b - q_a)[None, :]


def motion_collides(arm: ArmSpec, q_a: QLike, q_b: QLike, obstacles: Sequence[Obstacle],
                    resolution: float = DEFAULT_RESOLUTION) -> bool:
    samples = interpolate(as_angles(arm, q_a), as_angles(arm, q_b), resolution)
    if not obstacles:
        return False
    return bool(configs_collide(arm, samples, obstacles).any())


def point_in_region(point: np.ndarray, region: Tuple[float, float, float, float], margin: float = 0.0) -> bool:
    xmin, xmax, ymin, ymax = region
    return (xmin - margin <= point[0] <= xmax + margin) and (ymin - margin <= point[1] <= ymax + margin)
