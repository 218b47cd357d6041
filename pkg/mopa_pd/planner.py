#!/usr/bin/env python3
"""
Joint-space RRT-Connect, path shortcutting and discretization into
bounded direct actions.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from mopa_pd.config import ArmSpec, Obstacle, PlannerConfig
from mopa_pd.geometry import (
    config_collides,
    joint_limit_arrays,
    motion_collides,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Path:
    """Ordered joint-space waypoints, shape (n, k)."""
    waypoints: np.ndarray

    def __len__(self) -> int:
        return len(self.waypoints)

    @property
    def start(self) -> np.ndarray:
        return self.waypoints[0]

    @property
    def end(self) -> np.ndarray:
        return self.waypoints[-1]


class _Extend(Enum):
    TRAPPED = 0
    ADVANCED = 1
    REACHED = 2


class _Tree:
    """Growing array of configurations with parent links."""

    def __init__(self, root: np.ndarray):
        self.nodes = np.empty((64, len(root)))
        self.nodes[0] = root
        self.parents: List[int] = [-1]

    def __len__(self) -> int:
        return len(self.parents)

    def add(self, q: np.ndarray, parent: int) -> int:
        n = len(self.parents)
        if n == len(self.nodes):
            self.nodes = np.concatenate([self.nodes, np.empty_like(self.nodes)])
        self.nodes[n] = q
        self.parents.append(parent)
        return n

    def nearest(self, q: np.ndarray) -> int:
        return int(np.argmin(cdist(self.nodes[:len(self)], q[None, :], 'sqeuclidean')[:, 0]))

    def branch(self, idx: int) -> List[np.ndarray]:
        """Configurations from the root to node idx."""
        out = []
        while idx != -1:
            out.append(self.nodes[idx].copy())
            idx = self.parents[idx]
        return out[::-1]


class RRTConnectPlanner:
    """Bidirectional RRT over the joint-limit box (Kuffner & LaValle's connect heuristic)."""

    def __init__(self, arm: ArmSpec, obstacles: Sequence[Obstacle], cfg: PlannerConfig):
        self.arm = arm
        self.obstacles = list(obstacles)
        self.cfg = cfg
        self.lo, self.hi = joint_limit_arrays(arm)

    def _free_motion(self, q_a: np.ndarray, q_b: np.ndarray) -> bool:
        return not motion_collides(self.arm, q_a, q_b, self.obstacles, self.cfg.collision_resolution)

    def _extend(self, tree: _Tree, target: np.ndarray) -> Tuple[_Extend, int]:
        near = tree.nearest(target)
        q_near = tree.nodes[near]
        delta = target - q_near
        dist = float(np.linalg.norm(delta))
        if dist <= self.cfg.goal_tolerance:
            return _Extend.REACHED, near
        if dist <= self.cfg.extend_step:
            q_new, status = target.copy(), _Extend.REACHED
        else:
            q_new, status = q_near + delta * (self.cfg.extend_step / dist), _Extend.ADVANCED
        if not self._free_motion(q_near, q_new):
            return _Extend.TRAPPED, near
        return status, tree.add(q_new, near)

    def _connect(self, tree: _Tree, target: np.ndarray) -> Tuple[_Extend, int]:
        while True:
            status, idx = self._extend(tree, target)
            if status != _Extend.ADVANCED:
                return status, idx

    def plan(self, q_start: np.ndarray, q_goal: np.ndarray) -> Optional[Path]:
        q_start = np.asarray(q_start, dtype=np.float64)
        q_goal = np.asarray(q_goal, dtype=np.float64)
        if config_collides(self.arm, q_start, self.obstacles):
            logger.warning("Planner start configuration is in collision")
            return None
        if config_collides(self.arm, q_goal, self.obstacles):
            logger.debug("Planner goal configuration is in collision")
            return None
        if np.linalg.norm(q_goal - q_start) <= self.cfg.goal_tolerance:
            return Path(q_start[None, :].copy())

        rng = np.random.default_rng(self.cfg.seed)
        tree_a, tree_b = _Tree(q_start), _Tree(q_goal)
        a_is_start = True
        for iteration in range(self.cfg.max_iterations):
            sample = rng.uniform(self.lo, self.hi)
            status, idx_a = self._extend(tree_a, sample)
            if status != _Extend.TRAPPED:
                status_b, idx_b = self._connect(tree_b, tree_a.nodes[idx_a])
                if status_b == _Extend.REACHED:
                    branch_a = tree_a.branch(idx_a)
                    branch_b = tree_b.branch(idx_b)[::-1]
                    # the joint node appears in both branches; keep the root copy when it is one
                    waypoints = branch_a[:-1] + branch_b if idx_b == 0 else branch_a + branch_b[1:]
                    if not a_is_start:
                        waypoints = waypoints[::-1]
                    logger.debug(
                        f"RRT-Connect solved in {iteration + 1} iterations "
                        f"({len(tree_a) + len(tree_b)} nodes, {len(waypoints)} waypoints)"
                    )
                    return Path(np.asarray(waypoints))
            tree_a, tree_b = tree_b, tree_a
            a_is_start = not a_is_start
        logger.debug(f"RRT-Connect failed after {self.cfg.max_iterations} iterations")
        return None


def rrt_connect(q_start: np.ndarray, q_goal: np.ndarray, arm: ArmSpec,
                obstacles: Sequence[Obstacle], cfg: PlannerConfig) -> Optional[Path]:
    """Plan a collision-free path; None when no path was found."""
    return RRTConnectPlanner(arm, obstacles, cfg).plan(q_start, q_goal)


def shortcut(path: Path, arm: ArmSpec, obstacles: Sequence[Obstacle], cfg: PlannerConfig) -> Path:
    """
    Random-pair shortcutting followed by a greedy farthest-visible pass.

    The random rounds remove detours; the greedy pass makes the result a
    fixed point, so shortcutting twice changes nothing.
    """
    waypoints = [np.asarray(q) for q in path.waypoints]
    if len(waypoints) < 3:
        return Path(np.asarray(waypoints))

    def free(q_a, q_b) -> bool:
        return not motion_collides(arm, q_a, q_b, obstacles, cfg.collision_resolution)

    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.shortcut_rounds):
        if len(waypoints) < 3:
            break
        i, j = np.sort(rng.choice(len(waypoints), 2, replace=False))
        if j - i < 2:
            continue
        if free(waypoints[i], waypoints[j]):
            waypoints = waypoints[:i + 1] + waypoints[j:]

    kept = [waypoints[0]]
    i = 0
    while i < len(waypoints) - 1:
        j = len(waypoints) - 1
        while j > i + 1 and not free(waypoints[i], waypoints[j]):
            j -= 1
        kept.append(waypoints[j])
        i = j
    return Path(np.asarray(kept))


def discretize_path(path: Path, delta_q_step: float) -> List[np.ndarray]:
    """
    Split a path into direct actions with |a|_inf <= delta_q_step.

    Each segment is cut into full steps along its direction plus one shorter
    remainder. Remainders are taken relative to the accumulated position, so
    replaying the actions lands on every waypoint.
    """
    actions: List[np.ndarray] = []
    q = np.array(path.waypoints[0], dtype=np.float64)
    for waypoint in path.waypoints[1:]:
        segment = waypoint - q
        span = float(np.max(np.abs(segment)))
        if span == 0.0:
            continue
        full = segment / span * delta_q_step
        for _ in range(int(np.floor(span / delta_q_step))):
            actions.append(full.copy())
            q = q + full
        rest = waypoint - q
        if np.max(np.abs(rest)) > 1e-12:
            rest = np.clip(rest, -delta_q_step, delta_q_step)
            actions.append(rest)
            q = q + rest
    return actions


def path_length(path: Path) -> float:
    """Joint-space arc length."""
    if len(path) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(path.waypoints, axis=0), axis=1)))


def validate_path(path: Path, arm: ArmSpec, obstacles: Sequence[Obstacle], resolution: float) -> bool:
    """Re-check every segment at the given resolution."""
    if config_collides(arm, path.start, obstacles):
        return False
    return not any(
        motion_collides(arm, a, b, obstacles, resolution)
        for a, b in zip(path.waypoints[:-1], path.waypoints[1:])
    )
