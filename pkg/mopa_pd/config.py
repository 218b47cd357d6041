#!/usr/bin/env python3
"""
Typed configuration models and the flat key-value config loader.

Every tunable of the workbench lives in one of the pydantic models below.
Task layouts (arm, obstacles, spawn regions) come from default_env_config();
a run can override any field through a `key = value` text file and
`--set key=value` flags, which are merged by build_run_config().
"""

import logging
import math
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from mopa_pd.errors import ConfigurationError

logger = logging.getLogger(__name__)

Region = Tuple[float, float, float, float]


class Task(str, Enum):
    PUSH = "push"
    LIFT = "lift"
    ASSEMBLY = "assembly"


class ObstacleKind(str, Enum):
    RECT = "rect"
    CIRCLE = "circle"


class ArmSpec(BaseModel):
    """Planar serial arm: base position, link lengths, limits and capsule radius."""
    model_config = {"frozen": True}

    base: Tuple[float, float] = (0.0, 0.0)
    link_lengths: List[float]
    joint_limits: List[Tuple[float, float]]
    link_radius: float = Field(default=0.015, ge=0.0)
    tool_length: float = Field(default=0.0, ge=0.0, description="Rigid tool (peg) extending the last link")

    @field_validator('link_lengths')
    @classmethod
    def validate_lengths(cls, v: List[float]) -> List[float]:
        if len(v) < 2:
            raise ValueError('an arm needs at least 2 links')
        if any(not (length > 0) for length in v):
            raise ValueError('link lengths must be > 0')
        return v

    @model_validator(mode='after')
    def validate_limits(self) -> 'ArmSpec':
        if len(self.joint_limits) != len(self.link_lengths):
            raise ValueError(
                f'{len(self.joint_limits)} joint limits for {len(self.link_lengths)} links'
            )
        for i, (lo, hi) in enumerate(self.joint_limits):
            if not lo < hi:
                raise ValueError(f'joint {i}: lower limit {lo} must be below upper limit {hi}')
        return self

    @property
    def n_joints(self) -> int:
        return len(self.link_lengths)

    @property
    def reach(self) -> float:
        return float(sum(self.link_lengths) + self.tool_length)


class Obstacle(BaseModel):
    """Axis-aligned rectangle or circle in the workspace plane."""
    model_config = {"frozen": True}

    kind: ObstacleKind
    rect: Optional[Tuple[float, float, float, float]] = None
    center: Optional[Tuple[float, float]] = None
    radius: Optional[float] = None

    @model_validator(mode='after')
    def validate_shape(self) -> 'Obstacle':
        if self.kind == ObstacleKind.RECT:
            if self.rect is None:
                raise ValueError('rect obstacle needs rect = (xmin, xmax, ymin, ymax)')
            xmin, xmax, ymin, ymax = self.rect
            if not (xmin < xmax and ymin < ymax):
                raise ValueError(f'degenerate rect {self.rect}')
        else:
            if self.center is None or self.radius is None:
                raise ValueError('circle obstacle needs center and radius')
            if not self.radius > 0:
                raise ValueError(f'circle radius must be > 0, got {self.radius}')
        return self

    @classmethod
    def box(cls, xmin: float, xmax: float, ymin: float, ymax: float) -> 'Obstacle':
        return cls(kind=ObstacleKind.RECT, rect=(xmin, xmax, ymin, ymax))

    @classmethod
    def disk(cls, cx: float, cy: float, r: float) -> 'Obstacle':
        return cls(kind=ObstacleKind.CIRCLE, center=(cx, cy), radius=r)

    @classmethod
    def parse(cls, text: str) -> 'Obstacle':
        """Parse `rect xmin xmax ymin ymax` or `circle cx cy r`."""
        parts = text.split()
        try:
            if parts[0] == 'rect' and len(parts) == 5:
                return cls.box(*map(float, parts[1:]))
            if parts[0] == 'circle' and len(parts) == 4:
                return cls.disk(*map(float, parts[1:]))
        except (ValueError, ValidationError) as e:
            raise ConfigurationError(f"invalid obstacle '{text}': {e}") from e
        raise ConfigurationError(f"invalid obstacle '{text}' (expected 'rect xmin xmax ymin ymax' or 'circle cx cy r')")


def _check_color_range(v: List[float]) -> List[float]:
    if len(v) != 6:
        raise ValueError('a color range is 6 numbers: r_lo,g_lo,b_lo,r_hi,g_hi,b_hi')
    if any(c < 0.0 or c > 1.0 for c in v):
        raise ValueError('color components must lie in [0, 1]')
    if any(v[i] > v[i + 3] for i in range(3)):
        raise ValueError('color range lower bound exceeds upper bound')
    return v


class DomainRandomizationSpec(BaseModel):
    """Per-episode appearance randomization. Geometry is never randomized."""
    enabled: bool = False
    arm_color: List[float] = [0.35, 0.35, 0.45, 0.95, 0.95, 1.0]
    obstacle_color: List[float] = [0.2, 0.1, 0.0, 0.8, 0.6, 0.5]
    object_color: List[float] = [0.5, 0.0, 0.0, 1.0, 0.5, 0.3]
    goal_color: List[float] = [0.0, 0.4, 0.0, 0.4, 1.0, 0.5]
    background_color: List[float] = [0.0, 0.0, 0.0, 0.35, 0.35, 0.35]
    lighting_gain: Tuple[float, float] = (0.7, 1.3)
    texture_noise: float = Field(default=0.05, ge=0.0, le=0.5)

    @field_validator('arm_color', 'obstacle_color', 'object_color', 'goal_color', 'background_color')
    @classmethod
    def validate_colors(cls, v: List[float]) -> List[float]:
        return _check_color_range(v)

    @field_validator('lighting_gain')
    @classmethod
    def validate_gain(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        lo, hi = v
        if not (0.0 < lo <= hi <= 2.0):
            raise ValueError(f'lighting gain range must satisfy 0 < lo <= hi <= 2, got {v}')
        return v


class ScenarioSpec(BaseModel):
    """Visual perturbations used by transfer evaluation."""
    name: str = 'original'
    n_distractors: int = Field(default=0, ge=0)
    distractor_radius: float = Field(default=0.04, gt=0.0)
    background_color: Optional[List[float]] = None
    obstacle_visual_scale: float = Field(default=1.0, gt=0.0)
    obstacle_stripes: bool = False

    @field_validator('background_color')
    @classmethod
    def validate_background(cls, v: Optional[List[float]]) -> Optional[List[float]]:
        if v is not None and (len(v) != 3 or any(c < 0.0 or c > 1.0 for c in v)):
            raise ValueError('background_color must be 3 components in [0, 1]')
        return v


class EnvConfig(BaseModel):
    task: Task
    arm: ArmSpec
    obstacles: List[Obstacle] = []
    epsilon: float = Field(gt=0.0, description="Reward-activation radius (m)")
    success_dist: float = Field(default=0.05, gt=0.0)
    horizon: int = Field(default=250, gt=0)
    success_bonus: float = Field(default=150.0, ge=0.0)
    reward_scale: float = Field(default=1.0, gt=0.0)
    image_size: int = Field(default=32, ge=8)
    dr: DomainRandomizationSpec = DomainRandomizationSpec()
    scenario: ScenarioSpec = ScenarioSpec()
    delta_q_step: float = Field(default=0.1, gt=0.0)
    collision_resolution: float = Field(default=0.02, gt=0.0)

    # task layout
    view: Region = (-0.1, 1.3, -0.35, 1.05)
    object_radius: float = Field(default=0.035, gt=0.0)
    object_region: Region
    goal_region: Region
    min_goal_dist: float = Field(default=0.08, ge=0.0)
    box_region: Optional[Region] = None
    push_region: Optional[Region] = None
    init_q_center: List[float]
    init_q_noise: float = Field(default=0.3, ge=0.0)
    grasp_radius: float = Field(default=0.05, gt=0.0)
    gripper_gain: float = Field(default=5.0, gt=0.0)
    floor_y: float = 0.0
    wall_top: float = 0.0

    @model_validator(mode='after')
    def validate_layout(self) -> 'EnvConfig':
        if len(self.init_q_center) != self.arm.n_joints:
            raise ValueError(
                f'init_q_center has {len(self.init_q_center)} angles for a {self.arm.n_joints}-joint arm'
            )
        for name in ('view', 'object_region', 'goal_region'):
            xmin, xmax, ymin, ymax = getattr(self, name)
            if xmin > xmax or ymin > ymax:
                raise ValueError(f'{name} bounds are inverted: {getattr(self, name)}')
        if self.task == Task.ASSEMBLY and self.arm.tool_length <= 0:
            raise ValueError('assembly needs a peg: arm.tool_length must be > 0')
        return self


class PlannerConfig(BaseModel):
    max_iterations: int = Field(default=2000, gt=0)
    extend_step: float = Field(default=0.2, gt=0.0)
    goal_tolerance: float = Field(default=1e-6, ge=0.0)
    shortcut_rounds: int = Field(default=100, ge=0)
    collision_resolution: float = Field(default=0.02, gt=0.0)
    seed: int = 0


class SACConfig(BaseModel):
    gamma: float = Field(default=0.99, gt=0.0, lt=1.0)
    tau: float = Field(default=0.005, gt=0.0, le=1.0)
    batch_size: int = Field(default=256, gt=0)
    lr: float = Field(default=1e-5, gt=0.0)
    updates_per_env_step: int = Field(default=1, ge=1)
    target_entropy: Optional[float] = None
    init_log_alpha: float = 0.0
    buffer_capacity: int = Field(default=1_000_000, gt=0)
    reward_scale: float = Field(default=1.0, gt=0.0)
    hidden: int = Field(default=256, gt=0)


class MoPAConfig(BaseModel):
    delta_q_mp: float = Field(default=1.0, gt=0.0)
    warmup_steps: int = Field(default=1000, ge=0)
    checkpoint_every: int = Field(default=10_000, gt=0)
    lr: float = Field(default=3e-4, gt=0.0)


class BCTrainConfig(BaseModel):
    lr: float = Field(default=5e-4, gt=0.0)
    batch_size: int = Field(default=512, gt=0)
    train_fraction: float = Field(default=0.9, gt=0.0, lt=1.0)
    epochs: int = Field(default=140, ge=0)
    scheduler_step: int = Field(default=5, gt=0)
    scheduler_decay: float = Field(default=0.99, gt=0.0, le=1.0)
    val_episodes: int = Field(default=5, ge=0)
    val_seeds: int = Field(default=6, ge=0)
    log_std_init: float = -1.0

    @property
    def test_fraction(self) -> float:
        return 1.0 - self.train_fraction


class Stage2Config(BaseModel):
    alpha_offset: float = 2.0
    init_weights: bool = True
    smoothing: bool = True
    expert_trajectories: int = Field(default=100, gt=0)
    expert_retry_factor: int = Field(default=10, ge=1)
    agent_buffer_capacity: int = Field(default=200_000, gt=0)
    eval_every: int = Field(default=5000, gt=0)
    eval_episodes: int = Field(default=20, ge=0)
    milestone_asr: float = Field(default=0.9, ge=0.0, le=1.0)
    checkpoint_every: int = Field(default=10_000, gt=0)


class RunConfig(BaseModel):
    """Everything one CLI invocation needs."""
    seed: int = 0
    env: EnvConfig
    planner: PlannerConfig = PlannerConfig()
    sac: SACConfig = SACConfig()
    mopa: MoPAConfig = MoPAConfig()
    bc: BCTrainConfig = BCTrainConfig()
    stage2: Stage2Config = Stage2Config()


# -------------------------------------------------------------------------
# Task layouts
# -------------------------------------------------------------------------

_STANDARD_LIMITS = [(-math.pi, math.pi), (-2.8, 2.8), (-2.8, 2.8)]


def default_env_config(task: Union[Task, str]) -> EnvConfig:
    """Built-in layout for one of the three planar tasks."""
    try:
        task = Task(task)
    except ValueError as e:
        raise ConfigurationError(f"unknown task '{task}' (expected push, lift or assembly)") from e

    if task == Task.PUSH:
        # C-shaped box open towards +y; the arm starts above the opening
        return EnvConfig(
            task=task,
            arm=ArmSpec(link_lengths=[0.5, 0.45, 0.35], joint_limits=_STANDARD_LIMITS),
            obstacles=[
                Obstacle.box(0.57, 0.60, -0.23, 0.15),
                Obstacle.box(0.95, 0.98, -0.23, 0.15),
                Obstacle.box(0.57, 0.98, -0.23, -0.20),
            ],
            epsilon=0.1,
            reward_scale=0.8,
            view=(-0.1, 1.3, -0.35, 1.05),
            object_radius=0.035,
            object_region=(0.68, 0.86, -0.06, 0.04),
            goal_region=(0.68, 0.86, -0.16, -0.10),
            min_goal_dist=0.08,
            box_region=(0.57, 0.98, -0.23, 0.15),
            push_region=(0.635, 0.915, -0.165, 0.115),
            init_q_center=[0.9, 0.3, -0.8],
        )
    if task == Task.LIFT:
        # side view: walled box on the ground, object resting on the floor
        return EnvConfig(
            task=task,
            arm=ArmSpec(link_lengths=[0.5, 0.45, 0.35], joint_limits=_STANDARD_LIMITS),
            obstacles=[
                Obstacle.box(0.52, 0.55, -0.48, -0.20),
                Obstacle.box(0.85, 0.88, -0.48, -0.20),
                Obstacle.box(0.52, 0.88, -0.48, -0.45),
                Obstacle.box(-0.3, 1.4, -0.62, -0.48),
            ],
            epsilon=0.2,
            reward_scale=0.5,
            view=(-0.1, 1.3, -0.65, 0.75),
            object_radius=0.03,
            object_region=(0.62, 0.78, -0.42, -0.42),
            goal_region=(0.62, 0.78, -0.11, -0.11),
            box_region=(0.52, 0.88, -0.48, -0.20),
            init_q_center=[0.4, -0.6, -0.6],
            floor_y=-0.42,
            wall_top=-0.20,
        )
    # top-down: peg on the end-effector, hole ringed by three table legs
    hole = (0.75, 0.35)
    legs = [
        Obstacle.disk(hole[0] + 0.13 * math.cos(a), hole[1] + 0.13 * math.sin(a), 0.03)
        for a in (math.pi / 2, 7 * math.pi / 6, 11 * math.pi / 6)
    ]
    return EnvConfig(
        task=task,
        arm=ArmSpec(link_lengths=[0.45, 0.4, 0.25], joint_limits=_STANDARD_LIMITS, tool_length=0.12),
        obstacles=legs,
        epsilon=0.3,
        reward_scale=1.0,
        view=(-0.1, 1.3, -0.5, 0.9),
        object_radius=0.02,
        object_region=(hole[0], hole[0], hole[1], hole[1]),
        goal_region=(hole[0], hole[0], hole[1], hole[1]),
        init_q_center=[-0.5, 0.6, 0.6],
    )


# -------------------------------------------------------------------------
# Flat key-value files
# -------------------------------------------------------------------------

SECTIONS = ('planner', 'sac', 'mopa', 'bc', 'stage2')


def parse_flat_config(text: str) -> Dict[str, str]:
    """Parse `key = value` lines; `#` starts a comment. Later keys win."""
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got '{raw.strip()}'")
        key, value = (part.strip() for part in line.split('=', 1))
        if not key:
            raise ConfigurationError(f"line {lineno}: empty key")
        values[key] = value
    return values


def load_flat_config(path: Union[str, Path]) -> Dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigurationError(f"cannot read config file {path}: {e}") from e
    return parse_flat_config(text)


def parse_overrides(items: Iterable[str]) -> Dict[str, str]:
    """Turn `--set key=value` arguments into a dict."""
    values: Dict[str, str] = {}
    for item in items:
        if '=' not in item:
            raise ConfigurationError(f"override '{item}' is not of the form key=value")
        key, value = item.split('=', 1)
        values[key.strip()] = value.strip()
    return values


def _coerce(raw: str) -> Any:
    """Comma lists become lists, `lo:hi` items become pairs; pydantic does the rest."""
    if ',' not in raw:
        return tuple(part.strip() for part in raw.split(':')) if ':' in raw else raw
    items = [item.strip() for item in raw.split(',') if item.strip()]
    return [tuple(item.split(':')) if ':' in item else item for item in items]


def _assign(tree: Dict[str, Any], dotted: List[str], value: Any) -> None:
    node = tree
    for part in dotted[:-1]:
        child = node.get(part)
        if not isinstance(child, dict):
            child = {} if child is None else child
            node[part] = child
        node = child
    node[dotted[-1]] = value


def build_run_config(values: Dict[str, str]) -> RunConfig:
    """Merge flat key-values over the task defaults and validate."""
    task = values.get('task', values.get('env.task', Task.PUSH.value))
    env_tree = default_env_config(task).model_dump(mode='json')
    sections: Dict[str, Dict[str, Any]] = {name: {} for name in SECTIONS}
    obstacles: Dict[int, Obstacle] = {}
    seed: Any = 0

    for key, raw in values.items():
        parts = key.split('.')
        if parts[0] == 'env':
            parts = parts[1:]
        if not parts or not all(parts):
            raise ConfigurationError(f"invalid key '{key}'")
        if parts[0] == 'seed' and len(parts) == 1:
            seed = raw
        elif parts[0] in SECTIONS:
            if len(parts) != 2:
                raise ConfigurationError(f"invalid key '{key}'")
            sections[parts[0]][parts[1]] = _coerce(raw)
        elif parts[0] == 'obstacle':
            if len(parts) != 2 or not parts[1].isdigit():
                raise ConfigurationError(f"obstacle keys look like 'obstacle.0', got '{key}'")
            obstacles[int(parts[1])] = Obstacle.parse(raw)
        elif parts[0] == 'task':
            continue
        else:
            _assign(env_tree, parts, _coerce(raw))

    if obstacles:
        env_tree['obstacles'] = [obstacles[i].model_dump(mode='json') for i in sorted(obstacles)]

    try:
        return RunConfig(seed=seed, env=env_tree, **sections)
    except ValidationError as e:
        raise ConfigurationError(f"invalid configuration:\n{e}") from e


def load_run_config(path: Optional[Union[str, Path]] = None,
                    overrides: Optional[Dict[str, str]] = None,
                    task: Optional[str] = None) -> RunConfig:
    """Defaults < config file < overrides < explicit task."""
    values: Dict[str, str] = {}
    if path is not None:
        values.update(load_flat_config(path))
        logger.debug(f"Loaded {len(values)} keys from {path}")
    if overrides:
        values.update(overrides)
    if task is not None:
        values['task'] = task
    return build_run_config(values)


def shipped_config_path(task: Union[Task, str]) -> Path:
    return Path(__file__).parent / 'configs' / f'{Task(task).value}.cfg'
