#!/usr/bin/env python3
"""
Scene rasterizer with per-episode appearance randomization.

A render is done in two passes. First a Pillow 'L' label map is drawn
(one integer label per scene element). Then labels are colorized with an
AppearanceParams palette, scaled by a lighting gain and perturbed by static
texture noise. Randomization only touches the colorize pass, so silhouettes
do not depend on appearance.
"""

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Tuple

import numpy as np
from PIL import Image, ImageDraw

from mopa_pd.config import EnvConfig, ObstacleKind, Task
from mopa_pd.geometry import forward_kinematics, tool_points_batch

if TYPE_CHECKING:
    from mopa_pd.env import EnvState

logger = logging.getLogger(__name__)

BACKGROUND, OBSTACLE, GOAL, OBJECT, ARM, TOOL, DISTRACTOR = range(7)
N_LABELS = 7

CANONICAL_PALETTE = np.array([
    [0.10, 0.10, 0.10],   # background
    [0.55, 0.35, 0.20],   # obstacle
    [0.15, 0.75, 0.25],   # goal
    [0.85, 0.20, 0.15],   # object
    [0.70, 0.70, 0.80],   # arm
    [0.90, 0.85, 0.30],   # tool
    [0.20, 0.35, 0.90],   # distractor
], dtype=np.float64)

STRIPE_PERIOD = 2
STRIPE_SHADE = 0.6


@dataclass(frozen=True)
class AppearanceParams:
    """Everything that changes the look of a scene but not its geometry."""
    palette: np.ndarray = field(default_factory=lambda: CANONICAL_PALETTE.copy())
    gain: float = 1.0
    noise_amplitude: float = 0.0
    noise_seed: int = 0
    distractors: Tuple[Tuple[float, float, float], ...] = ()
    obstacle_scale: float = 1.0
    obstacle_stripes: bool = False


def canonical_appearance(cfg: EnvConfig) -> AppearanceParams:
    """Appearance with randomization off; scenario perturbations still apply."""
    return _apply_scenario(cfg, AppearanceParams(), np.random.default_rng(0))


def sample_appearance(cfg: EnvConfig, rng: np.random.Generator) -> AppearanceParams:
    if not cfg.dr.enabled:
        return _apply_scenario(cfg, AppearanceParams(), rng)
    dr = cfg.dr
    palette = CANONICAL_PALETTE.copy()
    for label, color_range in (
        (BACKGROUND, dr.background_color),
        (OBSTACLE, dr.obstacle_color),
        (GOAL, dr.goal_color),
        (OBJECT, dr.object_color),
        (ARM, dr.arm_color),
    ):
        lo, hi = np.asarray(color_range[:3]), np.asarray(color_range[3:])
        palette[label] = rng.uniform(lo, hi)
    appearance = AppearanceParams(
        palette=palette,
        gain=float(rng.uniform(*dr.lighting_gain)),
        noise_amplitude=dr.texture_noise,
        noise_seed=int(rng.integers(2**31 - 1)),
    )
    return _apply_scenario(cfg, appearance, rng)


def _apply_scenario(cfg: EnvConfig, appearance: AppearanceParams,
                    rng: np.random.Generator) -> AppearanceParams:
    scenario = cfg.scenario
    palette = appearance.palette.copy()
    if scenario.background_color is not None:
        palette[BACKGROUND] = scenario.background_color
    return AppearanceParams(
        palette=palette,
        gain=appearance.gain,
        noise_amplitude=appearance.noise_amplitude,
        noise_seed=appearance.noise_seed,
        distractors=sample_distractors(cfg, rng),
        obstacle_scale=scenario.obstacle_visual_scale,
        obstacle_stripes=scenario.obstacle_stripes,
    )


def sample_distractors(cfg: EnvConfig, rng: np.random.Generator,
                       max_attempts: int = 1000) -> Tuple[Tuple[float, float, float], ...]:
    """Distractor disks inside the view, clear of the object and goal spawn regions."""
    n = cfg.scenario.n_distractors
    if n == 0:
        return ()
    r = cfg.scenario.distractor_radius
    xmin, xmax, ymin, ymax = cfg.view
    clearance = r + cfg.object_radius
    disks = []
    for _ in range(max_attempts):
        if len(disks) == n:
            break
        c = rng.uniform([xmin + r, ymin + r], [xmax - r, ymax - r])
        if any(_region_distance(c, region) < clearance for region in (cfg.object_region, cfg.goal_region)):
            continue
        disks.append((float(c[0]), float(c[1]), r))
    if len(disks) < n:
        logger.warning(f"Placed {len(disks)} of {n} distractors after {max_attempts} attempts")
    return tuple(disks)


def _region_distance(point: np.ndarray, region: Tuple[float, float, float, float]) -> float:
    xmin, xmax, ymin, ymax = region
    dx = max(xmin - point[0], 0.0, point[0] - xmax)
    dy = max(ymin - point[1], 0.0, point[1] - ymax)
    return float(np.hypot(dx, dy))


class _View:
    """World-to-pixel mapping for a square canvas (y axis points up)."""

    def __init__(self, cfg: EnvConfig):
        self.size = cfg.image_size
        self.xmin, self.xmax, self.ymin, self.ymax = cfg.view
        self.sx = self.size / (self.xmax - self.xmin)
        self.sy = self.size / (self.ymax - self.ymin)

    def px(self, p) -> Tuple[float, float]:
        return ((p[0] - self.xmin) * self.sx, (self.ymax - p[1]) * self.sy)

    def width(self, meters: float) -> int:
        return max(1, int(round(meters * self.sx)))

    def disk(self, draw: ImageDraw.ImageDraw, center, radius: float, label: int) -> None:
        cx, cy = self.px(center)
        rx, ry = max(radius * self.sx, 0.5), max(radius * self.sy, 0.5)
        draw.ellipse([cx - rx, cy - ry, cx + rx, cy + ry], fill=label)


def label_map(state: 'EnvState', cfg: EnvConfig, appearance: AppearanceParams) -> np.ndarray:
    """Integer label per pixel, shape (S, S), uint8."""
    view = _View(cfg)
    canvas = Image.new('L', (view.size, view.size), BACKGROUND)
    draw = ImageDraw.Draw(canvas)

    scale = appearance.obstacle_scale
    for obstacle in cfg.obstacles:
        if obstacle.kind == ObstacleKind.RECT:
            xmin, xmax, ymin, ymax = obstacle.rect
            cx, cy = (xmin + xmax) / 2, (ymin + ymax) / 2
            hw, hh = (xmax - xmin) / 2 * scale, (ymax - ymin) / 2 * scale
            x0, y0 = view.px((cx - hw, cy + hh))
            x1, y1 = view.px((cx + hw, cy - hh))
            draw.rectangle([x0, y0, max(x0, x1 - 1), max(y0, y1 - 1)], fill=OBSTACLE)
        else:
            view.disk(draw, obstacle.center, obstacle.radius * scale, OBSTACLE)

    for cx, cy, r in appearance.distractors:
        view.disk(draw, (cx, cy), r, DISTRACTOR)

    goal_radius = cfg.success_dist if cfg.task == Task.ASSEMBLY else cfg.object_radius
    view.disk(draw, state.goal_pos, goal_radius, GOAL)
    if cfg.task != Task.ASSEMBLY:
        view.disk(draw, state.object_pos, cfg.object_radius, OBJECT)

    points = forward_kinematics(cfg.arm, state.q)
    width = view.width(2 * cfg.arm.link_radius)
    draw.line([view.px(p) for p in points], fill=ARM, width=width)
    if cfg.arm.tool_length > 0:
        tail, head = tool_points_batch(cfg.arm, state.q.angles[None, :])
        draw.line([view.px(tail[0]), view.px(head[0])], fill=TOOL, width=width)
    elif cfg.task == Task.LIFT:
        view.disk(draw, points[-1], cfg.grasp_radius * 0.5, TOOL)

    return np.asarray(canvas, dtype=np.uint8)


def colorize(labels: np.ndarray, appearance: AppearanceParams) -> np.ndarray:
    """Palette lookup, lighting gain, stripes, texture noise; float32 in [0, 1]."""
    image = appearance.palette[labels] * appearance.gain
    if appearance.obstacle_stripes:
        columns = np.arange(labels.shape[1])
        stripe = ((columns // STRIPE_PERIOD) % 2 == 1)[None, :]
        image = np.where(((labels == OBSTACLE) & stripe)[..., None], image * STRIPE_SHADE, image)
    if appearance.noise_amplitude > 0:
        noise_rng = np.random.default_rng(appearance.noise_seed)
        image = image + noise_rng.normal(0.0, appearance.noise_amplitude, size=image.shape)
    image = np.clip(image, 0.0, 1.0)
    # 8-bit quantization, as a camera would deliver
    return (np.round(image * 255.0) / 255.0).astype(np.float32)


def render(state: 'EnvState', cfg: EnvConfig, appearance: AppearanceParams) -> np.ndarray:
    """Image of the scene, shape (S, S, 3), float32 intensities in [0, 1]."""
    return colorize(label_map(state, cfg, appearance), appearance)
