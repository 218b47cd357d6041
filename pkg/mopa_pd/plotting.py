#!/usr/bin/env python3
"""
SVG figures: learning curves and end-effector traces.

Every figure is written next to the CSV holding its data.
"""

import logging
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from reportlab.graphics import renderSVG
from reportlab.graphics.shapes import Circle, Drawing, Line, PolyLine, Rect, String
from reportlab.lib import colors

from mopa_pd.config import ArmSpec, Obstacle, ObstacleKind
from mopa_pd.errors import ContractViolation
from mopa_pd.evaluation import end_effector_series

logger = logging.getLogger(__name__)

WIDTH, HEIGHT = 480, 320
MARGIN = 48
SERIES_COLORS = [colors.HexColor(c) for c in ('#1f77b4', '#d62728', '#2ca02c', '#9467bd', '#ff7f0e', '#8c564b')]


class _Axes:
    def __init__(self, xlim: Tuple[float, float], ylim: Tuple[float, float],
                 width: int = WIDTH, height: int = HEIGHT, equal: bool = False):
        self.width, self.height = width, height
        (x0, x1), (y0, y1) = xlim, ylim
        if x1 <= x0:
            x1 = x0 + 1.0
        if y1 <= y0:
            y1 = y0 + 1.0
        self.sx = (width - 2 * MARGIN) / (x1 - x0)
        self.sy = (height - 2 * MARGIN) / (y1 - y0)
        if equal:
            self.sx = self.sy = min(self.sx, self.sy)
        self.x0, self.y0, self.x1, self.y1 = x0, y0, x1, y1

    def px(self, x: float, y: float) -> Tuple[float, float]:
        return MARGIN + (x - self.x0) * self.sx, MARGIN + (y - self.y0) * self.sy

    def frame(self, drawing: Drawing, title: str, xlabel: str, ylabel: str) -> None:
        drawing.add(Rect(MARGIN, MARGIN, self.width - 2 * MARGIN, self.height - 2 * MARGIN,
                         strokeColor=colors.black, fillColor=None, strokeWidth=0.8))
        drawing.add(String(self.width / 2, self.height - MARGIN / 2, title, textAnchor='middle', fontSize=11))
        drawing.add(String(self.width / 2, MARGIN / 3, xlabel, textAnchor='middle', fontSize=9))
        drawing.add(String(6, self.height / 2, ylabel, fontSize=9))
        for value, anchor in ((self.x0, 'start'), (self.x1, 'end')):
            x, _ = self.px(value, self.y0)
            drawing.add(String(x, MARGIN - 12, f'{value:.3g}', textAnchor=anchor, fontSize=8))
        for value in (self.y0, self.y1):
            _, y = self.px(self.x0, value)
            drawing.add(String(MARGIN - 4, y - 3, f'{value:.3g}', textAnchor='end', fontSize=8))


def _legend(drawing: Drawing, labels: Sequence[str]) -> None:
    for i, label in enumerate(labels):
        y = drawing.height - MARGIN - 14 * (i + 1)
        color = SERIES_COLORS[i % len(SERIES_COLORS)]
        drawing.add(Line(drawing.width - MARGIN - 90, y + 3, drawing.width - MARGIN - 74, y + 3, strokeColor=color, strokeWidth=1.5))
        drawing.add(String(drawing.width - MARGIN - 70, y, label, fontSize=8))


def learning_curve_frame(logs: Dict[str, pd.DataFrame], y: str = 'success', window: int = 20) -> pd.DataFrame:
    """Long-form (label, step, value) table, value smoothed by a trailing rolling mean."""
    parts = []
    for label, log in logs.items():
        if log.empty:
            continue
        if y not in log or 'step' not in log:
            raise ContractViolation(f"log '{label}' lacks 'step' or '{y}' columns")
        values = log[y].astype(float).rolling(window, min_periods=1).mean()
        parts.append(pd.DataFrame({'label': label, 'step': log['step'].to_numpy(), 'value': values.to_numpy()}))
    if not parts:
        return pd.DataFrame(columns=['label', 'step', 'value'])
    return pd.concat(parts, ignore_index=True)


def plot_learning_curves(logs: Dict[str, pd.DataFrame], path: Union[str, Path], y: str = 'success',
                         window: int = 20, title: Optional[str] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = learning_curve_frame(logs, y, window)
    data.to_csv(path.with_suffix('.csv'), index=False)

    drawing = Drawing(WIDTH, HEIGHT)
    if data.empty:
        axes = _Axes((0.0, 1.0), (0.0, 1.0))
    else:
        ylo, yhi = float(data['value'].min()), float(data['value'].max())
        axes = _Axes((0.0, float(data['step'].max())), (min(ylo, 0.0), yhi))
    axes.frame(drawing, title or f'{y} (rolling {window})', 'environment steps', y)
    labels = list(dict.fromkeys(data['label']))
    for i, label in enumerate(labels):
        series = data[data['label'] == label]
        points = []
        for x, v in zip(series['step'], series['value']):
            points.extend(axes.px(float(x), float(v)))
        if len(points) >= 4:
            drawing.add(PolyLine(points, strokeColor=SERIES_COLORS[i % len(SERIES_COLORS)], strokeWidth=1.2))
    _legend(drawing, labels)
    renderSVG.drawToFile(drawing, str(path))
    logger.info(f"Wrote learning curves to {path}")
    return path


def _draw_obstacle(drawing: Drawing, axes: _Axes, obstacle: Obstacle) -> None:
    fill = colors.Color(0.6, 0.45, 0.3)
    if obstacle.kind == ObstacleKind.RECT:
        xmin, xmax, ymin, ymax = obstacle.rect
        x, y = axes.px(xmin, ymin)
        drawing.add(Rect(x, y, (xmax - xmin) * axes.sx, (ymax - ymin) * axes.sy, fillColor=fill, strokeColor=None))
    else:
        x, y = axes.px(*obstacle.center)
        drawing.add(Circle(x, y, obstacle.radius * axes.sx, fillColor=fill, strokeColor=None))


def ee_trace_frame(arm: ArmSpec, trajectories: Dict[str, np.ndarray]) -> pd.DataFrame:
    rows = []
    for label, q in trajectories.items():
        for t, (x, y) in enumerate(end_effector_series(arm, q)):
            rows.append({'label': label, 't': t, 'x': float(x), 'y': float(y)})
    return pd.DataFrame(rows, columns=['label', 't', 'x', 'y'])


def plot_ee_traces(arm: ArmSpec, obstacles: Sequence[Obstacle], trajectories: Dict[str, np.ndarray],
                   path: Union[str, Path], view: Tuple[float, float, float, float],
                   title: str = 'end-effector traces') -> Path:
    """Obstacles plus one end-effector polyline per labelled joint trajectory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = ee_trace_frame(arm, trajectories)
    data.to_csv(path.with_suffix('.csv'), index=False)

    axes = _Axes((view[0], view[1]), (view[2], view[3]), WIDTH, WIDTH, equal=True)
    drawing = Drawing(WIDTH, WIDTH)
    axes.frame(drawing, title, 'x (m)', 'y (m)')
    for obstacle in obstacles:
        _draw_obstacle(drawing, axes, obstacle)
    labels = list(trajectories)
    for i, label in enumerate(labels):
        series = data[data['label'] == label]
        color = SERIES_COLORS[i % len(SERIES_COLORS)]
        points = []
        for x, y in zip(series['x'], series['y']):
            points.extend(axes.px(x, y))
        if len(points) >= 4:
            drawing.add(PolyLine(points, strokeColor=color, strokeWidth=1.2))
        if points:
            drawing.add(Circle(points[0], points[1], 2.5, fillColor=color, strokeColor=None))
    _legend(drawing, labels)
    renderSVG.drawToFile(drawing, str(path))
    logger.info(f"Wrote end-effector traces to {path}")
    return path
