"""Synthetic road scenes with exact drivable-region masks.

A scene is a flat background, a trapezoidal road running from the bottom
edge toward a vanishing point, and up to three rectangular obstacles standing
on the road.  The drivable mask is the road minus the obstacles, reduced to
the part connected to the bottom edge in each column.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .pipeline import (RoadFrame, boundary_from_mask, boundary_to_mask, fill_polygon,
                       frame_from_arrays)
from .tensor import make_rng

TOP_WIDTH_RATIO = 0.15  # road half-width at the horizon relative to the base
MIN_ROAD_FRACTION = 0.10


@dataclass
class SceneParams:
    width: int = 600
    height: int = 160
    vanish_x: float = 0.5      # fraction of width, in [0.3, 0.7]
    base_half_width: float = 0.3  # fraction of width, in [0.2, 0.45]
    horizon: float = 0.55      # road height as a fraction of image height, in [0.45, 0.7]
    obstacles: list = field(default_factory=list)  # (x0, y0, x1, y1) pixel rectangles
    noise_sd: float = 0.02
    road_color: tuple = (0.42, 0.42, 0.45)
    background_color: tuple = (0.30, 0.55, 0.25)
    obstacle_color: tuple = (0.75, 0.15, 0.12)
    seed: int = 0

    def validate(self):
        if self.width < 2 or self.height < 2:
            raise ValueError("scene must be at least 2x2")
        if not 0.3 <= self.vanish_x <= 0.7:
            raise ValueError("vanish_x must lie in [0.3, 0.7]")
        if not 0.2 <= self.base_half_width <= 0.45:
            raise ValueError("base_half_width must lie in [0.2, 0.45]")
        if not 0.45 <= self.horizon <= 0.7:
            raise ValueError("horizon must lie in [0.45, 0.7]")
        if len(self.obstacles) > 3:
            raise ValueError("at most 3 obstacles")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")

    def road_polygon(self):
        w, h = self.width, self.height
        hw = self.base_half_width * w
        thw = hw * TOP_WIDTH_RATIO
        top = h * (1.0 - self.horizon)
        vx = self.vanish_x * w
        return [(w / 2 - hw, h), (w / 2 + hw, h), (vx + thw, top), (vx - thw, top)]


def road_mask(params: SceneParams) -> np.ndarray:
    return fill_polygon(params.road_polygon(), (params.width, params.height))


def drivable_mask(params: SceneParams) -> np.ndarray:
    m = road_mask(params)
    for x0, y0, x1, y1 in params.obstacles:
        m[y0:y1, x0:x1] = False
    # only road reachable from the bottom edge within a column counts
    return boundary_to_mask(boundary_from_mask(m), (params.width, params.height))


def gen_scene(params: SceneParams) -> RoadFrame:
    params.validate()
    w, h = params.width, params.height
    rng = make_rng(params.seed)
    road = road_mask(params)
    rgb = np.empty((h, w, 3))
    rgb[:] = params.background_color
    rgb[road] = params.road_color
    for x0, y0, x1, y1 in params.obstacles:
        rgb[y0:y1, x0:x1] = params.obstacle_color
    if params.noise_sd > 0:
        rgb += rng.normal(0.0, params.noise_sd, size=rgb.shape)
    np.clip(rgb, 0.0, 1.0, out=rgb)
    return frame_from_arrays(rgb, drivable_mask(params))


def random_params(rng: np.random.Generator, size=(600, 160)) -> SceneParams:
    w, h = size
    p = SceneParams(
        width=w, height=h,
        vanish_x=float(rng.uniform(0.3, 0.7)),
        base_half_width=float(rng.uniform(0.2, 0.45)),
        horizon=float(rng.uniform(0.45, 0.7)),
        noise_sd=float(rng.uniform(0.0, 0.03)),
        road_color=tuple(float(c) for c in rng.uniform(0.3, 0.5) + rng.uniform(-0.03, 0.03, 3)),
        background_color=tuple(float(c) for c in (rng.uniform(0.15, 0.35), rng.uniform(0.45, 0.7),
                                                  rng.uniform(0.1, 0.3))),
        obstacle_color=tuple(float(c) for c in (rng.uniform(0.6, 0.9), rng.uniform(0.05, 0.3),
                                                rng.uniform(0.05, 0.3))),
        seed=int(rng.integers(0, 2**63)),
    )
    road = road_mask(p)
    cols = np.flatnonzero(road.any(axis=0))
    for _ in range(int(rng.integers(0, 4))):
        ow = max(2, int(rng.uniform(0.04, 0.12) * w))
        oh = max(2, int(rng.uniform(0.1, 0.3) * h))
        # stand the obstacle on a road pixel
        cx = int(rng.choice(cols))
        rows = np.flatnonzero(road[:, cx])
        y1 = int(rng.integers(rows[0] + 1, rows[-1] + 2))
        x0 = int(np.clip(cx - ow // 2, 0, w - ow))
        p.obstacles.append((x0, max(0, y1 - oh), x0 + ow, y1))
    while p.obstacles and drivable_mask(p).mean() < MIN_ROAD_FRACTION:
        p.obstacles.pop()
    return p


def gen_dataset(n: int, size=(600, 160), seed: int = 0) -> list[RoadFrame]:
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = make_rng(seed)
    frames = []
    for i in range(n):
        frame = gen_scene(random_params(rng, size))
        frame.name = f"scene_{i:04d}"
        frames.append(frame)
    return frames
