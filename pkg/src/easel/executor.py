"""Stochastic stand-in for the painting robot.

Executing a stroke perturbs its parameters (position, rotation, shape,
color) with seeded noise, optionally fades its paint along the trajectory,
renders it, and composites it onto a persistent canvas. Oracle render mode
draws analytic ribbon stamps, so a learned stamp model has a genuine gap
to close against it; model mode shares the simulator's render path
exactly. Perception returns immutable snapshots, optionally distorted by a
synthetic camera transform and corrected by a fitted color transform.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .renderer import Canvas, channels_to_array, model_stamp_fn, render_strokes
from .strokes import (DEFAULT_RANGES, StrokeShape, oracle_render_stroke,
                      stamp_anchor)


@dataclass(frozen=True)
class NoiseModel:
    """Per-stroke execution jitter; zeroing every field makes the executor
    deterministic and exactly faithful to the plan."""

    sigma_xy: float = 0.005         # canvas-fraction position jitter
    sigma_theta: float = 0.02       # radians
    sigma_shape: float = 0.05       # relative jitter on thickness/length/bend
    depletion: tuple = (0.0, 0.3)   # uniform paint fade along the stroke
    sigma_rgb: float = 0.01
    seed: int = 0

    @classmethod
    def zero(cls, seed=0):
        return cls(0.0, 0.0, 0.0, (0.0, 0.0), 0.0, seed)

    def scaled(self, factor):
        """Scale every magnitude by ``factor`` (0 gives the zero model)."""
        return NoiseModel(self.sigma_xy * factor, self.sigma_theta * factor,
                          self.sigma_shape * factor,
                          (self.depletion[0] * factor, self.depletion[1] * factor),
                          self.sigma_rgb * factor, self.seed)

    @property
    def is_zero(self):
        return (self.sigma_xy == 0 and self.sigma_theta == 0
                and self.sigma_shape == 0 and self.depletion[1] == 0
                and self.sigma_rgb == 0)


class Executor:
    """Owns the persistent "real" canvas and executes strokes onto it."""

    def __init__(self, canvas: Canvas, model=None, noise=NoiseModel(),
                 render_mode="oracle", ranges=DEFAULT_RANGES,
                 camera_transform=None, correction_transform=None):
        if render_mode not in ("oracle", "model"):
            raise ValueError(f"render_mode must be oracle|model, got {render_mode!r}")
        if render_mode == "model" and model is None:
            raise ValueError("model render mode requires a stamp model")
        self.canvas = canvas
        self.model = model
        self.noise = noise
        self.render_mode = render_mode
        self.ranges = ranges
        self.camera_transform = camera_transform
        self.correction_transform = correction_transform
        self.log = []
        self._rng = np.random.default_rng(noise.seed)

    def _perturb(self, stroke):
        n, rng = self.noise, self._rng
        sh = stroke.shape
        rel = 1.0 + rng.normal(0.0, n.sigma_shape, size=3) if n.sigma_shape \
            else np.ones(3)
        shape = self.ranges.clamp(StrokeShape(sh.thickness * rel[0],
                                              sh.length * rel[1],
                                              sh.bend * rel[2]))
        x = float(np.clip(stroke.x + rng.normal(0.0, n.sigma_xy), 0.0, 1.0)) \
            if n.sigma_xy else stroke.x
        y = float(np.clip(stroke.y + rng.normal(0.0, n.sigma_xy), 0.0, 1.0)) \
            if n.sigma_xy else stroke.y
        theta = stroke.theta + (rng.normal(0.0, n.sigma_theta)
                                if n.sigma_theta else 0.0)
        color = stroke.color
        if n.sigma_rgb:
            color = tuple(np.clip(np.asarray(color) + rng.normal(0.0, n.sigma_rgb,
                                                                 size=3), 0, 1))
        lo, hi = n.depletion
        depletion = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
        realized = replace(stroke, shape=shape, x=x, y=y, theta=float(theta),
                           color=color)
        return realized, depletion

    def _stamp_fn(self, depletions):
        """Stamp provider applying per-stroke paint depletion."""
        if self.render_mode == "model":
            inner = model_stamp_fn(self.model)
            scale = self.model.scale
        else:
            inner = None
            scale = None

        state = {"i": 0}

        def fn(g, leaves):
            depletion = depletions[state["i"]]
            state["i"] += 1
            if inner is not None:
                stamp = inner(g, leaves)
                if depletion > 0.0:
                    stamp = ad.mul(stamp, g.tensor(self._depletion_ramp(
                        stamp.data.shape, inner.scale, leaves["length"].item(),
                        depletion)))
                return stamp
            shape = StrokeShape(leaves["thickness"].item(),
                                leaves["length"].item(), leaves["bend"].item())
            return g.tensor(oracle_render_stroke(shape, depletion=depletion))

        from .strokes import STAMP_SCALE
        fn.scale = scale if scale is not None else STAMP_SCALE
        return fn

    @staticmethod
    def _depletion_ramp(shape, scale, length, depletion):
        rows, cols = shape
        _, anchor_col = stamp_anchor(shape, scale)
        along = np.clip((np.arange(cols) - anchor_col) * scale / max(length, 1e-9),
                        0.0, 1.0)
        return np.tile(1.0 - depletion * along, (rows, 1))

    def execute(self, strokes):
        """Perturb, render, and composite each stroke onto the real canvas.

        Returns the updated canvas; (intended, realized) pairs are appended
        to the log.
        """
        strokes = list(strokes)
        if not strokes:
            return self.canvas
        realized = []
        depletions = []
        for stroke in strokes:
            r, d = self._perturb(stroke)
            realized.append(r)
            depletions.append(d)
        g = ad.Graph()
        channels, _ = render_strokes(g, realized, self.canvas,
                                     self._stamp_fn(depletions))
        self.canvas = self.canvas.with_data(channels_to_array(channels))
        self.log.extend(zip(strokes, realized))
        return self.canvas

    def perceive(self):
        """Immutable snapshot of the real canvas, through the optional
        camera distortion and its correction."""
        data = self.canvas.data.copy()
        if self.camera_transform is not None:
            data = self.camera_transform.apply_array(data)
        if self.correction_transform is not None:
            data = self.correction_transform.apply_array(data)
        return self.canvas.with_data(data)
