"""Differentiable stroke placement and compositing.

A stroke stamp (a small [0, 1] ink map with a known meters-per-pixel
scale) is resampled onto the full canvas through an inverse rigid
transform built from the stroke's pose, then alpha-composited in the
stroke's color over the existing canvas. Everything is recorded on a
Graph, so losses on the rendered canvas differentiate back to every
stroke parameter. Placement works in physical units: the same plan
renders consistently at any pixel resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import imageio
from .strokes import StrokeParams, stamp_anchor

# 11 x 14 inch canvas board, in meters (height x width, landscape).
DEFAULT_CANVAS_HEIGHT_M = 11 * 0.0254
DEFAULT_CANVAS_WIDTH_M = 14 * 0.0254


@dataclass(frozen=True)
class Canvas:
    """An (h, w, 3) image in [0, 1] with a physical size in meters."""

    data: np.ndarray
    height_m: float
    width_m: float

    def __post_init__(self):
        d = self.data
        if d.ndim != 3 or d.shape[2] != 3:
            raise ValueError(f"Canvas: need (h, w, 3) data, got shape {d.shape}")
        if d.min() < 0.0 or d.max() > 1.0:
            raise ValueError("Canvas: values outside [0, 1]")
        px_aspect = (self.height_m / d.shape[0]) / (self.width_m / d.shape[1])
        if abs(px_aspect - 1.0) > 0.01:
            raise ValueError(
                f"Canvas: pixel aspect {px_aspect:.4f} deviates more than 1% "
                "from square; physical and pixel sizes disagree")

    @property
    def shape(self):
        return self.data.shape[:2]

    @property
    def meters_per_pixel(self):
        return self.height_m / self.data.shape[0], self.width_m / self.data.shape[1]

    @classmethod
    def blank(cls, height_px, width_px, color=(1.0, 1.0, 1.0),
              width_m=DEFAULT_CANVAS_WIDTH_M, height_m=None):
        """A solid canvas; physical height defaults to square pixels."""
        if height_m is None:
            height_m = width_m * height_px / width_px
        data = np.ones((height_px, width_px, 3)) * np.asarray(color, float)
        return cls(data, height_m, width_m)

    @classmethod
    def from_array(cls, data, width_m=DEFAULT_CANVAS_WIDTH_M, height_m=None):
        data = np.clip(np.asarray(data, dtype=np.float64), 0.0, 1.0)
        if height_m is None:
            height_m = width_m * data.shape[0] / data.shape[1]
        return cls(data, height_m, width_m)

    @classmethod
    def load(cls, path, width_m=DEFAULT_CANVAS_WIDTH_M, height_m=None):
        arr = imageio.read_pnm(path)
        if arr.ndim == 2:
            arr = np.repeat(arr[:, :, None], 3, axis=2)
        return cls.from_array(arr, width_m, height_m)

    def save(self, path):
        imageio.write_ppm(path, self.data)

    def with_data(self, data):
        return Canvas(data, self.height_m, self.width_m)

    def channels(self, g):
        """The three color planes as constant graph tensors."""
        return tuple(g.tensor(self.data[:, :, c]) for c in range(3))


def stroke_leaves(g, stroke: StrokeParams):
    """Record one leaf tensor per scalar stroke parameter.

    Keys: thickness, length, bend, x, y, theta, r, g, b. The optimizer
    reads gradients from, and writes updates to, exactly these leaves.
    """
    return {
        "thickness": g.tensor(stroke.shape.thickness),
        "length": g.tensor(stroke.shape.length),
        "bend": g.tensor(stroke.shape.bend),
        "x": g.tensor(stroke.x),
        "y": g.tensor(stroke.y),
        "theta": g.tensor(stroke.theta),
        "r": g.tensor(stroke.color[0]),
        "g": g.tensor(stroke.color[1]),
        "b": g.tensor(stroke.color[2]),
    }


def shape_vector(leaves):
    return ad.concat([ad.reshape(leaves[k], (1,))
                      for k in ("thickness", "length", "bend")])


def place_stroke(graph, stamp, x, y, theta, canvas: Canvas, stamp_scale):
    """Resample a stamp onto the full canvas at pose (x, y, theta).

    ``x``/``y`` are canvas fractions, ``theta`` rotates about the stroke's
    trajectory start point. Returns the full-canvas alpha map; strokes may
    extend past the edge, where they are cropped by zero padding.
    Differentiable w.r.t. the stamp and all three pose scalars.
    """
    h_px, w_px = canvas.shape
    csh, csw = canvas.meters_per_pixel
    anchor_row, anchor_col = stamp_anchor(stamp.data.shape, stamp_scale)
    x, y, theta = (ad._as_tensor(graph, v, "place_stroke") for v in (x, y, theta))

    cos_t = ad.cos(theta)
    sin_t = ad.sin(theta)
    px = ad.smul(x, canvas.width_m)    # stroke anchor in meters
    py = ad.smul(y, canvas.height_m)
    # Output pixel (i, j) has center (X, Y) = ((j+0.5)csw, (i+0.5)csh);
    # stamp coords: u = (X-Px)cos + (Y-Py)sin, v = -(X-Px)sin + (Y-Py)cos,
    # then source row = v/s + anchor_row, col = u/s + anchor_col.
    ox = ad.add(ad.smul(px, -1.0), 0.5 * csw)  # (X - Px) at i=j=0
    oy = ad.add(ad.smul(py, -1.0), 0.5 * csh)
    inv_s = 1.0 / stamp_scale

    t0 = ad.smul(cos_t, csh * inv_s)
    t1 = ad.smul(sin_t, -csw * inv_s)
    t2 = ad.add(ad.smul(ad.add(ad.mul(ox, ad.smul(sin_t, -1.0)),
                               ad.mul(oy, cos_t)), inv_s), anchor_row)
    t3 = ad.smul(sin_t, csh * inv_s)
    t4 = ad.smul(cos_t, csw * inv_s)
    t5 = ad.add(ad.smul(ad.add(ad.mul(ox, cos_t),
                               ad.mul(oy, sin_t)), inv_s), anchor_col)
    transform = ad.concat([ad.reshape(t, (1,)) for t in (t0, t1, t2, t3, t4, t5)])
    return ad.affine_sample(stamp, transform, (h_px, w_px))


def composite(channels, alpha, color):
    """Alpha-blend a colored stroke over the canvas, per channel.

    ``channels`` is a 3-tuple of (h, w) tensors, ``color`` a 3-sequence of
    scalar tensors or floats. out = alpha * color + (1 - alpha) * canvas.
    """
    one_minus = ad.add(ad.smul(alpha, -1.0), 1.0)
    return tuple(ad.add(ad.mul(alpha, color[c]), ad.mul(one_minus, channels[c]))
                 for c in range(3))


def model_stamp_fn(model):
    """Stamp provider rendering through the shape-to-stamp network."""
    weights_by_graph = {}

    def fn(g, leaves):
        key = id(g)
        if key not in weights_by_graph:
            weights_by_graph.clear()  # graphs are used one at a time
            weights_by_graph[key] = {name: g.tensor(getattr(model, name))
                                     for name in model.FIELDS}
        return model.forward_graph(g, shape_vector(leaves),
                                   weights=weights_by_graph[key])

    fn.scale = model.scale
    return fn


def render_strokes(g, strokes, base: Canvas, stamp_fn):
    """Fold place + composite over strokes in order, starting from ``base``.

    Returns (channels, leaves_per_stroke); the channels are the rendered
    canvas planes, still on the graph.
    """
    channels = base.channels(g)
    all_leaves = []
    for stroke in strokes:
        leaves = stroke_leaves(g, stroke)
        all_leaves.append(leaves)
        stamp = stamp_fn(g, leaves)
        alpha = place_stroke(g, stamp, leaves["x"], leaves["y"], leaves["theta"],
                             base, stamp_fn.scale)
        channels = composite(channels, alpha, (leaves["r"], leaves["g"], leaves["b"]))
    return channels, all_leaves


def channels_to_array(channels):
    return np.clip(np.stack([c.data for c in channels], axis=2), 0.0, 1.0)


def render_plan(plan, base: Canvas, model):
    """Render a stroke sequence through the learned stamp model, off-graph."""
    g = ad.Graph()
    channels, _ = render_strokes(g, list(plan), base, model_stamp_fn(model))
    return base.with_data(channels_to_array(channels))
