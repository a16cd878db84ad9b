"""Brush-stroke parameterization and the analytic stroke oracle.

A stroke's shape is three numbers: peak pressure (thickness), length, and
bend. Its trajectory is a cubic Bezier that starts and ends on the
baseline, and pressure ramps from a fixed light endpoint touch up to the
peak at mid-stroke and back. The oracle rasterizer stands in for a robot's
real strokes: it draws the trajectory as a variable-width ribbon on a
small grayscale stamp, optionally with paint depletion and width jitter so
generated datasets carry execution-like variability.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import imageio

# Pressure of the brush at both trajectory endpoints. Mid-stroke pressure
# never drops below it, so the thickness range starts here.
ENDPOINT_PRESSURE = 0.2

# Brush half-width in meters at full pressure.
BRUSH_RADIUS = 0.004

# Default stamp raster: rows x cols and meters per pixel. The grid covers
# the full length range plus margins; extreme bends may crop at the top
# and bottom edges.
STAMP_SHAPE = (32, 64)
STAMP_SCALE = 0.0012


@dataclass(frozen=True)
class ShapeRanges:
    """Valid intervals for the three stroke-shape parameters."""

    thickness: tuple[float, float] = (ENDPOINT_PRESSURE, 1.0)
    length: tuple[float, float] = (0.01, 0.05)
    bend: tuple[float, float] = (-0.02, 0.02)

    def clamp(self, shape):
        return StrokeShape(
            float(np.clip(shape.thickness, *self.thickness)),
            float(np.clip(shape.length, *self.length)),
            float(np.clip(shape.bend, *self.bend)),
        )

    def contains(self, shape):
        return (self.thickness[0] <= shape.thickness <= self.thickness[1]
                and self.length[0] <= shape.length <= self.length[1]
                and self.bend[0] <= shape.bend <= self.bend[1])

    def sample(self, rng):
        return StrokeShape(
            float(rng.uniform(*self.thickness)),
            float(rng.uniform(*self.length)),
            float(rng.uniform(*self.bend)),
        )


DEFAULT_RANGES = ShapeRanges()


@dataclass(frozen=True)
class StrokeShape:
    """Peak pressure fraction, length in meters, bend in meters."""

    thickness: float
    length: float
    bend: float

    def as_array(self):
        return np.array([self.thickness, self.length, self.bend])


@dataclass(frozen=True)
class StrokeParams:
    """One planned stroke: shape plus canvas pose and paint color.

    ``x`` and ``y`` are canvas fractions in [0, 1], ``theta`` is radians in
    [-pi, pi), ``color`` is an RGB triple in [0, 1].
    """

    shape: StrokeShape
    x: float
    y: float
    theta: float
    color: tuple[float, float, float]

    def with_color(self, color):
        return replace(self, color=(float(color[0]), float(color[1]), float(color[2])))


def bezier_trajectory(shape, n):
    """Sample the stroke's path and pressure profile.

    Returns an (n, 3) array of (x_m, y_m, pressure). The path is the cubic
    Bezier with control points (0,0), (l/3,b), (2l/3,b), (l,0); pressure is
    piecewise linear from the endpoint touch up to the peak at t=0.5.
    """
    if n < 2:
        raise ValueError(f"bezier_trajectory: need at least 2 samples, got {n}")
    t = np.linspace(0.0, 1.0, int(n))
    px = np.array([0.0, shape.length / 3.0, 2.0 * shape.length / 3.0, shape.length])
    py = np.array([0.0, shape.bend, shape.bend, 0.0])
    b0 = (1 - t) ** 3
    b1 = 3 * t * (1 - t) ** 2
    b2 = 3 * t ** 2 * (1 - t)
    b3 = t ** 3
    x = b0 * px[0] + b1 * px[1] + b2 * px[2] + b3 * px[3]
    y = b0 * py[0] + b1 * py[1] + b2 * py[2] + b3 * py[3]
    pressure = ENDPOINT_PRESSURE + (shape.thickness - ENDPOINT_PRESSURE) * (1 - np.abs(1 - 2 * t))
    return np.stack([x, y, pressure], axis=1)


@dataclass(frozen=True)
class OracleNoise:
    """Per-stroke variability of the oracle: paint depletion along the
    trajectory and a multiplicative ribbon-width jitter."""

    depletion_range: tuple[float, float] = (0.0, 0.4)
    width_jitter: float = 0.10

    @classmethod
    def zero(cls):
        return cls(depletion_range=(0.0, 0.0), width_jitter=0.0)

    def draw(self, rng):
        lo, hi = self.depletion_range
        depletion = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
        width = 1.0
        if self.width_jitter > 0:
            width = float(rng.uniform(1.0 - self.width_jitter, 1.0 + self.width_jitter))
        return depletion, width


def stamp_anchor(resolution=STAMP_SHAPE, scale=STAMP_SCALE):
    """Continuous pixel index of the trajectory start point on a stamp.

    The baseline sits on the vertical center so mirroring the bend mirrors
    the stamp exactly; the start is inset from the left by the brush radius.
    """
    rows, _ = resolution
    col = float(int(np.ceil(BRUSH_RADIUS / scale)) + 1) - 0.5
    row = rows / 2.0 - 0.5
    return row, col


def oracle_render_stroke(shape, resolution=STAMP_SHAPE, scale=STAMP_SCALE,
                         depletion=0.0, width_scale=1.0, n_samples=33):
    """Rasterize a stroke as a variable-width ribbon on a [0, 1] stamp.

    Intensity fades along the trajectory by (1 - depletion * t); the ribbon
    half-width is BRUSH_RADIUS * pressure * width_scale with a one-pixel
    antialiasing ramp at the edge. Deterministic for fixed arguments.
    """
    rows, cols = resolution
    if cols * scale < shape.length:
        raise ValueError(
            f"oracle_render_stroke: {cols}x{scale} stamp cannot cover length {shape.length}")
    anchor_row, anchor_col = stamp_anchor(resolution, scale)
    traj = bezier_trajectory(shape, n_samples)
    t = np.linspace(0.0, 1.0, n_samples)

    u = (np.arange(cols) - anchor_col) * scale
    v = (np.arange(rows) - anchor_row) * scale
    uu, vv = np.meshgrid(u, v)

    # Segment endpoints, shaped for broadcasting against the pixel grid.
    ax, ay = traj[:-1, 0], traj[:-1, 1]
    bx, by = traj[1:, 0], traj[1:, 1]
    dx, dy = bx - ax, by - ay
    seg_len2 = np.maximum(dx * dx + dy * dy, 1e-18)

    stamp = np.zeros((rows, cols))
    for s in range(n_samples - 1):
        frac = ((uu - ax[s]) * dx[s] + (vv - ay[s]) * dy[s]) / seg_len2[s]
        frac = np.clip(frac, 0.0, 1.0)
        px = ax[s] + frac * dx[s]
        py = ay[s] + frac * dy[s]
        dist = np.hypot(uu - px, vv - py)
        pressure = traj[s, 2] * (1 - frac) + traj[s + 1, 2] * frac
        t_along = t[s] * (1 - frac) + t[s + 1] * frac
        half_width = BRUSH_RADIUS * pressure * width_scale
        coverage = np.clip((half_width - dist) / scale + 0.5, 0.0, 1.0)
        np.maximum(stamp, coverage * (1.0 - depletion * t_along), out=stamp)
    return stamp


@dataclass
class StrokeDataset:
    """Pairs of stroke shapes and rendered stamps at one shared raster."""

    pairs: list
    resolution: tuple[int, int] = STAMP_SHAPE
    scale: float = STAMP_SCALE
    provenance: str = "oracle"
    ranges: ShapeRanges = field(default_factory=ShapeRanges)

    def __len__(self):
        return len(self.pairs)

    def shapes_array(self):
        return np.array([[s.thickness, s.length, s.bend] for s, _ in self.pairs])

    def stamps_array(self):
        return np.array([stamp for _, stamp in self.pairs])


def generate_dataset(n_strokes, seed=0, noise=OracleNoise(),
                     resolution=STAMP_SHAPE, scale=STAMP_SCALE,
                     ranges=DEFAULT_RANGES):
    """Sample shapes uniformly over their ranges and render oracle stamps.

    Each stroke draws from its own RNG stream spawned from the seed, so
    generation is order-independent and parallelizable per stroke.
    """
    if n_strokes < 1:
        raise ValueError(f"generate_dataset: need n_strokes >= 1, got {n_strokes}")
    streams = np.random.SeedSequence(seed).spawn(n_strokes)
    pairs = []
    for ss in streams:
        rng = np.random.default_rng(ss)
        shape = ranges.sample(rng)
        depletion, width = noise.draw(rng)
        stamp = oracle_render_stroke(shape, resolution, scale,
                                     depletion=depletion, width_scale=width)
        pairs.append((shape, stamp))
    return StrokeDataset(pairs, resolution, scale, "oracle", ranges)


def save_dataset(dataset, directory):
    """Write index.tsv plus one P5 stamp per stroke; round-trips bit-exactly."""
    os.makedirs(directory, exist_ok=True)
    lines = [f"# scale {dataset.scale!r}", "h\tl\tb\tstamp"]
    for i, (shape, stamp) in enumerate(dataset.pairs):
        name = f"stamp_{i:05d}.pgm"
        imageio.write_pgm(os.path.join(directory, name), stamp)
        lines.append(f"{shape.thickness!r}\t{shape.length!r}\t{shape.bend!r}\t{name}")
    with open(os.path.join(directory, "index.tsv"), "w", encoding="ascii") as f:
        f.write("\n".join(lines) + "\n")


def load_dataset(directory):
    path = os.path.join(directory, "index.tsv")
    with open(path, encoding="ascii") as f:
        raw = [ln.rstrip("\n") for ln in f if ln.strip()]
    scale = STAMP_SCALE
    rows = []
    for ln in raw:
        if ln.startswith("#"):
            parts = ln[1:].split()
            if parts and parts[0] == "scale":
                scale = float(parts[1])
            continue
        rows.append(ln)
    header, *records = rows
    if header.split("\t") != ["h", "l", "b", "stamp"]:
        raise ValueError(f"{path}: unexpected index header {header!r}")
    pairs = []
    resolution = STAMP_SHAPE
    for rec in records:
        h, l, b, name = rec.split("\t")
        stamp = imageio.read_pnm(os.path.join(directory, name))
        resolution = stamp.shape
        pairs.append((StrokeShape(float(h), float(l), float(b)), stamp))
    return StrokeDataset(pairs, resolution, scale, "imported")
