"""Plan initialization, gradient-descent optimization, palette
discretization, stroke ordering, and the batched execute/replan loop.

The optimizer is plain gradient descent with per-group learning rates
(pose, shape, color) and best-iterate tracking: the raw loss trace may
oscillate, but the returned plan is the best state evaluated. Colors are
periodically projected onto a K-means palette during optimization so the
plan stays executable with a limited set of paints, and strokes are
ordered light to dark before execution.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .objectives import ObjectiveConfig, graph_total_loss
from .renderer import Canvas, model_stamp_fn, render_strokes
from .strokes import ShapeRanges, StrokeParams, StrokeShape

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

PLAN_MAGIC = "PLAN1"

MAX_PALETTE = 12


@dataclass(frozen=True)
class Plan:
    """Ordered strokes plus the geometry of the canvas they target."""

    strokes: tuple
    height_px: int
    width_px: int
    height_m: float
    width_m: float

    @classmethod
    def for_canvas(cls, canvas: Canvas, strokes=()):
        h, w = canvas.shape
        return cls(tuple(strokes), h, w, canvas.height_m, canvas.width_m)

    def with_strokes(self, strokes):
        return replace(self, strokes=tuple(strokes))

    def __len__(self):
        return len(self.strokes)

    def __iter__(self):
        return iter(self.strokes)

    def __getitem__(self, index):
        if isinstance(index, slice):
            return self.with_strokes(self.strokes[index])
        return self.strokes[index]

    def canvas_blank(self, color=(1.0, 1.0, 1.0)):
        return Canvas.blank(self.height_px, self.width_px, color,
                            width_m=self.width_m, height_m=self.height_m)


@dataclass(frozen=True)
class Palette:
    """Paintable colors, ordered light to dark by luminance."""

    colors: tuple

    def __post_init__(self):
        if not 1 <= len(self.colors) <= MAX_PALETTE:
            raise ValueError(f"Palette: need 1..{MAX_PALETTE} colors, "
                             f"got {len(self.colors)}")
        lum = [luminance(c) for c in self.colors]
        if any(b > a + 1e-12 for a, b in zip(lum, lum[1:])):
            raise ValueError("Palette: colors must be ordered light to dark")

    def __len__(self):
        return len(self.colors)

    def project(self, colors):
        """Snap an (n, 3) color array to the nearest palette entries."""
        arr = np.asarray(self.colors)
        dist = ((np.asarray(colors)[:, None, :] - arr[None, :, :]) ** 2).sum(axis=2)
        return arr[dist.argmin(axis=1)]


def luminance(color):
    return float(np.dot(LUMA_WEIGHTS, color))


@dataclass
class PlannerConfig:
    n_strokes: int = 100
    batch_size: int = 30
    iterations: int = 300
    replan_iterations: int = 100
    lr_position: float = 2.0     # x, y, theta
    lr_shape: float = 0.5        # thickness, length, bend
    lr_color: float = 5.0        # r, g, b
    objectives: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    init_objectives: ObjectiveConfig | None = None
    palette_size: int | None = None
    discretize_period: int = 40
    sort_on_discretize: bool = True
    replan: bool = True
    seed: int = 0
    ranges: ShapeRanges = field(default_factory=ShapeRanges)

    def validate(self):
        if self.n_strokes < 1:
            raise ValueError(f"PlannerConfig: n_strokes must be >= 1, "
                             f"got {self.n_strokes}")
        if self.batch_size < 1:
            raise ValueError("PlannerConfig: batch_size must be >= 1")
        if self.palette_size is not None and self.palette_size < 1:
            raise ValueError("PlannerConfig: palette_size must be >= 1")
        self.objectives.validate()
        if self.init_objectives is not None:
            self.init_objectives.validate()
        return self


def init_plan(config: PlannerConfig, rng, canvas: Canvas, n=None):
    """Sample ``n_strokes`` strokes uniformly over every parameter range."""
    n = config.n_strokes if n is None else n
    strokes = []
    for _ in range(n):
        shape = config.ranges.sample(rng)
        strokes.append(StrokeParams(
            shape,
            x=float(rng.uniform()),
            y=float(rng.uniform()),
            theta=float(rng.uniform(-np.pi, np.pi)),
            color=tuple(rng.uniform(size=3)),
        ))
    return Plan.for_canvas(canvas, strokes)


# ---------------------------------------------------------------------------
# gradient-descent optimization


def _plan_arrays(plan):
    shape = np.array([[s.shape.thickness, s.shape.length, s.shape.bend]
                      for s in plan])
    pose = np.array([[s.x, s.y, s.theta] for s in plan])
    color = np.array([list(s.color) for s in plan])
    return shape, pose, color


def _arrays_to_strokes(shape, pose, color):
    return [StrokeParams(StrokeShape(*shape[i]), pose[i, 0], pose[i, 1],
                         pose[i, 2], tuple(color[i]))
            for i in range(shape.shape[0])]


def _clamp_arrays(shape, pose, color, ranges: ShapeRanges):
    shape[:, 0] = np.clip(shape[:, 0], *ranges.thickness)
    shape[:, 1] = np.clip(shape[:, 1], *ranges.length)
    shape[:, 2] = np.clip(shape[:, 2], *ranges.bend)
    pose[:, 0:2] = np.clip(pose[:, 0:2], 0.0, 1.0)
    pose[:, 2] = np.mod(pose[:, 2] + np.pi, 2 * np.pi) - np.pi
    np.clip(color, 0.0, 1.0, out=color)


def optimize(plan: Plan, base: Canvas, model, config: PlannerConfig,
             extractor, iterations=None, objectives=None):
    """Descend the configured objective over all stroke parameters.

    Returns (best plan, per-iteration loss history). Parameters are
    re-clamped to their ranges after every step; when a palette size is
    configured, colors are re-clustered and projected every
    ``discretize_period`` iterations (projection is applied to the stored
    values, so gradients pass through unchanged).
    """
    iterations = config.iterations if iterations is None else iterations
    objectives = (config.objectives if objectives is None else objectives).validate()
    if iterations == 0:
        return plan, []
    if len(plan) == 0:
        raise ValueError("optimize: empty plan")

    stamp_fn = model_stamp_fn(model)
    shape, pose, color = _plan_arrays(plan)
    history = []
    best_loss = np.inf
    best_state = (shape.copy(), pose.copy(), color.copy())

    for it in range(iterations):
        strokes = _arrays_to_strokes(shape, pose, color)
        g = ad.Graph()
        channels, leaves = render_strokes(g, strokes, base, stamp_fn)
        loss = graph_total_loss(g, channels, base, objectives, extractor)
        value = loss.item()
        history.append(value)
        if value < best_loss:
            best_loss = value
            best_state = (shape.copy(), pose.copy(), color.copy())
        g.backward(loss)

        for i, lv in enumerate(leaves):
            def grad(key):
                arr = lv[key].grad
                return float(arr) if arr is not None else 0.0

            shape[i, 0] -= config.lr_shape * grad("thickness")
            shape[i, 1] -= config.lr_shape * grad("length")
            shape[i, 2] -= config.lr_shape * grad("bend")
            pose[i, 0] -= config.lr_position * grad("x")
            pose[i, 1] -= config.lr_position * grad("y")
            pose[i, 2] -= config.lr_position * grad("theta")
            color[i, 0] -= config.lr_color * grad("r")
            color[i, 1] -= config.lr_color * grad("g")
            color[i, 2] -= config.lr_color * grad("b")
        _clamp_arrays(shape, pose, color, config.ranges)

        if (config.palette_size is not None
                and (it + 1) % config.discretize_period == 0):
            centroids, assignment = kmeans(color, min(config.palette_size,
                                                      color.shape[0]),
                                           seed=config.seed)
            color = centroids[assignment]
            if config.sort_on_discretize:
                order = _light_to_dark_order(color)
                shape, pose, color = shape[order], pose[order], color[order]

    shape_b, pose_b, color_b = best_state
    if config.palette_size is not None:
        # the returned plan must stay executable with K paints
        centroids, assignment = kmeans(
            color_b, min(config.palette_size, color_b.shape[0]), seed=config.seed)
        color_b = centroids[assignment]
    return plan.with_strokes(_arrays_to_strokes(shape_b, pose_b, color_b)), history


def best_envelope(history):
    """Running minimum of a loss trace (monotone by definition)."""
    out = []
    current = np.inf
    for v in history:
        current = min(current, v)
        out.append(current)
    return out


# ---------------------------------------------------------------------------
# palette discretization and ordering


def kmeans(points, k, seed=0, max_iter=100, tol=1e-6):
    """Lloyd's algorithm with k-means++ seeding; deterministic per seed.

    Returns (centroids (k, d), assignment (n,)).
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"kmeans: need 1 <= k <= {n}, got {k}")
    rng = np.random.default_rng(seed)

    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    dist2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = dist2.sum()
        if total <= 0:
            centroids[j:] = points[rng.integers(n, size=k - j)]
            break
        centroids[j] = points[rng.choice(n, p=dist2 / total)]
        dist2 = np.minimum(dist2, ((points - centroids[j]) ** 2).sum(axis=1))

    assignment = np.zeros(n, dtype=int)
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assignment = d2.argmin(axis=1)
        moved = 0.0
        for j in range(k):
            members = points[assignment == j]
            if len(members) == 0:
                # revive on the point farthest from its centroid
                worst = d2[np.arange(n), assignment].argmax()
                new = points[worst]
            else:
                new = members.mean(axis=0)
            moved = max(moved, float(np.abs(new - centroids[j]).max()))
            centroids[j] = new
        if moved < tol:
            break
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return centroids, d2.argmin(axis=1)


def discretize_colors(plan: Plan, k, seed=0):
    """Cluster stroke colors to K paints and snap each stroke to its
    centroid. Returns (plan, palette) with the palette light to dark."""
    if len(plan) == 0:
        raise ValueError("discretize_colors: empty plan")
    if k > len(plan):
        warnings.warn(f"discretize_colors: K={k} exceeds {len(plan)} strokes; "
                      f"using K={len(plan)}")
        k = len(plan)
    colors = np.array([list(s.color) for s in plan])
    centroids, assignment = kmeans(colors, k, seed=seed)
    strokes = [s.with_color(centroids[assignment[i]])
               for i, s in enumerate(plan)]
    order = np.argsort([-luminance(c) for c in centroids], kind="stable")
    palette = Palette(tuple(tuple(centroids[j]) for j in order))
    return plan.with_strokes(strokes), palette


def _light_to_dark_order(colors):
    return np.argsort([-luminance(c) for c in colors], kind="stable")


def sort_light_to_dark(plan: Plan):
    """Stable sort by descending luminance (0.299 R + 0.587 G + 0.114 B)."""
    order = _light_to_dark_order([s.color for s in plan])
    return plan.with_strokes([plan.strokes[i] for i in order])


def plan_deviation(plan_now, plan_init, base: Canvas, model):
    """Mean squared error between the renders of two plans on one base."""
    from .renderer import render_plan

    now = render_plan(plan_now, base, model)
    init = render_plan(plan_init, base, model)
    return float(((now.data - init.data) ** 2).mean())


# ---------------------------------------------------------------------------
# the execute/replan loop


@dataclass
class PaintRound:
    executed_intended: tuple
    executed_realized: tuple
    remaining_plan: Plan
    predicted: Canvas
    perceived: Canvas
    deviation: float
    replan_history: list


@dataclass
class PaintResult:
    final_canvas: Canvas
    initial_plan: Plan
    rounds: list
    initial_history: list

    @property
    def deviations(self):
        return [r.deviation for r in self.rounds]

    @property
    def predicted_final(self):
        return self.rounds[-1].predicted if self.rounds else None


def paint(model, config: PlannerConfig, extractor, executor):
    """Plan, execute in batches, and replan on the perceived canvas.

    Every round executes the first ``batch_size`` strokes, perceives the
    canvas, records the deviation of (realized + remaining) from the
    initial plan, and re-optimizes the remainder when replanning is on.
    """
    from .renderer import render_plan

    config.validate()
    rng = np.random.default_rng(config.seed)
    base0 = executor.perceive()
    plan = init_plan(config, rng, base0)

    initial_history = []
    if config.init_objectives is not None:
        plan, h = optimize(plan, base0, model, config, extractor,
                           objectives=config.init_objectives)
        initial_history.extend(h)
    plan, h = optimize(plan, base0, model, config, extractor)
    initial_history.extend(h)
    if config.palette_size is not None:
        plan, _ = discretize_colors(plan, config.palette_size, config.seed)
        plan = sort_light_to_dark(plan)

    initial_plan = plan
    executed_realized = []
    rounds = []
    while len(plan) > 0:
        batch = plan[:config.batch_size]
        plan = plan[config.batch_size:]

        canvas_before = executor.perceive()
        # the planner's belief about this batch, before execution
        predicted = render_plan(batch, canvas_before, model)
        executor.execute(batch.strokes)
        realized = [r for _, r in executor.log[-len(batch):]]
        executed_realized.extend(realized)
        perceived = executor.perceive()

        current = initial_plan.with_strokes(tuple(executed_realized) + plan.strokes)
        deviation = plan_deviation(current, initial_plan, base0, model)

        replan_history = []
        if len(plan) > 0 and config.replan:
            plan, replan_history = optimize(
                plan, perceived, model, config, extractor,
                iterations=config.replan_iterations)
        rounds.append(PaintRound(batch.strokes, tuple(realized), plan,
                                 predicted, perceived, deviation,
                                 replan_history))

    return PaintResult(executor.perceive(), initial_plan, rounds,
                       initial_history)


# ---------------------------------------------------------------------------
# plan files and histories


def save_plan(plan: Plan, path, realized=None):
    """Line-oriented text, bit-exact round trip. Lines starting with '#'
    are comments; an optional realized section carries perturbed
    parameters from execution logs."""
    lines = [f"{PLAN_MAGIC} {plan.width_px} {plan.height_px} "
             f"{plan.width_m!r} {plan.height_m!r} {len(plan)}"]
    for s in plan:
        lines.append(_stroke_line(s))
    if realized is not None:
        lines.append("# realized")
        for s in realized:
            lines.append("# " + _stroke_line(s))
    with open(path, "w", encoding="ascii") as f:
        f.write("\n".join(lines) + "\n")


def _stroke_line(s: StrokeParams):
    vals = (s.shape.thickness, s.shape.length, s.shape.bend,
            s.x, s.y, s.theta, *s.color)
    return " ".join(repr(float(v)) for v in vals)


def _parse_stroke_line(line):
    vals = [float(tok) for tok in line.split()]
    if len(vals) != 9:
        raise ValueError(f"plan stroke line needs 9 values, got {len(vals)}")
    return StrokeParams(StrokeShape(*vals[0:3]), vals[3], vals[4], vals[5],
                        tuple(vals[6:9]))


def load_plan(path):
    with open(path, encoding="ascii") as f:
        lines = [ln.rstrip("\n") for ln in f if ln.strip()]
    body = [ln for ln in lines if not ln.startswith("#")]
    header = body[0].split()
    if header[0] != PLAN_MAGIC or len(header) != 6:
        raise ValueError(f"{path}: bad plan header {body[0]!r}")
    width_px, height_px = int(header[1]), int(header[2])
    width_m, height_m = float(header[3]), float(header[4])
    n = int(header[5])
    strokes = [_parse_stroke_line(ln) for ln in body[1:]]
    if len(strokes) != n:
        raise ValueError(f"{path}: header declares {n} strokes, found {len(strokes)}")
    return Plan(tuple(strokes), height_px, width_px, height_m, width_m)


def load_realized(path):
    """Strokes from the '# realized' comment section of a plan file."""
    with open(path, encoding="ascii") as f:
        lines = [ln.rstrip("\n") for ln in f if ln.strip()]
    out = []
    active = False
    for ln in lines:
        if ln.strip() == "# realized":
            active = True
            continue
        if active and ln.startswith("# "):
            out.append(_parse_stroke_line(ln[2:]))
    return out


def write_history_csv(path, rows, header):
    with open(path, "w", encoding="ascii") as f:
        f.write(header + "\n")
        for i, v in enumerate(rows):
            f.write(f"{i},{v!r}\n")
