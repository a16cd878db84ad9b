"""Planner: initialization, optimization, palette work, ordering,
deviation, the paint loop, and plan files."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from easel.executor import Executor, NoiseModel
from easel.objectives import BuiltinExtractor, ObjectiveConfig
from easel.planner import (Palette, Plan, PlannerConfig, best_envelope,
                           discretize_colors, init_plan, kmeans, load_plan,
                           load_realized, luminance, optimize, paint,
                           plan_deviation, save_plan, sort_light_to_dark)
from easel.renderer import Canvas, render_plan
from easel.stroke_model import TrainConfig, train_param2stroke
from easel.strokes import StrokeParams, StrokeShape, generate_dataset


@pytest.fixture(scope="module")
def model():
    return train_param2stroke(generate_dataset(80, seed=7),
                              TrainConfig(epochs=120, seed=0))[0]


@pytest.fixture(scope="module")
def extractor():
    return BuiltinExtractor(seed=0)


def _base(px=32):
    return Canvas.blank(px, px, width_m=0.08)


def _config(**kw):
    base = kw.pop("base", None) or _base()
    target = kw.pop("target", None)
    if target is None:
        target = Canvas.from_array(np.full((*base.shape, 3), 0.25),
                                   width_m=base.width_m)
    objectives = kw.pop("objectives", ObjectiveConfig(w_print=1.0, target=target))
    return PlannerConfig(objectives=objectives, **kw)


def test_init_plan_deterministic_and_uniform():
    cfg = _config(n_strokes=8, seed=5)
    base = _base()
    a = init_plan(cfg, np.random.default_rng(5), base)
    b = init_plan(cfg, np.random.default_rng(5), base)
    assert a.strokes == b.strokes
    empty = init_plan(cfg, np.random.default_rng(5), base, n=0)
    assert len(empty) == 0

    big = init_plan(cfg, np.random.default_rng(0), base, n=10_000)
    xs = np.array([s.x for s in big])
    se = 1 / np.sqrt(12) / np.sqrt(len(xs))
    assert abs(xs.mean() - 0.5) < 3 * se
    assert all(-np.pi <= s.theta < np.pi for s in big.strokes[:100])


def test_optimize_zero_iterations_is_identity(model, extractor):
    base = _base()
    cfg = _config(n_strokes=3, iterations=0, base=base)
    plan = init_plan(cfg, np.random.default_rng(0), base)
    out, history = optimize(plan, base, model, cfg, extractor)
    assert out.strokes == plan.strokes
    assert history == []


def test_optimize_rejects_empty_plan(model, extractor):
    base = _base()
    cfg = _config(n_strokes=1, iterations=5, base=base)
    with pytest.raises(ValueError, match="empty"):
        optimize(Plan.for_canvas(base), base, model, cfg, extractor)


def test_color_only_optimization_recovers_target_color(model, extractor):
    base = _base(28)
    stroke = StrokeParams(StrokeShape(0.8, 0.035, 0.0), 0.45, 0.5, 0.1,
                          (0.9, 0.1, 0.6))
    target = render_plan([stroke], base, model)
    start = StrokeParams(stroke.shape, stroke.x, stroke.y, stroke.theta,
                         (0.3, 0.5, 0.2))
    cfg = _config(n_strokes=1, iterations=500, base=base, target=target,
                  lr_position=0.0, lr_shape=0.0, lr_color=5.0)
    plan = Plan.for_canvas(base, [start])
    out, history = optimize(plan, base, model, cfg, extractor)
    got = np.asarray(out.strokes[0].color)
    assert np.abs(got - np.asarray(stroke.color)).max() < 0.05
    assert min(history) < history[0]


def test_optimize_reduces_loss_end_to_end(model, extractor):
    base = _base(24)
    rng = np.random.default_rng(1)
    target = Canvas.from_array(rng.uniform(size=(24, 24, 3)) * 0.3 + 0.2,
                               width_m=base.width_m)
    cfg = _config(n_strokes=20, iterations=60, base=base, target=target, seed=2)
    plan = init_plan(cfg, np.random.default_rng(2), base)
    _, history = optimize(plan, base, model, cfg, extractor)
    assert min(history) < 0.6 * history[0]


def test_optimize_keeps_parameters_in_range(model, extractor):
    base = _base(24)
    cfg = _config(n_strokes=6, iterations=25, base=base, seed=3)
    plan = init_plan(cfg, np.random.default_rng(3), base)
    out, _ = optimize(plan, base, model, cfg, extractor)
    for s in out:
        assert cfg.ranges.contains(s.shape)
        assert 0.0 <= s.x <= 1.0 and 0.0 <= s.y <= 1.0
        assert -np.pi <= s.theta < np.pi
        assert all(0.0 <= c <= 1.0 for c in s.color)


def test_optimize_discretizes_colors_on_schedule(model, extractor):
    base = _base(24)
    cfg = _config(n_strokes=12, iterations=10, base=base, seed=4,
                  palette_size=3, discretize_period=5)
    plan = init_plan(cfg, np.random.default_rng(4), base)
    out, _ = optimize(plan, base, model, cfg, extractor)
    distinct = {s.color for s in out}
    assert len(distinct) <= 3


def test_best_envelope_monotone():
    env = best_envelope([3.0, 5.0, 2.0, 2.5, 1.0])
    assert env == [3.0, 3.0, 2.0, 2.0, 1.0]


# ---------------------------------------------------------------------------
# palette and ordering


def test_kmeans_two_cluster_data_matches_bruteforce_optimum():
    pts = np.array([[0.0, 0.0, 0.0]] * 5 + [[1.0, 1.0, 1.0]] * 5)
    centroids, assignment = kmeans(pts, 2, seed=0)
    assert set(map(tuple, np.round(centroids, 12))) == {(0.0, 0.0, 0.0),
                                                        (1.0, 1.0, 1.0)}
    cost = ((pts - centroids[assignment]) ** 2).sum()
    assert cost == 0.0
    # brute force over all 2-partitions confirms optimality
    best = np.inf
    for mask in range(1, 2 ** 10 - 1):
        sel = np.array([(mask >> i) & 1 for i in range(10)], bool)
        a, b = pts[sel], pts[~sel]
        best = min(best, ((a - a.mean(0)) ** 2).sum() + ((b - b.mean(0)) ** 2).sum())
    assert cost <= best + 1e-12


def _plan_with_colors(colors, base=None):
    base = base or _base()
    strokes = [StrokeParams(StrokeShape(0.5, 0.03, 0.0), 0.5, 0.5, 0.0,
                            tuple(c)) for c in colors]
    return Plan.for_canvas(base, strokes)


def test_discretize_single_color_is_identity():
    plan = _plan_with_colors([(0.3, 0.6, 0.9)] * 5)
    out, palette = discretize_colors(plan, 1, seed=0)
    assert len(palette) == 1
    np.testing.assert_allclose(palette.colors[0], (0.3, 0.6, 0.9), atol=1e-12)
    assert out.strokes == plan.strokes


def test_discretize_black_white_clusters_exactly():
    plan = _plan_with_colors([(0, 0, 0)] * 5 + [(1, 1, 1)] * 5)
    out, palette = discretize_colors(plan, 2, seed=0)
    assert set(palette.colors) == {(0.0, 0.0, 0.0), (1.0, 1.0, 1.0)}
    assert palette.colors[0] == (1.0, 1.0, 1.0)  # light first
    for s, original in zip(out, plan):
        assert s.color == original.color


def test_discretize_k_at_least_distinct_colors_is_lossless():
    colors = [(0.1, 0.2, 0.3), (0.9, 0.8, 0.7), (0.5, 0.5, 0.5)]
    plan = _plan_with_colors(colors * 3)
    out, _ = discretize_colors(plan, 3, seed=1)
    err = sum(np.abs(np.asarray(a.color) - np.asarray(b.color)).max()
              for a, b in zip(out, plan))
    assert err < 1e-9


def test_discretize_reduces_k_with_warning():
    plan = _plan_with_colors([(0.2, 0.2, 0.2), (0.8, 0.8, 0.8)])
    with pytest.warns(UserWarning, match="exceeds"):
        _, palette = discretize_colors(plan, 5, seed=0)
    assert len(palette) == 2


def test_palette_validation():
    with pytest.raises(ValueError, match="1..12"):
        Palette(tuple())
    with pytest.raises(ValueError, match="light to dark"):
        Palette(((0, 0, 0), (1, 1, 1)))
    pal = Palette(((1, 1, 1), (0.5, 0.5, 0.5), (0, 0, 0)))
    snapped = pal.project(np.array([[0.9, 0.95, 0.9], [0.1, 0.0, 0.05]]))
    np.testing.assert_array_equal(snapped, [[1, 1, 1], [0, 0, 0]])


def test_sort_light_to_dark_rules():
    white = (1.0, 1.0, 1.0)
    black = (0.0, 0.0, 0.0)
    plan = _plan_with_colors([black, white])
    out = sort_light_to_dark(plan)
    assert out.strokes[0].color == white
    assert sort_light_to_dark(out).strokes == out.strokes  # idempotent
    mono = _plan_with_colors([(0.5, 0.5, 0.5)] * 4)
    assert sort_light_to_dark(mono).strokes == mono.strokes  # stable on ties


@settings(max_examples=20, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1)),
                min_size=1, max_size=12))
def test_sort_matches_reference_sort(colors):
    plan = _plan_with_colors(colors)
    out = sort_light_to_dark(plan)
    expected = sorted(plan.strokes, key=lambda s: -luminance(s.color))
    assert list(out.strokes) == expected


# ---------------------------------------------------------------------------
# deviation and the paint loop


def test_plan_deviation_identity_and_symmetry(model):
    base = _base(24)
    cfg = _config(n_strokes=4, base=base)
    a = init_plan(cfg, np.random.default_rng(7), base)
    b = init_plan(cfg, np.random.default_rng(8), base)
    assert plan_deviation(a, a, base, model) == 0.0
    assert plan_deviation(a, b, base, model) == pytest.approx(
        plan_deviation(b, a, base, model), abs=1e-15)


def test_paint_single_batch_when_batch_covers_plan(model, extractor):
    base = _base(24)
    cfg = _config(n_strokes=4, batch_size=10, iterations=3,
                  replan_iterations=2, base=base, seed=0)
    ex = Executor(_base(24), model=model, noise=NoiseModel.zero(),
                  render_mode="model")
    result = paint(model, cfg, extractor, ex)
    assert len(result.rounds) == 1
    assert result.rounds[0].replan_history == []


def test_paint_trace_length_and_stroke_conservation(model, extractor):
    base = _base(24)
    cfg = _config(n_strokes=7, batch_size=3, iterations=3, replan_iterations=2,
                  base=base, seed=1)
    ex = Executor(_base(24), model=model, noise=NoiseModel(seed=1),
                  render_mode="oracle")
    result = paint(model, cfg, extractor, ex)
    assert len(result.rounds) == math.ceil(7 / 3)
    executed = sum(len(r.executed_intended) for r in result.rounds)
    assert executed == 7
    assert len(ex.log) == 7
    assert len(result.deviations) == len(result.rounds)


def test_paint_zero_noise_model_mode_matches_prediction(model, extractor):
    base = _base(24)
    cfg = _config(n_strokes=6, batch_size=2, iterations=4, replan_iterations=2,
                  base=base, seed=2)
    ex = Executor(_base(24), model=model, noise=NoiseModel.zero(),
                  render_mode="model")
    result = paint(model, cfg, extractor, ex)
    gap = np.abs(result.final_canvas.data - result.predicted_final.data).mean()
    assert gap <= 1e-6


def test_paint_optional_initial_objective_pass(model, extractor):
    base = _base(24)
    rng = np.random.default_rng(4)
    target = Canvas.from_array(rng.uniform(size=(24, 24, 3)), width_m=base.width_m)
    style_first = ObjectiveConfig(w_print=1.0, target=target)
    cfg = _config(n_strokes=4, batch_size=4, iterations=5, replan_iterations=2,
                  base=base, target=target, seed=3)
    cfg.init_objectives = style_first
    ex = Executor(_base(24), model=model, noise=NoiseModel.zero(),
                  render_mode="model")
    result = paint(model, cfg, extractor, ex)
    # both the initial pass and the main pass contribute to the history
    assert len(result.initial_history) == 2 * cfg.iterations


def test_paint_rejects_invalid_config(model, extractor):
    base = _base(24)
    cfg = _config(n_strokes=0, base=base)
    ex = Executor(_base(24), model=model, render_mode="oracle")
    with pytest.raises(ValueError, match="n_strokes"):
        paint(model, cfg, extractor, ex)


# ---------------------------------------------------------------------------
# plan files


def test_plan_file_roundtrip_bitwise(tmp_path):
    base = _base()
    rng = np.random.default_rng(9)
    cfg = _config(n_strokes=5, base=base)
    plan = init_plan(cfg, rng, base)
    p1 = tmp_path / "plan.txt"
    save_plan(plan, p1)
    loaded = load_plan(p1)
    assert loaded == plan
    p2 = tmp_path / "plan2.txt"
    save_plan(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_plan_file_realized_section(tmp_path):
    base = _base()
    cfg = _config(n_strokes=3, base=base)
    plan = init_plan(cfg, np.random.default_rng(10), base)
    realized = [StrokeParams(s.shape, s.x + 0.01, s.y, s.theta, s.color)
                for s in plan]
    path = tmp_path / "executed.txt"
    save_plan(plan, path, realized=realized)
    assert load_plan(path) == plan  # comments are ignored by the parser
    assert load_realized(path) == realized


def test_plan_file_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("NOTAPLAN 1 2 3\n")
    with pytest.raises(ValueError, match="header"):
        load_plan(path)
