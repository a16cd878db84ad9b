"""Differentiable stroke-based painting planner.

Learns a brush-stroke appearance model from synthetic-robot stroke data,
renders stroke plans differentiably, optimizes them by gradient descent
against image/style/text objectives, and continually replans while a
stochastic executor paints batches of strokes.
"""

from .autodiff import EngineError, Graph, Tensor, check_gradients
from .calibration import (ColorTransform, Homography, apply_color_transform,
                          apply_homography, fit_color_transform, fit_homography,
                          rectify_canvas)
from .executor import Executor, NoiseModel
from .kernels import BACKEND as KERNEL_BACKEND
from .objectives import (BuiltinExtractor, ObjectiveConfig, loss_print,
                         loss_semantic, loss_style, loss_text, remd, total_loss)
from .planner import (Palette, Plan, PlannerConfig, discretize_colors, init_plan,
                      load_plan, optimize, paint, plan_deviation, save_plan,
                      sort_light_to_dark)
from .renderer import Canvas, composite, place_stroke, render_plan
from .stroke_model import (StrokeShapeModel, TrainConfig, evaluate_model,
                           learning_curve, load_model, param2stroke_forward,
                           save_model, train_param2stroke)
from .strokes import (OracleNoise, ShapeRanges, StrokeParams, StrokeShape,
                      bezier_trajectory, generate_dataset, load_dataset,
                      oracle_render_stroke, save_dataset)

__version__ = "0.1.0"

__all__ = [
    "EngineError", "Graph", "Tensor", "check_gradients", "KERNEL_BACKEND",
    "Homography", "ColorTransform", "fit_homography", "apply_homography",
    "rectify_canvas", "fit_color_transform", "apply_color_transform",
    "Executor", "NoiseModel",
    "BuiltinExtractor", "ObjectiveConfig", "loss_print", "loss_semantic",
    "loss_style", "loss_text", "remd", "total_loss",
    "Palette", "Plan", "PlannerConfig", "init_plan", "optimize", "paint",
    "discretize_colors", "sort_light_to_dark", "plan_deviation",
    "save_plan", "load_plan",
    "Canvas", "composite", "place_stroke", "render_plan",
    "StrokeShapeModel", "TrainConfig", "train_param2stroke", "evaluate_model",
    "learning_curve", "param2stroke_forward", "save_model", "load_model",
    "StrokeShape", "StrokeParams", "ShapeRanges", "OracleNoise",
    "bezier_trajectory", "oracle_render_stroke", "generate_dataset",
    "save_dataset", "load_dataset",
    "__version__",
]
