"""Loss forms for painting goals, over a pluggable feature extractor.

Four losses are provided: pixel replication (MSE), semantic replication
(MSE between deepest feature maps), style (relaxed earth mover's distance
between sampled feature vectors), and text similarity (cosine distance
between image and text embeddings). A weighted sum combines them; the
weight vector enters linearly. The built-in extractor is a deterministic,
dependency-free stand-in for pretrained networks: a Gaussian pyramid with
color and gradient-magnitude channels, a seeded random projection as the
image embedding, and a hashed bag-of-words text embedding in the same
space. Real extractors plug in behind the same small surface.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .renderer import Canvas, model_stamp_fn, render_strokes

BLUR_KERNEL = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=float) / 16.0
GRAD_X_KERNEL = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=float) / 8.0
GRAD_Y_KERNEL = GRAD_X_KERNEL.T.copy()

# Maps output pixel (i, j) to source (2i + 0.5, 2j + 0.5): the bilinear
# average of each 2x2 block.
_HALF_THETA = np.array([2.0, 0.0, 0.5, 0.0, 2.0, 0.5])


class BuiltinExtractor:
    """Deterministic differentiable feature extractor.

    Three pyramid levels; per level the channels are {R, G, B, |grad x|,
    |grad y|} from fixed convolution kernels. The image embedding is a
    seeded random projection of the flattened deepest level, and the text
    embedding hashes words into the same space. Both embedding paths are
    L2-direction features; the text path carries no canvas gradient and
    needs none.
    """

    levels = 3

    def __init__(self, seed=0, embed_dim=128):
        self.seed = int(seed)
        self.embed_dim = int(embed_dim)
        self._projections = {}

    # -- feature pyramid ----------------------------------------------------

    def _conv1(self, g, plane, kernel):
        four = ad.reshape(plane, (1, 1, *plane.data.shape))
        out = ad.conv2d(four, g.tensor(kernel[None, None]))
        return ad.reshape(out, plane.data.shape)

    def _level_features(self, g, rgb):
        gray = ad.smul(ad.add(ad.add(rgb[0], rgb[1]), rgb[2]), 1.0 / 3.0)
        gx = ad.absolute(self._conv1(g, gray, GRAD_X_KERNEL))
        gy = ad.absolute(self._conv1(g, gray, GRAD_Y_KERNEL))
        planes = [*rgb, gx, gy]
        h, w = gray.data.shape
        return ad.concat([ad.reshape(p, (1, h, w)) for p in planes])

    def _downsample(self, g, rgb):
        out = []
        for plane in rgb:
            blurred = self._conv1(g, plane, BLUR_KERNEL)
            h, w = plane.data.shape
            out.append(ad.affine_sample(blurred, g.tensor(_HALF_THETA), (h // 2, w // 2)))
        return tuple(out)

    def features_graph(self, g, channels):
        """List of (5, h_k, w_k) tensors, one per pyramid level."""
        rgb = tuple(channels)
        feats = [self._level_features(g, rgb)]
        for _ in range(self.levels - 1):
            rgb = self._downsample(g, rgb)
            feats.append(self._level_features(g, rgb))
        return feats

    def deepest_graph(self, g, channels):
        return self.features_graph(g, channels)[-1]

    # -- embeddings ----------------------------------------------------------

    def _projection(self, size):
        m = self._projections.get(size)
        if m is None:
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, size]))
            m = rng.normal(0.0, 1.0 / np.sqrt(size), size=(self.embed_dim, size))
            self._projections[size] = m
        return m

    def embed_image_graph(self, g, channels):
        """Image embedding as a graph tensor (not yet normalized; the
        cosine loss normalizes internally)."""
        deepest = self.deepest_graph(g, channels)
        flat = ad.reshape(deepest, (deepest.data.size,))
        return ad.matmul(g.tensor(self._projection(flat.data.size)), flat)

    def image_embedding(self, canvas: Canvas):
        """L2-normalized embedding of a canvas, off-graph."""
        g = ad.Graph()
        vec = self.embed_image_graph(g, canvas.channels(g)).data
        return vec / np.linalg.norm(vec)

    def embed_text(self, text):
        """Hashed bag-of-words into the embedding space, L2-normalized."""
        tokens = re.findall(r"[a-z0-9]+", text.lower())
        if not tokens:
            raise ValueError(f"embed_text: no tokens in {text!r}")
        vec = np.zeros(self.embed_dim)
        for token in tokens:
            digest = hashlib.sha256(f"{self.seed}:{token}".encode()).digest()
            idx = int.from_bytes(digest[:8], "little") % self.embed_dim
            sign = 1.0 if digest[8] & 1 else -1.0
            vec[idx] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            raise ValueError(f"embed_text: degenerate embedding for {text!r}")
        return vec / norm


# ---------------------------------------------------------------------------
# loss forms (graph level)


def _check_same_shape(a: Canvas, b: Canvas, op):
    if a.shape != b.shape:
        raise ValueError(f"{op}: canvas dimensions differ, {a.shape} vs {b.shape}")


def graph_loss_print(g, channels, target: Canvas):
    per_channel = [ad.mse(channels[c], g.tensor(target.data[:, :, c]))
                   for c in range(3)]
    return ad.smul(ad.add(ad.add(per_channel[0], per_channel[1]), per_channel[2]),
                   1.0 / 3.0)


def graph_loss_semantic(g, channels, target: Canvas, extractor):
    rendered = extractor.deepest_graph(g, channels)
    reference = extractor.deepest_graph(g, target.channels(g))
    return ad.mse(rendered, reference)


def remd(features_a, features_b):
    """Relaxed earth mover's distance between two feature-vector sets.

    max(mean_i min_j C_ij, mean_j min_i C_ij) with C the pairwise cosine
    distance. Operands are (n, d) tensors on one graph. Identical sets
    cost zero up to machine rounding of the cosine normalization.
    """
    cost = ad.pairwise_cosine_distance(features_a, features_b)
    a_to_b = ad.reduce_mean(ad.reduce_min(cost, axis=1))
    b_to_a = ad.reduce_mean(ad.reduce_min(cost, axis=0))
    return ad.maximum(a_to_b, b_to_a)


def _style_positions(n_positions, seed):
    return np.random.default_rng(np.random.SeedSequence([seed, 0x57])).uniform(
        size=(n_positions, 2))


def _sampled_style_features(g, feature_levels, fractions):
    """Per-position feature vectors across levels, level-mean removed."""
    per_level = []
    n = fractions.shape[0]
    ones_col = g.tensor(np.ones((n, 1)))
    mean_row = g.tensor(np.full((1, n), 1.0 / n))
    for level in feature_levels:
        _, h, w = level.data.shape
        rows = np.minimum((fractions[:, 0] * h).astype(int), h - 1)
        cols = np.minimum((fractions[:, 1] * w).astype(int), w - 1)
        gathered = ad.gather_pixels(level, rows, cols)
        mean = ad.matmul(mean_row, gathered)              # (1, 5)
        centered = ad.sub(gathered, ad.matmul(ones_col, mean))
        per_level.append(centered)
    return ad.concat(per_level, axis=1)


def graph_loss_style(g, channels, style: Canvas, extractor,
                     n_positions=512, seed=None):
    """REMD between style features sampled at a fixed seeded position set.

    Positions are fractional coordinates shared by both canvases, so equal
    canvases sample identical features regardless of resolution.
    """
    seed = extractor.seed if seed is None else seed
    fractions = _style_positions(n_positions, seed)
    rendered = _sampled_style_features(
        g, extractor.features_graph(g, channels), fractions)
    reference = _sampled_style_features(
        g, extractor.features_graph(g, style.channels(g)), fractions)
    return remd(rendered, reference)


def graph_loss_text(g, channels, text, extractor, text_embedding=None):
    if text_embedding is None:
        embed = getattr(extractor, "embed_text", None)
        if embed is None:
            raise ValueError(
                "loss_text: extractor has no text-embedding capability")
        text_embedding = embed(text)
    image = extractor.embed_image_graph(g, channels)
    return ad.cosine_distance(image, g.tensor(text_embedding))


# ---------------------------------------------------------------------------
# canvas-level wrappers


def loss_print(rendered: Canvas, target: Canvas):
    _check_same_shape(rendered, target, "loss_print")
    g = ad.Graph()
    return graph_loss_print(g, rendered.channels(g), target).item()


def loss_semantic(rendered: Canvas, target: Canvas, extractor):
    _check_same_shape(rendered, target, "loss_semantic")
    g = ad.Graph()
    return graph_loss_semantic(g, rendered.channels(g), target, extractor).item()


def loss_style(rendered: Canvas, style: Canvas, extractor, n_positions=512):
    g = ad.Graph()
    return graph_loss_style(g, rendered.channels(g), style, extractor,
                            n_positions).item()


def loss_text(rendered: Canvas, text, extractor):
    g = ad.Graph()
    return graph_loss_text(g, rendered.channels(g), text, extractor).item()


# ---------------------------------------------------------------------------
# weighted combination


@dataclass
class ObjectiveConfig:
    """Loss weights and their targets; every nonzero weight needs its
    target present. Weights are nonnegative reals; presets typically use
    plain {0, 1} switches."""

    w_text: float = 0.0
    w_style: float = 0.0
    w_print: float = 0.0
    w_semantic: float = 0.0
    text: str | None = None
    text_embedding: np.ndarray | None = None
    style: Canvas | None = None
    target: Canvas | None = None
    style_positions: int = 512

    def validate(self):
        for name in ("w_text", "w_style", "w_print", "w_semantic"):
            if getattr(self, name) < 0:
                raise ValueError(f"ObjectiveConfig: {name} must be nonnegative")
        if self.w_text and self.text is None and self.text_embedding is None:
            raise ValueError("ObjectiveConfig: w_text set but no text target")
        if self.w_style and self.style is None:
            raise ValueError("ObjectiveConfig: w_style set but no style canvas")
        if (self.w_print or self.w_semantic) and self.target is None:
            raise ValueError("ObjectiveConfig: print/semantic weight set "
                             "but no target canvas")
        return self


def graph_total_loss(g, channels, base: Canvas, config: ObjectiveConfig,
                     extractor):
    """Weighted sum of the configured losses over rendered channels."""
    config.validate()
    total = g.tensor(0.0)
    if config.w_print:
        _check_same_shape(base, config.target, "loss_print")
        total = ad.add(total, ad.smul(
            graph_loss_print(g, channels, config.target), config.w_print))
    if config.w_semantic:
        _check_same_shape(base, config.target, "loss_semantic")
        total = ad.add(total, ad.smul(
            graph_loss_semantic(g, channels, config.target, extractor),
            config.w_semantic))
    if config.w_style:
        total = ad.add(total, ad.smul(
            graph_loss_style(g, channels, config.style, extractor,
                             config.style_positions), config.w_style))
    if config.w_text:
        total = ad.add(total, ad.smul(
            graph_loss_text(g, channels, config.text, extractor,
                            config.text_embedding), config.w_text))
    return total


def total_loss(plan, base: Canvas, model, config: ObjectiveConfig, extractor):
    """Render the plan onto the base and evaluate the weighted objective."""
    g = ad.Graph()
    channels, _ = render_strokes(g, list(plan), base, model_stamp_fn(model))
    return graph_total_loss(g, channels, base, config, extractor).item()


# ---------------------------------------------------------------------------
# precomputed-feature target file


def save_features(path, vector):
    vector = np.asarray(vector, dtype=np.float64).ravel()
    with open(path, "w", encoding="ascii") as f:
        f.write(f"FEAT1 {vector.size}\n")
        f.write(" ".join(repr(float(v)) for v in vector) + "\n")


def load_features(path):
    with open(path, encoding="ascii") as f:
        header = f.readline().split()
        if len(header) != 2 or header[0] != "FEAT1":
            raise ValueError(f"{path}: expected 'FEAT1 <dim>' header, got {header}")
        dim = int(header[1])
        values = np.array([float(tok) for tok in f.read().split()])
    if values.size != dim:
        raise ValueError(f"{path}: header says {dim} values, found {values.size}")
    return values
