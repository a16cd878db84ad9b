"""The trainable shape-to-stamp network and its training loop.

Architecture: two dense layers expand the three shape parameters into a
small seed map, two 3x3 convolutions refine it, and a bilinear upscaler
brings it to stamp resolution; the output is saturated into [0, 1].
Training minimizes mean squared error against oracle (or imported) stamps
with full-batch gradient descent, holding out a validation fraction and
returning the weights from the best validation epoch.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .strokes import (DEFAULT_RANGES, STAMP_SCALE, STAMP_SHAPE, OracleNoise,
                      ShapeRanges, StrokeDataset, StrokeShape, generate_dataset)

HIDDEN = 64
CHANNELS = 8
UPSAMPLE = 4

MODEL_MAGIC = b"P2S1"


@dataclass
class StrokeShapeModel:
    """Weights of the param2stroke network plus its stamp geometry.

    ``FIELDS`` fixes the declaration order used by the model file format;
    ``weight_arrays()`` returns the arrays in that order.
    """

    norm_offset: np.ndarray
    norm_scale: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    k1: np.ndarray
    c1: np.ndarray
    k2: np.ndarray
    c2: np.ndarray
    resolution: tuple[int, int] = STAMP_SHAPE
    scale: float = STAMP_SCALE
    clamp_warnings: int = field(default=0, compare=False)

    FIELDS = ("norm_offset", "norm_scale", "w1", "b1", "w2", "b2",
              "k1", "c1", "k2", "c2")

    @classmethod
    def initialize(cls, seed=0, resolution=STAMP_SHAPE, scale=STAMP_SCALE,
                   ranges: ShapeRanges = DEFAULT_RANGES):
        rng = np.random.default_rng(seed)
        rows, cols = resolution
        if rows % UPSAMPLE or cols % UPSAMPLE:
            raise ValueError(f"resolution {resolution} must be divisible by {UPSAMPLE}")
        seed_size = (rows // UPSAMPLE) * (cols // UPSAMPLE)
        lo = np.array([ranges.thickness[0], ranges.length[0], ranges.bend[0]])
        hi = np.array([ranges.thickness[1], ranges.length[1], ranges.bend[1]])

        def dense(n_out, n_in):
            return rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_out, n_in))

        return cls(
            norm_offset=-lo / (hi - lo),
            norm_scale=1.0 / (hi - lo),
            w1=dense(HIDDEN, 3),
            b1=np.zeros(HIDDEN),
            w2=dense(seed_size, HIDDEN),
            b2=np.zeros(seed_size),
            k1=rng.normal(0.0, 1.0 / 3.0, size=(CHANNELS, 1, 3, 3)),
            c1=np.zeros(CHANNELS),
            k2=rng.normal(0.0, 1.0 / (3.0 * np.sqrt(CHANNELS)), size=(1, CHANNELS, 3, 3)),
            c2=np.zeros(1),
            resolution=tuple(resolution),
            scale=float(scale),
        )

    @property
    def seed_shape(self):
        return self.resolution[0] // UPSAMPLE, self.resolution[1] // UPSAMPLE

    def weight_arrays(self):
        return [getattr(self, name) for name in self.FIELDS]

    def copy(self):
        kwargs = {name: getattr(self, name).copy() for name in self.FIELDS}
        return StrokeShapeModel(resolution=self.resolution, scale=self.scale, **kwargs)

    def forward_graph(self, g, shapes, weights=None, saturate=True):
        """Record the network on ``g`` for a (n, 3) or (3,) shape tensor.

        Returns stamps of shape (n, rows, cols) (or (rows, cols) for a
        single shape). ``weights`` may supply live weight tensors during
        training; otherwise the stored arrays are used as constants.
        Inputs outside the declared ranges are clamped (in normalized
        space) and counted on ``clamp_warnings``.
        """
        if not isinstance(shapes, ad.Tensor):
            shapes = g.tensor(shapes)
        single = shapes.data.ndim == 1
        x = ad.reshape(shapes, (1, 3)) if single else shapes
        w = weights or {name: g.tensor(getattr(self, name)) for name in self.FIELDS}

        norm_w = g.tensor(np.diag(self.norm_scale))
        xn = ad.linear(x, norm_w, w["norm_offset"])
        if (xn.data < 0.0).any() or (xn.data > 1.0).any():
            self.clamp_warnings += 1
            xn = ad.clamp01(xn)

        # Magnitude activations: nonlinear but with unit-slope gradients
        # everywhere, so no region of the input space stops learning.
        h1 = ad.absolute(ad.linear(xn, w["w1"], w["b1"]))
        h2 = ad.linear(h1, w["w2"], w["b2"])
        sh, sw = self.seed_shape
        seed_map = ad.reshape(h2, (x.data.shape[0], 1, sh, sw))
        cv1 = ad.absolute(ad.conv2d(seed_map, w["k1"], w["c1"]))
        cv2 = ad.conv2d(cv1, w["k2"], w["c2"])
        up = ad.bilinear_upsample(cv2, UPSAMPLE)
        rows, cols = self.resolution
        out = ad.reshape(up, (rows, cols) if single else (x.data.shape[0], rows, cols))
        return ad.clamp01(out) if saturate else out

    def predict(self, shape: StrokeShape):
        """Stamp ndarray for one shape, off-graph."""
        g = ad.Graph()
        return self.forward_graph(g, shape.as_array()).data


def param2stroke_forward(g, model, shape):
    """Record one stroke stamp on ``g``; differentiable w.r.t. the shape.

    ``shape`` is a (3,) tensor of (thickness, length, bend) or a
    StrokeShape (wrapped as a leaf).
    """
    if isinstance(shape, StrokeShape):
        shape = g.tensor(shape.as_array())
    return model.forward_graph(g, shape)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 0.5
    momentum: float = 0.9
    max_grad_norm: float = 1.0
    validation_fraction: float = 0.2
    seed: int = 0
    # Cross-validation rotation: when cv_fold is set, validation is fold
    # ``cv_fold`` of ``cv_folds`` contiguous blocks of a seed-shuffled order
    # (and validation_fraction is ignored).
    cv_fold: int | None = None
    cv_folds: int = 5


def _split(dataset, config):
    n = len(dataset)
    order = np.random.default_rng(config.seed).permutation(n)
    if config.cv_fold is not None:
        k, folds = config.cv_fold, config.cv_folds
        if not 0 <= k < folds:
            raise ValueError(f"cv_fold {k} outside 0..{folds - 1}")
        bounds = np.linspace(0, n, folds + 1).astype(int)
        val = order[bounds[k]:bounds[k + 1]]
        train = np.concatenate([order[:bounds[k]], order[bounds[k + 1]:]])
        return train, val
    n_val = int(round(n * config.validation_fraction))
    return order[n_val:], order[:n_val]


def train_param2stroke(dataset, config=TrainConfig()):
    """Fit the network to (shape, stamp) pairs; returns (model, history).

    History rows are (epoch, train_loss, val_loss); epoch 0 is the
    untrained evaluation. The returned model carries the weights of the
    epoch with the lowest validation loss (training loss when no
    validation split is configured).
    """
    if len(dataset) == 0:
        raise ValueError("train_param2stroke: empty dataset")
    train_idx, val_idx = _split(dataset, config)
    if len(train_idx) == 0:
        raise ValueError("train_param2stroke: no training samples after split")

    shapes = dataset.shapes_array()
    stamps = dataset.stamps_array()
    x_train, y_train = shapes[train_idx], stamps[train_idx]
    x_val, y_val = shapes[val_idx], stamps[val_idx]

    model = StrokeShapeModel.initialize(config.seed, dataset.resolution, dataset.scale)
    params = {name: getattr(model, name).copy() for name in model.FIELDS}
    trainable = [n for n in model.FIELDS if n not in ("norm_offset", "norm_scale")]
    velocity = {name: np.zeros_like(params[name]) for name in trainable}

    def put(m, values):
        for name in model.FIELDS:
            setattr(m, name, values[name])

    def val_loss(m):
        if len(val_idx) == 0:
            return None
        pred = m.forward_graph(ad.Graph(), x_val).data
        return float(((pred - y_val) ** 2).mean())

    def train_eval_loss(m):
        pred = m.forward_graph(ad.Graph(), x_train).data
        return float(((pred - y_train) ** 2).mean())

    put(model, params)
    history = [(0, train_eval_loss(model), val_loss(model))]
    best = {name: params[name].copy() for name in model.FIELDS}
    best_metric = history[0][2] if history[0][2] is not None else history[0][1]

    for epoch in range(1, config.epochs + 1):
        g = ad.Graph()
        weights = {name: g.tensor(params[name]) for name in model.FIELDS}
        # Train on the pre-saturation output: clamped pixels would get zero
        # gradient and could lock in early mistakes permanently.
        pred = model.forward_graph(g, x_train, weights=weights, saturate=False)
        loss = ad.mse(pred, g.tensor(y_train))
        g.backward(loss)
        grads = {name: weights[name].grad for name in trainable}
        total = np.sqrt(sum(float((g_ ** 2).sum()) for g_ in grads.values()
                            if g_ is not None))
        clip = min(1.0, config.max_grad_norm / total) if total > 0 else 1.0
        for name in trainable:
            if grads[name] is None:
                continue
            velocity[name] = (config.momentum * velocity[name]
                              - config.learning_rate * clip * grads[name])
            params[name] = params[name] + velocity[name]

        put(model, params)
        metric_val = val_loss(model)
        history.append((epoch, train_eval_loss(model), metric_val))
        metric = metric_val if metric_val is not None else history[-1][1]
        if metric < best_metric:
            best_metric = metric
            best = {name: params[name].copy() for name in model.FIELDS}

    put(model, best)
    return model, history


def learning_curve(sizes=(10, 30, 100, 200), folds=5, seed=0, test_size=50,
                   config=TrainConfig(), noise=None):
    """Median held-out MAE per dataset size, nested-pool 5-fold protocol.

    One master pool of max(sizes) strokes is generated once; each size
    trains on its prefix with ``folds`` validation rotations, and every
    model is scored on one shared held-out test set. Returns a list of
    (size, median_mae, [fold_maes]) rows.
    """
    noise = noise if noise is not None else OracleNoise()
    pool = generate_dataset(max(sizes), seed=seed, noise=noise)
    test = generate_dataset(test_size, seed=seed + 90001, noise=noise)
    rows = []
    for n in sorted(sizes):
        sub = StrokeDataset(pool.pairs[:n], pool.resolution, pool.scale)
        maes = []
        for k in range(folds):
            cfg = replace(config, cv_fold=k, cv_folds=folds, seed=config.seed)
            model, _ = train_param2stroke(sub, cfg)
            maes.append(evaluate_model(model, test.pairs))
        rows.append((n, float(np.median(maes)), maes))
    return rows


def evaluate_model(model, pairs):
    """Mean absolute error of predicted vs target stamps over a test set."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("evaluate_model: empty test set")
    shapes = np.array([[s.thickness, s.length, s.bend] for s, _ in pairs])
    targets = np.array([stamp for _, stamp in pairs])
    pred = model.forward_graph(ad.Graph(), shapes).data
    return float(np.abs(pred - targets).mean())


def save_model(model, path):
    """Versioned flat binary: magic, u32 shape header, then float64 data.

    Header: rows, cols, n_arrays, then (ndim, dims...) per array, all
    little-endian u32. Data: the stamp scale followed by each weight array
    flattened in declaration order.
    """
    arrays = model.weight_arrays()
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        header = [model.resolution[0], model.resolution[1], len(arrays)]
        for arr in arrays:
            header.append(arr.ndim)
            header.extend(arr.shape)
        f.write(struct.pack(f"<{len(header)}I", *header))
        f.write(struct.pack("<d", model.scale))
        for arr in arrays:
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path):
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MODEL_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {MODEL_MAGIC!r}")

        def u32():
            return struct.unpack("<I", f.read(4))[0]

        rows, cols, n_arrays = u32(), u32(), u32()
        if n_arrays != len(StrokeShapeModel.FIELDS):
            raise ValueError(f"{path}: expected {len(StrokeShapeModel.FIELDS)} arrays, "
                             f"found {n_arrays}")
        shapes = []
        for _ in range(n_arrays):
            ndim = u32()
            shapes.append(tuple(u32() for _ in range(ndim)))
        scale = struct.unpack("<d", f.read(8))[0]
        weights = {}
        for name, shape in zip(StrokeShapeModel.FIELDS, shapes):
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(8 * count), dtype="<f8").reshape(shape)
            weights[name] = data.astype(np.float64)
    return StrokeShapeModel(resolution=(rows, cols), scale=scale, **weights)
