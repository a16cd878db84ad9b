"""Reverse-mode automatic differentiation over dense float64 arrays.

A Graph records forward operations in execution order; ``Graph.backward``
replays the tape in reverse and fills per-node gradients. The op set is
exactly what the stroke-rendering pipeline and the loss functions need,
not a general autodiff system: no control-flow capture, no higher-order
derivatives, and no broadcasting beyond scalar-with-tensor.

Conventions:
  * every value is a float64 ndarray (scalars have shape ``()``),
  * tensors are immutable once recorded and may be shared across threads,
  * one Graph is single-threaded and supports exactly one backward pass.
"""

from __future__ import annotations

import numpy as np

from . import kernels


class EngineError(ValueError):
    """Invalid graph usage: shape mismatch, domain violation, or reuse."""


class Tensor:
    """A value recorded on a Graph. Do not mutate ``data``."""

    __slots__ = ("graph", "idx", "data")

    def __init__(self, graph, idx, data):
        self.graph = graph
        self.idx = idx
        self.data = data

    @property
    def shape(self):
        return self.data.shape

    @property
    def grad(self):
        """Gradient array after backward; None if unreachable from the loss."""
        return self.graph.grad_of(self)

    def item(self):
        if self.data.size != 1:
            raise EngineError(f"item: tensor has shape {self.data.shape}")
        return float(self.data.reshape(()))

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(smul(self, -1.0), other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return smul(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return smul(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, node={self.idx})"


class _Node:
    __slots__ = ("parents", "backward")

    def __init__(self, parents, backward):
        self.parents = parents
        self.backward = backward


class Graph:
    """Tape of forward operations plus, after backward, their gradients."""

    def __init__(self):
        self._nodes = []
        self._grads = None

    def tensor(self, data):
        """Record a leaf holding a copy of ``data``."""
        arr = np.array(data, dtype=np.float64)
        return self._record(arr, (), None)

    def _record(self, value, parents, backward):
        if self._grads is not None:
            raise EngineError("graph already differentiated; record on a fresh Graph")
        self._nodes.append(_Node(tuple(p.idx for p in parents), backward))
        return Tensor(self, len(self._nodes) - 1, value)

    def backward(self, loss):
        """Populate gradients of every node reachable from the scalar ``loss``.

        A second call on the same graph is rejected: the tape must be
        re-recorded to differentiate again.
        """
        if loss.graph is not self:
            raise EngineError("backward: loss was recorded on a different graph")
        if self._grads is not None:
            raise EngineError("backward already ran on this graph")
        if loss.data.shape != ():
            raise EngineError(
                f"backward requires a scalar loss, got shape {loss.data.shape}")
        grads = [None] * len(self._nodes)
        grads[loss.idx] = np.array(1.0)
        for idx in range(loss.idx, -1, -1):
            g = grads[idx]
            if g is None:
                continue
            node = self._nodes[idx]
            if node.backward is None:
                continue
            for parent, pg in zip(node.parents, node.backward(g)):
                if pg is None:
                    continue
                if grads[parent] is None:
                    grads[parent] = pg
                else:
                    grads[parent] = grads[parent] + pg
        self._grads = grads

    def grad_of(self, t):
        if self._grads is None:
            return None
        return self._grads[t.idx]


def _as_tensor(graph, x, op):
    if isinstance(x, Tensor):
        if x.graph is not graph:
            raise EngineError(f"{op}: operands recorded on different graphs")
        return x
    if np.isscalar(x):
        return graph.tensor(float(x))
    raise EngineError(f"{op}: expected Tensor or scalar, got {type(x).__name__}")


def _pair(a, b, op):
    if isinstance(a, Tensor):
        return a, _as_tensor(a.graph, b, op)
    if isinstance(b, Tensor):
        return _as_tensor(b.graph, a, op), b
    raise EngineError(f"{op}: at least one operand must be a Tensor")


# ---------------------------------------------------------------------------
# elementwise and scalar ops


def add(a, b):
    a, b = _pair(a, b, "add")
    va, vb = a.data, b.data
    if va.shape == vb.shape:
        bk = lambda g: (g, g)
    elif va.shape == ():
        bk = lambda g: (np.asarray(g.sum()), g)
    elif vb.shape == ():
        bk = lambda g: (g, np.asarray(g.sum()))
    else:
        raise EngineError(f"add: incompatible shapes {va.shape} and {vb.shape}")
    return a.graph._record(va + vb, (a, b), bk)


def sub(a, b):
    a, b = _pair(a, b, "sub")
    return add(a, smul(b, -1.0))


def mul(a, b):
    a, b = _pair(a, b, "mul")
    va, vb = a.data, b.data
    if va.shape == vb.shape:
        bk = lambda g: (g * vb, g * va)
    elif va.shape == ():
        bk = lambda g: (np.asarray((g * vb).sum()), g * va)
    elif vb.shape == ():
        bk = lambda g: (g * vb, np.asarray((g * va).sum()))
    else:
        raise EngineError(f"mul: incompatible shapes {va.shape} and {vb.shape}")
    return a.graph._record(va * vb, (a, b), bk)


def smul(a, c):
    """Multiply by a plain Python constant (not recorded as a node)."""
    c = float(c)
    return a.graph._record(a.data * c, (a,), lambda g: (g * c,))


def sin(a):
    va = a.data
    return a.graph._record(np.sin(va), (a,), lambda g: (g * np.cos(va),))


def cos(a):
    va = a.data
    return a.graph._record(np.cos(va), (a,), lambda g: (-g * np.sin(va),))


def absolute(a):
    va = a.data
    return a.graph._record(np.abs(va), (a,), lambda g: (g * np.sign(va),))


def clamp01(a):
    """min(max(x, 0), 1); gradient passes only where 0 < x < 1."""
    va = a.data
    mask = (va > 0.0) & (va < 1.0)
    return a.graph._record(np.clip(va, 0.0, 1.0), (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    """(m, n) @ (n,) -> (m,)  or  (m, n) @ (n, p) -> (m, p)."""
    va, vb = a.data, b.data
    if va.ndim != 2 or vb.ndim not in (1, 2) or va.shape[1] != vb.shape[0]:
        raise EngineError(f"matmul: incompatible shapes {va.shape} and {vb.shape}")
    if vb.ndim == 1:
        bk = lambda g: (np.outer(g, vb), va.T @ g)
    else:
        bk = lambda g: (g @ vb.T, va.T @ g)
    return a.graph._record(va @ vb, (a, b), bk)


def linear(x, w, b=None):
    """Dense layer: x (n, i) or (i,) times w (o, i), plus optional bias (o,)."""
    vx, vw = x.data, w.data
    if vw.ndim != 2 or vx.ndim not in (1, 2) or vx.shape[-1] != vw.shape[1]:
        raise EngineError(f"linear: incompatible shapes {vx.shape} and {vw.shape}")
    y = vx @ vw.T
    if b is None:
        if vx.ndim == 1:
            bk = lambda g: (g @ vw, np.outer(g, vx))
        else:
            bk = lambda g: (g @ vw, g.T @ vx)
        return x.graph._record(y, (x, w), bk)
    vb = b.data
    if vb.shape != (vw.shape[0],):
        raise EngineError(f"linear: bias shape {vb.shape} does not match {vw.shape}")
    if vx.ndim == 1:
        bk = lambda g: (g @ vw, np.outer(g, vx), g)
    else:
        bk = lambda g: (g @ vw, g.T @ vx, g.sum(axis=0))
    return x.graph._record(y + vb, (x, w, b), bk)


def conv2d(x, k, bias=None):
    """2-D correlation, stride 1, zero padding that preserves spatial size.

    ``x`` is (ci, h, w) or (n, ci, h, w); ``k`` is (co, ci, kh, kw) with odd
    kh, kw; optional bias (co,).
    """
    vx, vk = x.data, k.data
    squeeze = vx.ndim == 3
    v4 = vx[None] if squeeze else vx
    if v4.ndim != 4 or vk.ndim != 4 or v4.shape[1] != vk.shape[1]:
        raise EngineError(f"conv2d: incompatible shapes {vx.shape} and {vk.shape}")
    if vk.shape[2] % 2 == 0 or vk.shape[3] % 2 == 0:
        raise EngineError(f"conv2d: kernel dims must be odd, got {vk.shape}")
    v4 = np.ascontiguousarray(v4)
    vk = np.ascontiguousarray(vk)
    y = kernels.conv2d_forward(v4, vk)

    if bias is not None:
        vb = bias.data
        if vb.shape != (vk.shape[0],):
            raise EngineError(
                f"conv2d: bias shape {vb.shape} does not match kernel {vk.shape}")
        y = y + vb[None, :, None, None]

    def bk(g):
        g4 = np.ascontiguousarray(g[None] if squeeze else g)
        gx, gk = kernels.conv2d_backward(v4, vk, g4)
        gx = gx[0] if squeeze else gx
        if bias is None:
            return gx, gk
        return gx, gk, g4.sum(axis=(0, 2, 3))

    y = y[0] if squeeze else y
    parents = (x, k) if bias is None else (x, k, bias)
    return x.graph._record(y, parents, bk)


_UPSAMPLE_CACHE = {}


def _upsample_matrix(n_in, factor):
    """(n_in * factor, n_in) interpolation weights, half-pixel convention,
    edges clamped so rows always sum to 1."""
    key = (n_in, factor)
    m = _UPSAMPLE_CACHE.get(key)
    if m is None:
        out = np.arange(n_in * factor, dtype=float)
        src = np.clip((out + 0.5) / factor - 0.5, 0.0, n_in - 1.0)
        i0 = np.floor(src).astype(int)
        i1 = np.minimum(i0 + 1, n_in - 1)
        d = src - i0
        m = np.zeros((n_in * factor, n_in))
        np.add.at(m, (np.arange(n_in * factor), i0), 1.0 - d)
        np.add.at(m, (np.arange(n_in * factor), i1), d)
        _UPSAMPLE_CACHE[key] = m
    return m


def bilinear_upsample(x, factor):
    """Upsample the last two axes by an integer factor with bilinear weights."""
    factor = int(factor)
    if factor < 1:
        raise EngineError(f"bilinear_upsample: factor must be >= 1, got {factor}")
    vx = x.data
    if vx.ndim < 2:
        raise EngineError(f"bilinear_upsample: need >= 2 dims, got shape {vx.shape}")
    wr = _upsample_matrix(vx.shape[-2], factor)
    wc = _upsample_matrix(vx.shape[-1], factor)
    y = np.einsum("aH,bW,...HW->...ab", wr, wc, vx, optimize=True)

    def bk(g):
        return (np.einsum("aH,bW,...ab->...HW", wr, wc, g, optimize=True),)

    return x.graph._record(y, (x,), bk)


def affine_sample(img, theta, out_shape):
    """Bilinear sampling of a 2-D map through a 2x3 inverse affine transform.

    ``theta`` has 6 entries mapping output pixel (i, j) to source
    (row, col) = (t0*i + t1*j + t2, t3*i + t4*j + t5). Out-of-bounds taps
    read as zero; gradients flow to both the map and the transform.
    """
    vi, vt = img.data, theta.data
    if vi.ndim != 2:
        raise EngineError(f"affine_sample: map must be 2-D, got shape {vi.shape}")
    if vt.shape != (6,):
        raise EngineError(f"affine_sample: transform must have shape (6,), got {vt.shape}")
    out_h, out_w = int(out_shape[0]), int(out_shape[1])
    vi = np.ascontiguousarray(vi)
    vt = np.ascontiguousarray(vt)
    y = kernels.affine_sample_forward(vi, vt, out_h, out_w)

    def bk(g):
        return kernels.affine_sample_backward(vi, vt, np.ascontiguousarray(g))

    return img.graph._record(y, (img, theta), bk)


# ---------------------------------------------------------------------------
# reductions, losses, reshaping


def reduce_mean(a):
    va = a.data
    n = va.size
    return a.graph._record(
        np.asarray(va.mean()), (a,), lambda g: (np.full(va.shape, float(g) / n),))


def reduce_sum(a):
    va = a.data
    return a.graph._record(
        np.asarray(va.sum()), (a,), lambda g: (np.full(va.shape, float(g)),))


def mse(a, b):
    """Mean of squared differences (mean, not sum, so the value is
    resolution-independent)."""
    a, b = _pair(a, b, "mse")
    va, vb = a.data, b.data
    if va.shape != vb.shape:
        raise EngineError(f"mse: incompatible shapes {va.shape} and {vb.shape}")
    diff = va - vb
    n = max(diff.size, 1)

    def bk(g):
        d = diff * (2.0 * float(g) / n)
        return d, -d

    return a.graph._record(np.asarray((diff * diff).mean()), (a, b), bk)


def cosine_distance(a, b):
    """1 - cos(a, b) for two nonzero vectors; exactly 0 when a is b."""
    a, b = _pair(a, b, "cosine_distance")
    va, vb = a.data, b.data
    if va.ndim != 1 or va.shape != vb.shape:
        raise EngineError(
            f"cosine_distance: need equal-length vectors, got {va.shape} and {vb.shape}")
    daa = float(va @ va)
    dbb = float(vb @ vb)
    dab = float(va @ vb)
    if daa < 1e-24 or dbb < 1e-24:
        raise EngineError("cosine_distance: zero-norm operand")
    denom = np.sqrt(daa) * np.sqrt(dbb)

    def bk(g):
        ga = (va * (dab / daa) - vb) * (float(g) / denom)
        gb = (vb * (dab / dbb) - va) * (float(g) / denom)
        return ga, gb

    return a.graph._record(np.asarray(1.0 - dab / denom), (a, b), bk)


def concat(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise EngineError("concat: empty tensor list")
    graph = tensors[0].graph
    for t in tensors:
        if t.graph is not graph:
            raise EngineError("concat: operands recorded on different graphs")
    vals = [t.data for t in tensors]
    try:
        y = np.concatenate(vals, axis=axis)
    except ValueError as exc:
        raise EngineError(f"concat: {exc}") from None
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)

    def bk(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(sizes)))

    return graph._record(y, tuple(tensors), bk)


def reshape(a, shape):
    va = a.data
    shape = tuple(int(s) for s in shape)
    try:
        y = va.reshape(shape)
    except ValueError:
        raise EngineError(
            f"reshape: cannot view shape {va.shape} as {shape}") from None
    return a.graph._record(y, (a,), lambda g: (g.reshape(va.shape),))


def gather_pixels(a, rows, cols):
    """Select per-position feature columns: (c, h, w) -> (len(rows), c)."""
    va = a.data
    if va.ndim != 3:
        raise EngineError(f"gather_pixels: need a (c, h, w) tensor, got {va.shape}")
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if rows.shape != cols.shape or rows.ndim != 1:
        raise EngineError("gather_pixels: rows and cols must be equal-length 1-D")
    if rows.size and (rows.min() < 0 or rows.max() >= va.shape[1]
                      or cols.min() < 0 or cols.max() >= va.shape[2]):
        raise EngineError("gather_pixels: position out of bounds")
    y = va[:, rows, cols].T.copy()

    def bk(g):
        ga = np.zeros_like(va)
        np.add.at(ga, (slice(None), rows, cols), g.T)
        return (ga,)

    return a.graph._record(y, (a,), bk)


def pairwise_cosine_distance(a, b):
    """Cosine distance between every row pair: (n, d) x (m, d) -> (n, m).

    Values are floored at 0 (the mathematical range) so row-identical pairs
    cost exactly nothing even with floating-point rounding.
    """
    va, vb = a.data, b.data
    if va.ndim != 2 or vb.ndim != 2 or va.shape[1] != vb.shape[1]:
        raise EngineError(
            f"pairwise_cosine_distance: incompatible shapes {va.shape} and {vb.shape}")
    if va.shape[0] == 0 or vb.shape[0] == 0:
        raise EngineError("pairwise_cosine_distance: empty feature set")
    na = np.sqrt((va * va).sum(axis=1))
    nb = np.sqrt((vb * vb).sum(axis=1))
    if na.min() < 1e-12 or nb.min() < 1e-12:
        raise EngineError("pairwise_cosine_distance: zero-norm feature row")
    dots = va @ vb.T
    denom = na[:, None] * nb[None, :]
    raw = 1.0 - dots / denom
    y = np.maximum(raw, 0.0)
    mask = raw > 0.0

    def bk(g):
        w = np.where(mask, g, 0.0) / denom
        ga = va * ((w * dots).sum(axis=1) / (na * na))[:, None] - w @ vb
        gb = vb * ((w * dots).sum(axis=0) / (nb * nb))[:, None] - w.T @ va
        return ga, gb

    return a.graph._record(y, (a, b), bk)


def reduce_min(a, axis):
    """Minimum along one axis of a 2-D tensor; gradient goes to the
    first minimizer per slice (ties are excluded from gradient checks)."""
    va = a.data
    if va.ndim != 2 or axis not in (0, 1):
        raise EngineError(f"reduce_min: need a 2-D tensor and axis 0/1, got {va.shape}")
    idx = va.argmin(axis=axis)
    y = va.min(axis=axis)

    def bk(g):
        ga = np.zeros_like(va)
        if axis == 1:
            ga[np.arange(va.shape[0]), idx] = g
        else:
            ga[idx, np.arange(va.shape[1])] = g
        return (ga,)

    return a.graph._record(y, (a,), bk)


def maximum(a, b):
    """max of two scalars; gradient follows the larger (ties go to ``a``)."""
    a, b = _pair(a, b, "maximum")
    va, vb = a.data, b.data
    if va.shape != () or vb.shape != ():
        raise EngineError(
            f"maximum: need scalars, got shapes {va.shape} and {vb.shape}")
    first = bool(va >= vb)

    def bk(g):
        return (g, None) if first else (None, g)

    return a.graph._record(np.asarray(np.maximum(va, vb)), (a, b), bk)


# ---------------------------------------------------------------------------
# finite-difference harness


class GradCheckReport:
    """Per-element comparison of reverse-mode vs central finite differences."""

    def __init__(self, max_rel_error, worst_index, n_checked, tolerance):
        self.max_rel_error = max_rel_error
        self.worst_index = worst_index
        self.n_checked = n_checked
        self.tolerance = tolerance

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance

    def __repr__(self):
        status = "ok" if self.passed else "FAIL"
        return (f"GradCheckReport({status}, max_rel_error={self.max_rel_error:.3e}, "
                f"worst_index={self.worst_index}, n={self.n_checked})")


def check_gradients(fn, x, step=1e-5, tolerance=1e-4, exclude=None):
    """Compare reverse-mode gradients of ``fn`` against central differences.

    ``fn`` maps a Tensor to a scalar Tensor, ``x`` is the ndarray input.
    Relative error uses a unit floor: |a - n| / max(1, |a|, |n|), which is
    the numerically meaningful scale for O(step^2) truncation noise.
    ``exclude`` is an optional boolean mask of elements to skip (e.g. clamp
    boundaries or sampling-grid integer crossings).
    """
    x = np.asarray(x, dtype=np.float64)
    g = Graph()
    xt = g.tensor(x)
    y = fn(xt)
    if y.data.shape != ():
        raise EngineError(f"check_gradients: fn returned shape {y.data.shape}")
    g.backward(y)
    analytic = xt.grad
    if analytic is None:
        analytic = np.zeros_like(x)

    def value_at(arr):
        graph = Graph()
        return float(fn(graph.tensor(arr)).data)

    max_rel = 0.0
    worst = None
    n_checked = 0
    flat_exclude = None if exclude is None else np.asarray(exclude, bool).ravel()
    xf = x.ravel()
    af = np.asarray(analytic, dtype=np.float64).ravel()
    for i in range(xf.size):
        if flat_exclude is not None and flat_exclude[i]:
            continue
        xp = xf.copy()
        xp[i] += step
        xm = xf.copy()
        xm[i] -= step
        numeric = (value_at(xp.reshape(x.shape)) - value_at(xm.reshape(x.shape))) / (2 * step)
        rel = abs(af[i] - numeric) / max(1.0, abs(af[i]), abs(numeric))
        n_checked += 1
        if rel > max_rel:
            max_rel = rel
            worst = np.unravel_index(i, x.shape) if x.shape else ()
    return GradCheckReport(max_rel, worst, n_checked, tolerance)
