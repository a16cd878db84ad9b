"""Geometric and photometric calibration.

Homographies are fitted from point correspondences with the normalized
direct linear transform (Hartley normalization, singular-vector solution),
which is exact on noise-free projective data. Canvas rectification
inverse-warps a perspective view of the canvas given its four corners.
Color correction fits an affine RGB map to color-checker measurements by
least squares. All operations are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Homography:
    """3x3 projective transform, normalized so H[2,2] == 1 when nonzero."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"Homography: need a 3x3 matrix, got {m.shape}")
        if abs(m[2, 2]) > 1e-12:
            m = m / m[2, 2]
        cond = np.linalg.cond(m)
        if not np.isfinite(cond) or cond > 1e12:
            raise ValueError(f"Homography: matrix is singular (cond={cond:.2e})")
        object.__setattr__(self, "matrix", m)

    def inverse(self):
        return Homography(np.linalg.inv(self.matrix))

    def __call__(self, point):
        return apply_homography(self, point)


def _normalization(points):
    """Similarity transform moving the centroid to the origin with mean
    distance sqrt(2)."""
    centroid = points.mean(axis=0)
    dist = np.sqrt(((points - centroid) ** 2).sum(axis=1)).mean()
    if dist < 1e-12:
        raise ValueError("fit_homography: coincident points")
    s = np.sqrt(2.0) / dist
    return np.array([[s, 0, -s * centroid[0]],
                     [0, s, -s * centroid[1]],
                     [0, 0, 1]])


def fit_homography(src, dst):
    """Normalized DLT from >= 4 correspondences.

    ``src`` and ``dst`` are (n, 2) arrays (or sequences of pairs). Exact
    for noise-free projective data; degenerate configurations (coincident
    or collinear points) are rejected.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.ndim != 2 or src.shape[1] != 2 or src.shape != dst.shape:
        raise ValueError(
            f"fit_homography: need matching (n, 2) arrays, got {src.shape} "
            f"and {dst.shape}")
    if src.shape[0] < 4:
        raise ValueError(
            f"fit_homography: need at least 4 correspondences, got {src.shape[0]}")

    t_src = _normalization(src)
    t_dst = _normalization(dst)
    ones = np.ones((src.shape[0], 1))
    sn = (t_src @ np.hstack([src, ones]).T).T
    dn = (t_dst @ np.hstack([dst, ones]).T).T

    rows = []
    for (x, y, _), (u, v, _) in zip(sn, dn):
        rows.append([0, 0, 0, -x, -y, -1, v * x, v * y, v])
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y, -u])
    a = np.asarray(rows)
    _, sigma, vt = np.linalg.svd(a)
    # rank < 8 means the correspondences do not determine a homography
    if sigma[6] < 1e-9 * sigma[0]:
        raise ValueError("fit_homography: degenerate configuration "
                         "(collinear or coincident correspondences)")
    h = vt[-1].reshape(3, 3)
    return Homography(np.linalg.inv(t_dst) @ h @ t_src)


def apply_homography(h: Homography, point):
    """Projective application with division; rejects points mapped to the
    line at infinity."""
    x, y = float(point[0]), float(point[1])
    u, v, w = h.matrix @ np.array([x, y, 1.0])
    if abs(w) < 1e-12:
        raise ValueError(f"apply_homography: point {point} maps to infinity")
    return np.array([u / w, v / w])


def _bilinear_sample(image, rows, cols):
    h, w = image.shape[:2]
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    dr = (rows - r0)[..., None]
    dc = (cols - c0)[..., None]

    def tap(rr, cc):
        valid = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        vals = image[np.clip(rr, 0, h - 1), np.clip(cc, 0, w - 1)]
        return np.where(valid[..., None], vals, 0.0)

    return ((1 - dr) * (1 - dc) * tap(r0, c0)
            + (1 - dr) * dc * tap(r0, c0 + 1)
            + dr * (1 - dc) * tap(r0 + 1, c0)
            + dr * dc * tap(r0 + 1, c0 + 1))


def rectify_canvas(image, corners, out_shape=None):
    """Crop and straighten the canvas region of ``image``.

    ``corners`` are (x, y) pixel coordinates of the canvas corners ordered
    (top-left, top-right, bottom-right, bottom-left). Fits the homography
    from the output rectangle to the corners and inverse-warps with
    bilinear sampling. ``image`` is an (h, w, 3) array; returns the same.
    """
    corners = np.asarray(corners, dtype=np.float64)
    if corners.shape != (4, 2):
        raise ValueError(f"rectify_canvas: need 4 (x, y) corners, got {corners.shape}")
    area = 0.0
    for i in range(4):
        x0, y0 = corners[i]
        x1, y1 = corners[(i + 1) % 4]
        area += x0 * y1 - x1 * y0
    if abs(area) < 1.0:
        raise ValueError("rectify_canvas: degenerate corner quadrilateral")

    if out_shape is None:
        width = int(round(max(np.linalg.norm(corners[1] - corners[0]),
                              np.linalg.norm(corners[2] - corners[3])))) + 1
        height = int(round(max(np.linalg.norm(corners[3] - corners[0]),
                               np.linalg.norm(corners[2] - corners[1])))) + 1
        out_shape = (height, width)
    out_h, out_w = out_shape

    rect = np.array([[0.0, 0.0], [out_w - 1.0, 0.0],
                     [out_w - 1.0, out_h - 1.0], [0.0, out_h - 1.0]])
    h = fit_homography(rect, corners)
    jj, ii = np.meshgrid(np.arange(out_w, dtype=float),
                         np.arange(out_h, dtype=float))
    pts = np.stack([jj.ravel(), ii.ravel(), np.ones(jj.size)])
    mapped = h.matrix @ pts
    xs = (mapped[0] / mapped[2]).reshape(out_h, out_w)
    ys = (mapped[1] / mapped[2]).reshape(out_h, out_w)
    return _bilinear_sample(np.asarray(image, dtype=np.float64), ys, xs)


@dataclass(frozen=True)
class ColorTransform:
    """Affine RGB map: linear (3, 3) part plus offset (3,); application
    clamps to [0, 1]."""

    linear: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        lin = np.asarray(self.linear, dtype=np.float64)
        off = np.asarray(self.offset, dtype=np.float64)
        if lin.shape != (3, 3) or off.shape != (3,):
            raise ValueError(
                f"ColorTransform: need (3, 3) and (3,), got {lin.shape}, {off.shape}")
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "offset", off)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def apply_array(self, rgb):
        out = rgb @ self.linear.T + self.offset
        return np.clip(out, 0.0, 1.0)

    def matrix_3x4(self):
        return np.hstack([self.linear, self.offset[:, None]])


def fit_color_transform(measured, reference):
    """Least-squares affine fit mapping measured RGB to reference RGB.

    Both are (n, 3) with n >= 4 (24 in the usual checker protocol).
    """
    measured = np.asarray(measured, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if measured.ndim != 2 or measured.shape[1] != 3 \
            or measured.shape != reference.shape:
        raise ValueError(
            f"fit_color_transform: need matching (n, 3) arrays, got "
            f"{measured.shape} and {reference.shape}")
    if measured.shape[0] < 4:
        raise ValueError("fit_color_transform: need at least 4 patches")
    design = np.hstack([measured, np.ones((measured.shape[0], 1))])
    if np.linalg.matrix_rank(design) < 4:
        raise ValueError("fit_color_transform: rank-deficient measurements "
                         "(patches lie in a color subspace)")
    coef, *_ = np.linalg.lstsq(design, reference, rcond=None)
    return ColorTransform(coef[:3].T, coef[3])


def apply_color_transform(transform: ColorTransform, canvas):
    """Per-pixel affine color map over a Canvas, clamped to [0, 1]."""
    return canvas.with_data(transform.apply_array(canvas.data))


# ---------------------------------------------------------------------------
# file formats


def save_correspondences(path, src, dst):
    with open(path, "w", encoding="ascii") as f:
        for (sx, sy), (dx, dy) in zip(src, dst):
            f.write(" ".join(repr(float(v)) for v in (sx, sy, dx, dy)) + "\n")


def load_correspondences(path):
    src, dst = [], []
    with open(path, encoding="ascii") as f:
        for line in f:
            if not line.strip() or line.startswith("#"):
                continue
            vals = [float(tok) for tok in line.split()]
            if len(vals) != 4:
                raise ValueError(f"{path}: correspondence lines need 4 values")
            src.append(vals[0:2])
            dst.append(vals[2:4])
    return np.asarray(src), np.asarray(dst)


def save_checker(path, measured, reference):
    with open(path, "w", encoding="ascii") as f:
        for m, r in zip(measured, reference):
            f.write(" ".join(repr(float(v)) for v in (*m, *r)) + "\n")


def load_checker(path):
    measured, reference = [], []
    with open(path, encoding="ascii") as f:
        for line in f:
            if not line.strip() or line.startswith("#"):
                continue
            vals = [float(tok) for tok in line.split()]
            if len(vals) != 6:
                raise ValueError(f"{path}: checker lines need 6 values")
            measured.append(vals[0:3])
            reference.append(vals[3:6])
    return np.asarray(measured), np.asarray(reference)


def save_homography(path, h: Homography):
    with open(path, "w", encoding="ascii") as f:
        f.write(" ".join(repr(float(v)) for v in h.matrix.ravel()) + "\n")


def load_homography(path):
    with open(path, encoding="ascii") as f:
        vals = [float(tok) for tok in f.read().split()]
    if len(vals) != 9:
        raise ValueError(f"{path}: homography files carry 9 values, found {len(vals)}")
    return Homography(np.asarray(vals).reshape(3, 3))


def save_color_transform(path, t: ColorTransform):
    with open(path, "w", encoding="ascii") as f:
        f.write(" ".join(repr(float(v)) for v in t.matrix_3x4().ravel()) + "\n")


def load_color_transform(path):
    with open(path, encoding="ascii") as f:
        vals = [float(tok) for tok in f.read().split()]
    if len(vals) != 12:
        raise ValueError(f"{path}: color transform files carry 12 values, "
                         f"found {len(vals)}")
    m = np.asarray(vals).reshape(3, 4)
    return ColorTransform(m[:, :3], m[:, 3])
