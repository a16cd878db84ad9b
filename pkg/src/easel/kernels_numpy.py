"""Pure-NumPy implementations of the hot rendering kernels.

These are the reference semantics; ``easel._fastkernels`` implements the same
signatures in Cython and ``easel.kernels`` picks one backend at import time.
All arrays are float64 and C-contiguous.
"""

import numpy as np

BACKEND = "numpy"


def _windows(x, kh, kw):
    return np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))


def conv2d_forward(x, k):
    """Correlate ``x`` (n, ci, h, w) with ``k`` (co, ci, kh, kw).

    Stride 1, zero padding of kh//2 / kw//2 so odd kernels preserve the
    spatial size.
    """
    n, ci, h, w = x.shape
    kh, kw = k.shape[2], k.shape[3]
    ph, pw = kh // 2, kw // 2
    xp = np.zeros((n, ci, h + 2 * ph, w + 2 * pw))
    xp[:, :, ph:ph + h, pw:pw + w] = x
    return np.einsum("nchwij,ocij->nohw", _windows(xp, kh, kw), k, optimize=True)


def conv2d_backward(x, k, gout):
    """Gradients of conv2d_forward w.r.t. input and kernel."""
    n, ci, h, w = x.shape
    kh, kw = k.shape[2], k.shape[3]
    ph, pw = kh // 2, kw // 2
    xp = np.zeros((n, ci, h + 2 * ph, w + 2 * pw))
    xp[:, :, ph:ph + h, pw:pw + w] = x
    gk = np.einsum("nchwij,nohw->ocij", _windows(xp, kh, kw), gout, optimize=True)

    # Input gradient: full correlation of gout with the flipped kernel.
    qh, qw = kh - 1 - ph, kw - 1 - pw
    gp = np.zeros((n, k.shape[0], h + kh - 1, w + kw - 1))
    gp[:, :, qh:qh + h, qw:qw + w] = gout
    kf = k[:, :, ::-1, ::-1]
    gx = np.einsum("nohwij,ocij->nchw", _windows(gp, kh, kw), kf, optimize=True)
    return gx, gk


def affine_sample_forward(img, theta, out_h, out_w):
    """Bilinearly sample ``img`` at affine-mapped output coordinates.

    For output pixel (i, j) the source location is
      row = theta[0]*i + theta[1]*j + theta[2]
      col = theta[3]*i + theta[4]*j + theta[5]
    Out-of-bounds taps read as zero.
    """
    hi, wi = img.shape
    ii = np.arange(out_h, dtype=float)[:, None]
    jj = np.arange(out_w, dtype=float)[None, :]
    sr = theta[0] * ii + theta[1] * jj + theta[2]
    sc = theta[3] * ii + theta[4] * jj + theta[5]
    r0 = np.floor(sr)
    c0 = np.floor(sc)
    dr = sr - r0
    dc = sc - c0
    r0 = r0.astype(np.int64)
    c0 = c0.astype(np.int64)

    out = np.zeros((out_h, out_w))
    for rr, cc, w in (
        (r0, c0, (1 - dr) * (1 - dc)),
        (r0, c0 + 1, (1 - dr) * dc),
        (r0 + 1, c0, dr * (1 - dc)),
        (r0 + 1, c0 + 1, dr * dc),
    ):
        valid = (rr >= 0) & (rr < hi) & (cc >= 0) & (cc < wi)
        vals = img[np.clip(rr, 0, hi - 1), np.clip(cc, 0, wi - 1)]
        out += np.where(valid, w * vals, 0.0)
    return out


def affine_sample_backward(img, theta, gout):
    """Gradients of affine_sample_forward w.r.t. image and the 6 parameters."""
    hi, wi = img.shape
    out_h, out_w = gout.shape
    ii = np.arange(out_h, dtype=float)[:, None]
    jj = np.arange(out_w, dtype=float)[None, :]
    sr = theta[0] * ii + theta[1] * jj + theta[2]
    sc = theta[3] * ii + theta[4] * jj + theta[5]
    r0 = np.floor(sr)
    c0 = np.floor(sc)
    dr = sr - r0
    dc = sc - c0
    r0 = r0.astype(np.int64)
    c0 = c0.astype(np.int64)

    gimg = np.zeros((hi, wi))
    taps = []
    for rr, cc in ((r0, c0), (r0, c0 + 1), (r0 + 1, c0), (r0 + 1, c0 + 1)):
        valid = (rr >= 0) & (rr < hi) & (cc >= 0) & (cc < wi)
        vals = np.where(valid, img[np.clip(rr, 0, hi - 1), np.clip(cc, 0, wi - 1)], 0.0)
        taps.append((rr, cc, valid, vals))

    (_, _, m00, v00), (_, _, m01, v01), (_, _, m10, v10), (_, _, m11, v11) = taps
    for (rr, cc, valid, _), w in zip(
        taps,
        ((1 - dr) * (1 - dc), (1 - dr) * dc, dr * (1 - dc), dr * dc),
    ):
        np.add.at(
            gimg,
            (np.clip(rr, 0, hi - 1)[valid], np.clip(cc, 0, wi - 1)[valid]),
            (w * gout)[valid],
        )

    dval_dr = -(1 - dc) * v00 - dc * v01 + (1 - dc) * v10 + dc * v11
    dval_dc = -(1 - dr) * v00 + (1 - dr) * v01 - dr * v10 + dr * v11
    gr = gout * dval_dr
    gc = gout * dval_dc
    gtheta = np.array([
        (gr * ii).sum(), (gr * jj).sum(), gr.sum(),
        (gc * ii).sum(), (gc * jj).sum(), gc.sum(),
    ])
    return gimg, gtheta
