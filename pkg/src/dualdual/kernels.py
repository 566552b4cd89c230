"""Convolution kernels used by the autodiff engine.

Every kernel exists twice: a numba ``@njit`` version (im2col/col2im loops
feeding one BLAS ``np.dot``) and a pure-numpy version built from strided
slices and one ``tensordot`` per kernel tap.  The numba path is used
unless ``DUALDUAL_PURE_NUMPY=1`` is set in the environment (or numba cannot
be imported).  Both paths are deterministic; they differ only in summation
order, so results agree to ~1e-13 rather than bit-for-bit.

Layouts follow the usual NCHW convention:

    x  : (N, C_in, H, W)
    w  : (C_out, C_in, kh, kw)
    y  : (N, C_out, Ho, Wo),  Ho = (H + 2p - kh) // s + 1
"""
import os

import numpy as np

try:
    import numba as nb
    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and os.environ.get("DUALDUAL_PURE_NUMPY", "").lower() not in ("1", "true", "yes")


def conv_out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


# ---------------------------------------------------------------------------
# numpy path


def _np_conv2d_forward(x, w, stride, pad):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho = conv_out_size(h, kh, stride, pad)
    wo = conv_out_size(wd, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    out = np.zeros((o, n, ho, wo), dtype=np.result_type(x, w))
    for ki in range(kh):
        for kj in range(kw):
            patch = xp[:, :, ki:ki + stride * (ho - 1) + 1:stride, kj:kj + stride * (wo - 1) + 1:stride]
            out += np.tensordot(w[:, :, ki, kj], patch, axes=([1], [1]))
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3))


def _np_conv2d_backward_input(gy, w, x_shape, stride, pad):
    n, c, h, wd = x_shape
    _, _, kh, kw = w.shape
    ho, wo = gy.shape[2], gy.shape[3]
    gxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=np.result_type(gy, w))
    for ki in range(kh):
        for kj in range(kw):
            contrib = np.tensordot(gy, w[:, :, ki, kj], axes=([1], [0]))  # (n, ho, wo, c)
            gxp[:, :, ki:ki + stride * (ho - 1) + 1:stride, kj:kj + stride * (wo - 1) + 1:stride] += \
                contrib.transpose(0, 3, 1, 2)
    return np.ascontiguousarray(gxp[:, :, pad:pad + h, pad:pad + wd])


def _np_conv2d_backward_weight(x, gy, w_shape, stride, pad):
    o, c, kh, kw = w_shape
    ho, wo = gy.shape[2], gy.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    gw = np.zeros(w_shape, dtype=np.result_type(x, gy))
    for ki in range(kh):
        for kj in range(kw):
            patch = xp[:, :, ki:ki + stride * (ho - 1) + 1:stride, kj:kj + stride * (wo - 1) + 1:stride]
            gw[:, :, ki, kj] = np.tensordot(gy, patch, axes=([0, 2, 3], [0, 2, 3]))
    return gw


# ---------------------------------------------------------------------------
# numba path

if HAS_NUMBA:

    @nb.njit(cache=True)
    def _im2col(x, kh, kw, stride, pad, ho, wo):
        # rows: (b, i, j), cols: (c, ki, kj); out-of-bounds taps stay zero
        n, c, h, wd = x.shape
        cols = np.zeros((n * ho * wo, c * kh * kw), dtype=x.dtype)
        for b in range(n):
            for i in range(ho):
                for j in range(wo):
                    r = (b * ho + i) * wo + j
                    for ic in range(c):
                        for ki in range(kh):
                            hi_ = i * stride + ki - pad
                            if hi_ < 0 or hi_ >= h:
                                continue
                            for kj in range(kw):
                                wj = j * stride + kj - pad
                                if wj < 0 or wj >= wd:
                                    continue
                                cols[r, (ic * kh + ki) * kw + kj] = x[b, ic, hi_, wj]
        return cols

    @nb.njit(cache=True)
    def _col2im(cols, n, c, h, wd, kh, kw, stride, pad, ho, wo):
        gx = np.zeros((n, c, h, wd), dtype=cols.dtype)
        for b in range(n):
            for i in range(ho):
                for j in range(wo):
                    r = (b * ho + i) * wo + j
                    for ic in range(c):
                        for ki in range(kh):
                            hi_ = i * stride + ki - pad
                            if hi_ < 0 or hi_ >= h:
                                continue
                            for kj in range(kw):
                                wj = j * stride + kj - pad
                                if wj < 0 or wj >= wd:
                                    continue
                                gx[b, ic, hi_, wj] += cols[r, (ic * kh + ki) * kw + kj]
        return gx

    @nb.njit(cache=True)
    def _nb_conv2d_forward(x, w, stride, pad):
        n, c, h, wd = x.shape
        o, _, kh, kw = w.shape
        ho = (h + 2 * pad - kh) // stride + 1
        wo = (wd + 2 * pad - kw) // stride + 1
        cols = _im2col(x, kh, kw, stride, pad, ho, wo)
        y = np.dot(cols, w.reshape(o, c * kh * kw).T)  # (n*ho*wo, o)
        return np.ascontiguousarray(y.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))

    @nb.njit(cache=True)
    def _nb_conv2d_backward_input(gy, w, n, c, h, wd, stride, pad):
        o, _, kh, kw = w.shape
        ho, wo = gy.shape[2], gy.shape[3]
        gy_mat = np.ascontiguousarray(gy.transpose(0, 2, 3, 1)).reshape(n * ho * wo, o)
        gcols = np.dot(gy_mat, w.reshape(o, c * kh * kw))
        return _col2im(gcols, n, c, h, wd, kh, kw, stride, pad, ho, wo)

    @nb.njit(cache=True)
    def _nb_conv2d_backward_weight(x, gy, o, kh, kw, stride, pad):
        n, c, h, wd = x.shape
        ho, wo = gy.shape[2], gy.shape[3]
        cols = _im2col(x, kh, kw, stride, pad, ho, wo)
        gy_mat = np.ascontiguousarray(gy.transpose(0, 2, 3, 1)).reshape(n * ho * wo, o)
        return np.dot(gy_mat.T, cols).reshape(o, c, kh, kw)


# ---------------------------------------------------------------------------
# dispatch


def conv2d_forward(x, w, stride=1, pad=0, use_numba=None):
    if use_numba is None:
        use_numba = USE_NUMBA
    if use_numba:
        return _nb_conv2d_forward(np.ascontiguousarray(x), np.ascontiguousarray(w), stride, pad)
    return _np_conv2d_forward(x, w, stride, pad)


def conv2d_backward_input(gy, w, x_shape, stride=1, pad=0, use_numba=None):
    if use_numba is None:
        use_numba = USE_NUMBA
    if use_numba:
        n, c, h, wd = x_shape
        return _nb_conv2d_backward_input(np.ascontiguousarray(gy), np.ascontiguousarray(w), n, c, h, wd, stride, pad)
    return _np_conv2d_backward_input(gy, w, x_shape, stride, pad)


def conv2d_backward_weight(x, gy, w_shape, stride=1, pad=0, use_numba=None):
    if use_numba is None:
        use_numba = USE_NUMBA
    if use_numba:
        o, _, kh, kw = w_shape
        return _nb_conv2d_backward_weight(np.ascontiguousarray(x), np.ascontiguousarray(gy), o, kh, kw, stride, pad)
    return _np_conv2d_backward_weight(x, gy, w_shape, stride, pad)
