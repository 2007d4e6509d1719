"""Hot numeric kernels, JIT-compiled with numba when available.

Every kernel has a pure-numpy fallback with identical semantics; numba is
strictly optional (no fastmath, so results are IEEE-reproducible either
way within one environment).
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised via the _np variants
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


def im2col_np(x: np.ndarray, ksz: int, stride: int) -> np.ndarray:
    """(N, Cin, L) -> (N*Lp, Cin*ksz) patch matrix for a valid conv."""
    n, cin, length = x.shape
    lp = (length - ksz) // stride + 1
    view = np.lib.stride_tricks.sliding_window_view(x, ksz, axis=2)[:, :, ::stride]
    return np.ascontiguousarray(view.transpose(0, 2, 1, 3)).reshape(n * lp, cin * ksz)


@njit(cache=True)
def _im2col_nb(x, col, ksz, stride):
    n, cin, length = x.shape
    lp = (length - ksz) // stride + 1
    for b in range(n):
        for t in range(lp):
            row = b * lp + t
            base = t * stride
            for c in range(cin):
                off = c * ksz
                for k in range(ksz):
                    col[row, off + k] = x[b, c, base + k]


def im2col(x: np.ndarray, ksz: int, stride: int) -> np.ndarray:
    if not NUMBA_AVAILABLE:
        return im2col_np(x, ksz, stride)
    n, cin, length = x.shape
    lp = (length - ksz) // stride + 1
    col = np.empty((n * lp, cin * ksz))
    _im2col_nb(x, col, ksz, stride)
    return col


def col2im_np(gcol: np.ndarray, n: int, cin: int, length: int, ksz: int, stride: int) -> np.ndarray:
    """Adjoint of im2col: scatter-add (N*Lp, Cin*ksz) back to (N, Cin, L)."""
    lp = (length - ksz) // stride + 1
    g = gcol.reshape(n, lp, cin, ksz).transpose(0, 2, 1, 3)
    gx = np.zeros((n, cin, length))
    for k in range(ksz):
        gx[:, :, k : k + stride * lp : stride] += g[:, :, :, k]
    return gx


@njit(cache=True)
def _col2im_nb(gcol, gx, ksz, stride):
    n, cin, length = gx.shape
    lp = (length - ksz) // stride + 1
    for b in range(n):
        for t in range(lp):
            row = b * lp + t
            base = t * stride
            for c in range(cin):
                off = c * ksz
                for k in range(ksz):
                    gx[b, c, base + k] += gcol[row, off + k]


def col2im(gcol: np.ndarray, n: int, cin: int, length: int, ksz: int, stride: int) -> np.ndarray:
    if not NUMBA_AVAILABLE:
        return col2im_np(gcol, n, cin, length, ksz, stride)
    gx = np.zeros((n, cin, length))
    _col2im_nb(gcol, gx, ksz, stride)
    return gx


def ncl_to_rows_np(g: np.ndarray) -> np.ndarray:
    """(N, C, Lp) -> (N*Lp, C), i.e. transpose each batch item."""
    n, c, lp = g.shape
    return np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(n * lp, c)


@njit(cache=True)
def _ncl_to_rows_nb(g, out):
    n, c, lp = g.shape
    for b in range(n):
        for t in range(lp):
            row = b * lp + t
            for o in range(c):
                out[row, o] = g[b, o, t]


def ncl_to_rows(g: np.ndarray) -> np.ndarray:
    if not NUMBA_AVAILABLE:
        return ncl_to_rows_np(g)
    n, c, lp = g.shape
    out = np.empty((n * lp, c))
    _ncl_to_rows_nb(g, out)
    return out


def col2im_rows_np(gcol: np.ndarray, n: int, cin: int, length: int, ksz: int, stride: int) -> np.ndarray:
    """Like col2im but emits the rows layout (N*L, Cin)."""
    return (
        col2im_np(gcol, n, cin, length, ksz, stride)
        .transpose(0, 2, 1)
        .reshape(n * length, cin)
    )


@njit(cache=True)
def _col2im_rows_nb(gcol, gx, n, length, ksz, stride):
    rows, ck = gcol.shape
    cin = ck // ksz
    lp = (length - ksz) // stride + 1
    for b in range(n):
        for t in range(lp):
            row = b * lp + t
            base = b * length + t * stride
            for c in range(cin):
                off = c * ksz
                for k in range(ksz):
                    gx[base + k, c] += gcol[row, off + k]


def col2im_rows(gcol: np.ndarray, n: int, cin: int, length: int, ksz: int, stride: int) -> np.ndarray:
    if not NUMBA_AVAILABLE:
        return col2im_rows_np(gcol, n, cin, length, ksz, stride)
    gx = np.zeros((n * length, cin))
    _col2im_rows_nb(gcol, gx, n, length, ksz, stride)
    return gx


def mask_nonpositive_np(g: np.ndarray, act: np.ndarray):
    g[act <= 0.0] = 0.0


@njit(cache=True)
def _mask_nonpositive_nb(g, act):
    for i in range(g.size):
        if act[i] <= 0.0:
            g[i] = 0.0


def mask_nonpositive(g: np.ndarray, act: np.ndarray):
    """In place: zero g wherever act <= 0 (both contiguous, same shape)."""
    if not NUMBA_AVAILABLE:
        mask_nonpositive_np(g, act)
        return
    _mask_nonpositive_nb(g.reshape(-1), act.reshape(-1))


def relu_bwd_np(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    return g * (x > 0.0)


@njit(cache=True)
def _relu_bwd_nb(xf, gf, out):
    for i in range(xf.size):
        out[i] = gf[i] if xf[i] > 0.0 else 0.0


def relu_bwd(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """g where x > 0 else 0; x and g may be arbitrarily strided."""
    if not NUMBA_AVAILABLE:
        return relu_bwd_np(x, g)
    xf = np.ascontiguousarray(x).reshape(-1)
    gf = np.ascontiguousarray(g).reshape(-1)
    out = np.empty_like(gf)
    _relu_bwd_nb(xf, gf, out)
    return out.reshape(g.shape)


def adam_update_np(p, g, m, v, b1, b2, c1, c2, lr, eps):
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * (g * g)
    p -= (lr / c1) * m / (np.sqrt(v / c2) + eps)


@njit(cache=True)
def _adam_update_nb(p, g, m, v, b1, b2, c1, c2, lr, eps):
    for i in range(p.size):
        gi = g[i]
        mi = b1 * m[i] + (1.0 - b1) * gi
        vi = b2 * v[i] + (1.0 - b2) * gi * gi
        m[i] = mi
        v[i] = vi
        p[i] -= (lr / c1) * mi / (np.sqrt(vi / c2) + eps)


def adam_update(p, g, m, v, b1, b2, c1, c2, lr, eps):
    """One in-place Adam update on flat or n-d arrays of equal shape."""
    if not NUMBA_AVAILABLE:
        adam_update_np(p, g, m, v, b1, b2, c1, c2, lr, eps)
        return
    gc = g if g.flags.c_contiguous else np.ascontiguousarray(g)
    _adam_update_nb(
        p.reshape(-1), gc.reshape(-1), m.reshape(-1), v.reshape(-1),
        b1, b2, c1, c2, lr, eps,
    )
