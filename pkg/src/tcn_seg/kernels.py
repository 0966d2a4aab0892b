"""Hot inner loops behind the layer primitives and the edit-distance metric.

Every kernel has two implementations with identical results: a vectorised
numpy version and a loop version compiled with numba. ``TCN_NUMBA=0``
selects the numpy versions for the whole process. Both sets stay importable
as ``NUMPY_KERNELS`` / ``NUMBA_KERNELS`` so they can be compared directly.

Layouts: sequences are ``(channels, frames)``; gathered columns are
``(channels, taps, frames)``.
"""
import numpy as np

from ._accel import NUMBA_AVAILABLE, USE_NUMBA, njit

# --------------------------------------------------------------------------
# numpy implementations


def _im2col_np(xp, offsets, pad_left, frames):
    cols = np.empty((xp.shape[0], len(offsets), frames), dtype=xp.dtype)
    for k, off in enumerate(offsets):
        start = pad_left + off
        cols[:, k, :] = xp[:, start : start + frames]
    return cols


def _col2im_np(dcols, offsets, pad_left, padded_frames):
    channels, _, frames = dcols.shape
    dxp = np.zeros((channels, padded_frames), dtype=dcols.dtype)
    for k, off in enumerate(offsets):
        start = pad_left + off
        dxp[:, start : start + frames] += dcols[:, k, :]
    return dxp


def _pool_windows(x, causal):
    channels, frames = x.shape
    pooled = (frames + 1) // 2
    fill = np.full((channels, 1), -np.inf, dtype=x.dtype)
    if causal:
        # windows (2p-1, 2p): a pooled unit never sees a frame later than 2p
        xp = np.concatenate([fill, x], axis=1)[:, : 2 * pooled]
        base = -1
    else:
        xp = x if frames % 2 == 0 else np.concatenate([x, fill], axis=1)
        base = 0
    return xp.reshape(channels, pooled, 2), base


def _maxpool_fwd_np(x, causal):
    win, base = _pool_windows(x, causal)
    pick = np.argmax(win, axis=2)
    out = np.take_along_axis(win, pick[:, :, None], axis=2)[:, :, 0]
    idx = 2 * np.arange(win.shape[1])[None, :] + base + pick
    return out, idx.astype(np.int64)


def _maxpool_bwd_np(dy, idx, frames):
    dx = np.zeros((dy.shape[0], frames), dtype=dy.dtype)
    rows = np.broadcast_to(np.arange(dy.shape[0])[:, None], idx.shape)
    np.add.at(dx, (rows, idx), dy)
    return dx


def _nrelu_fwd_np(x, eps):
    r = np.maximum(x, 0.0)
    return r / (r.max(axis=0, keepdims=True) + eps)


def _nrelu_bwd_np(dy, x, eps):
    r = np.maximum(x, 0.0)
    top = np.argmax(r, axis=0)
    denom = r[top, np.arange(r.shape[1])] + eps
    dr = dy / denom
    dmax = -(dy * r).sum(axis=0) / denom**2
    dr[top, np.arange(r.shape[1])] += dmax
    return np.where(x > 0, dr, 0.0).astype(x.dtype, copy=False)


def _levenshtein_np(a, b):
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        return max(n, m)
    cols = np.arange(m + 1)
    prev = cols.copy()
    for i in range(1, n + 1):
        sub = prev[:-1] + (b != a[i - 1])
        best = np.empty(m + 1, dtype=np.int64)
        best[0] = i
        best[1:] = np.minimum(prev[1:] + 1, sub)
        # insertion chain: cur[j] = min_k<=j best[k] + (j - k)
        prev = np.minimum.accumulate(best - cols) + cols
    return int(prev[m])


def _adam_np(p, g, m, v, lr, b1, nb1, b2, nb2, correct1, correct2, eps):
    m *= b1
    m += nb1 * g
    v *= b2
    v += nb2 * (g * g)
    p -= lr * (m / correct1) / (np.sqrt(v / correct2) + eps)


# --------------------------------------------------------------------------
# numba implementations


@njit
def _im2col_nb(xp, offsets, pad_left, frames):
    channels = xp.shape[0]
    taps = offsets.shape[0]
    cols = np.empty((channels, taps, frames), dtype=xp.dtype)
    for c in range(channels):
        for k in range(taps):
            start = pad_left + offsets[k]
            for t in range(frames):
                cols[c, k, t] = xp[c, start + t]
    return cols


@njit
def _col2im_nb(dcols, offsets, pad_left, padded_frames):
    channels, taps, frames = dcols.shape
    dxp = np.zeros((channels, padded_frames), dtype=dcols.dtype)
    for c in range(channels):
        for k in range(taps):
            start = pad_left + offsets[k]
            for t in range(frames):
                dxp[c, start + t] += dcols[c, k, t]
    return dxp


@njit
def _maxpool_fwd_nb(x, causal):
    channels, frames = x.shape
    pooled = (frames + 1) // 2
    out = np.empty((channels, pooled), dtype=x.dtype)
    idx = np.empty((channels, pooled), dtype=np.int64)
    base = -1 if causal else 0
    for c in range(channels):
        for p in range(pooled):
            first = 2 * p + base
            best = -np.inf
            arg = -1
            for t in range(first, first + 2):
                if 0 <= t < frames and (arg < 0 or x[c, t] > best):
                    best = x[c, t]
                    arg = t
            out[c, p] = best
            idx[c, p] = arg
    return out, idx


@njit
def _maxpool_bwd_nb(dy, idx, frames):
    channels, pooled = dy.shape
    dx = np.zeros((channels, frames), dtype=dy.dtype)
    for c in range(channels):
        for p in range(pooled):
            dx[c, idx[c, p]] += dy[c, p]
    return dx


@njit
def _frame_max(x):
    # channel-outer so the (C, T) array is read row by row
    channels, frames = x.shape
    top = np.zeros(frames, dtype=x.dtype)
    arg = np.zeros(frames, dtype=np.int64)
    for c in range(channels):
        for t in range(frames):
            if x[c, t] > top[t]:
                top[t] = x[c, t]
                arg[t] = c
    return top, arg


@njit
def _nrelu_fwd_nb(x, eps):
    channels, frames = x.shape
    out = np.maximum(x, 0)
    top = np.zeros(frames, dtype=x.dtype)
    for c in range(channels):
        for t in range(frames):
            top[t] = max(top[t], out[c, t])
    denom = top + eps
    for c in range(channels):
        for t in range(frames):
            out[c, t] /= denom[t]
    return out


@njit
def _nrelu_bwd_nb(dy, x, eps):
    channels, frames = x.shape
    dx = np.zeros_like(x)
    top, arg = _frame_max(x)
    denom = top + eps
    dmax = np.zeros(frames, dtype=x.dtype)
    for c in range(channels):
        for t in range(frames):
            if x[c, t] > 0:
                dmax[t] -= dy[c, t] * x[c, t]
                dx[c, t] = dy[c, t] / denom[t]
    for t in range(frames):
        if top[t] > 0:
            dx[arg[t], t] += dmax[t] / (denom[t] * denom[t])
    return dx


@njit
def _levenshtein_nb(a, b):
    n = a.shape[0]
    m = b.shape[0]
    if n == 0 or m == 0:
        return max(n, m)
    prev = np.arange(m + 1)
    cur = np.empty(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        cur[0] = i
        for j in range(1, m + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            best = prev[j - 1] + cost
            if prev[j] + 1 < best:
                best = prev[j] + 1
            if cur[j - 1] + 1 < best:
                best = cur[j - 1] + 1
            cur[j] = best
        prev, cur = cur, prev
    return prev[m]


@njit
def _adam_nb(p, g, m, v, lr, b1, nb1, b2, nb2, correct1, correct2, eps):
    pf = p.reshape(-1)
    gf = g.reshape(-1)
    mf = m.reshape(-1)
    vf = v.reshape(-1)
    for i in range(pf.shape[0]):
        mf[i] = b1 * mf[i] + nb1 * gf[i]
        vf[i] = b2 * vf[i] + nb2 * (gf[i] * gf[i])
        pf[i] -= lr * (mf[i] / correct1) / (np.sqrt(vf[i] / correct2) + eps)


# --------------------------------------------------------------------------
# dispatch


class _Kernels:
    def __init__(self, name, **funcs):
        self.name = name
        self.__dict__.update(funcs)


NUMPY_KERNELS = _Kernels(
    "numpy",
    im2col=_im2col_np,
    col2im=_col2im_np,
    maxpool_fwd=_maxpool_fwd_np,
    maxpool_bwd=_maxpool_bwd_np,
    nrelu_fwd=_nrelu_fwd_np,
    nrelu_bwd=_nrelu_bwd_np,
    levenshtein=_levenshtein_np,
    adam=_adam_np,
)

NUMBA_KERNELS = (
    _Kernels(
        "numba",
        im2col=_im2col_nb,
        col2im=_col2im_nb,
        maxpool_fwd=_maxpool_fwd_nb,
        maxpool_bwd=_maxpool_bwd_nb,
        nrelu_fwd=_nrelu_fwd_nb,
        nrelu_bwd=_nrelu_bwd_nb,
        levenshtein=_levenshtein_nb,
        adam=_adam_nb,
    )
    if NUMBA_AVAILABLE
    else None
)

ACTIVE = NUMBA_KERNELS if USE_NUMBA else NUMPY_KERNELS
BACKEND = ACTIVE.name


def im2col(xp, offsets, pad_left, frames):
    return ACTIVE.im2col(xp, np.asarray(offsets, dtype=np.int64), pad_left, frames)


def col2im(dcols, offsets, pad_left, padded_frames):
    return ACTIVE.col2im(
        np.ascontiguousarray(dcols), np.asarray(offsets, dtype=np.int64), pad_left, padded_frames
    )


def maxpool_fwd(x, causal):
    return ACTIVE.maxpool_fwd(np.ascontiguousarray(x), bool(causal))


def maxpool_bwd(dy, idx, frames):
    return ACTIVE.maxpool_bwd(np.ascontiguousarray(dy), idx, frames)


def nrelu_fwd(x, eps):
    x = np.ascontiguousarray(x)
    return ACTIVE.nrelu_fwd(x, x.dtype.type(eps))


def nrelu_bwd(dy, x, eps):
    x = np.ascontiguousarray(x)
    return ACTIVE.nrelu_bwd(np.ascontiguousarray(dy, dtype=x.dtype), x, x.dtype.type(eps))


def levenshtein(a, b):
    """Unit-cost edit distance between two integer sequences."""
    a = np.ascontiguousarray(a, dtype=np.int64)
    b = np.ascontiguousarray(b, dtype=np.int64)
    return int(ACTIVE.levenshtein(a, b))


def adam_update(p, g, m, v, lr, b1, b2, correct1, correct2, eps):
    """In-place Adam update of one contiguous parameter array and its moments.

    Scalars are cast to the parameter dtype so both backends round identically.
    """
    f = p.dtype.type
    ACTIVE.adam(
        p,
        np.ascontiguousarray(g, dtype=p.dtype),
        m,
        v,
        f(lr),
        f(b1),
        f(1.0 - b1),
        f(b2),
        f(1.0 - b2),
        f(correct1),
        f(correct2),
        f(eps),
    )
