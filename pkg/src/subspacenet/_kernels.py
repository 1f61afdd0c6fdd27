"""Fused row-wise kernels for the network's hot loop.

At the matrix sizes used here (tens of rows, hundreds of columns) numpy spends
most of its time in per-call overhead, so the z-score, bias/ReLU and residual
updates are fused into single passes. Inputs are validated as finite before
they reach these kernels.
"""

import numba
import numpy as np

_FAST = {"reassoc", "contract", "arcp", "nsz"}


@numba.njit(cache=True, fastmath=_FAST)
def zscore_fwd(x, floor):
    d, n = x.shape
    y = np.empty_like(x)
    std = np.empty(d)
    for i in range(d):
        m = 0.0
        for j in range(n):
            m += x[i, j]
        m /= n
        v = 0.0
        for j in range(n):
            t = x[i, j] - m
            v += t * t
        s = np.sqrt(v / n)
        std[i] = s
        inv = 1.0 / max(s, floor)
        for j in range(n):
            y[i, j] = (x[i, j] - m) * inv
    return y, std


@numba.njit(cache=True, fastmath=_FAST)
def zscore_bwd(g, y, std, floor, out, accumulate):
    """Gradient through row standardization; writes (or adds) into ``out``."""
    d, n = g.shape
    for i in range(d):
        gm = 0.0
        gy = 0.0
        for j in range(n):
            gm += g[i, j]
            gy += g[i, j] * y[i, j]
        gm /= n
        gy = gy / n if std[i] > floor else 0.0
        inv = 1.0 / max(std[i], floor)
        if accumulate:
            for j in range(n):
                out[i, j] += (g[i, j] - gm - y[i, j] * gy) * inv
        else:
            for j in range(n):
                out[i, j] = (g[i, j] - gm - y[i, j] * gy) * inv
    return out


@numba.njit(cache=True, fastmath=_FAST)
def bias_relu(u, b):
    """``relu(u + b)`` with the bias broadcast over columns."""
    d, n = u.shape
    r = np.empty_like(u)
    for i in range(d):
        bi = b[i]
        for j in range(n):
            t = u[i, j] + bi
            r[i, j] = t if t > 0.0 else 0.0
    return r


@numba.njit(cache=True, fastmath=_FAST)
def residual_bias_relu(h, u, b):
    """Returns ``(h + relu(u + b), relu(u + b))``."""
    d, n = u.shape
    r = np.empty_like(u)
    out = np.empty_like(h)
    for i in range(d):
        bi = b[i]
        for j in range(n):
            t = u[i, j] + bi
            t = t if t > 0.0 else 0.0
            r[i, j] = t
            out[i, j] = h[i, j] + t
    return out, r


@numba.njit(cache=True, fastmath=_FAST)
def relu_grad(g, r, bias_grad):
    """Mask ``g`` by ``r > 0``; row sums of the result go to ``bias_grad``."""
    d, n = g.shape
    out = np.empty_like(g)
    for i in range(d):
        s = 0.0
        for j in range(n):
            t = g[i, j] if r[i, j] > 0.0 else 0.0
            out[i, j] = t
            s += t
        bias_grad[i] = s
    return out


@numba.njit(cache=True, fastmath=_FAST)
def pairwise_loss(z, y, cross_entropy):
    """Value and gradient of a sum over all ordered pairs of f(z_i . z_j; y_i . y_j).

    ``f`` is the squared difference ``(t - s)^2`` or, with ``cross_entropy``,
    the binary cross-entropy of ``sigmoid(s)`` against ``t``. Each unordered
    pair is visited once and counted twice.
    """
    k, n = z.shape
    c = y.shape[0]
    zt = np.ascontiguousarray(z.T)
    yt = np.ascontiguousarray(y.T)
    grad = np.zeros((n, k))
    value = 0.0
    for i in range(n):
        for j in range(i, n):
            s = 0.0
            for a in range(k):
                s += zt[i, a] * zt[j, a]
            t = 0.0
            for a in range(c):
                t += yt[i, a] * yt[j, a]
            if cross_entropy:
                e = np.exp(-abs(s))
                sp = max(s, 0.0) + np.log1p(e)  # softplus(s)
                p = 1.0 / (1.0 + e) if s >= 0.0 else e / (1.0 + e)
                v = t * (sp - s) + (1.0 - t) * sp
                w = 2.0 * (p - t)
            else:
                v = (t - s) * (t - s)
                w = -4.0 * (t - s)
            if i == j:
                value += v
                for a in range(k):
                    grad[i, a] += w * zt[i, a]
            else:
                value += 2.0 * v
                for a in range(k):
                    grad[i, a] += w * zt[j, a]
                    grad[j, a] += w * zt[i, a]
    return value, grad.T.copy()


@numba.njit(cache=True, fastmath=_FAST)
def hartigan_refine(points, labels, k, max_passes):
    """Single-point moves that strictly lower the K-means objective.

    A point leaves cluster ``a`` for ``b`` when the exact change in the
    objective, ``n_b/(n_b+1) |x-c_b|^2 - n_a/(n_a-1) |x-c_a|^2``, is negative.
    Centroids are updated incrementally after every move. Returns the number
    of moves made.
    """
    n, d = points.shape
    sizes = np.zeros(k)
    centers = np.zeros((k, d))
    for i in range(n):
        sizes[labels[i]] += 1.0
        for c in range(d):
            centers[labels[i], c] += points[i, c]
    for j in range(k):
        for c in range(d):
            centers[j, c] /= sizes[j]
    moves = 0
    for _ in range(max_passes):
        moved = False
        for i in range(n):
            a = labels[i]
            if sizes[a] <= 1.0:
                continue
            da = 0.0
            for c in range(d):
                t = points[i, c] - centers[a, c]
                da += t * t
            leave = sizes[a] / (sizes[a] - 1.0) * da
            best, best_cost = a, leave
            for j in range(k):
                if j == a:
                    continue
                dj = 0.0
                for c in range(d):
                    t = points[i, c] - centers[j, c]
                    dj += t * t
                cost = sizes[j] / (sizes[j] + 1.0) * dj
                # demand a clear gain so rounding noise cannot cycle
                if cost < best_cost * (1.0 - 1e-12):
                    best, best_cost = j, cost
            if best != a:
                for c in range(d):
                    centers[a, c] = (centers[a, c] * sizes[a] - points[i, c]) / (sizes[a] - 1.0)
                    centers[best, c] = (centers[best, c] * sizes[best] + points[i, c]) / (sizes[best] + 1.0)
                sizes[a] -= 1.0
                sizes[best] += 1.0
                labels[i] = best
                moved = True
                moves += 1
        if not moved:
            break
    return moves
