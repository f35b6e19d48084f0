"""Row-wise numeric kernels used by the autodiff core.

Each kernel exists twice: a numba ``@njit`` loop version and a vectorised
numpy version.  The numba path is used when numba imports cleanly, unless
``SMOA_KERNELS=numpy`` is set, in which case the numpy path is used.  Both
paths take and return contiguous float64 arrays; row kernels operate on 2-D
``(rows, width)`` input and callers reshape around them.

The two paths agree to ~1e-15 but are not guaranteed bit-identical, so a
run is only reproducible byte-for-byte under a fixed backend.
"""

import math
import os
from types import SimpleNamespace

import numpy as np
from scipy.special import erf as _erf

INV_SQRT2 = 0.7071067811865476
INV_SQRT_2PI = 0.3989422804014327

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False


# --------------------------------------------------------------------- numpy


def _np_gelu_fwd(x):
    return 0.5 * x * (1.0 + _erf(x * INV_SQRT2))


def _np_gelu_bwd(x, g):
    cdf = 0.5 * (1.0 + _erf(x * INV_SQRT2))
    pdf = INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return g * (cdf + x * pdf)


def _np_softmax_fwd(x):
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _np_softmax_bwd(y, g):
    return y * (g - (g * y).sum(axis=1, keepdims=True))


def _np_layer_norm_fwd(x, gamma, beta, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, xhat, rstd[:, 0]


def _np_layer_norm_bwd(g, xhat, rstd, gamma):
    dgamma = (g * xhat).sum(axis=0)
    dbeta = g.sum(axis=0)
    dxhat = g * gamma
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = rstd[:, None] * (dxhat - m1 - xhat * m2)
    return dx, dgamma, dbeta


NUMPY = SimpleNamespace(
    name="numpy",
    gelu_fwd=_np_gelu_fwd,
    gelu_bwd=_np_gelu_bwd,
    softmax_fwd=_np_softmax_fwd,
    softmax_bwd=_np_softmax_bwd,
    layer_norm_fwd=_np_layer_norm_fwd,
    layer_norm_bwd=_np_layer_norm_bwd,
)


# --------------------------------------------------------------------- numba

if HAVE_NUMBA:
    _jit = numba.njit(cache=True, fastmath=False)

    @_jit
    def _nb_gelu_fwd(x):
        flat = x.ravel()
        out = np.empty_like(flat)
        for i in range(flat.size):
            v = flat[i]
            out[i] = 0.5 * v * (1.0 + math.erf(v * INV_SQRT2))
        return out.reshape(x.shape)

    @_jit
    def _nb_gelu_bwd(x, g):
        xf = x.ravel()
        gf = g.ravel()
        out = np.empty_like(xf)
        for i in range(xf.size):
            v = xf[i]
            cdf = 0.5 * (1.0 + math.erf(v * INV_SQRT2))
            pdf = INV_SQRT_2PI * math.exp(-0.5 * v * v)
            out[i] = gf[i] * (cdf + v * pdf)
        return out.reshape(x.shape)

    @_jit
    def _nb_softmax_fwd(x):
        rows, n = x.shape
        out = np.empty_like(x)
        for i in range(rows):
            m = x[i, 0]
            for j in range(1, n):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(n):
                e = math.exp(x[i, j] - m)
                out[i, j] = e
                s += e
            for j in range(n):
                out[i, j] /= s
        return out

    @_jit
    def _nb_softmax_bwd(y, g):
        rows, n = y.shape
        out = np.empty_like(y)
        for i in range(rows):
            dot = 0.0
            for j in range(n):
                dot += g[i, j] * y[i, j]
            for j in range(n):
                out[i, j] = y[i, j] * (g[i, j] - dot)
        return out

    @_jit
    def _nb_layer_norm_fwd(x, gamma, beta, eps):
        rows, n = x.shape
        y = np.empty_like(x)
        xhat = np.empty_like(x)
        rstd = np.empty(rows)
        for i in range(rows):
            mu = 0.0
            for j in range(n):
                mu += x[i, j]
            mu /= n
            var = 0.0
            for j in range(n):
                c = x[i, j] - mu
                var += c * c
            var /= n
            r = 1.0 / math.sqrt(var + eps)
            rstd[i] = r
            for j in range(n):
                h = (x[i, j] - mu) * r
                xhat[i, j] = h
                y[i, j] = h * gamma[j] + beta[j]
        return y, xhat, rstd

    @_jit
    def _nb_layer_norm_bwd(g, xhat, rstd, gamma):
        rows, n = g.shape
        dx = np.empty_like(g)
        dgamma = np.zeros(n)
        dbeta = np.zeros(n)
        for i in range(rows):
            m1 = 0.0
            m2 = 0.0
            for j in range(n):
                d = g[i, j] * gamma[j]
                m1 += d
                m2 += d * xhat[i, j]
                dgamma[j] += g[i, j] * xhat[i, j]
                dbeta[j] += g[i, j]
            m1 /= n
            m2 /= n
            for j in range(n):
                dx[i, j] = rstd[i] * (g[i, j] * gamma[j] - m1 - xhat[i, j] * m2)
        return dx, dgamma, dbeta

    NUMBA = SimpleNamespace(
        name="numba",
        gelu_fwd=_nb_gelu_fwd,
        gelu_bwd=_nb_gelu_bwd,
        softmax_fwd=_nb_softmax_fwd,
        softmax_bwd=_nb_softmax_bwd,
        layer_norm_fwd=_nb_layer_norm_fwd,
        layer_norm_bwd=_nb_layer_norm_bwd,
    )
else:  # pragma: no cover
    NUMBA = None


BACKENDS = {"numpy": NUMPY}
if NUMBA is not None:
    BACKENDS["numba"] = NUMBA


def _select():
    choice = os.environ.get("SMOA_KERNELS", "").strip().lower()
    if choice in ("", "auto"):
        return NUMBA if NUMBA is not None else NUMPY
    if choice not in BACKENDS:
        raise ValueError(
            f"SMOA_KERNELS={choice!r} not available; choose from {sorted(BACKENDS)}"
        )
    return BACKENDS[choice]


_active = _select()


def active():
    """Kernel namespace currently used by the autodiff ops."""
    return _active


def use(name):
    """Switch the process-wide backend; returns the previous backend name."""
    global _active
    prev = _active.name
    _active = BACKENDS[name]
    return prev
