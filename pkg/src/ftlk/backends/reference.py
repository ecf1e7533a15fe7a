"""Pure-numpy kernels: forward/backward primitives for the denoiser.

Shapes are tiny (a handful of frames times a model width of a few dozen), so
clarity beats cleverness here. The compiled backend in `_fast.pyx` implements
the same contracts; `tests/test_backends.py` pins their agreement.
"""

import numpy as np

NAME = "python"

_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715
_LN_EPS = 1e-6


def dense_forward(x, w, b):
    return x @ w + b


def dense_backward(x, w, dy):
    dx = dy @ w.T
    dw = x.T @ dy
    db = dy.sum(axis=0)
    return dx, dw, db


def gelu_forward(x):
    # tanh-approximation GELU; smooth everywhere, finite-difference friendly.
    u = _GELU_C * (x + _GELU_A * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(u))


def gelu_backward(x, dy):
    u = _GELU_C * (x + _GELU_A * x * x * x)
    th = np.tanh(u)
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return dy * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du)


def layernorm_forward(x, gamma, beta):
    mean = x.mean(axis=1)
    var = x.var(axis=1)
    rstd = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mean[:, None]) * rstd[:, None]
    return xhat * gamma + beta, mean, rstd


def layernorm_backward(x, gamma, mean, rstd, dy):
    n = x.shape[1]
    xhat = (x - mean[:, None]) * rstd[:, None]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    # dx = rstd * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = rstd[:, None] * (dxhat - m1 - xhat * m2)
    return dx, dgamma, dbeta


def _split_heads(x, heads):
    n, m = x.shape
    return x.reshape(n, heads, m // heads).transpose(1, 0, 2)  # (H, n, hd)


def _merge_heads(x):
    h, n, hd = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * hd)


def softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def mha_forward(xq, xkv, wq, wk, wv, wo, heads):
    """Multi-head attention; returns (y, cache) with cache reused by backward.

    Self-attention passes xkv = xq; cross-attention passes conditioning tokens.
    """
    m = xq.shape[1]
    hd = m // heads
    scale = 1.0 / np.sqrt(hd)
    q = _split_heads(xq @ wq, heads)
    k = _split_heads(xkv @ wk, heads)
    v = _split_heads(xkv @ wv, heads)
    scores = np.einsum("hqd,hkd->hqk", q, k) * scale
    p = softmax(scores)
    ctx = _merge_heads(np.einsum("hqk,hkd->hqd", p, v))
    y = ctx @ wo
    return y, (q, k, v, p, ctx)


def mha_backward(xq, xkv, wq, wk, wv, wo, heads, cache, dy):
    q, k, v, p, ctx = cache
    m = xq.shape[1]
    hd = m // heads
    scale = 1.0 / np.sqrt(hd)
    dwo = ctx.T @ dy
    dctx = _split_heads(dy @ wo.T, heads)
    dp = np.einsum("hqd,hkd->hqk", dctx, v)
    dv = np.einsum("hqk,hqd->hkd", p, dctx)
    # softmax backward: dS = P * (dP - sum(dP * P))
    ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True))
    dq = np.einsum("hqk,hkd->hqd", ds, k) * scale
    dk = np.einsum("hqk,hqd->hkd", ds, q) * scale
    dq_m, dk_m, dv_m = _merge_heads(dq), _merge_heads(dk), _merge_heads(dv)
    dwq = xq.T @ dq_m
    dwk = xkv.T @ dk_m
    dwv = xkv.T @ dv_m
    dxq = dq_m @ wq.T
    dxkv = dk_m @ wk.T + dv_m @ wv.T
    return dxq, dxkv, dwq, dwk, dwv, dwo
