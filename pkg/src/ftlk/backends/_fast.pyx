# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the denoiser hot loop.

Same contracts as `reference.py`, written as fused C loops: at the model sizes
this project runs (a handful of frames, model width of a few dozen), per-call
dispatch overhead dominates BLAS, so plain loops win. No -ffast-math: results
must stay deterministic and closely track the reference backend.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt, tanh

cnp.import_array()

NAME = "cython"

cdef double GELU_C = sqrt(2.0 / 3.141592653589793)
cdef double GELU_A = 0.044715
cdef double LN_EPS = 1e-6


def dense_forward(double[:, ::1] x, double[:, ::1] w, double[::1] b):
    cdef Py_ssize_t n = x.shape[0], i = x.shape[1], o = w.shape[1]
    cdef cnp.ndarray[double, ndim=2] y = np.empty((n, o))
    cdef double[:, ::1] yv = y
    cdef Py_ssize_t r, c, k
    cdef double acc
    for r in range(n):
        for c in range(o):
            acc = b[c]
            for k in range(i):
                acc += x[r, k] * w[k, c]
            yv[r, c] = acc
    return y


def dense_backward(double[:, ::1] x, double[:, ::1] w, double[:, ::1] dy):
    cdef Py_ssize_t n = x.shape[0], i = x.shape[1], o = w.shape[1]
    cdef cnp.ndarray[double, ndim=2] dx = np.zeros((n, i))
    cdef cnp.ndarray[double, ndim=2] dw = np.zeros((i, o))
    cdef cnp.ndarray[double, ndim=1] db = np.zeros(o)
    cdef double[:, ::1] dxv = dx
    cdef double[:, ::1] dwv = dw
    cdef double[::1] dbv = db
    cdef Py_ssize_t r, c, k
    cdef double g
    for r in range(n):
        for c in range(o):
            g = dy[r, c]
            dbv[c] += g
            for k in range(i):
                dxv[r, k] += g * w[k, c]
                dwv[k, c] += x[r, k] * g
    return dx, dw, db


def gelu_forward(double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1]
    cdef cnp.ndarray[double, ndim=2] y = np.empty((n, m))
    cdef double[:, ::1] yv = y
    cdef Py_ssize_t r, c
    cdef double v, u
    for r in range(n):
        for c in range(m):
            v = x[r, c]
            u = GELU_C * (v + GELU_A * v * v * v)
            yv[r, c] = 0.5 * v * (1.0 + tanh(u))
    return y


def gelu_backward(double[:, ::1] x, double[:, ::1] dy):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1]
    cdef cnp.ndarray[double, ndim=2] dx = np.empty((n, m))
    cdef double[:, ::1] dxv = dx
    cdef Py_ssize_t r, c
    cdef double v, u, th, du
    for r in range(n):
        for c in range(m):
            v = x[r, c]
            u = GELU_C * (v + GELU_A * v * v * v)
            th = tanh(u)
            du = GELU_C * (1.0 + 3.0 * GELU_A * v * v)
            dxv[r, c] = dy[r, c] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du)
    return dx


def layernorm_forward(double[:, ::1] x, double[::1] gamma, double[::1] beta):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1]
    cdef cnp.ndarray[double, ndim=2] y = np.empty((n, m))
    cdef cnp.ndarray[double, ndim=1] mean = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] rstd = np.empty(n)
    cdef double[:, ::1] yv = y
    cdef double[::1] meanv = mean
    cdef double[::1] rstdv = rstd
    cdef Py_ssize_t r, c
    cdef double mu, var, dv, rs
    for r in range(n):
        mu = 0.0
        for c in range(m):
            mu += x[r, c]
        mu /= m
        var = 0.0
        for c in range(m):
            dv = x[r, c] - mu
            var += dv * dv
        var /= m
        rs = 1.0 / sqrt(var + LN_EPS)
        meanv[r] = mu
        rstdv[r] = rs
        for c in range(m):
            yv[r, c] = (x[r, c] - mu) * rs * gamma[c] + beta[c]
    return y, mean, rstd


def layernorm_backward(double[:, ::1] x, double[::1] gamma, double[::1] mean,
                       double[::1] rstd, double[:, ::1] dy):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1]
    cdef cnp.ndarray[double, ndim=2] dx = np.empty((n, m))
    cdef cnp.ndarray[double, ndim=1] dgamma = np.zeros(m)
    cdef cnp.ndarray[double, ndim=1] dbeta = np.zeros(m)
    cdef double[:, ::1] dxv = dx
    cdef double[::1] dgv = dgamma
    cdef double[::1] dbv = dbeta
    cdef Py_ssize_t r, c
    cdef double xhat, dxhat, m1, m2
    for r in range(n):
        m1 = 0.0
        m2 = 0.0
        for c in range(m):
            xhat = (x[r, c] - mean[r]) * rstd[r]
            dxhat = dy[r, c] * gamma[c]
            dgv[c] += dy[r, c] * xhat
            dbv[c] += dy[r, c]
            m1 += dxhat
            m2 += dxhat * xhat
        m1 /= m
        m2 /= m
        for c in range(m):
            xhat = (x[r, c] - mean[r]) * rstd[r]
            dxhat = dy[r, c] * gamma[c]
            dxv[r, c] = rstd[r] * (dxhat - m1 - xhat * m2)
    return dx, dgamma, dbeta


cdef void _project(double[:, ::1] x, double[:, ::1] w, double[:, :, ::1] out,
                   Py_ssize_t heads, Py_ssize_t hd) noexcept:
    # out[h, n, hd] = (x @ w) split into heads
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1]
    cdef Py_ssize_t h, r, c, k
    cdef double acc
    for h in range(heads):
        for r in range(n):
            for c in range(hd):
                acc = 0.0
                for k in range(m):
                    acc += x[r, k] * w[k, h * hd + c]
                out[h, r, c] = acc


def mha_forward(double[:, ::1] xq, double[:, ::1] xkv, double[:, ::1] wq,
                double[:, ::1] wk, double[:, ::1] wv, double[:, ::1] wo,
                Py_ssize_t heads):
    cdef Py_ssize_t nq = xq.shape[0], nk = xkv.shape[0], m = xq.shape[1]
    cdef Py_ssize_t hd = m // heads
    cdef double scale = 1.0 / sqrt(<double> hd)
    cdef cnp.ndarray[double, ndim=3] q = np.empty((heads, nq, hd))
    cdef cnp.ndarray[double, ndim=3] k = np.empty((heads, nk, hd))
    cdef cnp.ndarray[double, ndim=3] v = np.empty((heads, nk, hd))
    cdef cnp.ndarray[double, ndim=3] p = np.empty((heads, nq, nk))
    cdef cnp.ndarray[double, ndim=2] ctx = np.empty((nq, m))
    cdef cnp.ndarray[double, ndim=2] y = np.empty((nq, m))
    cdef double[:, :, ::1] qv = q, kv = k, vv = v, pv = p
    cdef double[:, ::1] ctxv = ctx, yv = y
    cdef Py_ssize_t h, r, c, j
    cdef double acc, mx, s
    _project(xq, wq, qv, heads, hd)
    _project(xkv, wk, kv, heads, hd)
    _project(xkv, wv, vv, heads, hd)
    for h in range(heads):
        for r in range(nq):
            mx = -1e308
            for c in range(nk):
                acc = 0.0
                for j in range(hd):
                    acc += qv[h, r, j] * kv[h, c, j]
                acc *= scale
                pv[h, r, c] = acc
                if acc > mx:
                    mx = acc
            s = 0.0
            for c in range(nk):
                pv[h, r, c] = exp(pv[h, r, c] - mx)
                s += pv[h, r, c]
            for c in range(nk):
                pv[h, r, c] /= s
            for j in range(hd):
                acc = 0.0
                for c in range(nk):
                    acc += pv[h, r, c] * vv[h, c, j]
                ctxv[r, h * hd + j] = acc
    for r in range(nq):
        for c in range(m):
            acc = 0.0
            for j in range(m):
                acc += ctxv[r, j] * wo[j, c]
            yv[r, c] = acc
    return y, (q, k, v, p, ctx)


def mha_backward(double[:, ::1] xq, double[:, ::1] xkv, double[:, ::1] wq,
                 double[:, ::1] wk, double[:, ::1] wv, double[:, ::1] wo,
                 Py_ssize_t heads, cache, double[:, ::1] dy):
    q_a, k_a, v_a, p_a, ctx_a = cache
    cdef double[:, :, ::1] q = q_a, k = k_a, v = v_a, p = p_a
    cdef double[:, ::1] ctx = ctx_a
    cdef Py_ssize_t nq = xq.shape[0], nk = xkv.shape[0], m = xq.shape[1]
    cdef Py_ssize_t hd = m // heads
    cdef double scale = 1.0 / sqrt(<double> hd)
    cdef cnp.ndarray[double, ndim=2] dwq = np.zeros((m, m))
    cdef cnp.ndarray[double, ndim=2] dwk = np.zeros((m, m))
    cdef cnp.ndarray[double, ndim=2] dwv = np.zeros((m, m))
    cdef cnp.ndarray[double, ndim=2] dwo = np.zeros((m, m))
    cdef cnp.ndarray[double, ndim=2] dxq = np.zeros((nq, m))
    cdef cnp.ndarray[double, ndim=2] dxkv = np.zeros((nk, m))
    cdef cnp.ndarray[double, ndim=2] dctx = np.empty((nq, m))
    cdef cnp.ndarray[double, ndim=3] dqh = np.zeros((heads, nq, hd))
    cdef cnp.ndarray[double, ndim=3] dkh = np.zeros((heads, nk, hd))
    cdef cnp.ndarray[double, ndim=3] dvh = np.zeros((heads, nk, hd))
    cdef double[:, ::1] dwqv = dwq, dwkv = dwk, dwvv = dwv, dwov = dwo
    cdef double[:, ::1] dxqv = dxq, dxkvv = dxkv, dctxv = dctx
    cdef double[:, :, ::1] dqv = dqh, dkv = dkh, dvv = dvh
    cdef Py_ssize_t h, r, c, j
    cdef double acc, rowdot, g, ds
    # dwo, dctx
    for r in range(nq):
        for c in range(m):
            g = dy[r, c]
            for j in range(m):
                dwov[j, c] += ctx[r, j] * g
        for j in range(m):
            acc = 0.0
            for c in range(m):
                acc += dy[r, c] * wo[j, c]
            dctxv[r, j] = acc
    for h in range(heads):
        for r in range(nq):
            # dp row and softmax backward fused
            rowdot = 0.0
            for c in range(nk):
                acc = 0.0
                for j in range(hd):
                    acc += dctxv[r, h * hd + j] * v[h, c, j]
                # stash dp in dkh row scratch? keep local: recompute below
                rowdot += acc * p[h, r, c]
            for c in range(nk):
                acc = 0.0
                for j in range(hd):
                    acc += dctxv[r, h * hd + j] * v[h, c, j]
                ds = p[h, r, c] * (acc - rowdot) * scale
                for j in range(hd):
                    dqv[h, r, j] += ds * k[h, c, j]
                    dkv[h, c, j] += ds * q[h, r, j]
                for j in range(hd):
                    dvv[h, c, j] += p[h, r, c] * dctxv[r, h * hd + j]
    # fold head grads back through the projections
    for h in range(heads):
        for r in range(nq):
            for j in range(hd):
                g = dqv[h, r, j]
                for c in range(m):
                    dwqv[c, h * hd + j] += xq[r, c] * g
                    dxqv[r, c] += g * wq[c, h * hd + j]
        for r in range(nk):
            for j in range(hd):
                g = dkv[h, r, j]
                for c in range(m):
                    dwkv[c, h * hd + j] += xkv[r, c] * g
                    dxkvv[r, c] += g * wk[c, h * hd + j]
                g = dvv[h, r, j]
                for c in range(m):
                    dwvv[c, h * hd + j] += xkv[r, c] * g
                    dxkvv[r, c] += g * wv[c, h * hd + j]
    return dxq, dxkv, dwq, dwk, dwv, dwo
