# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled implementations of the hot row operations.

Same call signatures and semantics as _ops_numpy; the backend module
picks this version automatically when the extension has been built.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()

PROB_FLOOR = 1e-12
cdef double _FLOOR = 1e-12


def row_softmax(cnp.ndarray[cnp.float64_t, ndim=2] z not None):
    """Row-wise softmax of an (R, N) logit array."""
    cdef Py_ssize_t r = z.shape[0], n = z.shape[1], i, j
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((r, n), dtype=np.float64)
    cdef double m, s, v
    for i in range(r):
        m = z[i, 0]
        for j in range(1, n):
            if z[i, j] > m:
                m = z[i, j]
        s = 0.0
        for j in range(n):
            v = exp(z[i, j] - m)
            out[i, j] = v
            s += v
        for j in range(n):
            out[i, j] /= s
    return out


def row_softmax_vjp(cnp.ndarray[cnp.float64_t, ndim=2] y not None,
                    cnp.ndarray[cnp.float64_t, ndim=2] dy not None):
    """Backpropagate dy through y = row_softmax(z); returns dz."""
    cdef Py_ssize_t r = y.shape[0], n = y.shape[1], i, j
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((r, n), dtype=np.float64)
    cdef double inner
    for i in range(r):
        inner = 0.0
        for j in range(n):
            inner += dy[i, j] * y[i, j]
        for j in range(n):
            out[i, j] = y[i, j] * (dy[i, j] - inner)
    return out


def relax_forward(cnp.ndarray[cnp.float64_t, ndim=2] y not None, xi, double temperature):
    """Tempered softmax of log-probabilities plus optional Gumbel noise."""
    cdef Py_ssize_t r = y.shape[0], n = y.shape[1], i, j
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((r, n), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] xi_arr
    cdef bint has_xi = xi is not None
    cdef double m, s, v, val
    if has_xi:
        xi_arr = np.ascontiguousarray(xi, dtype=np.float64)
    else:
        xi_arr = np.empty((0, 0), dtype=np.float64)
    for i in range(r):
        for j in range(n):
            val = y[i, j]
            if val < _FLOOR:
                val = _FLOOR
            val = log(val)
            if has_xi:
                val += xi_arr[i, j]
            out[i, j] = val / temperature
        m = out[i, 0]
        for j in range(1, n):
            if out[i, j] > m:
                m = out[i, j]
        s = 0.0
        for j in range(n):
            v = exp(out[i, j] - m)
            out[i, j] = v
            s += v
        for j in range(n):
            out[i, j] /= s
    return out


def relax_vjp(cnp.ndarray[cnp.float64_t, ndim=2] phi not None,
              cnp.ndarray[cnp.float64_t, ndim=2] y not None,
              double temperature,
              cnp.ndarray[cnp.float64_t, ndim=2] dphi not None):
    """Backpropagate dphi through relax_forward; returns dy."""
    cdef Py_ssize_t r = y.shape[0], n = y.shape[1], i, j
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((r, n), dtype=np.float64)
    cdef double inner, yf
    for i in range(r):
        inner = 0.0
        for j in range(n):
            inner += dphi[i, j] * phi[i, j]
        for j in range(n):
            yf = y[i, j]
            if yf < _FLOOR:
                yf = _FLOOR
            out[i, j] = phi[i, j] * (dphi[i, j] - inner) / (temperature * yf)
    return out


def kl_rows(cnp.ndarray[cnp.float64_t, ndim=2] p not None,
            cnp.ndarray[cnp.float64_t, ndim=2] q not None):
    """Sum over rows of KL(p_row || q_row) in nats; inf if q lacks support."""
    cdef Py_ssize_t r = p.shape[0], n = p.shape[1], i, j
    cdef double total = 0.0, pv, qv
    for i in range(r):
        for j in range(n):
            pv = p[i, j]
            if pv > 0.0:
                qv = q[i, j]
                if qv == 0.0:
                    return float("inf")
                total += pv * (log(pv) - log(qv))
    return total


def sample_rows(cnp.ndarray[cnp.float64_t, ndim=2] probs not None,
                cnp.ndarray[cnp.float64_t, ndim=1] u not None):
    """Draw one index per row by inverting the CDF at uniform u."""
    cdef Py_ssize_t r = probs.shape[0], n = probs.shape[1], i, j
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(r, dtype=np.int64)
    cdef double acc, uv
    cdef Py_ssize_t idx
    for i in range(r):
        acc = 0.0
        idx = 0
        uv = u[i]
        for j in range(n):
            acc += probs[i, j]
            if acc < uv:
                idx += 1
        if idx > n - 1:
            idx = n - 1
        out[i] = idx
    return out


def one_hot_rows(cnp.ndarray[cnp.int64_t, ndim=1] ids not None, int n):
    cdef Py_ssize_t r = ids.shape[0], i
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((r, n), dtype=np.float64)
    for i in range(r):
        out[i, ids[i]] = 1.0
    return out


def argmax_rows(cnp.ndarray[cnp.float64_t, ndim=2] rows not None):
    cdef Py_ssize_t r = rows.shape[0], n = rows.shape[1], i, j
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(r, dtype=np.int64)
    cdef double m
    cdef Py_ssize_t best
    for i in range(r):
        best = 0
        m = rows[i, 0]
        for j in range(1, n):
            if rows[i, j] > m:
                m = rows[i, j]
                best = j
        out[i] = best
    return out
