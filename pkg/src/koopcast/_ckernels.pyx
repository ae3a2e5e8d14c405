# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Signatures mirror ``koopcast._pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


cdef inline void _matvec(const double[:, ::1] K, const double* z, double* out, Py_ssize_t p) noexcept nogil:
    cdef Py_ssize_t r, c
    cdef double acc
    for r in range(p):
        acc = 0.0
        for c in range(p):
            acc = acc + K[r, c] * z[c]
        out[r] = acc


def rollout_linear(K, Z0, int P):
    cdef const double[:, ::1] Kv = np.ascontiguousarray(K, dtype=np.float64)
    cdef double[:, ::1] Z = np.array(Z0, dtype=np.float64, ndmin=2, order="C")
    cdef Py_ssize_t n = Z.shape[0], p = Z.shape[1], i, step
    if Kv.shape[0] != p or Kv.shape[1] != p:
        raise ValueError("K and Z0 dimensions disagree")
    out_arr = np.empty((n, P, p), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    with nogil:
        for i in range(n):
            if P > 0:
                _matvec(Kv, &Z[i, 0], &out[i, 0, 0], p)
            for step in range(1, P):
                _matvec(Kv, &out[i, step - 1, 0], &out[i, step, 0], p)
    return out_arr


def rollout_relift(K, Z0, int P, int H, int d, bint quadratic):
    cdef const double[:, ::1] Kv = np.ascontiguousarray(K, dtype=np.float64)
    cdef double[:, ::1] Z = np.array(Z0, dtype=np.float64, ndmin=2, order="C")
    cdef Py_ssize_t n = Z.shape[0], p = Z.shape[1], i, step, j, c
    cdef Py_ssize_t lin = H * d
    cdef Py_ssize_t goal_start = 2 * lin if quadratic else lin
    if Kv.shape[0] != p or Kv.shape[1] != p:
        raise ValueError("K and Z0 dimensions disagree")
    out_arr = np.empty((n, P, p), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef double[::1] pred = np.empty(p, dtype=np.float64)
    cdef double* prev
    cdef double* cur
    with nogil:
        for i in range(n):
            prev = &Z[i, 0]
            for step in range(P):
                cur = &out[i, step, 0]
                # only the newest-position rows of K z are needed
                for j in range(lin - d, lin):
                    pred[j] = 0.0
                    for c in range(p):
                        pred[j] = pred[j] + Kv[j, c] * prev[c]
                for j in range(lin - d):
                    cur[j] = prev[j + d]
                for j in range(lin - d, lin):
                    cur[j] = pred[j]
                if quadratic:
                    for j in range(lin):
                        cur[lin + j] = cur[j] * cur[j]
                for j in range(goal_start, p):
                    cur[j] = Z[i, j]
                prev = cur
    return out_arr


def displacement_errors(candidates, truth):
    cdef const double[:, :, ::1] c = np.ascontiguousarray(candidates, dtype=np.float64)
    cdef const double[:, ::1] t = np.ascontiguousarray(truth, dtype=np.float64)
    cdef Py_ssize_t k = c.shape[0], P = c.shape[1], d = c.shape[2], i, s, a
    if t.shape[0] != P or t.shape[1] != d:
        raise ValueError("candidate and truth shapes disagree")
    ade_arr = np.zeros(k, dtype=np.float64)
    fde_arr = np.zeros(k, dtype=np.float64)
    cdef double[::1] ade = ade_arr
    cdef double[::1] fde = fde_arr
    cdef double acc, diff, dist
    with nogil:
        for i in range(k):
            acc = 0.0
            dist = 0.0
            for s in range(P):
                dist = 0.0
                for a in range(d):
                    diff = c[i, s, a] - t[s, a]
                    dist = dist + diff * diff
                dist = sqrt(dist)
                acc = acc + dist
            ade[i] = acc / P
            fde[i] = dist
    return ade_arr, fde_arr
