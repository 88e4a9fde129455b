# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-step kernels: batch residual loss/gradient, rollout, Adam."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, isfinite, pow

cnp.import_array()


def linear_loss_grad(double[:, ::1] M, double[:, ::1] v, double[:, ::1] vn, bint squared=False):
    cdef Py_ssize_t B = v.shape[0], b, i, j
    cdef double r[4]
    cdef double nrm, w, total = 0.0
    G_arr = np.zeros((4, 4))
    cdef double[:, ::1] G = G_arr
    for b in range(B):
        nrm = 0.0
        for i in range(4):
            r[i] = M[i, 0] * v[b, 0] + M[i, 1] * v[b, 1] + M[i, 2] * v[b, 2] + M[i, 3] * v[b, 3] - vn[b, i]
            nrm += r[i] * r[i]
        if squared:
            total += nrm
            w = 2.0
        else:
            nrm = sqrt(nrm)
            total += nrm
            if nrm == 0.0:
                continue
            w = 1.0 / nrm
        for i in range(4):
            for j in range(4):
                G[i, j] += w * r[i] * v[b, j]
    for i in range(4):
        for j in range(4):
            G[i, j] /= B
    return total / B, G_arr


def batched_loss_grad(double[:, :, ::1] Ms, double[:, ::1] v, double[:, ::1] vn, bint squared=False):
    cdef Py_ssize_t B = v.shape[0], b, i, j
    cdef double r[4]
    cdef double nrm, w, total = 0.0
    G_arr = np.zeros((B, 4, 4))
    cdef double[:, :, ::1] G = G_arr
    for b in range(B):
        nrm = 0.0
        for i in range(4):
            r[i] = (Ms[b, i, 0] * v[b, 0] + Ms[b, i, 1] * v[b, 1]
                    + Ms[b, i, 2] * v[b, 2] + Ms[b, i, 3] * v[b, 3] - vn[b, i])
            nrm += r[i] * r[i]
        if squared:
            total += nrm
            w = 2.0 / B
        else:
            nrm = sqrt(nrm)
            total += nrm
            if nrm == 0.0:
                continue
            w = 1.0 / (nrm * B)
        for i in range(4):
            for j in range(4):
                G[b, i, j] = w * r[i] * v[b, j]
    return total / B, G_arr


cdef inline bint _step(const double[:, ::1] M, double* v, double* out) noexcept nogil:
    cdef Py_ssize_t i
    cdef bint ok = True
    for i in range(4):
        out[i] = M[i, 0] * v[0] + M[i, 1] * v[1] + M[i, 2] * v[2] + M[i, 3] * v[3]
        if not isfinite(out[i]):
            ok = False
    return ok


def rollout_fixed(const double[:, ::1] M, v0, Py_ssize_t steps):
    out_arr = np.empty((steps + 1, 4))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t n, i
    for i in range(4):
        out[0, i] = v0[i]
    for n in range(steps):
        if not _step(M, &out[n, 0], &out[n + 1, 0]):
            return out_arr, n + 1
    return out_arr, -1


def rollout_varying(const double[:, :, ::1] Ms, v0):
    cdef Py_ssize_t steps = Ms.shape[0], n, i
    out_arr = np.empty((steps + 1, 4))
    cdef double[:, ::1] out = out_arr
    for i in range(4):
        out[0, i] = v0[i]
    for n in range(steps):
        if not _step(Ms[n], &out[n, 0], &out[n + 1, 0]):
            return out_arr, n + 1
    return out_arr, -1


def adam_update(double[::1] p, const double[::1] g, double[::1] m, double[::1] v,
                double lr, double beta1, double beta2, double eps, long step):
    cdef Py_ssize_t k, n = p.shape[0]
    cdef double bc1 = 1.0 - pow(beta1, step)
    cdef double bc2 = 1.0 - pow(beta2, step)
    for k in range(n):
        m[k] = beta1 * m[k] + (1.0 - beta1) * g[k]
        v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k]
        p[k] -= lr * (m[k] / bc1) / (sqrt(v[k] / bc2) + eps)
