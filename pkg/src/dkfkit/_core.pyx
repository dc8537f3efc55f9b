# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Semantics mirror ``dkfkit._pycore``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt

from .errors import NumericalFailureError

cnp.import_array()

RBF = 0
MK = 1


cdef int _chol(const double[:, ::1] M, double[:, ::1] L, int d) noexcept nogil:
    """Lower Cholesky of M into L. Returns 0 on success, -1 if not PD."""
    cdef int i, j, k
    cdef double s
    for i in range(d):
        for j in range(i + 1):
            s = M[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if s <= 0.0:
                    return -1
                L[i, i] = sqrt(s)
            else:
                L[i, j] = s / L[j, j]
        for j in range(i + 1, d):
            L[i, j] = 0.0
    return 0


cdef int _pd_inv(double[:, ::1] M, double[:, ::1] L, double[:, ::1] W,
                 double[:, ::1] out, int d) noexcept nogil:
    """out = M^-1 for SPD M via Cholesky; W is workspace for L^-1."""
    cdef int i, j, k
    cdef double s
    if _chol(M, L, d) != 0:
        return -1
    # W = L^-1 (lower triangular)
    for j in range(d):
        for i in range(d):
            W[i, j] = 0.0
        W[j, j] = 1.0 / L[j, j]
        for i in range(j + 1, d):
            s = 0.0
            for k in range(j, i):
                s -= L[i, k] * W[k, j]
            W[i, j] = s / L[i, i]
    # out = W^T W
    for i in range(d):
        for j in range(i + 1):
            s = 0.0
            for k in range(i, d):
                s += W[k, i] * W[k, j]
            out[i, j] = s
            out[j, i] = s
    return 0


def info_scan(J, h, A, gamma, mu0, sigma0):
    cdef const double[:, :, ::1] Jv = np.ascontiguousarray(J, dtype=np.float64)
    cdef const double[:, ::1] hv = np.ascontiguousarray(h, dtype=np.float64)
    cdef const double[:, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[:, ::1] Gv = np.ascontiguousarray(gamma, dtype=np.float64)
    cdef int T = hv.shape[0]
    cdef int d = hv.shape[1]
    means_arr = np.empty((T, d))
    covs_arr = np.empty((T, d, d))
    cdef double[:, ::1] means = means_arr
    cdef double[:, :, ::1] covs = covs_arr
    cdef double[::1] mu = np.array(mu0, dtype=np.float64).copy()
    cdef double[:, ::1] sigma = np.ascontiguousarray(sigma0, dtype=np.float64).copy()
    cdef double[:, ::1] AS = np.empty((d, d))
    cdef double[:, ::1] M = np.empty((d, d))
    cdef double[:, ::1] Minv = np.empty((d, d))
    cdef double[:, ::1] P = np.empty((d, d))
    cdef double[:, ::1] L = np.empty((d, d))
    cdef double[:, ::1] W = np.empty((d, d))
    cdef double[::1] Amu = np.empty(d)
    cdef double[::1] rhs = np.empty(d)
    cdef int t, i, j, k, status = 0, fail_t = -1
    cdef double s
    with nogil:
        for t in range(T):
            for i in range(d):
                for j in range(d):
                    s = 0.0
                    for k in range(d):
                        s += Av[i, k] * sigma[k, j]
                    AS[i, j] = s
            for i in range(d):
                for j in range(i + 1):
                    s = 0.0
                    for k in range(d):
                        s += AS[i, k] * Av[j, k]
                    s += 0.5 * (Gv[i, j] + Gv[j, i])
                    M[i, j] = s
                    M[j, i] = s
            if _pd_inv(M, L, W, Minv, d) != 0:
                status = 1
                fail_t = t
                break
            for i in range(d):
                for j in range(i + 1):
                    s = 0.5 * (Jv[t, i, j] + Jv[t, j, i]) + Minv[i, j]
                    P[i, j] = s
                    P[j, i] = s
            if _pd_inv(P, L, W, sigma, d) != 0:
                status = 2
                fail_t = t
                break
            for i in range(d):
                s = 0.0
                for k in range(d):
                    s += Av[i, k] * mu[k]
                Amu[i] = s
            for i in range(d):
                s = hv[t, i]
                for k in range(d):
                    s += Minv[i, k] * Amu[k]
                rhs[i] = s
            for i in range(d):
                s = 0.0
                for k in range(d):
                    s += sigma[i, k] * rhs[k]
                mu[i] = s
            for i in range(d):
                means[t, i] = mu[i]
                for j in range(d):
                    covs[t, i, j] = sigma[i, j]
    if status == 1:
        raise NumericalFailureError(f"predicted covariance not positive definite at step {fail_t}")
    if status == 2:
        raise NumericalFailureError(f"posterior precision not positive definite at step {fail_t}")
    return means_arr, covs_arr


def systematic_resample(weights, double u):
    cdef const double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t N = w.shape[0]
    idx_arr = np.empty(N, dtype=np.int64)
    cdef cnp.int64_t[::1] idx = idx_arr
    cdef Py_ssize_t i, j = 0
    cdef double c = w[0]
    cdef double pos
    with nogil:
        for i in range(N):
            pos = (u + i) / N
            while c <= pos and j < N - 1:
                j += 1
                c += w[j]
            idx[i] = j
    return idx_arr


def kernel_matrix(X, Y, int family, double sigma_f2, double sigma_l2):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    cdef const double[:, ::1] Yv = np.ascontiguousarray(np.atleast_2d(Y), dtype=np.float64)
    cdef Py_ssize_t m = Xv.shape[0], k = Yv.shape[0], n = Xv.shape[1]
    out_arr = np.empty((m, k))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, c
    cdef double s, diff
    cdef double inv2l = 1.0 / (2.0 * sigma_l2)
    with nogil:
        for i in range(m):
            for j in range(k):
                s = 0.0
                if family == 0:
                    for c in range(n):
                        diff = Xv[i, c] - Yv[j, c]
                        s += diff * diff
                    out[i, j] = sigma_f2 * exp(-s * inv2l)
                else:
                    for c in range(n):
                        diff = Xv[i, c] - Yv[j, c]
                        s += exp(-diff * diff * inv2l)
                    out[i, j] = sigma_f2 * s / n
    return out_arr
