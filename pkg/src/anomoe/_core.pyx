# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled per-frame numeric kernels.

Mirrors ``anomoe._core_py`` exactly in signatures and semantics; see that
module for the documented contracts. Keep the two in sync.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, sqrt

cnp.import_array()

cdef double LOG_2PI = 1.8378770664093453

NAME = "cython"


cdef inline void _forward_sub(const double[:, :] L, double* b, double* y, int d) noexcept nogil:
    # solve L y = b for lower-triangular L
    cdef int i, j
    cdef double s
    for i in range(d):
        s = b[i]
        for j in range(i):
            s -= L[i, j] * y[j]
        y[i] = s / L[i, i]


cdef inline int _cholesky(double* a, double* L, int d) noexcept nogil:
    # factor the row-major symmetric matrix a (d x d) as L L^T; returns 0 on
    # success, -1 if a is not positive definite
    cdef int i, j, p
    cdef double s
    for i in range(d):
        for j in range(i + 1):
            s = a[i * d + j]
            for p in range(j):
                s -= L[i * d + p] * L[j * d + p]
            if i == j:
                if s <= 0.0:
                    return -1
                L[i * d + i] = sqrt(s)
            else:
                L[i * d + j] = s / L[j * d + j]
    return 0


def component_logpdfs(object X_obj, object means_obj, object chols_obj):
    """Per-component Gaussian log-densities; see ``_core_py.component_logpdfs``."""
    cdef double[:, ::1] X = np.ascontiguousarray(X_obj, dtype=np.float64)
    cdef double[:, ::1] means = np.ascontiguousarray(means_obj, dtype=np.float64)
    cdef double[:, :, ::1] chols = np.ascontiguousarray(chols_obj, dtype=np.float64)
    cdef int n = X.shape[0], d = X.shape[1], k = means.shape[0]
    cdef cnp.ndarray[double, ndim=2] out = np.empty((n, k))
    cdef double[:, ::1] out_v = out
    cdef cnp.ndarray[double, ndim=1] scratch = np.empty(2 * d)
    cdef double* diff = &scratch[0]
    cdef double* y = diff + d
    cdef double log_det_half, q
    cdef int i, j, p

    with nogil:
        for j in range(k):
            log_det_half = 0.0
            for p in range(d):
                log_det_half += log(chols[j, p, p])
            for i in range(n):
                for p in range(d):
                    diff[p] = X[i, p] - means[j, p]
                _forward_sub(chols[j], diff, y, d)
                q = 0.0
                for p in range(d):
                    q += y[p] * y[p]
                out_v[i, j] = -0.5 * q - log_det_half - 0.5 * d * LOG_2PI
    return out


def gmr_moments(object Xin_obj, object log_w_obj, object mu_in_obj, object chol_in_obj,
                object mu_out_obj, object reg_mats_obj, object cond_covs_obj):
    """Condition a joint mixture on inputs; see ``_core_py.gmr_moments``."""
    cdef double[:, ::1] Xin = np.ascontiguousarray(Xin_obj, dtype=np.float64)
    cdef double[::1] log_w = np.ascontiguousarray(log_w_obj, dtype=np.float64)
    cdef double[:, ::1] mu_in = np.ascontiguousarray(mu_in_obj, dtype=np.float64)
    cdef double[:, :, ::1] chol_in = np.ascontiguousarray(chol_in_obj, dtype=np.float64)
    cdef double[:, ::1] mu_out = np.ascontiguousarray(mu_out_obj, dtype=np.float64)
    cdef double[:, :, ::1] reg_mats = np.ascontiguousarray(reg_mats_obj, dtype=np.float64)
    cdef double[:, :, ::1] cond_covs = np.ascontiguousarray(cond_covs_obj, dtype=np.float64)

    cdef int n = Xin.shape[0], di = Xin.shape[1], k = mu_in.shape[0]
    cdef int do = mu_out.shape[1]
    cdef cnp.ndarray[double, ndim=2] post = np.empty((n, k))
    cdef cnp.ndarray[double, ndim=2] mean = np.empty((n, do))
    cdef cnp.ndarray[double, ndim=3] cov = np.empty((n, do, do))
    cdef double[:, ::1] post_v = post
    cdef double[:, ::1] mean_v = mean
    cdef double[:, :, ::1] cov_v = cov
    cdef cnp.ndarray[double, ndim=1] scratch = np.empty(2 * di + k)
    cdef cnp.ndarray[double, ndim=2] cm = np.empty((k, do))
    cdef double* diff = &scratch[0]
    cdef double* y = diff + di
    cdef double* log_r = y + di
    cdef double[:, ::1] cm_v = cm
    cdef double log_det_half, q, top, tot, h, s
    cdef int i, j, p, a, b

    with nogil:
        for i in range(n):
            for j in range(k):
                for p in range(di):
                    diff[p] = Xin[i, p] - mu_in[j, p]
                _forward_sub(chol_in[j], diff, y, di)
                q = 0.0
                log_det_half = 0.0
                for p in range(di):
                    q += y[p] * y[p]
                    log_det_half += log(chol_in[j, p, p])
                log_r[j] = log_w[j] - 0.5 * q - log_det_half - 0.5 * di * LOG_2PI
                for a in range(do):
                    s = mu_out[j, a]
                    for p in range(di):
                        s += reg_mats[j, a, p] * diff[p]
                    cm_v[j, a] = s

            top = log_r[0]
            for j in range(1, k):
                if log_r[j] > top:
                    top = log_r[j]
            tot = 0.0
            for j in range(k):
                post_v[i, j] = exp(log_r[j] - top)
                tot += post_v[i, j]
            for j in range(k):
                post_v[i, j] /= tot

            for a in range(do):
                s = 0.0
                for j in range(k):
                    s += post_v[i, j] * cm_v[j, a]
                mean_v[i, a] = s
            for a in range(do):
                for b in range(a + 1):
                    s = 0.0
                    for j in range(k):
                        h = post_v[i, j]
                        s += h * (cond_covs[j, a, b] + cm_v[j, a] * cm_v[j, b])
                    s -= mean_v[i, a] * mean_v[i, b]
                    cov_v[i, a, b] = s
                    cov_v[i, b, a] = s
    return post, mean, cov


def mahalanobis_batch(object diffs_obj, object covs_obj):
    """Row-wise Mahalanobis distances; see ``_core_py.mahalanobis_batch``."""
    cdef double[:, ::1] diffs = np.ascontiguousarray(diffs_obj, dtype=np.float64)
    cdef double[:, :, ::1] covs = np.ascontiguousarray(covs_obj, dtype=np.float64)
    cdef int n = diffs.shape[0], d = diffs.shape[1]
    cdef cnp.ndarray[double, ndim=1] out = np.empty(n)
    cdef double[::1] out_v = out
    cdef cnp.ndarray[double, ndim=1] scratch = np.empty(2 * d * d + 2 * d)
    cdef double* a = &scratch[0]
    cdef double* L = a + d * d
    cdef double* b = L + d * d
    cdef double* y = b + d
    cdef double q
    cdef int i, p, r, c
    cdef int fail = 0

    with nogil:
        for i in range(n):
            for r in range(d):
                for c in range(d):
                    a[r * d + c] = covs[i, r, c]
                b[r] = diffs[i, r]
            if _cholesky(a, L, d) != 0:
                fail = i + 1
                break
            for r in range(d):
                q = b[r]
                for c in range(r):
                    q -= L[r * d + c] * y[c]
                y[r] = q / L[r * d + r]
            q = 0.0
            for r in range(d):
                q += y[r] * y[r]
            out_v[i] = sqrt(q)
    if fail:
        raise np.linalg.LinAlgError(
            f"covariance at row {fail - 1} is not positive definite"
        )
    return out
