"""Numpy implementations of the per-frame numeric kernels.

These are the reference versions of the routines in ``anomoe._core`` (the
compiled extension). Both expose the same three functions with identical
signatures; ``anomoe.backend`` picks one at import time. Keep the two in
sync: the test suite checks them against each other.

All covariance work goes through Cholesky factors. Nothing here ever forms
an explicit matrix inverse.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

_LOG_2PI = float(np.log(2.0 * np.pi))

NAME = "python"


def component_logpdfs(X: np.ndarray, means: np.ndarray, chols: np.ndarray) -> np.ndarray:
    """Per-component Gaussian log-densities.

    X : (n, d) points; means : (k, d); chols : (k, d, d) lower Cholesky
    factors of the covariances. Returns (n, k) with entry [i, j] =
    log N(X[i]; means[j], L_j L_j^T).
    """
    X = np.ascontiguousarray(X, dtype=float)
    n, d = X.shape
    k = means.shape[0]
    out = np.empty((n, k))
    for j in range(k):
        L = chols[j]
        diff = (X - means[j]).T  # (d, n)
        y = solve_triangular(L, diff, lower=True, check_finite=False)
        log_det_half = np.sum(np.log(np.diag(L)))
        out[:, j] = -0.5 * np.einsum("dn,dn->n", y, y) - log_det_half - 0.5 * d * _LOG_2PI
    return out


def gmr_moments(
    Xin: np.ndarray,
    log_w: np.ndarray,
    mu_in: np.ndarray,
    chol_in: np.ndarray,
    mu_out: np.ndarray,
    reg_mats: np.ndarray,
    cond_covs: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Condition a joint Gaussian mixture on a batch of input points.

    Xin       : (n, di) conditioning inputs
    log_w     : (k,) mixture log-weights
    mu_in     : (k, di) input-block means
    chol_in   : (k, di, di) lower Cholesky factors of the input-block covs
    mu_out    : (k, do) output-block means
    reg_mats  : (k, do, di) per-component regression matrices
                (output-input cross-cov times input-cov inverse)
    cond_covs : (k, do, do) per-component conditional covariances

    Returns ``(post, mean, cov)``: responsibilities (n, k), the
    moment-matched predictive mean (n, do), and covariance (n, do, do) of
    the mixture collapsed to a single Gaussian per input point.
    """
    Xin = np.ascontiguousarray(Xin, dtype=float)
    diffs = Xin[:, None, :] - mu_in[None, :, :]  # (n, k, di)

    log_r = component_logpdfs(Xin, mu_in, chol_in) + log_w[None, :]
    m = np.max(log_r, axis=1, keepdims=True)
    post = np.exp(log_r - m)
    post /= np.sum(post, axis=1, keepdims=True)

    cond_means = mu_out[None, :, :] + np.einsum("koi,nki->nko", reg_mats, diffs)
    mean = np.einsum("nk,nko->no", post, cond_means)

    cov = np.einsum("nk,kop->nop", post, cond_covs)
    cov += np.einsum("nk,nko,nkp->nop", post, cond_means, cond_means)
    cov -= mean[:, :, None] * mean[:, None, :]
    cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    return post, mean, cov


def mahalanobis_batch(diffs: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """Mahalanobis distances sqrt(diff^T cov^-1 diff), one cov per row.

    diffs : (n, d); covs : (n, d, d) symmetric positive definite.
    """
    diffs = np.ascontiguousarray(diffs, dtype=float)
    L = np.linalg.cholesky(covs)  # batched
    n, d = diffs.shape
    # forward substitution L y = diff, vectorized across rows
    y = np.empty_like(diffs)
    for i in range(d):
        s = diffs[:, i].copy()
        for j in range(i):
            s -= L[:, i, j] * y[:, j]
        y[:, i] = s / L[:, i, i]
    return np.sqrt(np.einsum("nd,nd->n", y, y))
