"""Estimation error and partition agreement measures."""

from __future__ import annotations

import numpy as np
import scipy.linalg


def mse_beta(true_beta, est_beta) -> float:
    """Mean squared coefficient error: average over sites of the squared
    Euclidean distance between true and estimated coefficient vectors."""
    t = np.atleast_2d(np.asarray(true_beta, dtype=np.float64))
    e = np.atleast_2d(np.asarray(est_beta, dtype=np.float64))
    if t.shape != e.shape:
        raise ValueError("coefficient arrays must have matching shapes")
    return float(np.mean(np.sum((t - e) ** 2, axis=1)))


def mse_g(true_g, est_g) -> float:
    """Mean squared error of the smooth surface at the data sites."""
    t = np.asarray(true_g, dtype=np.float64).ravel()
    e = np.asarray(est_g, dtype=np.float64).ravel()
    if t.shape != e.shape:
        raise ValueError("surface arrays must have matching shapes")
    return float(np.mean((t - e) ** 2))


def rand_index(labels_a, labels_b) -> float:
    """Plain (unadjusted) Rand index between two partitions.

    Fraction of site pairs on which the partitions agree (both together
    or both apart).  Label values are arbitrary; only the grouping counts.
    """
    a = np.asarray(labels_a).ravel()
    b = np.asarray(labels_b).ravel()
    if a.shape != b.shape:
        raise ValueError("label arrays must have matching shapes")
    n = a.shape[0]
    if n < 2:
        return 1.0
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    cont = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(cont, (ai, bi), 1.0)
    sum_sq = float((cont**2).sum())
    sum_a = float((cont.sum(axis=1) ** 2).sum())
    sum_b = float((cont.sum(axis=0) ** 2).sum())
    # pairs split by one partition but not the other, both directions
    disagree = 0.5 * (sum_a - sum_sq) + 0.5 * (sum_b - sum_sq)
    total = n * (n - 1) / 2.0
    return float(1.0 - disagree / total)


def df_theta(theta) -> int:
    """Degrees of freedom of the fused part: nonzero transformed coordinates."""
    return int(np.count_nonzero(np.asarray(theta)))


def df_psi(Btilde, D, rho) -> float:
    """Effective degrees of freedom of the smooth part at smoothing level rho:
    trace of the ridge hat matrix B (B'B + 2 n rho D)^-1 B'."""
    B = np.asarray(Btilde, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    n = B.shape[0]
    G = B.T @ B
    M = G + 2.0 * n * rho * D
    sol = scipy.linalg.solve(M, G, assume_a="pos")
    return float(np.trace(sol))
