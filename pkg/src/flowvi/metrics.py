"""Marginal-Wasserstein distance between sample matrices.

For equal-size ``S x d`` matrices ``A`` and ``B``

    W(A, B) = (1/d) sum_j (1/S) sum_i |sort(A[:, j])_i - sort(B[:, j])_i|,

the average over coordinates of the exact 1-D Wasserstein-1 distance between
the empirical marginals (in one dimension the optimal coupling pairs order
statistics). The exact-sampling baseline is the same quantity between two
independent sets of exact target samples.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .rng import RngState, split
from .targets import Target


@dataclass(frozen=True)
class MetricReport:
    value: float
    sample_size_a: int
    sample_size_b: int
    baseline: float | None = None


def _as_matrix(X, name):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError(f"{name} must be an S x d matrix, got shape {X.shape}")
    return X


def marginal_wasserstein(A: np.ndarray, B: np.ndarray) -> float:
    """Average 1-D Wasserstein-1 distance between matching columns.

    Both matrices must have the same shape; subsample the larger one first
    (see :func:`subsample`) when sample counts differ.
    """
    A = _as_matrix(A, "A")
    B = _as_matrix(B, "B")
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"column counts differ: {A.shape[1]} vs {B.shape[1]}")
    if A.shape[0] != B.shape[0]:
        raise ValueError(
            f"sample counts differ ({A.shape[0]} vs {B.shape[0]}); subsample to equal size first"
        )
    if A.shape[0] == 0:
        raise ValueError("need at least one sample")
    total = 0.0
    # one column at a time keeps the working set at O(S)
    for j in range(A.shape[1]):
        a = np.sort(A[:, j])
        b = np.sort(B[:, j])
        total += float(np.mean(np.abs(a - b)))
    return total / A.shape[1]


def w1_1d_oracle(a: np.ndarray, b: np.ndarray) -> float:
    """Exact 1-D optimal transport cost by solving the assignment problem.

    Test-scale only (``n <= 256``): builds the full ``n x n`` cost matrix
    ``|a_i - b_j|`` and finds the minimum-cost perfect matching.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size != b.size:
        raise ValueError("oracle needs equal lengths")
    if a.size > 256:
        raise ValueError("oracle is for test-scale inputs (n <= 256)")
    cost = np.abs(a[:, None] - b[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def subsample(X: np.ndarray, n: int, rng: RngState) -> np.ndarray:
    """Seeded uniform subsample of ``n`` rows without replacement."""
    X = np.asarray(X)
    if n > X.shape[0]:
        raise ValueError(f"cannot take {n} rows from {X.shape[0]}")
    if n == X.shape[0]:
        return X
    idx = np.sort(rng.generator().choice(X.shape[0], size=n, replace=False))
    return X[idx]


def compare(A: np.ndarray, B: np.ndarray, rng: RngState, baseline: float | None = None) -> MetricReport:
    """Marginal-Wasserstein after subsampling the larger set to the smaller."""
    A = _as_matrix(A, "A")
    B = _as_matrix(B, "B")
    n = min(A.shape[0], B.shape[0])
    value = marginal_wasserstein(subsample(A, n, split(rng, 0)), subsample(B, n, split(rng, 1)))
    return MetricReport(value, A.shape[0], B.shape[0], baseline)


def baseline_value(target: Target, rng: RngState, S: int) -> float:
    """Marginal-Wasserstein between two independent exact sample sets of size ``S``."""
    if S < 2:
        raise ValueError(f"S must be >= 2, got {S}")
    A = target.exact_sample(split(rng, 0), S)
    B = target.exact_sample(split(rng, 1), S)
    return marginal_wasserstein(A, B)
