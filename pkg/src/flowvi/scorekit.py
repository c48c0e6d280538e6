"""Closed-form scores ``grad_z log p(z)`` of the synthetic targets."""
from __future__ import annotations

import numpy as np

from .targets import BANANA_CURVATURE, Target, TargetKind

__all__ = ["score"]


def _funnel(Z):
    g = np.empty_like(Z)
    z1 = Z[:, 0]
    g[:, 0] = -z1 / 9.0
    if Z.shape[1] > 1:
        with np.errstate(over="ignore", invalid="ignore"):
            inv_var = np.exp(-z1)[:, None]
            rest = Z[:, 1:]
            scaled = np.where(rest == 0.0, 0.0, rest * inv_var)
            g[:, 1:] = -scaled
            g[:, 0] += -0.5 * rest.shape[1] + 0.5 * np.where(rest == 0.0, 0.0, rest * scaled).sum(axis=1)
    return g


def _banana(Z):
    g = -Z.copy()
    z1 = Z[:, 0]
    g[:, 0] = -z1 / 100.0
    if Z.shape[1] > 1:
        resid = Z[:, 1] - BANANA_CURVATURE * (z1 * z1 - 100.0)
        g[:, 1] = -resid
        g[:, 0] += resid * 2.0 * BANANA_CURVATURE * z1
    return g


def _funana(Z):
    g = np.empty_like(Z)
    z1 = Z[:, 0]
    mean = BANANA_CURVATURE * (z1 * z1 - 100.0)
    with np.errstate(over="ignore", invalid="ignore"):
        inv_var = np.exp(-z1)[:, None]
        resid = Z[:, 2:] - mean[:, None]
        scaled = resid * inv_var
        g[:, 2:] = -scaled
        dz1 = (-0.5 + 0.5 * resid * scaled + scaled * (2.0 * BANANA_CURVATURE) * z1[:, None]).sum(axis=1)
    g[:, 0] = -z1 / 9.0 + dz1
    g[:, 1] = -Z[:, 1] / 100.0
    return g


def _student_t(Z, nu):
    d = Z.shape[1]
    r2 = np.einsum("ij,ij->i", Z, Z)
    return -((nu + d) / (nu + r2))[:, None] * Z


def score(target: Target, Z: np.ndarray) -> np.ndarray:
    """Row-wise ``grad_z log p`` for an ``S x d`` matrix, same shape as ``Z``."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2 or Z.shape[1] != target.dim:
        raise ValueError(f"expected an S x {target.dim} matrix, got shape {Z.shape}")
    kind = target.kind
    if kind is TargetKind.FUNNEL:
        return _funnel(Z)
    if kind is TargetKind.BANANA:
        return _banana(Z)
    if kind is TargetKind.FUNANA:
        return _funana(Z)
    if kind is TargetKind.STUDENT_T:
        return _student_t(Z, target.spec.nu)
    return -Z @ target.precomputed["precision"]
