"""Objectives and their parameter gradients.

Reverse KL is optimized through the ELBO ``E_q[log p(z) - log q(z)]`` with
either the total reparameterization gradient or the sticking-the-landing
(STL) gradient, which drops the score term by holding the density
parameters fixed. Forward KL is fit on exact target samples by maximizing
``E_p[log q(x)]``.

Sign convention: ``GradientEstimate.objective_value`` is always a quantity
to *maximize* (the ELBO, or the mean flow log-density of exact samples) and
``grad`` is its gradient. ``loss`` / ``loss_grad`` give the minimization
view that the optimizer consumes.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import kernels
from .flow import FlowParams, base_log_density, forward, _args, _check_input
from .scorekit import score
from .targets import Target


class Objective(enum.Enum):
    REVERSE_KL = "reverse_kl"
    FORWARD_KL = "forward_kl"


class Estimator(enum.Enum):
    TOTAL = "total"
    STL = "stl"
    FORWARD_KL = "forward_kl"


@dataclass
class GradientEstimate:
    objective_value: float
    grad: np.ndarray
    estimator: Estimator
    batch_size: int

    @property
    def diverged(self) -> bool:
        """Any non-finite entry in the value or the gradient."""
        return not (np.isfinite(self.objective_value) and np.all(np.isfinite(self.grad)))

    @property
    def loss(self) -> float:
        return -self.objective_value

    @property
    def loss_grad(self) -> np.ndarray:
        return -self.grad


def _backend(backend):
    return kernels.backend if backend is None else backend


def _score_fn(target: Target):
    def fn(Z):
        return target.log_density(Z), score(target, Z)

    return fn


def elbo_estimate(params: FlowParams, target: Target, E: np.ndarray, backend=None) -> float:
    """Monte Carlo ELBO ``mean_i [log p(T(eps_i)) - log q(T(eps_i))]``."""
    E = _check_input(params, E)
    with np.errstate(all="ignore"):
        res = forward(params, E, backend)
        log_q = base_log_density(E) - res.log_det
        return float(np.mean(target.log_density(res.output) - log_q))


def _reparam(params, target, E, stl, per_sample, backend):
    E = _check_input(params, E)
    if target.dim != params.config.dim:
        raise ValueError(f"flow dim {params.config.dim} does not match target dim {target.dim}")
    with np.errstate(all="ignore"):
        Z, logdet, logp, grad = _backend(backend).reparam_vjp(
            *_args(params), E, _score_fn(target), stl, per_sample
        )
        terms = logp - (base_log_density(E) - logdet)
    return terms, grad


def grad_total(params: FlowParams, target: Target, E: np.ndarray, backend=None) -> GradientEstimate:
    """Exact gradient of :func:`elbo_estimate` for fixed noise ``E``."""
    terms, grad = _reparam(params, target, E, False, False, backend)
    S = E.shape[0]
    return GradientEstimate(float(np.mean(terms)), grad / S, Estimator.TOTAL, S)


def grad_stl(params: FlowParams, target: Target, E: np.ndarray, backend=None) -> GradientEstimate:
    """Sticking-the-landing gradient for fixed noise ``E``.

    The density ``log q`` is evaluated through the inverse pass with the
    parameters treated as constants; only the path ``theta -> z = T(eps)``
    is differentiated.
    """
    terms, grad = _reparam(params, target, E, True, False, backend)
    S = E.shape[0]
    return GradientEstimate(float(np.mean(terms)), grad / S, Estimator.STL, S)


def forward_kl_loss_and_grad(params: FlowParams, X: np.ndarray, backend=None) -> GradientEstimate:
    """Mean flow log-density of exact samples ``X`` and its gradient.

    ``loss`` of the result is the cross-entropy ``-mean_i log q(x_i)``,
    i.e. ``KL(p || q)`` up to the (constant) target entropy.
    """
    X = _check_input(params, X)
    S = X.shape[0]
    with np.errstate(all="ignore"):
        E, logdet, grad, _ = _backend(backend).inverse_vjp(
            *_args(params), X, None, 1.0, 1.0, param_grad=True, per_sample=False
        )
        value = float(np.mean(base_log_density(E) + logdet))
    return GradientEstimate(value, grad / S, Estimator.FORWARD_KL, S)


def estimate(estimator: Estimator, params: FlowParams, target: Target, batch: np.ndarray,
             backend=None) -> GradientEstimate:
    """Dispatch on ``estimator``; ``batch`` is base noise or exact samples."""
    if estimator is Estimator.TOTAL:
        return grad_total(params, target, batch, backend)
    if estimator is Estimator.STL:
        return grad_stl(params, target, batch, backend)
    return forward_kl_loss_and_grad(params, batch, backend)


def per_sample_gradients(estimator: Estimator, params: FlowParams, target: Target,
                         batch: np.ndarray, backend=None) -> np.ndarray:
    """``(S, P)`` per-sample gradients; their row mean is the batch gradient."""
    if estimator is Estimator.FORWARD_KL:
        X = _check_input(params, batch)
        with np.errstate(all="ignore"):
            _, _, grad, _ = _backend(backend).inverse_vjp(
                *_args(params), X, None, 1.0, 1.0, param_grad=True, per_sample=True
            )
        return grad
    _, grad = _reparam(params, target, batch, estimator is Estimator.STL, True, backend)
    return grad


def finite_difference_grad(params, closure: Callable[[np.ndarray], float], step: float = 1e-6) -> np.ndarray:
    """Central differences of ``closure(theta)`` in every coordinate.

    ``params`` is a :class:`FlowParams` or a plain parameter vector; the
    closure must be deterministic (fixed noise).
    """
    theta = np.array(params.theta if isinstance(params, FlowParams) else params, dtype=float)
    g = np.empty_like(theta)
    for i in range(theta.size):
        old = theta[i]
        theta[i] = old + step
        fp = closure(theta)
        theta[i] = old - step
        fm = closure(theta)
        theta[i] = old
        g[i] = (fp - fm) / (2.0 * step)
    return g
