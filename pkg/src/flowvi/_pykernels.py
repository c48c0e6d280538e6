"""Pure numpy coupling-flow kernels.

Reference implementation of the four batch kernels used by :mod:`flowvi.flow`
and :mod:`flowvi.objectives`; ``_ckernels`` implements the same contract row by
row in compiled code. Arguments shared by all kernels:

theta : (P,) float64
    Flat parameter vector.
layout : (T, 10) int64
    One row per transition: ``c0, cn, t0, tn`` (conditioning / transformed
    coordinate ranges) followed by the offsets of ``W1, b1, W2, b2, W3, b3``.
hidden : int
    Hidden width ``H``.
slope : float
    Leaky-ReLU slope.

The vjp kernels return gradients of a row-summed scalar; callers divide by
the batch size. With ``per_sample=True`` the parameter gradient is returned
as an ``(S, P)`` matrix, one row per input row.
"""
from __future__ import annotations

import numpy as np

NAME = "python"


def _weights(theta, row, H):
    c0, cn, t0, tn, oW1, ob1, oW2, ob2, oW3, ob3 = (int(v) for v in row)
    W1 = theta[oW1:oW1 + cn * H].reshape(cn, H)
    b1 = theta[ob1:ob1 + H]
    W2 = theta[oW2:oW2 + H * H].reshape(H, H)
    b2 = theta[ob2:ob2 + H]
    W3 = theta[oW3:oW3 + H * 2 * tn].reshape(H, 2 * tn)
    b3 = theta[ob3:ob3 + 2 * tn]
    return (c0, cn, t0, tn), (W1, b1, W2, b2, W3, b3)


def _lrelu(x, slope):
    return np.maximum(x, slope * x)


def mlp(theta, row, H, slope, xc):
    """Conditioner of one transition: hidden activations, ``s`` and ``t``."""
    (_, _, _, tn), (W1, b1, W2, b2, W3, b3) = _weights(theta, row, H)
    h1 = _lrelu(xc @ W1 + b1, slope)
    h2 = _lrelu(h1 @ W2 + b2, slope)
    o = h2 @ W3 + b3
    return h1, h2, np.tanh(o[:, :tn]), o[:, tn:]


def _mlp_backward(theta, row, H, slope, xc, h1, h2, do, grad, per_sample):
    # returns d/dxc; accumulates parameter gradients into ``grad`` if given
    (_, cn, _, tn), (W1, b1, W2, b2, W3, b3) = _weights(theta, row, H)
    oW1, ob1, oW2, ob2, oW3, ob3 = (int(v) for v in row[4:])
    dp2 = (do @ W3.T) * np.where(h2 > 0, 1.0, slope)
    dp1 = (dp2 @ W2.T) * np.where(h1 > 0, 1.0, slope)
    if grad is not None:
        if per_sample:
            S = xc.shape[0]
            grad[:, oW3:oW3 + H * 2 * tn] += np.einsum("sh,so->sho", h2, do).reshape(S, -1)
            grad[:, ob3:ob3 + 2 * tn] += do
            grad[:, oW2:oW2 + H * H] += np.einsum("sh,sk->shk", h1, dp2).reshape(S, -1)
            grad[:, ob2:ob2 + H] += dp2
            grad[:, oW1:oW1 + cn * H] += np.einsum("sa,sk->sak", xc, dp1).reshape(S, -1)
            grad[:, ob1:ob1 + H] += dp1
        else:
            grad[oW3:oW3 + H * 2 * tn] += (h2.T @ do).ravel()
            grad[ob3:ob3 + 2 * tn] += do.sum(axis=0)
            grad[oW2:oW2 + H * H] += (h1.T @ dp2).ravel()
            grad[ob2:ob2 + H] += dp2.sum(axis=0)
            grad[oW1:oW1 + cn * H] += (xc.T @ dp1).ravel()
            grad[ob1:ob1 + H] += dp1.sum(axis=0)
    return dp1 @ W1.T


def _new_grad(theta, S, per_sample):
    return np.zeros((S, theta.size)) if per_sample else np.zeros(theta.size)


def forward(theta, layout, hidden, slope, X):
    """Push rows of ``X`` through all transitions; returns ``(Y, log_det)``."""
    x = np.array(X, dtype=float, copy=True)
    logdet = np.zeros(x.shape[0])
    for row in layout:
        c0, cn, t0, tn = (int(v) for v in row[:4])
        _, _, s, t = mlp(theta, row, hidden, slope, x[:, c0:c0 + cn])
        x[:, t0:t0 + tn] = x[:, t0:t0 + tn] * np.exp(s) + t
        logdet += s.sum(axis=1)
    return x, logdet


def inverse(theta, layout, hidden, slope, Y):
    """Invert :func:`forward`; ``log_det`` is ``log|det dT^{-1}|``."""
    x = np.array(Y, dtype=float, copy=True)
    logdet = np.zeros(x.shape[0])
    for row in layout[::-1]:
        c0, cn, t0, tn = (int(v) for v in row[:4])
        _, _, s, t = mlp(theta, row, hidden, slope, x[:, c0:c0 + cn])
        x[:, t0:t0 + tn] = (x[:, t0:t0 + tn] - t) * np.exp(-s)
        logdet -= s.sum(axis=1)
    return x, logdet


def forward_vjp(theta, layout, hidden, slope, X, dY, logdet_coef, per_sample=False):
    """Gradient of ``sum_i dY_i . Y_i + logdet_coef * log_det_i``.

    Returns ``(Y, log_det, grad_theta, dX)``.
    """
    x = np.array(X, dtype=float, copy=True)
    S = x.shape[0]
    logdet = np.zeros(S)
    cache = []
    for row in layout:
        c0, cn, t0, tn = (int(v) for v in row[:4])
        xc = x[:, c0:c0 + cn].copy()
        h1, h2, s, t = mlp(theta, row, hidden, slope, xc)
        es = np.exp(s)
        xt = x[:, t0:t0 + tn].copy()
        cache.append((xc, xt, h1, h2, s, es))
        x[:, t0:t0 + tn] = xt * es + t
        logdet += s.sum(axis=1)
    grad = _new_grad(theta, S, per_sample)
    g = np.array(dY, dtype=float, copy=True)
    for row, (xc, xt, h1, h2, s, es) in zip(layout[::-1], cache[::-1]):
        c0, cn, t0, tn = (int(v) for v in row[:4])
        dyt = g[:, t0:t0 + tn]
        ds = dyt * xt * es + logdet_coef
        do = np.concatenate([ds * (1.0 - s * s), dyt], axis=1)
        g[:, t0:t0 + tn] = dyt * es
        g[:, c0:c0 + cn] += _mlp_backward(theta, row, hidden, slope, xc, h1, h2, do, grad, per_sample)
    return x, logdet, grad, g


def inverse_vjp(theta, layout, hidden, slope, Y, dX=None, base_coef=0.0, logdet_coef=0.0,
                param_grad=True, per_sample=False):
    """Gradient of ``sum_i dX_i . X_i + base_coef * log N(X_i) + logdet_coef * log_det_i``.

    ``X = T^{-1}(Y)``, ``log N`` is the standard normal log-density. Returns
    ``(X, log_det, grad_theta or None, dY)``.
    """
    x = np.array(Y, dtype=float, copy=True)
    S = x.shape[0]
    logdet = np.zeros(S)
    cache = []
    for row in layout[::-1]:
        c0, cn, t0, tn = (int(v) for v in row[:4])
        xc = x[:, c0:c0 + cn].copy()
        h1, h2, s, t = mlp(theta, row, hidden, slope, xc)
        ems = np.exp(-s)
        x[:, t0:t0 + tn] = (x[:, t0:t0 + tn] - t) * ems
        cache.append((xc, x[:, t0:t0 + tn].copy(), h1, h2, s, ems))
        logdet -= s.sum(axis=1)
    grad = _new_grad(theta, S, per_sample) if param_grad else None
    g = np.zeros_like(x) if dX is None else np.array(dX, dtype=float, copy=True)
    if base_coef != 0.0:
        g -= base_coef * x
    for row, (xc, xt, h1, h2, s, ems) in zip(layout, cache[::-1]):
        c0, cn, t0, tn = (int(v) for v in row[:4])
        dxt = g[:, t0:t0 + tn]
        ds = -dxt * xt - logdet_coef
        do = np.concatenate([ds * (1.0 - s * s), -dxt * ems], axis=1)
        g[:, t0:t0 + tn] = dxt * ems
        g[:, c0:c0 + cn] += _mlp_backward(theta, row, hidden, slope, xc, h1, h2, do, grad, per_sample)
    return x, logdet, grad, g


def reparam_vjp(theta, layout, hidden, slope, E, score_fn, stl, per_sample=False):
    """Reparameterization gradient of ``sum_i log p(Z_i) - log q(Z_i)``, ``Z = T(E)``.

    ``score_fn(Z) -> (log_p, grad_z log_p)``. The total gradient
    differentiates both paths; with ``stl`` the density is evaluated by a
    separate inverse pass with parameters held fixed, and only the path
    through ``Z`` is differentiated. Returns ``(Z, log_det, log_p, grad)``.
    """
    Z, logdet = forward(theta, layout, hidden, slope, E)
    logp, dY = score_fn(Z)
    if stl:
        _, _, _, score_q = inverse_vjp(theta, layout, hidden, slope, Z, None, 1.0, 1.0,
                                       param_grad=False)
        dY = dY - score_q
    _, _, grad, _ = forward_vjp(theta, layout, hidden, slope, E, dY, 0.0 if stl else 1.0,
                                per_sample=per_sample)
    return Z, logdet, np.asarray(logp, dtype=float), grad
