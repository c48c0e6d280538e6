import numpy as np
import pytest

from flowvi import flow
from flowvi.flow import FlowConfig, flow_log_density, random_params, zero_params
from flowvi.objectives import (Estimator, GradientEstimate, elbo_estimate, estimate,
                               finite_difference_grad, forward_kl_loss_and_grad, grad_stl, grad_total,
                               per_sample_gradients)
from flowvi.rng import RngState, split, standard_normal_matrix
from flowvi.targets import gaussian_target, get_target

RNG = RngState(21)
SMALL = FlowConfig(2, 2, 4)


def rel_err(g, fd):
    return np.max(np.abs(g - fd) / np.maximum(1.0, np.abs(fd)))


def stl_closure(params, target, E):
    """Oracle for STL: z from the live parameters, log q with the parameters frozen."""
    frozen = params.with_theta(params.theta.copy())

    def f(theta):
        Z = flow.forward(params.with_theta(theta), E).output
        return float(np.mean(target.log_density(Z) - flow_log_density(frozen, Z)))

    return f


@pytest.fixture
def small_problem():
    p = random_params(SMALL, split(RNG, 1), 0.4)
    E = standard_normal_matrix(split(RNG, 2), 64, 2)
    return p, get_target("funnel-2"), E


def test_total_gradient_fd(small_problem, backend):
    p, t, E = small_problem
    est = grad_total(p, t, E, backend)
    assert est.objective_value == pytest.approx(elbo_estimate(p, t, E), rel=1e-12)
    fd = finite_difference_grad(p, lambda th: elbo_estimate(p.with_theta(th), t, E), 1e-6)
    assert rel_err(est.grad, fd) < 1e-5


def test_stl_gradient_fd(small_problem, backend):
    p, t, E = small_problem
    est = grad_stl(p, t, E, backend)
    assert est.objective_value == pytest.approx(elbo_estimate(p, t, E), rel=1e-12)
    fd = finite_difference_grad(p, stl_closure(p, t, E), 1e-6)
    assert rel_err(est.grad, fd) < 1e-5


def test_forward_kl_gradient_fd(backend):
    p = random_params(SMALL, split(RNG, 3), 0.4)
    X = get_target("banana-2").exact_sample(split(RNG, 4), 64) / 5.0
    est = forward_kl_loss_and_grad(p, X, backend)
    assert est.objective_value == pytest.approx(np.mean(flow_log_density(p, X)), rel=1e-12)
    assert est.loss == -est.objective_value
    fd = finite_difference_grad(p, lambda th: float(np.mean(flow_log_density(p.with_theta(th), X))), 1e-6)
    assert rel_err(est.grad, fd) < 1e-5


def test_fd_oracle_quadratic_and_steps():
    th = np.array([0.3, -1.2, 2.5])
    np.testing.assert_allclose(finite_difference_grad(th, lambda v: 0.5 * v @ v), th, rtol=1e-9)
    f = lambda v: float(np.sin(v).sum() + np.exp(0.3 * v).sum())
    np.testing.assert_allclose(finite_difference_grad(th, f, 1e-5), finite_difference_grad(th, f, 1e-7), rtol=1e-4)


def test_stl_zero_at_optimum(backend):
    # identity flow, unit Gaussian target: log p - log q == 0 as a function of z
    cfg = FlowConfig(3, 2, 5)
    p = zero_params(cfg)
    t = gaussian_target(np.eye(3))
    E = standard_normal_matrix(split(RNG, 5), 500, 3)
    G = per_sample_gradients(Estimator.STL, p, t, E, backend)
    assert G.shape == (500, cfg.num_params)
    assert np.max(np.abs(G)) <= 1e-12
    assert elbo_estimate(p, t, E) == 0.0
    total = per_sample_gradients(Estimator.TOTAL, p, t, E, backend)
    assert np.max(np.abs(total)) > 1e-3  # the score term is not zero per sample


def test_per_sample_rows_average_to_batch(small_problem, backend):
    p, t, E = small_problem
    for est in (Estimator.TOTAL, Estimator.STL):
        G = per_sample_gradients(est, p, t, E, backend)
        np.testing.assert_allclose(G.mean(axis=0), estimate(est, p, t, E, backend).grad, rtol=1e-10, atol=1e-13)
    X = E / 2
    G = per_sample_gradients(Estimator.FORWARD_KL, p, t, X, backend)
    np.testing.assert_allclose(G.mean(axis=0), forward_kl_loss_and_grad(p, X, backend).grad, rtol=1e-10, atol=1e-13)


def test_half_batches_average_to_full(small_problem):
    p, t, E = small_problem
    a, b = grad_total(p, t, E[:32]), grad_total(p, t, E[32:])
    full = grad_total(p, t, E)
    np.testing.assert_allclose(0.5 * (a.grad + b.grad), full.grad, rtol=1e-12, atol=1e-15)


def test_forward_kl_identity_entropy():
    p = zero_params(FlowConfig(10, 1, 2))
    X = standard_normal_matrix(split(RNG, 6), 10**6, 10)
    est = forward_kl_loss_and_grad(p, X)
    assert est.loss == pytest.approx(5 * np.log(2 * np.pi) + 5, abs=0.02)


def test_identity_flow_funnel_elbo_quadrature():
    t = get_target("funnel-2")
    p = zero_params(FlowConfig(2, 1, 2))
    E = standard_normal_matrix(split(RNG, 7), 10**6, 2)
    mc = elbo_estimate(p, t, E)
    x = np.linspace(-10, 10, 2001)
    X, Y = np.meshgrid(x, x, indexing="ij")
    G = np.stack([X.ravel(), Y.ravel()], 1)
    log_q = flow.base_log_density(G)
    integrand = np.exp(log_q) * (t.log_density(G) - log_q)
    from scipy.integrate import trapezoid

    quad = trapezoid(trapezoid(integrand.reshape(X.shape), x, axis=1), x)
    assert mc == pytest.approx(quad, abs=0.01)
    assert mc <= 0.0


def test_diverged_flag():
    e = GradientEstimate(1.0, np.array([0.0, np.nan]), Estimator.TOTAL, 4)
    assert e.diverged
    assert not GradientEstimate(1.0, np.zeros(2), Estimator.TOTAL, 4).diverged
    assert GradientEstimate(np.inf, np.zeros(2), Estimator.TOTAL, 4).diverged


def test_nonfinite_target_is_reported():
    t = get_target("funnel-2")
    p = random_params(FlowConfig(2, 1, 3), RNG, 0.1)
    E = standard_normal_matrix(RNG, 8, 2)
    E[0] = [-1000.0, 1.0]  # e^{-z1} overflows
    est = grad_total(p, t, E)
    assert est.diverged


def test_dimension_mismatch():
    p = random_params(FlowConfig(3, 1, 3), RNG, 0.1)
    with pytest.raises(ValueError):
        grad_total(p, get_target("funnel-2"), np.zeros((4, 3)))
    with pytest.raises(ValueError):
        grad_stl(p, get_target("funnel-3"), np.zeros((4, 2)))
