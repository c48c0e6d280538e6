import numpy as np
import pytest
from scipy import stats

from flowvi.rng import (RngState, chi_square_draws, gamma_draws, random_orthogonal, split,
                        standard_normal_matrix, uniform_draws)

S0 = RngState(1234)


def test_split_deterministic():
    assert split(S0, 0) == split(S0, 0)
    np.testing.assert_array_equal(split(S0, 7).bits(16), split(S0, 7).bits(16))


def test_split_path_matters():
    assert split(split(S0, 0), 1) != split(split(S0, 1), 0)
    assert split(S0, 0) != split(S0, 1)


def test_sibling_streams_uncorrelated():
    a = standard_normal_matrix(split(S0, 0), 1000, 1)[:, 0]
    b = standard_normal_matrix(split(S0, 1), 1000, 1)[:, 0]
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.1


def test_seed_range_checked():
    with pytest.raises(ValueError):
        RngState(-1)
    with pytest.raises(ValueError):
        RngState(1 << 64)
    RngState((1 << 64) - 1)


def test_normal_moments():
    x = standard_normal_matrix(split(S0, 2), 10**6, 1)[:, 0]
    assert -0.004 <= x.mean() <= 0.004
    assert 0.995 <= x.var() <= 1.005


def test_normal_ks():
    x = standard_normal_matrix(split(S0, 3), 10**5, 1)[:, 0]
    assert stats.kstest(x, "norm").statistic < 0.006


def test_normal_replay():
    a = standard_normal_matrix(split(S0, 4), 1, 3)
    b = standard_normal_matrix(split(S0, 4), 1, 3)
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        standard_normal_matrix(S0, 0, 3)


def test_uniform_moments():
    u = uniform_draws(split(S0, 5), 10**6)
    assert u.min() >= 0.0 and u.max() < 1.0
    se = np.sqrt(1 / 12 / u.size)
    assert abs(u.mean() - 0.5) < 3 * se
    assert abs(u.var() - 1 / 12) < 3 * np.sqrt(1 / 180 / u.size)


@pytest.mark.parametrize("shape,scale,lo,hi", [(0.5, 1.0, 0.497, 0.503), (1.0, 2.0, 1.99, 2.01)])
def test_gamma_means(shape, scale, lo, hi):
    g = gamma_draws(split(S0, 6), shape, scale, 10**6)
    assert np.all(g > 0)
    assert lo <= g.mean() <= hi


@pytest.mark.parametrize("shape", [0.5, 0.75, 1.25, 3.0])
def test_gamma_distribution(shape):
    g = gamma_draws(split(S0, 8), shape, 1.0, 10**5)
    assert stats.kstest(g, "gamma", args=(shape,)).pvalue > 1e-3
    se = np.sqrt(2 * shape**2 * (shape + 3) / g.size)  # sd of the sample variance, approx.
    assert abs(g.var() - shape) < 5 * se


def test_gamma_rejects_bad_args():
    with pytest.raises(ValueError):
        gamma_draws(S0, 0.0, 1.0, 3)
    with pytest.raises(ValueError):
        gamma_draws(S0, 1.0, -1.0, 3)


def test_chi_square_mean():
    c = chi_square_draws(split(S0, 9), 2.5, 10**6)
    assert abs(c.mean() - 2.5) < 3 * np.sqrt(2 * 2.5 / c.size)


def test_orthogonal():
    assert random_orthogonal(S0, 1)[0, 0] in (1.0, -1.0)
    q = random_orthogonal(split(S0, 10), 10)
    assert np.max(np.abs(q.T @ q - np.eye(10))) < 1e-10
    np.testing.assert_array_equal(random_orthogonal(split(S0, 11), 3), random_orthogonal(split(S0, 11), 3))


def test_orthogonal_haar_first_entry():
    # for Haar Q in d dims, Q[0, 0]^2 ~ Beta(1/2, (d-1)/2)
    d = 4
    x = np.array([random_orthogonal(split(S0, 100 + i), d)[0, 0] for i in range(2000)])
    assert stats.kstest(x**2, "beta", args=(0.5, (d - 1) / 2)).pvalue > 1e-3
    assert abs(np.mean(x > 0) - 0.5) < 0.05
