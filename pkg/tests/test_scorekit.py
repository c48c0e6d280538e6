import numpy as np
import pytest

from flowvi.rng import RngState, split
from flowvi.scorekit import score
from flowvi.targets import get_target

RNG = RngState(7)
NAMES = ["funnel-2", "funnel-6", "banana-2", "banana-4", "funana-3", "funana-5",
         "student_t_1_5-2", "student_t_2_5-3", "icg-4"]


def fd_score(target, Z, h=1e-5):
    g = np.empty_like(Z)
    for j in range(Z.shape[1]):
        e = np.zeros(Z.shape[1])
        e[j] = h
        g[:, j] = (target.log_density(Z + e) - target.log_density(Z - e)) / (2 * h)
    return g


@pytest.mark.parametrize("name", NAMES)
def test_score_matches_finite_differences(name):
    t = get_target(name)
    Z = t.exact_sample(split(RNG, 1), 1000)
    Z = Z[np.abs(Z[:, 0]) < 6]  # keep funnel necks resolvable by the FD step
    g = score(t, Z)
    fd = fd_score(t, Z)
    scale = np.maximum(1.0, np.abs(g))
    assert np.max(np.abs(g - fd) / scale) < 1e-6


def test_funnel_score_at_origin():
    np.testing.assert_array_equal(score(get_target("funnel-2"), np.zeros((1, 2))), [[-0.5, 0.0]])


def test_gaussian_score_is_minus_precision_z():
    t = get_target("icg-4")
    Z = t.exact_sample(split(RNG, 2), 10)
    np.testing.assert_allclose(score(t, Z), -Z @ t.precomputed["precision"], rtol=1e-9, atol=1e-9)
    np.testing.assert_array_equal(score(t, np.zeros((1, 4))), np.zeros((1, 4)))


def test_funnel_score_extreme_rows():
    g = score(get_target("funnel-2"), np.array([[-800.0, 0.0], [800.0, 1.0]]))
    assert np.all(np.isfinite(g))


@pytest.mark.parametrize("name,nse", [("funnel-2", 3), ("banana-3", 3), ("funana-3", 3),
                                      ("student_t_2_5-2", 3), ("student_t_1_5-2", 5), ("icg-3", 3)])
def test_stein_mean_zero(name, nse):
    t = get_target(name)
    g = score(t, t.exact_sample(split(RNG, 3), 10**6))
    se = g.std(axis=0) / np.sqrt(g.shape[0])
    assert np.all(np.abs(g.mean(axis=0)) < nse * se + 1e-12)


def test_shape_checked():
    with pytest.raises(ValueError):
        score(get_target("funnel-2"), np.zeros((2, 3)))
