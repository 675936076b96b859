import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from volqml.errors import CovarianceError
from volqml.filtering import FilterConfig, run_filter
from volqml.innovations import InnovationSpec, RngStream, draw
from volqml.likelihood import evaluate, hessian, information_pieces, loglik, score
from volqml.models import ModelSpec
from volqml.sre import simulate_stationary

GARCH = ModelSpec("garch")
CONST = ModelSpec("garch", 0, 0)


def test_unit_volatility():
    x = draw(InnovationSpec(), RngStream(1), 50)
    assert_allclose(loglik(CONST, [1.0], x).loglik, -0.5 * np.sum(x**2), rtol=1e-14)


def test_hand_value():
    val = loglik(GARCH, [0.5, 0.2, 0.3], [1.0, -1.0, 2.0], FilterConfig(init=1.0))
    assert_allclose(val.loglik, -2.5, rtol=1e-15)
    assert val.n_terms == 2


def test_no_terms():
    val = evaluate(GARCH, [0.1, 0.2, 0.5], [1.0], order=2)
    assert val.loglik == 0.0 and val.n_terms == 0
    assert_array_equal(val.score, 0.0)


def test_warmup_skip_drops_terms():
    x = draw(InnovationSpec(), RngStream(2), 100)
    full = run_filter(GARCH, [0.1, 0.2, 0.5], x)
    val = loglik(GARCH, [0.1, 0.2, 0.5], x, FilterConfig(warmup_skip=10))
    expected = -0.5 * np.sum(x[11:] ** 2 / full.h[10:] + np.log(full.h[10:]))
    assert val.n_terms == 89
    assert_allclose(val.loglik, expected, rtol=1e-13)


def test_score_vanishes_for_unit_squares():
    # Rademacher innovations with exact init give x_t^2 / h_t = 1 for every t
    theta = np.array([0.1, 0.2, 0.5])
    path = simulate_stationary(GARCH, theta, InnovationSpec("rademacher"), RngStream(3), 300)
    g = score(GARCH, theta, path.data, FilterConfig(init=path.state_pre))
    assert np.max(np.abs(g)) < 1e-10


@pytest.mark.parametrize("model, theta", [
    (ModelSpec("agarch", 1, 1), np.array([0.1, 0.2, 0.5, 0.3])),
    (ModelSpec("garch", 2, 1), np.array([0.1, 0.1, 0.1, 0.6])),
    (ModelSpec("egarch"), np.array([-0.1, 0.8, -0.1, 0.3])),
], ids=["agarch11", "garch21", "egarch"])
def test_derivatives_match_finite_differences(model, theta):
    data = simulate_stationary(model, theta, InnovationSpec(), RngStream(4), 400).data
    at = theta * 1.05
    g, H = score(model, at, data), hessian(model, at, data)
    g_fd, H_fd = np.empty_like(g), np.empty_like(H)
    for i in range(theta.size):
        e = np.zeros_like(at)
        e[i] = 1e-5 * max(1.0, abs(at[i]))
        g_fd[i] = (loglik(model, at + e, data).loglik - loglik(model, at - e, data).loglik) / (2 * e[i])
        H_fd[:, i] = (score(model, at + e, data) - score(model, at - e, data)) / (2 * e[i])
    assert np.linalg.norm(g - g_fd) < 1e-6 * np.linalg.norm(g_fd)
    assert np.linalg.norm(H - H_fd) < 1e-5 * np.linalg.norm(H_fd)
    assert_array_equal(H, H.T)


class TestInformation:
    def test_constant_model(self):
        x = draw(InnovationSpec(), RngStream(5), 200_000)
        M, kurt = information_pieces(CONST, [1.0], x)
        assert_allclose(M, [[1.0]], rtol=1e-14)
        assert abs(kurt - 2.0) < 0.05

    def test_scaling(self):
        x = draw(InnovationSpec(), RngStream(6), 100)
        M, kurt = information_pieces(CONST, [2.0], x)
        assert_allclose(M, [[0.25]], rtol=1e-14)
        assert_allclose(kurt, np.mean((x**2 / 2) ** 2) - 1, rtol=1e-13)

    def test_singular_raises(self):
        # alpha1 and beta1 are not identified when the data are constant
        with pytest.raises(CovarianceError):
            information_pieces(GARCH, [0.5, 0.2, 0.3], np.ones(50), FilterConfig(init=1.0))

    def test_no_terms_raises(self):
        with pytest.raises(CovarianceError):
            information_pieces(GARCH, [0.1, 0.2, 0.5], [1.0])
