import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from volqml.errors import ConstraintError, FitError
from volqml.filtering import FilterConfig
from volqml.innovations import InnovationSpec, RngStream, draw
from volqml.likelihood import loglik
from volqml.models import CompactRegion, ModelSpec
from volqml.qmle import FitOptions, covariance, fit, residuals

GARCH = ModelSpec("garch")


def _quiet_fit(*args, **kwargs):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fit(*args, **kwargs)


@pytest.fixture(scope="module")
def garch_fit(garch_path):
    return _quiet_fit(GARCH, garch_path.data)


def test_estimate_near_truth(garch_fit):
    err = garch_fit.theta_hat.values - np.array([0.1, 0.2, 0.5])
    assert np.all(np.abs(err) < 4 * garch_fit.std_errors)
    assert garch_fit.converged


def test_best_start_dominates_every_start(garch_fit):
    for entry in garch_fit.starts:
        assert garch_fit.loglik >= entry["loglik_start"]
        assert garch_fit.loglik >= entry["loglik"] - 1e-9


def test_reported_loglik_matches_evaluation(garch_fit, garch_path):
    val = loglik(GARCH, garch_fit.theta_hat.values, garch_path.data).loglik
    assert_allclose(garch_fit.loglik, val, rtol=1e-14)


def test_estimate_in_region(garch_fit):
    assert CompactRegion.default(GARCH).contains(garch_fit.theta_hat.values)


def test_standard_errors_from_v0(garch_fit):
    assert_allclose(garch_fit.std_errors, np.sqrt(np.diag(garch_fit.V0) / garch_fit.n))
    assert_allclose(garch_fit.vcov, garch_fit.V0 / garch_fit.n)


def test_frozen_coefficient(garch_path):
    rep = _quiet_fit(GARCH, garch_path.data, options=FitOptions(frozen={"alpha1": 0.2}))
    assert rep.theta_hat.values[1] == 0.2 and rep.std_errors[1] == 0.0


def test_nested_fit_is_bit_identical(garch_path):
    """AGARCH with gamma frozen at 0 reproduces GARCH exactly."""
    g = _quiet_fit(GARCH, garch_path.data)
    a = _quiet_fit(ModelSpec("agarch"), garch_path.data, options=FitOptions(frozen={"gamma": 0.0}))
    assert_array_equal(a.theta_hat.values[:3], g.theta_hat.values)
    assert a.loglik == g.loglik


def test_scale_equivariance(garch_path):
    c = 3.0
    a = _quiet_fit(GARCH, garch_path.data)
    b = _quiet_fit(GARCH, c * garch_path.data)
    expected = a.theta_hat.values * np.array([c * c, 1, 1])
    assert_allclose(b.theta_hat.values, expected, rtol=1e-4)


def test_iid_data():
    x = draw(InnovationSpec(), RngStream(31), 3000) * 2.0
    rep = _quiet_fit(GARCH, x)
    a0, a1, b1 = rep.theta_hat.values
    assert a1 < 0.02
    assert_allclose(a0 / (1 - a1 - b1), np.var(x[1:]), rtol=0.05)


def test_boundary_estimate_warns():
    x = draw(InnovationSpec(), RngStream(32), 1000)
    with pytest.warns(RuntimeWarning, match="boundary"):
        rep = fit(GARCH, x, options=FitOptions(diagnostics=False))
    assert rep.active_constraints and not rep.std_errors_reliable


def test_residuals_equal_innovations_at_truth(garch_path):
    theta = np.array([0.1, 0.2, 0.5])
    z = residuals(GARCH, theta, garch_path.data, FilterConfig(init=garch_path.state_pre))
    assert_allclose(z, garch_path.z, rtol=1e-12)


class TestCovariance:
    def test_constant_model(self):
        c = 1.7
        m = ModelSpec("garch", 0, 0)
        x = np.sqrt(c) * draw(InnovationSpec(), RngStream(33), 200_000)
        V0, se = covariance(m, [c], x)
        z2 = x * x / c
        assert_allclose(V0, [[np.mean(z2 * z2 - 1) * c * c]], rtol=1e-12)
        assert abs(V0[0, 0] / (2 * c * c) - 1) < 0.03

    def test_constant_model_matches_sample_variance_of_mean(self):
        # alpha0-hat is the mean of X^2, whose variance is (E Z^4 - 1) c^2 / n
        m = ModelSpec("garch", 0, 0)
        x = draw(InnovationSpec(), RngStream(34), 5000)
        rep = _quiet_fit(m, x)
        assert_allclose(rep.theta_hat.values[0], np.mean(x * x), rtol=1e-7)
        assert_allclose(rep.std_errors[0], np.sqrt(np.mean((x * x / rep.theta_hat.values[0]) ** 2 - 1)
                                                    * rep.theta_hat.values[0] ** 2 / x.size), rtol=1e-6)


class TestFailures:
    def test_too_short(self):
        with pytest.raises(ConstraintError):
            fit(GARCH, np.ones(20))

    def test_every_start_fails(self):
        x = draw(InnovationSpec(), RngStream(35), 200)
        x[100] = np.inf
        with pytest.raises(FitError) as info:
            fit(GARCH, x)
        assert len(info.value.log) == 5

    def test_bad_start_shape(self):
        with pytest.raises(ConstraintError):
            fit(GARCH, np.ones(100), init=[0.1, 0.2])

    def test_unknown_frozen_name(self):
        with pytest.raises(ConstraintError):
            fit(GARCH, np.ones(100), options=FitOptions(frozen={"gamma": 0.0}))

    def test_options_validated(self):
        with pytest.raises(ConstraintError):
            FitOptions(hessian="newton")
