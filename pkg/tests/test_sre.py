import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy.special import digamma

from volqml.errors import ConstraintError, DivergenceError, NumericError
from volqml.innovations import InnovationSpec, RngStream, draw
from volqml.models import ModelSpec, eval_g
from volqml.sre import (
    backward_iterate,
    companion_matrices,
    companion_matrix,
    egarch_invertibility_check,
    egarch_truncation,
    estimate_contraction,
    forward_iterate,
    lyapunov_agarch,
    scan_contraction,
    simulate_from,
    simulate_stationary,
    spectral_radius_C,
)

GARCH = ModelSpec("garch")
NORMAL = InnovationSpec()


def _garch_map(theta, z):
    def phi(t, s):
        return np.array([eval_g(GARCH, theta, [math.sqrt(s[0]) * z[t]], s)])

    return phi


class TestIterates:
    def test_geometric(self):
        out = forward_iterate(lambda t, s: 0.5 * s, 1.0, 3)
        assert_array_equal(out[:, 0], [0.5, 0.25, 0.125])

    def test_zero_steps(self):
        assert forward_iterate(lambda t, s: s, [1.0, 2.0], 0).shape == (0, 2)

    def test_constant_garch_pins_after_one_step(self):
        z = draw(NORMAL, RngStream(1), 5)
        out = forward_iterate(_garch_map([0.7, 0.0, 0.0], z), 9.0, 5)
        assert_array_equal(out[:, 0], 0.7)

    def test_overflow_reports_step(self):
        with pytest.raises(NumericError) as info, np.errstate(over="ignore"):
            forward_iterate(lambda t, s: s * 1e200, 1.0, 5)
        assert info.value.index == 2

    def test_contraction_bound(self):
        z = draw(NORMAL, RngStream(2), 50)
        theta = [0.1, 0.2, 0.5]
        phi = _garch_map(theta, z)
        a = forward_iterate(phi, 0.2, 50)[:, 0]
        b = forward_iterate(phi, 5.0, 50)[:, 0]
        # Lipschitz constant of s -> alpha0 + (alpha1 z^2 + beta) s is alpha1 z^2 + beta
        lam = np.cumprod(0.2 * z**2 + 0.5)
        assert np.all(np.abs(a - b) <= lam * 4.8 * (1 + 1e-12) + 1e-14)

    def test_backward_converges_to_forward(self):
        z = draw(NORMAL, RngStream(3), 3000)
        phi = _garch_map([0.1, 0.2, 0.5], z)
        fwd = forward_iterate(phi, 1.0, 3000)[:, 0]
        t = 2500
        values = [backward_iterate(phi, t, m, init)[0] for m, init in ((1000, 0.01), (2000, 50.0))]
        assert abs(values[0] - values[1]) < 1e-8
        assert abs(values[1] - fwd[t - 1]) < 1e-8


class TestSimulation:
    def test_iid_case(self):
        path = simulate_stationary(GARCH, [1.0, 0.0, 0.0], NORMAL, RngStream(4), 100, burn_in=10)
        assert_array_equal(path.sigma2, 1.0)
        assert_array_equal(path.x, path.z)

    def test_egarch_beta_zero_is_exact(self):
        theta = np.array([0.2, 0.0, -0.1, 0.3])
        path = simulate_stationary(ModelSpec("egarch"), theta, NORMAL, RngStream(5), 200, burn_in=0, certificate=False)
        z_prev = np.concatenate([path.meta["z_ext"][:1], path.z[:-1]])
        expected = 0.2 - 0.1 * z_prev + 0.3 * np.abs(z_prev)
        assert_allclose(np.log(path.sigma2), expected, rtol=1e-14, atol=1e-15)

    def test_start_value_forgotten(self):
        theta = [0.1, 0.2, 0.5]
        a = simulate_stationary(GARCH, theta, NORMAL, RngStream(6), 300, burn_in=500, init=0.01)
        b = simulate_stationary(GARCH, theta, NORMAL, RngStream(6), 300, burn_in=500, init=40.0)
        assert np.max(np.abs(a.x - b.x)) < 1e-8
        assert a.certificate_gap < 1e-8

    def test_certificate_warns_on_short_burn_in(self):
        with pytest.warns(RuntimeWarning, match="certificate"):
            simulate_stationary(GARCH, [0.1, 0.1, 0.85], NORMAL, RngStream(7), 10, burn_in=5)

    def test_divergence_raises(self):
        with pytest.raises(DivergenceError):
            simulate_from(ModelSpec("garch", 1, 1), [0.1, 5.0, 0.9], draw(NORMAL, RngStream(8), 5000), 1.0)

    def test_replay(self):
        m = ModelSpec("agarch", 2, 3)
        theta = [0.1, 0.1, 0.05, 0.2, 0.2, 0.1, -0.3]
        a = simulate_stationary(m, theta, NORMAL, RngStream(9), 100)
        b = simulate_stationary(m, theta, NORMAL, RngStream(9), 100)
        assert_array_equal(a.x, b.x)
        assert a.data.size == 102

    def test_x_equals_sigma_z(self):
        path = simulate_stationary(ModelSpec("egarch"), [-0.1, 0.8, -0.1, 0.3], NORMAL, RngStream(10), 500)
        assert_allclose(path.x, np.sqrt(path.sigma2) * path.z, rtol=1e-15)

    def test_empty_window(self):
        path = simulate_stationary(GARCH, [0.1, 0.2, 0.5], NORMAL, RngStream(1), 0)
        assert path.n == 0

    @pytest.mark.slow
    def test_unconditional_variance(self):
        path = simulate_stationary(GARCH, [0.1, 0.2, 0.5], NORMAL, RngStream(11), 100_000)
        assert abs(path.x.var() / (1 / 3) - 1) < 0.05


class TestLyapunov:
    def test_deterministic_product_is_exact(self):
        est = lyapunov_agarch(GARCH, [0.1, 0.0, 0.5], NORMAL, RngStream(1), 1000, 10)
        assert est.rho_hat == math.log(0.5) and est.std_error == 0.0

    def test_closed_form_arch(self):
        truth = math.log(0.5) + digamma(0.5) + math.log(2)
        est = lyapunov_agarch(GARCH, [0.1, 0.5, 0.0], NORMAL, RngStream(2), 10_000, 50)
        assert abs(est.rho_hat - truth) < 3 * est.std_error
        assert est.verdict == "stationary"

    def test_nonstationary_sign(self):
        est = lyapunov_agarch(GARCH, [0.1, 1.0, 0.5], NORMAL, RngStream(3), 10_000, 20)
        z = draw(NORMAL, RngStream(99), 10**6)
        assert np.mean(np.log(z**2 + 0.5)) > 0
        assert est.rho_hat > 0 and est.verdict == "non-stationary"

    def test_matches_direct_scalar_mc(self):
        est = lyapunov_agarch(GARCH, [0.1, 0.3, 0.6], NORMAL, RngStream(4), 10_000, 50)
        z = draw(NORMAL, RngStream(5), 500_000)
        v = np.log(0.3 * z**2 + 0.6)
        se = math.hypot(est.std_error, v.std() / math.sqrt(v.size))
        assert abs(est.rho_hat - v.mean()) < 3 * se

    def test_norms_agree_for_matrix_products(self):
        m = ModelSpec("agarch", 2, 2)
        theta = [0.1, 0.1, 0.05, 0.4, 0.2, 0.2]
        fro = lyapunov_agarch(m, theta, NORMAL, RngStream(6), 5000, 10)
        op = lyapunov_agarch(m, theta, NORMAL, RngStream(6), 5000, 10, norm="operator")
        assert abs(fro.rho_hat - op.rho_hat) < 1e-3
        assert fro.rho_hat < 0 and op.norm == "operator"

    def test_companion_entries(self):
        A = companion_matrices(np.array([0.2, 0.1]), np.array([0.5, 0.1]), np.array([2.0]))[0]
        expected = np.array([[0.2 * 2 + 0.5, 0.1, 0.1], [1, 0, 0], [2.0, 0, 0]])
        assert_allclose(A, expected)

    def test_rejects_egarch(self):
        with pytest.raises(ConstraintError):
            lyapunov_agarch(ModelSpec("egarch"), [0, 0.5, 0, 0.1], NORMAL, RngStream(1))


class TestSpectral:
    def test_scalar(self):
        assert spectral_radius_C([0.5]) == (0.5, 0.5)

    def test_quadratic(self):
        radius, bound = spectral_radius_C([0.3, 0.2])
        assert_allclose(radius, (0.3 + math.sqrt(0.89)) / 2, rtol=1e-12)
        assert_allclose(bound, math.sqrt(0.5))
        assert radius < bound

    def test_bound_is_attained_on_last_lag(self):
        radius, bound = spectral_radius_C([0.0, 0.0, 0.343])
        assert_allclose(radius, bound, rtol=1e-12)

    def test_companion_layout(self):
        assert_array_equal(companion_matrix([0.3, 0.2]), [[0.3, 0.2], [1.0, 0.0]])

    def test_negative_beta_rejected(self):
        with pytest.raises(ConstraintError):
            spectral_radius_C([0.3, -0.1])


class TestContraction:
    def test_scalar_power(self):
        d = estimate_contraction(GARCH, [0.1, 0.2, 0.5], r=4)
        assert_allclose(d.log_lambda_mean, math.log(0.5), rtol=1e-14)

    def test_gelfand(self):
        m = ModelSpec("garch", 1, 2)
        values = [estimate_contraction(m, [0.1, 0.1, 0.3, 0.2], r=r).log_lambda_mean for r in (20, 64)]
        target = math.log(spectral_radius_C([0.3, 0.2])[0])
        assert abs(values[1] - target) < abs(values[0] - target) + 1e-12
        assert abs(values[1] - target) < 0.05

    def test_scan_finds_negative(self):
        best, diags = scan_contraction(ModelSpec("garch", 1, 3), [0.1, 0.1, 0.3, 0.3, 0.3])
        assert len(diags) == 7 and best.log_lambda_mean < 0 and best.contractive

    def test_egarch_closed_form(self):
        truth = 0.5 * (digamma(0.5) + math.log(2)) - math.log(2) + 0.5 * math.sqrt(2 / math.pi)
        d = egarch_invertibility_check([0, 0, 0, 1], NORMAL, RngStream(3))
        assert abs(d.log_lambda_mean - truth) < 3 * d.std_error

    def test_egarch_deterministic_case(self):
        d = egarch_invertibility_check([0.3, 0.6, 0, 0], NORMAL, RngStream(1), n_samples=100)
        assert_allclose(d.log_lambda_mean, math.log(0.6), rtol=1e-14)

    @pytest.mark.parametrize("delta", [0.25, 0.5, 1.0])
    def test_egarch_half_gamma_region(self, delta):
        d = egarch_invertibility_check([0, 0, 0.5 * delta, delta], NORMAL, RngStream(2), n_samples=20_000)
        assert d.verdict == "invertible"

    def test_egarch_rejects_delta_below_gamma(self):
        with pytest.raises(ConstraintError):
            egarch_invertibility_check([0, 0.5, 0.3, 0.1], NORMAL, RngStream(1))

    def test_truncation(self):
        assert egarch_truncation(0.0) == 0
        K = egarch_truncation(0.5, 1e-12)
        assert 0.5**K / 0.5 <= 1e-12 < 0.5 ** (K - 1) / 0.5

    def test_egarch_path_form(self):
        model = ModelSpec("egarch")
        theta = [-0.1, 0.8, -0.1, 0.3]
        path = simulate_stationary(model, theta, NORMAL, RngStream(4), 5000)
        d = estimate_contraction(model, theta, path=path)
        assert d.n == 5000 and d.contractive
