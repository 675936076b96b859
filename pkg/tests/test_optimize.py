import numpy as np
import pytest
from numpy.testing import assert_allclose

from volqml.errors import VolqmlError
from volqml.optimize import minimize


def _quadratic(Q, c):
    Q, c = np.asarray(Q, float), np.asarray(c, float)

    def fun(x, order):
        f = 0.5 * x @ Q @ x - c @ x
        return f, Q @ x - c if order >= 1 else None, Q if order >= 2 else None

    return fun


def test_interior_minimum():
    res = minimize(_quadratic(np.diag([2.0, 4.0]), [2.0, 4.0]), [0.0, 0.0], [-5, -5], [5, 5])
    assert res.converged and not res.active
    assert_allclose(res.x, [1.0, 1.0], atol=1e-10)


def test_box_constraint_active():
    res = minimize(_quadratic(np.eye(2), [3.0, -3.0]), [0.0, 0.0], [-1, -1], [1, 1])
    assert res.converged
    assert_allclose(res.x, [1.0, -1.0])
    assert len(res.active) == 2


def test_linear_constraint():
    # minimize |x - (1, 1)|^2 / 2 subject to x1 + x2 <= 1
    res = minimize(_quadratic(np.eye(2), [1.0, 1.0]), [0.0, 0.0], [-5, -5], [5, 5], A=[[1.0, 1.0]], b=[1.0])
    assert res.converged
    assert_allclose(res.x, [0.5, 0.5], atol=1e-10)
    assert res.active == [4]


def test_release_of_constraint_active_at_start():
    res = minimize(_quadratic(np.eye(2), [0.5, 0.5]), [1.0, 1.0], [0, 0], [1, 1])
    assert res.converged and not res.active
    assert_allclose(res.x, [0.5, 0.5], atol=1e-10)


def test_bfgs_mode():
    Q = np.array([[3.0, 1.0], [1.0, 2.0]])
    res = minimize(_quadratic(Q, [1.0, 1.0]), [0.0, 0.0], [-5, -5], [5, 5], hessian="bfgs")
    assert res.converged
    assert_allclose(res.x, np.linalg.solve(Q, [1.0, 1.0]), atol=1e-7)


def test_nonconvex_stays_feasible():
    def fun(x, order):
        return -x @ x, -2 * x, -2 * np.eye(2)

    res = minimize(fun, [0.1, 0.2], [-1, -1], [2, 2])
    assert np.all(res.x >= -1) and np.all(res.x <= 2)
    assert res.fun <= -0.05


def test_infeasible_start():
    with pytest.raises(VolqmlError):
        minimize(_quadratic(np.eye(1), [0.0]), [2.0], [0], [1])
