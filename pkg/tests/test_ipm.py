import numpy as np
import pytest

from ripple_opf._poly import QuadBuilder
from ripple_opf.ipm import IpmOptions, solve_nlp


class Quadratic:
    def __init__(self, h, g):
        self.h, self.g = np.asarray(h, float), np.asarray(g, float)

    def value(self, x):
        return 0.5 * x @ self.h @ x + self.g @ x

    def grad(self, x):
        return self.h @ x + self.g

    def hess(self, x):
        return self.h


def rows(n, spec):
    """spec: list of (const, {i: a}, {(i, j): q})."""
    b = QuadBuilder(np.ones(n))
    for k, (c, lin, quad) in enumerate(spec):
        r = b.row(f"r{k}")
        b.const_term(r, c)
        for i, a in lin.items():
            b.lin_term(r, i, a)
        for (i, j), q in quad.items():
            b.quad_term(r, i, j, q)
    return b.build()


def test_quadrows_derivatives(rng):
    q = rows(3, [(1.0, {0: 2.0}, {(0, 1): 3.0, (2, 2): -1.0}), (0.0, {2: 1.0}, {(1, 1): 0.5})])
    x = rng.normal(size=3)
    jac = q.jacobian(x).toarray()
    h = 1e-6
    fd = np.column_stack([(q.value(x + h * e) - q.value(x - h * e)) / (2 * h) for e in np.eye(3)])
    np.testing.assert_allclose(jac, fd, rtol=1e-6, atol=1e-8)
    w = np.array([0.7, -1.3])
    hess = q.hessian(w).toarray()
    fdh = np.column_stack([(w @ q.jacobian(x + h * e).toarray() - w @ q.jacobian(x - h * e).toarray()) / (2 * h)
                           for e in np.eye(3)])
    np.testing.assert_allclose(hess, fdh, rtol=1e-6, atol=1e-8)
    sub = q.subset([1])
    assert sub.labels == ["r1"] and sub.value(x)[0] == pytest.approx(q.value(x)[1])


def test_equality_constrained_qp():
    # min |x - (1,2)|^2 on the unit circle: x* = (1,2)/sqrt(5)
    obj = Quadratic(2 * np.eye(2), [-2.0, -4.0])
    eq = rows(2, [(-1.0, {}, {(0, 0): 1.0, (1, 1): 1.0})])
    res = solve_nlp(obj, eq, rows(2, []), np.array([0.5, 0.1]))
    assert res.status == "local_optimum"
    np.testing.assert_allclose(res.x, np.array([1, 2]) / np.sqrt(5), atol=1e-7)


def test_inequality_active_bound():
    # min x0 + x1 s.t. x0^2 + x1^2 <= 2 -> (-1, -1)
    obj = Quadratic(np.zeros((2, 2)), [1.0, 1.0])
    ineq = rows(2, [(-2.0, {}, {(0, 0): 1.0, (1, 1): 1.0})])
    res = solve_nlp(obj, rows(2, []), ineq, np.array([0.0, 0.0]))
    assert res.status == "local_optimum"
    np.testing.assert_allclose(res.x, [-1, -1], atol=1e-6)
    assert res.z[0] == pytest.approx(0.5, abs=1e-6)


def test_nonconvex_objective():
    # saddle objective needs the inertia correction: min -x0 x1 s.t. |x|^2 <= 2
    obj = Quadratic([[0, -1], [-1, 0]], [0, 0])
    ineq = rows(2, [(-2.0, {}, {(0, 0): 1.0, (1, 1): 1.0})])
    res = solve_nlp(obj, rows(2, []), ineq, np.array([0.3, 0.2]))
    assert res.status == "local_optimum"
    assert abs(res.x[0] * res.x[1]) == pytest.approx(1.0, abs=1e-6)


def test_infeasible_detected():
    # x0^2 + x1^2 <= 1 and x0 >= 3 cannot both hold
    ineq = rows(2, [(-1.0, {}, {(0, 0): 1.0, (1, 1): 1.0}), (3.0, {0: -1.0}, {})])
    res = solve_nlp(Quadratic(np.eye(2), [0, 0]), rows(2, []), ineq, np.zeros(2),
                    IpmOptions(max_iter=200))
    assert res.status in ("infeasible_detected", "max_iter")
    assert res.status != "local_optimum"


def test_iteration_cap():
    obj = Quadratic(2 * np.eye(2), [-2.0, -4.0])
    eq = rows(2, [(-1.0, {}, {(0, 0): 1.0, (1, 1): 1.0})])
    res = solve_nlp(obj, eq, rows(2, []), np.array([5.0, -3.0]), IpmOptions(max_iter=2))
    assert res.status == "max_iter" and res.iterations == 2
