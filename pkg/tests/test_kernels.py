"""Backend equivalence and linearization accuracy for the solver kernels.

The Cython extension and the pure-numpy fallback must produce identical
rollouts, Jacobians and solver iterates; the discrete-step Jacobians are
checked against central finite differences.
"""

import numpy as np
import pytest

from highmpc._core import BACKEND, kernels_py
from highmpc.dynamics import GRAVITY, quat_normalize

try:
    from highmpc._core import _kernels
except ImportError:  # extension not built
    _kernels = None

needs_ext = pytest.mark.skipif(_kernels is None,
                               reason="compiled extension not available")


def random_problem(rng, H=15):
    q = quat_normalize(rng.normal(size=4))
    x0 = np.concatenate([rng.uniform(-2, 2, 3), q, rng.uniform(-3, 3, 3)])
    U = np.column_stack([rng.uniform(5, 15, H), rng.uniform(-2, 2, (H, 3))])
    return x0, np.ascontiguousarray(U)


def random_cost(rng, H):
    wx = np.abs(rng.normal(size=(H, 10))) + 0.1
    bx = rng.normal(size=(H, 10))
    c0 = np.abs(rng.normal(size=H))
    wu = np.full(4, 0.1)
    ur = np.array([GRAVITY, 0, 0, 0])
    wg = np.array([100.0, 100, 100, 0, 0, 0, 0, 10, 10, 10])
    goal = np.concatenate([rng.uniform(-2, 2, 3), [1, 0, 0, 0], np.zeros(3)])
    return wx, bx, c0, wu, ur, wg, goal


def test_rollout_matches_single_steps():
    rng = np.random.default_rng(0)
    x0, U = random_problem(rng)
    X = kernels_py.rollout(x0, U, 0.05, GRAVITY)
    assert X.shape == (U.shape[0] + 1, 10)
    x = x0
    for h in range(U.shape[0]):
        x = kernels_py._step(x, U[h], 0.05, GRAVITY)
        np.testing.assert_allclose(X[h + 1], x, atol=1e-14)


def test_step_jacobians_match_finite_differences():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(50):
        x0, U = random_problem(rng, H=1)
        u = U[0]
        A, B = kernels_py.step_jacobians(x0, u, 0.05, GRAVITY)
        eps = 1e-6
        for j in range(10):
            dx = np.zeros(10)
            dx[j] = eps
            fd = (kernels_py._step(x0 + dx, u, 0.05, GRAVITY)
                  - kernels_py._step(x0 - dx, u, 0.05, GRAVITY)) / (2 * eps)
            worst = max(worst, np.max(np.abs(fd - A[:, j])))
        for j in range(4):
            du = np.zeros(4)
            du[j] = eps
            fd = (kernels_py._step(x0, u + du, 0.05, GRAVITY)
                  - kernels_py._step(x0, u - du, 0.05, GRAVITY)) / (2 * eps)
            worst = max(worst, np.max(np.abs(fd - B[:, j])))
    assert worst < 1e-6


@needs_ext
def test_backends_rollout_identical():
    rng = np.random.default_rng(2)
    for _ in range(5):
        x0, U = random_problem(rng)
        Xp = kernels_py.rollout(x0, U, 0.05, GRAVITY)
        Xc = np.asarray(_kernels.rollout(x0, U, 0.05, GRAVITY))
        np.testing.assert_allclose(Xc, Xp, atol=1e-12)


@needs_ext
def test_backends_linearize_identical():
    rng = np.random.default_rng(3)
    x0, U = random_problem(rng)
    X = kernels_py.rollout(x0, U, 0.05, GRAVITY)
    Ap, Bp = kernels_py.linearize(X, U, 0.05, GRAVITY)
    Ac, Bc = _kernels.linearize(X, U, 0.05, GRAVITY)
    np.testing.assert_allclose(np.asarray(Ac), Ap, atol=1e-11)
    np.testing.assert_allclose(np.asarray(Bc), Bp, atol=1e-11)


@needs_ext
def test_backends_solve_identical():
    rng = np.random.default_rng(4)
    H = 15
    x0, U0 = random_problem(rng, H)
    cost = random_cost(rng, H)
    lo = np.array([2.0, -3, -3, -3])
    hi = np.array([20.0, 3, 3, 3])
    args = (x0, U0, *cost, 0.05, GRAVITY, lo, hi,
            50, 1e-4, 1e-6, 1e-4, 6, 1.0, 4.0, 2.0, 1e-9, 1e10)
    Xp, Up, Jp, ip, gp, sp, cp = kernels_py.solve_ocp(*args)
    Xc, Uc, Jc, ic, gc, sc, cc = _kernels.solve_ocp(*args)
    assert ic == ip
    assert cc == cp
    assert Jc == pytest.approx(Jp, rel=1e-10)
    np.testing.assert_allclose(np.asarray(Uc), Up, atol=1e-9)
    np.testing.assert_allclose(np.asarray(Xc), Xp, atol=1e-9)


def test_forward_pass_respects_bounds():
    rng = np.random.default_rng(5)
    H = 10
    x0, U = random_problem(rng, H)
    X = kernels_py.rollout(x0, U, 0.05, GRAVITY)
    k = rng.normal(size=(H, 4)) * 5.0
    K = rng.normal(size=(H, 4, 10))
    lo = np.array([2.0, -3, -3, -3])
    hi = np.array([20.0, 3, 3, 3])
    Xn, Un = kernels_py.forward_pass(X, U, k, K, 1.0, lo, hi, 0.05, GRAVITY)
    assert np.all(Un >= lo - 1e-12) and np.all(Un <= hi + 1e-12)
    for h in range(1, H + 1):
        assert abs(np.linalg.norm(Xn[h, 3:7]) - 1.0) < 1e-9


def test_backend_flag_consistent():
    assert BACKEND in ("cython", "python")
    if _kernels is not None:
        import os
        if os.environ.get("HIGHMPC_PURE_PY") != "1":
            assert BACKEND == "cython"
