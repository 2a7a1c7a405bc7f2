"""Pure-numpy reference implementation of the trajectory-solver kernels.

The hot path of an MPC solve lives here:

* ``rollout``      -- open-loop RK4 rollout of the quadrotor over a horizon,
* ``linearize``    -- discrete-time Jacobians (A, B) of the RK4 step,
* ``forward_pass`` -- closed-loop rollout with feedback gains and clamping,
* ``solve_ocp``    -- the full Gauss-Newton iteration: Riccati backward pass
                      with per-stage box-QP for the input bounds, line search,
                      projected-gradient termination.

The compiled extension in ``_kernels.pyx`` implements the same contract; the
backend is selected at import time in ``highmpc._core``.
"""

import numpy as np

X_DIM = 10
U_DIM = 4


def _deriv(x, u, g_z):
    qw, qx, qy, qz = x[3:7]
    c, wx, wy, wz = u
    dx = np.empty(X_DIM)
    dx[0:3] = x[7:10]
    dx[3] = 0.5 * (-wx * qx - wy * qy - wz * qz)
    dx[4] = 0.5 * (wx * qw + wz * qy - wy * qz)
    dx[5] = 0.5 * (wy * qw - wz * qx + wx * qz)
    dx[6] = 0.5 * (wz * qw + wy * qx - wx * qy)
    dx[7] = c * 2 * (qx * qz + qw * qy)
    dx[8] = c * 2 * (qy * qz - qw * qx)
    dx[9] = c * (1 - 2 * (qx * qx + qy * qy)) - g_z
    return dx


def _jac(x, u):
    """Continuous-time Jacobians F = df/dx (10x10) and G = df/du (10x4)."""
    qw, qx, qy, qz = x[3:7]
    c, wx, wy, wz = u
    F = np.zeros((X_DIM, X_DIM))
    G = np.zeros((X_DIM, U_DIM))
    F[0:3, 7:10] = np.eye(3)
    # quaternion kinematics: dqdot/dq = 0.5 * Omega(omega)
    F[3:7, 3:7] = 0.5 * np.array(
        [
            [0, -wx, -wy, -wz],
            [wx, 0, wz, -wy],
            [wy, -wz, 0, wx],
            [wz, wy, -wx, 0],
        ]
    )
    # dqdot/domega
    G[3:7, 1:4] = 0.5 * np.array(
        [
            [-qx, -qy, -qz],
            [qw, -qz, qy],
            [qz, qw, -qx],
            [-qy, qx, qw],
        ]
    )
    # dvdot/dq: thrust direction depends on attitude
    F[7, 3:7] = 2 * c * np.array([qy, qz, qw, qx])
    F[8, 3:7] = 2 * c * np.array([-qx, -qw, qz, qy])
    F[9, 3:7] = c * np.array([0, -4 * qx, -4 * qy, 0])
    # dvdot/dc
    G[7:10, 0] = [2 * (qx * qz + qw * qy), 2 * (qy * qz - qw * qx), 1 - 2 * (qx * qx + qy * qy)]
    return F, G


def _step(x, u, dt, g_z):
    """One RK4 step with quaternion renormalization."""
    k1 = _deriv(x, u, g_z)
    k2 = _deriv(x + 0.5 * dt * k1, u, g_z)
    k3 = _deriv(x + 0.5 * dt * k2, u, g_z)
    k4 = _deriv(x + dt * k3, u, g_z)
    xn = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    xn[3:7] /= np.linalg.norm(xn[3:7])
    return xn


def rollout(x0, U, dt, g_z):
    """Open-loop rollout; returns states with shape (H+1, 10)."""
    H = U.shape[0]
    X = np.empty((H + 1, X_DIM))
    X[0] = x0
    for h in range(H):
        X[h + 1] = _step(X[h], U[h], dt, g_z)
    return X


def step_jacobians(x, u, dt, g_z):
    """Jacobians of the discrete RK4 + renormalization step."""
    I = np.eye(X_DIM)
    k1 = _deriv(x, u, g_z)
    x2 = x + 0.5 * dt * k1
    k2 = _deriv(x2, u, g_z)
    x3 = x + 0.5 * dt * k2
    k3 = _deriv(x3, u, g_z)
    x4 = x + dt * k3
    k4 = _deriv(x4, u, g_z)

    F1, G1 = _jac(x, u)
    F2, G2 = _jac(x2, u)
    F3, G3 = _jac(x3, u)
    F4, G4 = _jac(x4, u)

    J1 = F1
    B1 = G1
    J2 = F2 @ (I + 0.5 * dt * J1)
    B2 = G2 + F2 @ (0.5 * dt * B1)
    J3 = F3 @ (I + 0.5 * dt * J2)
    B3 = G3 + F3 @ (0.5 * dt * B2)
    J4 = F4 @ (I + dt * J3)
    B4 = G4 + F4 @ (dt * B3)

    A = I + (dt / 6.0) * (J1 + 2 * J2 + 2 * J3 + J4)
    B = (dt / 6.0) * (B1 + 2 * B2 + 2 * B3 + B4)

    # renormalization of the quaternion block
    xn = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    q = xn[3:7]
    nq = np.linalg.norm(q)
    qh = q / nq
    N = (np.eye(4) - np.outer(qh, qh)) / nq
    A[3:7, :] = N @ A[3:7, :]
    B[3:7, :] = N @ B[3:7, :]
    return A, B


def linearize(X, U, dt, g_z):
    """Stage-wise discrete Jacobians along a trajectory."""
    H = U.shape[0]
    A = np.empty((H, X_DIM, X_DIM))
    B = np.empty((H, X_DIM, U_DIM))
    for h in range(H):
        A[h], B[h] = step_jacobians(X[h], U[h], dt, g_z)
    return A, B


def forward_pass(X, U, k, K, alpha, u_min, u_max, dt, g_z):
    """Closed-loop rollout with clamped inputs.

    u_h = clip(U_h + alpha * k_h + K_h (x_h - X_h)); returns the new (X, U).
    """
    H = U.shape[0]
    Xn = np.empty_like(X)
    Un = np.empty_like(U)
    Xn[0] = X[0]
    for h in range(H):
        u = U[h] + alpha * k[h] + K[h] @ (Xn[h] - X[h])
        Un[h] = np.clip(u, u_min, u_max)
        Xn[h + 1] = _step(Xn[h], Un[h], dt, g_z)
    return Xn, Un


def _total_cost(X, U, wx, bx, c0, wu, ur, wg, goal):
    Xs = X[:-1]
    dU = U - ur
    J = np.sum(Xs * (wx * Xs)) - 2 * np.sum(bx * Xs) + np.sum(c0)
    J += np.sum(dU * (wu * dU))
    d = X[-1] - goal
    J += d @ (wg * d)
    return float(J)


def _boxqp(Quu, Qu, lo, hi, max_iter=10):
    """Active-set solve of min 0.5 d'Quu d + Qu'd subject to lo <= d <= hi.

    Returns (d, free mask) or None if a free block is not positive definite.
    """
    n = len(Qu)
    d = np.zeros(n)
    free = np.zeros(n, dtype=bool)
    for _ in range(max_iter):
        g = Qu + Quu @ d
        clamped = ((d <= lo + 1e-12) & (g > 0)) | ((d >= hi - 1e-12) & (g < 0))
        new_free = ~clamped
        if not new_free.any():
            return d, new_free
        rhs = Qu[new_free] + Quu[np.ix_(new_free, ~new_free)] @ d[~new_free]
        Qf = Quu[np.ix_(new_free, new_free)]
        try:
            L = np.linalg.cholesky(Qf)
        except np.linalg.LinAlgError:
            return None
        step = -np.linalg.solve(L.T, np.linalg.solve(L, rhs))
        d_new = d.copy()
        d_new[new_free] = step
        d_new = np.clip(d_new, lo, hi)
        if np.array_equal(new_free, free) and np.abs(d_new - d).max() < 1e-10:
            return d_new, new_free
        d, free = d_new, new_free
    return d, free


def _backward_pass(A, B, lx, lu, lxx, luu, vx, vxx, reg, U, lo, hi):
    """Riccati recursion with per-stage box-QP on the input bounds."""
    H = A.shape[0]
    k = np.empty((H, U_DIM))
    K = np.zeros((H, U_DIM, X_DIM))
    Vx = vx.copy()
    Vxx = np.diag(vxx).astype(float)
    d1 = 0.0
    d2 = 0.0
    for h in range(H - 1, -1, -1):
        Ah, Bh = A[h], B[h]
        Qx = lx[h] + Ah.T @ Vx
        Qu = lu[h] + Bh.T @ Vx
        VA = Vxx @ Ah
        Qxx = np.diag(lxx[h]) + Ah.T @ VA
        Qux = Bh.T @ VA
        Quu = np.diag(luu) + Bh.T @ Vxx @ Bh + reg * np.eye(U_DIM)
        r = _boxqp(Quu, Qu, lo - U[h], hi - U[h])
        if r is None:
            return None
        kh, free = r
        Kh = np.zeros((U_DIM, X_DIM))
        if free.any():
            try:
                Kh[free] = -np.linalg.solve(Quu[np.ix_(free, free)], Qux[free])
            except np.linalg.LinAlgError:
                return None
        k[h] = kh
        K[h] = Kh
        d1 += kh @ Qu
        d2 += 0.5 * kh @ (Quu @ kh)
        Vx = Qx + Kh.T @ (Quu @ kh) + Kh.T @ Qu + Qux.T @ kh
        Vxx = Qxx + Kh.T @ (Quu @ Kh) + Kh.T @ Qux + Qux.T @ Kh
        Vxx = 0.5 * (Vxx + Vxx.T)
    return k, K, d1, d2


def _projected_gradient(A, B, lx, lu, vx, U, lo, hi):
    """Exact cost gradient w.r.t. inputs, projected onto the box at U."""
    H = A.shape[0]
    g = np.empty((H, U_DIM))
    lam = vx
    for h in range(H - 1, -1, -1):
        g[h] = lu[h] + B[h].T @ lam
        lam = lx[h] + A[h].T @ lam
    pg = g.copy()
    at_lo = U <= lo + 1e-12
    at_hi = U >= hi - 1e-12
    pg[at_lo] = np.minimum(pg[at_lo], 0.0)
    pg[at_hi] = np.maximum(pg[at_hi], 0.0)
    return pg


def solve_ocp(x0, U0, wx, bx, c0, wu, ur, wg, goal, dt, g_z, lo, hi,
              max_iters, tol_grad, tol_step, armijo, ls_steps,
              reg_init, reg_up, reg_down, reg_min, reg_max):
    """Full Gauss-Newton solve of the box-constrained trajectory problem.

    Cost: sum_h x_h' diag(wx_h) x_h - 2 bx_h . x_h + c0_h
          + (u_h - ur)' diag(wu) (u_h - ur) + (x_H - goal)' diag(wg) (x_H - goal).

    Returns (X, U, J, iterations, grad_norm, step_norm, converged).
    """
    U = np.clip(np.asarray(U0, dtype=float), lo, hi)
    X = rollout(np.asarray(x0, dtype=float), U, dt, g_z)
    if not np.all(np.isfinite(X)):
        return X, U, np.nan, 0, np.inf, np.inf, False

    J = _total_cost(X, U, wx, bx, c0, wu, ur, wg, goal)
    luu = 2 * wu
    vxx = 2 * wg
    reg = reg_init
    converged = False
    grad_norm = np.inf
    step_norm = np.inf
    iters = 0

    for iters in range(1, max_iters + 1):
        A, B = linearize(X, U, dt, g_z)
        lx = 2 * (wx * X[:-1] - bx)
        lu = 2 * wu * (U - ur)
        lxx = 2 * wx
        vx = 2 * wg * (X[-1] - goal)

        pg = _projected_gradient(A, B, lx, lu, vx, U, lo, hi)
        grad_norm = float(np.max(np.abs(pg)))
        if grad_norm <= tol_grad:
            converged = True
            break

        bp = _backward_pass(A, B, lx, lu, lxx, luu, vx, vxx, reg, U, lo, hi)
        if bp is None:
            reg = max(reg * reg_up, reg_min)
            if reg > reg_max:
                break
            continue
        k, K, d1, d2 = bp

        accepted = False
        alpha = 1.0
        for _ in range(ls_steps):
            Xn, Un = forward_pass(X, U, k, K, alpha, lo, hi, dt, g_z)
            if np.all(np.isfinite(Xn)):
                Jn = _total_cost(Xn, Un, wx, bx, c0, wu, ur, wg, goal)
                expected = -(alpha * d1 + alpha * alpha * d2)
                if Jn < J - armijo * max(expected, 0.0):
                    accepted = True
                    break
            alpha *= 0.5
        if accepted:
            step_norm = float(np.max(np.abs(Un - U)))
            X, U, J = Xn, Un, Jn
            reg = max(reg / reg_down, reg_min)
            if step_norm <= tol_step:
                converged = True
                break
        else:
            reg *= reg_up
            if reg > reg_max:
                break

    return X, U, J, iters, grad_norm, step_norm, converged
