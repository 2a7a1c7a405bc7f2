# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twin of ``kernels_py``: RK4 rollout, linearization and the
closed-loop line-search pass. Same array contracts, same math."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

cdef int NX = 10
cdef int NU = 4


cdef inline void c_deriv(double* x, double* u, double g_z, double* dx) noexcept nogil:
    cdef double qw = x[3], qx = x[4], qy = x[5], qz = x[6]
    cdef double c = u[0], wx = u[1], wy = u[2], wz = u[3]
    dx[0] = x[7]
    dx[1] = x[8]
    dx[2] = x[9]
    dx[3] = 0.5 * (-wx * qx - wy * qy - wz * qz)
    dx[4] = 0.5 * (wx * qw + wz * qy - wy * qz)
    dx[5] = 0.5 * (wy * qw - wz * qx + wx * qz)
    dx[6] = 0.5 * (wz * qw + wy * qx - wx * qy)
    dx[7] = c * 2.0 * (qx * qz + qw * qy)
    dx[8] = c * 2.0 * (qy * qz - qw * qx)
    dx[9] = c * (1.0 - 2.0 * (qx * qx + qy * qy)) - g_z


cdef inline void c_step(double* x, double* u, double dt, double g_z, double* xn) noexcept nogil:
    cdef double k1[10]
    cdef double k2[10]
    cdef double k3[10]
    cdef double k4[10]
    cdef double tmp[10]
    cdef int i
    c_deriv(x, u, g_z, k1)
    for i in range(NX):
        tmp[i] = x[i] + 0.5 * dt * k1[i]
    c_deriv(tmp, u, g_z, k2)
    for i in range(NX):
        tmp[i] = x[i] + 0.5 * dt * k2[i]
    c_deriv(tmp, u, g_z, k3)
    for i in range(NX):
        tmp[i] = x[i] + dt * k3[i]
    c_deriv(tmp, u, g_z, k4)
    for i in range(NX):
        xn[i] = x[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    cdef double n = sqrt(xn[3] * xn[3] + xn[4] * xn[4] + xn[5] * xn[5] + xn[6] * xn[6])
    for i in range(3, 7):
        xn[i] /= n


cdef inline void c_jac(double* x, double* u, double* F, double* G) noexcept nogil:
    # F is 10x10 row-major, G is 10x4 row-major; both zeroed by the caller.
    cdef double qw = x[3], qx = x[4], qy = x[5], qz = x[6]
    cdef double c = u[0], wx = u[1], wy = u[2], wz = u[3]
    F[0 * NX + 7] = 1.0
    F[1 * NX + 8] = 1.0
    F[2 * NX + 9] = 1.0
    # dqdot/dq = 0.5 * Omega(omega)
    F[3 * NX + 4] = -0.5 * wx; F[3 * NX + 5] = -0.5 * wy; F[3 * NX + 6] = -0.5 * wz
    F[4 * NX + 3] = 0.5 * wx;  F[4 * NX + 5] = 0.5 * wz;  F[4 * NX + 6] = -0.5 * wy
    F[5 * NX + 3] = 0.5 * wy;  F[5 * NX + 4] = -0.5 * wz; F[5 * NX + 6] = 0.5 * wx
    F[6 * NX + 3] = 0.5 * wz;  F[6 * NX + 4] = 0.5 * wy;  F[6 * NX + 5] = -0.5 * wx
    # dvdot/dq
    F[7 * NX + 3] = 2 * c * qy;  F[7 * NX + 4] = 2 * c * qz
    F[7 * NX + 5] = 2 * c * qw;  F[7 * NX + 6] = 2 * c * qx
    F[8 * NX + 3] = -2 * c * qx; F[8 * NX + 4] = -2 * c * qw
    F[8 * NX + 5] = 2 * c * qz;  F[8 * NX + 6] = 2 * c * qy
    F[9 * NX + 4] = -4 * c * qx; F[9 * NX + 5] = -4 * c * qy
    # dqdot/domega
    G[3 * NU + 1] = -0.5 * qx; G[3 * NU + 2] = -0.5 * qy; G[3 * NU + 3] = -0.5 * qz
    G[4 * NU + 1] = 0.5 * qw;  G[4 * NU + 2] = -0.5 * qz; G[4 * NU + 3] = 0.5 * qy
    G[5 * NU + 1] = 0.5 * qz;  G[5 * NU + 2] = 0.5 * qw;  G[5 * NU + 3] = -0.5 * qx
    G[6 * NU + 1] = -0.5 * qy; G[6 * NU + 2] = 0.5 * qx;  G[6 * NU + 3] = 0.5 * qw
    # dvdot/dc
    G[7 * NU + 0] = 2.0 * (qx * qz + qw * qy)
    G[8 * NU + 0] = 2.0 * (qy * qz - qw * qx)
    G[9 * NU + 0] = 1.0 - 2.0 * (qx * qx + qy * qy)


cdef inline void mm_xx(double* out, double* L, double* R) noexcept nogil:
    # out = L @ R for 10x10 matrices
    cdef int i, j, kk
    cdef double s
    for i in range(NX):
        for j in range(NX):
            s = 0.0
            for kk in range(NX):
                s += L[i * NX + kk] * R[kk * NX + j]
            out[i * NX + j] = s


cdef inline void mm_xu(double* out, double* L, double* R) noexcept nogil:
    # out = L @ R for 10x10 times 10x4
    cdef int i, j, kk
    cdef double s
    for i in range(NX):
        for j in range(NU):
            s = 0.0
            for kk in range(NX):
                s += L[i * NX + kk] * R[kk * NU + j]
            out[i * NU + j] = s


cdef void c_step_jac(double* x, double* u, double dt, double g_z,
                     double* A, double* B) noexcept nogil:
    cdef double k1[10]
    cdef double k2[10]
    cdef double k3[10]
    cdef double k4[10]
    cdef double x2[10]
    cdef double x3[10]
    cdef double x4[10]
    cdef double xn[10]
    cdef double F[100]
    cdef double G[40]
    cdef double J1[100]
    cdef double J2[100]
    cdef double J3[100]
    cdef double J4[100]
    cdef double B1[40]
    cdef double B2[40]
    cdef double B3[40]
    cdef double B4[40]
    cdef double T[100]
    cdef double TB[40]
    cdef int i, j, kk
    cdef double s

    c_deriv(x, u, g_z, k1)
    for i in range(NX):
        x2[i] = x[i] + 0.5 * dt * k1[i]
    c_deriv(x2, u, g_z, k2)
    for i in range(NX):
        x3[i] = x[i] + 0.5 * dt * k2[i]
    c_deriv(x3, u, g_z, k3)
    for i in range(NX):
        x4[i] = x[i] + dt * k3[i]
    c_deriv(x4, u, g_z, k4)
    for i in range(NX):
        xn[i] = x[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])

    # stage 1 (c_jac assumes zeroed buffers)
    for i in range(100):
        J1[i] = 0.0
    for i in range(40):
        B1[i] = 0.0
    c_jac(x, u, J1, B1)

    # stage 2: J2 = F2 (I + dt/2 J1), B2 = G2 + F2 (dt/2 B1)
    for i in range(100):
        F[i] = 0.0
    for i in range(40):
        G[i] = 0.0
    c_jac(x2, u, F, G)
    for i in range(NX):
        for j in range(NX):
            T[i * NX + j] = 0.5 * dt * J1[i * NX + j]
        T[i * NX + i] += 1.0
    mm_xx(J2, F, T)
    for i in range(40):
        TB[i] = 0.5 * dt * B1[i]
    mm_xu(B2, F, TB)
    for i in range(40):
        B2[i] += G[i]

    # stage 3
    for i in range(100):
        F[i] = 0.0
    for i in range(40):
        G[i] = 0.0
    c_jac(x3, u, F, G)
    for i in range(NX):
        for j in range(NX):
            T[i * NX + j] = 0.5 * dt * J2[i * NX + j]
        T[i * NX + i] += 1.0
    mm_xx(J3, F, T)
    for i in range(40):
        TB[i] = 0.5 * dt * B2[i]
    mm_xu(B3, F, TB)
    for i in range(40):
        B3[i] += G[i]

    # stage 4
    for i in range(100):
        F[i] = 0.0
    for i in range(40):
        G[i] = 0.0
    c_jac(x4, u, F, G)
    for i in range(NX):
        for j in range(NX):
            T[i * NX + j] = dt * J3[i * NX + j]
        T[i * NX + i] += 1.0
    mm_xx(J4, F, T)
    for i in range(40):
        TB[i] = dt * B3[i]
    mm_xu(B4, F, TB)
    for i in range(40):
        B4[i] += G[i]

    for i in range(NX):
        for j in range(NX):
            A[i * NX + j] = (dt / 6.0) * (
                J1[i * NX + j] + 2.0 * J2[i * NX + j] + 2.0 * J3[i * NX + j] + J4[i * NX + j])
        A[i * NX + i] += 1.0
    for i in range(40):
        B[i] = (dt / 6.0) * (B1[i] + 2.0 * B2[i] + 2.0 * B3[i] + B4[i])

    # quaternion renormalization Jacobian: (I - qh qh^T) / |q| on the q block
    cdef double q[4]
    cdef double qh[4]
    cdef double N[16]
    cdef double nq
    for i in range(4):
        q[i] = xn[3 + i]
    nq = sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    for i in range(4):
        qh[i] = q[i] / nq
    for i in range(4):
        for j in range(4):
            N[i * 4 + j] = -qh[i] * qh[j] / nq
        N[i * 4 + i] += 1.0 / nq
    cdef double rowA[4]
    cdef double rowB[4]
    for j in range(NX):
        for i in range(4):
            s = 0.0
            for kk in range(4):
                s += N[i * 4 + kk] * A[(3 + kk) * NX + j]
            rowA[i] = s
        for i in range(4):
            A[(3 + i) * NX + j] = rowA[i]
    for j in range(NU):
        for i in range(4):
            s = 0.0
            for kk in range(4):
                s += N[i * 4 + kk] * B[(3 + kk) * NU + j]
            rowB[i] = s
        for i in range(4):
            B[(3 + i) * NU + j] = rowB[i]


def rollout(double[::1] x0, double[:, ::1] U, double dt, double g_z):
    cdef int H = U.shape[0]
    X_arr = np.empty((H + 1, NX))
    cdef double[:, ::1] X = X_arr
    cdef int i, h
    for i in range(NX):
        X[0, i] = x0[i]
    for h in range(H):
        c_step(&X[h, 0], &U[h, 0], dt, g_z, &X[h + 1, 0])
    return X_arr


def linearize(double[:, ::1] X, double[:, ::1] U, double dt, double g_z):
    cdef int H = U.shape[0]
    A_arr = np.empty((H, NX, NX))
    B_arr = np.empty((H, NX, NU))
    cdef double[:, :, ::1] A = A_arr
    cdef double[:, :, ::1] B = B_arr
    cdef int h
    for h in range(H):
        c_step_jac(&X[h, 0], &U[h, 0], dt, g_z, &A[h, 0, 0], &B[h, 0, 0])
    return A_arr, B_arr


def forward_pass(double[:, ::1] X, double[:, ::1] U, double[:, ::1] k,
                 double[:, :, ::1] K, double alpha, double[::1] u_min,
                 double[::1] u_max, double dt, double g_z):
    cdef int H = U.shape[0]
    Xn_arr = np.empty((H + 1, NX))
    Un_arr = np.empty((H, NU))
    cdef double[:, ::1] Xn = Xn_arr
    cdef double[:, ::1] Un = Un_arr
    cdef int h, i, j
    cdef double u
    for i in range(NX):
        Xn[0, i] = X[0, i]
    for h in range(H):
        for i in range(NU):
            u = U[h, i] + alpha * k[h, i]
            for j in range(NX):
                u += K[h, i, j] * (Xn[h, j] - X[h, j])
            if u < u_min[i]:
                u = u_min[i]
            elif u > u_max[i]:
                u = u_max[i]
            Un[h, i] = u
        c_step(&Xn[h, 0], &Un[h, 0], dt, g_z, &Xn[h + 1, 0])
    return Xn_arr, Un_arr


cdef inline bint chol4(double* M, int n, double* L) noexcept nogil:
    # Cholesky of the leading n x n block (n <= 4, row stride 4); False if not PD.
    cdef int i, j, kk
    cdef double s
    for i in range(n):
        for j in range(i + 1):
            s = M[i * 4 + j]
            for kk in range(j):
                s -= L[i * 4 + kk] * L[j * 4 + kk]
            if i == j:
                if s <= 0.0:
                    return False
                L[i * 4 + i] = sqrt(s)
            else:
                L[i * 4 + j] = s / L[j * 4 + j]
    return True


cdef inline void chol_solve4(double* L, int n, double* b, double* x) noexcept nogil:
    # Solve L L^T x = b for n <= 4.
    cdef int i, kk
    cdef double s
    cdef double y[4]
    for i in range(n):
        s = b[i]
        for kk in range(i):
            s -= L[i * 4 + kk] * y[kk]
        y[i] = s / L[i * 4 + i]
    for i in range(n - 1, -1, -1):
        s = y[i]
        for kk in range(i + 1, n):
            s -= L[kk * 4 + i] * x[kk]
        x[i] = s / L[i * 4 + i]


cdef int c_boxqp(double* Quu, double* Qu, double* lo, double* hi,
                 double* d, bint* free_mask) noexcept nogil:
    # Active-set solve of min 0.5 d'Quu d + Qu'd with lo <= d <= hi.
    # Returns 1 on success (d, free_mask filled), 0 if a free block is not PD.
    cdef int it, i, j, nf
    cdef bint clamped[4]
    cdef bint prev_free[4]
    cdef int idx[4]
    cdef double g[4]
    cdef double Qf[16]
    cdef double Lc[16]
    cdef double rhs[4]
    cdef double step[4]
    cdef double dn[4]
    cdef double diff
    cdef bint same
    for i in range(4):
        d[i] = 0.0
        free_mask[i] = False
    for it in range(10):
        for i in range(4):
            g[i] = Qu[i]
            for j in range(4):
                g[i] += Quu[i * 4 + j] * d[j]
        nf = 0
        for i in range(4):
            clamped[i] = ((d[i] <= lo[i] + 1e-12 and g[i] > 0.0)
                          or (d[i] >= hi[i] - 1e-12 and g[i] < 0.0))
            if not clamped[i]:
                idx[nf] = i
                nf += 1
        if nf == 0:
            for i in range(4):
                free_mask[i] = False
            return 1
        for i in range(nf):
            rhs[i] = Qu[idx[i]]
            for j in range(4):
                if clamped[j]:
                    rhs[i] += Quu[idx[i] * 4 + j] * d[j]
            for j in range(nf):
                Qf[i * 4 + j] = Quu[idx[i] * 4 + idx[j]]
        if not chol4(Qf, nf, Lc):
            return 0
        chol_solve4(Lc, nf, rhs, step)
        for i in range(4):
            dn[i] = d[i]
        for i in range(nf):
            dn[idx[i]] = -step[i]
        for i in range(4):
            if dn[i] < lo[i]:
                dn[i] = lo[i]
            elif dn[i] > hi[i]:
                dn[i] = hi[i]
        same = True
        for i in range(4):
            prev_free[i] = free_mask[i]
            free_mask[i] = not clamped[i]
            if free_mask[i] != prev_free[i]:
                same = False
            diff = dn[i] - d[i]
            if diff < 0.0:
                diff = -diff
            if diff > 1e-10:
                same = False
            d[i] = dn[i]
        if same:
            return 1
    return 1


cdef double c_total_cost(double[:, ::1] X, double[:, ::1] U,
                         double[:, ::1] wx, double[:, ::1] bx, double[::1] c0,
                         double[::1] wu, double[::1] ur,
                         double[::1] wg, double[::1] goal) noexcept nogil:
    cdef int H = U.shape[0]
    cdef int h, i
    cdef double J = 0.0
    cdef double du, dx
    for h in range(H):
        J += c0[h]
        for i in range(NX):
            J += X[h, i] * (wx[h, i] * X[h, i]) - 2.0 * bx[h, i] * X[h, i]
        for i in range(NU):
            du = U[h, i] - ur[i]
            J += du * wu[i] * du
    for i in range(NX):
        dx = X[H, i] - goal[i]
        J += dx * wg[i] * dx
    return J


cdef double c_proj_grad_norm(double[:, :, ::1] A, double[:, :, ::1] B,
                             double[:, ::1] lx, double[:, ::1] lu, double[::1] vx,
                             double[:, ::1] U, double[::1] lo, double[::1] hi) noexcept nogil:
    # Max-abs of the cost gradient w.r.t. inputs projected onto the box at U.
    cdef int H = A.shape[0]
    cdef int h, i, j
    cdef double lam[10]
    cdef double nlam[10]
    cdef double g, s, gn = 0.0
    for i in range(NX):
        lam[i] = vx[i]
    for h in range(H - 1, -1, -1):
        for i in range(NU):
            g = lu[h, i]
            for j in range(NX):
                g += B[h, j, i] * lam[j]
            if U[h, i] <= lo[i] + 1e-12 and g > 0.0:
                g = 0.0
            elif U[h, i] >= hi[i] - 1e-12 and g < 0.0:
                g = 0.0
            if g < 0.0:
                g = -g
            if g > gn:
                gn = g
        for i in range(NX):
            s = lx[h, i]
            for j in range(NX):
                s += A[h, j, i] * lam[j]
            nlam[i] = s
        for i in range(NX):
            lam[i] = nlam[i]
    return gn


cdef int c_backward(double[:, :, ::1] A, double[:, :, ::1] B,
                    double[:, ::1] lx, double[:, ::1] lu,
                    double[:, ::1] lxx, double[::1] luu,
                    double[::1] vx, double[::1] vxx, double reg,
                    double[:, ::1] U, double[::1] lo, double[::1] hi,
                    double[:, ::1] k, double[:, :, ::1] K,
                    double* d1_out, double* d2_out) noexcept nogil:
    # Riccati backward pass with per-stage box-QP; returns 1 on success.
    cdef int H = A.shape[0]
    cdef int h, i, j, kk, nf
    cdef double Vx[10]
    cdef double Vxx[100]
    cdef double VA[100]
    cdef double VB[40]
    cdef double Qx[10]
    cdef double Qu[4]
    cdef double Qxx[100]
    cdef double Qux[40]
    cdef double Quu[16]
    cdef double blo[4]
    cdef double bhi[4]
    cdef double kh[4]
    cdef bint fm[4]
    cdef int idx[4]
    cdef double Qf[16]
    cdef double Lc[16]
    cdef double rhs[4]
    cdef double sol[4]
    cdef double t4[4]
    cdef double QK[40]
    cdef double s
    cdef double d1 = 0.0, d2 = 0.0

    for i in range(NX):
        Vx[i] = vx[i]
        for j in range(NX):
            Vxx[i * NX + j] = 0.0
        Vxx[i * NX + i] = vxx[i]

    for h in range(H - 1, -1, -1):
        # VA = Vxx @ A_h, VB = Vxx @ B_h
        for i in range(NX):
            for j in range(NX):
                s = 0.0
                for kk in range(NX):
                    s += Vxx[i * NX + kk] * A[h, kk, j]
                VA[i * NX + j] = s
            for j in range(NU):
                s = 0.0
                for kk in range(NX):
                    s += Vxx[i * NX + kk] * B[h, kk, j]
                VB[i * NU + j] = s
        for i in range(NX):
            s = lx[h, i]
            for kk in range(NX):
                s += A[h, kk, i] * Vx[kk]
            Qx[i] = s
            for j in range(NX):
                s = 0.0
                for kk in range(NX):
                    s += A[h, kk, i] * VA[kk * NX + j]
                Qxx[i * NX + j] = s
            Qxx[i * NX + i] += lxx[h, i]
        for i in range(NU):
            s = lu[h, i]
            for kk in range(NX):
                s += B[h, kk, i] * Vx[kk]
            Qu[i] = s
            for j in range(NX):
                s = 0.0
                for kk in range(NX):
                    s += B[h, kk, i] * VA[kk * NX + j]
                Qux[i * NX + j] = s
            for j in range(NU):
                s = 0.0
                for kk in range(NX):
                    s += B[h, kk, i] * VB[kk * NU + j]
                Quu[i * 4 + j] = s
            Quu[i * 4 + i] += luu[i] + reg
        for i in range(NU):
            blo[i] = lo[i] - U[h, i]
            bhi[i] = hi[i] - U[h, i]
        if not c_boxqp(Quu, Qu, blo, bhi, kh, fm):
            return 0
        # feedback gains: zero rows for clamped inputs, Riccati gain on free block
        nf = 0
        for i in range(NU):
            for j in range(NX):
                K[h, i, j] = 0.0
            if fm[i]:
                idx[nf] = i
                nf += 1
        if nf > 0:
            for i in range(nf):
                for j in range(nf):
                    Qf[i * 4 + j] = Quu[idx[i] * 4 + idx[j]]
            if not chol4(Qf, nf, Lc):
                return 0
            for j in range(NX):
                for i in range(nf):
                    rhs[i] = Qux[idx[i] * NX + j]
                chol_solve4(Lc, nf, rhs, sol)
                for i in range(nf):
                    K[h, idx[i], j] = -sol[i]
        for i in range(NU):
            k[h, i] = kh[i]
        # expected-improvement terms and value-function update
        for i in range(NU):
            s = 0.0
            for j in range(NU):
                s += Quu[i * 4 + j] * kh[j]
            t4[i] = s
        for i in range(NU):
            d1 += kh[i] * Qu[i]
            d2 += 0.5 * kh[i] * t4[i]
        for i in range(NU):
            for j in range(NX):
                s = 0.0
                for kk in range(NU):
                    s += Quu[i * 4 + kk] * K[h, kk, j]
                QK[i * NX + j] = s
        for j in range(NX):
            s = Qx[j]
            for i in range(NU):
                s += K[h, i, j] * (t4[i] + Qu[i]) + Qux[i * NX + j] * kh[i]
            Vx[j] = s
        for i in range(NX):
            for j in range(NX):
                s = Qxx[i * NX + j]
                for kk in range(NU):
                    s += (K[h, kk, i] * QK[kk * NX + j]
                          + K[h, kk, i] * Qux[kk * NX + j]
                          + Qux[kk * NX + i] * K[h, kk, j])
                VA[i * NX + j] = s
        for i in range(NX):
            for j in range(NX):
                Vxx[i * NX + j] = 0.5 * (VA[i * NX + j] + VA[j * NX + i])
    d1_out[0] = d1
    d2_out[0] = d2
    return 1


def solve_ocp(double[::1] x0, U0, double[:, ::1] wx, double[:, ::1] bx,
              double[::1] c0, double[::1] wu, double[::1] ur,
              double[::1] wg, double[::1] goal, double dt, double g_z,
              double[::1] lo, double[::1] hi,
              int max_iters, double tol_grad, double tol_step, double armijo,
              int ls_steps, double reg_init, double reg_up, double reg_down,
              double reg_min, double reg_max):
    """Gauss-Newton solve of the box-constrained trajectory problem.

    Same contract as ``kernels_py.solve_ocp``; returns
    (X, U, J, iterations, grad_norm, step_norm, converged).
    """
    cdef int H = len(U0)
    U_arr = np.clip(np.asarray(U0, dtype=np.float64), np.asarray(lo), np.asarray(hi))
    U_arr = np.ascontiguousarray(U_arr)
    cdef double[:, ::1] U = U_arr
    X_arr = rollout(x0, U, dt, g_z)
    cdef double[:, ::1] X = X_arr
    if not np.all(np.isfinite(X_arr)):
        return X_arr, U_arr, float("nan"), 0, float("inf"), float("inf"), False

    A_arr = np.empty((H, NX, NX))
    B_arr = np.empty((H, NX, NU))
    lx_arr = np.empty((H, NX))
    lu_arr = np.empty((H, NU))
    lxx_arr = np.empty((H, NX))
    luu_arr = np.empty(NU)
    vx_arr = np.empty(NX)
    vxx_arr = np.empty(NX)
    k_arr = np.empty((H, NU))
    K_arr = np.empty((H, NU, NX))
    cdef double[:, :, ::1] A = A_arr
    cdef double[:, :, ::1] B = B_arr
    cdef double[:, ::1] lx = lx_arr
    cdef double[:, ::1] lu = lu_arr
    cdef double[:, ::1] lxx = lxx_arr
    cdef double[::1] luu = luu_arr
    cdef double[::1] vx = vx_arr
    cdef double[::1] vxx = vxx_arr
    cdef double[:, ::1] k = k_arr
    cdef double[:, :, ::1] K = K_arr

    cdef double J = c_total_cost(X, U, wx, bx, c0, wu, ur, wg, goal)
    cdef double reg = reg_init
    cdef double grad_norm = float("inf")
    cdef double step_norm = float("inf")
    cdef double d1 = 0.0, d2 = 0.0
    cdef double alpha, Jn, expected, diff
    cdef bint converged = False
    cdef bint accepted
    cdef int iters = 0
    cdef int h, i, j
    cdef double[:, ::1] Xn
    cdef double[:, ::1] Un

    for i in range(NU):
        luu[i] = 2.0 * wu[i]
    for i in range(NX):
        vxx[i] = 2.0 * wg[i]

    while iters < max_iters:
        iters += 1
        for h in range(H):
            c_step_jac(&X[h, 0], &U[h, 0], dt, g_z, &A[h, 0, 0], &B[h, 0, 0])
            for i in range(NX):
                lx[h, i] = 2.0 * (wx[h, i] * X[h, i] - bx[h, i])
                lxx[h, i] = 2.0 * wx[h, i]
            for i in range(NU):
                lu[h, i] = 2.0 * wu[i] * (U[h, i] - ur[i])
        for i in range(NX):
            vx[i] = 2.0 * wg[i] * (X[H, i] - goal[i])

        grad_norm = c_proj_grad_norm(A, B, lx, lu, vx, U, lo, hi)
        if grad_norm <= tol_grad:
            converged = True
            break

        if not c_backward(A, B, lx, lu, lxx, luu, vx, vxx, reg, U, lo, hi, k, K, &d1, &d2):
            reg = max(reg * reg_up, reg_min)
            if reg > reg_max:
                break
            continue

        accepted = False
        alpha = 1.0
        Jn = J
        Xn = X
        Un = U
        for i in range(ls_steps):
            Xn_arr, Un_arr = forward_pass(X, U, k, K, alpha, lo, hi, dt, g_z)
            if np.all(np.isfinite(Xn_arr)):
                Xn = Xn_arr
                Un = Un_arr
                Jn = c_total_cost(Xn, Un, wx, bx, c0, wu, ur, wg, goal)
                expected = -(alpha * d1 + alpha * alpha * d2)
                if expected < 0.0:
                    expected = 0.0
                if Jn < J - armijo * expected:
                    accepted = True
                    break
            alpha *= 0.5
        if accepted:
            step_norm = 0.0
            for h in range(H):
                for i in range(NU):
                    diff = Un[h, i] - U[h, i]
                    if diff < 0.0:
                        diff = -diff
                    if diff > step_norm:
                        step_norm = diff
            X_arr, U_arr = Xn_arr, Un_arr
            X, U = Xn, Un
            J = Jn
            reg = max(reg / reg_down, reg_min)
            if step_norm <= tol_step:
                converged = True
                break
        else:
            reg *= reg_up
            if reg > reg_max:
                break

    return X_arr, U_arr, float(J), iters, float(grad_norm), float(step_norm), bool(converged)
