"""Quadrotor rigid-body model and pendulum-gate model.

State conventions (used everywhere in the package):

* quadrotor state ``x`` is a 10-vector ``[px, py, pz, qw, qx, qy, qz, vx, vy, vz]``
  with a unit quaternion (Hamilton, world <- body),
* quadrotor input ``u`` is a 4-vector ``[c, wx, wy, wz]`` of mass-normalized
  collective thrust (m/s^2) and body rates (rad/s),
* the pendulum gate swings in the y-z plane about a fixed anchor, so its
  full pose is a deterministic function of the roll angle and rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GRAVITY = 9.81

# state/input vector layout
IDX_P = slice(0, 3)
IDX_Q = slice(3, 7)
IDX_V = slice(7, 10)
X_DIM = 10
U_DIM = 4


class DynamicsError(ValueError):
    """Raised on invalid states, inputs or integration parameters."""


@dataclass
class QuadState:
    """Quadrotor state: position, unit quaternion (w, x, y, z), velocity."""

    p: np.ndarray
    q: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        self.v = np.asarray(self.v, dtype=float)

    @classmethod
    def hover(cls, p=(0.0, 0.0, 0.0)) -> "QuadState":
        return cls(np.asarray(p, dtype=float), np.array([1.0, 0, 0, 0]), np.zeros(3))

    @classmethod
    def from_array(cls, x: np.ndarray) -> "QuadState":
        x = np.asarray(x, dtype=float)
        return cls(x[IDX_P].copy(), x[IDX_Q].copy(), x[IDX_V].copy())

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.p, self.q, self.v])


@dataclass
class QuadInput:
    """Mass-normalized collective thrust plus body rates."""

    c: float
    omega: np.ndarray

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=float)

    @classmethod
    def hover(cls, g_z: float = GRAVITY) -> "QuadInput":
        return cls(g_z, np.zeros(3))

    @classmethod
    def from_array(cls, u: np.ndarray) -> "QuadInput":
        u = np.asarray(u, dtype=float)
        return cls(float(u[0]), u[1:4].copy())

    def as_array(self) -> np.ndarray:
        return np.concatenate([[self.c], self.omega])


@dataclass
class PendulumParams:
    """Physical parameters of a pendulum gate.

    Defaults follow the physical gate used for validation: a 1.0 m stick
    (0.3 kg) carrying a loop of radius 0.45 m (0.46 kg), treated as a point
    mass at the center of mass.
    """

    anchor: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 3.0]))
    L_cm: float = 1.075
    l: float = 1.45
    b: float = 0.2
    m: float = 0.76
    I: float | None = None

    def __post_init__(self):
        self.anchor = np.asarray(self.anchor, dtype=float)
        if self.I is None:
            self.I = self.m * self.L_cm**2
        if self.L_cm <= 0 or self.l <= 0 or self.b < 0 or self.m <= 0 or self.I <= 0:
            raise DynamicsError(f"invalid pendulum parameters: {self}")


@dataclass
class GateState:
    """Pendulum angle/rate plus the derived gate-center pose and velocity."""

    theta: float
    theta_dot: float
    p: np.ndarray
    q: np.ndarray
    v: np.ndarray

    def as_array(self) -> np.ndarray:
        """10-vector in the same layout as the quadrotor state."""
        return np.concatenate([self.p, self.q, self.v])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Unit-norm quaternion with canonical sign (w >= 0)."""
    q = q / np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def quat_rotate(q: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """Rotate a vector from body to world frame."""
    w, x, y, z = q
    R = np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
    return R @ vec


def quad_derivative_array(x: np.ndarray, u: np.ndarray, g_z: float = GRAVITY) -> np.ndarray:
    """Time derivative of the 10-dim quadrotor state under body-rate control."""
    qw, qx, qy, qz = x[3:7]
    c, wx, wy, wz = u
    dx = np.empty(X_DIM)
    dx[0:3] = x[7:10]
    dx[3] = 0.5 * (-wx * qx - wy * qy - wz * qz)
    dx[4] = 0.5 * (wx * qw + wz * qy - wy * qz)
    dx[5] = 0.5 * (wy * qw - wz * qx + wx * qz)
    dx[6] = 0.5 * (wz * qw + wy * qx - wx * qy)
    # thrust rotated to world frame, minus gravity
    dx[7] = c * 2 * (qx * qz + qw * qy)
    dx[8] = c * 2 * (qy * qz - qw * qx)
    dx[9] = c * (1 - 2 * (qx * qx + qy * qy)) - g_z
    return dx


def quad_derivative(x: QuadState, u: QuadInput, g_z: float = GRAVITY) -> QuadState:
    """State derivative; rejects non-finite input and non-unit quaternions."""
    xa = x.as_array()
    ua = u.as_array()
    if not (np.all(np.isfinite(xa)) and np.all(np.isfinite(ua))):
        raise DynamicsError("non-finite state or input")
    if abs(np.linalg.norm(x.q) - 1.0) > 1e-6:
        raise DynamicsError(f"quaternion norm {np.linalg.norm(x.q)} != 1")
    return QuadState.from_array(quad_derivative_array(xa, ua, g_z))


def integrate_quad_array(x: np.ndarray, u: np.ndarray, dt: float, g_z: float = GRAVITY) -> np.ndarray:
    """One RK4 step followed by quaternion renormalization (canonical sign)."""
    k1 = quad_derivative_array(x, u, g_z)
    k2 = quad_derivative_array(x + 0.5 * dt * k1, u, g_z)
    k3 = quad_derivative_array(x + 0.5 * dt * k2, u, g_z)
    k4 = quad_derivative_array(x + dt * k3, u, g_z)
    xn = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    xn[3:7] = quat_normalize(xn[3:7])
    return xn


def integrate_quad(x: QuadState, u: QuadInput, dt: float, g_z: float = GRAVITY) -> QuadState:
    if dt <= 0:
        raise DynamicsError(f"dt must be positive, got {dt}")
    xa = x.as_array()
    ua = u.as_array()
    if not (np.all(np.isfinite(xa)) and np.all(np.isfinite(ua))):
        raise DynamicsError("non-finite state or input")
    return QuadState.from_array(integrate_quad_array(xa, ua, dt, g_z))


def pendulum_derivative(theta: float, theta_dot: float, pp: PendulumParams,
                        g_z: float = GRAVITY) -> tuple[float, float]:
    """Angular dynamics of the damped pendulum about the x-axis."""
    theta_ddot = -(pp.m * g_z * pp.L_cm * np.sin(theta) / pp.I + pp.b * theta_dot)
    return theta_dot, theta_ddot


def gate_pose(theta: float, theta_dot: float, pp: PendulumParams) -> GateState:
    """Gate-center pose/velocity as a closed-form function of (theta, theta_dot).

    The gate center hangs a distance ``l`` from the anchor; its orientation is
    a pure roll about x by ``theta``.
    """
    s, c = np.sin(theta), np.cos(theta)
    p = pp.anchor + pp.l * np.array([0.0, s, -c])
    v = pp.l * theta_dot * np.array([0.0, c, s])
    q = quat_normalize(np.array([np.cos(theta / 2), np.sin(theta / 2), 0.0, 0.0]))
    return GateState(theta=float(theta), theta_dot=float(theta_dot), p=p, q=q, v=v)


def integrate_pendulum(theta: float, theta_dot: float, pp: PendulumParams, dt: float,
                       g_z: float = GRAVITY) -> tuple[float, float]:
    """One RK4 step of the pendulum angle dynamics."""

    def f(th, thd):
        return np.array(pendulum_derivative(th, thd, pp, g_z))

    y = np.array([theta, theta_dot])
    k1 = f(*y)
    k2 = f(*(y + 0.5 * dt * k1))
    k3 = f(*(y + 0.5 * dt * k2))
    k4 = f(*(y + dt * k3))
    yn = y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return float(yn[0]), float(yn[1])


def predict_gate_trajectory(g0: GateState, pp: PendulumParams, H: int, dt: float,
                            g_z: float = GRAVITY) -> list[GateState]:
    """Predicted gate states at the next H nodes (H+1 states incl. the current)."""
    if H < 1:
        raise DynamicsError(f"H must be >= 1, got {H}")
    if dt <= 0:
        raise DynamicsError(f"dt must be positive, got {dt}")
    states = [g0]
    theta, theta_dot = g0.theta, g0.theta_dot
    for _ in range(H):
        theta, theta_dot = integrate_pendulum(theta, theta_dot, pp, dt, g_z)
        states.append(gate_pose(theta, theta_dot, pp))
    return states


def pendulum_energy(theta: float, theta_dot: float, pp: PendulumParams,
                    g_z: float = GRAVITY) -> float:
    """Mechanical energy, zero at the rest position."""
    return 0.5 * pp.I * theta_dot**2 + pp.m * g_z * pp.L_cm * (1 - np.cos(theta))
