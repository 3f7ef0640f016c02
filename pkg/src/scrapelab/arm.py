"""Planar 4-link arm in the x-z plane with point masses at the link tips.

Angles are relative (joint i rotates link i with respect to link i-1); the
tool pitch is the sum of all joint angles, measured from +x towards +z.
The numerical kernels are numba-compiled and take plain arrays so the
1 kHz simulation loop in :mod:`scrapelab.env` can call them directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

N_JOINTS = 4
MAX_CONDITION = 1e12


class DynamicsFailure(RuntimeError):
    """Raised when the mass matrix becomes numerically singular."""


@dataclass
class ArmModel:
    link_lengths: np.ndarray = field(default_factory=lambda: np.array([0.30, 0.30, 0.25, 0.15]))
    link_masses: np.ndarray = field(default_factory=lambda: np.array([2.0, 2.0, 1.5, 1.0]))
    gravity: float = 9.81
    joint_viscous_friction: np.ndarray = field(default_factory=lambda: np.full(4, 0.05))

    def __post_init__(self):
        self.link_lengths = np.asarray(self.link_lengths, dtype=float).copy()
        self.link_masses = np.asarray(self.link_masses, dtype=float).copy()
        self.joint_viscous_friction = np.broadcast_to(
            np.asarray(self.joint_viscous_friction, dtype=float), (N_JOINTS,)).copy()
        if self.link_lengths.shape != (N_JOINTS,) or self.link_masses.shape != (N_JOINTS,):
            raise ValueError("arm needs exactly 4 link lengths and 4 masses")
        if np.any(self.link_lengths <= 0) or np.any(self.link_masses <= 0):
            raise ValueError("link lengths and masses must be strictly positive")
        if np.any(self.joint_viscous_friction < 0):
            raise ValueError("joint friction must be non-negative")


@dataclass
class JointState:
    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).copy()
        self.qdot = np.asarray(self.qdot, dtype=float).copy()
        if self.q.shape != (N_JOINTS,) or self.qdot.shape != (N_JOINTS,):
            raise ValueError("joint state vectors must have 4 entries")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.qdot))):
            raise ValueError("joint state must be finite")

    @classmethod
    def at_rest(cls, q):
        return cls(np.asarray(q, dtype=float), np.zeros(N_JOINTS))


@dataclass
class TaskState:
    x: np.ndarray       # tool-tip (x, z)
    pitch: float
    xdot: np.ndarray    # (xdot, zdot, pitch rate)

    @property
    def speed(self) -> float:
        return float(np.hypot(self.xdot[0], self.xdot[1]))


# ---------------------------------------------------------------- kernels

@njit(cache=True)
def matvec(a, x):
    """a @ x for small dense arrays without a BLAS round trip."""
    out = np.zeros(a.shape[0])
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            out[i] += a[i, j] * x[j]
    return out


@njit(cache=True)
def rmatvec(a, x):
    """a.T @ x."""
    out = np.zeros(a.shape[1])
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            out[j] += a[i, j] * x[i]
    return out


@njit(cache=True)
def gram(a, b):
    """a @ b.T."""
    out = np.zeros((a.shape[0], b.shape[0]))
    for i in range(a.shape[0]):
        for j in range(b.shape[0]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[j, k]
    return out


@njit(cache=True)
def link_points(lengths, q):
    """Tip position of every link, shape (4, 2)."""
    pts = np.empty((4, 2))
    th = 0.0
    x = 0.0
    z = 0.0
    for i in range(4):
        th += q[i]
        x += lengths[i] * np.cos(th)
        z += lengths[i] * np.sin(th)
        pts[i, 0] = x
        pts[i, 1] = z
    return pts


@njit(cache=True)
def point_jacobians(lengths, q):
    """Translational Jacobians of the link tips, shape (4, 2, 4)."""
    s = np.empty(4)
    c = np.empty(4)
    th = 0.0
    for i in range(4):
        th += q[i]
        s[i] = lengths[i] * np.sin(th)
        c[i] = lengths[i] * np.cos(th)
    jk = np.zeros((4, 2, 4))
    for k in range(4):
        for j in range(k + 1):
            ax = 0.0
            az = 0.0
            for i in range(j, k + 1):
                ax -= s[i]
                az += c[i]
            jk[k, 0, j] = ax
            jk[k, 1, j] = az
    return jk


@njit(cache=True)
def tip_jacobian(lengths, q):
    """3x4 Jacobian of (x, z, pitch)."""
    jk = point_jacobians(lengths, q)
    jac = np.empty((3, 4))
    jac[0, :] = jk[3, 0, :]
    jac[1, :] = jk[3, 1, :]
    jac[2, :] = 1.0
    return jac


@njit(cache=True)
def mass_matrix_kernel(lengths, masses, q):
    jk = point_jacobians(lengths, q)
    m = np.zeros((4, 4))
    for k in range(4):
        m += masses[k] * (jk[k].T @ jk[k])
    return m


@njit(cache=True)
def bias_kernel(lengths, masses, q, qd):
    """C(q, qd) qd as sum_k m_k J_k^T (Jdot_k qd)."""
    jk = point_jacobians(lengths, q)
    acc = np.zeros((4, 2))
    th = 0.0
    om = 0.0
    ax = 0.0
    az = 0.0
    for i in range(4):
        th += q[i]
        om += qd[i]
        w2 = lengths[i] * om * om
        ax -= w2 * np.cos(th)
        az -= w2 * np.sin(th)
        acc[i, 0] = ax
        acc[i, 1] = az
    out = np.zeros(4)
    for k in range(4):
        out += masses[k] * (jk[k].T @ acc[k])
    return out


@njit(cache=True)
def gravity_kernel(lengths, masses, g, q):
    """Generalized gravity torque -dU/dq, U = g * sum m_k z_k."""
    jk = point_jacobians(lengths, q)
    out = np.zeros(4)
    for k in range(4):
        out -= masses[k] * g * jk[k, 1, :]
    return out


@njit(cache=True)
def dynamics_terms(lengths, masses, g, q, qd):
    """M(q), C(q, qd) qd and the gravity torque from one Jacobian pass."""
    jk = point_jacobians(lengths, q)
    m = np.zeros((4, 4))
    bias = np.zeros(4)
    grav = np.zeros(4)
    th = 0.0
    om = 0.0
    ax = 0.0
    az = 0.0
    for k in range(4):
        th += q[k]
        om += qd[k]
        w2 = lengths[k] * om * om
        ax -= w2 * np.cos(th)
        az -= w2 * np.sin(th)
        mk = masses[k]
        for i in range(k + 1):
            bias[i] += mk * (jk[k, 0, i] * ax + jk[k, 1, i] * az)
            grav[i] -= mk * g * jk[k, 1, i]
            for j in range(k + 1):
                m[i, j] += mk * (jk[k, 0, i] * jk[k, 0, j] + jk[k, 1, i] * jk[k, 1, j])
    return m, bias, grav


@njit(cache=True)
def cholesky(m):
    """Lower Cholesky factor and det(m); det is 0 when m is not SPD."""
    n = m.shape[0]
    low = np.zeros((n, n))
    det = 1.0
    for j in range(n):
        d = m[j, j]
        for k in range(j):
            d -= low[j, k] * low[j, k]
        if d <= 0.0:
            return low, 0.0
        low[j, j] = np.sqrt(d)
        det *= d
        for i in range(j + 1, n):
            s = m[i, j]
            for k in range(j):
                s -= low[i, k] * low[j, k]
            low[i, j] = s / low[j, j]
    return low, det


@njit(cache=True)
def cho_solve(low, b):
    n = low.shape[0]
    y = np.empty(n)
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= low[i, k] * y[k]
        y[i] = s / low[i, i]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n):
            s -= low[k, i] * x[k]
        x[i] = s / low[i, i]
    return x


@njit(cache=True)
def condition_bound(m, det):
    """trace(m)^n / det(m), an upper bound on the condition number of an SPD
    matrix (lambda_max <= trace, lambda_min >= det / trace^(n-1))."""
    if det <= 0.0:
        return np.inf
    tr = 0.0
    for i in range(m.shape[0]):
        tr += m[i, i]
    return tr ** m.shape[0] / det


@njit(cache=True)
def spd_solve(m, b):
    """Solve m x = b for a small SPD matrix; returns (x, condition bound)."""
    low, det = cholesky(m)
    if det <= 0.0:
        return np.zeros(m.shape[0]), np.inf
    return cho_solve(low, b), condition_bound(m, det)


@njit(cache=True)
def condition_number(m):
    ev = np.linalg.eigvalsh(m)
    return ev[-1] / ev[0] if ev[0] > 0 else np.inf


@njit(cache=True)
def step_kernel(lengths, masses, g, friction, q, qd, tau, wrench, dt):
    """One semi-implicit Euler step in place. Returns the condition number of M
    (exact only when the cheap trace/determinant bound exceeds 1e12)."""
    m, bias, grav = dynamics_terms(lengths, masses, g, q, qd)
    jac = tip_jacobian(lengths, q)
    rhs = tau + rmatvec(jac, wrench) + grav - bias - friction * qd
    qdd, bound = spd_solve(m, rhs)
    cond = bound
    if bound > MAX_CONDITION:
        cond = condition_number(m)
        if cond <= MAX_CONDITION:
            qdd = np.linalg.solve(m, rhs)
    for i in range(4):
        qd[i] += qdd[i] * dt
        q[i] += qd[i] * dt
    return cond


# ------------------------------------------------------------- public API

def forward_kinematics(model: ArmModel, state: JointState) -> TaskState:
    pts = link_points(model.link_lengths, state.q)
    jac = tip_jacobian(model.link_lengths, state.q)
    return TaskState(x=pts[3].copy(), pitch=float(np.sum(state.q)), xdot=jac @ state.qdot)


def jacobian(model: ArmModel, state: JointState) -> np.ndarray:
    return tip_jacobian(model.link_lengths, state.q)


def mass_matrix(model: ArmModel, state: JointState) -> np.ndarray:
    return mass_matrix_kernel(model.link_lengths, model.link_masses, state.q)


def bias_forces(model: ArmModel, state: JointState) -> np.ndarray:
    """Coriolis and centripetal torques C(q, qdot) qdot (gravity excluded)."""
    return bias_kernel(model.link_lengths, model.link_masses, state.q, state.qdot)


def gravity_torque(model: ArmModel, state: JointState) -> np.ndarray:
    return gravity_kernel(model.link_lengths, model.link_masses, model.gravity, state.q)


def step(model: ArmModel, state: JointState, tau_command, tip_wrench_ext=(0.0, 0.0, 0.0),
         dt: float = 1e-3) -> JointState:
    """Advance one physics tick.

    ``tip_wrench_ext`` is (f_x, f_z, tau_pitch) applied by the environment
    at the tool tip; it enters as J^T w. Raises DynamicsFailure when the
    mass matrix condition number exceeds 1e12.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    q = state.q.copy()
    qd = state.qdot.copy()
    cond = step_kernel(model.link_lengths, model.link_masses, float(model.gravity),
                       model.joint_viscous_friction, q, qd,
                       np.asarray(tau_command, dtype=float),
                       np.asarray(tip_wrench_ext, dtype=float), float(dt))
    if not cond <= MAX_CONDITION:
        raise DynamicsFailure(f"mass matrix condition number {cond:.3g}")
    return JointState(q, qd)


def kinetic_energy(model: ArmModel, state: JointState) -> float:
    return 0.5 * float(state.qdot @ mass_matrix(model, state) @ state.qdot)


def inverse_kinematics(model: ArmModel, tip, pitch: float, q1: float,
                       elbow: float = 1.0) -> np.ndarray:
    """Closed-form IK with the redundancy resolved by fixing joint 1.

    Joints 2-3 reach the wrist point (tip minus the tool link), joint 4 sets
    the pitch. ``elbow`` picks the sign of joint 3.
    """
    l1, l2, l3, l4 = model.link_lengths
    wx = tip[0] - l4 * np.cos(pitch)
    wz = tip[1] - l4 * np.sin(pitch)
    bx = wx - l1 * np.cos(q1)
    bz = wz - l1 * np.sin(q1)
    d2 = bx * bx + bz * bz
    c3 = (d2 - l2 * l2 - l3 * l3) / (2.0 * l2 * l3)
    if abs(c3) > 1.0:
        raise ValueError("target out of reach for the chosen joint-1 angle")
    q3 = elbow * np.arccos(c3)
    q2 = np.arctan2(bz, bx) - np.arctan2(l3 * np.sin(q3), l2 + l3 * np.cos(q3)) - q1
    q4 = pitch - q1 - q2 - q3
    return np.array([q1, q2, q3, q4])
