"""Cartesian impedance control with nullspace posture and feedforward wrench.

The commanded joint torque is the sum of an impedance term, a posture term
projected into the dynamically consistent nullspace, the feedforward wrench
mapped through J^T, and exact gravity compensation. Axis roles: x is
force-controlled (its spring is dropped while f_x is commanded), z tracks
the setpoint, pitch is held at the wall-contact pitch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .arm import (ArmModel, JointState, cho_solve, cholesky, dynamics_terms, gram,
                  link_points, mass_matrix_kernel, matvec, rmatvec, tip_jacobian)

SINGULAR_SV = 1e-6


@dataclass
class ImpedanceParams:
    """Diagonal gains for (x, z, pitch) plus the nullspace posture spring."""

    stiffness: np.ndarray = field(default_factory=lambda: np.array([0.0, 500.0, 20.0]))
    damping: np.ndarray = field(default_factory=lambda: np.array([40.0, 45.0, 4.0]))
    nullspace_stiffness: float = 5.0
    nullspace_damping: float = 1.0
    nullspace_posture: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def __post_init__(self):
        self.stiffness = np.asarray(self.stiffness, dtype=float).copy()
        self.damping = np.asarray(self.damping, dtype=float).copy()
        self.nullspace_posture = np.asarray(self.nullspace_posture, dtype=float).copy()
        if self.stiffness.shape != (3,) or self.damping.shape != (3,):
            raise ValueError("stiffness and damping are diagonals of length 3")
        if np.any(self.stiffness < 0) or np.any(self.damping < 0):
            raise ValueError("gains must be non-negative")
        if np.any((self.stiffness > 0) & (self.damping <= 0)):
            raise ValueError("every stiff axis needs positive damping")
        if self.nullspace_stiffness < 0 or self.nullspace_damping < 0:
            raise ValueError("nullspace gains must be non-negative")


@dataclass
class WrenchCommand:
    f_x: float = 0.0
    f_z: float = 0.0
    tau_pitch: float = 0.0
    z_setpoint: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.f_x, self.f_z, self.tau_pitch, self.z_setpoint])


# ---------------------------------------------------------------- kernels

@njit(cache=True)
def impedance_kernel(jac, x, xdot, x_des, stiffness, damping):
    f = stiffness * (x_des - x) - damping * xdot
    return rmatvec(jac, f)


@njit(cache=True)
def min_eig_below(a, floor):
    """True when the smallest eigenvalue of SPD ``a`` is below ``floor``."""
    _, det = cholesky(a)
    n = a.shape[0]
    tr = 0.0
    for i in range(n):
        tr += a[i, i]
    # lambda_min >= det / trace^(n-1): only fall back to eigvalsh near the edge
    if det > 0.0 and det / tr ** (n - 1) >= floor:
        return False
    return np.linalg.eigvalsh(a)[0] < floor


@njit(cache=True)
def nullspace_kernel(jac, m, q, qd, posture, k_ns, d_ns):
    """(I - J^T Lambda J M^-1) tau_posture with Lambda = (J M^-1 J^T)^-1."""
    if min_eig_below(gram(jac, jac), SINGULAR_SV * SINGULAR_SV):
        return np.zeros(4), True
    tau0 = k_ns * (posture - q) - d_ns * qd
    low, _ = cholesky(m)
    minv_j = np.empty((3, 4))
    for c in range(3):
        minv_j[c] = cho_solve(low, jac[c])
    low3, _ = cholesky(gram(jac, minv_j))
    tau = tau0
    # second pass: when tau0 is nearly all task torque the first result is
    # small and its leftover task part is roundoff of tau0's size
    for _ in range(2):
        r = matvec(jac, cho_solve(low, tau))
        tau = tau - rmatvec(jac, cho_solve(low3, r))
    return tau, False


@njit(cache=True)
def compose_kernel(lengths, masses, g, q, qd, stiffness, damping, k_ns, d_ns,
                   posture, x_hold, pitch_hold, cmd):
    """Full commanded torque; returns (tau, tau_ca, tau_ns, tau_ext, singular).

    ``cmd`` is (f_x, f_z, tau_pitch, z_setpoint).
    """
    jac = tip_jacobian(lengths, q)
    pts = link_points(lengths, q)
    x = np.empty(3)
    x[0] = pts[3, 0]
    x[1] = pts[3, 1]
    x[2] = q[0] + q[1] + q[2] + q[3]
    xdot = matvec(jac, qd)
    x_des = np.empty(3)
    x_des[0] = x_hold
    x_des[1] = cmd[3]
    x_des[2] = pitch_hold
    k = stiffness.copy()
    if cmd[0] != 0.0:
        k[0] = 0.0
    tau_ca = impedance_kernel(jac, x, xdot, x_des, k, damping)
    m, _, grav = dynamics_terms(lengths, masses, g, q, qd)
    tau_ns, singular = nullspace_kernel(jac, m, q, qd, posture, k_ns, d_ns)
    w = np.empty(3)
    w[0] = cmd[0]
    w[1] = cmd[1]
    w[2] = cmd[2]
    tau_ext = rmatvec(jac, w)
    tau = tau_ca + tau_ns + tau_ext - grav
    return tau, tau_ca, tau_ns, tau_ext, singular


@njit(cache=True)
def estimate_wrench_kernel(jac, tau_ext):
    """Least-squares planar wrench (f_x, f_z, tau_pitch) with J^T w = tau_ext."""
    low, _ = cholesky(gram(jac, jac))
    return cho_solve(low, matvec(jac, tau_ext))


# ------------------------------------------------------------- public API

class SingularityError(RuntimeError):
    pass


def _task_state(model, state):
    jac = tip_jacobian(model.link_lengths, state.q)
    pts = link_points(model.link_lengths, state.q)
    x = np.array([pts[3, 0], pts[3, 1], np.sum(state.q)])
    return jac, x, jac @ state.qdot


def impedance_torque(params: ImpedanceParams, model: ArmModel, state: JointState, x_desired):
    jac, x, xdot = _task_state(model, state)
    return impedance_kernel(jac, x, xdot, np.asarray(x_desired, dtype=float),
                            params.stiffness, params.damping)


def nullspace_torque(params: ImpedanceParams, model: ArmModel, state: JointState):
    """Posture torque that induces no task-space acceleration.

    Returns ``(tau, singular)``; at a singular configuration tau is zero and
    the flag is set.
    """
    jac = tip_jacobian(model.link_lengths, state.q)
    m = mass_matrix_kernel(model.link_lengths, model.link_masses, state.q)
    tau, singular = nullspace_kernel(jac, m, state.q, state.qdot, params.nullspace_posture,
                                     float(params.nullspace_stiffness),
                                     float(params.nullspace_damping))
    return tau, bool(singular)


def wrench_torque(model: ArmModel, state: JointState, cmd: WrenchCommand):
    jac = tip_jacobian(model.link_lengths, state.q)
    return jac.T @ np.array([cmd.f_x, cmd.f_z, cmd.tau_pitch])


def compose(params: ImpedanceParams, model: ArmModel, state: JointState, cmd: WrenchCommand,
            x_hold: float, pitch_hold: float):
    """Commanded torque ``tau_ca + tau_ns + tau_ext + gravity compensation``.

    Returns ``(tau, singular)``.
    """
    tau, _, _, _, singular = compose_kernel(
        model.link_lengths, model.link_masses, float(model.gravity), state.q, state.qdot,
        params.stiffness, params.damping, float(params.nullspace_stiffness),
        float(params.nullspace_damping), params.nullspace_posture, float(x_hold),
        float(pitch_hold), cmd.as_array())
    return tau, bool(singular)


def compose_terms(params, model, state, cmd, x_hold, pitch_hold):
    """The three superposed components, in the order (impedance, nullspace, wrench)."""
    _, ca, ns, ext, _ = compose_kernel(
        model.link_lengths, model.link_masses, float(model.gravity), state.q, state.qdot,
        params.stiffness, params.damping, float(params.nullspace_stiffness),
        float(params.nullspace_damping), params.nullspace_posture, float(x_hold),
        float(pitch_hold), cmd.as_array())
    return ca, ns, ext


def embed_wrench(planar) -> np.ndarray:
    """(f_x, f_z, tau_pitch) -> (F_x, F_y, F_z, T_x, T_y, T_z)."""
    out = np.zeros(6)
    out[0] = planar[0]
    out[2] = planar[1]
    out[4] = planar[2]
    return out


def estimate_external_wrench(model: ArmModel, state: JointState, tau_measured_ext, last=None):
    """Recover the 6-component tip wrench from external joint torques.

    Returns ``(wrench, singular)``. At a singular Jacobian the previous
    estimate ``last`` (or zeros) is returned with the flag set.
    """
    jac = tip_jacobian(model.link_lengths, state.q)
    if min_eig_below(jac @ jac.T, SINGULAR_SV * SINGULAR_SV):
        prev = np.zeros(6) if last is None else np.asarray(last, dtype=float).copy()
        return prev, True
    planar = estimate_wrench_kernel(jac, np.asarray(tau_measured_ext, dtype=float))
    return embed_wrench(planar), False
