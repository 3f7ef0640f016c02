"""Scraping MDP: 10 Hz hybrid actions over a 500 Hz impedance controller and 1 kHz physics.

Observation layout (25 values, index: meaning)::

    0-2   tip position x, y, z            (y always 0)
    3-5   tip orientation roll, pitch, yaw (roll, yaw always 0)
    6     tip speed sqrt(xdot^2 + zdot^2)
    7-12  external wrench F_x F_y F_z T_x T_y T_z  (F_y, T_x, T_z always 0)
    13-24 three clusters, each c_x c_y c_z p  (sorted by c_z, highest first)

The wrench is the one the environment exerts on the tool, so pressing
into the wall shows up as negative F_x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .arm import (MAX_CONDITION, ArmModel, JointState, TaskState, forward_kinematics,
                  inverse_kinematics, link_points, matvec, rmatvec, step_kernel,
                  tip_jacobian)
from .controller import ImpedanceParams, compose_kernel, embed_wrench, estimate_wrench_kernel
from .material import (ClusterSummary, MaterialProfile, VialGeometry, dislodge_kernel,
                       generate_profile, removed_fraction, summarize_clusters)
from .noise import MASK64, splitmix64

OBS_DIM = 25
ACT_DIM = 3


def derive_seed(*parts: int) -> int:
    """Mix integers into one 64-bit seed with splitmix64."""
    state = 0x5CA1AB1E
    out = 0
    for p in parts:
        state, out = splitmix64((state ^ (int(p) & MASK64)) & MASK64)
        state = out
    return out


@dataclass
class ContactParams:
    wall_stiffness: float = 5000.0
    wall_damping: float = 50.0
    friction_coeff: float = 0.3
    # velocity scale of the tanh-regularized Coulomb law
    friction_velocity: float = 1e-3
    # tip length exempt from shaft-rim checks (the functional blade)
    blade_length: float = 0.005


@dataclass
class RewardParams:
    lambda_c: float = 0.01
    epsilon: float = 0.1
    milestone_levels: tuple = (0.5, 0.9)
    milestone_bonuses: tuple = (5.0, 10.0)
    wrench_norm: str = "wrench"        # "wrench" (all 6) or "force" (F only)
    wrench_aggregate: str = "mean"     # "mean" over control ticks or "last"


@dataclass
class EpisodeConfig:
    horizon: int = 300
    policy_hz: int = 10
    control_hz: int = 500
    physics_hz: int = 1000
    friction_range: tuple = (0.02, 0.15)
    settle_time: float = 0.1
    noise_seed: int = 0
    spatial_seed: int = 0
    friction_seed: int = 0
    cluster_seed: int = 0

    def __post_init__(self):
        if self.physics_hz % self.control_hz or self.control_hz % self.policy_hz:
            raise ValueError("physics_hz must be a multiple of control_hz, control_hz of policy_hz")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")


@dataclass
class MaterialParams:
    count: int = 300
    f_min: float = 1.0
    f_max: float = 8.0
    capture_radius: float = 0.004
    frequency: float = 8.0
    octaves: int = 3
    persistence: float = 0.5
    noise_v: float = 0.37


@dataclass
class ActionBounds:
    f_x_max: float = 10.0
    tau_max: float = 2.0


@dataclass
class EnvConfig:
    arm: ArmModel = field(default_factory=ArmModel)
    impedance: ImpedanceParams = field(default_factory=ImpedanceParams)
    geometry: VialGeometry = field(default_factory=VialGeometry)
    contact: ContactParams = field(default_factory=ContactParams)
    reward: RewardParams = field(default_factory=RewardParams)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    material: MaterialParams = field(default_factory=MaterialParams)
    bounds: ActionBounds = field(default_factory=ActionBounds)
    # tool leans 0.1 rad off vertical so the shaft clears the rim while pressing
    initial_pitch: float = -math.pi / 2 + 0.1
    initial_q1: float = 1.2


@dataclass
class Action:
    f_x_cmd: float
    tau_y_cmd: float
    z_desired: float

    def as_array(self):
        return np.array([self.f_x_cmd, self.tau_y_cmd, self.z_desired])


@dataclass
class Observation:
    tip_position: np.ndarray
    tip_orientation: np.ndarray
    speed: float
    wrench: np.ndarray
    clusters: np.ndarray  # (3, 4)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.tip_position, self.tip_orientation, [self.speed],
                               self.wrench, self.clusters.ravel()])

    @classmethod
    def from_vector(cls, vec) -> "Observation":
        v = np.asarray(vec, dtype=float)
        if v.shape != (OBS_DIM,):
            raise ValueError(f"observation vector must have {OBS_DIM} entries")
        return cls(v[0:3].copy(), v[3:6].copy(), float(v[6]), v[7:13].copy(),
                   v[13:25].reshape(3, 4).copy())


@dataclass
class RewardBreakdown:
    r_m: float
    r_e: float
    r_c: float
    total: float
    lambda_c: float


LOG_COLUMNS = ("step", "f_x_cmd", "tau_y_cmd", "z_desired", "F_x", "F_z", "T_y",
               "delta_m", "r_m", "r_e", "r_c", "total", "removed_fraction")


# ---------------------------------------------------------------- helpers

def action_from_raw(raw, cfg: EnvConfig) -> Action:
    """Affine map of a policy output in [-1, 1]^3 onto the action box."""
    a = np.clip(np.asarray(raw, dtype=float), -1.0, 1.0)
    g = cfg.geometry
    return Action(f_x_cmd=0.5 * (a[0] + 1.0) * cfg.bounds.f_x_max,
                  tau_y_cmd=a[1] * cfg.bounds.tau_max,
                  z_desired=g.bottom_z + 0.5 * (a[2] + 1.0) * (g.rim_z - g.bottom_z))


def clamp_action(action: Action, cfg: EnvConfig) -> Action:
    vals = action.as_array()
    if not np.all(np.isfinite(vals)):
        raise ValueError("action has non-finite entries")
    g = cfg.geometry
    return Action(float(np.clip(vals[0], 0.0, cfg.bounds.f_x_max)),
                  float(np.clip(vals[1], -cfg.bounds.tau_max, cfg.bounds.tau_max)),
                  float(np.clip(vals[2], g.bottom_z, g.rim_z)))


def compute_reward(delta_m: float, wrench_mean, milestones_crossed, shaft_contact_force_sum: float,
                   params: RewardParams | None = None) -> RewardBreakdown:
    """r = r_m + r_e - lambda_c * r_c with r_m = delta_m / (|F| + eps).

    ``milestones_crossed`` is an iterable of milestone indices (into
    ``params.milestone_bonuses``) crossed during this step.
    """
    p = params or RewardParams()
    if delta_m < 0:
        raise ValueError("delta_m must be non-negative")
    w = np.asarray(wrench_mean, dtype=float)
    if p.wrench_norm == "force":
        w = w[:3]
    elif p.wrench_norm != "wrench":
        raise ValueError(f"unknown wrench norm {p.wrench_norm!r}")
    r_m = delta_m / (float(np.linalg.norm(w)) + p.epsilon) if delta_m > 0 else 0.0
    r_e = float(sum(p.milestone_bonuses[i] for i in milestones_crossed))
    r_c = float(shaft_contact_force_sum)
    return RewardBreakdown(r_m, r_e, r_c, r_m + r_e - p.lambda_c * r_c, p.lambda_c)


def assemble_observation(task: TaskState, wrench_estimate, summary: ClusterSummary) -> Observation:
    clusters = np.column_stack([summary.centroids, summary.residue_pct])
    return Observation(tip_position=np.array([task.x[0], 0.0, task.x[1]]),
                       tip_orientation=np.array([0.0, task.pitch, 0.0]),
                       speed=task.speed, wrench=np.asarray(wrench_estimate, dtype=float).copy(),
                       clusters=clusters)


def observation_scales(geometry: VialGeometry):
    """Documented normalization: (obs - offset) / scale.

    Positions are centred on the wall at mid-window and scaled by 3 cm;
    pitch is centred on the tool-down pose; forces use 5 N, torques
    0.5 N m, speed 5 cm/s and residue 100/3 %.
    """
    zc = 0.5 * (geometry.window_z_min + geometry.window_z_max)
    offset = np.zeros(OBS_DIM)
    scale = np.ones(OBS_DIM)
    offset[[0, 2]] = geometry.wall_x, zc
    scale[[0, 1, 2]] = 0.03
    offset[4] = -math.pi / 2
    scale[4] = 0.1
    scale[6] = 0.05
    scale[7:10] = 5.0
    scale[10:13] = 0.5
    for c in range(3):
        b = 13 + 4 * c
        offset[b] = geometry.wall_x
        offset[b + 2] = zc
        scale[b:b + 3] = 0.03
        scale[b + 3] = 100.0 / 3.0
    return offset, scale


def normalize_observation(vec, geometry: VialGeometry) -> np.ndarray:
    offset, scale = observation_scales(geometry)
    return (np.asarray(vec, dtype=float) - offset) / scale


# ---------------------------------------------------------------- kernels

@njit(cache=True)
def contact_kernel(tip_x, tip_z, vx, vz, omega, wrist_x, wrist_z, wall_x, far_x, rim_z,
                   blade, k_w, d_w, mu, v_eps):
    """Penalty contact of tool tip and shaft with the vial.

    Returns (normal_force, shaft_force, f_x, f_z, moment) where the last
    three are the equivalent wrench on the tool tip.
    """
    normal = 0.0
    fx = 0.0
    fz = 0.0
    moment = 0.0
    pen = tip_x - wall_x
    if pen > 0.0 and tip_z <= rim_z:
        normal = k_w * pen + d_w * vx
        if normal < 0.0:
            normal = 0.0
        fx -= normal
        fz -= mu * normal * math.tanh(vz / v_eps)
    shaft = 0.0
    if tip_z < rim_z - blade and wrist_z > rim_z:
        s = (rim_z - tip_z) / (wrist_z - tip_z)
        dx = s * (wrist_x - tip_x)
        dz = rim_z - tip_z
        rx = tip_x + dx
        rvx = vx - omega * dz
        f = 0.0
        if rx > wall_x:
            f = -(k_w * (rx - wall_x) + d_w * rvx)
            if f > 0.0:
                f = 0.0
        elif rx < far_x:
            f = k_w * (far_x - rx) - d_w * rvx
            if f < 0.0:
                f = 0.0
        shaft = abs(f)
        fx += f
        moment += -dz * f
    return normal, shaft, fx, fz, moment


@njit(cache=True)
def policy_step_kernel(q, qd, lengths, masses, g, friction, stiffness, damping, k_ns, d_ns,
                       posture, x_hold, pitch_hold, cmd, wall_x, far_x, rim_z, blade, k_w, d_w,
                       mu, v_eps, px, pz, thr, attached, detach_force, capture, n_control,
                       ticks_per_control, dt, dislodge, wrench_sum, wrench_last):
    """Run ``n_control`` controller ticks; q, qd and particle state are updated in place.

    Returns (removed_count, shaft_force_sum, normal_force_sum, status) with
    status 0 ok, 1 singular Jacobian seen, 2 dynamics failure.
    """
    removed = 0
    shaft_sum = 0.0
    normal_sum = 0.0
    status = 0
    w = np.zeros(3)
    for c in range(n_control):
        tau, _, _, _, singular = compose_kernel(lengths, masses, g, q, qd, stiffness, damping,
                                                k_ns, d_ns, posture, x_hold, pitch_hold, cmd)
        if singular and status == 0:
            status = 1
        for t in range(ticks_per_control):
            pts = link_points(lengths, q)
            jac = tip_jacobian(lengths, q)
            v = matvec(jac, qd)
            normal, shaft, fx, fz, mom = contact_kernel(
                pts[3, 0], pts[3, 1], v[0], v[1], v[2], pts[2, 0], pts[2, 1], wall_x, far_x,
                rim_z, blade, k_w, d_w, mu, v_eps)
            w[0] = fx
            w[1] = fz
            w[2] = mom
            shaft_sum += shaft
            normal_sum += normal
            if dislodge and normal > 0.0:
                removed += dislodge_kernel(px, pz, thr, attached, detach_force, pts[3, 0],
                                           pts[3, 1], normal, capture)
            cond = step_kernel(lengths, masses, g, friction, q, qd, tau, w, dt)
            if not (cond <= MAX_CONDITION) or not np.isfinite(q.sum() + qd.sum()):
                return removed, shaft_sum, normal_sum, 2
        # measured external torques -> wrench estimate at the control rate
        jac = tip_jacobian(lengths, q)
        est = estimate_wrench_kernel(jac, rmatvec(jac, w))
        for i in range(3):
            wrench_sum[i] += est[i]
            wrench_last[i] = est[i]
    return removed, shaft_sum, normal_sum, status


def wall_contact(tip: TaskState, geometry: VialGeometry, contact: ContactParams | None = None,
                 wrist=None):
    """Normal force on the tool tip and shaft-rim penalty force (both N).

    ``wrist`` is the upper end of the tool link; without it only the tip is
    checked.
    """
    c = contact or ContactParams()
    wx, wz = (tip.x[0], tip.x[1]) if wrist is None else (wrist[0], wrist[1])
    normal, shaft, *_ = contact_kernel(
        float(tip.x[0]), float(tip.x[1]), float(tip.xdot[0]), float(tip.xdot[1]),
        float(tip.xdot[2]), float(wx), float(wz), geometry.wall_x,
        geometry.wall_x - 2 * geometry.inner_radius, geometry.rim_z, c.blade_length,
        c.wall_stiffness, c.wall_damping, c.friction_coeff, c.friction_velocity)
    return normal, shaft


# -------------------------------------------------------------- environment

class ScrapeEnv:
    """One scraping episode at a time; not thread-safe, never shared."""

    def __init__(self, config: EnvConfig | None = None):
        self.cfg = config or EnvConfig()
        ep = self.cfg.episode
        self.ticks_per_control = ep.physics_hz // ep.control_hz
        self.controls_per_step = ep.control_hz // ep.policy_hz
        self.dt = 1.0 / ep.physics_hz
        g = self.cfg.geometry
        self.q_home = inverse_kinematics(self.cfg.arm, (g.wall_x, g.window_z_max),
                                         self.cfg.initial_pitch, self.cfg.initial_q1)
        self.profile: MaterialProfile | None = None
        self.active = False

    # seeds ---------------------------------------------------------------
    def episode_seeds(self, profile_seed: int, episode_seed: int = 0):
        ep = self.cfg.episode
        return (derive_seed(ep.noise_seed, profile_seed, 1),
                derive_seed(ep.spatial_seed, profile_seed, 2),
                derive_seed(ep.friction_seed, profile_seed, episode_seed, 3))

    def reset(self, profile_seed: int = 0, episode_seed: int = 0) -> Observation:
        cfg = self.cfg
        m = cfg.material
        noise_seed, spatial_seed, friction_seed = self.episode_seeds(profile_seed, episode_seed)
        self.profile = generate_profile(noise_seed, spatial_seed, m.count, m.f_min, m.f_max,
                                        cfg.geometry, frequency=m.frequency, octaves=m.octaves,
                                        persistence=m.persistence, noise_v=m.noise_v)
        lo, hi = cfg.episode.friction_range
        rng = np.random.default_rng(friction_seed)
        self.friction = rng.uniform(lo, hi, size=4)
        self.model = replace(cfg.arm, joint_viscous_friction=self.friction)
        self.q = self.q_home.copy()
        self.qd = np.zeros(4)
        self.posture = self.q_home.copy()
        self.x_hold = cfg.geometry.wall_x
        self.pitch_hold = cfg.initial_pitch
        self.t = 0
        self.milestones = [False] * len(cfg.reward.milestone_levels)
        self.summary = summarize_clusters(self.profile, seed=cfg.episode.cluster_seed)
        self.active = True
        self.failed = False
        self.wrench = np.zeros(6)
        # settle with zero commanded wrench at the starting height
        n_settle = int(round(cfg.episode.settle_time * cfg.episode.control_hz))
        if n_settle > 0:
            cmd = np.array([0.0, 0.0, 0.0, cfg.geometry.window_z_max])
            self._run(cmd, n_settle, dislodge=False)
        return self._observe()

    def _run(self, cmd, n_control, dislodge=True):
        cfg = self.cfg
        imp = cfg.impedance
        c = cfg.contact
        g = cfg.geometry
        p = self.profile
        wsum = np.zeros(3)
        wlast = np.zeros(3)
        out = policy_step_kernel(
            self.q, self.qd, self.model.link_lengths, self.model.link_masses,
            float(self.model.gravity), self.model.joint_viscous_friction, imp.stiffness,
            imp.damping, float(imp.nullspace_stiffness), float(imp.nullspace_damping),
            self.posture, float(self.x_hold), float(self.pitch_hold), cmd, g.wall_x,
            g.wall_x - 2 * g.inner_radius, g.rim_z, c.blade_length, c.wall_stiffness,
            c.wall_damping, c.friction_coeff, c.friction_velocity, p.x, p.z, p.thresholds,
            p.attached, p.detach_force, cfg.material.capture_radius, n_control,
            self.ticks_per_control, self.dt, dislodge, wsum, wlast)
        removed, shaft_sum, normal_sum, status = out
        self.wrench = embed_wrench(wlast)
        return removed, shaft_sum, normal_sum, status, embed_wrench(wsum / n_control)

    def task_state(self) -> TaskState:
        return forward_kinematics(self.model, JointState(self.q, self.qd))

    def _observe(self) -> Observation:
        return assemble_observation(self.task_state(), self.wrench, self.summary)

    def step(self, action: Action | np.ndarray):
        """Returns ``(observation, reward, terminated, truncated, info)``."""
        if not self.active:
            raise RuntimeError("episode is not active; call reset()")
        if not isinstance(action, Action):
            a = np.asarray(action, dtype=float)
            action = Action(*a)
        action = clamp_action(action, self.cfg)
        cmd = np.array([action.f_x_cmd, 0.0, action.tau_y_cmd, action.z_desired])
        before = removed_fraction(self.profile)
        removed, shaft_sum, normal_sum, status, wmean = self._run(cmd, self.controls_per_step)
        self.t += 1
        frac = removed_fraction(self.profile)
        delta_m = removed * self.profile.mass
        crossed = []
        for i, level in enumerate(self.cfg.reward.milestone_levels):
            if not self.milestones[i] and before < level <= frac + 1e-12:
                self.milestones[i] = True
                crossed.append(i)
        wr = wmean if self.cfg.reward.wrench_aggregate == "mean" else self.wrench
        reward = compute_reward(delta_m, wr, crossed, shaft_sum, self.cfg.reward)
        if removed > 0:
            self.summary = summarize_clusters(self.profile, seed=self.cfg.episode.cluster_seed,
                                              previous=self.summary)
        failed = status == 2
        terminated = failed or frac >= 1.0
        truncated = (not terminated) and self.t >= self.cfg.episode.horizon
        if terminated or truncated:
            self.active = False
        self.failed = failed
        info = {"removed_fraction": frac, "delta_m": delta_m, "reward": reward,
                "wrench_mean": wmean, "normal_force_mean": normal_sum /
                (self.controls_per_step * self.ticks_per_control),
                "shaft_force_sum": shaft_sum, "dynamics_failure": failed,
                "singular": status == 1, "action": action}
        return self._observe(), reward.total, terminated, truncated, info

    def log_row(self, info) -> dict:
        a = info["action"]
        r = info["reward"]
        w = info["wrench_mean"]
        return {"step": self.t, "f_x_cmd": a.f_x_cmd, "tau_y_cmd": a.tau_y_cmd,
                "z_desired": a.z_desired, "F_x": w[0], "F_z": w[2], "T_y": w[4],
                "delta_m": info["delta_m"], "r_m": r.r_m, "r_e": r.r_e, "r_c": r.r_c,
                "total": r.total, "removed_fraction": info["removed_fraction"]}
