"""Particle material stuck to the vial wall.

Particles sit on the wall line x = wall_x inside the target window. Each
carries a dislodgement threshold drawn from a Perlin hardness field; a
particle detaches when the tool tip is within the capture radius and the
contact normal force reaches its threshold. Masses are uniform and sum to
one, so removed mass is directly a fraction.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .kmeans import kmeans
from .noise import PerlinField, sample_threshold

PROFILE_FORMAT = "scrapelab-profile 1"


@dataclass(frozen=True)
class VialGeometry:
    wall_x: float = 0.55
    window_z_min: float = 0.07
    window_z_max: float = 0.13
    bottom_z: float = 0.06
    rim_z: float = 0.15
    inner_radius: float = 0.0125

    def __post_init__(self):
        if not (self.bottom_z < self.window_z_min < self.window_z_max < self.rim_z):
            raise ValueError("need bottom_z < window_z_min < window_z_max < rim_z")
        if self.inner_radius <= 0:
            raise ValueError("inner_radius must be positive")

    @property
    def window_span(self) -> float:
        return self.window_z_max - self.window_z_min


@dataclass(frozen=True)
class Particle:
    pos: tuple
    threshold: float
    attached: bool
    mass: float


@dataclass
class MaterialProfile:
    """Array-backed particle set; ``particles`` gives the per-particle view."""

    x: np.ndarray
    z: np.ndarray
    thresholds: np.ndarray
    attached: np.ndarray
    noise: PerlinField | None = None
    spatial_seed: int = 0
    f_min: float = 1.0
    f_max: float = 8.0
    # force at which each particle came off (NaN while attached)
    detach_force: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        n = len(self.z)
        if self.detach_force is None:
            self.detach_force = np.full(n, np.nan)
        self.attached = np.asarray(self.attached, dtype=np.bool_)

    @property
    def count(self) -> int:
        return len(self.z)

    @property
    def mass(self) -> float:
        return 1.0 / self.count

    @property
    def particles(self) -> list[Particle]:
        m = self.mass
        return [Particle((float(x), float(z)), float(t), bool(a), m)
                for x, z, t, a in zip(self.x, self.z, self.thresholds, self.attached)]

    def copy(self) -> "MaterialProfile":
        return MaterialProfile(self.x.copy(), self.z.copy(), self.thresholds.copy(),
                               self.attached.copy(), self.noise, self.spatial_seed,
                               self.f_min, self.f_max, self.detach_force.copy())


def generate_profile(noise_seed: int, spatial_seed: int, count: int = 300, f_min: float = 1.0,
                     f_max: float = 8.0, geometry: VialGeometry | None = None, *,
                     frequency: float = 8.0, octaves: int = 3, persistence: float = 0.5,
                     noise_v: float = 0.37, min_spacing: float = 5e-5) -> MaterialProfile:
    """Jittered-grid particles over the window with Perlin thresholds.

    The window is split into ``count`` equal cells along z and each particle
    is placed uniformly inside its cell. The hardness field is sampled at
    u = normalized window height, v = ``noise_v``.
    """
    geometry = geometry or VialGeometry()
    if not 200 <= count <= 500:
        raise ValueError("particle count must lie in [200, 500]")
    if f_min >= f_max:
        raise ValueError("f_min must be below f_max")
    span = geometry.window_span
    cell = span / count
    if cell < min_spacing:
        raise ValueError(f"window of {span} m too small for {count} particles")
    rng = np.random.default_rng(spatial_seed)
    jitter = rng.random(count)
    z = geometry.window_z_min + (np.arange(count) + jitter) * cell
    pf = PerlinField(seed=noise_seed, frequency=frequency, octaves=octaves,
                     persistence=persistence)
    u = (z - geometry.window_z_min) / span
    thr = np.asarray(sample_threshold(pf, u, np.full(count, noise_v), f_min, f_max))
    return MaterialProfile(x=np.full(count, geometry.wall_x), z=z, thresholds=thr,
                           attached=np.ones(count, dtype=np.bool_), noise=pf,
                           spatial_seed=spatial_seed, f_min=f_min, f_max=f_max)


@njit(cache=True)
def dislodge_kernel(px, pz, thresholds, attached, detach_force, tip_x, tip_z, force, radius):
    """Detach reachable particles whose threshold the force meets; returns the count."""
    removed = 0
    r2 = radius * radius
    for i in range(len(pz)):
        if not attached[i] or thresholds[i] > force:
            continue
        dx = px[i] - tip_x
        dz = pz[i] - tip_z
        if dx * dx + dz * dz <= r2:
            attached[i] = False
            detach_force[i] = force
            removed += 1
    return removed


def dislodge_step(profile: MaterialProfile, tip, contact_normal_force: float,
                  capture_radius: float = 0.004):
    """Returns ``(newly_removed_mass, removed_ids)``; mutates ``profile``."""
    if contact_normal_force < 0:
        raise ValueError("contact normal force must be non-negative")
    pos = tip.x if hasattr(tip, "x") else tip
    before = profile.attached.copy()
    n = dislodge_kernel(profile.x, profile.z, profile.thresholds, profile.attached,
                        profile.detach_force, float(pos[0]), float(pos[1]),
                        float(contact_normal_force), float(capture_radius))
    ids = np.flatnonzero(before & ~profile.attached)
    return n * profile.mass, ids


def removed_fraction(profile: MaterialProfile) -> float:
    return float(np.count_nonzero(~profile.attached)) / profile.count


@dataclass
class ClusterSummary:
    centroids: np.ndarray    # (3, 3) world (x, y, z)
    residue_pct: np.ndarray  # (3,)


def summarize_clusters(profile: MaterialProfile, k: int = 3, seed: int = 0,
                       previous: ClusterSummary | None = None) -> ClusterSummary:
    """k-means summary of the attached particles, sorted top to bottom.

    Empty slots keep the centroid from ``previous`` (or the initial material
    centroid) and report 0 %.
    """
    if k != 3:
        raise ValueError("the observation layout fixes k = 3")
    if previous is not None:
        fallback = previous.centroids.copy()
    else:
        fallback = np.tile([np.mean(profile.x), 0.0, np.mean(profile.z)], (k, 1))
    centroids = fallback.copy()
    pct = np.zeros(k)
    idx = np.flatnonzero(profile.attached)
    if len(idx) > 0:
        pts = np.column_stack([profile.x[idx], profile.z[idx]])
        kk = min(k, len(idx))
        cents, assign = kmeans(pts, kk, seed=seed)
        counts = np.bincount(assign, minlength=kk)
        live = [j for j in range(kk) if counts[j] > 0]
        live.sort(key=lambda j: -cents[j, 1])
        for slot, j in enumerate(live):
            centroids[slot] = (cents[j, 0], 0.0, cents[j, 1])
            pct[slot] = 100.0 * counts[j] / profile.count
    return ClusterSummary(centroids, pct)


def dump_profile(profile: MaterialProfile) -> str:
    """Versioned text: header line, then ``x z threshold attached`` per particle."""
    buf = io.StringIO()
    buf.write(PROFILE_FORMAT + "\n")
    for x, z, t, a in zip(profile.x, profile.z, profile.thresholds, profile.attached):
        buf.write(f"{float(x)!r} {float(z)!r} {float(t)!r} {int(a)}\n")
    return buf.getvalue()


def load_profile(text: str) -> MaterialProfile:
    lines = text.strip().splitlines()
    if not lines or lines[0].strip() != PROFILE_FORMAT:
        raise ValueError("not a scrapelab profile (bad header)")
    rows = [ln.split() for ln in lines[1:] if ln.strip()]
    x = np.array([float(r[0]) for r in rows])
    z = np.array([float(r[1]) for r in rows])
    t = np.array([float(r[2]) for r in rows])
    a = np.array([r[3] == "1" for r in rows], dtype=np.bool_)
    return MaterialProfile(x, z, t, a, f_min=float(t.min()), f_max=float(t.max()))
