"""Seeded 2-D Perlin gradient noise.

The permutation table is a Fisher-Yates shuffle of 0..255 driven by a
splitmix64 generator, so a given seed produces the same table on every
platform. Gradients are the 8 unit vectors at multiples of 45 degrees;
raw noise is scaled by sqrt(2) so its theoretical bound is exactly 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MASK64 = (1 << 64) - 1
SQRT2 = math.sqrt(2.0)

_ANGLES = np.arange(8) * (math.pi / 4.0)
GRADIENTS = np.stack([np.cos(_ANGLES), np.sin(_ANGLES)], axis=1)

# Upper bound on |d perlin2 / du| and |d perlin2 / dv|. Measured from the
# analytic partials on a 121x121 grid per cell over all 8**4 corner-gradient
# assignments (max 2.832), then rounded up. Independent of the table.
LIPSCHITZ_BOUND = 3.0


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state. Returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def permutation_table(seed: int) -> np.ndarray:
    """512-entry table: a seeded shuffle of 0..255, written twice."""
    p = list(range(256))
    state = seed & MASK64
    for i in range(255, 0, -1):
        state, r = splitmix64(state)
        j = r % (i + 1)
        p[i], p[j] = p[j], p[i]
    return np.array(p + p, dtype=np.int64)


@dataclass(frozen=True)
class PerlinField:
    seed: int = 0
    frequency: float = 8.0
    octaves: int = 3
    persistence: float = 0.5
    permutation: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.octaves < 1:
            raise ValueError("octaves must be a positive integer")
        if not 0.0 < self.persistence <= 1.0:
            raise ValueError("persistence must lie in (0, 1]")
        if not (self.frequency > 0 and math.isfinite(self.frequency)):
            raise ValueError("frequency must be positive")
        object.__setattr__(self, "permutation", permutation_table(self.seed))

    def __eq__(self, other):
        if not isinstance(other, PerlinField):
            return NotImplemented
        return (self.seed, self.frequency, self.octaves, self.persistence) == (
            other.seed, other.frequency, other.octaves, other.persistence)

    def __hash__(self):
        return hash((self.seed, self.frequency, self.octaves, self.persistence))


def fade(t):
    """Quintic smoothstep 6t^5 - 15t^4 + 10t^3 on [0, 1]."""
    arr = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError("fade is defined on [0, 1]")
    # Horner rounding can overshoot 1 by an ulp near t = 1
    out = np.clip(_fade(arr), 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def _fade(t):
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def perlin2(pf: PerlinField, u, v):
    """Single-octave gradient noise in [-1, 1]; zero on the integer lattice."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    scalar = u.ndim == 0 and v.ndim == 0
    u, v = np.broadcast_arrays(np.atleast_1d(u), np.atleast_1d(v))
    fu, fv = np.floor(u), np.floor(v)
    x, y = u - fu, v - fv
    xi = fu.astype(np.int64) & 255
    yi = fv.astype(np.int64) & 255
    p = pf.permutation
    h00 = p[p[xi] + yi] & 7
    h10 = p[p[xi + 1] + yi] & 7
    h01 = p[p[xi] + yi + 1] & 7
    h11 = p[p[xi + 1] + yi + 1] & 7
    g = GRADIENTS
    n00 = g[h00, 0] * x + g[h00, 1] * y
    n10 = g[h10, 0] * (x - 1.0) + g[h10, 1] * y
    n01 = g[h01, 0] * x + g[h01, 1] * (y - 1.0)
    n11 = g[h11, 0] * (x - 1.0) + g[h11, 1] * (y - 1.0)
    a = _fade(x)
    b = _fade(y)
    lo = n00 + a * (n10 - n00)
    hi = n01 + a * (n11 - n01)
    out = np.clip(SQRT2 * (lo + b * (hi - lo)), -1.0, 1.0)
    return float(out[0]) if scalar else out


def fractal2(pf: PerlinField, u, v):
    """Octave sum of perlin2 starting at pf.frequency, renormalized to [-1, 1]."""
    total = 0.0
    norm = 0.0
    amp = 1.0
    freq = pf.frequency
    for _ in range(pf.octaves):
        total = total + amp * perlin2(pf, np.multiply(u, freq), np.multiply(v, freq))
        norm += amp
        amp *= pf.persistence
        freq *= 2.0
    return total / norm


def sample_threshold(pf: PerlinField, u, v, f_min: float, f_max: float):
    """Affine map of fractal noise onto the force interval [f_min, f_max]."""
    if not (f_min > 0 and f_max > 0):
        raise ValueError("force bounds must be positive")
    if f_min >= f_max:
        raise ValueError("f_min must be below f_max")
    n = fractal2(pf, u, v)
    return f_min + (n + 1.0) * 0.5 * (f_max - f_min)
