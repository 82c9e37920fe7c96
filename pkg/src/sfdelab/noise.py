"""Brownian driver paths on dyadic grids with exact bridge refinement.

A :class:`NoiseGrid` stores the increments of an m-dimensional Brownian path
over the 2^level cells of [0, T].  Refining a grid splits every cell with a
Brownian-bridge midpoint: the midpoint value is the cell average plus an
independent N(0, delta/4) perturbation, so all coarse grid-point values are
preserved bit-exactly.  The perturbation for cell j of level l is a pure
function of (seed, l, j); generating at a level directly and refining to it
from any coarser level therefore produce identical arrays.  This is what
lets schemes at different step sizes be driven by one underlying path.

Gaussians are drawn by inverse-CDF from a Philox counter-based uniform
stream, which is the canonical, platform-stable source for the whole
package.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

from .segment import GRID_REL_TOL, snap_to_grid

# Domain separator for noise streams within the package-wide seeding scheme.
_NOISE_DOMAIN = 0x5FDE


def derive_seed(seed: int, *tags) -> int:
    """Stable 64-bit child seed for replica and stream derivation."""
    ss = np.random.SeedSequence([int(seed)] + [int(t) for t in tags])
    return int(ss.generate_state(1, np.uint64)[0])


def stream_normals(seed: int, tags, shape) -> np.ndarray:
    """Standard normals from the seeded Philox stream identified by integer tags.

    Uniforms are drawn as (k + 1/2) * 2^-53 with k a 53-bit integer, then
    mapped through the inverse normal CDF; the open-interval shift keeps the
    map finite without distorting the distribution.
    """
    ss = np.random.SeedSequence([_NOISE_DOMAIN, int(seed)] + [int(t) for t in tags])
    gen = np.random.Generator(np.random.Philox(ss))
    k = gen.integers(0, 1 << 53, size=shape, dtype=np.int64)
    return ndtri((k + 0.5) * 2.0**-53)


class NoiseGrid:
    """Increment array of an m-dimensional Brownian path on a dyadic grid of [0, T]."""

    __slots__ = ("m", "T", "level", "seed", "increments", "_w")

    def __init__(self, m: int, T: float, level: int, seed: int, increments: np.ndarray):
        self.m = int(m)
        self.T = float(T)
        self.level = int(level)
        self.seed = int(seed)
        increments.flags.writeable = False
        self.increments = increments
        self._w = None

    @classmethod
    def generate(cls, m: int, T: float, level: int, seed: int) -> "NoiseGrid":
        """Deterministic function of (m, T, level, seed) with 2^level increments.

        Built by iterated bridge refinement from a single level-0 increment,
        so a coarser generate refined to this level gives identical values.
        """
        if T <= 0:
            raise ValueError("horizon T must be positive")
        if level < 0:
            raise ValueError("level must be nonnegative")
        root = stream_normals(seed, (0,), (1, m)) * np.sqrt(T)
        grid = cls(m, T, 0, seed, root)
        for _ in range(level):
            grid = grid.refine()
        return grid

    @classmethod
    def for_grid(cls, m: int, dt: float, horizon: float, seed: int) -> "NoiseGrid":
        """Smallest dyadic grid whose spacing equals dt and whose span covers horizon."""
        steps = int(np.ceil(horizon / dt - GRID_REL_TOL))
        level = max(0, int(np.ceil(np.log2(max(steps, 1)))))
        while (1 << level) < steps:
            level += 1
        return cls.generate(m, dt * (1 << level), level, seed)

    @property
    def spacing(self) -> float:
        return self.T / (1 << self.level)

    @property
    def horizon(self) -> float:
        return self.T

    def refine(self) -> "NoiseGrid":
        """Split every cell with a Brownian-bridge midpoint; coarse values are preserved."""
        parent = self.increments
        n = parent.shape[0]
        delta = self.spacing
        mid = stream_normals(self.seed, (self.level + 1,), (n, self.m)) * np.sqrt(delta / 4.0)
        children = np.empty((2 * n, self.m), dtype=float)
        half = 0.5 * parent
        children[0::2] = half + mid
        children[1::2] = half - mid
        return NoiseGrid(self.m, self.T, self.level + 1, self.seed, children)

    def _w_values(self) -> np.ndarray:
        if self._w is None:
            n = self.increments.shape[0]
            w = np.empty((n + 1, self.m), dtype=float)
            w[0] = 0.0
            np.cumsum(self.increments, axis=0, out=w[1:])
            w.flags.writeable = False
            self._w = w
        return self._w

    def increment(self, j: int) -> np.ndarray:
        if not 0 <= j < self.increments.shape[0]:
            raise ValueError(f"increment index {j} out of range")
        return self.increments[j].copy()

    def value_at(self, t: float) -> np.ndarray:
        """W(t) for t a grid multiple in [0, T]."""
        j = snap_to_grid(t, self.spacing, "noise time")
        w = self._w_values()
        if not 0 <= j < w.shape[0]:
            raise ValueError(f"noise time {t} outside [0, {self.T}]")
        return w[j].copy()

    def fine_increments(self, dt: float, steps: int) -> np.ndarray:
        """Increments over [j*dt, (j+1)*dt) for j < steps; dt must be a multiple of the spacing."""
        return _aggregate_increments(self._w_values(), self.spacing, 0, dt, steps, self.T)

    def shifted(self, t0: float) -> "ShiftedNoise | NoiseGrid":
        """The driver W(t0 + .) - W(t0), re-based to start at 0."""
        if abs(t0) <= GRID_REL_TOL:
            return self
        return ShiftedNoise(self, t0)

    def to_csv(self, fileobj) -> None:
        header = "t," + ",".join(f"w_{i + 1}" for i in range(self.m))
        fileobj.write(header + "\n")
        w = self._w_values()
        delta = self.spacing
        for j in range(w.shape[0]):
            t = j * delta
            fileobj.write(repr(float(t)) + "," + ",".join(repr(float(v)) for v in w[j]) + "\n")


class ShiftedNoise:
    """View of a driver path past an offset, re-based so the offset is time 0."""

    __slots__ = ("base", "offset", "_j0")

    def __init__(self, base: NoiseGrid, offset: float):
        self.base = base
        self.offset = float(offset)
        self._j0 = snap_to_grid(offset, base.spacing, "noise shift")
        if not 0 <= self._j0 <= base.increments.shape[0]:
            raise ValueError(f"noise shift {offset} outside [0, {base.T}]")

    @property
    def m(self) -> int:
        return self.base.m

    @property
    def spacing(self) -> float:
        return self.base.spacing

    @property
    def horizon(self) -> float:
        return self.base.T - self.offset

    def value_at(self, t: float) -> np.ndarray:
        j = snap_to_grid(t, self.spacing, "noise time")
        w = self.base._w_values()
        if not 0 <= self._j0 + j < w.shape[0]:
            raise ValueError(f"noise time {t} outside shifted range [0, {self.horizon}]")
        return w[self._j0 + j] - w[self._j0]

    def fine_increments(self, dt: float, steps: int) -> np.ndarray:
        return _aggregate_increments(self.base._w_values(), self.spacing, self._j0, dt, steps, self.horizon)

    def shifted(self, t0: float):
        if abs(t0) <= GRID_REL_TOL:
            return self
        return ShiftedNoise(self.base, self.offset + t0)


def _aggregate_increments(w: np.ndarray, spacing: float, j0: int, dt: float, steps: int, horizon: float) -> np.ndarray:
    q = dt / spacing
    qi = int(round(q))
    if qi < 1 or abs(qi * spacing - dt) > GRID_REL_TOL * dt:
        raise ValueError(f"step {dt} is not a positive multiple of the noise spacing {spacing}")
    if steps * dt > horizon + GRID_REL_TOL * max(1.0, horizon):
        raise ValueError(f"requested {steps} steps of {dt} exceed the noise horizon {horizon}")
    idx = j0 + qi * np.arange(steps + 1)
    vals = w[idx]
    return vals[1:] - vals[:-1]
