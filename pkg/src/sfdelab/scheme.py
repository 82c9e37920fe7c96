"""Drift-frozen Euler-Maruyama stepping on a fine master grid.

The macro clock advances in steps of 1/n; inside each macro step the state
is advanced over ``fine_per_macro`` fine substeps.  At every fine time s the
coefficients are evaluated on the frozen segment: the memory window at s
whose values are capped at the last macro grid time below s.  With
fine_per_macro = 1 this degenerates to the classical fully-frozen Euler
variant; larger values refine the within-step quadrature of the sliding
integrand.  The stochastic integral always uses left-point (Ito)
evaluation.

A run ends at the first fine time where the stop rule fires, where |X|
exceeds the overflow cap (the numerical proxy for leaving every compact
set), or at the horizon.  Non-finite states raise
:class:`SchemeDivergenceError` carrying the partial path and trace.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coefficients import CoefficientEvalError, CoefficientPair, frobenius_sq
from .segment import GRID_REL_TOL, PathBuffer, Segment, snap_to_grid

REASON_PREDICATE = "PREDICATE"
REASON_CAP = "CAP"
REASON_HORIZON = "HORIZON"
REASON_DIVERGED = "DIVERGED"


@dataclass(frozen=True)
class SchemeConfig:
    """Macro resolution n, fine substeps per macro step, stage horizon, overflow cap."""

    n: int
    horizon: float
    fine_per_macro: int = 8
    x_max: float = 1e8

    def __post_init__(self):
        if self.n < 1 or self.fine_per_macro < 1:
            raise ValueError("n and fine_per_macro must be positive integers")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.x_max <= 0:
            raise ValueError("overflow cap must be positive")
        snap_to_grid(self.horizon, self.dt, "horizon")

    @property
    def macro_dt(self) -> float:
        return 1.0 / self.n

    @property
    def dt(self) -> float:
        return 1.0 / (self.n * self.fine_per_macro)

    @property
    def steps(self) -> int:
        return snap_to_grid(self.horizon, self.dt, "horizon")


@dataclass(frozen=True)
class StopInfo:
    reason: str
    time: float
    index: int

    def to_dict(self) -> dict:
        return {"reason": self.reason, "time": self.time, "index": self.index}


class StepTrace:
    """Per-fine-step records: time, state, coefficient norms, optional perturbation norm.

    The perturbation norm is the sup distance between the frozen and the
    plain segment at the step time; it vanishes at macro grid times by
    construction and is only recorded when diagnostics are on.
    """

    def __init__(self, n: int, fine_per_macro: int, d: int, diagnostics: bool):
        self.n = n
        self.fine_per_macro = fine_per_macro
        self.diagnostics = diagnostics
        self._t = []
        self._x = []
        self._f = []
        self._g = []
        self._p = [] if diagnostics else None
        self._frozen = False
        self.t = self.x = self.f_norm = self.g_norm = None
        self.p_norm = None
        self.d = d

    def record(self, t, x, f_norm, g_norm, p_norm=None):
        self._t.append(t)
        self._x.append(x)
        self._f.append(f_norm)
        self._g.append(g_norm)
        if self._p is not None:
            self._p.append(p_norm)

    def finish(self):
        if self._frozen:
            return self
        self.t = np.asarray(self._t)
        self.x = np.asarray(self._x).reshape(len(self._t), self.d)
        self.f_norm = np.asarray(self._f)
        self.g_norm = np.asarray(self._g)
        if self._p is not None:
            self.p_norm = np.asarray(self._p)
        self._frozen = True
        return self

    def __len__(self) -> int:
        return len(self._t)

    def to_csv(self, fileobj) -> None:
        self.finish()
        cols = ["t"] + [f"x_{i + 1}" for i in range(self.d)] + ["f_norm", "g_norm"]
        if self.p_norm is not None:
            cols.append("p_norm")
        fileobj.write(",".join(cols) + "\n")
        for j in range(len(self.t)):
            row = [repr(float(self.t[j]))]
            row += [repr(float(v)) for v in self.x[j]]
            row += [repr(float(self.f_norm[j])), repr(float(self.g_norm[j]))]
            if self.p_norm is not None:
                row.append(repr(float(self.p_norm[j])))
            fileobj.write(",".join(row) + "\n")


class SchemeDivergenceError(RuntimeError):
    """The state became non-finite before hitting the overflow cap."""

    def __init__(self, message: str, path: PathBuffer, trace: StepTrace, info: StopInfo):
        super().__init__(message)
        self.path = path
        self.trace = trace.finish()
        self.info = info


def run(
    pair: CoefficientPair,
    phi: Segment,
    cfg: SchemeConfig,
    noise,
    stop=None,
    diagnostics: bool = False,
):
    """Advance the scheme from the initial segment until stop, cap, or horizon.

    ``stop`` is any object with ``begin(x0)`` and ``step(t, x) -> bool``,
    called after every fine step on the updated path.  Returns
    ``(path, stop_info, trace)``.
    """
    dt = cfg.dt
    if abs(phi.dt - dt) > GRID_REL_TOL * dt:
        raise ValueError(f"initial segment spacing {phi.dt} does not match the scheme grid {dt}")
    if pair.d != phi.d:
        raise ValueError("coefficient and initial-segment dimensions differ")
    if noise.m != pair.m:
        raise ValueError("noise dimension does not match the diffusion")
    steps = cfg.steps
    incs = noise.fine_increments(dt, steps)
    fpm = cfg.fine_per_macro

    path = PathBuffer(phi, capacity_hint=steps + 1)
    trace = StepTrace(cfg.n, fpm, phi.d, diagnostics)
    x = phi.terminal()
    if stop is not None:
        stop.begin(x)

    info = None
    for j in range(steps):
        s = j * dt
        cap_fine = (j // fpm) * fpm
        t_cap = cap_fine * dt
        frozen = path.frozen_segment_at(s, t_cap)
        try:
            drift = pair.eval_drift(frozen)
            diff = pair.eval_diffusion(frozen)
        except CoefficientEvalError as exc:
            bad = StopInfo(REASON_DIVERGED, s, j)
            raise SchemeDivergenceError(str(exc), path, trace, bad) from exc
        if diagnostics:
            actual = path.values_between(s - phi.r, s)
            gap = frozen.values - actual
            p_norm = float(np.sqrt((gap**2).sum(axis=1)).max())
            trace.record(s, x, float(np.sqrt((drift**2).sum())), np.sqrt(frobenius_sq(diff)), p_norm)
        else:
            trace.record(s, x, float(np.sqrt((drift**2).sum())), np.sqrt(frobenius_sq(diff)))
        x = x + drift * dt + diff @ incs[j]
        t_new = (j + 1) * dt
        if not np.isfinite(x).all():
            bad = StopInfo(REASON_DIVERGED, t_new, j + 1)
            raise SchemeDivergenceError("state became non-finite", path, trace, bad)
        path.append(x)
        if float(np.sqrt((x**2).sum())) > cfg.x_max:
            info = StopInfo(REASON_CAP, t_new, j + 1)
            break
        if stop is not None and stop.step(t_new, x):
            info = StopInfo(REASON_PREDICATE, t_new, j + 1)
            break
    if info is None:
        info = StopInfo(REASON_HORIZON, steps * dt, steps)
    return path, info, trace.finish()


def perturbation_sup(trace: StepTrace, window: int) -> float:
    """Max recorded perturbation norm over macro step ``window``; needs diagnostics on."""
    trace.finish()
    if trace.p_norm is None:
        raise ValueError("perturbation norms unavailable: run with diagnostics=True")
    fpm = trace.fine_per_macro
    lo = window * fpm
    hi = min((window + 1) * fpm, len(trace.t))
    if lo >= len(trace.t) or lo < 0:
        raise ValueError(f"macro window {window} outside the recorded trace")
    return float(trace.p_norm[lo:hi].max())
