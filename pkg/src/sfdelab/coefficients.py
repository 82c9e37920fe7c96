"""Functional coefficients on segments, their built-in catalog, and condition probers.

Drift maps a segment to R^d, diffusion to R^{d x m}.  The catalog covers
point evaluations phi(sum_i w_i x(t_i)) with nonnegative weights and lags in
[-r, 0], kernel integrals of psi(x(s)) k(s) over [-r, -r0], terminal maps
with a non-increasing profile (the dissipative building block), plus linear
and constant coefficients and sums/scalar multiples of all of these.  Every
coefficient carries a structured descriptor so it can be serialized into a
config or report and rebuilt in a worker process.

The probers evaluate the one-sided (monotonicity) pairing
``2<f(x)-f(y), x(0)-y(0)> + |g(x)-g(y)|_F^2`` on sampled segment pairs that
agree on the early part of the window, and the coercivity pairing
``2<f(x), x(0)> + |g(x)|_F^2 - rho(|x|_sup^2)`` on sampled segments.  They
estimate constants and report witnesses; they can refute a condition but
never certify it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .segment import GRID_REL_TOL, Segment, snap_to_grid, sup_dist


class CoefficientEvalError(RuntimeError):
    """A coefficient produced a non-finite value; carries the offending segment."""

    def __init__(self, message: str, segment: Segment):
        super().__init__(message)
        self.segment = segment


# ---------------------------------------------------------------------------
# scalar profiles
# ---------------------------------------------------------------------------


def _p_identity(s):
    return s


def _p_negate(s):
    return -s


def _p_square(s):
    return np.square(s)


def _p_cube(s):
    return s * s * s


def _p_neg_cube(s):
    return -(s * s * s)


def _p_neg_sign_sqrt(s):
    # sign(0) = 0, so the profile vanishes at 0; no derivatives are ever taken.
    return -np.sign(s) * np.sqrt(np.abs(s))


def _p_sin(s):
    return np.sin(s)


@dataclass(frozen=True)
class Profile:
    """Named scalar map applied componentwise, with its monotonicity flag."""

    name: str
    fn: object = field(repr=False, compare=False)
    non_increasing: bool
    params: dict = field(default_factory=dict)

    def __call__(self, s):
        return self.fn(s)

    def descriptor(self) -> dict:
        out = {"name": self.name}
        out.update(self.params)
        return out


def profile(name: str, **params) -> Profile:
    """Look up a profile by name; parametric entries take their parameters as kwargs."""
    if name == "constant":
        value = float(params["value"])
        return Profile(name, lambda s, _v=value: np.full_like(np.asarray(s, dtype=float), _v), True, {"value": value})
    if name == "linear":
        slope = float(params["slope"])
        return Profile(name, lambda s, _a=slope: _a * np.asarray(s, dtype=float), slope <= 0, {"slope": slope})
    fixed = {
        "identity": (_p_identity, False),
        "negate": (_p_negate, True),
        "square": (_p_square, False),
        "cube": (_p_cube, False),
        "neg_cube": (_p_neg_cube, True),
        "neg_sign_sqrt": (_p_neg_sign_sqrt, True),
        "sin": (_p_sin, False),
    }
    if name not in fixed:
        raise ValueError(f"unknown profile {name!r}")
    if params:
        raise ValueError(f"profile {name!r} takes no parameters")
    fn, noninc = fixed[name]
    return Profile(name, fn, noninc)


def profile_from_descriptor(desc: dict) -> Profile:
    desc = dict(desc)
    return profile(desc.pop("name"), **desc)


# ---------------------------------------------------------------------------
# functionals Segment -> R^d
# ---------------------------------------------------------------------------


class Functional:
    """Base for deterministic pure maps from segments to R^d."""

    d: int

    def __call__(self, seg: Segment) -> np.ndarray:
        raise NotImplementedError

    def descriptor(self) -> dict:
        raise NotImplementedError

    def __add__(self, other: "Functional") -> "Functional":
        return SumFunctional((self, other))

    def __rmul__(self, c: float) -> "Functional":
        return ScaledFunctional(float(c), self)


class PointEval(Functional):
    """phi(sum_i w_i x(t_i)), profile applied componentwise."""

    def __init__(self, prof: Profile, weights, lags, d: int = 1):
        self.profile = prof
        self.weights = np.asarray(weights, dtype=float)
        self.lags = np.asarray(lags, dtype=float)
        if self.weights.shape != self.lags.shape or self.weights.ndim != 1:
            raise ValueError("weights and lags must be 1-D of equal length")
        if (self.weights < 0).any():
            raise ValueError("point-eval weights must be nonnegative")
        if (self.lags > GRID_REL_TOL).any():
            raise ValueError("point-eval lags must lie in [-r, 0]")
        self.d = int(d)

    def __call__(self, seg: Segment) -> np.ndarray:
        acc = np.zeros(seg.d)
        for w, lag in zip(self.weights, self.lags):
            acc += w * seg.eval(lag)
        return np.atleast_1d(np.asarray(self.profile(acc), dtype=float))

    def descriptor(self) -> dict:
        return {
            "kind": "point_eval",
            "profile": self.profile.descriptor(),
            "weights": self.weights.tolist(),
            "lags": self.lags.tolist(),
        }


class KernelIntegral(Functional):
    """Trapezoidal quadrature of psi(x(s)) k(s) over the grid points of [-r, -r0]."""

    def __init__(self, psi: Profile, kernel: Profile, r0: float, d: int = 1):
        if r0 <= 0:
            raise ValueError("kernel-integral cutoff r0 must be positive")
        self.psi = psi
        self.kernel = kernel
        self.r0 = float(r0)
        self.d = int(d)

    def __call__(self, seg: Segment) -> np.ndarray:
        if self.r0 >= seg.r - GRID_REL_TOL:
            raise ValueError("cutoff r0 must be smaller than the memory length r")
        n_sub = snap_to_grid(seg.r - self.r0, seg.dt, "kernel window r - r0")
        s = -seg.r + seg.dt * np.arange(n_sub + 1)
        vals = np.asarray(self.psi(seg.values[: n_sub + 1]), dtype=float)
        weights = np.asarray(self.kernel(s), dtype=float)
        integrand = vals * weights[:, None]
        return np.trapz(integrand, dx=seg.dt, axis=0)

    def descriptor(self) -> dict:
        return {
            "kind": "kernel_integral",
            "psi": self.psi.descriptor(),
            "kernel": self.kernel.descriptor(),
            "r0": self.r0,
        }


class LinearTerminal(Functional):
    """A x(0) for a fixed matrix A."""

    def __init__(self, matrix):
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        self.d = self.matrix.shape[0]

    def __call__(self, seg: Segment) -> np.ndarray:
        return self.matrix @ seg.values[-1]

    def descriptor(self) -> dict:
        return {"kind": "linear", "matrix": self.matrix.tolist()}


class ConstantVec(Functional):
    def __init__(self, value):
        self.value = np.atleast_1d(np.asarray(value, dtype=float))
        self.d = self.value.shape[0]

    def __call__(self, seg: Segment) -> np.ndarray:
        return self.value.copy()

    def descriptor(self) -> dict:
        return {"kind": "constant", "value": self.value.tolist()}


class SumFunctional(Functional):
    def __init__(self, terms):
        terms = tuple(terms)
        if not terms:
            raise ValueError("sum needs at least one term")
        self.terms = terms
        self.d = terms[0].d

    def __call__(self, seg: Segment) -> np.ndarray:
        acc = self.terms[0](seg).copy()
        for t in self.terms[1:]:
            acc += t(seg)
        return acc

    def descriptor(self) -> dict:
        return {"kind": "sum", "terms": [t.descriptor() for t in self.terms]}


class ScaledFunctional(Functional):
    def __init__(self, factor: float, inner: Functional):
        self.factor = float(factor)
        self.inner = inner
        self.d = inner.d

    def __call__(self, seg: Segment) -> np.ndarray:
        return self.factor * self.inner(seg)

    def descriptor(self) -> dict:
        return {"kind": "scaled", "factor": self.factor, "inner": self.inner.descriptor()}


def terminal_monotone(prof: Profile, d: int = 1) -> PointEval:
    """phi(x(0)) with phi non-increasing; rejects profiles without that flag."""
    if not prof.non_increasing:
        raise ValueError(f"profile {prof.name!r} is not non-increasing")
    return PointEval(prof, [1.0], [0.0], d=d)


def zero_functional(d: int = 1) -> ConstantVec:
    return ConstantVec(np.zeros(d))


def functional_from_descriptor(desc: dict) -> Functional:
    kind = desc["kind"]
    if kind == "point_eval":
        return PointEval(profile_from_descriptor(desc["profile"]), desc["weights"], desc["lags"])
    if kind == "kernel_integral":
        return KernelIntegral(
            profile_from_descriptor(desc["psi"]), profile_from_descriptor(desc["kernel"]), desc["r0"]
        )
    if kind == "linear":
        return LinearTerminal(desc["matrix"])
    if kind == "constant":
        return ConstantVec(desc["value"])
    if kind == "sum":
        return SumFunctional([functional_from_descriptor(t) for t in desc["terms"]])
    if kind == "scaled":
        return ScaledFunctional(desc["factor"], functional_from_descriptor(desc["inner"]))
    raise ValueError(f"unknown functional kind {kind!r}")


# ---------------------------------------------------------------------------
# diffusion Segment -> R^{d x m}, built column by column
# ---------------------------------------------------------------------------


class Diffusion:
    """Matrix-valued coefficient assembled from one functional per noise column."""

    def __init__(self, columns):
        columns = tuple(columns)
        if not columns:
            raise ValueError("diffusion needs at least one column")
        self.columns = columns
        self.d = columns[0].d
        self.m = len(columns)

    def __call__(self, seg: Segment) -> np.ndarray:
        return np.column_stack([c(seg) for c in self.columns])

    @classmethod
    def constant(cls, matrix) -> "Diffusion":
        mat = np.atleast_2d(np.asarray(matrix, dtype=float))
        return cls([ConstantVec(mat[:, j]) for j in range(mat.shape[1])])

    @classmethod
    def zero(cls, d: int, m: int) -> "Diffusion":
        return cls([zero_functional(d) for _ in range(m)])

    def descriptor(self) -> dict:
        return {"columns": [c.descriptor() for c in self.columns]}

    @classmethod
    def from_descriptor(cls, desc: dict) -> "Diffusion":
        return cls([functional_from_descriptor(c) for c in desc["columns"]])


class CoefficientPair:
    """Drift and diffusion functionals with dimensions and a serializable descriptor."""

    def __init__(self, drift: Functional, diffusion: Diffusion, d: int | None = None):
        self.drift = drift
        self.diffusion = diffusion
        self.d = int(d) if d is not None else drift.d
        self.m = diffusion.m

    def eval_drift(self, seg: Segment) -> np.ndarray:
        out = np.asarray(self.drift(seg), dtype=float)
        if not np.isfinite(out).all():
            raise CoefficientEvalError("drift produced a non-finite value", seg)
        return out

    def eval_diffusion(self, seg: Segment) -> np.ndarray:
        out = np.asarray(self.diffusion(seg), dtype=float)
        if not np.isfinite(out).all():
            raise CoefficientEvalError("diffusion produced a non-finite value", seg)
        return out

    def descriptor(self) -> dict:
        return {
            "d": self.d,
            "m": self.m,
            "drift": self.drift.descriptor(),
            "diffusion": self.diffusion.descriptor(),
        }

    @classmethod
    def from_descriptor(cls, desc: dict) -> "CoefficientPair":
        return cls(
            functional_from_descriptor(desc["drift"]),
            Diffusion.from_descriptor(desc["diffusion"]),
            d=desc.get("d"),
        )


def frobenius_sq(mat: np.ndarray) -> float:
    return float((mat * mat).sum())


# ---------------------------------------------------------------------------
# growth comparison functions rho
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RhoFunction:
    """Nondecreasing nonnegative comparison function with its 1/rho-integral flag.

    ``diverges`` states whether the integral of 1/rho over [0, inf) is
    infinite, decided analytically per catalog entry.
    """

    name: str
    params: dict
    diverges: bool
    fn: object = field(repr=False, compare=False)

    def __call__(self, u):
        return self.fn(u)

    def descriptor(self) -> dict:
        out = {"name": self.name, "diverges": self.diverges}
        out.update(self.params)
        return out


def rho_affine(a: float, b: float) -> RhoFunction:
    """rho(u) = a + b u; the tail integral of 1/rho always diverges."""
    if a < 0 or b < 0 or a + b == 0:
        raise ValueError("affine rho needs a, b >= 0 and not both zero")
    return RhoFunction("affine", {"a": a, "b": b}, True, lambda u: a + b * np.asarray(u, dtype=float))


def rho_power(a: float, beta: float) -> RhoFunction:
    """rho(u) = a (1+u)^beta; diverges iff beta <= 1."""
    if a <= 0:
        raise ValueError("power rho needs a > 0")
    return RhoFunction("power", {"a": a, "beta": beta}, beta <= 1.0, lambda u: a * (1.0 + np.asarray(u, dtype=float)) ** beta)


def rho_log(a: float) -> RhoFunction:
    """rho(u) = a (1+u) log(e+u); the tail integral of 1/rho diverges."""
    if a <= 0:
        raise ValueError("log rho needs a > 0")
    return RhoFunction("log", {"a": a}, True, lambda u: a * (1.0 + np.asarray(u, dtype=float)) * np.log(np.e + np.asarray(u, dtype=float)))


def rho_from_descriptor(desc: dict) -> RhoFunction:
    desc = dict(desc)
    name = desc.pop("name")
    desc.pop("diverges", None)
    if name == "affine":
        return rho_affine(desc["a"], desc["b"])
    if name == "power":
        return rho_power(desc["a"], desc["beta"])
    if name == "log":
        return rho_log(desc["a"])
    raise ValueError(f"unknown rho {name!r}")


def validate_rho(rho: RhoFunction, u_max: float = 1e8) -> None:
    """Spot-check nondecreasingness and positivity on a logarithmic grid."""
    u = np.concatenate([[0.0], np.logspace(-6, np.log10(u_max), 60)])
    vals = np.asarray(rho(u), dtype=float)
    if (np.diff(vals) < -1e-12 * np.maximum(1.0, vals[:-1])).any():
        raise ValueError(f"rho {rho.name!r} is not nondecreasing on the spot grid")
    if (vals[1:] <= 0).any() or vals[0] < 0:
        raise ValueError(f"rho {rho.name!r} is not positive on the spot grid")


# ---------------------------------------------------------------------------
# condition probers
# ---------------------------------------------------------------------------


def monotonicity_gap(pair: CoefficientPair, x: Segment, y: Segment) -> float:
    """2<f(x)-f(y), x(0)-y(0)> + |g(x)-g(y)|_F^2."""
    df = pair.eval_drift(x) - pair.eval_drift(y)
    dg = pair.eval_diffusion(x) - pair.eval_diffusion(y)
    dx0 = x.values[-1] - y.values[-1]
    return 2.0 * float(df @ dx0) + frobenius_sq(dg)


def coercivity_gap(pair: CoefficientPair, x: Segment, rho: RhoFunction) -> float:
    """2<f(x), x(0)> + |g(x)|_F^2 - rho(|x|_sup^2); nonpositive means the sample complies."""
    f = pair.eval_drift(x)
    g = pair.eval_diffusion(x)
    x0 = x.values[-1]
    sup = float(np.sqrt((x.values**2).sum(axis=1)).max())
    return 2.0 * float(f @ x0) + frobenius_sq(g) - float(rho(sup * sup))


class SegmentSampler:
    """Random piecewise-linear segments with grid-node values i.i.d. uniform in [-bound, bound]."""

    def __init__(self, r: float, dt: float, d: int = 1, bound: float = 2.0):
        self.r = float(r)
        self.dt = float(dt)
        self.d = int(d)
        self.bound = float(bound)
        self._k = snap_to_grid(r, dt, "memory length r")

    def sample(self, rng: np.random.Generator) -> Segment:
        vals = rng.uniform(-self.bound, self.bound, size=(self._k + 1, self.d))
        return Segment(self.r, self.dt, vals, copy=False)


class SegmentPairSampler:
    """Pairs (x, x + bump) agreeing on [-r, -r_c], for probing the one-sided condition.

    The bump vanishes up to -r_c, rises linearly to a random amplitude in
    (0, bound] at a random grid point of (-r_c, 0], and descends linearly to
    a random fraction of the peak at 0; its sign (direction in R^d) is
    random.  Ratios of the pairing to the squared sup distance are therefore
    tested on a bounded tube around random base segments, and the resulting
    estimate is a lower bound for the true constant.
    """

    def __init__(self, r: float, dt: float, d: int = 1, r_c: float | None = None, bound: float = 2.0):
        self.base = SegmentSampler(r, dt, d, bound)
        self.r = float(r)
        self.dt = float(dt)
        self.d = int(d)
        self.bound = float(bound)
        self.r_c = float(r_c) if r_c is not None else float(r)
        if not 0 < self.r_c <= self.r + GRID_REL_TOL:
            raise ValueError("r_c must lie in (0, r]")
        k = self.base._k
        self._l0 = k - snap_to_grid(self.r_c, dt, "agreement cutoff r_c")
        if self._l0 >= k:
            raise ValueError("r_c must span at least one grid step")

    def sample_pair(self, rng: np.random.Generator) -> tuple[Segment, Segment]:
        x = self.base.sample(rng)
        k = self.base._k
        l0 = self._l0
        peak = int(rng.integers(l0 + 1, k + 1))
        amp = self.bound * (1.0 - rng.random())  # uniform in (0, bound]
        endfrac = rng.random()
        shape = np.zeros(k + 1)
        shape[l0 : peak + 1] = np.linspace(0.0, 1.0, peak - l0 + 1)
        if peak < k:
            shape[peak : k + 1] = np.linspace(1.0, endfrac, k - peak + 1)
        direction = rng.standard_normal(self.d)
        nrm = np.sqrt((direction**2).sum())
        direction = direction / nrm if nrm > 0 else np.eye(self.d)[0]
        y_vals = x.values + amp * shape[:, None] * direction[None, :]
        return x, Segment(self.r, self.dt, y_vals, copy=False)


def _segment_dict(seg: Segment) -> dict:
    return {"r": seg.r, "dt": seg.dt, "values": seg.values.tolist()}


@dataclass
class KEstimateReport:
    """Empirical lower estimate of the one-sided constant, with the maximizing pair."""

    estimate: float
    r_c: float
    samples: int
    skipped: int
    witness_x: dict | None
    witness_y: dict | None

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "r_c": self.r_c,
            "samples": self.samples,
            "skipped": self.skipped,
            "witness_x": self.witness_x,
            "witness_y": self.witness_y,
        }


def estimate_K(pair: CoefficientPair, sampler: SegmentPairSampler, n_samples: int, seed: int = 0) -> KEstimateReport:
    """Max over sampled admissible pairs of the pairing over the squared sup distance.

    Samples are drawn in chunks with independent derived streams so the scan
    can be split across workers; the merge is a max with ties broken by
    sample index, which makes the result independent of the split.
    """
    chunk = 1024
    best = -np.inf
    best_idx = -1
    witness = (None, None)
    skipped = 0
    drawn = 0
    chunk_no = 0
    while drawn < n_samples:
        take = min(chunk, n_samples - drawn)
        rng = np.random.default_rng(np.random.SeedSequence([0x5E6, int(seed), chunk_no]))
        for i in range(take):
            x, y = sampler.sample_pair(rng)
            dist = sup_dist(x, y)
            if dist == 0.0:
                skipped += 1
                continue
            ratio = monotonicity_gap(pair, x, y) / (dist * dist)
            idx = drawn + i
            if ratio > best or (ratio == best and idx < best_idx):
                best = ratio
                best_idx = idx
                witness = (x, y)
        drawn += take
        chunk_no += 1
    used = n_samples - skipped
    estimate = best if used > 0 else 0.0
    wx, wy = witness
    return KEstimateReport(
        estimate=float(estimate),
        r_c=sampler.r_c,
        samples=used,
        skipped=skipped,
        witness_x=_segment_dict(wx) if wx is not None else None,
        witness_y=_segment_dict(wy) if wy is not None else None,
    )


@dataclass
class CoercivityReport:
    """Worst coercivity gap over sampled segments, with the worst offender."""

    max_gap: float
    violations: int
    samples: int
    rho: dict
    worst_segment: dict | None

    @property
    def violated(self) -> bool:
        return self.violations > 0

    def to_dict(self) -> dict:
        return {
            "max_gap": self.max_gap,
            "violations": self.violations,
            "samples": self.samples,
            "rho": self.rho,
            "worst_segment": self.worst_segment,
        }


def coercivity_sweep(
    pair: CoefficientPair, rho: RhoFunction, sampler: SegmentSampler, n_samples: int, seed: int = 0
) -> CoercivityReport:
    """Evaluate the coercivity gap on sampled segments; positive gaps are violations."""
    rng = np.random.default_rng(np.random.SeedSequence([0xC0E, int(seed)]))
    worst = -np.inf
    worst_seg = None
    violations = 0
    for _ in range(n_samples):
        x = sampler.sample(rng)
        gap = coercivity_gap(pair, x, rho)
        if gap > 0:
            violations += 1
        if gap > worst:
            worst = gap
            worst_seg = x
    return CoercivityReport(
        max_gap=float(worst),
        violations=violations,
        samples=n_samples,
        rho=rho.descriptor(),
        worst_segment=_segment_dict(worst_seg) if worst_seg is not None else None,
    )
