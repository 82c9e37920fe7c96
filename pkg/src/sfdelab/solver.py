"""Stage-wise localization, maximal continuation, and shared-path convergence diagnostics.

A stage runs the scheme until the Hölder norm of X(.) - x(0) on the stage
window reaches half the stage threshold, the overflow cap fires, or the
stage horizon ends.  The maximal solve chains stages: stage k uses a
doubled threshold, the terminal memory window of the previous stage as its
initial segment, and the driver path shifted to the current stop time.  The
run ends when the requested horizon is covered, or with an explosion
verdict when the cap fires or the stage budget runs out; shrinking stage
durations are the numerical face of a finite explosion time.

The convergence diagnostic drives schemes at a ladder of macro resolutions
with one underlying driver path (via dyadic refinement) and reports
sup-norm and Hölder-norm distances between adjacent resolutions; their
decrease is the observable counterpart of the scheme's Cauchy property.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientPair
from .noise import NoiseGrid, derive_seed
from .scheme import (
    REASON_CAP,
    REASON_HORIZON,
    REASON_PREDICATE,
    SchemeConfig,
    SchemeDivergenceError,
    run,
)
from .segment import GRID_REL_TOL, HolderTracker, PathBuffer, Segment, holder_norm_values, snap_to_grid

STAGE_THRESHOLD = "THRESHOLD"
STAGE_HORIZON = "HORIZON"
STAGE_CAP = "CAP"
STAGE_DIVERGED = "DIVERGED"

VERDICT_HORIZON = "HORIZON_REACHED"
VERDICT_EXPLOSION = "EXPLOSION_SUSPECTED"
VERDICT_DIVERGED = "DIVERGED"

# Largest exponent used in the doubling threshold schedule; keeps R finite.
_MAX_DOUBLINGS = 1023


class HolderStopRule:
    """Stop predicate: fires when the tracked Hölder norm reaches the threshold."""

    def __init__(self, alpha: float, dt: float, base, threshold: float):
        if threshold <= 0:
            raise ValueError("threshold must be positive")
        self.threshold = float(threshold)
        self.tracker = HolderTracker(alpha, dt, base)

    def begin(self, x0) -> None:
        self.tracker.append(x0)

    def step(self, t: float, x) -> bool:
        return self.tracker.append(x) >= self.threshold

    @property
    def norm(self) -> float:
        return self.tracker.norm


@dataclass(frozen=True)
class StageConfig:
    """Threshold scale R, stage horizon, and Hölder exponent of the stopping rule."""

    R: float
    r_R: float
    alpha: float = 0.25

    def __post_init__(self):
        if self.R <= 0 or self.r_R <= 0:
            raise ValueError("R and r_R must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")


@dataclass
class StageResult:
    path: PathBuffer
    stop_time: float
    reason: str
    holder_norm: float
    steps: int


def solve_stage(pair: CoefficientPair, phi: Segment, stage: StageConfig, scheme_cfg: SchemeConfig, noise) -> StageResult:
    """One localized run: scheme until the Hölder threshold R/2, the cap, or r_R."""
    if stage.r_R > phi.r + GRID_REL_TOL:
        raise ValueError("stage horizon r_R must not exceed the memory length r")
    cfg = SchemeConfig(
        n=scheme_cfg.n,
        horizon=stage.r_R,
        fine_per_macro=scheme_cfg.fine_per_macro,
        x_max=scheme_cfg.x_max,
    )
    rule = HolderStopRule(stage.alpha, cfg.dt, phi.terminal(), stage.R / 2.0)
    path, info, _trace = run(pair, phi, cfg, noise, stop=rule)
    reason = {REASON_PREDICATE: STAGE_THRESHOLD, REASON_HORIZON: STAGE_HORIZON, REASON_CAP: STAGE_CAP}[info.reason]
    return StageResult(path=path, stop_time=info.time, reason=reason, holder_norm=rule.norm, steps=info.index)


@dataclass(frozen=True)
class SolveConfig:
    """Threshold schedule, per-threshold horizons, stage budget, cap, scheme template.

    The stage thresholds are R0 * 2^k.  ``r_r_table`` maps threshold scales
    to stage horizons as a list of (R, r_R) rows with nonincreasing r_R; a
    stage picks the row with the largest R not exceeding its own, and the
    default (no table) is the full memory length.
    """

    horizon: float
    scheme_n: int
    fine_per_macro: int = 8
    r0_threshold: float = 1.0
    r_r_table: tuple | None = None
    max_stages: int = 64
    x_max: float = 1e8
    alpha: float = 0.25

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("solve horizon must be positive")
        if self.r0_threshold <= 0:
            raise ValueError("R0 must be positive")
        if self.max_stages < 1:
            raise ValueError("max_stages must be positive")
        if self.r_r_table is not None:
            rows = tuple(tuple(map(float, row)) for row in self.r_r_table)
            if any(len(row) != 2 for row in rows):
                raise ValueError("r_r_table rows must be (R, r_R) pairs")
            if list(rows) != sorted(rows, key=lambda p: p[0]):
                raise ValueError("r_r_table must be sorted by increasing R")
            hs = [row[1] for row in rows]
            if any(b > a + GRID_REL_TOL for a, b in zip(hs, hs[1:])):
                raise ValueError("stage horizons in r_r_table must be nonincreasing in R")
            object.__setattr__(self, "r_r_table", rows)

    @property
    def dt(self) -> float:
        return 1.0 / (self.scheme_n * self.fine_per_macro)

    def threshold(self, k: int) -> float:
        return self.r0_threshold * 2.0 ** min(k, _MAX_DOUBLINGS)

    def stage_horizon(self, R: float, r: float) -> float:
        if self.r_r_table is None:
            return r
        chosen = self.r_r_table[0][1]
        for row_r, row_h in self.r_r_table:
            if row_r <= R:
                chosen = row_h
            else:
                break
        return min(chosen, r)


@dataclass
class StageRecord:
    index: int
    R: float
    start: float
    stop: float
    reason: str
    holder_norm: float
    steps: int

    @property
    def duration(self) -> float:
        return self.stop - self.start

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "R": self.R,
            "start": self.start,
            "stop": self.stop,
            "duration": self.duration,
            "reason": self.reason,
            "holder_norm": self.holder_norm,
            "steps": self.steps,
        }


@dataclass
class SolveReport:
    """Stage-by-stage record of a maximal solve with the continuation path."""

    stages: list
    sigma_hat: float
    sigma_bracket: tuple
    verdict: str
    explosion_reason: str | None
    requested_horizon: float
    dt: float
    path: PathBuffer = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "stages": [s.to_dict() for s in self.stages],
            "sigma_hat": self.sigma_hat,
            "sigma_bracket": list(self.sigma_bracket),
            "verdict": self.verdict,
            "explosion_reason": self.explosion_reason,
            "requested_horizon": self.requested_horizon,
            "dt": self.dt,
            "n_stages": len(self.stages),
        }


def solve_maximal(pair: CoefficientPair, phi: Segment, cfg: SolveConfig, noise) -> SolveReport:
    """Chain localized stages until the horizon is covered or explosion is flagged."""
    dt = cfg.dt
    if abs(phi.dt - dt) > GRID_REL_TOL * dt:
        raise ValueError(f"initial segment spacing {phi.dt} does not match the scheme grid {dt}")
    snap_to_grid(cfg.horizon, dt, "solve horizon")
    if noise.horizon < cfg.horizon - GRID_REL_TOL:
        raise ValueError(
            f"noise horizon {noise.horizon} is shorter than the solve horizon {cfg.horizon}"
        )
    template = SchemeConfig(n=cfg.scheme_n, horizon=dt, fine_per_macro=cfg.fine_per_macro, x_max=cfg.x_max)
    total_steps = snap_to_grid(cfg.horizon, dt, "solve horizon")

    master = PathBuffer(phi, capacity_hint=total_steps + 1)
    elapsed_steps = 0
    stages: list[StageRecord] = []
    verdict = None
    explosion_reason = None

    for k in range(cfg.max_stages):
        R_k = cfg.threshold(k)
        # Stage horizons snap down to the fine grid and never overrun the solve horizon.
        map_steps = max(1, int(np.floor(cfg.stage_horizon(R_k, phi.r) / dt + GRID_REL_TOL)))
        stage_steps = min(map_steps, total_steps - elapsed_steps)
        stage_h = stage_steps * dt
        start = elapsed_steps * dt
        seg0 = master.segment_at(start)
        stage = StageConfig(R=R_k, r_R=stage_h, alpha=cfg.alpha)
        try:
            res = solve_stage(pair, seg0, stage, template, noise.shifted(start))
        except SchemeDivergenceError as exc:
            _append_tail(master, exc.path)
            elapsed_steps += exc.info.index
            stages.append(
                StageRecord(k, R_k, start, elapsed_steps * dt, STAGE_DIVERGED, float("nan"), exc.info.index)
            )
            verdict = VERDICT_DIVERGED
            break
        _append_tail(master, res.path)
        elapsed_steps += res.steps
        stages.append(StageRecord(k, R_k, start, elapsed_steps * dt, res.reason, res.holder_norm, res.steps))
        if res.reason == STAGE_CAP:
            verdict = VERDICT_EXPLOSION
            explosion_reason = "cap"
            break
        if elapsed_steps >= total_steps:
            verdict = VERDICT_HORIZON
            break
    if verdict is None:
        # Stage budget exhausted before the horizon: flag explosion, and record
        # whether the last stage durations actually collapsed onto the grid scale.
        verdict = VERDICT_EXPLOSION
        tail = [s.duration for s in stages[-3:]]
        collapsed = len(tail) == 3 and all(dur < 10.0 * dt for dur in tail)
        explosion_reason = "stage_collapse" if collapsed else "stage_budget"

    sigma_hat = elapsed_steps * dt
    last_start = stages[-1].start if stages else 0.0
    bracket = (last_start, sigma_hat + dt)
    return SolveReport(
        stages=stages,
        sigma_hat=sigma_hat,
        sigma_bracket=bracket,
        verdict=verdict,
        explosion_reason=explosion_reason,
        requested_horizon=cfg.horizon,
        dt=dt,
        path=master,
    )


def _append_tail(master: PathBuffer, stage_path: PathBuffer) -> None:
    """Append the stage's new points (everything past its initial window) to the master path."""
    k0 = snap_to_grid(stage_path.r, stage_path.dt, "memory length r")
    vals = stage_path.values_view()
    for row in vals[k0 + 1 :]:
        master.append(row)


# ---------------------------------------------------------------------------
# shared-path convergence diagnostics
# ---------------------------------------------------------------------------


@dataclass
class PairDistances:
    n_coarse: int
    n_fine: int
    sup_distances: list
    holder_distances: list

    @property
    def sup_median(self) -> float:
        return float(np.median(self.sup_distances))

    @property
    def sup_q75(self) -> float:
        return float(np.quantile(self.sup_distances, 0.75))

    @property
    def holder_median(self) -> float:
        return float(np.median(self.holder_distances))

    @property
    def holder_q75(self) -> float:
        return float(np.quantile(self.holder_distances, 0.75))

    def to_dict(self) -> dict:
        return {
            "n_coarse": self.n_coarse,
            "n_fine": self.n_fine,
            "sup_median": self.sup_median,
            "sup_q75": self.sup_q75,
            "holder_median": self.holder_median,
            "holder_q75": self.holder_q75,
            "sup_distances": [float(v) for v in self.sup_distances],
            "holder_distances": [float(v) for v in self.holder_distances],
        }


@dataclass
class ConvergenceReport:
    n_list: list
    replicas: int
    T: float
    alpha: float
    fine_per_macro: int
    seed: int
    pairs: list

    def sup_medians(self) -> list:
        return [p.sup_median for p in self.pairs]

    def holder_medians(self) -> list:
        return [p.holder_median for p in self.pairs]

    @property
    def sup_strictly_decreasing(self) -> bool:
        med = self.sup_medians()
        return all(b < a for a, b in zip(med, med[1:]))

    @property
    def holder_strictly_decreasing(self) -> bool:
        med = self.holder_medians()
        return all(b < a for a, b in zip(med, med[1:]))

    def to_dict(self) -> dict:
        return {
            "n_list": list(self.n_list),
            "replicas": self.replicas,
            "T": self.T,
            "alpha": self.alpha,
            "fine_per_macro": self.fine_per_macro,
            "seed": self.seed,
            "pairs": [p.to_dict() for p in self.pairs],
            "sup_strictly_decreasing": self.sup_strictly_decreasing,
            "holder_strictly_decreasing": self.holder_strictly_decreasing,
        }


def _converge_replica(payload: dict) -> list:
    """Distances for one replica; rebuilt from descriptors so it can run in a worker."""
    pair = CoefficientPair.from_descriptor(payload["pair"])
    n_list = payload["n_list"]
    T = payload["T"]
    fpm = payload["fine_per_macro"]
    alpha = payload["alpha"]
    x_max = payload["x_max"]
    phi_fine = Segment(payload["phi_r"], payload["phi_dt"], np.asarray(payload["phi_values"]))

    n_max = max(n_list)
    dt_fine = 1.0 / (n_max * fpm)
    # One driver path per replica at the finest grid; generation is iterated
    # bridge refinement, so every coarser resolution sees the same path.
    noise = NoiseGrid.for_grid(pair.m, dt_fine, T, payload["replica_seed"])

    runs = {}
    for n in n_list:
        cfg = SchemeConfig(n=n, horizon=T, fine_per_macro=fpm, x_max=x_max)
        phi_n = phi_fine.resample(cfg.dt)
        path, info, _ = run(pair, phi_n, cfg, noise)
        runs[n] = (path, info.time)

    rows = []
    for n_c, n_f in zip(n_list, n_list[1:]):
        path_c, stop_c = runs[n_c]
        path_f, stop_f = runs[n_f]
        dt_c = 1.0 / (n_c * fpm)
        t_min = min(stop_c, stop_f)
        count = int(np.floor(t_min / dt_c + GRID_REL_TOL))
        vals_c = path_c.values_on_grid(dt_c, count)
        vals_f = path_f.values_on_grid(dt_c, count)
        gap = vals_f - vals_c
        sup_d = float(np.sqrt((gap**2).sum(axis=1)).max())
        holder_d = holder_norm_values(gap, dt_c, alpha)
        rows.append({"n_coarse": n_c, "n_fine": n_f, "sup": sup_d, "holder": holder_d})
    return rows


def converge_diag(
    pair: CoefficientPair,
    phi: Segment,
    n_list,
    noise_seed: int,
    T: float,
    replicas: int,
    fine_per_macro: int = 8,
    alpha: float = 0.25,
    x_max: float = 1e8,
    jobs: int = 1,
) -> ConvergenceReport:
    """Distances between adjacent-resolution runs on one driver path, across replicas.

    All resolutions of one replica share a single dyadic driver path; the
    coarser scheme's increments are sums of the finer ones, so the reported
    distances measure discretization error, not noise.
    """
    n_list = [int(n) for n in n_list]
    if n_list != sorted(n_list) or len(n_list) < 2:
        raise ValueError("n_list must be ascending with at least two entries")
    for a, b in zip(n_list, n_list[1:]):
        if b % a != 0:
            raise ValueError("each resolution must divide the next for a common comparison grid")
    payloads = []
    for rr in range(replicas):
        payloads.append(
            {
                "pair": pair.descriptor(),
                "phi_r": phi.r,
                "phi_dt": phi.dt,
                "phi_values": phi.values.tolist(),
                "n_list": n_list,
                "T": float(T),
                "fine_per_macro": int(fine_per_macro),
                "alpha": float(alpha),
                "x_max": float(x_max),
                "replica_seed": derive_seed(noise_seed, rr),
            }
        )
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            all_rows = list(pool.map(_converge_replica, payloads))
    else:
        all_rows = [_converge_replica(p) for p in payloads]

    pairs = []
    for j, (n_c, n_f) in enumerate(zip(n_list, n_list[1:])):
        sups = [rows[j]["sup"] for rows in all_rows]
        holders = [rows[j]["holder"] for rows in all_rows]
        pairs.append(PairDistances(n_c, n_f, sups, holders))
    return ConvergenceReport(
        n_list=n_list,
        replicas=replicas,
        T=float(T),
        alpha=float(alpha),
        fine_per_macro=int(fine_per_macro),
        seed=int(noise_seed),
        pairs=pairs,
    )
