"""Path segments on a uniform time grid and discrete Hölder norms.

A :class:`Segment` is a continuous R^d-valued function on the memory window
[-r, 0], stored by its values on a uniform grid of spacing ``dt`` and
evaluated in between by linear interpolation.  A :class:`PathBuffer` holds a
full trajectory on [-r, t_now] and serves segment views of it: the plain
segment ending at time t, and the "frozen" segment whose clock is capped at
an earlier time (the quantity the drift-frozen Euler scheme feeds to the
coefficients).

All stopping rules of the solver are driven by the discrete Hölder-alpha
norm computed here: the sup over grid pairs u < v of |x(v)-x(u)|/(v-u)^alpha
plus the sup of |x| over grid points.  This is a lower bound for the
continuous-time norm of the interpolant; it converges to it as dt -> 0.

Everything in this module requires times to be integer multiples of the
master grid spacing; off-grid times raise ``ValueError``.
"""

from __future__ import annotations

import numpy as np

# Relative slack when snapping a float time to the integer grid.
GRID_REL_TOL = 1e-9


def snap_to_grid(t: float, dt: float, what: str = "time") -> int:
    """Return round(t/dt), requiring t to be a grid multiple up to rounding slack."""
    i = int(round(t / dt))
    if abs(i * dt - t) > GRID_REL_TOL * max(1.0, abs(t)):
        raise ValueError(f"{what} {t!r} is not a multiple of the grid spacing {dt!r}")
    return i


def _as_value_array(values, d_hint: int | None = None) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None] if d_hint in (None, 1) else arr.reshape(-1, d_hint)
    if arr.ndim != 2:
        raise ValueError("segment values must be a 1-D or 2-D array")
    return arr


class Segment:
    """Values of a continuous function on [-r, 0] at grid times -r, -r+dt, ..., 0."""

    __slots__ = ("r", "dt", "values")

    def __init__(self, r: float, dt: float, values, *, copy: bool = True):
        if r <= 0 or dt <= 0:
            raise ValueError("memory length r and spacing dt must be positive")
        k = snap_to_grid(r, dt, "memory length r")
        if k < 1:
            raise ValueError("memory length r must be at least one grid step")
        arr = _as_value_array(values)
        if copy:
            arr = arr.copy()
        if arr.shape[0] != k + 1:
            raise ValueError(f"expected {k + 1} grid values for r={r}, dt={dt}, got {arr.shape[0]}")
        if not np.isfinite(arr).all():
            raise ValueError("segment values must be finite")
        arr.flags.writeable = False
        self.r = float(r)
        self.dt = float(dt)
        self.values = arr

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def grid_size(self) -> int:
        """Number of stored grid points, r/dt + 1."""
        return self.values.shape[0]

    @classmethod
    def constant(cls, value, r: float, dt: float) -> "Segment":
        v = np.atleast_1d(np.asarray(value, dtype=float))
        k = snap_to_grid(r, dt, "memory length r")
        return cls(r, dt, np.tile(v, (k + 1, 1)), copy=False)

    @classmethod
    def from_function(cls, fn, r: float, dt: float) -> "Segment":
        k = snap_to_grid(r, dt, "memory length r")
        u = -r + dt * np.arange(k + 1)
        u[-1] = 0.0
        vals = np.stack([np.atleast_1d(np.asarray(fn(ui), dtype=float)) for ui in u])
        return cls(r, dt, vals, copy=False)

    def eval(self, u: float) -> np.ndarray:
        """Value at u in [-r, 0]: stored value at grid points, linear interpolant between."""
        if u < -self.r - GRID_REL_TOL or u > GRID_REL_TOL:
            raise ValueError(f"evaluation point {u} outside [-{self.r}, 0]")
        pos = (u + self.r) / self.dt
        i = int(np.floor(pos))
        k = self.grid_size - 1
        if i >= k:
            return self.values[k].copy()
        if i < 0:
            i = 0
        frac = pos - i
        if frac <= GRID_REL_TOL:
            return self.values[i].copy()
        if frac >= 1.0 - GRID_REL_TOL:
            return self.values[i + 1].copy()
        return (1.0 - frac) * self.values[i] + frac * self.values[i + 1]

    def terminal(self) -> np.ndarray:
        """Value at u = 0."""
        return self.values[-1].copy()

    def grid_times(self) -> np.ndarray:
        k = self.grid_size - 1
        u = -self.r + self.dt * np.arange(k + 1)
        u[-1] = 0.0
        return u

    def resample(self, dt_new: float) -> "Segment":
        """Re-grid onto a coarser or finer spacing via linear interpolation.

        When the grids nest (dt_new an integer multiple of dt) the result is
        an exact subsample of the stored values.
        """
        if abs(dt_new - self.dt) <= GRID_REL_TOL * self.dt:
            return self
        k_new = snap_to_grid(self.r, dt_new, "memory length r")
        q = dt_new / self.dt
        qi = int(round(q))
        if abs(qi * self.dt - dt_new) <= GRID_REL_TOL * dt_new and qi >= 1:
            return Segment(self.r, dt_new, self.values[::qi], copy=True)
        u = -self.r + dt_new * np.arange(k_new + 1)
        u[-1] = 0.0
        vals = np.stack([self.eval(ui) for ui in u])
        return Segment(self.r, dt_new, vals, copy=False)


class PathBuffer:
    """Append-only trajectory on [-r, t_now]; starts as a copy of an initial segment."""

    def __init__(self, initial: Segment, capacity_hint: int = 0):
        self.r = initial.r
        self.dt = initial.dt
        self._k0 = initial.grid_size - 1
        n0 = initial.grid_size
        cap = max(n0 + capacity_hint, 2 * n0)
        self._buf = np.empty((cap, initial.d), dtype=float)
        self._buf[:n0] = initial.values
        self._n = n0

    @property
    def d(self) -> int:
        return self._buf.shape[1]

    @property
    def t_now(self) -> float:
        return (self._n - 1 - self._k0) * self.dt

    @property
    def n_points(self) -> int:
        return self._n

    def append(self, x) -> None:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise ValueError(f"appended point must have shape ({self.d},)")
        if self._n == self._buf.shape[0]:
            grown = np.empty((2 * self._buf.shape[0], self.d), dtype=float)
            grown[: self._n] = self._buf[: self._n]
            self._buf = grown
        self._buf[self._n] = x
        self._n += 1

    def _index(self, t: float, what: str = "time") -> int:
        i = self._k0 + snap_to_grid(t, self.dt, what)
        if i < 0 or i >= self._n:
            raise ValueError(f"{what} {t} outside stored range [-{self.r}, {self.t_now}]")
        return i

    def value_at(self, t: float) -> np.ndarray:
        return self._buf[self._index(t)].copy()

    def values_view(self) -> np.ndarray:
        """Read-only view of all stored grid values (rows are times -r, ..., t_now)."""
        v = self._buf[: self._n]
        v.flags.writeable = False
        return v

    def values_between(self, a: float, b: float) -> np.ndarray:
        """Read-only view of grid values for t in [a, b]."""
        ia = self._index(a, "window start")
        ib = self._index(b, "window end")
        if ia > ib:
            raise ValueError("window start must not exceed window end")
        v = self._buf[ia : ib + 1]
        v.flags.writeable = False
        return v

    def segment_at(self, t: float) -> Segment:
        """The memory window ending at t: values on [t-r, t]."""
        if t < -GRID_REL_TOL:
            raise ValueError("segment time must be nonnegative")
        i = self._index(t, "segment time")
        return Segment(self.r, self.dt, self._buf[i - self._k0 : i + 1], copy=True)

    def frozen_segment_at(self, s: float, t_cap: float) -> Segment:
        """Memory window at s with its clock capped at t_cap <= s.

        Grid point u maps to the path value at (s+u) ∧ t_cap, so the window
        slides with s but its values freeze once s+u passes the cap.
        """
        i_s = self._index(s, "segment time")
        i_cap = self._index(t_cap, "cap time")
        if i_cap > i_s:
            raise ValueError("cap time must not exceed segment time")
        if t_cap < -GRID_REL_TOL:
            raise ValueError("cap time must be nonnegative")
        idx = np.minimum(np.arange(i_s - self._k0, i_s + 1), i_cap)
        return Segment(self.r, self.dt, self._buf[idx], copy=False)

    def grid_times(self) -> np.ndarray:
        return (np.arange(self._n) - self._k0) * self.dt

    def values_on_grid(self, dt_out: float, count: int) -> np.ndarray:
        """Values at times 0, dt_out, ..., count*dt_out; dt_out must be a multiple of dt."""
        stride = snap_to_grid(dt_out, self.dt, "output spacing")
        if stride < 1:
            raise ValueError("output spacing must be at least the grid spacing")
        idx = self._k0 + stride * np.arange(count + 1)
        if idx[-1] >= self._n:
            raise ValueError("requested grid extends past the end of the path")
        return self._buf[idx].copy()

    def to_csv(self, fileobj) -> None:
        write_path_csv(self, fileobj)


def sup_norm(seg: Segment) -> float:
    """Largest Euclidean value magnitude over the grid."""
    return float(np.sqrt((seg.values**2).sum(axis=1)).max())


def sup_dist(a: Segment, b: Segment) -> float:
    """Max over grid points of the Euclidean distance |a(u) - b(u)|."""
    if a.values.shape != b.values.shape or abs(a.r - b.r) > GRID_REL_TOL or abs(a.dt - b.dt) > GRID_REL_TOL * a.dt:
        raise ValueError("segments must share r, dt and dimension")
    diff = a.values - b.values
    return float(np.sqrt((diff**2).sum(axis=1)).max())


def holder_norm_values(values, dt: float, alpha: float, lag_stride: int = 1) -> float:
    """Discrete Hölder-alpha norm of a grid function given by its values.

    Quotient part scans grid pairs lag by lag; the sup part is the max
    Euclidean magnitude.  ``lag_stride > 1`` subsamples lags beyond 64 grid
    steps (every lag_stride-th lag), trading exactness for speed; the result
    is then a lower bound of the exact discrete norm.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    arr = _as_value_array(values)
    n = arr.shape[0] - 1
    sup_part = float(np.sqrt((arr**2).sum(axis=1)).max())
    if n < 1:
        return sup_part
    flat = arr[:, 0] if arr.shape[1] == 1 else None
    quot = 0.0
    lags = _lag_schedule(n, lag_stride)
    for h in lags:
        if flat is not None:
            dmax = float(np.abs(flat[h:] - flat[:-h]).max())
        else:
            diff = arr[h:] - arr[:-h]
            dmax = float(np.sqrt((diff**2).sum(axis=1)).max())
        q = dmax / (h * dt) ** alpha
        if q > quot:
            quot = q
    return quot + sup_part


def _lag_schedule(n: int, lag_stride: int):
    if lag_stride <= 1:
        return range(1, n + 1)
    near = list(range(1, min(64, n) + 1))
    far = list(range(64 + lag_stride, n + 1, lag_stride))
    if far and far[-1] != n:
        far.append(n)
    return near + far


def holder_norm(path: PathBuffer, alpha: float, a: float, b: float, lag_stride: int = 1) -> float:
    """Discrete Hölder-alpha norm of the path restricted to grid times in [a, b]."""
    if a >= b:
        raise ValueError("window must satisfy a < b")
    vals = path.values_between(a, b)
    return holder_norm_values(vals, path.dt, alpha, lag_stride=lag_stride)


class HolderTracker:
    """Incrementally maintained Hölder-alpha norm of X(.) - base along a path.

    Points are appended in grid order starting from the window's left end;
    each new point is compared against every earlier one, so after j appends
    the tracked value equals the from-scratch norm over those j points.  The
    base point only shifts the sup part (differences cancel it).
    """

    def __init__(self, alpha: float, dt: float, base):
        if not 0.0 < alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        self.alpha = float(alpha)
        self.dt = float(dt)
        self.base = np.atleast_1d(np.asarray(base, dtype=float))
        d = self.base.shape[0]
        self._vals = np.empty((256, d), dtype=float)
        self._count = 0
        self._quot = 0.0
        self._dev = 0.0
        # lag^alpha cache, index = lag in grid steps
        self._pow = np.concatenate([[np.nan], (np.arange(1, 256, dtype=float) * self.dt) ** self.alpha])

    @property
    def norm(self) -> float:
        return self._quot + self._dev

    @property
    def count(self) -> int:
        return self._count

    def append(self, x) -> float:
        """Add the next grid point and return the updated norm."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        j = self._count
        if j == self._vals.shape[0]:
            grown = np.empty((2 * j, self._vals.shape[1]), dtype=float)
            grown[:j] = self._vals
            self._vals = grown
        while j >= self._pow.shape[0]:
            ext = (np.arange(self._pow.shape[0], 2 * self._pow.shape[0], dtype=float) * self.dt) ** self.alpha
            self._pow = np.concatenate([self._pow, ext])
        if j > 0:
            prev = self._vals[:j]
            if prev.shape[1] == 1:
                dist = np.abs(prev[:, 0] - x[0])
            else:
                diff = prev - x
                dist = np.sqrt((diff**2).sum(axis=1))
            # lag of earlier point i is j - i
            q = float((dist / self._pow[j:0:-1]).max())
            if q > self._quot:
                self._quot = q
        dev = float(np.sqrt(((x - self.base) ** 2).sum()))
        if dev > self._dev:
            self._dev = dev
        self._vals[j] = x
        self._count = j + 1
        return self.norm


def holder_hit_time(path: PathBuffer, alpha: float, base, threshold: float, horizon: float):
    """First grid time t in (0, horizon] where the norm of X(.)-base on [0, t] reaches threshold.

    Returns ``None`` when the threshold is never reached before the horizon.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    steps = snap_to_grid(horizon, path.dt, "horizon")
    if horizon > path.t_now + GRID_REL_TOL:
        raise ValueError("horizon exceeds stored path range")
    tracker = HolderTracker(alpha, path.dt, base)
    vals = path.values_between(0.0, horizon)
    for j in range(steps + 1):
        if tracker.append(vals[j]) >= threshold:
            return j * path.dt
    return None


def write_path_csv(path: PathBuffer, fileobj) -> None:
    """Dump grid times and values as CSV; floats use repr for exact round-trip."""
    d = path.d
    header = "t," + ",".join(f"x_{i + 1}" for i in range(d))
    fileobj.write(header + "\n")
    vals = path.values_view()
    times = path.grid_times()
    for t, row in zip(times, vals):
        fileobj.write(repr(float(t)) + "," + ",".join(repr(float(v)) for v in row) + "\n")


def read_path_csv(fileobj) -> PathBuffer:
    """Rebuild a PathBuffer from the CSV format written by :func:`write_path_csv`."""
    header = fileobj.readline().strip()
    if not header.startswith("t,"):
        raise ValueError("path CSV must start with a 't,x_1,...' header")
    times = []
    rows = []
    for line in fileobj:
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        times.append(float(parts[0]))
        rows.append([float(p) for p in parts[1:]])
    if len(times) < 2:
        raise ValueError("path CSV needs at least two rows")
    times_arr = np.asarray(times)
    dt = times_arr[1] - times_arr[0]
    if not np.allclose(np.diff(times_arr), dt, rtol=0, atol=GRID_REL_TOL * max(1.0, abs(times_arr[-1]))):
        raise ValueError("path CSV times must be uniformly spaced")
    r = -times_arr[0]
    if r <= 0:
        raise ValueError("path CSV must start at a negative time -r")
    k0 = snap_to_grid(r, dt, "memory length r")
    values = np.asarray(rows)
    initial = Segment(r, dt, values[: k0 + 1])
    buf = PathBuffer(initial, capacity_hint=len(rows))
    for row in values[k0 + 1 :]:
        buf.append(row)
    return buf
