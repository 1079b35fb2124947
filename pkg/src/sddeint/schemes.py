"""One-step maps and trajectory drivers for the delay schemes.

Four families are provided: the Euler-Maruyama map, the Milstein map with
its iterated-integral corrections, and their exponential (Magnus)
counterparts MEM and MM.  The Milstein/MM corrections consume the
integral bundles from :mod:`sddeint.noise` in either simple or
trapezoidal form, giving the six scheme variants of the study harness.

Delayed state values are resolved in one of two ways: exact lookup on an
augmented mesh whose construction guarantees every delayed time is a mesh
point, or linear interpolation between neighbouring values of a
fixed-step grid.  History times always evaluate the history function
directly.
"""

from dataclasses import dataclass

import numpy as np

from .linalg import commutator, mat_exp
from .mesh import AugmentedMesh, MeshMissError, mesh_tolerance
from .noise import StepIntegrals, simple_integrals, trapezoidal_integrals
from .problem import jacobian_delay, jacobian_x

__all__ = [
    "DivergenceError",
    "SchemeKind",
    "UniformGrid",
    "Trajectory",
    "step_em",
    "step_milstein",
    "step_mem",
    "step_mm",
    "delayed_value",
    "run_trajectory",
]

FAMILIES = ("em", "milstein", "mem", "mm")
INTEGRAL_MODES = ("simple", "trapezoidal")
VALUE_MODES = ("mesh_exact", "linear_interpolation")

_STEP_ALIASES = {"simple": "simple", "refined": "trapezoidal", "trapezoidal": "trapezoidal"}


class DivergenceError(RuntimeError):
    """A scheme step produced a non-finite value."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class SchemeKind:
    """Scheme family plus integral and delayed-value resolution modes.

    The EM and MEM maps involve no iterated integrals, so their
    integral_mode is always None.
    """

    family: str
    integral_mode: str = None
    delayed_value_mode: str = "mesh_exact"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown scheme family {self.family!r}")
        if self.delayed_value_mode not in VALUE_MODES:
            raise ValueError(f"unknown delayed-value mode {self.delayed_value_mode!r}")
        if self.uses_integrals:
            if self.integral_mode not in INTEGRAL_MODES:
                raise ValueError(
                    f"{self.family} requires an integral mode from {INTEGRAL_MODES}"
                )
        elif self.integral_mode is not None:
            object.__setattr__(self, "integral_mode", None)

    @property
    def uses_integrals(self):
        return self.family in ("milstein", "mm")

    @property
    def label(self):
        if self.integral_mode is None:
            return self.family
        return f"{self.family}_{self.integral_mode}"

    @classmethod
    def parse(cls, spec, delayed_value_mode="mesh_exact"):
        """Parse strings like "em", "milstein-simple" or "mm-refined"."""
        parts = spec.strip().lower().split("-")
        family = parts[0]
        if family not in FAMILIES:
            raise ValueError(f"unknown scheme {spec!r}")
        mode = None
        if len(parts) == 2:
            if parts[1] not in _STEP_ALIASES:
                raise ValueError(f"unknown integral mode in {spec!r}")
            mode = _STEP_ALIASES[parts[1]]
        elif len(parts) > 2:
            raise ValueError(f"malformed scheme spec {spec!r}")
        if family in ("milstein", "mm") and mode is None:
            raise ValueError(f"{family} needs '-simple' or '-refined' in {spec!r}")
        return cls(family=family, integral_mode=mode, delayed_value_mode=delayed_value_mode)


@dataclass(frozen=True)
class UniformGrid:
    """Fixed-step grid on [0, T] for the linear-interpolation schemes."""

    h: float
    times: np.ndarray

    @classmethod
    def create(cls, h, terminal_time):
        h = float(h)
        n = round(terminal_time / h)
        if n < 1 or abs(n * h - terminal_time) > mesh_tolerance(terminal_time):
            raise ValueError(f"step {h!r} does not divide the terminal time {terminal_time!r}")
        return cls(h=h, times=np.arange(n + 1) * h)

    @property
    def tolerance(self):
        return mesh_tolerance(self.times[-1])

    def locate(self, t):
        idx = int(round(t / self.h))
        if idx < 0 or idx >= len(self.times) or abs(self.times[idx] - t) > self.tolerance:
            raise MeshMissError(f"time {t!r} is not a grid point of step {self.h!r}")
        return idx


class _DelayTables:
    """Per-grid lookup tables for delayed and twice-delayed states.

    Everything here depends only on (grid, delays, mode), so one instance
    is shared by all Monte Carlo trials on that grid.
    """

    def __init__(self, times, delays, mode):
        self.mode = mode
        n_steps = len(times) - 1
        k_count = len(delays)
        tol = delays.tolerance
        t_steps = times[:-1]
        self.active = np.empty((k_count, n_steps), dtype=bool)
        self.dtime = np.empty((k_count, n_steps))
        self.d2time = np.empty((k_count, k_count, n_steps))
        for k, tau in enumerate(delays.delays):
            self.active[k] = t_steps >= tau - tol
            self.dtime[k] = t_steps - tau
            for l, tau_l in enumerate(delays.delays):
                self.d2time[l, k] = t_steps - tau_l - tau
        if mode == "mesh_exact":
            self.didx = np.full((k_count, n_steps), -1, dtype=np.int64)
            self.d2idx = np.full((k_count, k_count, n_steps), -1, dtype=np.int64)
            self._fill_mesh_indices(times, tol)
        else:
            h = times[1] - times[0]
            self.dpre, self.dtheta = self._interp_tables(self.dtime, h, len(times), tol)
            self.d2pre, self.d2theta = self._interp_tables(self.d2time, h, len(times), tol)

    def _fill_mesh_indices(self, times, tol):
        def lookup(targets):
            idx = np.searchsorted(times, targets)
            idx = np.clip(idx, 0, len(times) - 1)
            left = np.clip(idx - 1, 0, len(times) - 1)
            idx = np.where(
                np.abs(times[left] - targets) < np.abs(times[idx] - targets), left, idx
            )
            ok = np.abs(times[idx] - targets) <= tol
            return idx, ok

        for k in range(self.didx.shape[0]):
            on_mesh = self.dtime[k] >= -tol
            if np.any(on_mesh):
                idx, ok = lookup(np.maximum(self.dtime[k][on_mesh], 0.0))
                if not np.all(ok):
                    bad = self.dtime[k][on_mesh][~ok][0]
                    raise MeshMissError(
                        f"delayed time {bad!r} is absent from the scheme mesh"
                    )
                self.didx[k][on_mesh] = idx
            for l in range(self.didx.shape[0]):
                on_mesh2 = self.d2time[l, k] >= -tol
                if np.any(on_mesh2):
                    idx, ok = lookup(np.maximum(self.d2time[l, k][on_mesh2], 0.0))
                    if not np.all(ok):
                        bad = self.d2time[l, k][on_mesh2][~ok][0]
                        raise MeshMissError(
                            f"twice-delayed time {bad!r} is absent from the scheme mesh"
                        )
                    self.d2idx[l, k][on_mesh2] = idx

    @staticmethod
    def _interp_tables(target_times, h, n_points, tol):
        ratio = target_times / h
        pre = np.floor(ratio + tol / h).astype(np.int64)
        theta = ratio - pre
        theta[theta < tol / h] = 0.0
        np.clip(pre, None, n_points - 1, out=pre)
        return pre, theta


class Trajectory:
    """Scheme values on a grid over [0, T]; negative times defer to the
    problem history."""

    def __init__(self, problem, kind, grid, tables=None):
        self.problem = problem
        self.kind = kind
        self.grid = grid
        self.times = grid.points if isinstance(grid, AugmentedMesh) else grid.times
        self.tables = tables if tables is not None else _DelayTables(
            self.times, problem.delays, kind.delayed_value_mode
        )
        self.values = np.full((len(self.times), problem.d), np.nan)
        self.values[0] = problem.history(0.0)
        self.frontier = 0
        self.stats = {"delayed_corrections": np.zeros(problem.K, dtype=np.int64),
                      "history_clamps": 0}
        self._magnus = None

    @property
    def magnus_workspace(self):
        """(A_0 - sum A_i^2 / 2, nonzero commutator pairs) cached per run."""
        if self._magnus is None:
            a = self.problem.A
            drift = a[0] - 0.5 * sum(ai @ ai for ai in a[1:])
            pairs = []
            for i in range(len(a)):
                for j in range(i + 1, len(a)):
                    c = commutator(a[i], a[j])
                    if np.any(c):
                        pairs.append((i, j, c))
            self._magnus = (drift, pairs)
        return self._magnus

    def _history(self, t):
        tau_max = self.problem.delays.max_delay
        if t < -tau_max - self.problem.delays.tolerance:
            self.stats["history_clamps"] += 1
        return self.problem.history_clamped(t)

    def _value_at(self, idx):
        if idx > self.frontier:
            raise DivergenceError(
                f"lookup at grid index {idx} beyond the simulated frontier "
                f"{self.frontier} (scheme ordering bug)"
            )
        return self.values[idx]

    def _resolve(self, n, time_table, idx_table=None, pre_table=None, theta_table=None):
        t = time_table[n]
        if self.tables.mode == "mesh_exact":
            idx = idx_table[n]
            if idx < 0:
                return self._history(t)
            return self._value_at(idx)
        if t < 0.0:
            return self._history(t)
        pre = pre_table[n]
        theta = theta_table[n]
        if theta == 0.0:
            return self._value_at(pre)
        return (1.0 - theta) * self._value_at(pre) + theta * self._value_at(pre + 1)

    def delayed_states(self, n):
        """Tuple of the K delayed values Y(t_n - tau_k)."""
        tb = self.tables
        if tb.mode == "mesh_exact":
            return tuple(
                self._resolve(n, tb.dtime[k], idx_table=tb.didx[k])
                for k in range(len(tb.dtime))
            )
        return tuple(
            self._resolve(n, tb.dtime[k], pre_table=tb.dpre[k], theta_table=tb.dtheta[k])
            for k in range(len(tb.dtime))
        )

    def twice_delayed_states(self, n, k):
        """Tuple over l of Y(t_n - tau_l - tau_k)."""
        tb = self.tables
        if tb.mode == "mesh_exact":
            return tuple(
                self._resolve(n, tb.d2time[l, k], idx_table=tb.d2idx[l, k])
                for l in range(len(tb.dtime))
            )
        return tuple(
            self._resolve(
                n, tb.d2time[l, k], pre_table=tb.d2pre[l, k], theta_table=tb.d2theta[l, k]
            )
            for l in range(len(tb.dtime))
        )


def delayed_value(traj, t_target, mode=None):
    """Scheme value at an arbitrary time, resolved per the trajectory's
    delayed-value mode (or an explicit override)."""
    mode = mode or traj.kind.delayed_value_mode
    if t_target <= 0.0:
        return traj._history(t_target)
    if mode == "mesh_exact":
        return traj._value_at(traj.grid.locate(t_target))
    if not isinstance(traj.grid, UniformGrid):
        raise ValueError("linear interpolation is defined only on fixed-step grids")
    times = traj.times
    h = times[1] - times[0]
    tol = traj.problem.delays.tolerance
    if t_target > times[-1] + tol:
        raise ValueError(f"time {t_target!r} outside the grid span")
    ratio = t_target / h
    pre = int(np.floor(ratio + tol / h))
    theta = ratio - pre
    if theta < tol / h:
        theta = 0.0
    pre = min(pre, len(times) - 1)
    if theta == 0.0:
        return traj._value_at(pre)
    return (1.0 - theta) * traj._value_at(pre) + theta * traj._value_at(pre + 1)


def _drift_diffusion(problem, t, y, x_delays):
    f_val = problem.f(t, y, x_delays)
    g_vals = [g(t, y, x_delays) for g in problem.g]
    return f_val, g_vals


def step_em(problem, traj, n, integrals):
    """Euler-Maruyama map across [t_n, t_{n+1}]."""
    t = traj.times[n]
    y = traj.values[n]
    xd = traj.delayed_states(n)
    f_val, g_vals = _drift_diffusion(problem, t, y, xd)
    out = y + (problem.A[0] @ y + f_val) * integrals.dt
    for j, g_val in enumerate(g_vals):
        out = out + (problem.A[j + 1] @ y + g_val) * integrals.dw[j]
    return out


def _delayed_correction(problem, traj, n, integrals, t, y, xd):
    """Shared delayed Milstein correction: for each delay past its onset,
    sum the delayed Jacobian applied to delayed diffusion terms weighted by
    the delayed iterated integrals."""
    out = np.zeros(problem.d)
    for k, ii_k in integrals.ii_delayed.items():
        t_k = traj.tables.dtime[k][n]
        y_k = xd[k]
        xdd = traj.twice_delayed_states(n, k)
        v_k = np.stack([problem.A[i + 1] @ y_k + g(t_k, y_k, xdd) for i, g in enumerate(problem.g)])
        weights = ii_k.T @ v_k
        for j in range(problem.m):
            out = out + jacobian_delay(problem, j, k, t, y, xd) @ weights[j]
        traj.stats["delayed_corrections"][k] += 1
    return out


def step_milstein(problem, traj, n, integrals):
    """Milstein map: the Euler-Maruyama terms plus present and delayed
    iterated-integral corrections."""
    t = traj.times[n]
    y = traj.values[n]
    xd = traj.delayed_states(n)
    f_val, g_vals = _drift_diffusion(problem, t, y, xd)
    out = y + (problem.A[0] @ y + f_val) * integrals.dt
    for j, g_val in enumerate(g_vals):
        out = out + (problem.A[j + 1] @ y + g_val) * integrals.dw[j]
    v = np.stack([problem.A[i + 1] @ y + g_val for i, g_val in enumerate(g_vals)])
    weights = integrals.ii.T @ v
    for j in range(problem.m):
        bracket = problem.A[j + 1] + jacobian_x(problem, j, t, y, xd)
        out = out + bracket @ weights[j]
    out = out + _delayed_correction(problem, traj, n, integrals, t, y, xd)
    return out


def _magnus_inner(problem, y, integrals, f_val, g_vals):
    ftil = f_val
    for a, g_val in zip(problem.A[1:], g_vals):
        ftil = ftil - a @ g_val
    inner = y + ftil * integrals.dt
    for j, g_val in enumerate(g_vals):
        inner = inner + g_val * integrals.dw[j]
    return inner


def step_mem(problem, traj, n, integrals):
    """Exponential Euler-Maruyama map: matrix exponential of the linear
    part applied to the nonlinear increment."""
    t = traj.times[n]
    y = traj.values[n]
    xd = traj.delayed_states(n)
    f_val, g_vals = _drift_diffusion(problem, t, y, xd)
    drift, _ = traj.magnus_workspace
    exponent = drift * integrals.dt
    for j in range(problem.m):
        exponent = exponent + problem.A[j + 1] * integrals.dw[j]
    inner = _magnus_inner(problem, y, integrals, f_val, g_vals)
    return mat_exp(exponent) @ inner


def step_mm(problem, traj, n, integrals):
    """Exponential Milstein map: commutator-corrected exponential applied
    to the Milstein-corrected increment."""
    t = traj.times[n]
    y = traj.values[n]
    xd = traj.delayed_states(n)
    f_val, g_vals = _drift_diffusion(problem, t, y, xd)
    drift, comm_pairs = traj.magnus_workspace
    exponent = drift * integrals.dt
    for j in range(problem.m):
        exponent = exponent + problem.A[j + 1] * integrals.dw[j]
    ii = integrals.ii
    for i, j, c in comm_pairs:
        if i == 0:
            antisym = integrals.i_i0[j - 1] - integrals.i_0j[j - 1]
        else:
            antisym = ii[j - 1, i - 1] - ii[i - 1, j - 1]
        if antisym != 0.0:
            exponent = exponent + (0.5 * antisym) * c

    inner = _magnus_inner(problem, y, integrals, f_val, g_vals)
    v = np.stack([problem.A[i + 1] @ y + g_val for i, g_val in enumerate(g_vals)])
    weights = ii.T @ v
    g_mat = np.stack(g_vals)
    for j in range(problem.m):
        inner = inner + jacobian_x(problem, j, t, y, xd) @ weights[j]
    for i in range(problem.m):
        inner = inner - problem.A[i + 1] @ (ii[i] @ g_mat)
    inner = inner + _delayed_correction(problem, traj, n, integrals, t, y, xd)
    return mat_exp(exponent) @ inner


_STEP_FUNCS = {
    "em": step_em,
    "milstein": step_milstein,
    "mem": step_mem,
    "mm": step_mm,
}


def run_trajectory(problem, kind, grid, paths, tables=None, grid_to_mesh=None):
    """Drive the selected one-step map across the grid.

    Wiener increments and integrals are pulled from the refined-mesh paths
    by summing fine increments between consecutive grid points, so every
    scheme sharing the paths sees the same Brownian realisation.
    """
    if kind.delayed_value_mode == "mesh_exact" and not isinstance(grid, AugmentedMesh):
        raise ValueError("mesh_exact schemes require an augmented-mesh grid")
    if kind.delayed_value_mode == "linear_interpolation" and not isinstance(grid, UniformGrid):
        raise ValueError("linear-interpolation schemes require a uniform grid")
    traj = Trajectory(problem, kind, grid, tables=tables)
    times = traj.times
    delays = problem.delays
    if np.max(np.diff(times)) > delays.min_delay + delays.tolerance:
        raise ValueError("grid step sizes must not exceed the smallest delay")
    g2a = grid_to_mesh if grid_to_mesh is not None else paths.mesh.locate_many(times)
    step = _STEP_FUNCS[kind.family]
    wants_delayed_fallback = kind.delayed_value_mode == "linear_interpolation"
    for n in range(len(times) - 1):
        a, b = g2a[n], g2a[n + 1]
        if kind.uses_integrals:
            if kind.integral_mode == "trapezoidal":
                ints = trapezoidal_integrals(
                    paths, a, b, delays, delayed_fallback_simple=wants_delayed_fallback
                )
            else:
                ints = simple_integrals(paths, a, b, delays)
        else:
            w = paths.values
            ints = StepIntegrals(
                dt=w[0, b] - w[0, a],
                dw=w[1:, b] - w[1:, a],
            )
        y_next = step(problem, traj, n, ints)
        if not np.all(np.isfinite(y_next)):
            raise DivergenceError(f"non-finite state after step {n}", step=n)
        traj.values[n + 1] = y_next
        traj.frontier = n + 1
    return traj
