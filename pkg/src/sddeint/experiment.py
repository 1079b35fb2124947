"""Monte Carlo convergence harness.

Each trial samples one set of Wiener paths on the refined mesh, computes
a reference trajectory with the Milstein map on that full mesh, then runs
every requested (scheme, initial step) pair on its own grid against the
same paths.  Squared errors at the observation times feed a
root-mean-square error per table row, and log-log slopes against the
initial step size quantify the empirical convergence order.

Trials are the unit of parallelism.  Every per-trial quantity derives
from (master seed, trial index) alone and the cross-trial reduction is a
fixed-order pairwise sum over the trial-indexed array, so results are
identical for any worker count.
"""

import math
import multiprocessing
from dataclasses import dataclass, field

import numpy as np

from .mesh import DEFAULT_POINT_CAP, DelaySet, build_artm, build_augmented_mesh, observation_times
from .noise import SeedInfo, sample_paths
from .problem import builtin
from .schemes import (
    DivergenceError,
    SchemeKind,
    UniformGrid,
    _DelayTables,
    run_trajectory,
)

__all__ = [
    "ExperimentConfig",
    "ErrorRow",
    "ErrorTable",
    "reference_solution",
    "run_study",
    "fit_slope",
    "study_summary",
]

CSV_HEADER = "scheme,integral_mode,delayed_value_mode,h_initial,obs_time,mse,n_ok,n_failed,seed"


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str
    delays: tuple
    terminal_time: float
    h_initial_list: tuple
    h_refined_initial: float
    schemes: tuple
    n_trials: int
    master_seed: int
    observation_times: tuple = None
    point_cap: int = DEFAULT_POINT_CAP

    def validated(self):
        delays = DelaySet.create(self.delays, self.terminal_time)
        if self.n_trials < 1:
            raise ValueError("n_trials must be at least 1")
        if not self.h_initial_list:
            raise ValueError("at least one initial step is required")
        tol = delays.tolerance
        for h in self.h_initial_list:
            ratio = h / self.h_refined_initial
            if abs(ratio - round(ratio)) > tol or round(ratio) < 1:
                raise ValueError(
                    f"refined step {self.h_refined_initial!r} must divide initial step {h!r}"
                )
            if h > delays.min_delay + tol:
                raise ValueError(
                    f"initial step {h!r} violates the max-step bound (smallest delay "
                    f"{delays.min_delay!r})"
                )
        obs = self.observation_times or (self.terminal_time,)
        for t in obs:
            if t < -tol or t > self.terminal_time + tol:
                raise ValueError(f"observation time {t!r} outside [0, T]")
        return delays, tuple(float(t) for t in obs)


@dataclass(frozen=True)
class ErrorRow:
    scheme: SchemeKind
    h_initial: float
    obs_time: float
    mse: float
    n_ok: int
    n_failed: int
    seed: int

    def sort_key(self):
        return (
            self.scheme.family,
            self.scheme.integral_mode or "",
            self.scheme.delayed_value_mode,
            self.h_initial,
            self.obs_time,
        )


@dataclass
class ErrorTable:
    rows: list

    def csv_text(self):
        lines = [CSV_HEADER]
        for r in sorted(self.rows, key=ErrorRow.sort_key):
            lines.append(
                f"{r.scheme.family},{r.scheme.integral_mode or 'none'},"
                f"{r.scheme.delayed_value_mode},{r.h_initial:.17g},{r.obs_time:.17g},"
                f"{r.mse:.17g},{r.n_ok},{r.n_failed},{r.seed}"
            )
        return "\n".join(lines) + "\n"

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.csv_text())

    def select(self, scheme=None, obs_time=None, tol=1e-12):
        rows = self.rows
        if isinstance(scheme, SchemeKind):
            rows = [
                r for r in rows
                if r.scheme.label == scheme.label
                and r.scheme.delayed_value_mode == scheme.delayed_value_mode
            ]
        elif scheme is not None:
            label = str(scheme)
            rows = [r for r in rows if r.scheme.label == label]
        if obs_time is not None:
            rows = [r for r in rows if abs(r.obs_time - obs_time) <= tol]
        return rows


_REFERENCE_KIND = SchemeKind("milstein", "simple", "mesh_exact")


def reference_solution(problem, artm, paths, tables=None):
    """Milstein reference on the full refined mesh (single-subinterval
    integrals with the exact diagonal)."""
    g2a = np.arange(len(artm.points))
    return run_trajectory(problem, _REFERENCE_KIND, artm, paths, tables=tables, grid_to_mesh=g2a)


@dataclass
class _RunSpec:
    kind: SchemeKind
    h_initial: float
    grid: object
    tables: object
    g2a: np.ndarray
    # (row index, grid obs index, refined-mesh obs index) triples
    obs: list = field(default_factory=list)


class _StudyPlan:
    def __init__(self, config):
        self.config = config
        delays, obs_times = config.validated()
        self.delays = delays
        self.obs_times = obs_times
        self.problem = builtin(config.problem, delays=config.delays,
                               terminal_time=config.terminal_time)
        extra = [t for t in obs_times if t > 0.0]
        self.artm = build_artm(
            delays,
            max(config.h_initial_list),
            config.h_refined_initial,
            extra_obs=extra,
            point_cap=config.point_cap,
        )
        self.ref_tables = _DelayTables(self.artm.points, delays, "mesh_exact")
        self.runs = []
        grid_cache = {}
        row_index = 0
        row_defs = []
        ordered = sorted(
            (SchemeKind(k.family, k.integral_mode, k.delayed_value_mode)
             for k in config.schemes),
            key=lambda k: (k.family, k.integral_mode or "", k.delayed_value_mode),
        )
        for kind in ordered:
            for h in sorted(config.h_initial_list):
                key = (kind.delayed_value_mode, h)
                if key not in grid_cache:
                    grid_cache[key] = self._make_grid(kind.delayed_value_mode, h, extra)
                grid, tables, g2a, obs_idx = grid_cache[key]
                run = _RunSpec(kind=kind, h_initial=h, grid=grid, tables=tables, g2a=g2a)
                for t_obs, gi, ai in obs_idx:
                    run.obs.append((row_index, gi, ai))
                    row_defs.append((kind, h, t_obs))
                    row_index += 1
                self.runs.append(run)
        self.row_defs = row_defs

    def _make_grid(self, mode, h, extra):
        if mode == "mesh_exact":
            obs = observation_times(self.delays, h)
            if extra:
                obs = np.sort(np.concatenate([obs, np.asarray(extra)]))
            grid = build_augmented_mesh(obs, self.delays, point_cap=self.config.point_cap)
        else:
            grid = UniformGrid.create(h, self.delays.terminal_time)
        tables = _DelayTables(
            grid.points if mode == "mesh_exact" else grid.times, self.delays, mode
        )
        times = grid.points if mode == "mesh_exact" else grid.times
        g2a = self.artm.locate_many(times)
        obs_idx = []
        for t_obs in self.obs_times:
            try:
                gi = grid.locate(t_obs)
            except LookupError as exc:
                raise ValueError(
                    f"observation time {t_obs!r} is not a grid point of the "
                    f"{mode} grid with step {h!r}"
                ) from exc
            ai = self.artm.locate(t_obs)
            obs_idx.append((t_obs, gi, ai))
        return grid, tables, g2a, obs_idx

    @property
    def n_rows(self):
        return len(self.row_defs)


def _trial_result(plan, trial):
    config = plan.config
    sq = np.zeros(plan.n_rows)
    ok = np.zeros(plan.n_rows, dtype=bool)
    paths = sample_paths(plan.artm, plan.problem.m, SeedInfo(config.master_seed, trial))
    try:
        ref = reference_solution(plan.problem, plan.artm, paths, tables=plan.ref_tables)
    except DivergenceError:
        return sq, ok
    for run in plan.runs:
        try:
            traj = run_trajectory(
                plan.problem, run.kind, run.grid, paths,
                tables=run.tables, grid_to_mesh=run.g2a,
            )
        except DivergenceError:
            continue
        for row_idx, gi, ai in run.obs:
            err = traj.values[gi] - ref.values[ai]
            sq[row_idx] = float(err @ err)
            ok[row_idx] = True
    return sq, ok


_WORKER_PLAN = None


def _worker_init(config):
    global _WORKER_PLAN
    _WORKER_PLAN = _StudyPlan(config)


def _worker_trial(trial):
    return trial, _trial_result(_WORKER_PLAN, trial)


def run_study(config, workers=1):
    """Run the full study; the resulting table is independent of the worker
    count because all randomness is per-trial seeded and the reduction
    order is fixed by trial index."""
    plan = _StudyPlan(config)
    n_trials = config.n_trials
    sq = np.zeros((n_trials, plan.n_rows))
    ok = np.zeros((n_trials, plan.n_rows), dtype=bool)
    if workers is None:
        workers = multiprocessing.cpu_count()
    if workers <= 1 or n_trials == 1:
        for trial in range(n_trials):
            sq[trial], ok[trial] = _trial_result(plan, trial)
    else:
        ctx = multiprocessing.get_context("fork")
        chunk = max(1, n_trials // (workers * 4))
        with ctx.Pool(workers, initializer=_worker_init, initargs=(config,)) as pool:
            for trial, (s, o) in pool.imap_unordered(
                _worker_trial, range(n_trials), chunksize=chunk
            ):
                sq[trial] = s
                ok[trial] = o
    rows = []
    for r, (kind, h, t_obs) in enumerate(plan.row_defs):
        mask = ok[:, r]
        n_ok = int(np.count_nonzero(mask))
        # pairwise summation over the trial-ordered array keeps the
        # reduction deterministic
        mse = math.sqrt(float(np.sum(sq[mask, r])) / n_ok) if n_ok else float("nan")
        rows.append(ErrorRow(
            scheme=kind, h_initial=h, obs_time=t_obs, mse=mse,
            n_ok=n_ok, n_failed=n_trials - n_ok, seed=config.master_seed,
        ))
    return ErrorTable(rows=rows)


def fit_slope(table, scheme, obs_time):
    """Least-squares slope of log(MSE) against log(h_initial)."""
    rows = table.select(scheme=scheme, obs_time=obs_time)
    hs = sorted({r.h_initial for r in rows})
    if len(hs) < 3:
        raise ValueError("slope fit needs at least 3 distinct initial steps")
    pts = [(r.h_initial, r.mse) for r in rows]
    if any(mse <= 0.0 or not math.isfinite(mse) for _, mse in pts):
        raise ValueError("slope fit requires positive finite MSE values")
    x = np.log([h for h, _ in pts])
    y = np.log([mse for _, mse in pts])
    return float(np.polyfit(x, y, 1)[0])


def study_summary(table):
    """Fitted slope per scheme per observation time, as plain text."""
    lines = []
    seen = []
    for row in sorted(table.rows, key=ErrorRow.sort_key):
        key = (row.scheme.label, row.scheme.delayed_value_mode, row.obs_time)
        if key in seen:
            continue
        seen.append(key)
        try:
            slope = fit_slope(table, row.scheme, row.obs_time)
            text = f"{slope:.3f}"
        except ValueError:
            text = "n/a"
        lines.append(
            f"{row.scheme.label} ({row.scheme.delayed_value_mode}) "
            f"@ t={row.obs_time:g}: slope {text}"
        )
    return "\n".join(lines)
