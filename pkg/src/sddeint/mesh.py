"""Time meshes for multi-delay stochastic schemes.

A scheme over delays tau_1..tau_K must be evaluated at every observation
time shifted left by nonnegative integer combinations of the delays.  The
augmented mesh collects those points; building it from a finer initial
step produces the refined mesh (ARTM) that carries the Wiener samples.

Two constructions are provided:

* :func:`build_augmented_mesh` -- the solver mesh.  Points closer than the
  mesh tolerance are merged (cluster minimum kept), so each mathematical
  time appears once regardless of the floating-point path that produced
  it.
* :func:`accumulated_mesh_points` -- an order-sensitive enumeration that
  subtracts whole delay combinations from the accumulated set and
  deduplicates bitwise.  Compounded subtractions round differently from
  direct ones, so this retains near-coincident duplicates.  It exists to
  reproduce mesh-size counts computed that way; the solver never uses
  it.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "MeshMissError",
    "MeshSizeError",
    "DelaySet",
    "AugmentedMesh",
    "mesh_tolerance",
    "observation_times",
    "bellman_points",
    "build_augmented_mesh",
    "build_artm",
    "accumulated_mesh_points",
    "locate",
    "neighbors",
]

DEFAULT_POINT_CAP = 10_000_000


class MeshMissError(LookupError):
    """No mesh point within tolerance of the queried time."""


class MeshSizeError(RuntimeError):
    """Mesh construction would exceed the configured point cap."""


def mesh_tolerance(terminal_time):
    """Absolute merge/lookup tolerance: 1e-9 scaled by max(1, T)."""
    return 1e-9 * max(1.0, float(terminal_time))


def _count_multiples(terminal_time, tau):
    # smallest N with N*tau >= T; the -1e-12 guards against T/tau landing
    # a few ulps above an exact integer
    return int(math.ceil(terminal_time / tau - 1e-12))


@dataclass(frozen=True)
class DelaySet:
    """Fixed positive delays with terminal time and per-delay multiple counts."""

    delays: tuple
    terminal_time: float
    multiples: tuple

    @classmethod
    def create(cls, delays, terminal_time):
        delays = tuple(float(tau) for tau in delays)
        terminal_time = float(terminal_time)
        if not delays:
            raise ValueError("at least one delay is required")
        if terminal_time <= 0.0 or not math.isfinite(terminal_time):
            raise ValueError(f"terminal time must be positive, got {terminal_time}")
        for tau in delays:
            if tau <= 0.0 or not math.isfinite(tau):
                raise ValueError(f"delays must be positive, got {tau}")
        multiples = tuple(_count_multiples(terminal_time, tau) for tau in delays)
        tol = mesh_tolerance(terminal_time)
        for tau, n in zip(delays, multiples):
            if not (n * tau >= terminal_time - tol and (n - 1) * tau < terminal_time + tol):
                raise ValueError(f"inconsistent multiple count {n} for delay {tau}")
        return cls(delays=delays, terminal_time=terminal_time, multiples=multiples)

    @property
    def tolerance(self):
        return mesh_tolerance(self.terminal_time)

    @property
    def min_delay(self):
        return min(self.delays)

    @property
    def max_delay(self):
        return max(self.delays)

    def __len__(self):
        return len(self.delays)


def _dedup_sorted(points, tol):
    """Merge runs of sorted points with consecutive gaps <= tol, keeping the
    run minimum.  Returns (kept points, count merged farther than fp noise)."""
    if len(points) == 0:
        return points, 0
    keep = np.empty(len(points), dtype=bool)
    keep[0] = True
    gaps = np.diff(points)
    keep[1:] = gaps > tol
    dropped_gaps = gaps[~keep[1:]]
    # gaps well above accumulated rounding mark mathematically distinct
    # points merged by the tolerance
    merged_distinct = int(np.count_nonzero(dropped_gaps > 1e-3 * tol))
    return points[keep], merged_distinct


class AugmentedMesh:
    """Sorted, tolerance-deduplicated time points on [0, T] with delay-shift
    lookup, observation flags and Bellman-boundary flags."""

    def __init__(self, points, delays, observation_flags, bellman_flags, merged_distinct=0):
        self.points = np.asarray(points, dtype=float)
        self.delays = delays
        self.tolerance = delays.tolerance
        self.observation_flags = np.asarray(observation_flags, dtype=bool)
        self.bellman_flags = np.asarray(bellman_flags, dtype=bool)
        self.merged_distinct = merged_distinct
        self._shifted_cache = {}

    def __len__(self):
        return len(self.points)

    @property
    def terminal_time(self):
        return self.delays.terminal_time

    def step_sizes(self):
        return np.diff(self.points)

    def locate(self, t):
        return locate(self, t)

    def locate_many(self, times, missing=None):
        """Vectorised locate.  With ``missing=None`` any miss raises; an
        integer sentinel marks misses instead."""
        times = np.asarray(times, dtype=float)
        idx = np.searchsorted(self.points, times)
        idx = np.clip(idx, 0, len(self.points) - 1)
        left = np.clip(idx - 1, 0, len(self.points) - 1)
        use_left = np.abs(self.points[left] - times) < np.abs(self.points[idx] - times)
        idx = np.where(use_left, left, idx)
        miss = np.abs(self.points[idx] - times) > self.tolerance
        if np.any(miss):
            if missing is None:
                bad = times[miss][0]
                raise MeshMissError(f"no mesh point within {self.tolerance} of t={bad!r}")
            idx = np.where(miss, missing, idx)
        return idx

    def shifted_indices(self, k):
        """Index of points[i] - tau_k on the mesh for every i, or -1 where the
        shifted time is below zero (beyond tolerance).  Cached per delay."""
        cached = self._shifted_cache.get(k)
        if cached is not None:
            return cached
        tau = self.delays.delays[k]
        shifted = self.points - tau
        idx = np.full(len(self.points), -1, dtype=np.int64)
        valid = shifted >= -self.tolerance
        if np.any(valid):
            idx[valid] = self.locate_many(np.maximum(shifted[valid], 0.0))
        self._shifted_cache[k] = idx
        return idx


def _require_step_divides(h, span, what):
    n = round(span / h)
    if n < 1 or abs(n * h - span) > mesh_tolerance(span):
        raise ValueError(f"{what}: {h!r} does not divide {span!r}")
    return n


def observation_times(delays, h_initial):
    """Uniform grid of step h_initial joined with all delay multiples inside
    [0, T].  h_initial must divide T and lie below the smallest delay."""
    h_initial = float(h_initial)
    if h_initial <= 0.0:
        raise ValueError(f"initial step must be positive, got {h_initial}")
    tol = delays.tolerance
    n = _require_step_divides(h_initial, delays.terminal_time, "initial step")
    # windows [t - tau, t + h - tau] and [t, t + h] must not overlap, so the
    # step may reach the smallest delay but never exceed it
    if h_initial > delays.min_delay + tol:
        raise ValueError(
            f"initial step {h_initial} exceeds the smallest delay "
            f"{delays.min_delay} (max step bound)"
        )
    parts = [np.arange(n + 1) * h_initial]
    for tau, n_mult in zip(delays.delays, delays.multiples):
        mult = np.arange(1, n_mult + 1) * tau
        parts.append(mult[mult <= delays.terminal_time + tol])
    merged = np.sort(np.concatenate(parts))
    out, _ = _dedup_sorted(merged, tol)
    return out


def bellman_points(delays):
    """Sorted boundaries of the intervals on which the delayed equation
    reduces to an ordinary SDE: 0, every delay multiple in (0, T], and T."""
    tol = delays.tolerance
    parts = [np.array([0.0, delays.terminal_time])]
    for tau, n_mult in zip(delays.delays, delays.multiples):
        mult = np.arange(1, n_mult + 1) * tau
        parts.append(mult[mult <= delays.terminal_time + tol])
    merged = np.sort(np.concatenate(parts))
    out, _ = _dedup_sorted(merged, tol)
    return out


def build_augmented_mesh(obs, delays, point_cap=DEFAULT_POINT_CAP):
    """Close the observation set under subtraction of delay multiples.

    One delay at a time, the current set is extended by every subtraction
    of a multiple of that delay; negatives are dropped and the result is
    tolerance-deduplicated before the next delay, keeping memory bounded.
    """
    tol = delays.tolerance
    obs = np.asarray(obs, dtype=float)
    if len(obs) == 0:
        raise ValueError("observation set is empty")
    if obs.min() < -tol or obs.max() > delays.terminal_time + tol:
        raise ValueError("observation times must lie within [0, T]")
    pts = np.sort(obs)
    pts, merged = _dedup_sorted(pts, tol)
    for tau, n_mult in zip(delays.delays, delays.multiples):
        if len(pts) * (n_mult + 1) > 40 * point_cap:
            raise MeshSizeError(
                f"augmented mesh expansion would exceed {40 * point_cap} candidate points"
            )
        shifts = tau * np.arange(n_mult + 1)
        expanded = (pts[None, :] - shifts[:, None]).ravel()
        expanded = expanded[expanded >= -tol]
        np.maximum(expanded, 0.0, out=expanded)
        expanded.sort()
        pts, m = _dedup_sorted(expanded, tol)
        merged += m
        if len(pts) > point_cap:
            raise MeshSizeError(
                f"augmented mesh has {len(pts)} points, exceeding the cap {point_cap}"
            )
    obs_flags = np.zeros(len(pts), dtype=bool)
    obs_idx = np.searchsorted(pts, obs)
    for cand in (np.clip(obs_idx - 1, 0, len(pts) - 1), np.clip(obs_idx, 0, len(pts) - 1)):
        obs_flags[cand[np.abs(pts[cand] - obs) <= tol]] = True
    bell = bellman_points(delays)
    bell_flags = np.zeros(len(pts), dtype=bool)
    bell_idx = np.searchsorted(pts, bell)
    for cand in (np.clip(bell_idx - 1, 0, len(pts) - 1), np.clip(bell_idx, 0, len(pts) - 1)):
        bell_flags[cand[np.abs(pts[cand] - bell) <= tol]] = True
    return AugmentedMesh(pts, delays, obs_flags, bell_flags, merged)


def build_artm(delays, h_initial, h_refined_initial, extra_obs=(), point_cap=DEFAULT_POINT_CAP):
    """Augmented refined time mesh: the augmented mesh built from a refined
    initial step dividing h_initial, so the scheme mesh is a subset."""
    h_initial = float(h_initial)
    h_refined_initial = float(h_refined_initial)
    _require_step_divides(h_refined_initial, h_initial, "refined initial step")
    obs = observation_times(delays, h_refined_initial)
    if len(extra_obs):
        obs = np.sort(np.concatenate([obs, np.asarray(extra_obs, dtype=float)]))
        obs, _ = _dedup_sorted(obs, delays.tolerance)
    return build_augmented_mesh(obs, delays, point_cap=point_cap)


def accumulated_mesh_points(delays, h_initial):
    """Enumerate the augmented mesh by accumulating whole-combination
    subtractions with bitwise deduplication.

    The set grows inside the combination loop, so later combinations also
    shift previously shifted points; the same mathematical time is then
    reached along several floating-point summation paths whose results
    differ in the last bits and are all retained.  Reproduces mesh-size
    counts computed with exact deduplication; not used by the solver.
    """
    h_initial = float(h_initial)
    tol = delays.tolerance
    n = _require_step_divides(h_initial, delays.terminal_time, "initial step")
    parts = [np.arange(n + 1) * h_initial]
    for tau, n_mult in zip(delays.delays, delays.multiples):
        mult = np.arange(1, n_mult + 1) * tau
        parts.append(mult[mult <= delays.terminal_time + tol])
    tc = np.unique(np.concatenate(parts))
    for combo in itertools.product(*[range(m + 1) for m in delays.multiples]):
        total = 0.0
        for i, tau in zip(combo, delays.delays):
            total += i * tau
        if total == 0.0:
            continue
        # only the suffix of tc can stay nonnegative after the subtractions
        lo = np.searchsorted(tc, total - 1e-6)
        new = tc[lo:]
        for i, tau in zip(combo, delays.delays):
            if i:
                new = new - i * tau
        new = new[new >= 0.0]
        if len(new) == 0:
            continue
        pos = np.minimum(np.searchsorted(tc, new), len(tc) - 1)
        fresh = new[tc[pos] != new]
        if len(fresh):
            tc = np.unique(np.concatenate([tc, fresh]))
    return tc


def locate(mesh, t):
    """Index of the unique mesh point within tolerance of t."""
    pts = mesh.points
    tol = mesh.tolerance
    t = float(t)
    if t < -tol or t > pts[-1] + tol:
        raise MeshMissError(f"time {t!r} outside the mesh span [0, {pts[-1]!r}]")
    idx = int(np.searchsorted(pts, t))
    best = idx
    if idx >= len(pts) or (idx > 0 and t - pts[idx - 1] < pts[min(idx, len(pts) - 1)] - t):
        best = idx - 1
    if abs(pts[best] - t) > tol:
        raise MeshMissError(f"no mesh point within {tol} of t={t!r}")
    return best


def neighbors(times, t, tolerance=None):
    """(index_pre, index_post) bracketing t on a sorted time grid: the
    greatest index with time <= t and the least with time > t.  If t sits on
    a grid point (within tolerance) the pre index points at it."""
    times = np.asarray(times, dtype=float)
    tol = mesh_tolerance(times[-1] - times[0]) if tolerance is None else tolerance
    t = float(t)
    if t < times[0] - tol or t > times[-1] + tol:
        raise ValueError(f"time {t!r} outside the grid span [{times[0]!r}, {times[-1]!r}]")
    idx = int(np.searchsorted(times, t, side="right"))
    pre = idx - 1
    if idx < len(times) and abs(times[idx] - t) <= tol:
        pre = idx
    pre = max(pre, 0)
    return pre, min(pre + 1, len(times) - 1)
