"""Wiener paths on a refined mesh and iterated-integral approximations.

Paths are sampled once per trial on the refined mesh and shared by the
reference solution and every scheme, so coarse increments are exact sums
of fine ones.  Row 0 of the path array is the deterministic process
W_0(t) = t, which turns the mixed Wiener/time integrals into ordinary
entries of the same arrays.

Two approximations are provided for the double integrals over one step
[t_n, t_{n+1}]:

* simple: half-products of whole-step increments (strong order 1/2);
* trapezoidal: sums over the refined subpoints of the step (order 1),
  with delayed variants taking the inner increments at the subpoints
  shifted by the delay, which the refined mesh contains by construction.

The non-delayed diagonal is computed from the exact identity
I_jj = (dW_j^2 - h)/2 unless diagonal_exact is switched off.
"""

from dataclasses import dataclass

import numpy as np

from .mesh import MeshMissError

__all__ = [
    "SeedInfo",
    "WienerPaths",
    "StepIntegrals",
    "sample_paths",
    "increments",
    "simple_integrals",
    "trapezoidal_integrals",
]


@dataclass(frozen=True)
class SeedInfo:
    """Master seed plus trial index; per-path streams derive from both."""

    master: int
    trial: int = 0


class WienerPaths:
    """Values of (W_0, W_1, ..., W_m) at every mesh point of one trial."""

    def __init__(self, mesh, values, seed_info):
        self.mesh = mesh
        self.values = values
        self.seed_info = seed_info

    @property
    def m(self):
        return self.values.shape[0] - 1


def sample_paths(mesh, m, seed):
    """Sample m independent Brownian paths on the mesh.

    Path j is the cumulative sum of N(0, dt_i) increments drawn from a
    generator seeded by (master, trial, j), so any (trial, path) stream is
    reproducible regardless of execution order.
    """
    if m < 1:
        raise ValueError("at least one Wiener process is required")
    pts = mesh.points
    n_pts = len(pts)
    sqrt_dt = np.sqrt(np.diff(pts))
    values = np.empty((m + 1, n_pts))
    values[0] = pts
    for j in range(1, m + 1):
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([seed.master, seed.trial, j]))
        )
        values[j, 0] = 0.0
        np.cumsum(rng.standard_normal(n_pts - 1) * sqrt_dt, out=values[j, 1:])
    return WienerPaths(mesh, values, seed)


def increments(paths, a, b, shift=None):
    """W(t_b - shift) - W(t_a - shift) for every path row (shift 0 if absent)."""
    if a >= b:
        raise ValueError(f"need a < b, got a={a}, b={b}")
    if shift is None:
        return paths.values[:, b] - paths.values[:, a]
    ia = paths.mesh.locate(paths.mesh.points[a] - shift)
    ib = paths.mesh.locate(paths.mesh.points[b] - shift)
    return paths.values[:, ib] - paths.values[:, ia]


@dataclass
class StepIntegrals:
    """Increment/integral bundle consumed by one scheme step.

    ``ii[i-1, j-1]`` approximates the double integral with inner path i and
    outer path j; ``ii_delayed[k]`` the variant with the inner path shifted
    by delay k (present only when the step start has passed that delay);
    ``i_i0``/``i_0j`` are the mixed integrals against W_0(t) = t.
    """

    dt: float
    dw: np.ndarray
    ii: np.ndarray = None
    ii_delayed: dict = None
    i_i0: np.ndarray = None
    i_0j: np.ndarray = None


def _active_delays(paths, a, delays):
    t_start = paths.mesh.points[a]
    tol = delays.tolerance
    return [k for k, tau in enumerate(delays.delays) if t_start >= tau - tol]


def _check_step(paths, a, b, delays):
    h = paths.mesh.points[b] - paths.mesh.points[a]
    if h > delays.min_delay + delays.tolerance:
        raise ValueError(
            f"step {h!r} exceeds the smallest delay {delays.min_delay!r}"
        )
    return h


def simple_integrals(paths, n_pre, n_post, delays, diagonal_exact=True):
    """Half-product approximations from whole-step increments."""
    h = _check_step(paths, n_pre, n_post, delays)
    w = paths.values
    m = paths.m
    dw_all = w[:, n_post] - w[:, n_pre]
    dw = dw_all[1:]
    full = 0.5 * np.outer(dw_all, dw_all)
    ii = full[1:, 1:].copy()
    if diagonal_exact:
        ii[np.diag_indices(m)] = 0.5 * (dw**2 - h)
    delayed = {}
    for k in _active_delays(paths, n_pre, delays):
        sidx = paths.mesh.shifted_indices(k)
        ia, ib = sidx[n_pre], sidx[n_post]
        if ia < 0 or ib < 0:
            raise MeshMissError(f"shifted step endpoints absent for delay {k}")
        dw_shift = w[1:, ib] - w[1:, ia]
        delayed[k] = 0.5 * np.outer(dw_shift, dw)
    return StepIntegrals(
        dt=h,
        dw=dw,
        ii=ii,
        ii_delayed=delayed,
        i_i0=0.5 * dw * h,
        i_0j=0.5 * h * dw,
    )


def trapezoidal_integrals(paths, n_pre, n_post, delays, diagonal_exact=True,
                          delayed_fallback_simple=False):
    """Subinterval-sum approximations over the refined points of the step.

    The subpoints are every mesh point in [t_n, t_{n+1}]; their number may
    vary from step to step on an augmented mesh.  Delayed variants use the
    same subpoints shifted by the delay, which exist on the mesh by the
    delay-closure property.  With ``delayed_fallback_simple`` a delay whose
    shifted subpoints are absent falls back to the half-product form for
    that step instead of raising.
    """
    h = _check_step(paths, n_pre, n_post, delays)
    w = paths.values
    m = paths.m
    # rows: paths 0..m; columns: the F subintervals of the step
    deltas = np.diff(w[:, n_pre : n_post + 1], axis=1)
    tails = w[:, n_post : n_post + 1] - w[:, n_pre + 1 : n_post + 1]
    weight = 0.5 * deltas + tails
    full = deltas @ weight.T
    dw_all = w[:, n_post] - w[:, n_pre]
    dw = dw_all[1:]
    ii = full[1:, 1:].copy()
    if diagonal_exact:
        ii[np.diag_indices(m)] = 0.5 * (dw**2 - h)
    delayed = {}
    for k in _active_delays(paths, n_pre, delays):
        sidx = paths.mesh.shifted_indices(k)[n_pre : n_post + 1]
        if np.any(sidx < 0):
            if not delayed_fallback_simple:
                raise MeshMissError(f"shifted subpoints absent for delay {k}")
            ia, ib = sidx[0], sidx[-1]
            if ia < 0 or ib < 0:
                raise MeshMissError(f"shifted step endpoints absent for delay {k}")
            delayed[k] = 0.5 * np.outer(w[1:, ib] - w[1:, ia], dw)
            continue
        deltas_shift = np.diff(w[1:, sidx], axis=1)
        delayed[k] = deltas_shift @ weight[1:].T
    return StepIntegrals(
        dt=h,
        dw=dw,
        ii=ii,
        ii_delayed=delayed,
        i_i0=full[1:, 0],
        i_0j=full[0, 1:],
    )
