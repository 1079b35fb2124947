"""Problem definitions: linear part, nonlinear coefficients, history.

A problem couples the constant matrices A_0..A_m with nonlinear drift f
and diffusion terms g_1..g_m, each a function of (t, x, x_tau_1, ...,
x_tau_K), plus the history segment on [-tau_max, 0].  Spatial and delayed
Jacobians of the g_j may be registered analytically; central finite
differences are the fallback.

Problems are immutable and their coefficient callables must be pure, so
Monte Carlo trials can evaluate them concurrently.
"""

import math
from dataclasses import dataclass

import numpy as np

from .mesh import DelaySet

__all__ = [
    "SddeProblem",
    "f_tilde",
    "jacobian_x",
    "jacobian_delay",
    "builtin",
    "list_problems",
]

_FD_STEP = float(np.finfo(float).eps) ** (1.0 / 3.0)


@dataclass(frozen=True)
class SddeProblem:
    name: str
    d: int
    m: int
    A: tuple
    f: callable
    g: tuple
    history: callable
    delays: DelaySet
    jac_x_g: tuple = None
    jac_delay_g: tuple = None

    @property
    def K(self):
        return len(self.delays)

    @property
    def terminal_time(self):
        return self.delays.terminal_time

    def history_clamped(self, t):
        """History value with t clamped to the segment [-tau_max, 0]."""
        return self.history(min(0.0, max(t, -self.delays.max_delay)))


def f_tilde(problem, t, x, x_delays):
    """Drift with the linear-diffusion interaction removed:
    f(args) - sum_j A_j g_j(args)."""
    out = problem.f(t, x, x_delays)
    for a, g in zip(problem.A[1:], problem.g):
        out = out - a @ g(t, x, x_delays)
    if not np.all(np.isfinite(out)):
        raise ValueError("non-finite coefficient output in f_tilde")
    return out


def _fd_jacobian(func, t, x, x_delays, which, d):
    """Central finite differences in the state argument selected by
    ``which`` (-1 for x, else the delayed argument index)."""
    base = np.asarray(x if which < 0 else x_delays[which], dtype=float)
    jac = np.empty((d, d))
    for col in range(d):
        step = _FD_STEP * max(1.0, abs(base[col]))
        hi = base.copy()
        lo = base.copy()
        hi[col] += step
        lo[col] -= step
        if which < 0:
            f_hi = func(t, hi, x_delays)
            f_lo = func(t, lo, x_delays)
        else:
            args_hi = tuple(hi if i == which else v for i, v in enumerate(x_delays))
            args_lo = tuple(lo if i == which else v for i, v in enumerate(x_delays))
            f_hi = func(t, x, args_hi)
            f_lo = func(t, x, args_lo)
        jac[:, col] = (f_hi - f_lo) / (2.0 * step)
    return jac


def jacobian_x(problem, j, t, x, x_delays):
    """Jacobian of g_j in the present state (j is 0-based)."""
    if problem.jac_x_g is not None and problem.jac_x_g[j] is not None:
        return problem.jac_x_g[j](t, x, x_delays)
    return _fd_jacobian(problem.g[j], t, x, x_delays, -1, problem.d)


def jacobian_delay(problem, j, k, t, x, x_delays):
    """Jacobian of g_j in the k-th delayed state (j, k are 0-based)."""
    if problem.jac_delay_g is not None and problem.jac_delay_g[j][k] is not None:
        return problem.jac_delay_g[j][k](t, x, x_delays)
    return _fd_jacobian(problem.g[j], t, x, x_delays, k, problem.d)


# ---------------------------------------------------------------------------
# built-in problems

def _example1_history(t):
    return np.array([
        (4.0 + t * t * math.sin(3.0 * math.pi * t)) / 5.0,
        (1.0 + t * t * math.cos(2.0 * math.pi * t)) / 5.0,
    ])


def _example1_f(t, x, x_delays):
    return np.array([math.sin(x[0]) / 5.0, math.cos(x[1]) / 5.0])


def _example1_g1(t, x, x_delays):
    y, z = x_delays[0], x_delays[1]
    return np.array([(z[0] - y[0]) / 3.0, (y[1] - z[1]) / 3.0])


def _example1_g2(t, x, x_delays):
    y, z = x_delays[0], x_delays[1]
    return np.array([
        (math.exp(-x[1] ** 2) + math.exp(-y[0] ** 2) + math.exp(-y[1] ** 2)) / 10.0,
        (math.exp(-x[0] ** 2) + math.exp(-z[0] ** 2) + math.exp(-z[1] ** 2)) / 10.0,
    ])


def _zero_jac(t, x, x_delays):
    return np.zeros((2, 2))


def _example1_jac_x_g2(t, x, x_delays):
    return np.array([
        [0.0, -0.2 * x[1] * math.exp(-x[1] ** 2)],
        [-0.2 * x[0] * math.exp(-x[0] ** 2), 0.0],
    ])


def _example1_jac_g1_tau1(t, x, x_delays):
    return np.array([[-1.0 / 3.0, 0.0], [0.0, 1.0 / 3.0]])


def _example1_jac_g1_tau2(t, x, x_delays):
    return np.array([[1.0 / 3.0, 0.0], [0.0, -1.0 / 3.0]])


def _example1_jac_g2_tau1(t, x, x_delays):
    y = x_delays[0]
    return np.array([
        [-0.2 * y[0] * math.exp(-y[0] ** 2), -0.2 * y[1] * math.exp(-y[1] ** 2)],
        [0.0, 0.0],
    ])


def _example1_jac_g2_tau2(t, x, x_delays):
    z = x_delays[1]
    return np.array([
        [0.0, 0.0],
        [-0.2 * z[0] * math.exp(-z[0] ** 2), -0.2 * z[1] * math.exp(-z[1] ** 2)],
    ])


def _make_example1(delays, terminal_time):
    delay_set = DelaySet.create(delays, terminal_time)
    if len(delay_set) != 2:
        raise ValueError("example1 uses exactly two delays")
    return SddeProblem(
        name="example1",
        d=2,
        m=2,
        A=(
            np.array([[-0.1, 0.03], [-0.2, -0.04]]),
            np.array([[0.05, 0.04], [0.02, 0.03]]),
            np.array([[0.05, 0.03], [0.04, 0.01]]),
        ),
        f=_example1_f,
        g=(_example1_g1, _example1_g2),
        history=_example1_history,
        delays=delay_set,
        jac_x_g=(_zero_jac, _example1_jac_x_g2),
        jac_delay_g=(
            (_example1_jac_g1_tau1, _example1_jac_g1_tau2),
            (_example1_jac_g2_tau1, _example1_jac_g2_tau2),
        ),
    )


def _zero_coeff(t, x, x_delays):
    return np.zeros(2)


def _zero_history(t):
    return np.array([1.0, -0.5])


def _make_zero(delays, terminal_time):
    delay_set = DelaySet.create(delays, terminal_time)
    zero_mat = np.zeros((2, 2))
    k = len(delay_set)
    return SddeProblem(
        name="zero",
        d=2,
        m=2,
        A=(zero_mat, zero_mat, zero_mat),
        f=_zero_coeff,
        g=(_zero_coeff, _zero_coeff),
        history=_zero_history,
        delays=delay_set,
        jac_x_g=(_zero_jac, _zero_jac),
        jac_delay_g=tuple(
            tuple(_zero_jac for _ in range(k)) for _ in range(2)
        ),
    )


def _ones_history(t):
    return np.array([1.0, 1.0])


def _make_linear_decoupled(delays, terminal_time):
    delay_set = DelaySet.create(delays, terminal_time)
    k = len(delay_set)
    return SddeProblem(
        name="linear-decoupled",
        d=2,
        m=2,
        A=(
            np.diag([-0.5, 0.3]),
            np.diag([0.2, -0.1]),
            np.diag([0.1, 0.05]),
        ),
        f=_zero_coeff,
        g=(_zero_coeff, _zero_coeff),
        history=_ones_history,
        delays=delay_set,
        jac_x_g=(_zero_jac, _zero_jac),
        jac_delay_g=tuple(
            tuple(_zero_jac for _ in range(k)) for _ in range(2)
        ),
    )


_REGISTRY = {
    "example1": (_make_example1, (1.0, 0.5), 4.0),
    "zero": (_make_zero, (1.0, 0.5), 4.0),
    "linear-decoupled": (_make_linear_decoupled, (1.0, 0.5), 4.0),
}


def list_problems():
    return sorted(_REGISTRY)


def builtin(name, delays=None, terminal_time=None):
    """Named problem from the registry, with optional delay/terminal-time
    overrides."""
    if name not in _REGISTRY:
        known = ", ".join(list_problems())
        raise ValueError(f"unknown problem {name!r}; registered problems: {known}")
    factory, default_delays, default_t = _REGISTRY[name]
    return factory(
        delays if delays is not None else default_delays,
        terminal_time if terminal_time is not None else default_t,
    )
