"""Dense real matrix helpers used by the exponential (Magnus-type) schemes.

Everything here operates on small square matrices (the solver state
dimension is tiny in all shipped problems), so plain dense numpy kernels
are used throughout.
"""

import numpy as np

__all__ = ["commutator", "mat_exp"]

# Pade-13 numerator coefficients for the matrix exponential
# (denominator shares them with alternating signs).
_PADE13 = (
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
)
_PADE13_THETA = 5.371920351148152


def _as_square(a, name):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {a.shape}")
    return a


def commutator(a, b):
    """Lie bracket AB - BA of two square matrices of equal dimension."""
    a = _as_square(a, "a")
    b = _as_square(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a @ b - b @ a


def mat_exp(a):
    """Matrix exponential by scaling-and-squaring with a Pade-13 core.

    Accurate to machine-level relative error in the moderate-norm regime
    produced by one scheme step (step size below the smallest delay keeps
    the exponent norm small).
    """
    a = _as_square(a, "a")
    if not np.all(np.isfinite(a)):
        raise ValueError("mat_exp requires finite entries")
    d = a.shape[0]
    eye = np.eye(d)

    norm = np.linalg.norm(a, 1)
    if norm == 0.0:
        return eye.copy()
    squarings = max(0, int(np.ceil(np.log2(norm / _PADE13_THETA))))
    scaled = a / (2.0**squarings)

    b = _PADE13
    a2 = scaled @ scaled
    a4 = a2 @ a2
    a6 = a2 @ a4
    u = scaled @ (
        a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2)
        + b[7] * a6
        + b[5] * a4
        + b[3] * a2
        + b[1] * eye
    )
    v = (
        a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2)
        + b[6] * a6
        + b[4] * a4
        + b[2] * a2
        + b[0] * eye
    )
    result = np.linalg.solve(v - u, v + u)
    for _ in range(squarings):
        result = result @ result
    return result
