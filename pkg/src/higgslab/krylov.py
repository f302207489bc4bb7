"""Conjugate-gradient least squares (CGNR) on array-valued linear maps.

Used for the harmonic projections and the deformation PDE.  Starting from the
zero vector keeps the iterates in range(A^H), so the returned least-squares
solution carries no component in ker(A) up to roundoff.

``dot_domain`` / ``dot_range`` let the solve run in a weighted inner product;
``apply_ah`` must then be the adjoint with respect to those products and any
preconditioner must be self-adjoint positive in the domain product.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = ["CgResult", "cgnr"]


def _vdot(a: np.ndarray, b: np.ndarray) -> complex:
    return complex(np.vdot(a, b))


@dataclass
class CgResult:
    x: np.ndarray
    converged: bool
    iterations: int
    normal_residual: float  # relative to the initial normal residual
    residual: float
    normal_abs: float = 0.0
    trace: list = field(default_factory=list)


def cgnr(
    apply_a: Callable[[np.ndarray], np.ndarray],
    apply_ah: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    tol: float = 1e-12,
    max_iter: int = 2000,
    precond: Callable[[np.ndarray], np.ndarray] | None = None,
    dot_domain: Callable[[np.ndarray, np.ndarray], complex] | None = None,
    dot_range: Callable[[np.ndarray, np.ndarray], complex] | None = None,
    atol: float = 0.0,
) -> CgResult:
    """Minimize ||A x - b|| by preconditioned CG on A^H A x = A^H b.

    Stops when the normal residual drops below max(tol * initial, atol).
    """
    dot_d = dot_domain or _vdot
    dot_r = dot_range or _vdot
    r = b.copy()  # b - A x
    g = apply_ah(r)  # normal-equation residual
    x = np.zeros_like(g)  # domain-shaped
    g0 = np.sqrt(dot_d(g, g).real)
    if g0 <= atol:
        return CgResult(x, True, 0, 0.0, float(np.sqrt(dot_r(r, r).real)), g0)
    z = precond(g) if precond is not None else g
    p = z.copy()
    gz = dot_d(g, z).real
    trace = []
    for it in range(1, max_iter + 1):
        ap = apply_a(p)
        denom = dot_r(ap, ap).real
        if denom <= 0:
            break
        alpha = gz / denom
        x = x + alpha * p
        r = r - alpha * ap
        g = apply_ah(r)
        gn = np.sqrt(dot_d(g, g).real)
        trace.append(gn)
        if gn <= max(tol * g0, atol):
            return CgResult(x, True, it, gn / g0, float(np.sqrt(dot_r(r, r).real)), gn, trace)
        z = precond(g) if precond is not None else g
        gz_new = dot_d(g, z).real
        beta = gz_new / gz
        gz = gz_new
        p = z + beta * p
    gn = np.sqrt(dot_d(g, g).real)
    return CgResult(x, False, max_iter, gn / g0, float(np.sqrt(dot_r(r, r).real)), gn, trace)
