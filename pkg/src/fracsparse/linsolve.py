"""Conjugate gradients with Jacobi preconditioning for the reduced systems.

The linear-solver tolerance must sit far below the discretization error of
any rate study, so the defaults are tight (1e-10 relative) and generous in
iterations.  A dense elimination fallback doubles as the test oracle for
small systems.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError, NumericalBreakdownError

__all__ = ["SolveReport", "cg_solve", "dense_solve"]

DENSE_ORACLE_LIMIT = 2000


@dataclass
class SolveReport:
    iterations: int
    final_residual: float
    converged: bool
    residual_history: list = field(default_factory=list, repr=False)


def cg_solve(A, b, tol=1e-10, max_iter=None, x0=None, callback=None):
    """Preconditioned conjugate gradients for a symmetric positive definite A.

    Stops when the relative residual ||b - Ax|| / ||b|| drops below tol;
    returns (x, report) with converged=False if the iteration cap is hit.
    The optional callback receives each iterate (for convergence studies).
    """
    if tol <= 0:
        raise InvalidParameterError("solver tolerance must be positive")
    b = np.asarray(b, dtype=float)
    n = b.size
    if max_iter is None:
        max_iter = 10 * n

    norm_b = np.linalg.norm(b)
    if norm_b == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, True, [0.0])

    diag = A.diagonal()
    if np.any(diag <= 0) or not np.all(np.isfinite(diag)):
        raise NumericalBreakdownError("matrix diagonal is not positive and finite")
    inv_diag = 1.0 / diag

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    r = b - A.matvec(x)
    z = inv_diag * r
    p = z.copy()
    rz = float(np.dot(r, z))
    res = float(np.linalg.norm(r) / norm_b)
    history = [res]

    iterations = 0
    while res > tol and iterations < max_iter:
        Ap = A.matvec(p)
        pAp = float(np.dot(p, Ap))
        if not np.isfinite(pAp) or pAp <= 0.0:
            raise NumericalBreakdownError(
                f"conjugate gradients broke down (p'Ap = {pAp})"
            )
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = inv_diag * r
        rz_new = float(np.dot(r, z))
        if not np.isfinite(rz_new):
            raise NumericalBreakdownError("non-finite residual inside CG")
        p = z + (rz_new / rz) * p
        rz = rz_new
        iterations += 1
        res = float(np.linalg.norm(r) / norm_b)
        history.append(res)
        if callback is not None:
            callback(x.copy())

    return x, SolveReport(iterations, res, res <= tol, history)


def dense_solve(A, b):
    """Dense Gaussian-elimination fallback; the oracle for small systems."""
    n = np.asarray(b).size
    if n > DENSE_ORACLE_LIMIT:
        raise InvalidParameterError(
            f"dense fallback limited to {DENSE_ORACLE_LIMIT} unknowns, got {n}"
        )
    return np.linalg.solve(A.to_dense(), np.asarray(b, dtype=float))
