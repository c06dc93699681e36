"""Dense LU with a condition estimate, shared by the solvers.

LAPACK calls are serialized by a process-wide lock: concurrent triangular
solves against one shared factorization corrupt the heap with the bundled
OpenBLAS build, and the calls are short compared with the work around them.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

from .errors import SolverError

RCOND_FLOOR = 1e-14
_LAPACK_LOCK = threading.Lock()


@dataclass(frozen=True, eq=False)
class Factorization:
    """LU factors of a square matrix together with its 1-norm condition estimate."""

    matrix: np.ndarray
    lu: np.ndarray
    piv: np.ndarray
    condition: float

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        with _LAPACK_LOCK:
            return sla.lu_solve((self.lu, self.piv), rhs, check_finite=False)


def factorize(matrix: np.ndarray, what: str = "matrix") -> Factorization:
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise SolverError(f"{what} must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise SolverError(f"{what} contains non-finite entries")
    with _LAPACK_LOCK:
        lu, piv, info = lapack.dgetrf(A)
    if info > 0:
        raise SolverError(f"{what} is exactly singular (zero pivot {info})", float("inf"))
    anorm = np.abs(A).sum(axis=0).max()
    with _LAPACK_LOCK:
        rcond, _ = lapack.dgecon(lu, anorm, norm="1")
    cond = float("inf") if rcond == 0 else 1.0 / rcond
    if rcond < RCOND_FLOOR:
        raise SolverError(f"{what} is numerically singular", cond)
    A.setflags(write=False)
    return Factorization(A, lu, piv, cond)
