"""Sparse matrices and saddle point solves for the interior-point engine."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg

logger = logging.getLogger("wgf.jko")

SparseMatrix = sps.csr_matrix

PIVOT_RATIO = 1e-13
RESIDUAL_TARGET = 1e-10
SHIFT_GROWTH = 100.0
MAX_ESCALATIONS = 2


class DimensionError(ValueError):
    """An exception when operands of a linear algebra routine do not fit.

    Parameters
    ----------
    operation
        Name of the routine.
    expected
        Expected length or shape.
    got
        Actual length or shape.
    """

    def __init__(self, operation: str, expected, got):
        super().__init__(operation, expected, got)
        self.operation = operation
        self.expected = expected
        self.got = got

    def __str__(self):
        return f"{self.operation}: expected {self.expected}, got {self.got}"


class KKTSolveError(Exception):
    """An exception when a saddle point system cannot be factorized.

    Parameters
    ----------
    shift
        The last diagonal shift tried.
    reason
        What went wrong with the last attempt.
    """

    def __init__(self, shift: float, reason: str):
        super().__init__(shift, reason)
        self.shift = shift
        self.reason = reason

    def __str__(self):
        return f"KKT factorization failed with diagonal shift {self.shift:g}: {self.reason}"


def as_sparse(matrix) -> SparseMatrix:
    """Return ``matrix`` in compressed row storage with sorted indices."""
    out = sps.csr_matrix(matrix)
    if not out.has_sorted_indices:
        out = out.sorted_indices()
    return out


def matvec(msp: SparseMatrix, x: np.ndarray) -> np.ndarray:
    """Product ``msp @ x``.

    Raises
    ------
    DimensionError
        If ``x`` does not have one entry per column.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size != msp.shape[1]:
        raise DimensionError("matvec", msp.shape[1], x.shape)
    return np.asarray(msp @ x).ravel()


@dataclass
class KKTFactorization:
    """LU factors of ``[H + d I, A^T; A, -d I]`` for repeated solves.

    Parameters
    ----------
    matrix
        The assembled saddle point matrix.
    lu
        SuperLU factors of ``matrix``.
    n
        Size of the primal block.
    shift
        The diagonal shift ``d`` that was finally used.
    """

    matrix: sps.csc_matrix
    lu: scipy.sparse.linalg.SuperLU
    n: int
    shift: float

    @property
    def m(self) -> int:
        return self.matrix.shape[0] - self.n

    def solve(self, r1: np.ndarray, r2: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Solve for the primal and dual parts given both right hand sides."""
        r1 = np.asarray(r1, dtype=float)
        r2 = np.zeros(self.m) if r2 is None else np.asarray(r2, dtype=float)
        if r1.size != self.n:
            raise DimensionError("kkt_solve", self.n, r1.size)
        if r2.size != self.m:
            raise DimensionError("kkt_solve", self.m, r2.size)
        rhs = np.concatenate([r1, r2])
        sol = self.lu.solve(rhs)
        if not np.all(np.isfinite(sol)):
            raise KKTSolveError(self.shift, "solution is not finite")
        scale = np.linalg.norm(rhs)
        if scale > 0:
            residual = np.linalg.norm(self.matrix @ sol - rhs) / scale
            if residual > RESIDUAL_TARGET:
                logger.warning(
                    "KKT solve residual %.3g exceeds %.0e (shift %g)", residual, RESIDUAL_TARGET, self.shift
                )
        return sol[: self.n], sol[self.n :]


def _assemble(H: SparseMatrix, A: SparseMatrix, shift: float) -> sps.csc_matrix:
    n = H.shape[0]
    top_left = H + shift * sps.identity(n, format="csr")
    if A.shape[0] == 0:
        return sps.csc_matrix(top_left)
    m = A.shape[0]
    return sps.bmat([[top_left, A.T], [A, -shift * sps.identity(m)]], format="csc")


def kkt_factorize(H: SparseMatrix, A: SparseMatrix, diag_shift: float = 1e-12) -> KKTFactorization:
    """Factorize the quasi-definite saddle point matrix.

    The ordering is fixed (minimum degree on ``K^T + K``) so repeated calls
    with the same inputs are bit-identical. When SuperLU reports a singular
    matrix or the smallest pivot is below ``1e-13`` times the largest, the
    shift is multiplied by 100, at most twice; if the last attempt still
    fails the check, `KKTSolveError` is raised.

    Raises
    ------
    DimensionError
        If ``H`` is not square or ``A`` has a different column count.
    KKTSolveError
        If the matrix is singular or its pivot ratio stays below ``1e-13``
        after the escalations.
    """
    H = as_sparse(H)
    A = as_sparse(A)
    n = H.shape[0]
    if H.shape != (n, n):
        raise DimensionError("kkt_factorize", "square H", H.shape)
    if A.shape[1] != n:
        raise DimensionError("kkt_factorize", f"A with {n} columns", A.shape)

    shift = diag_shift
    reason = ""
    for attempt in range(MAX_ESCALATIONS + 1):
        matrix = _assemble(H, A, shift)
        try:
            lu = scipy.sparse.linalg.splu(
                matrix, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.1, options={"SymmetricMode": True}
            )
        except RuntimeError as exc:
            reason = str(exc)
        else:
            pivots = np.abs(lu.U.diagonal())
            if not np.all(np.isfinite(pivots)) or pivots.min() == 0.0:
                reason = "zero pivot"
            elif pivots.min() >= PIVOT_RATIO * pivots.max():
                return KKTFactorization(matrix, lu, n, shift)
            else:
                reason = f"pivot ratio {pivots.min() / pivots.max():.3g}"
        if attempt < MAX_ESCALATIONS:
            logger.debug("KKT factorization with shift %g: %s; escalating", shift, reason)
            shift *= SHIFT_GROWTH
    raise KKTSolveError(shift, reason)


def kkt_solve(
    H: SparseMatrix,
    A: SparseMatrix,
    r1: np.ndarray,
    r2: np.ndarray,
    diag_shift: float = 1e-12,
) -> tuple[np.ndarray, np.ndarray]:
    """Solve ``[H + d I, A^T; A, -d I] (dx, dy) = (r1, r2)`` once."""
    return kkt_factorize(H, A, diag_shift).solve(r1, r2)
