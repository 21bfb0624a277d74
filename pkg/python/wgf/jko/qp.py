"""Primal-dual interior-point solver for the SQP subproblems.

The problem is::

    min_z  1/2 (z - u)^T H (z - u) + g^T (z - u)
    s.t.   A z = b,   z[I] >= l

with multipliers ``y`` for the equalities and ``s >= 0`` for the bounds.
Stationarity and complementarity are measured against the size of the dual
quantities, so scaling ``H`` and ``g`` by a positive factor scales ``y``
and ``s`` by the same factor and leaves the iterates ``z`` unchanged.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps

from .linalg import DimensionError, as_sparse, kkt_factorize, kkt_solve

logger = logging.getLogger("wgf.jko")

FRACTION_TO_BOUNDARY = 0.995
MAX_HALVINGS = 30


class QPInfeasibleError(Exception):
    """An exception when the equality constraints cannot be satisfied.

    Parameters
    ----------
    residual
        ``max |A z - b|`` of the least-squares projection.
    tolerance
        The residual that would have been accepted.
    """

    def __init__(self, residual: float, tolerance: float):
        super().__init__(residual, tolerance)
        self.residual = residual
        self.tolerance = tolerance

    def __str__(self):
        return f"equality constraints are inconsistent: residual {self.residual:.3g} > {self.tolerance:.3g}"


@dataclass(frozen=True, eq=False)
class QPProblem:
    """Quadratic model around ``center`` with linear constraints.

    Parameters
    ----------
    H
        Symmetric positive semidefinite model Hessian.
    g
        Model gradient at ``center``.
    A, b
        Equality constraints ``A z = b``; ``A`` may be ``None`` or have zero
        rows.
    nonneg
        Indices of ``z`` with a lower bound.
    center
        Expansion point ``u``; zero when omitted.
    lower
        Lower bounds of ``z[nonneg]``; zero when omitted.
    """

    H: sps.csr_matrix
    g: np.ndarray
    A: sps.csr_matrix | None
    b: np.ndarray
    nonneg: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    center: np.ndarray | None = None
    lower: np.ndarray | None = None

    def __post_init__(self):
        H = as_sparse(self.H)
        n = H.shape[0]
        if H.shape != (n, n):
            raise DimensionError("QPProblem", "square H", H.shape)
        A = as_sparse(self.A) if self.A is not None else sps.csr_matrix((0, n))
        if A.shape[1] != n:
            raise DimensionError("QPProblem", f"A with {n} columns", A.shape)
        g = np.asarray(self.g, dtype=float).ravel()
        b = np.asarray(self.b, dtype=float).ravel()
        if g.size != n:
            raise DimensionError("QPProblem", n, g.size)
        if b.size != A.shape[0]:
            raise DimensionError("QPProblem", A.shape[0], b.size)
        nonneg = np.asarray(self.nonneg, dtype=int).ravel()
        if nonneg.size and (nonneg.min() < 0 or nonneg.max() >= n):
            raise DimensionError("QPProblem", f"indices below {n}", (nonneg.min(), nonneg.max()))
        center = np.zeros(n) if self.center is None else np.asarray(self.center, dtype=float).ravel()
        if center.size != n:
            raise DimensionError("QPProblem", n, center.size)
        lower = np.zeros(nonneg.size) if self.lower is None else np.asarray(self.lower, dtype=float).ravel()
        if lower.size != nonneg.size:
            raise DimensionError("QPProblem", nonneg.size, lower.size)
        values = {"H": H, "A": A, "g": g, "b": b, "nonneg": nonneg, "center": center, "lower": lower}
        for name, value in values.items():
            object.__setattr__(self, name, value)

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def linear_term(self) -> np.ndarray:
        """``c`` in the expanded objective ``1/2 z^T H z + c^T z``."""
        return self.g - self.H @ self.center

    def objective(self, z: np.ndarray) -> float:
        d = z - self.center
        return float(0.5 * d @ (self.H @ d) + self.g @ d)

    def scaled(self, factor: float) -> QPProblem:
        """Same constraints with ``H`` and ``g`` multiplied by ``factor``."""
        return QPProblem(
            factor * self.H, factor * self.g, self.A, self.b, self.nonneg, self.center, self.lower
        )


@dataclass
class QPResult:
    """Outcome of `solve_qp`.

    ``kkt_residuals`` holds the relative stationarity and primal residuals
    and the relative complementarity of the returned iterate;
    ``barrier_history`` the unscaled ``mu`` of every iterate.
    """

    z: np.ndarray
    dual_eq: np.ndarray
    dual_bound: np.ndarray
    iterations: int
    kkt_residuals: tuple[float, float, float]
    converged: bool
    barrier_history: list[float] = field(default_factory=list)


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    shrinking = dv < 0
    if not np.any(shrinking):
        return np.inf
    return float(np.min(-v[shrinking] / dv[shrinking]))


def _residuals(q: QPProblem, c: np.ndarray, z, y, s):
    rd = q.H @ z + c - q.A.T @ y
    rd[q.nonneg] -= s
    rp = q.A @ z - q.b
    return rd, rp


def _dual_scale(q: QPProblem, c: np.ndarray, z, y, s) -> float:
    """Largest term of the stationarity residual; scales with ``(H, g)``."""
    scale = max(float(np.abs(v).max(initial=0.0)) for v in (c, q.H @ z, q.A.T @ y, s))
    return scale if scale > 0 else 1.0


def _equality_qp(q: QPProblem, c: np.ndarray, diag_shift: float) -> QPResult:
    dz, w = kkt_solve(q.H, q.A, -c, q.b, diag_shift)
    rd, rp = _residuals(q, c, dz, -w, np.zeros(0))
    scores = (
        float(np.abs(rd).max(initial=0.0) / _dual_scale(q, c, dz, -w, np.zeros(0))),
        float(np.abs(rp).max(initial=0.0) / (1 + np.abs(q.b).max(initial=0.0))),
        0.0,
    )
    return QPResult(dz, -w, np.zeros(0), 1, scores, True)


def solve_qp(q: QPProblem, tol: float = 1e-9, max_iter: int = 100, diag_shift: float = 1e-12) -> QPResult:
    """Mehrotra predictor-corrector interior-point method.

    Each iteration factorizes the reduced system
    ``[H + S^T X^-1 Z S, A^T; A, 0]`` once and solves it for the affine and
    the corrected directions. A common step length, 0.995 of the distance to
    the boundary, is used for primal and dual variables. If the corrected
    step would increase the barrier parameter the centered direction is
    taken instead and its step halved until it does not.

    Parameters
    ----------
    q
        The problem.
    tol
        Target for the relative stationarity and primal residuals and for
        the barrier parameter relative to the dual scale.
    max_iter
        Iteration limit; the last iterate is returned with
        ``converged=False`` when it is reached.
    diag_shift
        Regularization passed to the KKT factorization.

    Raises
    ------
    QPInfeasibleError
        If the least-squares projection onto ``A z = b`` leaves a residual.
    """
    c = q.linear_term
    if q.nonneg.size == 0:
        return _equality_qp(q, c, diag_shift)

    n_b = q.nonneg.size
    b_scale = 1.0 + np.abs(q.b).max(initial=0.0)

    if q.A.shape[0]:
        z, _ = kkt_solve(sps.identity(q.n, format="csr"), q.A, q.center, q.b, diag_shift)
        projection_residual = float(np.abs(q.A @ z - q.b).max())
        if projection_residual > 1e-8 * b_scale:
            raise QPInfeasibleError(projection_residual, 1e-8 * b_scale)
    else:
        z = q.center.copy()
    z[q.nonneg] = np.maximum(z[q.nonneg], q.lower + 1.0)
    y = np.zeros(q.A.shape[0])
    s = np.full(n_b, _dual_scale(q, c, z, y, np.zeros(0)))
    mu = float((z[q.nonneg] - q.lower) @ s / n_b)
    history = [mu]

    iteration = 0
    while True:
        rd, rp = _residuals(q, c, z, y, s)
        scale = _dual_scale(q, c, z, y, s)
        scores = (
            float(np.abs(rd).max() / scale),
            float(np.abs(rp).max(initial=0.0) / b_scale),
            mu / scale,
        )
        if max(scores) <= tol:
            logger.debug("QP converged in %d iterations, residuals %s", iteration, scores)
            return QPResult(z, y, s, iteration, scores, True, history)
        if iteration >= max_iter:
            logger.debug("QP stopped after %d iterations, residuals %s", iteration, scores)
            return QPResult(z, y, s, iteration, scores, False, history)
        iteration += 1

        x = z[q.nonneg] - q.lower
        barrier = np.zeros(q.n)
        barrier[q.nonneg] = s / x
        factors = kkt_factorize(q.H + sps.diags(barrier, format="csr"), q.A, diag_shift)

        def direction(rxs):
            r1 = -rd
            r1[q.nonneg] += rxs / x
            dz, w = factors.solve(r1, -rp)
            ds = (rxs - s * dz[q.nonneg]) / x
            return dz, -w, ds

        dz_a, dy_a, ds_a = direction(-x * s)
        alpha_p = min(1.0, _max_step(x, dz_a[q.nonneg]))
        alpha_d = min(1.0, _max_step(s, ds_a))
        mu_aff = float((x + alpha_p * dz_a[q.nonneg]) @ (s + alpha_d * ds_a) / n_b)
        sigma = min(1.0, mu_aff / mu) ** 3

        dz, dy, ds = direction(sigma * mu - x * s - dz_a[q.nonneg] * ds_a)
        alpha = min(
            1.0,
            FRACTION_TO_BOUNDARY * _max_step(x, dz[q.nonneg]),
            FRACTION_TO_BOUNDARY * _max_step(s, ds),
        )
        mu_new = float((x + alpha * dz[q.nonneg]) @ (s + alpha * ds) / n_b)
        if mu_new > mu:
            sigma = min(sigma, 0.5)
            dz, dy, ds = direction(sigma * mu - x * s)
            alpha = min(
                1.0,
                FRACTION_TO_BOUNDARY * _max_step(x, dz[q.nonneg]),
                FRACTION_TO_BOUNDARY * _max_step(s, ds),
            )
            for _ in range(MAX_HALVINGS):
                mu_new = float((x + alpha * dz[q.nonneg]) @ (s + alpha * ds) / n_b)
                if mu_new <= mu:
                    break
                alpha *= 0.5

        z = z + alpha * dz
        y = y + alpha * dy
        s = s + alpha * ds
        mu = float((z[q.nonneg] - q.lower) @ s / n_b)
        history.append(mu)
        logger.debug(
            "QP iteration %d: step %.3g, sigma %.3g, mu %.3g, stationarity %.3g, primal %.3g",
            iteration,
            alpha,
            sigma,
            mu,
            scores[0],
            scores[1],
        )
