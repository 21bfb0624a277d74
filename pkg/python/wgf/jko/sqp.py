"""Sequential quadratic programming for a single JKO step."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps

from .grid import DensityField, FluxField
from .linalg import KKTSolveError
from .objective import (
    JKOStepProblem,
    StateVector,
    build_constraints,
    objective_gradient,
    objective_hessian,
    objective_value,
)
from .qp import QPInfeasibleError, QPProblem, solve_qp

logger = logging.getLogger("wgf.jko")


class StepAbortedError(Exception):
    """An exception when a JKO step cannot be completed.

    Parameters
    ----------
    reason
        Why the step was given up.
    inner_iteration
        The SQP iteration that failed.
    step_index
        Index of the outer step; filled in by the time loop.
    """

    def __init__(self, reason: str, inner_iteration: int, step_index: int | None = None):
        super().__init__(reason, inner_iteration, step_index)
        self.reason = reason
        self.inner_iteration = inner_iteration
        self.step_index = step_index

    def __str__(self):
        where = f"inner iteration {self.inner_iteration}"
        if self.step_index is not None:
            where = f"step {self.step_index}, {where}"
        return f"{where}: {self.reason}"


@dataclass(frozen=True)
class LineSearch:
    """Backtracking on the step objective.

    The first SQP iteration always takes the full step when
    ``full_step_first`` is set; later ones shrink ``t`` by ``shrink`` until
    the Armijo condition with constant ``armijo_c`` holds.
    """

    full_step_first: bool = True
    shrink: float = 0.5
    armijo_c: float = 1e-4
    max_halvings: int = 30

    def __post_init__(self):
        if not 0 < self.shrink < 1:
            raise ValueError(f"shrink must lie in (0, 1), got {self.shrink}")
        if not 0 < self.armijo_c < 1:
            raise ValueError(f"armijo_c must lie in (0, 1), got {self.armijo_c}")


@dataclass(frozen=True)
class SqpParams:
    """Controls of the inner iteration.

    Parameters
    ----------
    tol_rel
        Stop when the relative change of the objective drops below this.
    max_inner
        Iteration limit; the last iterate is returned flagged unconverged.
    line_search
        Step size selection.
    qp_tol
        Tolerance handed to the interior-point solver.
    qp_max_iter
        Iteration limit of the interior-point solver.
    warm_start_floor
        Extrapolated densities below this value fall back to the current
        density.
    hessian_refresh
        Rebuild the Hessian every this many iterations; 1 is Newton.
    record_iterates
        Keep every iterate in `StepResult.iterates`.
    max_shift_retries
        How often an unconverged QP is retried with a larger diagonal shift.
    """

    tol_rel: float = 1e-6
    max_inner: int = 100
    line_search: LineSearch = field(default_factory=LineSearch)
    qp_tol: float = 1e-9
    qp_max_iter: int = 100
    warm_start_floor: float = 1e-6
    hessian_refresh: int = 1
    record_iterates: bool = False
    max_shift_retries: int = 2

    def __post_init__(self):
        if not self.tol_rel > 0:
            raise ValueError(f"tol_rel must be positive, got {self.tol_rel}")
        if self.max_inner < 1:
            raise ValueError(f"max_inner must be positive, got {self.max_inner}")
        if self.hessian_refresh < 1:
            raise ValueError(f"hessian_refresh must be positive, got {self.hessian_refresh}")


@dataclass
class InnerIterate:
    """One accepted SQP iteration."""

    objective: float
    step: float
    qp_iterations: int
    relative_change: float


@dataclass
class StepResult:
    """Outcome of `sqp_step`."""

    rho_next: DensityField
    m_next: FluxField
    u: np.ndarray
    inner_iterations: int
    qp_iterations: int
    final_objective: float
    converged: bool
    trace: list[InnerIterate] = field(default_factory=list)
    iterates: list[np.ndarray] = field(default_factory=list)


def warm_start(
    rho_k: DensityField,
    rho_km1: DensityField | None = None,
    m_prev: FluxField | None = None,
    floor: float = 1e-6,
) -> StateVector:
    """Initial iterate of a step.

    The density is extrapolated linearly in time, ``2 rho_k - rho_km1``,
    except in cells where that falls below ``floor``, which keep ``rho_k``.
    The momentum is the previous step's, or zero on the first step.
    """
    grid = rho_k.grid
    rho0 = rho_k.values.copy()
    if rho_km1 is not None:
        extrapolated = 2.0 * rho_k.values - rho_km1.values
        keep = extrapolated >= floor
        rho0[keep] = extrapolated[keep]
    m0 = m_prev.interior() if m_prev is not None else np.zeros(grid.n_interior_faces)
    return StateVector(grid, np.concatenate([rho0, m0]))


def _solve_subproblem(H, g, u, constraints, params: SqpParams, inner: int):
    nonneg = constraints.nonneg_index_set
    residual = constraints.b - constraints.A @ u
    shift = 0.0
    scale = 1.0 + float(np.abs(H.diagonal()).max())
    for attempt in range(params.max_shift_retries + 1):
        H_try = H + shift * sps.identity(H.shape[0], format="csr") if shift else H
        q = QPProblem(H_try, g, constraints.A, residual, nonneg, lower=-u[nonneg])
        try:
            result = solve_qp(q, tol=params.qp_tol, max_iter=params.qp_max_iter)
        except QPInfeasibleError as exc:
            raise StepAbortedError(str(exc), inner) from exc
        except KKTSolveError as exc:
            residuals = str(exc)
        else:
            if result.converged:
                return result
            residuals = result.kkt_residuals
        shift = 1e-8 * scale if shift == 0.0 else shift * 100.0
        if attempt < params.max_shift_retries:
            logger.warning(
                "QP did not converge at inner iteration %d (residuals %s); retrying with shift %.3g",
                inner,
                residuals,
                shift,
            )
    raise StepAbortedError("QP did not converge after shift escalation", inner)


def sqp_step(p: JKOStepProblem, params: SqpParams, warm: StateVector) -> StepResult:
    """Minimize the step objective from ``warm``.

    Each iteration solves for the step ``d = argmin 1/2 d^T H d + grad
    F(u)^T d`` subject to ``A d = b - A u`` and ``d_rho >= -u_rho`` and moves
    to ``u + t d``. The first move is a full step onto the constraint
    manifold; afterwards ``t`` comes from an Armijo line search. The loop
    ends when ``|F(u_new) - F(u)| / |F(u)|`` drops below ``tol_rel``, or at a
    feasible ``u`` where ``d`` is no longer a descent direction, or when the
    line search stalls with a slope or full-step change below
    ``tol_rel |F|``.

    Raises
    ------
    StepAbortedError
        If a QP fails after shift escalation or the line search cannot
        decrease the objective from a non-stationary point.
    """
    constraints = build_constraints(p)
    u = warm.values.copy()
    F = objective_value(u, p)
    if not np.isfinite(F):
        raise StepAbortedError("warm start has a nonpositive density", 0)

    trace: list[InnerIterate] = []
    iterates = [u.copy()] if params.record_iterates else []
    qp_total = 0
    converged = False
    H = None
    search = params.line_search
    inner = 0
    while inner < params.max_inner:
        g = objective_gradient(u, p)
        if H is None or inner % params.hessian_refresh == 0:
            H = objective_hessian(u, p)
        result = _solve_subproblem(H, g, u, constraints, params, inner)
        qp_total += result.iterations
        d = result.z

        if inner == 0 and search.full_step_first:
            t = 1.0
            u_new = u + d
            F_new = objective_value(u_new, p)
        else:
            slope = float(g @ d)
            threshold = params.tol_rel * max(abs(F), np.finfo(float).tiny)
            primal = float(np.abs(constraints.A @ u - constraints.b).max())
            feasible = primal <= 1e-10 * (1.0 + np.abs(constraints.b).max())
            if slope >= 0.0 and feasible:
                logger.debug("QP step is not a descent direction at inner iteration %d; stationary", inner)
                converged = True
                break
            t = 1.0
            F_new = np.inf
            F_full = None
            for _ in range(search.max_halvings + 1):
                u_new = u + t * d
                F_new = objective_value(u_new, p)
                if F_full is None:
                    F_full = F_new
                if F_new <= F + search.armijo_c * t * slope:
                    break
                t *= search.shrink
            else:
                if -slope <= threshold or abs(F_full - F) <= threshold:
                    logger.debug("line search stalled at a stationary point, inner iteration %d", inner)
                    converged = True
                    break
                logger.error("line search failed at inner iteration %d (slope %.3g)", inner, slope)
                raise StepAbortedError(
                    f"line search could not decrease the objective (slope {slope:.3g})", inner
                )

        change = abs(F_new - F) / max(abs(F), np.finfo(float).tiny)
        trace.append(InnerIterate(F_new, t, result.iterations, change))
        logger.debug(
            "SQP iteration %d: F %.12g, step %.3g, change %.3g, QP iterations %d",
            inner,
            F_new,
            t,
            change,
            result.iterations,
        )
        u, F = u_new, F_new
        if params.record_iterates:
            iterates.append(u.copy())
        inner += 1
        if inner >= 2 and change < params.tol_rel:
            converged = True
            break

    if not converged:
        logger.warning("SQP stopped after %d iterations without reaching tol %.3g", inner, params.tol_rel)

    state = StateVector(p.grid, u)
    rho_next, m_next = state.unpack()
    return StepResult(
        rho_next,
        m_next,
        u,
        inner,
        qp_total,
        F,
        converged,
        trace,
        iterates,
    )
