"""One JKO step as a finite dimensional convex program.

The unknown is ``u = [rho ; m]`` with one density per cell followed by one
momentum per interior face (in `Grid.faces` order). The step minimizes::

    F(u) = sum_e [2 m_e^2 / (rho_L + rho_R)
                  + c (log rho_L - log rho_R)^2 / h_e^2 (rho_L + rho_R) / 2]
           * vol
           + 2 tau E(rho)

subject to ``rho + D m = rho_prev`` and ``rho >= 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sps

from .energy import (
    EnergySpec,
    FisherCoeff,
    energy_gradient,
    energy_hessian,
    energy_value,
    fisher_gradient,
    fisher_hessian,
    fisher_value,
)
from .grid import DensityField, FluxField, Grid, GridError, divergence_operator


class NonPositiveDensityError(ValueError):
    """An exception when a derivative is requested outside the open orthant.

    Parameters
    ----------
    min_rho
        The smallest density entry of the offending state.
    """

    def __init__(self, min_rho: float):
        super().__init__(min_rho)
        self.min_rho = min_rho

    def __str__(self):
        return f"density must be positive, smallest entry is {self.min_rho:g}"


@dataclass(frozen=True, eq=False)
class StateVector:
    """Packed unknowns ``[rho ; m_interior]``.

    Parameters
    ----------
    grid
        The grid both blocks live on.
    values
        ``grid.n_cells`` densities followed by ``grid.n_interior_faces``
        momenta.
    """

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        expected = self.grid.n_cells + self.grid.n_interior_faces
        if values.size != expected:
            raise GridError(f"state has {values.size} entries, expected {expected}")
        object.__setattr__(self, "values", values)

    @staticmethod
    def pack(rho: DensityField, m: FluxField) -> StateVector:
        return StateVector(rho.grid, np.concatenate([rho.values, m.interior()]))

    @property
    def rho(self) -> np.ndarray:
        return self.values[: self.grid.n_cells]

    @property
    def m(self) -> np.ndarray:
        return self.values[self.grid.n_cells :]

    def unpack(self) -> tuple[DensityField, FluxField]:
        return DensityField(self.grid, self.rho), FluxField.from_interior(self.grid, self.m)


@dataclass(frozen=True)
class HessianMode:
    """Which second order model the SQP iteration uses.

    ``"exact"`` is the Hessian of the step objective. ``"surrogate"`` is the
    Hessian of a sparse model in which the interaction energy is replaced
    by entropy and the Fisher coefficient is scaled by ``multiplier``.
    """

    kind: str = "exact"
    multiplier: int = 1

    def __post_init__(self):
        if self.kind not in ("exact", "surrogate"):
            raise ValueError(f"unknown Hessian mode {self.kind!r}")
        if int(self.multiplier) != self.multiplier or self.multiplier < 1:
            raise ValueError(f"surrogate multiplier must be a positive integer, got {self.multiplier}")

    @staticmethod
    def exact() -> HessianMode:
        return HessianMode("exact")

    @staticmethod
    def surrogate(multiplier: int = 1) -> HessianMode:
        return HessianMode("surrogate", multiplier)

    def __str__(self):
        return "exact" if self.kind == "exact" else f"surrogate x{self.multiplier}"


@dataclass(frozen=True, eq=False)
class JKOStepProblem:
    """Data of one step from ``rho_prev`` to the next density.

    Parameters
    ----------
    grid
        The grid.
    spec
        The energy driving the flow.
    tau
        Outer time step.
    fisher_coeff
        Multiplier of the Fisher information in the objective.
    rho_prev
        The density at the start of the step.
    hessian_mode
        Second order model used by the SQP iteration.
    """

    grid: Grid
    spec: EnergySpec
    tau: float
    fisher_coeff: FisherCoeff
    rho_prev: DensityField
    hessian_mode: HessianMode = field(default_factory=HessianMode.exact)

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.rho_prev.grid != self.grid or self.spec.grid != self.grid:
            raise GridError("density, energy and problem grids differ")

    @property
    def size(self) -> int:
        return self.grid.n_cells + self.grid.n_interior_faces

    @property
    def nonneg_indices(self) -> np.ndarray:
        return np.arange(self.grid.n_cells)

    def surrogate(self) -> JKOStepProblem:
        """The sparse model whose exact Hessian is the surrogate Hessian."""
        return replace(
            self,
            spec=self.spec.surrogate(),
            fisher_coeff=FisherCoeff(self.fisher_coeff.value * self.hessian_mode.multiplier),
            hessian_mode=HessianMode.exact(),
        )

    def with_rho_prev(self, rho_prev: DensityField) -> JKOStepProblem:
        return replace(self, rho_prev=rho_prev)


@dataclass(frozen=True, eq=False)
class ContinuityConstraint:
    """The linear system ``A u = b`` and the bound selection ``u[I] >= 0``."""

    A: sps.csr_matrix
    b: np.ndarray
    nonneg_index_set: np.ndarray


def _state(u: StateVector | np.ndarray, p: JKOStepProblem) -> tuple[np.ndarray, np.ndarray]:
    values = u.values if isinstance(u, StateVector) else np.asarray(u, dtype=float)
    n = p.grid.n_cells
    return values[:n], values[n:]


def _positive_density(rho: np.ndarray, p: JKOStepProblem) -> DensityField:
    if not np.all(rho > 0):
        raise NonPositiveDensityError(float(rho.min()))
    return DensityField(p.grid, rho)


def _kinetic_parts(rho: np.ndarray, p: JKOStepProblem):
    faces = p.grid.faces
    s = rho[faces.left] + rho[faces.right]
    return faces, s, p.grid.cell_volume


def objective_value(u: StateVector | np.ndarray, p: JKOStepProblem) -> float:
    """Step objective ``F(u)``, ``inf`` when some density is not positive."""
    rho, m = _state(u, p)
    if not np.all(rho > 0):
        return np.inf
    faces, s, vol = _kinetic_parts(rho, p)
    density = DensityField(p.grid, rho)
    kinetic = np.sum(2.0 * m**2 / s) * vol
    return float(
        kinetic + p.fisher_coeff.value * fisher_value(density) + 2.0 * p.tau * energy_value(density, p.spec)
    )


def objective_gradient(u: StateVector | np.ndarray, p: JKOStepProblem) -> np.ndarray:
    """Analytic gradient of `objective_value`.

    Raises
    ------
    NonPositiveDensityError
        If some density entry is not positive.
    """
    rho, m = _state(u, p)
    density = _positive_density(rho, p)
    faces, s, vol = _kinetic_parts(rho, p)
    n = p.grid.n_cells
    d_rho_face = -2.0 * m**2 / s**2 * vol
    grad_rho = np.bincount(faces.left, d_rho_face, minlength=n) + np.bincount(
        faces.right, d_rho_face, minlength=n
    )
    grad_rho += p.fisher_coeff.value * fisher_gradient(density)
    grad_rho += 2.0 * p.tau * energy_gradient(density, p.spec)
    grad_m = 4.0 * m / s * vol
    return np.concatenate([grad_rho, grad_m])


def objective_hessian(
    u: StateVector | np.ndarray, p: JKOStepProblem, mode: HessianMode | None = None
) -> sps.csr_matrix:
    """Exact or surrogate Hessian of the step objective.

    The surrogate is the exact Hessian of ``p.surrogate()``: the kinetic
    blocks are unchanged, the interaction is replaced by ``rho log rho`` and
    the Fisher coefficient is multiplied. It never forms a dense block.
    """
    mode = p.hessian_mode if mode is None else mode
    if mode.kind == "surrogate":
        return objective_hessian(u, replace(p, hessian_mode=mode).surrogate(), HessianMode.exact())

    rho, m = _state(u, p)
    density = _positive_density(rho, p)
    faces, s, vol = _kinetic_parts(rho, p)
    n = p.grid.n_cells
    k = faces.size

    rho_rho = 4.0 * m**2 / s**3 * vol
    rows = np.concatenate([faces.left, faces.right, faces.left, faces.right])
    cols = np.concatenate([faces.left, faces.right, faces.right, faces.left])
    kinetic_rho = sps.csr_matrix((np.tile(rho_rho, 4), (rows, cols)), shape=(n, n))
    h_rho = (
        kinetic_rho
        + p.fisher_coeff.value * fisher_hessian(density)
        + 2.0 * p.tau * energy_hessian(density, p.spec, include_interaction=True)
    )

    mixed_vals = -4.0 * m / s**2 * vol
    face_index = np.arange(k)
    mixed_rows = np.concatenate([faces.left, faces.right])
    mixed_cols = np.tile(face_index, 2)
    h_rho_m = sps.csr_matrix((np.tile(mixed_vals, 2), (mixed_rows, mixed_cols)), shape=(n, k))
    h_m = sps.diags(4.0 / s * vol, format="csr")
    return sps.bmat([[h_rho, h_rho_m], [h_rho_m.T, h_m]], format="csr")


def build_constraints(p: JKOStepProblem) -> ContinuityConstraint:
    """Continuity equation ``rho_i + sum_e D_ie m_e = rho_prev_i`` per cell."""
    n = p.grid.n_cells
    A = sps.hstack([sps.identity(n, format="csr"), divergence_operator(p.grid)], format="csr")
    return ContinuityConstraint(A, p.rho_prev.values.copy(), p.nonneg_indices)
