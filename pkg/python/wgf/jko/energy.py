"""Discrete free energies, the Fisher information and their derivatives.

The energy of a density on a grid with cell volume ``vol`` is::

    E(rho) = sum_j [U(rho_j) + V_j rho_j] vol
             + 1/2 sum_jl W_jl rho_j rho_l vol^2

and the Fisher information sums, over interior faces ``e = (L, R)`` with
center spacing ``h``::

    I(rho) = sum_e (log rho_L - log rho_R)^2 / h^2 * (rho_L + rho_R) / 2 * vol
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.integrate
import scipy.linalg
import scipy.signal
import scipy.sparse as sps

from .grid import DensityField, Grid, cell_centers

LOG_FLOOR = 1e-14


class KernelError(ValueError):
    """An exception for an unknown or non-integrable energy term.

    Parameters
    ----------
    name
        Name of the offending kernel or potential.
    reason
        What is wrong with it.
    """

    def __init__(self, name: str, reason: str):
        super().__init__(name, reason)
        self.name = name
        self.reason = reason

    def __str__(self):
        return f"kernel {self.name!r}: {self.reason}"


def _safe_log(values: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(values, LOG_FLOOR))


@dataclass(frozen=True)
class InternalEnergy:
    """Local energy density ``U``.

    ``kind`` is ``"none"``, ``"entropy"`` for ``rho log rho`` or ``"power"``
    for ``coeff * rho**m_exp``; the porous medium default coefficient is
    ``1 / (m_exp - 1)``.
    """

    kind: str = "none"
    m_exp: float = 2.0
    coeff: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "entropy", "power"):
            raise KernelError(self.kind, "unknown internal energy")
        if self.kind == "power":
            if not self.m_exp > 1:
                raise KernelError("power", f"exponent must exceed 1, got {self.m_exp}")
            if self.coeff < 0:
                raise KernelError("power", f"coefficient must be nonnegative, got {self.coeff}")

    @staticmethod
    def none() -> InternalEnergy:
        return InternalEnergy("none")

    @staticmethod
    def entropy() -> InternalEnergy:
        return InternalEnergy("entropy")

    @staticmethod
    def power(m_exp: float, coeff: float | None = None) -> InternalEnergy:
        if coeff is None:
            coeff = 1.0 / (m_exp - 1.0) if m_exp > 1 else 0.0
        return InternalEnergy("power", m_exp, coeff)

    def value(self, rho: np.ndarray) -> np.ndarray:
        if self.kind == "entropy":
            return rho * _safe_log(rho)
        if self.kind == "power":
            return self.coeff * np.maximum(rho, 0.0) ** self.m_exp
        return np.zeros_like(rho)

    def first(self, rho: np.ndarray) -> np.ndarray:
        if self.kind == "entropy":
            return _safe_log(rho) + 1.0
        if self.kind == "power":
            return self.coeff * self.m_exp * np.maximum(rho, 0.0) ** (self.m_exp - 1)
        return np.zeros_like(rho)

    def second(self, rho: np.ndarray) -> np.ndarray:
        if self.kind == "entropy":
            return 1.0 / np.maximum(rho, LOG_FLOOR)
        if self.kind == "power":
            clamped = np.maximum(rho, LOG_FLOOR)
            return self.coeff * self.m_exp * (self.m_exp - 1) * clamped ** (self.m_exp - 2)
        return np.zeros_like(rho)

    def describe(self) -> str:
        if self.kind == "entropy":
            return "rho log rho"
        if self.kind == "power":
            return f"{self.coeff:g} rho^{self.m_exp:g}"
        return "0"


@dataclass(frozen=True)
class Potential:
    """Confining potential ``V`` as a function of the distance to a center.

    Parameters
    ----------
    name
        Short identifier used in configuration and manifests.
    formula
        Human readable formula.
    func
        Vectorized function of ``|x - center|``.
    center
        Center of the potential; a float in 1D, a pair in 2D.
    """

    name: str
    formula: str
    func: Callable[[np.ndarray], np.ndarray] = field(compare=False, repr=False)
    center: float | tuple[float, float] = 0.0

    @staticmethod
    def quadratic() -> Potential:
        return Potential("quadratic", "|x|^2/2", lambda r: 0.5 * r**2)

    @staticmethod
    def double_well(height: float = 10.0) -> Potential:
        return Potential("double_well", f"{height:g}(1-x^2)^2", lambda r: height * (1.0 - r**2) ** 2)

    @staticmethod
    def logarithmic(coeff: float = -0.25) -> Potential:
        return Potential("log", f"{coeff:g} ln|x|", lambda r: coeff * np.log(r))

    def sample(self, grid: Grid) -> np.ndarray:
        """Evaluate at every cell center."""
        centers = cell_centers(grid)
        if grid.dim == 1:
            r = np.abs(centers - self.center)
        else:
            cx, cy = self.center if isinstance(self.center, tuple) else (self.center, self.center)
            r = np.hypot(centers[:, 0] - cx, centers[:, 1] - cy)
        values = np.asarray(self.func(r), dtype=float)
        if not np.all(np.isfinite(values)):
            raise KernelError(self.name, "potential is not finite at some cell center")
        return values

    def __str__(self):
        return self.formula


def _polar_rectangle_average(radial_integral: Callable[[float], float], a: float, b: float) -> float:
    """Average of a radial function over ``[-a, a] x [-b, b]``.

    ``radial_integral(R)`` must return ``int_0^R f(r) r dr``. The quarter
    rectangle splits along its diagonal into two triangles, each swept by
    rays from the origin.
    """
    theta_a = math.atan2(b, a)
    theta_b = math.atan2(a, b)
    part_a, _ = scipy.integrate.quad(lambda t: radial_integral(a / math.cos(t)), 0.0, theta_a)
    part_b, _ = scipy.integrate.quad(lambda t: radial_integral(b / math.cos(t)), 0.0, theta_b)
    return (part_a + part_b) / (a * b)


@dataclass(frozen=True)
class Kernel:
    """Radial interaction kernel ``W(x) = w(|x|)``.

    The kernel is the sum of power terms ``coeff * r**p``, a logarithmic
    term ``log_coeff * ln r`` and a Gaussian ``gaussian * exp(-r**2)``.

    Parameters
    ----------
    name
        Short identifier used in configuration and manifests.
    powers
        ``(coeff, exponent)`` pairs.
    log_coeff
        Coefficient of ``ln r``.
    gaussian
        Amplitude of ``exp(-r**2)``.
    """

    name: str
    powers: tuple[tuple[float, float], ...] = ()
    log_coeff: float = 0.0
    gaussian: float = 0.0

    @staticmethod
    def attractive_repulsive(a: float, b: float) -> Kernel:
        """``|x|^a/a - |x|^b/b`` with ``b = 0`` read as ``-ln|x|``."""
        if b == 0:
            return Kernel(f"power_{a:g}_log", powers=((1.0 / a, a),), log_coeff=-1.0)
        return Kernel(f"power_{a:g}_{b:g}", powers=((1.0 / a, a), (-1.0 / b, b)))

    @staticmethod
    def gaussian_attraction() -> Kernel:
        """``-exp(-|x|^2) / pi``."""
        return Kernel("gaussian", gaussian=-1.0 / math.pi)

    def __call__(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        for coeff, p in self.powers:
            out = out + coeff * r**p
        if self.log_coeff:
            out = out + self.log_coeff * np.log(r)
        if self.gaussian:
            out = out + self.gaussian * np.exp(-(r**2))
        return out

    def __str__(self):
        terms = [f"{c:g}|x|^{p:g}" for c, p in self.powers]
        if self.log_coeff:
            terms.append(f"{self.log_coeff:g}ln|x|")
        if self.gaussian:
            terms.append(f"{self.gaussian:g}exp(-|x|^2)")
        return " + ".join(terms) or "0"

    def cell_average(self, hx: float, hy: float | None = None) -> float:
        """Kernel average over ``[-hx, hx]`` or ``[-hx, hx] x [-hy, hy]``.

        The Gaussian term is smooth and contributes its value at the origin.

        Raises
        ------
        KernelError
            If a power term is not integrable at the origin.
        """
        dim = 1 if hy is None else 2
        total = self.gaussian
        for coeff, p in self.powers:
            if p <= -dim:
                raise KernelError(self.name, f"|x|^{p:g} is not integrable at 0 in {dim}D")
            if dim == 1:
                total += coeff * hx**p / (p + 1)
            elif p == 2:
                total += coeff * (hx**2 + hy**2) / 3
            elif p == 4:
                total += coeff * (hx**4 / 5 + 2 * hx**2 * hy**2 / 9 + hy**4 / 5)
            else:
                total += coeff * _polar_rectangle_average(lambda R, p=p: R ** (p + 2) / (p + 2), hx, hy)
        if self.log_coeff:
            if dim == 1:
                mean_log = math.log(hx) - 1.0
            else:
                a, b = hx, hy
                mean_log = 0.5 * (
                    math.log(a**2 + b**2) - 3.0 + (a / b) * math.atan(b / a) + (b / a) * math.atan(a / b)
                )
            total += self.log_coeff * mean_log
        return total


def kernel_table(kernel: Kernel, grid: Grid) -> np.ndarray:
    """Tabulate ``W`` on every offset between two cell centers.

    Returns
    -------
    numpy.ndarray
        Shape ``(2 nx - 1,)`` or ``(2 ny - 1, 2 nx - 1)``; the center entry
        holds the cell average of the kernel instead of its singular value.
    """
    ox = np.arange(-(grid.nx - 1), grid.nx) * grid.dx
    if grid.dim == 1:
        r = np.abs(ox)
        center = (grid.nx - 1,)
        w0 = kernel.cell_average(grid.dx / 2)
    else:
        oy = np.arange(-(grid.ny - 1), grid.ny) * grid.dy
        r = np.hypot(*np.meshgrid(ox, oy))
        center = (grid.ny - 1, grid.nx - 1)
        w0 = kernel.cell_average(grid.dx / 2, grid.dy / 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        table = kernel(r)
    table[center] = w0
    return table


@dataclass(frozen=True, eq=False)
class EnergySpec:
    """Energy ``E = int U(rho) + V rho + 1/2 int int W(x - y) rho rho``.

    Use `EnergySpec.build` to sample the potential and the kernel on a grid.

    Parameters
    ----------
    grid
        The grid the tables are sampled on.
    internal
        The local energy density.
    potential
        Samples of ``V`` per cell, or ``None``.
    interaction
        Offset table from `kernel_table`, or ``None``.
    entropy_augmented
        Add ``rho log rho`` on top of ``internal``; used by surrogate models.
    """

    grid: Grid
    internal: InternalEnergy = field(default_factory=InternalEnergy.none)
    potential: np.ndarray | None = None
    interaction: np.ndarray | None = None
    entropy_augmented: bool = False
    potential_formula: Potential | None = None
    kernel_formula: Kernel | None = None

    @staticmethod
    def build(
        grid: Grid,
        internal: InternalEnergy | None = None,
        potential: Potential | None = None,
        kernel: Kernel | None = None,
    ) -> EnergySpec:
        return EnergySpec(
            grid,
            internal or InternalEnergy.none(),
            potential.sample(grid) if potential is not None else None,
            kernel_table(kernel, grid) if kernel is not None else None,
            potential_formula=potential,
            kernel_formula=kernel,
        )

    def surrogate(self) -> EnergySpec:
        """Return the sparse model: interaction dropped, entropy added."""
        return replace(self, interaction=None, kernel_formula=None, entropy_augmented=True)

    def describe(self) -> str:
        """Human readable sum of the energy terms."""
        terms = []
        if self.internal.kind != "none":
            terms.append(self.internal.describe())
        if self.entropy_augmented:
            terms.append("rho log rho")
        if self.potential_formula is not None:
            terms.append(f"V = {self.potential_formula}")
        if self.kernel_formula is not None:
            terms.append(f"W = {self.kernel_formula}")
        return " + ".join(terms) or "0"

    def apply_interaction(self, values: np.ndarray) -> np.ndarray:
        """Return ``(W rho)_j = sum_l W(x_j - x_l) rho_l`` per cell."""
        field_ = values.reshape(self.grid.shape)
        out = scipy.signal.convolve(self.interaction, field_, mode="valid", method="direct")
        return out.ravel()

    def interaction_matrix(self) -> np.ndarray:
        """Dense ``W_jl`` for all cell pairs."""
        grid = self.grid
        if grid.dim == 1:
            return scipy.linalg.toeplitz(self.interaction[grid.nx - 1 :])
        iy, ix = np.divmod(np.arange(grid.n_cells), grid.nx)
        dy = iy[:, None] - iy[None, :] + grid.ny - 1
        dx = ix[:, None] - ix[None, :] + grid.nx - 1
        return self.interaction[dy, dx]


@dataclass(frozen=True)
class FisherCoeff:
    """Multiplier on the discrete Fisher information in the step objective."""

    value: float

    def __post_init__(self):
        if not self.value >= 0:
            raise ValueError(f"Fisher coefficient must be nonnegative, got {self.value}")

    @staticmethod
    def standard(beta: float, tau: float) -> FisherCoeff:
        """``beta**-2 * tau**2``."""
        return FisherCoeff(tau**2 / beta**2)

    @staticmethod
    def from_beta_inv_sq(beta_inv_sq: float, tau: float) -> FisherCoeff:
        return FisherCoeff(beta_inv_sq * tau**2)

    @staticmethod
    def dlss(tau: float) -> FisherCoeff:
        """``tau``, for the fourth-order thin film type flows."""
        return FisherCoeff(tau)

    @staticmethod
    def exact_case(tau: float) -> FisherCoeff:
        """``2 tau``, the choice ``beta = sqrt(tau / 2)``."""
        return FisherCoeff(2.0 * tau)

    def __float__(self):
        return float(self.value)


def _local_density(values: np.ndarray, spec: EnergySpec) -> np.ndarray:
    out = spec.internal.value(values)
    if spec.entropy_augmented:
        out = out + values * _safe_log(values)
    if spec.potential is not None:
        out = out + spec.potential * values
    return out


def energy_value(rho: DensityField, spec: EnergySpec) -> float:
    """Discrete energy ``E(rho)``."""
    vol = spec.grid.cell_volume
    values = rho.values
    total = _local_density(values, spec).sum() * vol
    if spec.interaction is not None:
        total += 0.5 * vol**2 * values @ spec.apply_interaction(values)
    return float(total)


def energy_gradient(rho: DensityField, spec: EnergySpec) -> np.ndarray:
    """Gradient of `energy_value` with respect to the cell values."""
    vol = spec.grid.cell_volume
    values = rho.values
    grad = spec.internal.first(values)
    if spec.entropy_augmented:
        grad = grad + _safe_log(values) + 1.0
    if spec.potential is not None:
        grad = grad + spec.potential
    grad = grad * vol
    if spec.interaction is not None:
        grad = grad + vol**2 * spec.apply_interaction(values)
    return grad


def energy_hessian(rho: DensityField, spec: EnergySpec, include_interaction: bool = True) -> sps.csr_matrix:
    """Hessian of `energy_value`.

    The local part is diagonal. The interaction part is the dense block
    ``W_jl vol**2`` and is only materialized with ``include_interaction``.
    """
    vol = spec.grid.cell_volume
    values = rho.values
    diag = spec.internal.second(values)
    if spec.entropy_augmented:
        diag = diag + 1.0 / np.maximum(values, LOG_FLOOR)
    hess = sps.diags(diag * vol, format="csr")
    if include_interaction and spec.interaction is not None:
        hess = hess + sps.csr_matrix(vol**2 * spec.interaction_matrix())
    return hess


@dataclass(frozen=True, eq=False)
class _FaceTerms:
    rho_l: np.ndarray
    rho_r: np.ndarray
    dlog: np.ndarray
    weight: np.ndarray


def _face_terms(rho: DensityField) -> _FaceTerms:
    grid = rho.grid
    faces = grid.faces
    rho_l = rho.values[faces.left]
    rho_r = rho.values[faces.right]
    dlog = _safe_log(rho_l) - _safe_log(rho_r)
    return _FaceTerms(rho_l, rho_r, dlog, grid.cell_volume / faces.spacing**2)


def fisher_value(rho: DensityField) -> float:
    """Discrete Fisher information with unit coefficient."""
    f = _face_terms(rho)
    return float(np.sum(f.weight * f.dlog**2 * 0.5 * (f.rho_l + f.rho_r)))


def fisher_gradient(rho: DensityField) -> np.ndarray:
    """Gradient of `fisher_value` with respect to the cell values."""
    f = _face_terms(rho)
    s = f.rho_l + f.rho_r
    half_sq = 0.5 * f.dlog**2
    grad_l = f.weight * (f.dlog * s / f.rho_l + half_sq)
    grad_r = f.weight * (-f.dlog * s / f.rho_r + half_sq)
    faces = rho.grid.faces
    n = rho.grid.n_cells
    return np.bincount(faces.left, grad_l, minlength=n) + np.bincount(faces.right, grad_r, minlength=n)


def fisher_hessian(rho: DensityField) -> sps.csr_matrix:
    """Sparse Hessian of `fisher_value`.

    With ``t = (rho_i - rho_j)(log rho_i - log rho_j) + rho_i + rho_j`` per
    face, the diagonal collects ``t / rho_i**2`` and the off-diagonal entry
    is ``-t / (rho_i rho_j)``, both scaled by ``vol / h**2``.
    """
    f = _face_terms(rho)
    faces = rho.grid.faces
    t = f.weight * ((f.rho_l - f.rho_r) * f.dlog + f.rho_l + f.rho_r)
    off = -t / (f.rho_l * f.rho_r)
    rows = np.concatenate([faces.left, faces.right, faces.left, faces.right])
    cols = np.concatenate([faces.left, faces.right, faces.right, faces.left])
    vals = np.concatenate([t / f.rho_l**2, t / f.rho_r**2, off, off])
    n = rho.grid.n_cells
    return sps.csr_matrix((vals, (rows, cols)), shape=(n, n))


def modified_energy(rho: DensityField, spec: EnergySpec, fisher_coeff: FisherCoeff, tau: float) -> float:
    """``E + fisher_coeff / (2 tau) * I``, nonincreasing along the scheme."""
    return energy_value(rho, spec) + float(fisher_coeff) / (2.0 * tau) * fisher_value(rho)
