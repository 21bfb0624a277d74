"""Exact solutions, equilibria, reference solvers and error norms."""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
import scipy.integrate
import scipy.linalg
import scipy.optimize
import scipy.stats

from .grid import DensityField, Grid, cell_centers


@dataclass(frozen=True)
class BarenblattParams:
    """Self-similar porous medium solution parameters.

    Parameters
    ----------
    m_exp
        Porous medium exponent, greater than 1.
    C
        Height constant.
    t0
        Time shift.
    """

    m_exp: float = 2.0
    C: float = 0.8
    t0: float = 1e-3

    def __post_init__(self):
        if not self.m_exp > 1:
            raise ValueError(f"m_exp must exceed 1, got {self.m_exp}")
        if not (self.C > 0 and self.t0 > 0):
            raise ValueError(f"C and t0 must be positive, got C={self.C}, t0={self.t0}")


def barenblatt(x, t: float, p: BarenblattParams):
    """Barenblatt profile of ``d_t rho = d_xx rho^m`` in 1D.

    ``rho = s^(-1/(m+1)) (C - (m-1)/(2m(m+1)) x^2 s^(-2/(m+1)))_+^(1/(m-1))``
    with ``s = t + t0``.
    """
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    m = p.m_exp
    s = t + p.t0
    k = (m - 1) / (2 * m * (m + 1))
    core = p.C - k * np.asarray(x, dtype=float) ** 2 * s ** (-2 / (m + 1))
    return s ** (-1 / (m + 1)) * np.maximum(core, 0.0) ** (1 / (m - 1))


def barenblatt_field(grid: Grid, t: float, p: BarenblattParams, floor: float = 0.0) -> DensityField:
    """Sample `barenblatt` at the cell centers."""
    return DensityField(grid, barenblatt(cell_centers(grid), t, p) + floor)


def _quadratic(x):
    return 0.5 * np.asarray(x, dtype=float) ** 2


def nfp_constant(m_exp: float = 2.0, mass: float = 0.125) -> float:
    """Constant ``C`` of the equilibrium ``(C - (m-1)/m V)_+^(1/(m-1))``.

    The potential is ``V = x^2/2``. For ``m = 2`` this is
    ``(3 M / 8)^(2/3)``; otherwise ``C`` is the root of the mass constraint.
    """
    if m_exp == 2.0:
        return (3.0 * mass / 8.0) ** (2.0 / 3.0)

    def excess(c: float) -> float:
        radius = math.sqrt(2.0 * m_exp * c / (m_exp - 1.0))
        total, _ = scipy.integrate.quad(lambda x: nfp_steady(x, m_exp, constant=c), -radius, radius)
        return total - mass

    upper = 1.0
    while excess(upper) < 0:
        upper *= 2.0
    return scipy.optimize.brentq(excess, 1e-300, upper, xtol=1e-14, rtol=1e-12)


def nfp_steady(x, m_exp: float = 2.0, mass: float = 0.125, constant: float | None = None):
    """Equilibrium of ``d_t rho = d_xx rho^m + d_x(x rho)``."""
    c = nfp_constant(m_exp, mass) if constant is None else constant
    core = c - (m_exp - 1.0) / m_exp * _quadratic(x)
    return np.maximum(core, 0.0) ** (1.0 / (m_exp - 1.0))


def agg1d_steady(x):
    """Equilibrium ``sqrt(2 - x^2)_+ / pi`` of the kernel ``x^2/2 - ln|x|``."""
    return np.sqrt(np.maximum(2.0 - np.asarray(x, dtype=float) ** 2, 0.0)) / math.pi


def dlss_steady(x):
    """Standard Gaussian, the thin film equilibrium for ``V = x^2/2``."""
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x**2) / math.sqrt(2.0 * math.pi)


def sample_field(grid: Grid, profile: Callable) -> DensityField:
    """Evaluate a one dimensional profile at the cell centers."""
    return DensityField(grid, profile(cell_centers(grid)))


def step_count(t_max: float, tau: float) -> int:
    """``ceil(t_max / tau)`` without float round-up."""
    return max(0, math.ceil(t_max / tau * (1.0 - 1e-9)))


def reference_heat_solver(rho0: DensityField, tau: float, t_max: float) -> DensityField:
    """Backward Euler heat solve with no-flux boundaries.

    Each step solves ``(I - tau L) rho_new = rho`` with the centered
    three-point Laplacian ``L`` whose boundary rows only couple inward.
    """
    grid = rho0.grid
    if grid.dim != 1:
        raise ValueError("reference heat solver needs a 1D grid")
    n = grid.nx
    r = tau / grid.dx**2
    banded = np.zeros((3, n))
    banded[0, 1:] = -r
    banded[2, :-1] = -r
    banded[1, :] = 1.0 + 2.0 * r
    banded[1, 0] -= r
    banded[1, -1] -= r
    rho = rho0.values.copy()
    for _ in range(step_count(t_max, tau)):
        rho = scipy.linalg.solve_banded((1, 1), banded, rho)
    return DensityField(grid, np.maximum(rho, 0.0))


def _values(rho) -> np.ndarray:
    return rho.values if isinstance(rho, DensityField) else np.asarray(rho, dtype=float).ravel()


def l1_err(rho: DensityField, reference: DensityField | np.ndarray) -> float:
    """``sum |rho - reference| * cell volume``."""
    diff = rho.values - _values(reference)
    return float(np.abs(diff).sum() * rho.grid.cell_volume)


def richardson_err(rho_tau: DensityField, rho_tau_half: DensityField) -> float:
    """Self-convergence error between runs with ``tau`` and ``tau / 2``."""
    return l1_err(rho_tau, rho_tau_half)


def linf_err(rho: DensityField, reference: DensityField | np.ndarray) -> float:
    """Largest pointwise difference."""
    return float(np.abs(rho.values - _values(reference)).max())


def fit_order(taus, errors) -> float:
    """Least-squares slope of ``log error`` against ``log tau``."""
    slope, _ = np.polyfit(np.log(np.asarray(taus, dtype=float)), np.log(np.asarray(errors, dtype=float)), 1)
    return float(slope)


@dataclass(frozen=True)
class DecayFit:
    """Exponential fit ``values - floor ~ A exp(-rate t)``."""

    rate: float
    r_squared: float
    points: int


def exponential_decay_fit(times, values, floor: float = 0.0) -> DecayFit:
    """Fit a line to ``log(values - floor)`` where ``values > floor``."""
    times = np.asarray(times, dtype=float)
    excess = np.asarray(values, dtype=float) - floor
    keep = excess > 0
    if keep.sum() < 3:
        raise ValueError("need at least three points above the floor to fit a decay rate")
    fit = scipy.stats.linregress(times[keep], np.log(excess[keep]))
    return DecayFit(-float(fit.slope), float(fit.rvalue**2), int(keep.sum()))
