"""Catalog of the reference experiments.

Each preset fixes a domain, initial data, an energy, the time step and the
regularization. Gaussian widths and centers and the final times of the
fourth order flows are chosen so that the expected long time behavior is
reached.
"""

from __future__ import annotations

import functools
import math
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field, replace
from types import MappingProxyType

import numpy as np

from .energy import EnergySpec, FisherCoeff, InternalEnergy, Kernel, Potential
from .grid import DensityField, Grid, cell_centers
from .objective import HessianMode, JKOStepProblem
from .oracles import BarenblattParams, agg1d_steady, barenblatt, dlss_steady, nfp_steady
from .sqp import SqpParams


class PresetError(KeyError):
    """An exception for an unknown preset or an inapplicable override.

    Parameters
    ----------
    name
        The preset or override key at fault.
    reason
        Human readable explanation.
    """

    def __init__(self, name: str, reason: str):
        super().__init__(name, reason)
        self.name = name
        self.reason = reason

    def __str__(self):
        return f"{self.name!r}: {self.reason}"


@dataclass(frozen=True)
class GridSpec:
    """Domain and resolution of a preset."""

    xmin: float
    xmax: float
    nx: int
    ymin: float | None = None
    ymax: float | None = None
    ny: int | None = None

    @staticmethod
    def from_spacing(xmin: float, xmax: float, dx: float, ymin=None, ymax=None) -> GridSpec:
        grid = Grid.from_spacing(xmin, xmax, dx, ymin, ymax)
        return GridSpec(xmin, xmax, grid.nx, ymin, ymax, grid.ny)

    @property
    def dim(self) -> int:
        return 1 if self.ny is None else 2

    def build(self) -> Grid:
        return Grid(self.nx, self.xmin, self.xmax, self.ny, self.ymin, self.ymax)

    def with_cells(self, nx: int | None = None, ny: int | None = None) -> GridSpec:
        nx = self.nx if nx is None else nx
        if self.ny is None:
            if ny is not None:
                raise PresetError("ny", "the preset is one dimensional")
            return replace(self, nx=nx)
        return replace(self, nx=nx, ny=ny if ny is not None else round(self.ny * nx / self.nx))


def _normalize(values: np.ndarray, grid: Grid, mass: float = 1.0) -> np.ndarray:
    return values * (mass / (values.sum() * grid.cell_volume))


def _gaussian_1d(x: np.ndarray, center: float, sigma: float) -> np.ndarray:
    return np.exp(-((x - center) ** 2) / (2 * sigma**2))


def _gaussian_2d(points: np.ndarray, center: tuple[float, float], theta: float) -> np.ndarray:
    r2 = (points[:, 0] - center[0]) ** 2 + (points[:, 1] - center[1]) ** 2
    return np.exp(-r2 / theta**2)


def heat_initial(grid: Grid) -> np.ndarray:
    """Narrow Gaussian at ``x = 1`` above a small floor."""
    x = cell_centers(grid)
    return np.exp(-100.0 * (x - 1.0) ** 2) + 1e-5


PME_PROFILE = BarenblattParams(2.0, 0.8, 1e-3)


def pme_initial(grid: Grid) -> np.ndarray:
    """Barenblatt profile at ``t = 0`` above a small floor."""
    return barenblatt(cell_centers(grid), 0.0, PME_PROFILE) + 1e-5


def pme_exact(grid: Grid, t: float) -> np.ndarray:
    """Barenblatt profile at time ``t``."""
    return barenblatt(cell_centers(grid), t, PME_PROFILE)


def nfp_initial(grid: Grid) -> np.ndarray:
    """Gaussian of mass 1/8."""
    bump = _normalize(_gaussian_1d(cell_centers(grid), 0.0, 0.2), grid)
    return (bump + 1e-8) / 8.0


def agg1d_initial(grid: Grid) -> np.ndarray:
    """Unit mass Gaussian."""
    return _normalize(_gaussian_1d(cell_centers(grid), 0.0, 0.5), grid) + 1e-8


def dlss1d_initial(grid: Grid) -> np.ndarray:
    """Two unit mass Gaussians at ``x = -1.5`` and ``x = 1.5``."""
    theta = 0.1
    x = cell_centers(grid)
    bumps = _normalize(_gaussian_1d(x, 1.5, theta) + _gaussian_1d(x, -1.5, theta), grid)
    return bumps + 1e-8 / (2.0 * math.sqrt(2.0 * math.pi) * theta)


def ring_initial(grid: Grid) -> np.ndarray:
    """Gaussian centered in the square."""
    return _normalize(_gaussian_2d(cell_centers(grid), (1.25, 1.25), 0.2), grid) + 1e-5


AGGDRIFT_BUMPS = ((0.6, 0.3), (-0.5, 0.6), (-0.7, -0.4), (0.2, -0.8), (0.9, -0.2))


def aggdrift_initial(grid: Grid) -> np.ndarray:
    """Sum of five Gaussians around the origin."""
    points = cell_centers(grid)
    bumps = sum(_gaussian_2d(points, center, 0.2) for center in AGGDRIFT_BUMPS)
    return _normalize(bumps, grid) + 1e-5


def aggdiff_initial(grid: Grid) -> np.ndarray:
    """Indicator of ``[-2.5, 2.5]^2`` above a small floor."""
    points = cell_centers(grid)
    inside = (np.abs(points[:, 0]) <= 2.5) & (np.abs(points[:, 1]) <= 2.5)
    return inside.astype(float) + 1e-5


def dlss2d_initial(grid: Grid) -> np.ndarray:
    """Four Gaussians at ``(+-1, +-1)``."""
    points = cell_centers(grid)
    bumps = sum(_gaussian_2d(points, (sx, sy), 0.3) for sx in (-1.0, 1.0) for sy in (-1.0, 1.0))
    return _normalize(bumps, grid) + 1e-8


@dataclass(frozen=True)
class Preset:
    """A reproducible experiment.

    Parameters
    ----------
    name
        Lookup key.
    description
        One line description of the experiment.
    grid
        Domain and resolution.
    initial
        Initial density as a function of the grid.
    internal, potential, kernel
        Terms of the energy.
    tau
        Outer time step.
    beta_inv_sq
        ``beta**-2``; the Fisher coefficient is ``beta_inv_sq * tau**2``.
    dlss
        Use ``tau`` as Fisher coefficient instead, for thin film type flows.
    hessian_mode
        Exact or surrogate SQP model.
    t_max
        Final time.
    tol, max_inner, qp_tol
        Inner solver controls.
    snapshot_stride
        Store every this many steps (the final density is always stored).
    center
        Reference point for radial diagnostics of 2D presets.
    params
        Further constants of the experiment (widths, radii, exponents).
    steady
        Equilibrium profile of a 1D preset as a function of ``x``, if known.
    exact
        Exact solution as a function of the grid and the time, if known.
    """

    name: str
    description: str
    grid: GridSpec
    initial: Callable[[Grid], np.ndarray] = field(compare=False, repr=False)
    internal: InternalEnergy = field(default_factory=InternalEnergy.none)
    potential: Potential | None = None
    kernel: Kernel | None = None
    tau: float = 0.01
    beta_inv_sq: float = 1.0
    dlss: bool = False
    hessian_mode: HessianMode = field(default_factory=HessianMode.exact)
    t_max: float = 1.0
    tol: float = 1e-6
    max_inner: int = 100
    qp_tol: float = 1e-9
    snapshot_stride: int = 10
    center: tuple[float, float] | None = None
    params: Mapping[str, float] = field(default_factory=dict, compare=False)
    steady: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False, repr=False)
    exact: Callable[[Grid, float], np.ndarray] | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "params", MappingProxyType(dict(self.params)))

    @property
    def fisher_coeff(self) -> FisherCoeff:
        if self.dlss:
            return FisherCoeff.dlss(self.tau)
        return FisherCoeff.from_beta_inv_sq(self.beta_inv_sq, self.tau)

    def build_grid(self) -> Grid:
        return self.grid.build()

    def energy_spec(self, grid: Grid) -> EnergySpec:
        return EnergySpec.build(grid, self.internal, self.potential, self.kernel)

    def initial_density(self, grid: Grid) -> DensityField:
        return DensityField(grid, self.initial(grid))

    def sqp_params(self, **kwargs) -> SqpParams:
        return SqpParams(tol_rel=self.tol, max_inner=self.max_inner, qp_tol=self.qp_tol, **kwargs)

    def problem(self, rho_prev: DensityField, spec: EnergySpec | None = None) -> JKOStepProblem:
        grid = rho_prev.grid
        return JKOStepProblem(
            grid,
            spec if spec is not None else self.energy_spec(grid),
            self.tau,
            self.fisher_coeff,
            rho_prev,
            self.hessian_mode,
        )

    def with_overrides(self, **overrides) -> Preset:
        """Return a copy with run parameters replaced.

        Recognized keys are ``nx``, ``ny``, ``tau``, ``beta``,
        ``beta_tilde_mult``, ``t_max``, ``tol``, ``max_inner``, ``qp_tol``
        and ``snapshot_stride``; ``None`` values are ignored.

        Raises
        ------
        PresetError
            For an unknown key or one that does not apply to this preset.
        """
        overrides = {key: value for key, value in overrides.items() if value is not None}
        changes = {}
        if "nx" in overrides or "ny" in overrides:
            changes["grid"] = self.grid.with_cells(overrides.pop("nx", None), overrides.pop("ny", None))
        if "beta" in overrides:
            if self.dlss:
                raise PresetError("beta", f"{self.name} uses the thin film coefficient tau")
            changes["beta_inv_sq"] = 1.0 / overrides.pop("beta") ** 2
        if "beta_tilde_mult" in overrides:
            changes["hessian_mode"] = HessianMode.surrogate(int(overrides.pop("beta_tilde_mult")))
        for key in ("tau", "t_max", "tol", "max_inner", "qp_tol", "snapshot_stride"):
            if key in overrides:
                changes[key] = overrides.pop(key)
        if overrides:
            raise PresetError(next(iter(overrides)), "unknown override")
        return replace(self, **changes)


def _build_library() -> dict[str, Preset]:
    square = GridSpec.from_spacing(0.0, 2.5, 0.05, 0.0, 2.5)
    presets = [
        Preset(
            "heat1d",
            "heat equation, beta = 1, rho0 = exp(-100(x-1)^2) + 1e-5 on [0, 2]",
            GridSpec.from_spacing(0.0, 2.0, 0.0202),
            heat_initial,
            internal=InternalEnergy.entropy(),
            tau=0.0025,
            beta_inv_sq=1.0,
            t_max=0.1,
            tol=1.25e-7,
        ),
        Preset(
            "pme1d",
            "porous medium m = 2 from a Barenblatt profile, dx = 0.0408, tau = 5e-4, beta = 1, TOL = 1e-8",
            GridSpec.from_spacing(-1.0, 1.0, 0.0408),
            pme_initial,
            internal=InternalEnergy.power(2.0),
            tau=5e-4,
            beta_inv_sq=1.0,
            t_max=0.01,
            tol=1e-8,
            params={"m": 2.0, "C": 0.8, "t0": 1e-3},
            exact=pme_exact,
        ),
        Preset(
            "nfp1d",
            "nonlinear Fokker-Planck m = 2, V = x^2/2, tau = 0.004, dx = 0.01, beta^-2 tau^2 = tau^2/40",
            GridSpec.from_spacing(-1.0, 1.0, 0.01),
            nfp_initial,
            internal=InternalEnergy.power(2.0),
            potential=Potential.quadratic(),
            tau=0.004,
            beta_inv_sq=1.0 / 40.0,
            t_max=4.0,
            params={"m": 2.0, "mass": 0.125, "sigma": 0.2},
            steady=functools.partial(nfp_steady, m_exp=2.0, mass=0.125),
        ),
        Preset(
            "agg1d",
            "aggregation W = x^2/2 - ln|x|, tau = 0.016, dx = 0.08, beta^-2 tau^2 = tau^2/640",
            GridSpec.from_spacing(-2.0, 2.0, 0.08),
            agg1d_initial,
            kernel=Kernel.attractive_repulsive(2.0, 0.0),
            tau=0.016,
            beta_inv_sq=1.0 / 640.0,
            hessian_mode=HessianMode.surrogate(1),
            t_max=10.0,
            params={"sigma": 0.5},
            steady=agg1d_steady,
        ),
        Preset(
            "dlss1d",
            "thin film flow with V = x^2/2 from a double Gaussian, tau = dx = 0.01",
            GridSpec.from_spacing(-4.0, 4.0, 0.01),
            dlss1d_initial,
            potential=Potential.quadratic(),
            tau=0.01,
            dlss=True,
            t_max=4.0,
            params={"theta": 0.1},
            steady=dlss_steady,
        ),
        Preset(
            "dlss1d_doublewell",
            "thin film flow with V = 10(1-x^2)^2, tau = 0.05, dx = 0.08",
            GridSpec.from_spacing(-2.0, 2.0, 0.08),
            dlss1d_initial,
            potential=Potential.double_well(10.0),
            tau=0.05,
            dlss=True,
            t_max=4.0,
            params={"theta": 0.1},
        ),
        Preset(
            "agg2d_ring",
            "aggregation W = |x|^4/4 - |x|^2/2 concentrating on a ring of radius 0.5, "
            "tau = 0.04, dx = 0.05, beta^-2 tau^2 = 3.2e-6, surrogate 80",
            square,
            ring_initial,
            kernel=Kernel.attractive_repulsive(4.0, 2.0),
            tau=0.04,
            beta_inv_sq=2e-3,
            hessian_mode=HessianMode.surrogate(80),
            t_max=10.0,
            center=(1.25, 1.25),
            params={"a": 4.0, "b": 2.0, "theta": 0.2, "radius": 0.5},
        ),
        Preset(
            "agg2d_disk",
            "aggregation W = |x|^2/2 - ln|x| converging to a disk of radius 1, "
            "tau = 0.04, dx = 0.05, beta^-2 tau^2 = 3.2e-6, surrogate 40",
            square,
            ring_initial,
            kernel=Kernel.attractive_repulsive(2.0, 0.0),
            tau=0.04,
            beta_inv_sq=2e-3,
            hessian_mode=HessianMode.surrogate(40),
            t_max=6.0,
            center=(1.25, 1.25),
            params={"a": 2.0, "b": 0.0, "theta": 0.2, "radius": 1.0},
        ),
        Preset(
            "aggdrift2d",
            "aggregation-drift W = |x|^2/2 - ln|x|, V = -ln|x|/4 converging to an annulus, "
            "dx = 0.1, tau = 0.1, beta^-2 tau^2 = 1.25e-5, surrogate 80",
            GridSpec.from_spacing(-1.8, 1.8, 0.1, -1.8, 1.8),
            aggdrift_initial,
            potential=Potential.logarithmic(-0.25),
            kernel=Kernel.attractive_repulsive(2.0, 0.0),
            tau=0.1,
            beta_inv_sq=1.25e-3,
            hessian_mode=HessianMode.surrogate(80),
            t_max=10.0,
            center=(0.0, 0.0),
            params={"R1": 0.5, "R2": math.sqrt(1.25), "theta": 0.2},
        ),
        Preset(
            "aggdiff2d",
            "aggregation-diffusion W = -exp(-|x|^2)/pi, U = 0.05 rho^3 on [-3, 3]^2, "
            "tau = 0.5, beta^-2 tau^2 = 3.125e-4, surrogate 40",
            GridSpec.from_spacing(-3.0, 3.0, 0.1, -3.0, 3.0),
            aggdiff_initial,
            internal=InternalEnergy.power(3.0, 0.05),
            kernel=Kernel.gaussian_attraction(),
            tau=0.5,
            beta_inv_sq=1.25e-3,
            hessian_mode=HessianMode.surrogate(40),
            t_max=20.0,
            center=(0.0, 0.0),
            params={"m": 3.0, "nu": 0.1},
        ),
        Preset(
            "dlss2d",
            "thin film flow with V = |x|^2/2 from four Gaussians on [-3.6, 3.6]^2, tau = 0.04, dx = 0.0643",
            GridSpec(-3.6, 3.6, 112, -3.6, 3.6, 112),
            dlss2d_initial,
            potential=Potential.quadratic(),
            tau=0.04,
            dlss=True,
            t_max=2.0,
            center=(0.0, 0.0),
            params={"theta": 0.3},
        ),
    ]
    return {preset.name: preset for preset in presets}


PRESETS = _build_library()


def preset_library() -> dict[str, Preset]:
    """All presets keyed by name."""
    return dict(PRESETS)


def lookup(name: str) -> Preset:
    """Return the preset called ``name``."""
    try:
        return PRESETS[name]
    except KeyError:
        raise PresetError(name, f"unknown preset, choose from {', '.join(sorted(PRESETS))}") from None
