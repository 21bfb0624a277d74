import math

import numpy as np
import pytest
import scipy.integrate
import scipy.linalg

from wgf.jko.energy import (
    EnergySpec,
    FisherCoeff,
    InternalEnergy,
    Kernel,
    KernelError,
    Potential,
    energy_gradient,
    energy_hessian,
    energy_value,
    fisher_gradient,
    fisher_hessian,
    fisher_value,
    kernel_table,
    modified_energy,
)
from wgf.jko.grid import DensityField, Grid, cell_centers


def _random_density(grid, seed=3):
    rng = np.random.default_rng(seed)
    return DensityField(grid, rng.uniform(0.5, 1.5, grid.n_cells))


def _fd_gradient(func, x, h=1e-6):
    out = np.empty_like(x)
    for j in range(x.size):
        step = np.zeros_like(x)
        step[j] = h
        out[j] = (func(x + step) - func(x - step)) / (2 * h)
    return out


def _fd_jacobian(func, x, h=1e-6):
    columns = []
    for j in range(x.size):
        step = np.zeros_like(x)
        step[j] = h
        columns.append((func(x + step) - func(x - step)) / (2 * h))
    return np.column_stack(columns)


def _relative(approx, exact):
    return np.abs(approx - exact).max() / np.abs(exact).max()


@pytest.fixture(params=["1d", "2d"])
def grid(request):
    """Return a small 1D or 2D grid."""
    if request.param == "1d":
        return Grid(12, -1.0, 1.0)
    return Grid(4, -1.0, 1.0, 3, -0.75, 0.75)


@pytest.fixture
def full_spec(grid):
    """Return an energy with every kind of term."""
    return EnergySpec.build(
        grid, InternalEnergy.power(2.0), Potential.quadratic(), Kernel.attractive_repulsive(2.0, 0.0)
    )


def test_internal_energy_power_default_coefficient():
    """Test the default power law coefficient."""
    pme = InternalEnergy.power(2.0)
    assert pme.coeff == 1.0
    assert np.allclose(pme.value(np.array([2.0])), [4.0])
    assert InternalEnergy.power(3.0, 0.05).describe() == "0.05 rho^3"


def test_internal_energy_rejects_bad_exponent():
    """Reject exponents without a power law energy."""
    with pytest.raises(KernelError):
        InternalEnergy.power(1.0)
    with pytest.raises(KernelError):
        InternalEnergy("cubic")


def test_potential_formulas():
    """Test potential descriptions and samples."""
    assert str(Potential.logarithmic(-0.25)) == "-0.25 ln|x|"
    assert str(Potential.double_well()) == "10(1-x^2)^2"
    grid = Grid(4, -2.0, 2.0)
    assert np.allclose(Potential.quadratic().sample(grid), [1.125, 0.125, 0.125, 1.125])


def test_potential_singular_at_cell_center():
    """Reject a potential that is singular at a cell center."""
    grid = Grid(3, -1.5, 1.5)
    with pytest.raises(KernelError):
        Potential.logarithmic().sample(grid)


def test_kernel_cell_average_1d():
    """Compare a 1D cell average with its closed form."""
    kernel = Kernel.attractive_repulsive(2.0, 0.0)
    h = 0.5
    expected = h**2 / 6 - (math.log(h) - 1.0)
    assert kernel.cell_average(h) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("hx,hy", [(0.5, 0.5), (0.5, 0.3)])
def test_kernel_cell_average_2d(hx, hy):
    """Closed forms and the polar quadrature agree with direct integration."""
    kernel = Kernel("mixed", powers=((1.0, 2.0), (0.25, 4.0), (1.0, 3.0)), log_coeff=-1.0)

    def integrand(y, x):
        r = math.hypot(x, y)
        return r**2 + 0.25 * r**4 + r**3 - math.log(r)

    total, _ = scipy.integrate.dblquad(integrand, 0.0, hx, 0.0, hy, epsabs=1e-12, epsrel=1e-12)
    assert kernel.cell_average(hx, hy) == pytest.approx(total / (hx * hy), rel=1e-7)


def test_kernel_not_integrable():
    """Reject kernels that are not locally integrable."""
    with pytest.raises(KernelError):
        Kernel("singular", powers=((1.0, -1.0),)).cell_average(0.1)
    with pytest.raises(KernelError):
        Kernel("singular", powers=((1.0, -2.5),)).cell_average(0.1, 0.1)


def test_kernel_table_center(grid):
    """Test the shape and center entry of the kernel table."""
    kernel = Kernel.attractive_repulsive(4.0, 2.0)
    table = kernel_table(kernel, grid)
    if grid.dim == 1:
        assert table.shape == (2 * grid.nx - 1,)
        assert table[grid.nx - 1] == kernel.cell_average(grid.dx / 2)
    else:
        assert table.shape == (2 * grid.ny - 1, 2 * grid.nx - 1)
        assert table[grid.ny - 1, grid.nx - 1] == kernel.cell_average(grid.dx / 2, grid.dy / 2)
    assert np.all(np.isfinite(table))


def test_kernel_table_log_center_value():
    """Test the center entry of the 1D table for |x|^2/2 - ln|x| at h = 0.04."""
    table = kernel_table(Kernel.attractive_repulsive(2.0, 0.0), Grid(25, -1.0, 1.0))
    assert table[24] == pytest.approx(4.2191, abs=1e-4)


def test_kernel_table_symmetry(grid):
    """The table is symmetric under every axis flip."""
    table = kernel_table(Kernel.attractive_repulsive(4.0, 2.0), grid)
    if grid.dim == 1:
        assert np.array_equal(table, table[::-1])
    else:
        assert np.array_equal(table, table[::-1, :])
        assert np.array_equal(table, table[:, ::-1])


def test_interaction_convolution_matches_matrix(full_spec, grid):
    """FFT convolution agrees with the dense interaction matrix."""
    rho = _random_density(grid)
    W = full_spec.interaction_matrix()
    assert W.shape == (grid.n_cells, grid.n_cells)
    assert np.allclose(W, W.T)
    assert np.allclose(full_spec.apply_interaction(rho.values), W @ rho.values)


def test_energy_value_by_hand():
    """Test the energy of a two cell density."""
    grid = Grid(2, 0.0, 2.0)
    spec = EnergySpec.build(grid, InternalEnergy.power(2.0), Potential.quadratic())
    rho = DensityField(grid, [1.0, 2.0])
    # centers 0.5 and 1.5
    expected = (1.0 + 0.125 * 1.0) + (4.0 + 1.125 * 2.0)
    assert energy_value(rho, spec) == pytest.approx(expected)


def test_energy_gradient_and_hessian(full_spec, grid):
    """Compare energy derivatives with finite differences."""
    rho = _random_density(grid)

    def value(x):
        return energy_value(DensityField(grid, x), full_spec)

    def gradient(x):
        return energy_gradient(DensityField(grid, x), full_spec)

    assert _relative(_fd_gradient(value, rho.values), gradient(rho.values)) < 1e-7
    hessian = energy_hessian(rho, full_spec).toarray()
    assert _relative(_fd_jacobian(gradient, rho.values), hessian) < 1e-7


def test_energy_hessian_without_interaction(full_spec, grid):
    """Without interaction the energy Hessian is diagonal."""
    rho = _random_density(grid)
    hessian = energy_hessian(rho, full_spec, include_interaction=False)
    assert hessian.nnz == grid.n_cells


def test_surrogate_spec_drops_interaction(full_spec, grid):
    """The surrogate energy swaps interaction for entropy."""
    surrogate = full_spec.surrogate()
    assert surrogate.interaction is None
    assert surrogate.entropy_augmented
    rho = _random_density(grid)
    expected = energy_value(rho, EnergySpec.build(grid, InternalEnergy.power(2.0), Potential.quadratic()))
    expected += float(np.sum(rho.values * np.log(rho.values)) * grid.cell_volume)
    assert energy_value(rho, surrogate) == pytest.approx(expected)


def test_energy_description(full_spec):
    """Describe every term of the energy and of its surrogate."""
    assert full_spec.describe() == "1 rho^2 + V = |x|^2/2 + W = 0.5|x|^2 + -1ln|x|"
    assert full_spec.surrogate().describe() == "1 rho^2 + rho log rho + V = |x|^2/2"
    assert EnergySpec.build(Grid(4, 0.0, 1.0)).describe() == "0"


def test_fisher_of_constant_density_vanishes(grid):
    """A constant density has no Fisher information."""
    rho = DensityField(grid, np.full(grid.n_cells, 0.7))
    assert fisher_value(rho) == 0.0
    assert np.allclose(fisher_gradient(rho), 0.0)


def test_fisher_value_by_hand():
    """Test the Fisher information of a two cell density."""
    grid = Grid(2, 0.0, 2.0)
    rho = DensityField(grid, [1.0, math.e])
    assert fisher_value(rho) == pytest.approx(0.5 * (1.0 + math.e))


def test_fisher_derivatives(grid):
    """Compare Fisher derivatives with finite differences."""
    rho = _random_density(grid, seed=11)

    def value(x):
        return fisher_value(DensityField(grid, x))

    def gradient(x):
        return fisher_gradient(DensityField(grid, x))

    assert _relative(_fd_gradient(value, rho.values), gradient(rho.values)) < 1e-7
    hessian = fisher_hessian(rho).toarray()
    assert np.allclose(hessian, hessian.T)
    assert _relative(_fd_jacobian(gradient, rho.values), hessian) < 1e-7
    assert np.linalg.eigvalsh(hessian).min() > -1e-10


def test_fisher_of_gaussian():
    """The standard Gaussian has unit Fisher information."""
    grid = Grid(400, -6.0, 6.0)
    x = cell_centers(grid)
    rho = DensityField(grid, np.exp(-(x**2) / 2) / math.sqrt(2 * math.pi))
    assert fisher_value(rho) == pytest.approx(1.0, rel=1e-2)


def test_fisher_diverges_as_density_vanishes():
    """The Fisher information grows without bound as one cell empties."""
    grid = Grid(10, 0.0, 1.0)
    values = []
    for eps in [1e-2, 1e-4, 1e-6, 1e-8, 1e-10]:
        rho = np.ones(grid.n_cells)
        rho[3] = eps
        values.append(fisher_value(DensityField(grid, rho)))
    assert np.all(np.diff(values) > 0)
    assert values[-1] > 10 * values[0]


def test_fisher_hessian_positive_on_zero_sum_directions(grid):
    """Mass preserving perturbations see a positive definite Fisher Hessian."""
    rho = _random_density(grid, seed=5)
    hessian = fisher_hessian(rho).toarray()
    Z = scipy.linalg.null_space(np.ones((1, grid.n_cells)))
    eigenvalues = np.linalg.eigvalsh(Z.T @ hessian @ Z)
    assert eigenvalues.min() > 1e-8 * eigenvalues.max()


def test_fisher_coefficients():
    """Test the regularization coefficient of each preset."""
    tau = 0.04
    assert FisherCoeff.standard(2.0, tau).value == pytest.approx(tau**2 / 4)
    assert FisherCoeff.from_beta_inv_sq(2e-3, tau).value == pytest.approx(3.2e-6)
    assert FisherCoeff.dlss(tau).value == tau
    assert FisherCoeff.exact_case(tau).value == 2 * tau
    with pytest.raises(ValueError):
        FisherCoeff(-1.0)


def test_modified_energy(full_spec, grid):
    """Test the modified energy."""
    rho = _random_density(grid)
    coeff = FisherCoeff(1e-3)
    expected = energy_value(rho, full_spec) + 1e-3 / 0.2 * fisher_value(rho)
    assert modified_energy(rho, full_spec, coeff, 0.1) == pytest.approx(expected)
