"""Long reference runs; select with ``pytest -m slow``."""

import numpy as np
import pytest

from wgf.jko.driver import (
    convergence_study,
    equilibrium_density,
    radial_shell_mass,
    reference_density,
    run,
    run_many,
)
from wgf.jko.oracles import exponential_decay_fit, l1_err, linf_err
from wgf.jko.presets import lookup

pytestmark = pytest.mark.slow


def _check_structure(preset, result):
    snapshots, diagnostics = result
    mass0 = snapshots[0].rho.mass
    previous = None
    for record in diagnostics:
        assert abs(record.mass - mass0) <= 1e-8 * max(1.0, mass0)
        assert record.min_rho > 0
        if previous is not None:
            assert record.modified_energy <= previous + 10 * preset.qp_tol
        previous = record.modified_energy


def test_heat_first_order_in_time():
    """The heat flow converges at first order in tau."""
    preset = lookup("heat1d").with_overrides(nx=400, t_max=0.1)
    taus = [2.5e-3, 1.25e-3, 6.25e-4, 3.125e-4]
    reference = reference_density(preset.with_overrides(tau=min(taus)))
    table = convergence_study(preset, taus, reference, workers=4)
    assert 0.8 <= table.order <= 1.2
    assert 0.8 <= table.reference_order <= 1.2


def test_porous_medium_improves_with_smaller_regularization():
    """Smaller regularization brings the porous medium flow closer to exact."""
    base = lookup("pme1d").with_overrides(nx=200, t_max=6e-3)
    variants = [base.with_overrides(beta=beta) for beta in (1.0, 2.0, 4.0)]
    results = run_many(variants, workers=3)
    errors = []
    for preset, result in zip(variants, results):
        final = result.snapshots.final()
        exact = preset.exact(final.rho.grid, final.t)
        errors.append(l1_err(final.rho, exact))
    assert errors[0] > errors[1] > errors[2]


@pytest.mark.parametrize(
    "name,overrides",
    [
        ("heat1d", {"nx": 50, "t_max": 0.05}),
        ("pme1d", {}),
        ("nfp1d", {"nx": 50, "t_max": 0.2}),
        ("agg1d", {"t_max": 0.32}),
        ("dlss1d", {"nx": 100, "t_max": 0.2}),
        ("dlss1d_doublewell", {"t_max": 0.5}),
        ("agg2d_ring", {"nx": 16, "t_max": 0.2}),
        ("aggdrift2d", {"nx": 12, "t_max": 0.5}),
        ("aggdiff2d", {"nx": 16, "t_max": 2.0}),
        ("dlss2d", {"nx": 16, "t_max": 0.2}),
    ],
)
def test_structure_preservation(name, overrides):
    """Every preset conserves mass, positivity and modified energy decay."""
    preset = lookup(name).with_overrides(**overrides)
    _check_structure(preset, run(preset))


def test_nonlinear_fokker_planck_equilibrium():
    """The nonlinear Fokker-Planck flow decays exponentially to equilibrium."""
    preset = lookup("nfp1d")
    result = run(preset)
    target = equilibrium_density(preset, result.final.grid)
    assert l1_err(result.final, target) <= 2e-2

    times = np.array([record.t for record in result.diagnostics])
    energies = np.array([record.energy for record in result.diagnostics])
    floor = energies.min()
    excess = energies - floor
    window = (times >= 0.5) & (excess > 1e-4 * excess.max())
    fit = exponential_decay_fit(times[window], energies[window], floor=floor)
    assert fit.rate > 0
    assert fit.r_squared >= 0.98


def test_aggregation_equilibrium():
    """The 1D aggregation flow reaches its equilibrium."""
    preset = lookup("agg1d")
    result = run(preset)
    assert l1_err(result.final, equilibrium_density(preset, result.final.grid)) <= 5e-2


def test_thin_film_equilibrium():
    """The thin film flow reaches the standard Gaussian."""
    preset = lookup("dlss1d")
    result = run(preset)
    assert linf_err(result.final, equilibrium_density(preset, result.final.grid)) <= 1e-2


def test_ring_concentration():
    """The ring preset concentrates on a circle of radius 0.5."""
    preset = lookup("agg2d_ring")
    final = run(preset).final
    dx = final.grid.dx
    radius = preset.params["radius"]
    shell = radial_shell_mass(final, preset.center, radius - 2 * dx, radius + 2 * dx)
    assert shell >= 0.8 * final.mass


def test_disk_concentration():
    """The disk preset fills a disk of radius 1."""
    preset = lookup("agg2d_disk")
    final = run(preset).final
    dx = final.grid.dx
    inside = radial_shell_mass(final, preset.center, 0.0, preset.params["radius"] + 2 * dx)
    assert inside >= 0.8 * final.mass


def test_annulus_concentration():
    """The aggregation-drift preset concentrates on an annulus."""
    preset = lookup("aggdrift2d")
    final = run(preset).final
    dx = final.grid.dx
    r_lo = preset.params["R1"] - 2 * dx
    r_hi = preset.params["R2"] + 2 * dx
    shell = radial_shell_mass(final, preset.center, r_lo, r_hi)
    assert shell >= 0.8 * final.mass
