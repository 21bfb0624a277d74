import io
import math
import os

import numpy as np
import pytest
import yaml

import wgf.jko.sqp
from wgf.jko.driver import (
    ProgressReporter,
    Simulation,
    convergence_study,
    convergence_table,
    equilibrium_density,
    radial_profile,
    radial_shell_mass,
    reference_density,
    run,
    run_many,
)
from wgf.jko.grid import DensityField, Grid, cell_centers
from wgf.jko.presets import lookup
from wgf.jko.sqp import StepAbortedError


@pytest.fixture
def small_heat():
    """Return a four step heat preset on a coarse grid."""
    return lookup("heat1d").with_overrides(nx=20, t_max=0.01, snapshot_stride=2)


def _flaky_sqp(fail_on):
    calls = []
    real = wgf.jko.sqp.sqp_step

    def sqp_step(*args):
        calls.append(args)
        if len(calls) == fail_on:
            raise StepAbortedError("line search could not decrease the objective", 3)
        return real(*args)

    return sqp_step


def test_heat_run_preserves_structure(small_heat):
    """A heat run conserves mass and dissipates the modified energy."""
    result = Simulation(small_heat).run()
    snapshots, diagnostics = result
    assert [d.step for d in diagnostics] == [1, 2, 3, 4]
    assert diagnostics[-1].t == pytest.approx(0.01)
    initial_mass = snapshots[0].rho.mass
    energies = []
    for record in diagnostics:
        assert abs(record.mass - initial_mass) <= 1e-8
        assert record.min_rho > 0
        assert record.converged
        energies.append(record.modified_energy)
    for before, after in zip(energies[:-1], energies[1:]):
        assert after <= before + 10 * small_heat.qp_tol
    assert list(snapshots) == [0, 2, 4]
    assert result.final is snapshots[4].rho


@pytest.mark.parametrize(
    "name,overrides",
    [("heat1d", {"nx": 50, "t_max": 0.05}), ("pme1d", {"t_max": 1.5e-3})],
)
def test_steps_converge_at_preset_tolerances(name, overrides):
    """Runs near the density floor finish every step converged."""
    result = run(lookup(name).with_overrides(**overrides))
    assert result.diagnostics
    assert all(record.converged for record in result.diagnostics)
    assert all(record.min_rho > 0 for record in result.diagnostics)


def test_final_step_is_always_stored(small_heat):
    """The final density is stored regardless of the stride."""
    result = run(small_heat, {"snapshot_stride": 3})
    assert list(result.snapshots) == [0, 3, 4]
    assert result.snapshots.times() == pytest.approx([0.0, 0.0075, 0.01])


def test_status_file(small_heat, tmp_path):
    """Test writing and removing the status file."""
    simulation = Simulation(small_heat)
    simulation.run()
    simulation.write_status(tmp_path)
    with open(Simulation.status_file(tmp_path)) as sf:
        status = yaml.safe_load(sf)
    assert status == {"preset": "heat1d", "completed_steps": 4, "t_final": pytest.approx(0.01)}
    simulation.rm_status(tmp_path)
    assert not os.path.exists(Simulation.status_file(tmp_path))


def test_aborted_step(small_heat, mocker, tmp_path):
    """An aborted step is recorded and reported."""
    mocker.patch("wgf.jko.driver.sqp_step", side_effect=_flaky_sqp(fail_on=2))
    out = io.StringIO()
    simulation = Simulation(small_heat, ProgressReporter(out))
    with pytest.raises(StepAbortedError) as e:
        simulation.run()
    assert e.value.step_index == 2
    assert simulation.completed_steps == 1
    assert simulation.failed_at == {"step": 2, "reason": "line search could not decrease the objective"}
    simulation.write_status(tmp_path)
    with open(Simulation.status_file(tmp_path)) as sf:
        assert yaml.safe_load(sf)["failed_at"]["step"] == 2
    text = out.getvalue()
    assert "heat1d: step 1/4: ok" in text
    assert "*** step 2 of heat1d aborted." in text
    assert "*** inner iteration = 3" in text


def test_progress_lines(small_heat):
    """Test the progress report of a run."""
    out = io.StringIO()
    run(small_heat, progress=ProgressReporter(out))
    lines = out.getvalue().splitlines()
    assert len(lines) == 4
    assert lines[-1].strip().startswith("heat1d: step 4/4: ok (")


def test_progress_line_closed_on_unexpected_error():
    """A pending progress line is closed when an exception escapes."""
    out = io.StringIO()
    with pytest.raises(RuntimeError):
        with ProgressReporter(out).new_step("heat1d", 1, 2):
            raise RuntimeError("boom")
    assert out.getvalue().endswith(": step 1/2: \n")


def test_run_many_keeps_order(mocker):
    """Results of concurrent runs come back in input order."""
    presets = [lookup(name) for name in ("heat1d", "pme1d", "nfp1d")]
    mocker.patch("wgf.jko.driver.run", side_effect=lambda preset: preset.name)
    assert run_many(presets, workers=3) == ["heat1d", "pme1d", "nfp1d"]
    assert run_many([]) == []


def test_run_many_reraises(mocker):
    """A failed concurrent run is raised after all runs finish."""
    presets = [lookup(name) for name in ("heat1d", "pme1d")]

    def fake_run(preset):
        if preset.name == "pme1d":
            raise StepAbortedError("QP did not converge after shift escalation", 0, step_index=5)
        return preset.name

    runner = mocker.patch("wgf.jko.driver.run", side_effect=fake_run)
    with pytest.raises(StepAbortedError) as e:
        run_many(presets, workers=2)
    assert e.value.step_index == 5
    assert runner.call_count == 2


def test_convergence_table_synthetic():
    """Recover second order from synthetic results."""
    grid = Grid(10, 0.0, 1.0)
    x = cell_centers(grid)
    base = 1.0 + 0.5 * np.cos(np.pi * x)
    bump = np.sin(np.pi * x)
    taus = [0.1, 0.05, 0.025, 0.0125]
    finals = [DensityField(grid, base + tau**2 * bump) for tau in taus]
    table = convergence_table(taus, finals, DensityField(grid, base))
    assert table.order == pytest.approx(2.0)
    assert table.reference_order == pytest.approx(2.0)
    rows = table.rows()
    assert len(rows) == 4
    assert "richardson" not in rows[-1]
    assert rows[0]["reference"] == pytest.approx(0.01 * np.abs(bump).sum() * grid.dx)


def test_convergence_table_degenerate():
    """Identical results give zero errors and no order."""
    grid = Grid(4, 0.0, 1.0)
    finals = [DensityField(grid, np.ones(4))] * 3
    table = convergence_table([0.1, 0.05, 0.025], finals)
    assert table.richardson == [0.0, 0.0]
    assert math.isnan(table.order)
    assert table.reference == []
    with pytest.raises(ValueError):
        convergence_table([0.1], finals)


def test_convergence_study(small_heat):
    """Test a two run heat study."""
    table = convergence_study(small_heat, [0.0025, 0.00125], reference_density(small_heat))
    assert len(table.richardson) == 1
    assert table.richardson[0] > 0
    assert len(table.reference) == 2


def test_radial_diagnostics():
    """Test radial shell masses and profiles."""
    grid = Grid(20, -1.0, 1.0, 20, -1.0, 1.0)
    rho = DensityField(grid, np.ones(grid.n_cells))
    assert radial_shell_mass(rho, (0.0, 0.0), 0.0, 2.0) == pytest.approx(4.0)
    inner = radial_shell_mass(rho, (0.0, 0.0), 0.0, 0.5)
    assert 0.0 < inner < math.pi * 0.25 + 0.2
    edges, masses = radial_profile(rho, (0.0, 0.0))
    assert edges[0] == 0.0
    assert masses.sum() == pytest.approx(4.0)
    assert len(edges) == len(masses) + 1
    with pytest.raises(ValueError):
        radial_shell_mass(DensityField(Grid(4, 0.0, 1.0), np.ones(4)), (0.0, 0.0), 0.0, 1.0)


def test_reference_and_equilibrium(small_heat):
    """Test reference and equilibrium densities of presets."""
    heat_ref = reference_density(small_heat)
    initial = small_heat.initial_density(small_heat.build_grid())
    assert heat_ref.mass == pytest.approx(initial.mass, rel=1e-10)
    assert heat_ref.values.max() < initial.values.max()

    pme = lookup("pme1d")
    assert np.allclose(reference_density(pme).values, pme.exact(pme.build_grid(), pme.t_max))
    assert reference_density(lookup("nfp1d")) is None

    steady = equilibrium_density(lookup("agg1d"))
    assert steady.grid == lookup("agg1d").build_grid()
    assert equilibrium_density(small_heat) is None
