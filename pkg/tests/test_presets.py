import numpy as np
import pytest

from wgf.jko.objective import HessianMode
from wgf.jko.presets import GridSpec, PresetError, lookup, preset_library

NAMES = sorted(preset_library())


def test_library_contents():
    """Test the preset names and that the library is a copy."""
    assert set(NAMES) == {
        "heat1d",
        "pme1d",
        "nfp1d",
        "agg1d",
        "dlss1d",
        "dlss1d_doublewell",
        "agg2d_ring",
        "agg2d_disk",
        "aggdrift2d",
        "aggdiff2d",
        "dlss2d",
    }
    library = preset_library()
    del library["heat1d"]
    assert "heat1d" in preset_library()


def test_lookup_unknown():
    """Unknown presets raise a KeyError naming them."""
    with pytest.raises(PresetError) as e:
        lookup("heat3d")
    assert isinstance(e.value, KeyError)
    assert e.value.name == "heat3d"
    assert str(e.value).startswith("'heat3d': unknown preset")


@pytest.mark.parametrize(
    "name,nx,ny",
    [
        ("heat1d", 99, None),
        ("pme1d", 49, None),
        ("nfp1d", 200, None),
        ("agg1d", 50, None),
        ("agg2d_ring", 50, 50),
        ("aggdrift2d", 36, 36),
        ("aggdiff2d", 60, 60),
        ("dlss2d", 112, 112),
    ],
)
def test_grid_resolution(name, nx, ny):
    """Test preset resolutions."""
    grid = lookup(name).build_grid()
    assert grid.nx == nx
    assert grid.ny == ny


@pytest.mark.parametrize(
    "name,coeff",
    [
        ("nfp1d", 4e-7),
        ("agg1d", 4e-7),
        ("agg2d_ring", 3.2e-6),
        ("aggdrift2d", 1.25e-5),
        ("aggdiff2d", 3.125e-4),
    ],
)
def test_fisher_coefficients(name, coeff):
    """Test the regularization coefficient of each preset."""
    assert lookup(name).fisher_coeff.value == pytest.approx(coeff)


def test_thin_film_coefficient_is_tau():
    """Thin film presets use tau as coefficient."""
    dlss = lookup("dlss1d")
    assert dlss.fisher_coeff.value == dlss.tau
    assert lookup("dlss2d").fisher_coeff.value == pytest.approx(0.04)


def test_experiment_constants():
    """Test experiment constants."""
    pme = lookup("pme1d")
    assert pme.params["C"] == 0.8
    assert pme.exact is not None
    with pytest.raises(TypeError):
        pme.params["C"] = 1.0
    assert str(lookup("aggdrift2d").potential) == "-0.25 ln|x|"
    assert lookup("agg2d_ring").hessian_mode == HessianMode.surrogate(80)
    assert lookup("aggdiff2d").hessian_mode == HessianMode.surrogate(40)
    assert lookup("agg1d").steady is not None


@pytest.mark.parametrize("name", NAMES)
def test_initial_density_and_energy(name):
    """Every preset builds a positive density, an energy and a step problem."""
    preset = lookup(name).with_overrides(nx=16)
    grid = preset.build_grid()
    rho0 = preset.initial_density(grid)
    assert np.all(rho0.values > 0)
    assert np.isfinite(rho0.mass)
    spec = preset.energy_spec(grid)
    assert spec.grid == grid
    problem = preset.problem(rho0, spec)
    assert problem.fisher_coeff == preset.fisher_coeff
    assert problem.hessian_mode == preset.hessian_mode


def test_sqp_params():
    """Test solver controls derived from a preset."""
    params = lookup("pme1d").sqp_params(hessian_refresh=2)
    assert params.tol_rel == 1e-8
    assert params.hessian_refresh == 2


def test_overrides():
    """Test run parameter overrides."""
    heat = lookup("heat1d")
    changed = heat.with_overrides(nx=40, tau=0.01, beta=2.0, t_max=None)
    assert changed.grid.nx == 40
    assert changed.tau == 0.01
    assert changed.beta_inv_sq == 0.25
    assert changed.t_max == heat.t_max
    assert heat.grid.nx == 99

    ring = lookup("agg2d_ring").with_overrides(nx=40, beta_tilde_mult=10)
    assert (ring.grid.nx, ring.grid.ny) == (40, 40)
    assert ring.hessian_mode == HessianMode.surrogate(10)
    assert lookup("agg2d_ring").with_overrides(nx=40, ny=20).grid.ny == 20


@pytest.mark.parametrize(
    "name,overrides,key",
    [
        ("heat1d", {"ny": 10}, "ny"),
        ("dlss1d", {"beta": 2.0}, "beta"),
        ("heat1d", {"colour": "blue"}, "colour"),
    ],
)
def test_bad_overrides(name, overrides, key):
    """Reject unknown or inapplicable overrides."""
    with pytest.raises(PresetError) as e:
        lookup(name).with_overrides(**overrides)
    assert e.value.name == key


def test_grid_spec():
    """Test grid specs."""
    spec = GridSpec.from_spacing(0.0, 1.0, 0.1, 0.0, 0.5)
    assert (spec.nx, spec.ny, spec.dim) == (10, 5, 2)
    assert spec.with_cells(20).ny == 10
    assert GridSpec(0.0, 1.0, 4).with_cells(8).build().nx == 8
