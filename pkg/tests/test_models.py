import pytest

from wgf.jko.grid import DensityField, Grid
from wgf.jko.models import RunResult, Snapshot, SnapshotIndex, StepDiagnostics

grid = Grid(2, 0.0, 1.0)


def _snapshots(steps, tau=0.5):
    index = SnapshotIndex()
    for step in steps:
        index.add(Snapshot(step, step * tau, DensityField(grid, [1.0, float(step + 1)])))
    return index


def test_snapshot_index_order():
    """Snapshots keep insertion order and report their times."""
    index = _snapshots([0, 2, 5])
    assert list(index) == [0, 2, 5]
    assert index.times() == [0.0, 1.0, 2.5]
    assert index.final().step == 5


def test_snapshot_index_nearest():
    """Find the snapshot closest in time."""
    index = _snapshots([0, 2, 5])
    assert index.nearest(0.9).step == 2
    assert index.nearest(100.0).step == 5


def test_empty_snapshot_index():
    """An empty index has no final snapshot."""
    index = SnapshotIndex()
    with pytest.raises(LookupError):
        index.final()
    with pytest.raises(LookupError):
        index.nearest(0.0)


def test_run_result_unpacks():
    """A run result unpacks into snapshots and diagnostics."""
    record = StepDiagnostics(1, 0.5, 1.5, 1.0, 0.1, 0.0, 0.1, 3, 12, 0.01)
    result = RunResult("heat1d", _snapshots([0, 1]), [record])
    snapshots, diagnostics = result
    assert snapshots is result.snapshots
    assert diagnostics == [record]
    assert result.final is snapshots[1].rho
    assert record.as_record()["qp_iterations"] == 12
    assert record.as_record()["converged"] is True
