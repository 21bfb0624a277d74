from __future__ import annotations

from dataclasses import asdict, dataclass, field

from .grid import DensityField


@dataclass
class StepDiagnostics:
    """Record of one outer time step.

    Parameters
    ----------
    step
        Index of the step, starting at 1.
    t
        Time reached by the step.
    mass
        Total mass of the new density.
    min_rho
        Smallest density value.
    energy
        Energy ``E`` of the new density.
    fisher
        Fisher information of the new density.
    modified_energy
        ``E + fisher_coeff / (2 tau) I``.
    inner_iterations
        SQP iterations spent on the step.
    qp_iterations
        Interior-point iterations summed over the SQP iterations.
    wall_time
        Seconds spent on the step.
    converged
        Whether the SQP loop met its tolerance.
    """

    step: int
    t: float
    mass: float
    min_rho: float
    energy: float
    fisher: float
    modified_energy: float
    inner_iterations: int
    qp_iterations: int
    wall_time: float
    converged: bool = True

    def as_record(self) -> dict:
        return asdict(self)


@dataclass
class Snapshot:
    """A stored density with the step that produced it."""

    step: int
    t: float
    rho: DensityField


class SnapshotIndex(dict):
    """Snapshots keyed by step index, kept in insertion (time) order. This
    class extends `dict` and has the same parameters.
    """

    def add(self, snapshot: Snapshot):
        self[snapshot.step] = snapshot

    def times(self) -> list[float]:
        return [snapshot.t for snapshot in self.values()]

    def final(self) -> Snapshot:
        """Return the latest snapshot.

        Raises
        ------
        LookupError
            If no snapshot was taken.
        """
        if not self:
            raise LookupError("no snapshots recorded")
        return self[max(self)]

    def nearest(self, t: float) -> Snapshot:
        """Return the snapshot closest in time to ``t``."""
        if not self:
            raise LookupError("no snapshots recorded")
        return min(self.values(), key=lambda snapshot: abs(snapshot.t - t))


@dataclass
class RunResult:
    """Snapshots and diagnostics of one run.

    Parameters
    ----------
    preset
        Name of the preset that was run.
    snapshots
        The stored densities, the initial one included.
    diagnostics
        One record per completed step.
    energy
        Formula of the energy that drove the flow.
    """

    preset: str
    snapshots: SnapshotIndex = field(default_factory=SnapshotIndex)
    diagnostics: list[StepDiagnostics] = field(default_factory=list)
    energy: str = ""

    def __iter__(self):
        yield self.snapshots
        yield self.diagnostics

    @property
    def final(self) -> DensityField:
        return self.snapshots.final().rho
