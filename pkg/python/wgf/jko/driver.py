"""Outer time loop, batch runs and convergence diagnostics."""

from __future__ import annotations

import asyncio
import contextlib
import logging
import math
import os
import time
from collections.abc import Awaitable, Callable, Iterable, Sequence
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np
import yaml

from .energy import energy_value, fisher_value, modified_energy
from .grid import DensityField, Grid, cell_centers
from .models import RunResult, Snapshot, StepDiagnostics
from .oracles import fit_order, l1_err, reference_heat_solver, richardson_err, sample_field, step_count
from .presets import Preset
from .sqp import SqpParams, StepAbortedError, sqp_step, warm_start

logger = logging.getLogger("wgf.jko")

ASYNC_QUEUE_WORKERS = 4


class ProgressReporter:
    """Class that writes one line per time step as an indicator of
    liveness.

    Parameters
    ----------
    out
        file this class will write the progress to
    """

    class StepProgressReporter:
        """Progress line helper class."""

        def __init__(self, out_file_obj: TextIO, name: str, step: int, n_steps: int):
            self.out = out_file_obj
            self.name = name
            self.step = step
            self.n_steps = n_steps

        def _step_started(self):
            self.out.write(f"{self.name:>20s}: step {self.step}/{self.n_steps}: ")
            self.out.flush()
            self.t0 = time.time()

        def report_result(self, error: StepAbortedError | None = None):
            elapsed_time = time.time() - self.t0
            if error is not None:
                print(f"ERROR ({elapsed_time:.1f} sec).", file=self.out)
                print(f"*** step {self.step} of {self.name} aborted.", file=self.out)
                print(f"*** inner iteration = {error.inner_iteration}", file=self.out)
                print(f"*** reason: {error.reason}", file=self.out)
            else:
                print(f"ok ({elapsed_time:.1f} sec).", file=self.out)
            self.out.flush()
            self.name = None

        def _finalize(self):
            # Only reached with a pending line when an exception escaped.
            if self.name is not None:
                self.out.write("\n")
                self.out.flush()

    def __init__(self, out_file_obj):
        self.out = out_file_obj

    @contextlib.contextmanager
    def new_step(self, name: str, step: int, n_steps: int):
        progress = ProgressReporter.StepProgressReporter(self.out, name, step, n_steps)
        progress._step_started()
        try:
            yield progress
        finally:
            progress._finalize()


class Simulation:
    """Class that runs the outer JKO loop of a preset.

    Parameters
    ----------
    preset
        the experiment, overrides already applied
    progress
        the `ProgressReporter` reporting for this run, or None for silence
    sqp_params
        inner solver controls; derived from the preset when omitted
    """

    def __init__(
        self, preset: Preset, progress: ProgressReporter | None = None, sqp_params: SqpParams | None = None
    ):
        self.preset = preset
        self.progress = progress
        self.sqp_params = sqp_params if sqp_params is not None else preset.sqp_params()
        self.completed_steps = 0
        self.t_final = 0.0
        self.failed_at: dict | None = None

    def _step_context(self, step: int, n_steps: int):
        if self.progress is None:
            return contextlib.nullcontext()
        return self.progress.new_step(self.preset.name, step, n_steps)

    def run(self) -> RunResult:
        """Execute ``ceil(t_max / tau)`` steps.

        Raises
        ------
        StepAbortedError
            With ``step_index`` set, when a step cannot be completed.
        """
        preset = self.preset
        grid = preset.build_grid()
        spec = preset.energy_spec(grid)
        rho = preset.initial_density(grid)
        problem = preset.problem(rho, spec)
        fisher_coeff = problem.fisher_coeff
        n_steps = step_count(preset.t_max, preset.tau)
        stride = max(1, preset.snapshot_stride)

        result = RunResult(preset.name, energy=spec.describe())
        result.snapshots.add(Snapshot(0, 0.0, rho))
        logger.info(
            "running %s: E = %s, %d steps of tau %.6g on %s cells, Fisher coefficient %.6g, %s Hessian",
            preset.name,
            result.energy,
            n_steps,
            preset.tau,
            "x".join(str(n) for n in reversed(grid.shape)),
            fisher_coeff.value,
            problem.hessian_mode,
        )

        rho_prev = None
        m_prev = None
        for step in range(1, n_steps + 1):
            with self._step_context(step, n_steps) as reporter:
                t0 = time.perf_counter()
                warm = warm_start(rho, rho_prev, m_prev, self.sqp_params.warm_start_floor)
                try:
                    outcome = sqp_step(problem.with_rho_prev(rho), self.sqp_params, warm)
                except StepAbortedError as exc:
                    exc.step_index = step
                    self.failed_at = {"step": step, "reason": exc.reason}
                    logger.error("%s: step %d aborted: %s", preset.name, step, exc.reason)
                    if reporter is not None:
                        reporter.report_result(exc)
                    raise
                wall_time = time.perf_counter() - t0

                rho_prev, rho, m_prev = rho, outcome.rho_next, outcome.m_next
                t = step * preset.tau
                record = StepDiagnostics(
                    step=step,
                    t=t,
                    mass=rho.mass,
                    min_rho=float(rho.values.min()),
                    energy=energy_value(rho, spec),
                    fisher=fisher_value(rho),
                    modified_energy=modified_energy(rho, spec, fisher_coeff, preset.tau),
                    inner_iterations=outcome.inner_iterations,
                    qp_iterations=outcome.qp_iterations,
                    wall_time=wall_time,
                    converged=outcome.converged,
                )
                result.diagnostics.append(record)
                if step % stride == 0 or step == n_steps:
                    result.snapshots.add(Snapshot(step, t, rho))
                self.completed_steps = step
                self.t_final = t
                logger.info(
                    "%s step %d/%d: t %.6g, mass %.12g, min rho %.3g, modified energy %.12g, %d inner",
                    preset.name,
                    step,
                    n_steps,
                    t,
                    record.mass,
                    record.min_rho,
                    record.modified_energy,
                    record.inner_iterations,
                )
                if reporter is not None:
                    reporter.report_result()
        return result

    def rm_status(self, directory: str):
        if os.path.isfile(self.status_file(directory)):
            os.remove(self.status_file(directory))

    @staticmethod
    def status_file(directory: str) -> str:
        return os.path.join(directory, "status.yaml")

    def write_status(self, directory: str):
        status = {
            "preset": self.preset.name,
            "completed_steps": self.completed_steps,
            "t_final": float(self.t_final),
        }

        if self.failed_at is not None:
            status["failed_at"] = self.failed_at

        with open(self.status_file(directory), "w", encoding="utf-8") as sf:
            yaml.safe_dump(status, sf, default_flow_style=False, sort_keys=False)


def run(
    preset: Preset,
    overrides: dict | None = None,
    progress: ProgressReporter | None = None,
    sqp_params: SqpParams | None = None,
) -> RunResult:
    """Run a preset to its final time.

    Parameters
    ----------
    preset
        The experiment.
    overrides
        Passed to `Preset.with_overrides`.
    progress
        Console reporter, if any.
    sqp_params
        Inner solver controls replacing the preset's.
    """
    if overrides:
        preset = preset.with_overrides(**overrides)
    return Simulation(preset, progress, sqp_params).run()


async def run_async_tasks(
    worker_function: Callable[[asyncio.Queue], Awaitable[None]], queue: asyncio.Queue, workers: int
):
    """Drain ``queue`` with ``workers`` concurrent consumers.

    Parameters
    ----------
    worker_function
        Coroutine function consuming items from the queue it is given; it
        must call ``queue.task_done()`` for every item it takes.
    queue
        Items still to be processed.
    workers
        How many consumers run at once.

    Returns once every item is done; the consumers are then cancelled.
    """
    tasks = [asyncio.create_task(worker_function(queue)) for _ in range(workers)]
    await queue.join()
    for task in tasks:
        task.cancel()
    await asyncio.gather(*tasks, return_exceptions=True)


async def _run_queued(presets: Sequence[Preset], workers: int) -> list[RunResult]:
    results: list[RunResult | None] = [None] * len(presets)
    exceptions = []

    async def run_worker(queue):
        while True:
            index, preset = await queue.get()
            try:
                results[index] = await asyncio.to_thread(run, preset)
            except Exception as e:
                logger.error("Run %d (%s, tau %.6g) failed: %s", index, preset.name, preset.tau, e)
                exceptions.append(e)
            finally:
                queue.task_done()

    queue = asyncio.Queue()  # type: ignore
    for item in enumerate(presets):
        queue.put_nowait(item)

    await run_async_tasks(run_worker, queue, max(1, min(workers, len(presets))))

    if len(exceptions):
        first_exception = exceptions[0]
        logger.error("At least one error occurred while running presets")
        raise first_exception
    return results  # type: ignore[return-value]


def run_many(presets: Iterable[Preset], workers: int = ASYNC_QUEUE_WORKERS) -> list[RunResult]:
    """Run independent presets concurrently on worker threads.

    Results come back in input order. If any run fails the first failure
    is raised after all runs have finished.
    """
    presets = list(presets)
    if not presets:
        return []
    return asyncio.run(_run_queued(presets, workers))


@dataclass
class ConvergenceTable:
    """Errors of a time-step refinement study.

    ``richardson`` holds ``|rho_tau - rho_tau/2|_1`` for consecutive pairs
    and is aligned with ``taus[:-1]``; ``reference`` holds the error of each
    run against a reference density, if one was given.
    """

    taus: list[float]
    richardson: list[float]
    order: float
    reference: list[float] = field(default_factory=list)
    reference_order: float = math.nan

    def rows(self) -> list[dict]:
        rows = []
        for index, tau in enumerate(self.taus):
            row = {"tau": tau}
            if index < len(self.richardson):
                row["richardson"] = self.richardson[index]
            if self.reference:
                row["reference"] = self.reference[index]
            rows.append(row)
        return rows


def _safe_order(taus: Sequence[float], errors: Sequence[float]) -> float:
    taus = np.asarray(taus, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if len(np.unique(taus)) < 2 or not np.all(errors > 0):
        return math.nan
    return fit_order(taus, errors)


def convergence_table(
    taus: Sequence[float], finals: Sequence[DensityField], reference: DensityField | None = None
) -> ConvergenceTable:
    """Compare final densities of runs with the step sizes ``taus``."""
    if len(taus) != len(finals):
        raise ValueError(f"{len(taus)} step sizes but {len(finals)} results")
    taus = [float(tau) for tau in taus]
    richardson = [richardson_err(coarse, fine) for coarse, fine in zip(finals[:-1], finals[1:])]
    table = ConvergenceTable(taus, richardson, _safe_order(taus[:-1], richardson))
    if reference is not None:
        table.reference = [l1_err(final, reference) for final in finals]
        table.reference_order = _safe_order(taus, table.reference)
    return table


def convergence_study(
    preset: Preset,
    taus: Sequence[float],
    reference: DensityField | None = None,
    workers: int = 1,
    overrides: dict | None = None,
) -> ConvergenceTable:
    """Run ``preset`` once per step size and fit the temporal order."""
    base = preset.with_overrides(**overrides) if overrides else preset
    variants = [base.with_overrides(tau=tau) for tau in taus]
    if workers > 1:
        results = run_many(variants, workers)
    else:
        results = [Simulation(variant).run() for variant in variants]
    table = convergence_table(taus, [result.final for result in results], reference)
    logger.info("convergence of %s: order %.3f over tau %s", preset.name, table.order, list(taus))
    return table


def _radii(rho: DensityField, center: tuple[float, float]) -> np.ndarray:
    if rho.grid.dim != 2:
        raise ValueError("radial diagnostics need a 2D grid")
    points = cell_centers(rho.grid)
    return np.hypot(points[:, 0] - center[0], points[:, 1] - center[1])


def radial_shell_mass(rho: DensityField, center: tuple[float, float], r_lo: float, r_hi: float) -> float:
    """Mass of the cells at distance ``r_lo`` to ``r_hi`` from ``center``."""
    r = _radii(rho, center)
    inside = (r >= r_lo) & (r <= r_hi)
    return float(rho.values[inside].sum() * rho.grid.cell_volume)


def radial_profile(
    rho: DensityField, center: tuple[float, float], dr: float | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Mass per radial shell of width ``dr`` (the cell width by default).

    Returns the shell edges and the shell masses.
    """
    r = _radii(rho, center)
    dr = rho.grid.dx if dr is None else dr
    edges = dr * np.arange(int(np.ceil(r.max() / dr)) + 2)
    masses, edges = np.histogram(r, bins=edges, weights=rho.values * rho.grid.cell_volume)
    return edges, masses


def equilibrium_density(preset: Preset, grid: Grid | None = None) -> DensityField | None:
    """The preset's steady state sampled at the cell centers, if known."""
    if preset.steady is None:
        return None
    return sample_field(grid if grid is not None else preset.build_grid(), preset.steady)


def reference_density(preset: Preset, grid: Grid | None = None, refinement: int = 16) -> DensityField | None:
    """An independent approximation of the density at ``preset.t_max``.

    Presets with an exact solution sample it. A pure heat flow is solved by
    backward Euler with ``tau / refinement`` on the same grid. Otherwise
    there is no reference and None is returned.
    """
    grid = grid if grid is not None else preset.build_grid()
    if preset.exact is not None:
        return DensityField(grid, preset.exact(grid, preset.t_max))
    if (
        preset.internal.kind == "entropy"
        and preset.potential is None
        and preset.kernel is None
        and grid.dim == 1
    ):
        tau_ref = preset.tau / refinement
        t_final = step_count(preset.t_max, preset.tau) * preset.tau
        return reference_heat_solver(preset.initial_density(grid), tau_ref, t_final)
    return None
