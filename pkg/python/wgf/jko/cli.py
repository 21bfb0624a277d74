"""Command-line entry point and output writers.

Configuration is layered: preset defaults, then a ``key=value`` file given
with ``--config``, then command-line flags.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import re
import sys
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field
from typing import TextIO

import numpy as np

from .driver import (
    ProgressReporter,
    Simulation,
    convergence_study,
    equilibrium_density,
    reference_density,
)
from .grid import DensityField, cell_centers
from .models import RunResult, SnapshotIndex, StepDiagnostics
from .objective import JKOStepProblem, StateVector, objective_gradient, objective_hessian, objective_value
from .oracles import l1_err, linf_err
from .presets import Preset, PresetError, lookup, preset_library
from .sqp import StepAbortedError

logger = logging.getLogger("wgf.jko")

OUTPUT_ENV = "WGF_JKO_OUTPUT"
DEFAULT_OUTPUT = "wgf-jko-output"
DERIVCHECK_LIMIT = 1e-5

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2

COMMANDS = ("run", "convergence", "steady", "derivcheck", "list-presets")
OVERRIDE_KEYS = (
    "nx",
    "ny",
    "tau",
    "beta",
    "beta_tilde_mult",
    "t_max",
    "tol",
    "max_inner",
    "qp_tol",
    "snapshot_stride",
)


class ConfigError(Exception):
    """An exception for unusable configuration.

    Parameters
    ----------
    token
        The offending key, flag or value.
    reason
        Human readable explanation.
    """

    def __init__(self, token: str, reason: str):
        super().__init__(token, reason)
        self.token = token
        self.reason = reason

    def __str__(self):
        return f"{self.token}: {self.reason}"


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(item) for item in text.split(",") if item.strip())


CONFIG_KEYS = {
    "preset": str,
    "nx": int,
    "ny": int,
    "tau": float,
    "beta": float,
    "beta_tilde_mult": int,
    "t_max": float,
    "tol": float,
    "max_inner": int,
    "qp_tol": float,
    "snapshot_stride": int,
    "seed": int,
    "output": str,
    "taus": _float_list,
}


def _coerce(key: str, text: str):
    if key not in CONFIG_KEYS:
        raise ConfigError(key, "unknown configuration key")
    try:
        return CONFIG_KEYS[key](text.strip())
    except ValueError:
        raise ConfigError(key, f"cannot parse {text.strip()!r}") from None


def read_config_file(file_object: TextIO) -> dict:
    """Parse ``key=value`` lines, skipping blanks and ``#`` comments."""
    varre = re.compile(r"^(\w+)\s*=\s*(.*?)\s*$")
    values = {}
    for line in file_object:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        m = varre.match(line)
        if not m:
            raise ConfigError(line, "expected key=value")
        key, value = m.groups()
        values[key] = _coerce(key, value)
    return values


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration of one invocation."""

    command: str
    preset: str | None = None
    overrides: Mapping[str, float] = field(default_factory=dict)
    seed: int = 0
    output: str = DEFAULT_OUTPUT
    taus: tuple[float, ...] = ()
    verbose: bool = False
    corrupt_gradient: bool = False

    def resolve_preset(self) -> Preset:
        if self.preset is None:
            raise ConfigError("preset", "no preset given")
        try:
            return lookup(self.preset).with_overrides(**self.overrides)
        except PresetError as e:
            raise ConfigError(e.name, e.reason) from None

    def as_record(self) -> dict:
        record = asdict(self)
        record["overrides"] = dict(self.overrides)
        record["taus"] = list(self.taus)
        return record


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        token = message.split(": ", 1)[-1] if "unrecognized arguments" in message else self.prog
        raise ConfigError(token, message)


def _build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="wgf-jko", description="Fisher-regularized JKO solver for gradient flows")
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)
    for command in COMMANDS:
        sub = subparsers.add_parser(command)
        sub.add_argument("-v", "--verbose", action="store_true", help="log every solver iteration")
        if command == "list-presets":
            continue
        sub.add_argument("--config", help="key=value configuration file")
        for key in CONFIG_KEYS:
            flags = dict.fromkeys([f"--{key}", f"--{key.replace('_', '-')}"])
            sub.add_argument(*flags, dest=key, default=None, metavar=key.upper())
        if command == "derivcheck":
            sub.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    return parser


def parse_config(argv: Sequence[str], environ: Mapping[str, str] | None = None) -> RunConfig:
    """Resolve flags, an optional config file and the environment.

    Raises
    ------
    ConfigError
        For an unknown flag or key, an unparsable number, or a missing or
        unknown preset.
    """
    environ = os.environ if environ is None else environ
    args = _build_parser().parse_args(list(argv))
    if args.command == "list-presets":
        return RunConfig("list-presets", verbose=args.verbose)

    values: dict = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fp:
                values.update(read_config_file(fp))
        except OSError as e:
            raise ConfigError(args.config, f"cannot read configuration file: {e.strerror}") from None
    for key in CONFIG_KEYS:
        flag = getattr(args, key)
        if flag is not None:
            values[key] = _coerce(key, flag)

    config = RunConfig(
        command=args.command,
        preset=values.get("preset"),
        overrides={key: values[key] for key in OVERRIDE_KEYS if key in values},
        seed=values.get("seed", 0),
        output=values.get("output", environ.get(OUTPUT_ENV, DEFAULT_OUTPUT)),
        taus=values.get("taus", ()),
        verbose=args.verbose,
        corrupt_gradient=getattr(args, "corrupt_gradient", False),
    )
    config.resolve_preset()
    if config.command == "convergence" and len(config.taus) < 2:
        raise ConfigError("taus", "the convergence command needs at least two step sizes")
    return config


def snapshot_filename(t: float) -> str:
    """Name of the snapshot file for time ``t``."""
    return f"rho_t{t:.6f}.csv"


def write_snapshot(path: str, rho: DensityField):
    """One row per cell, coordinates first, floats in round-trip precision."""
    centers = cell_centers(rho.grid)
    columns = [centers] if rho.grid.dim == 1 else [centers[:, 0], centers[:, 1]]
    header = ["x", "rho"] if rho.grid.dim == 1 else ["x", "y", "rho"]
    with open(path, "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(header)
        for row in zip(*columns, rho.values):
            writer.writerow([repr(float(value)) for value in row])


def write_diagnostics(path: str, diagnostics: Sequence[StepDiagnostics]):
    """One JSON object per step."""
    with open(path, "w", encoding="utf-8") as fp:
        for record in diagnostics:
            fp.write(json.dumps(record.as_record()) + "\n")


def write_outputs(
    snapshots: SnapshotIndex,
    diagnostics: Sequence[StepDiagnostics],
    directory: str,
    config: RunConfig,
    energy: str | None = None,
) -> list[str]:
    """Write snapshot CSVs, ``diagnostics.jsonl`` and ``manifest.json``.

    ``energy``, when given, is recorded in the manifest. Returns the paths
    written.
    """
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as e:
        raise ConfigError(directory, f"cannot create output directory: {e.strerror}") from None
    if not os.access(directory, os.W_OK):
        raise ConfigError(directory, "output directory isn't writable")

    written = []
    for snapshot in snapshots.values():
        path = os.path.join(directory, snapshot_filename(snapshot.t))
        write_snapshot(path, snapshot.rho)
        written.append(path)
    path = os.path.join(directory, "diagnostics.jsonl")
    write_diagnostics(path, diagnostics)
    written.append(path)
    path = os.path.join(directory, "manifest.json")
    with open(path, "w", encoding="utf-8") as fp:
        record = config.as_record()
        if energy is not None:
            record["energy"] = energy
        json.dump(record, fp, indent=2, sort_keys=True)
        fp.write("\n")
    written.append(path)
    return written


@dataclass
class DerivativeReport:
    """Largest relative finite-difference mismatches."""

    gradient_error: float
    hessian_error: float
    mode: str

    @property
    def passed(self) -> bool:
        return max(self.gradient_error, self.hessian_error) <= DERIVCHECK_LIMIT


def _relative(approx: np.ndarray, exact: np.ndarray) -> float:
    return float(np.abs(approx - exact).max() / max(np.abs(exact).max(), 1e-12))


def random_interior_point(problem: JKOStepProblem, seed: int) -> StateVector:
    """Densities in ``[0.5, 1.5]`` and fluxes of size 0.1, seeded."""
    rng = np.random.default_rng(seed)
    grid = problem.grid
    rho = rng.uniform(0.5, 1.5, grid.n_cells)
    m = rng.normal(scale=0.1, size=grid.n_interior_faces)
    return StateVector(grid, np.concatenate([rho, m]))


def derivative_check(
    problem: JKOStepProblem, u: StateVector, h: float = 1e-6, corrupt_gradient: bool = False
) -> DerivativeReport:
    """Compare analytic derivatives with central differences.

    The gradient is checked against differences of the objective and the
    Hessian against differences of the gradient. In surrogate mode the
    Hessian is checked against the model objective it is the exact Hessian
    of.
    """
    point = u.values
    gradient = objective_gradient(point, problem)
    if corrupt_gradient:
        gradient = gradient.copy()
        gradient[0] += 1e-3 * (1.0 + abs(gradient[0]))
    model = problem.surrogate() if problem.hessian_mode.kind == "surrogate" else problem
    hessian = objective_hessian(point, problem).toarray()

    fd_gradient = np.empty_like(point)
    fd_hessian = np.empty((point.size, point.size))
    for j in range(point.size):
        step = np.zeros_like(point)
        step[j] = h
        forward, backward = point + step, point - step
        fd_gradient[j] = (objective_value(forward, problem) - objective_value(backward, problem)) / (2 * h)
        fd_hessian[:, j] = objective_gradient(forward, model) - objective_gradient(backward, model)
    fd_hessian /= 2 * h
    return DerivativeReport(
        _relative(fd_gradient, gradient), _relative(fd_hessian, hessian), str(problem.hessian_mode)
    )


def _command_list_presets(out: TextIO) -> int:
    for name, preset in preset_library().items():
        print(f"{name:>20s}  {preset.description}", file=out)
    return EXIT_OK


def _command_run(config: RunConfig, out: TextIO) -> int:
    preset = config.resolve_preset()
    os.makedirs(config.output, exist_ok=True)
    simulation = Simulation(preset, ProgressReporter(out))
    simulation.rm_status(config.output)
    try:
        result = simulation.run()
    except StepAbortedError as e:
        simulation.write_status(config.output)
        print(f"*** {preset.name} failed: {e}", file=out)
        return EXIT_SOLVER
    write_outputs(result.snapshots, result.diagnostics, config.output, config, result.energy)
    simulation.write_status(config.output)
    return EXIT_OK


def _command_steady(config: RunConfig, out: TextIO) -> int:
    preset = config.resolve_preset()
    grid = preset.build_grid()
    target = equilibrium_density(preset, grid)
    if target is None:
        raise ConfigError(preset.name, "the preset has no known steady state")
    result: RunResult = Simulation(preset, ProgressReporter(out)).run()
    write_outputs(result.snapshots, result.diagnostics, config.output, config, result.energy)
    print(f"l1 distance to steady state: {l1_err(result.final, target):.6e}", file=out)
    print(f"max distance to steady state: {linf_err(result.final, target):.6e}", file=out)
    return EXIT_OK


def _command_convergence(config: RunConfig, out: TextIO) -> int:
    preset = config.resolve_preset()
    reference = reference_density(preset.with_overrides(tau=min(config.taus)))
    table = convergence_study(preset, config.taus, reference)
    os.makedirs(config.output, exist_ok=True)
    path = os.path.join(config.output, "convergence.csv")
    with open(path, "w", encoding="utf-8", newline="") as fp:
        fieldnames = ["tau", "richardson"] + (["reference"] if table.reference else [])
        writer = csv.DictWriter(fp, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        writer.writerows(table.rows())
    print(f"fitted order (self-convergence): {table.order:.4f}", file=out)
    if table.reference:
        print(f"fitted order (reference): {table.reference_order:.4f}", file=out)
    return EXIT_OK


def _command_derivcheck(config: RunConfig, out: TextIO) -> int:
    preset = config.resolve_preset()
    grid = preset.build_grid()
    problem = preset.problem(preset.initial_density(grid))
    u = random_interior_point(problem, config.seed)
    report = derivative_check(problem, u, corrupt_gradient=config.corrupt_gradient)
    verdict = "ok" if report.passed else "FAILED"
    print(
        f"{preset.name}: gradient error {report.gradient_error:.3e}, "
        f"{report.mode} Hessian error {report.hessian_error:.3e}: {verdict}",
        file=out,
    )
    return EXIT_OK if report.passed else EXIT_SOLVER


COMMAND_HANDLERS = {
    "run": _command_run,
    "convergence": _command_convergence,
    "steady": _command_steady,
    "derivcheck": _command_derivcheck,
}


def main(argv: Sequence[str] | None = None, out: TextIO | None = None) -> int:
    """Run one command and return its exit code."""
    argv = sys.argv[1:] if argv is None else argv
    out = sys.stdout if out is None else out
    try:
        config = parse_config(argv)
    except ConfigError as e:
        print(f"wgf-jko: error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    logging.basicConfig(
        level=logging.DEBUG if config.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    if config.command == "list-presets":
        return _command_list_presets(out)
    try:
        return COMMAND_HANDLERS[config.command](config, out)
    except ConfigError as e:
        print(f"wgf-jko: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except StepAbortedError as e:
        print(f"wgf-jko: solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER
