"""Command-line front end: static checking and time-series simulation.

Exit codes: 0 success, 1 static model errors, 2 runtime/IO/numeric errors.
Diagnostics go to standard error, CSV output to ``--out`` or standard out.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .analyzer import (
    analyze, derive_reaction_network, format_diagnostic, has_errors,
)
from .kinetics import (
    DivisionByZeroError, bind_network, resolve_parameters,
)
from .model import (
    BinaryOp, BioPepaSystem, LocationSizeRef, Negate, NonpositiveSizeError,
    Number, ParameterRef, SpeciesRef, TimeRef,
)
from .odesim import (
    NumericOverflowError, StepUnderflowError, TimeSeries, build_vector_field,
    integrate_dopri, integrate_rk4,
)
from .parser import parse_system
from .stochsim import (
    Ensemble, NegativePropensityError, RngState, run_ensemble,
    simulate_direct, simulate_next_reaction, simulate_tau_leap,
)

METHODS = ("ode-rk4", "ode-dopri", "ssa", "nrm", "tau")


class UnknownOverrideError(KeyError):
    pass


@dataclass
class RunConfig:
    path: str
    method: str
    stop_time: float
    points: int = 101
    runs: int = 1
    seed: int = 0
    step: float = 0.01
    rtol: float = 1e-6
    atol: float = 1e-9
    tau: float = 0.01
    overrides: dict[str, float] = field(default_factory=dict)
    species: Optional[list[str]] = None
    out: Optional[str] = None
    workers: int = 0  # 0: pick from the cpu count

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.stop_time <= 0:
            raise ValueError("stop time must be positive")
        if self.points < 2:
            raise ValueError("at least 2 grid points are required")
        if self.runs < 1:
            raise ValueError("at least 1 run is required")


def apply_overrides(resolved: dict[str, float],
                    overrides: dict[str, float]) -> dict[str, float]:
    """Replace resolved parameter values; overrides are terminal, so
    parameters derived from an overridden one keep their base values."""
    updated = dict(resolved)
    for name, value in overrides.items():
        if name not in updated:
            raise UnknownOverrideError(name)
        updated[name] = float(value)
    return updated


# ---------------------------------------------------------------------------
# Observables
# ---------------------------------------------------------------------------

def _eval_columnwise(expr, states, times, index, parameters, sizes):
    """Vectorised evaluation of an observable over sampled states.

    ``states`` is (..., species); broadcasting handles both single
    trajectories and per-run ensemble stacks.  Division by zero yields NaN
    cells rather than aborting.
    """
    if isinstance(expr, Number):
        return np.full(states.shape[:-1], expr.value)
    if isinstance(expr, ParameterRef):
        return np.full(states.shape[:-1], parameters[expr.name])
    if isinstance(expr, SpeciesRef):
        return states[..., index[(expr.species, expr.location)]].astype(float)
    if isinstance(expr, LocationSizeRef):
        size = sizes[expr.location]
        if callable(size):
            values = np.array([size(t) for t in times])
            return np.broadcast_to(values, states.shape[:-1]).copy()
        return np.full(states.shape[:-1], size)
    if isinstance(expr, TimeRef):
        return np.broadcast_to(times, states.shape[:-1]).astype(float).copy()
    if isinstance(expr, Negate):
        return -_eval_columnwise(expr.operand, states, times, index,
                                 parameters, sizes)
    if isinstance(expr, BinaryOp):
        left = _eval_columnwise(expr.left, states, times, index, parameters,
                                sizes)
        right = _eval_columnwise(expr.right, states, times, index,
                                 parameters, sizes)
        if expr.op == "+":
            return left + right
        if expr.op == "-":
            return left - right
        if expr.op == "*":
            return left * right
        with np.errstate(divide="ignore", invalid="ignore"):
            out = left / right
        return np.where(np.isfinite(out), out, np.nan)
    raise TypeError(f"cannot evaluate observable node {expr!r}")


def eval_observables(system: BioPepaSystem, result, network, parameters,
                     sizes, warn=None):
    """Attach one derived column per observable.

    Time series get pointwise values; ensembles evaluate per run and then
    report the across-run mean and standard deviation (the mean of a
    nonlinear observable is not the observable of the mean).
    """
    index = {key: i for i, key in enumerate(network.species_index)}
    for obs in system.observables:
        if isinstance(result, Ensemble):
            values = _eval_columnwise(obs.body, result.run_states,
                                      result.grid, index, parameters, sizes)
            mean = values.mean(axis=0)
            std = (values.std(axis=0, ddof=1) if result.runs > 1
                   else np.zeros_like(mean))
            columns = {f"{obs.name}:mean": mean, f"{obs.name}:std": std}
            bad = int(np.count_nonzero(~np.isfinite(values)))
        else:
            mean = _eval_columnwise(obs.body, result.states, result.grid,
                                    index, parameters, sizes)
            columns = {obs.name: mean}
            bad = int(np.count_nonzero(~np.isfinite(mean)))
        if bad and warn is not None:
            warn(f"observable {obs.name}: {bad} undefined point(s) "
                 "(division by zero) left empty")
        if not hasattr(result, "observables"):
            result.observables = {}
        result.observables = {**getattr(result, "observables", {}), **columns}
    return result


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

def _format_value(value) -> str:
    value = float(value)
    if value != value:  # NaN: undefined observable point
        return ""
    return f"{value:.9g}"


def _columns_for(result, network, selection, observable_names):
    labels = network.labels
    if selection is None:
        species = list(labels)
        observables = list(observable_names)
    else:
        species, observables = [], []
        for token in selection:
            if token in labels:
                species.append(token)
            elif token in observable_names:
                observables.append(token)
            else:
                raise KeyError(token)

    header = ["time"]
    columns = [np.asarray(result.grid, dtype=float)]
    obs = getattr(result, "observables", {})
    if isinstance(result, Ensemble):
        for label in species:
            i = labels.index(label)
            header += [f"{label}:mean", f"{label}:std"]
            columns += [result.mean[:, i], result.std[:, i]]
        for name in observables:
            header += [f"{name}:mean", f"{name}:std"]
            columns += [obs[f"{name}:mean"], obs[f"{name}:std"]]
    else:
        for label in species:
            i = labels.index(label)
            header.append(label)
            columns.append(result.states[:, i])
        for name in observables:
            header.append(name)
            columns.append(obs[name])
    return header, columns


def write_csv(result, network, selection, observable_names, stream) -> None:
    """Comma-separated output: header row, one row per grid point, values
    with up to 9 significant digits."""
    header, columns = _columns_for(result, network, selection,
                                   observable_names)
    stream.write(",".join(header) + "\n")
    rows = len(columns[0])
    for row in range(rows):
        stream.write(",".join(_format_value(col[row]) for col in columns)
                     + "\n")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _load_system(path, stderr):
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        print(f"ERROR IO {path} {exc.strerror or exc}", file=stderr)
        return None, 2
    system, parse_diags = parse_system(text)
    for diag in parse_diags:
        print(format_diagnostic(diag, path), file=stderr)
    if system is None:
        return None, 1
    result = analyze(system)
    for diag in result.diagnostics:
        print(format_diagnostic(diag, path), file=stderr)
    if not result.ok:
        return None, 1
    return result.system, 0


def cmd_check(path: str, stderr=None) -> int:
    """Parse and statically check a model; exit 0 only when error-free."""
    stderr = stderr if stderr is not None else sys.stderr
    _, status = _load_system(path, stderr)
    return status


def cmd_simulate(config: RunConfig, stdout=None, stderr=None) -> int:
    stdout = stdout if stdout is not None else sys.stdout
    stderr = stderr if stderr is not None else sys.stderr

    system, status = _load_system(config.path, stderr)
    if system is None:
        return status

    try:
        parameters = apply_overrides(resolve_parameters(system.parameters),
                                     config.overrides)
    except UnknownOverrideError as exc:
        print(f"ERROR UNKNOWN_OVERRIDE {config.path} --set names unknown "
              f"parameter {exc.args[0]}", file=stderr)
        return 1

    network = derive_reaction_network(system)
    rates = bind_network(system, network, parameters=parameters)
    binding = rates[0].binding if rates else None
    sizes = binding.location_sizes if binding else {}

    try:
        result = _run(config, network, rates)
        eval_observables(system, result, network, parameters, sizes,
                         warn=lambda msg: print(f"WARNING OBSERVABLE "
                                                f"{config.path} {msg}",
                                                file=stderr))
        observable_names = [obs.name for obs in system.observables]
        if config.out:
            with open(config.out, "w", encoding="utf-8", newline="") \
                    as handle:
                write_csv(result, network, config.species, observable_names,
                          handle)
        else:
            write_csv(result, network, config.species, observable_names,
                      stdout)
    except KeyError as exc:
        print(f"ERROR UNKNOWN_SELECTION {config.path} --species names "
              f"unknown column {exc.args[0]}", file=stderr)
        return 1
    except (DivisionByZeroError, NumericOverflowError, StepUnderflowError,
            NegativePropensityError, NonpositiveSizeError) as exc:
        print(f"ERROR {type(exc).__name__} {config.path} {exc}", file=stderr)
        return 2
    except OSError as exc:
        print(f"ERROR IO {config.out} {exc.strerror or exc}", file=stderr)
        return 2
    return 0


def _run(config: RunConfig, network, rates):
    x0 = network.initial_state
    if config.method == "ode-rk4":
        fieldfn = build_vector_field(network, rates)
        return integrate_rk4(fieldfn, x0.astype(float), 0.0,
                             config.stop_time, config.step,
                             points=config.points)
    if config.method == "ode-dopri":
        fieldfn = build_vector_field(network, rates)
        return integrate_dopri(fieldfn, x0.astype(float), 0.0,
                               config.stop_time, config.rtol, config.atol,
                               points=config.points)

    method = {"ssa": "direct", "nrm": "next-reaction",
              "tau": "tau-leap"}[config.method]
    if config.runs == 1:
        rng = RngState(config.seed, 0)
        if method == "direct":
            return simulate_direct(network, rates, x0, config.stop_time,
                                   rng, points=config.points)
        if method == "next-reaction":
            return simulate_next_reaction(network, rates, x0,
                                          config.stop_time, rng,
                                          points=config.points)
        return simulate_tau_leap(network, rates, x0, config.stop_time,
                                 config.tau, rng, points=config.points)
    workers = config.workers or min(8, os.cpu_count() or 1)
    return run_ensemble(method, network, rates, x0, config.stop_time,
                        points=config.points, runs=config.runs,
                        master_seed=config.seed, tau=config.tau,
                        workers=workers)


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _build_argparser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="biopepa",
        description="Check and simulate Bio-PEPA models with locations.")
    sub = parser.add_subparsers(dest="command", required=True)

    check = sub.add_parser("check", help="statically validate a model file")
    check.add_argument("file")

    sim = sub.add_parser("simulate", help="run a time-series simulation")
    sim.add_argument("file")
    sim.add_argument("--method", required=True, choices=METHODS)
    sim.add_argument("--stop", required=True, type=float,
                     help="simulation end time")
    sim.add_argument("--points", required=True, type=int,
                     help="number of uniform output grid points")
    sim.add_argument("--runs", type=int, default=1,
                     help="stochastic runs (>1 reports mean and std)")
    sim.add_argument("--seed", type=int, default=0, help="master seed")
    sim.add_argument("--step", type=float, default=0.01,
                     help="fixed step for ode-rk4")
    sim.add_argument("--rtol", type=float, default=1e-6)
    sim.add_argument("--atol", type=float, default=1e-9)
    sim.add_argument("--tau", type=float, default=0.01,
                     help="leap interval for the tau method")
    sim.add_argument("--set", action="append", default=[], metavar="NAME=V",
                     help="override a parameter value (repeatable)")
    sim.add_argument("--species", default=None,
                     help="comma list of name@location or observable columns")
    sim.add_argument("--workers", type=int, default=0,
                     help="threads for ensemble runs (0: automatic)")
    sim.add_argument("--out", default=None, help="CSV output path")
    return parser


def _parse_overrides(pairs: Sequence[str]) -> dict[str, float]:
    overrides = {}
    for pair in pairs:
        name, sep, value = pair.partition("=")
        if not sep:
            raise ValueError(f"--set expects NAME=VALUE, got {pair!r}")
        overrides[name.strip()] = float(value)
    return overrides


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_argparser().parse_args(argv)
    if args.command == "check":
        return cmd_check(args.file)
    try:
        config = RunConfig(
            path=args.file, method=args.method, stop_time=args.stop,
            points=args.points, runs=args.runs, seed=args.seed,
            step=args.step, rtol=args.rtol, atol=args.atol, tau=args.tau,
            overrides=_parse_overrides(args.set),
            species=(args.species.split(",") if args.species else None),
            out=args.out, workers=args.workers)
    except ValueError as exc:
        print(f"ERROR CONFIG {exc}", file=sys.stderr)
        return 1
    return cmd_simulate(config)


if __name__ == "__main__":
    sys.exit(main())
