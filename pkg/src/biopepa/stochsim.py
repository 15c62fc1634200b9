"""Discrete-stochastic back-end: Gillespie's direct method, the
next-reaction method with an indexed priority queue, fixed-step tau-leaping,
and seeded ensemble statistics.

All trajectories evolve an integer state; grid output holds the last value
(right-continuous step functions).  Reproducibility contract: within one
build, identical ``(method, master_seed, run_index)`` reproduce identical
event sequences; per-run substreams are derived from the master seed so
ensemble statistics do not depend on execution order.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _compile
from .analyzer import ReactionNetwork
from .kinetics import DivisionByZeroError, RateFunction
from .model import NonpositiveSizeError

_MASK64 = (1 << 64) - 1


class NegativePropensityError(ArithmeticError):
    def __init__(self, message, action: Optional[str] = None):
        super().__init__(message)
        self.action = action


class RngState:
    """xoshiro256** generator with substreams derived from a master seed.

    ``RngState(seed, i)`` produces the i-th independent substream; kernels
    advance the same four-word state in place, so interleaved Python and
    kernel draws continue one stream.
    """

    __slots__ = ("words", "master_seed", "run_index")

    def __init__(self, master_seed: int, run_index: int = 0):
        self.master_seed = master_seed
        self.run_index = run_index
        self.words = _compile.derive_stream_state(master_seed, run_index)

    def next_u64(self) -> int:
        s0, s1, s2, s3 = (int(w) for w in self.words)
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.words[0] = s0
        self.words[1] = s1
        self.words[2] = s2
        self.words[3] = s3
        return result

    def uniform(self) -> float:
        """Uniform double in (0, 1]."""
        return ((self.next_u64() >> 11) + 1) * 2.0 ** -53


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


def sample_exponential(rate: float, rng) -> float:
    """Exponential waiting time by inverse CDF: -ln(u)/rate, u in (0, 1]."""
    if rate <= 0:
        raise ValueError("exponential rate must be positive")
    return -math.log(rng.uniform()) / rate


def sample_poisson(mean: float, rng) -> int:
    """Poisson count: sequential multiplication below mean 30, transformed
    rejection (PTRS-style) above."""
    if mean < 0:
        raise ValueError("poisson mean must be nonnegative")
    if mean == 0:
        return 0
    if mean < 30.0:
        limit = math.exp(-mean)
        count = -1
        product = 1.0
        while product > limit:
            product *= rng.uniform()
            count += 1
        return count
    b = 0.931 + 2.53 * math.sqrt(mean)
    a = -0.059 + 0.02483 * b
    inv_alpha = 1.1239 + 1.1328 / (b - 3.4)
    v_r = 0.9277 - 3.6224 / (b - 2.0)
    log_mean = math.log(mean)
    while True:
        u = rng.uniform() - 0.5
        v = rng.uniform()
        us = 0.5 - abs(u)
        k = math.floor((2.0 * a / us + b) * u + mean + 0.43)
        if us >= 0.07 and v <= v_r:
            return int(k)
        if k < 0 or (us < 0.013 and v > us):
            continue
        if (math.log(v * inv_alpha / (a / (us * us) + b))
                <= k * log_mean - mean - math.lgamma(k + 1.0)):
            return int(k)


@dataclass
class StochasticTrajectory:
    """One realisation: integer state held piecewise-constant on the grid,
    optionally with the full (time, reaction index) event record."""

    grid: np.ndarray
    states: np.ndarray          # (points, species) int64
    final_state: np.ndarray
    t_end: float
    n_events: int
    event_times: Optional[np.ndarray] = None
    event_reactions: Optional[np.ndarray] = None


@dataclass
class Ensemble:
    """Per-grid-point mean and sample standard deviation over independent
    runs; ``run_states`` keeps every sampled trajectory so that derived
    quantities can be averaged per run rather than evaluated on the mean."""

    grid: np.ndarray
    labels: list[str]
    mean: np.ndarray            # (points, species)
    std: np.ndarray
    runs: int
    master_seed: int
    run_states: np.ndarray      # (runs, points, species) int64


_KERNELS = {
    "direct": _compile._run_direct,
    "next-reaction": _compile._run_next_reaction,
}


def _prepare(network, rates, x0, t0, t_end, points):
    if t_end <= t0:
        raise ValueError("t_end must exceed t0")
    xi = np.asarray(x0, dtype=np.int64).copy()
    if xi.ndim != 1 or xi.size != len(network.species_index):
        raise ValueError("state size does not match the network")
    if np.any(xi < 0):
        raise ValueError("initial counts must be nonnegative")
    if points < 2:
        raise ValueError("at least 2 grid points are required")
    compiled = _compile.compile_network(network, list(rates))
    grid = np.linspace(t0, t_end, points)
    return compiled, xi, grid


def _raise_kernel_error(err, reaction_index, network):
    action = (network.reactions[reaction_index].action
              if 0 <= reaction_index < len(network.reactions) else "?")
    if err == _compile.ERR_DIV_ZERO:
        raise DivisionByZeroError(
            f"division by zero while rating action {action}", action)
    if err == _compile.ERR_NEGATIVE_PROPENSITY:
        raise NegativePropensityError(
            f"action {action} produced a negative propensity on an integer "
            "state", action)
    if err == _compile.ERR_NONPOSITIVE_SIZE:
        raise NonpositiveSizeError(
            f"location size became nonpositive while rating action {action}")


def _simulate_event_method(kernel, network, rates, x0, t_end, rng, *,
                           t0, points, record_events, compiled=None,
                           grid=None, out=None):
    if compiled is None:
        compiled, xi, grid = _prepare(network, rates, x0, t0, t_end, points)
    else:
        xi = np.asarray(x0, dtype=np.int64).copy()
    if out is None:
        out = np.empty((grid.size, xi.size), dtype=np.int64)
    xf = xi.astype(np.float64)
    a = np.empty(compiled.n_reactions, dtype=np.float64)
    capacity = 1024 if record_events else 0
    ev_times = np.empty(capacity, dtype=np.float64)
    ev_reactions = np.empty(capacity, dtype=np.int32)
    err, bad, n_events, ev_times, ev_reactions = kernel(
        xi, xf, t0, t_end, grid, out, rng.words, compiled.net, a,
        compiled.stack(), record_events, ev_times, ev_reactions)
    if err != _compile.ERR_NONE:
        _raise_kernel_error(err, bad, network)
    return StochasticTrajectory(
        grid=grid, states=out, final_state=xi, t_end=t_end,
        n_events=n_events,
        event_times=ev_times[:n_events] if record_events else None,
        event_reactions=ev_reactions[:n_events] if record_events else None)


def simulate_direct(network: ReactionNetwork, rates: Sequence[RateFunction],
                    x0, t_end: float, rng: RngState, *, t0: float = 0.0,
                    points: int = 2,
                    record_events: bool = False) -> StochasticTrajectory:
    """Gillespie's direct method: exponential waiting times from the total
    propensity, reaction selection by linear scan of the cumulative sum."""
    return _simulate_event_method(
        _compile._run_direct, network, rates, x0, t_end, rng,
        t0=t0, points=points, record_events=record_events)


def simulate_next_reaction(network: ReactionNetwork,
                           rates: Sequence[RateFunction],
                           x0, t_end: float, rng: RngState, *,
                           t0: float = 0.0, points: int = 2,
                           record_events: bool = False,
                           ) -> StochasticTrajectory:
    """Next-reaction method: one putative absolute firing time per reaction
    in an indexed min-heap; after a firing only the static dependents are
    re-rated, rescaling their times by a_old/a_new (fresh draw when the old
    propensity was zero)."""
    return _simulate_event_method(
        _compile._run_next_reaction, network, rates, x0, t_end, rng,
        t0=t0, points=points, record_events=record_events)


def simulate_tau_leap(network: ReactionNetwork,
                      rates: Sequence[RateFunction],
                      x0, t_end: float, tau: float, rng: RngState, *,
                      t0: float = 0.0,
                      points: int = 2) -> StochasticTrajectory:
    """Fixed-step tau-leaping: each reaction fires Poisson(a_j * tau) times
    per leap.  A leap that would drive a count negative is retried with the
    interval halved, down to 1e-6 of the requested tau; past that floor one
    exact direct-method step runs before leaping resumes."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    compiled, xi, grid = _prepare(network, rates, x0, t0, t_end, points)
    out = np.empty((grid.size, xi.size), dtype=np.int64)
    xf = xi.astype(np.float64)
    a = np.empty(compiled.n_reactions, dtype=np.float64)
    err, bad, n_leaps = _compile._run_tau_leap(
        xi, xf, t0, t_end, grid, out, rng.words, compiled.net, a,
        compiled.stack(), tau)
    if err != _compile.ERR_NONE:
        _raise_kernel_error(err, bad, network)
    return StochasticTrajectory(grid=grid, states=out, final_state=xi,
                                t_end=t_end, n_events=n_leaps)


def reaction_dependencies(network: ReactionNetwork,
                          rates: Sequence[RateFunction]) -> list[list[int]]:
    """dependents[k] = indices of reactions whose rate reads any species
    changed by reaction k."""
    return _compile.reaction_dependencies(network, list(rates))


def run_ensemble(method: str, network: ReactionNetwork,
                 rates: Sequence[RateFunction], x0, t_end: float, *,
                 points: int, runs: int, master_seed: int,
                 t0: float = 0.0, tau: float = 0.01,
                 workers: int = 1) -> Ensemble:
    """Statistics over ``runs`` independent trajectories.

    Substream seeds derive from ``(master_seed, run_index)``, and the
    reduction happens in run order, so the result is identical whichever
    worker count or scheduling executed the runs.
    """
    if runs < 1:
        raise ValueError("at least one run is required")
    if method not in ("direct", "next-reaction", "tau-leap"):
        raise ValueError(f"unknown stochastic method {method!r}")
    compiled, xi0, grid = _prepare(network, rates, x0, t0, t_end, points)
    run_states = np.empty((runs, points, xi0.size), dtype=np.int64)

    def one_run(run_index: int):
        rng = RngState(master_seed, run_index)
        if method == "tau-leap":
            xi = xi0.copy()
            xf = xi.astype(np.float64)
            a = np.empty(compiled.n_reactions, dtype=np.float64)
            err, bad, _ = _compile._run_tau_leap(
                xi, xf, t0, t_end, grid, run_states[run_index], rng.words,
                compiled.net, a, compiled.stack(), tau)
            if err != _compile.ERR_NONE:
                _raise_kernel_error(err, bad, network)
        else:
            _simulate_event_method(
                _KERNELS[method], network, rates, xi0, t_end, rng,
                t0=t0, points=points, record_events=False,
                compiled=compiled, grid=grid, out=run_states[run_index])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(one_run, range(runs)))
    else:
        for run_index in range(runs):
            one_run(run_index)

    mean = run_states.mean(axis=0)
    if runs > 1:
        std = run_states.std(axis=0, ddof=1)
    else:
        std = np.zeros_like(mean)
    return Ensemble(grid=grid, labels=network.labels, mean=mean, std=std,
                    runs=runs, master_seed=master_seed,
                    run_states=run_states)
