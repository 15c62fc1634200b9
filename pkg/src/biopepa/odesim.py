"""Deterministic back-end: the reaction network as a vector field plus a
classical fixed-step Runge-Kutta integrator and a Dormand-Prince 5(4)
adaptive integrator with dense output.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _compile
from .analyzer import ReactionNetwork
from .kinetics import DivisionByZeroError, RateFunction
from .model import NonpositiveSizeError

OVERFLOW_LIMIT = 1e300


class NumericOverflowError(ArithmeticError):
    pass


class StepUnderflowError(ArithmeticError):
    pass


@dataclass(frozen=True)
class VectorField:
    """dX/dt as a callable of (state, t).

    ``compiled`` optionally carries the network in kernel form so the
    fixed-step integrator can run its whole loop natively.
    """

    dimension: int
    fn: Callable[[np.ndarray, float], np.ndarray]
    compiled: Optional[tuple] = None
    network: Optional[ReactionNetwork] = None

    def __call__(self, state: np.ndarray, t: float) -> np.ndarray:
        return self.fn(state, t)


@dataclass
class TimeSeries:
    """States sampled on a uniform time grid, plus named derived columns."""

    grid: np.ndarray
    states: np.ndarray
    labels: Optional[list[str]] = None
    observables: dict[str, np.ndarray] = field(default_factory=dict)

    def column(self, label: str) -> np.ndarray:
        if self.labels and label in self.labels:
            return self.states[:, self.labels.index(label)]
        return self.observables[label]


def build_vector_field(network: ReactionNetwork,
                       rates: Sequence[RateFunction],
                       compiled: bool = True) -> VectorField:
    """dX_i/dt = sum_j stoichiometry[j, i] * rate_j(X, t).

    Activators, inhibitors and modifiers influence rates but carry zero
    stoichiometry, so they never appear in the derivative directly.
    """
    dimension = len(network.species_index)
    if compiled:
        cn = _compile.compile_network(network, list(rates))
        net = cn.net
        stack = cn.stack()
        a = np.empty(cn.n_reactions, dtype=np.float64)

        def fn(state, t):
            x = np.asarray(state, dtype=np.float64)
            out = np.empty(dimension, dtype=np.float64)
            err, bad = _compile._rhs(x, t, net, out, a, stack)
            if err != _compile.ERR_NONE:
                _raise_kernel_error(err, bad, network)
            return out

        return VectorField(dimension=dimension, fn=fn, compiled=(net, cn),
                           network=network)
    else:
        matrix = network.stoichiometry.astype(np.float64)
        rate_list = list(rates)

        def fn(state, t):
            x = np.asarray(state, dtype=np.float64)
            out = np.zeros(dimension, dtype=np.float64)
            for j, rate in enumerate(rate_list):
                out += matrix[j] * rate(x, t)
            return out

    return VectorField(dimension=dimension, fn=fn)


def _raise_kernel_error(err, reaction_index, network):
    action = (network.reactions[reaction_index].action
              if 0 <= reaction_index < len(network.reactions) else "?")
    if err == _compile.ERR_DIV_ZERO:
        raise DivisionByZeroError(
            f"division by zero while rating action {action}", action)
    if err == _compile.ERR_NONPOSITIVE_SIZE:
        raise NonpositiveSizeError(
            f"location size became nonpositive while rating action {action}")
    raise ArithmeticError(f"rate evaluation failed for action {action}")


def _uniform_grid(t0: float, t_end: float, points: int) -> np.ndarray:
    if points < 2:
        raise ValueError("a time series needs at least 2 grid points")
    return np.linspace(t0, t_end, points)


def _check_overflow(state: np.ndarray) -> None:
    if not np.all(np.isfinite(state)) \
            or np.max(np.abs(state)) > OVERFLOW_LIMIT:
        raise NumericOverflowError(
            "state magnitude exceeded the overflow limit")


def integrate_rk4(f: VectorField, x0, t0: float, t_end: float, h: float,
                  points: int = 101) -> TimeSeries:
    """Classical explicit 4th-order Runge-Kutta with a fixed step.

    The final step is shortened to land exactly on ``t_end``; output is
    resampled onto the uniform grid by linear interpolation between steps.
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    if t_end <= t0:
        raise ValueError("t_end must exceed t0")
    grid = _uniform_grid(t0, t_end, points)
    x = np.asarray(x0, dtype=np.float64).copy()
    out = np.empty((points, x.size), dtype=np.float64)

    if isinstance(f, VectorField) and f.compiled is not None:
        net, cn = f.compiled
        err, bad = _compile._run_rk4(x, t0, t_end, h, grid, out, net,
                                     cn.stack())
        if err == _compile.ERR_OVERFLOW:
            raise NumericOverflowError(
                "state magnitude exceeded the overflow limit")
        if err != _compile.ERR_NONE:
            _raise_kernel_error(err, bad, f.network)
        return TimeSeries(grid=grid, states=out)

    g = 0
    while g < points and grid[g] <= t0:
        out[g] = x
        g += 1

    n_full = int(math.floor((t_end - t0) / h + 1e-9))
    t = t0
    step_index = 0
    while t < t_end - 1e-15 * max(1.0, abs(t_end)):
        if step_index < n_full:
            step = h
            t_next = t0 + (step_index + 1) * h
        else:
            t_next = t_end
            step = t_end - t
        if step <= 0:
            break
        x_next = _rk4_step(f, x, t, step)
        _check_overflow(x_next)
        while g < points and grid[g] <= t_next:
            w = (grid[g] - t) / step
            out[g] = x + w * (x_next - x)
            g += 1
        x = x_next
        t = t_next
        step_index += 1
    while g < points:
        out[g] = x
        g += 1
    return TimeSeries(grid=grid, states=out)


def _rk4_step(f, x, t, h):
    k1 = f(x, t)
    k2 = f(x + 0.5 * h * k1, t + 0.5 * h)
    k3 = f(x + 0.5 * h * k2, t + 0.5 * h)
    k4 = f(x + h * k3, t + h)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


# Dormand-Prince 5(4) tableau
_DP_C = (0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0)
_DP_A = (
    (0.2,),
    (3.0 / 40.0, 9.0 / 40.0),
    (44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0),
    (19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0),
    (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0,
     -5103.0 / 18656.0),
    (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0,
     11.0 / 84.0),
)
# difference between the 5th- and embedded 4th-order weights
_DP_E = (71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0,
         -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0)
# dense-output weights for the method's 4th-order interpolant
_DP_D = (-12715105075.0 / 11282082432.0, 0.0,
         87487479700.0 / 32700410799.0, -10690763975.0 / 1880347072.0,
         701980252875.0 / 199316789632.0, -1453857185.0 / 822651844.0,
         69997945.0 / 29380423.0)


def integrate_dopri(f: VectorField, x0, t0: float, t_end: float,
                    rtol: float = 1e-6, atol: float = 1e-9,
                    points: int = 101) -> TimeSeries:
    """Dormand-Prince 5(4) embedded pair with PI-free step control.

    A step is accepted when the RMS of component errors scaled by
    ``atol + rtol * |x|`` is at most 1; the step factor is
    ``0.9 * norm**-0.2`` clamped to [0.2, 5].  Grid output uses the pair's
    dense interpolant.
    """
    if rtol <= 0 or atol <= 0:
        raise ValueError("rtol and atol must be positive")
    if t_end <= t0:
        raise ValueError("t_end must exceed t0")
    grid = _uniform_grid(t0, t_end, points)
    x = np.asarray(x0, dtype=np.float64).copy()
    out = np.empty((points, x.size), dtype=np.float64)

    g = 0
    while g < points and grid[g] <= t0:
        out[g] = x
        g += 1

    t = t0
    k1 = np.asarray(f(x, t), dtype=np.float64)
    h = _initial_step(f, x, t, t_end, k1, rtol, atol)
    h_floor = 1e-14 * (t_end - t0)
    k = [k1] + [np.empty_like(k1) for _ in range(6)]

    while t < t_end:
        if h < h_floor:
            raise StepUnderflowError(
                f"required step {h:g} fell below the underflow floor")
        last = t + h >= t_end
        if last:
            h = t_end - t
        for stage in range(6):
            xs = x.copy()
            for i, a in enumerate(_DP_A[stage]):
                if a != 0.0:
                    xs += (h * a) * k[i]
            k[stage + 1] = np.asarray(f(xs, t + _DP_C[stage] * h),
                                      dtype=np.float64)
        x_new = x + h * (_DP_A[5][0] * k[0] + _DP_A[5][2] * k[2]
                         + _DP_A[5][3] * k[3] + _DP_A[5][4] * k[4]
                         + _DP_A[5][5] * k[5])
        k[6] = np.asarray(f(x_new, t + h), dtype=np.float64)

        err = h * (_DP_E[0] * k[0] + _DP_E[2] * k[2] + _DP_E[3] * k[3]
                   + _DP_E[4] * k[4] + _DP_E[5] * k[5] + _DP_E[6] * k[6])
        scale = atol + rtol * np.maximum(np.abs(x), np.abs(x_new))
        norm = math.sqrt(float(np.mean((err / scale) ** 2)))

        if not math.isfinite(norm):
            factor = 0.2
            accepted = False
        elif norm <= 1.0:
            factor = 5.0 if norm == 0.0 else min(
                5.0, max(0.2, 0.9 * norm ** -0.2))
            accepted = True
        else:
            factor = max(0.2, 0.9 * norm ** -0.2)
            accepted = False

        if accepted:
            _check_overflow(x_new)
            if g < points:
                g = _dense_output(x, x_new, k, t, h, grid, g, out)
            t = t_end if last else t + h
            x = x_new
            k[0] = k[6].copy()  # first-same-as-last
        h = h * factor
    while g < points:
        out[g] = x
        g += 1
    return TimeSeries(grid=grid, states=out)


def _initial_step(f, x, t, t_end, f0, rtol, atol):
    scale = atol + rtol * np.abs(x)
    d0 = math.sqrt(float(np.mean((x / scale) ** 2)))
    d1 = math.sqrt(float(np.mean((f0 / scale) ** 2)))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, t_end - t)
    f1 = np.asarray(f(x + h0 * f0, t + h0), dtype=np.float64)
    d2 = math.sqrt(float(np.mean(((f1 - f0) / scale) ** 2))) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100.0 * h0, h1, t_end - t)


def _dense_output(x, x_new, k, t, h, grid, g, out):
    """Fill grid points inside (t, t+h] with the quartic interpolant."""
    limit = t + h
    if g >= grid.shape[0] or grid[g] > limit:
        return g
    ydiff = x_new - x
    bspl = h * k[0] - ydiff
    rcont4 = ydiff - h * k[6] - bspl
    rcont5 = h * (_DP_D[0] * k[0] + _DP_D[2] * k[2] + _DP_D[3] * k[3]
                  + _DP_D[4] * k[4] + _DP_D[5] * k[5] + _DP_D[6] * k[6])
    while g < grid.shape[0] and grid[g] <= limit:
        theta = (grid[g] - t) / h
        theta1 = 1.0 - theta
        out[g] = x + theta * (ydiff + theta1 * (bspl + theta
                                                * (rcont4 + theta1 * rcont5)))
        g += 1
    return g
