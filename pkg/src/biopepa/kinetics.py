"""Expression evaluation and binding of kinetic laws to rate functions.

A bound ``RateFunction`` maps ``(state, t)`` to the reaction's rate and
doubles as the stochastic propensity.  Counts read from the state vector are
clamped at zero so that small integration overshoots in the continuous
back-end cannot feed negative amounts into a law.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from .analyzer import Reaction, ReactionNetwork
from .model import (
    BinaryOp, BioPepaSystem, CustomRate, Expression, KineticLaw,
    LocationSizeRef, MassAction, MichaelisMenten, Name, Negate, Number,
    Parameter, ParameterRef, SpeciesRef, TimeRef, expression_names,
    expression_species, location_size_at,
)


class UndefinedParameterError(KeyError):
    pass


class CyclicParameterError(ValueError):
    pass


class DivisionByZeroError(ZeroDivisionError):
    def __init__(self, message, action: Optional[str] = None):
        super().__init__(message)
        self.action = action


@dataclass(frozen=True)
class EvalEnvironment:
    """Everything an expression may reference at one evaluation point."""

    parameters: Mapping[str, float] = field(default_factory=dict)
    counts: Mapping[tuple[str, str], float] = field(default_factory=dict)
    location_sizes: Mapping[str, Union[float, Callable[[float], float]]] = \
        field(default_factory=dict)
    time: float = 0.0


def eval_expression(expr: Expression, env: EvalEnvironment) -> float:
    """Evaluate a (resolved or parameter-only) expression tree."""
    if isinstance(expr, Number):
        return expr.value
    if isinstance(expr, ParameterRef):
        return _param(env, expr.name)
    if isinstance(expr, Name):
        if expr.name in env.parameters:
            return env.parameters[expr.name]
        if expr.name in env.location_sizes:
            return _size(env, expr.name)
        if expr.name == "t":
            return env.time
        raise UndefinedParameterError(expr.name)
    if isinstance(expr, SpeciesRef):
        return env.counts[(expr.species, expr.location)]
    if isinstance(expr, LocationSizeRef):
        return _size(env, expr.location)
    if isinstance(expr, TimeRef):
        return env.time
    if isinstance(expr, Negate):
        return -eval_expression(expr.operand, env)
    if isinstance(expr, BinaryOp):
        left = eval_expression(expr.left, env)
        right = eval_expression(expr.right, env)
        if expr.op == "+":
            return left + right
        if expr.op == "-":
            return left - right
        if expr.op == "*":
            return left * right
        if right == 0.0:
            raise DivisionByZeroError("division by zero")
        return left / right
    raise TypeError(f"cannot evaluate expression node {expr!r}")


def _param(env, name):
    try:
        return env.parameters[name]
    except KeyError:
        raise UndefinedParameterError(name) from None


def _size(env, name):
    value = env.location_sizes[name]
    return value(env.time) if callable(value) else value


def resolve_parameters(parameters: Sequence[Parameter]) -> dict[str, float]:
    """Evaluate parameter definitions to plain numbers.

    Definitions are processed in dependency order, so later parameters may
    reference earlier ones.  Raises ``CyclicParameterError`` on cycles and
    ``UndefinedParameterError`` for references to unknown names.
    """
    defined = {p.name for p in parameters}
    values: dict[str, float] = {}
    pending = list(parameters)
    while pending:
        remaining = []
        for param in pending:
            names = expression_names(param.value)
            unknown = names - defined
            if unknown:
                raise UndefinedParameterError(sorted(unknown)[0])
            if names - set(values):
                remaining.append(param)
                continue
            env = EvalEnvironment(parameters=values)
            values[param.name] = eval_expression(param.value, env)
        if len(remaining) == len(pending):
            cycle = ", ".join(p.name for p in remaining)
            raise CyclicParameterError(
                f"parameter definitions form a cycle: {cycle}")
        pending = remaining
    return values


# ---------------------------------------------------------------------------
# Rate binding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateBinding:
    """Shared context used to bind every law of one network: resolved
    parameter values, the state index of each species instance, and location
    sizes (closures over t when time-dependent).

    ``size_expressions`` keeps the raw size expression of each
    time-dependent location so that back-ends can compile it."""

    parameters: Mapping[str, float]
    species_index: Mapping[tuple[str, str], int]
    location_sizes: Mapping[str, Union[float, Callable[[float], float]]]
    size_expressions: Mapping[str, Expression] = field(default_factory=dict)

    @classmethod
    def for_network(cls, system: BioPepaSystem, network: ReactionNetwork,
                    parameters: Optional[Mapping[str, float]] = None,
                    ) -> "RateBinding":
        if parameters is None:
            parameters = resolve_parameters(system.parameters)
        sizes: dict[str, Union[float, Callable[[float], float]]] = {}
        size_exprs: dict[str, Expression] = {}
        const_env = EvalEnvironment(parameters=parameters)
        for loc in system.locations:
            if expression_names(loc.size) - set(parameters) or \
                    _mentions_time(loc.size):
                tree = system.locations
                name = loc.name
                sizes[name] = (lambda t, _tree=tree, _name=name:
                               location_size_at(_tree, _name, t, parameters))
                size_exprs[name] = loc.size
            else:
                sizes[loc.name] = eval_expression(loc.size, const_env)
        index = {key: i for i, key in enumerate(network.species_index)}
        return cls(parameters=parameters, species_index=index,
                   location_sizes=sizes, size_expressions=size_exprs)


def _mentions_time(expr: Expression) -> bool:
    if isinstance(expr, TimeRef):
        return True
    if isinstance(expr, Name):
        return expr.name == "t"
    if isinstance(expr, BinaryOp):
        return _mentions_time(expr.left) or _mentions_time(expr.right)
    if isinstance(expr, Negate):
        return _mentions_time(expr.operand)
    return False


class RateFunction:
    """Total mapping (state, t) -> rate for one reaction.

    ``reads`` lists the state indices the rate may depend on (a superset of
    the indices actually read), which drives simulator dependency graphs.
    """

    __slots__ = ("action", "law", "reaction", "binding", "reads", "_fn")

    def __init__(self, action, law, reaction, binding, reads, fn):
        self.action = action
        self.law = law
        self.reaction = reaction
        self.binding = binding
        self.reads = tuple(sorted(reads))
        self._fn = fn

    def __call__(self, state, t: float = 0.0) -> float:
        return self._fn(state, t)

    def __repr__(self):
        return f"RateFunction({self.action})"


def bind_kinetic_law(law: KineticLaw, reaction: Reaction,
                     binding: RateBinding) -> RateFunction:
    """Close a kinetic law over a reaction's participants and the binding."""
    index = binding.species_index

    def state_env(state, t):
        counts = _ClampedCounts(state, index)
        return EvalEnvironment(parameters=binding.parameters, counts=counts,
                               location_sizes=binding.location_sizes, time=t)

    body = law.body
    if isinstance(body, MassAction):
        reactant_idx = [(index[(s, l)], k) for s, l, k in reaction.reactants]
        expr = body.rate

        def fn(state, t):
            rate = _eval_in_law(expr, state_env(state, t), law.action)
            for i, kappa in reactant_idx:
                count = max(0.0, float(state[i]))
                for _ in range(kappa):
                    rate *= count
            return rate

        reads = {i for i, _ in reactant_idx} | _expr_reads(expr, index)
    elif isinstance(body, MichaelisMenten):
        s_idx = index[reaction.reactants[0][:2]]
        e_idx = index[reaction.activators[0]]
        vmax, km = body.vmax, body.km

        def fn(state, t):
            env = state_env(state, t)
            vm = _eval_in_law(vmax, env, law.action)
            k = _eval_in_law(km, env, law.action)
            substrate = max(0.0, float(state[s_idx]))
            enzyme = max(0.0, float(state[e_idx]))
            denom = k + substrate
            if denom == 0.0:
                raise DivisionByZeroError(
                    f"zero denominator in fMM of {law.action}", law.action)
            return vm * enzyme * substrate / denom

        reads = {s_idx, e_idx} | _expr_reads(vmax, index) \
            | _expr_reads(km, index)
    else:
        expr = body.body

        def fn(state, t):
            return _eval_in_law(expr, state_env(state, t), law.action)

        reads = _expr_reads(expr, index)

    return RateFunction(law.action, law, reaction, binding, reads, fn)


def bind_network(system: BioPepaSystem, network: ReactionNetwork,
                 parameters: Optional[Mapping[str, float]] = None,
                 ) -> list[RateFunction]:
    """Bind every reaction of a network in one go."""
    binding = RateBinding.for_network(system, network, parameters)
    return [bind_kinetic_law(reaction.law, reaction, binding)
            for reaction in network.reactions]


def _expr_reads(expr: Expression, index) -> set[int]:
    return {index[key] for key in expression_species(expr) if key in index}


def _eval_in_law(expr, env, action):
    try:
        return eval_expression(expr, env)
    except DivisionByZeroError as exc:
        raise DivisionByZeroError(
            f"division by zero while rating action {action}", action) \
            from exc


class _ClampedCounts:
    """Mapping view over the state vector that clamps reads at zero."""

    __slots__ = ("_state", "_index")

    def __init__(self, state, index):
        self._state = state
        self._index = index

    def __getitem__(self, key):
        return max(0.0, float(self._state[self._index[key]]))

    def __contains__(self, key):
        return key in self._index
