"""Static analysis: reference resolution, location-shorthand expansion,
model checks and derivation of the flat reaction network.

Diagnostics carry a stable code so front-ends and tests can match on them;
every Error prevents simulation while Warnings do not.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field, replace
from fractions import Fraction
from math import gcd
from typing import Mapping, Optional

import numpy as np

from .model import (
    BinaryOp, BioPepaSystem, Cooperation, CompositionRef, CustomRate,
    CyclicCompositionError, Expression, KineticLaw, LocationSizeRef,
    MassAction, MichaelisMenten, Name, Negate, Number, Observable, Parameter,
    ParameterRef, PrefixTerm, Role, SourceSpan, SpeciesComponent, SpeciesLeaf,
    SpeciesRef, TimeRef, expression_names, model_leaves,
)
from .parser import Severity

log = logging.getLogger(__name__)

# Largest stoichiometry matrix (entries) for which conservation detection
# runs; beyond this the search is skipped with a notice.
CONSERVATION_SIZE_LIMIT = 10_000


@dataclass(frozen=True)
class Diagnostic:
    severity: Severity
    code: str
    message: str
    span: Optional[SourceSpan] = None


def format_diagnostic(diag, filename: str = "<input>") -> str:
    """Line format shared by parse and analysis diagnostics."""
    code = getattr(diag, "code", "PARSE_ERROR")
    span = diag.span
    where = f"{filename}:{span.line}:{span.column}" if span else filename
    return f"{diag.severity.value.upper()} {code} {where} {diag.message}"


def has_errors(diagnostics) -> bool:
    return any(d.severity is Severity.ERROR for d in diagnostics)


# ---------------------------------------------------------------------------
# Reference resolution
# ---------------------------------------------------------------------------

@dataclass
class _Scope:
    parameters: frozenset[str]
    locations: frozenset[str]
    instances: frozenset[tuple[str, str]]
    observables: Mapping[str, Expression]  # already-resolved bodies

    allow_species: bool = True
    allow_sizes: bool = True
    allow_time: bool = True


def _resolve(expr: Expression, scope: _Scope,
             diags: list[Diagnostic]) -> Expression:
    if isinstance(expr, (Number, ParameterRef, LocationSizeRef, TimeRef)):
        return expr
    if isinstance(expr, SpeciesRef):
        if not scope.allow_species:
            diags.append(Diagnostic(
                Severity.ERROR, "UNDEFINED_PARAMETER",
                f"species amount {expr.species}@{expr.location} is not "
                "allowed in a constant expression", expr.span))
        elif expr.location not in scope.locations:
            diags.append(Diagnostic(
                Severity.ERROR, "UNDEFINED_LOCATION",
                f"{expr.species}@{expr.location} refers to an undeclared "
                "location", expr.span))
        elif (expr.species, expr.location) not in scope.instances:
            diags.append(Diagnostic(
                Severity.ERROR, "UNDEFINED_SPECIES",
                f"{expr.species}@{expr.location} is not initialised in the "
                "model component", expr.span))
        return expr
    if isinstance(expr, Name):
        if expr.name in scope.parameters:
            return ParameterRef(expr.name, span=expr.span)
        if expr.name in scope.observables:
            return scope.observables[expr.name]
        if expr.name in scope.locations:
            if scope.allow_sizes:
                return LocationSizeRef(expr.name, span=expr.span)
        elif expr.name == "t" and scope.allow_time:
            return TimeRef(span=expr.span)
        diags.append(Diagnostic(
            Severity.ERROR, "UNDEFINED_PARAMETER",
            f"undefined name {expr.name}", expr.span))
        return expr
    if isinstance(expr, BinaryOp):
        return dataclasses.replace(
            expr, left=_resolve(expr.left, scope, diags),
            right=_resolve(expr.right, scope, diags))
    if isinstance(expr, Negate):
        return dataclasses.replace(
            expr, operand=_resolve(expr.operand, scope, diags))
    raise TypeError(f"unexpected expression node {expr!r}")


def constant_fold(expr: Expression,
                  params: Mapping[str, float]) -> Optional[float]:
    """Value of ``expr`` when it involves only numbers and known parameters,
    else None."""
    if isinstance(expr, Number):
        return expr.value
    if isinstance(expr, (ParameterRef, Name)):
        return params.get(expr.name if isinstance(expr, Name) else expr.name)
    if isinstance(expr, Negate):
        inner = constant_fold(expr.operand, params)
        return None if inner is None else -inner
    if isinstance(expr, BinaryOp):
        left = constant_fold(expr.left, params)
        right = constant_fold(expr.right, params)
        if left is None or right is None:
            return None
        if expr.op == "+":
            return left + right
        if expr.op == "-":
            return left - right
        if expr.op == "*":
            return left * right
        return left / right if right != 0 else None
    return None


# ---------------------------------------------------------------------------
# Location-shorthand expansion
# ---------------------------------------------------------------------------

def expand_location_shorthand(
        system: BioPepaSystem) -> tuple[BioPepaSystem, list[Diagnostic]]:
    """Rewrite every species component so each prefix term carries an
    explicit location.

    A term without an ``@location`` qualifier is replicated once per location
    in which its species is instantiated by the model component; species
    instantiated in a single location get that location directly.
    """
    diags: list[Diagnostic] = []
    try:
        leaves = system.instantiated()
    except CyclicCompositionError as exc:
        diags.append(Diagnostic(Severity.ERROR, "CYCLIC_COMPOSITION",
                                str(exc), None))
        return system, diags

    species_locations: dict[str, list[str]] = {}
    for leaf in leaves:
        locs = species_locations.setdefault(leaf.species, [])
        if leaf.location not in locs:
            locs.append(leaf.location)

    new_components = {}
    changed = False
    for name, comp in system.components.items():
        terms: list[PrefixTerm] = []
        for term in comp.terms:
            if term.location is not None:
                terms.append(term)
                continue
            locs = species_locations.get(name, [])
            if not locs:
                diags.append(Diagnostic(
                    Severity.ERROR, "UNRESOLVED_LOCATION",
                    f"cannot place action {term.action} of species {name}: "
                    "the species is not instantiated in the model component",
                    term.span))
                terms.append(term)
                continue
            changed = True
            for loc in locs:
                terms.append(replace(term, location=loc))
        new_components[name] = (comp if terms == list(comp.terms)
                                else replace(comp, terms=tuple(terms)))
    if not changed:
        return system, diags
    return replace(system, components=new_components), diags


# ---------------------------------------------------------------------------
# Reaction collection (shared by checks and network derivation)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Reaction:
    """Flattened per-action view of every participating species instance."""

    action: str
    reactants: tuple[tuple[str, str, int], ...]
    products: tuple[tuple[str, str, int], ...]
    activators: tuple[tuple[str, str], ...] = ()
    inhibitors: tuple[tuple[str, str], ...] = ()
    modifiers: tuple[tuple[str, str], ...] = ()
    law: Optional[KineticLaw] = None

    def participant_locations(self) -> list[str]:
        locs = []
        for group in (self.reactants, self.products):
            locs.extend(entry[1] for entry in group)
        for group in (self.activators, self.inhibitors, self.modifiers):
            locs.extend(entry[1] for entry in group)
        return locs


@dataclass(frozen=True)
class ReactionNetwork:
    """Reaction list plus the integer stoichiometry matrix.

    ``species_index`` orders the instantiated ``(species, location)`` pairs
    exactly as the model component declares them; ``stoichiometry[j, i]`` is
    the net count change of species ``i`` per firing of reaction ``j``.
    """

    species_index: tuple[tuple[str, str], ...]
    reactions: tuple[Reaction, ...]
    stoichiometry: np.ndarray
    initial_state: np.ndarray

    @property
    def labels(self) -> list[str]:
        return [f"{s}@{l}" for s, l in self.species_index]

    def index_of(self, species: str, location: str) -> int:
        return self.species_index.index((species, location))


def _collect_reactions(system: BioPepaSystem,
                       leaves: list[SpeciesLeaf]) -> dict[str, Reaction]:
    """Union of prefix terms per action, over instantiated species only."""
    buckets: dict[str, dict[str, list]] = {}

    def bucket(action):
        return buckets.setdefault(action, {
            "reactants": [], "products": [], "activators": [],
            "inhibitors": [], "modifiers": []})

    seen_instances = set()
    for leaf in leaves:
        key = (leaf.species, leaf.location)
        if key in seen_instances:
            continue
        seen_instances.add(key)
        comp = system.components.get(leaf.species)
        if comp is None:
            continue
        for term in comp.terms:
            if term.location != leaf.location:
                continue
            entry = bucket(term.action)
            if term.role is Role.REACTANT:
                entry["reactants"].append(
                    (leaf.species, leaf.location, term.stoichiometry))
            elif term.role is Role.PRODUCT:
                entry["products"].append(
                    (leaf.species, leaf.location, term.stoichiometry))
            elif term.role is Role.ACTIVATOR:
                entry["activators"].append((leaf.species, leaf.location))
            elif term.role is Role.INHIBITOR:
                entry["inhibitors"].append((leaf.species, leaf.location))
            elif term.role is Role.MODIFIER:
                entry["modifiers"].append((leaf.species, leaf.location))
            else:  # transport: consume at the source, produce at the target
                entry["reactants"].append(
                    (leaf.species, leaf.location, term.stoichiometry))
                entry["products"].append(
                    (leaf.species, term.destination, term.stoichiometry))

    reactions = {}
    for action, entry in buckets.items():
        reactions[action] = Reaction(
            action=action,
            reactants=tuple(entry["reactants"]),
            products=tuple(entry["products"]),
            activators=tuple(entry["activators"]),
            inhibitors=tuple(entry["inhibitors"]),
            modifiers=tuple(entry["modifiers"]),
            law=system.kinetic_laws.get(action))
    return reactions


# ---------------------------------------------------------------------------
# System checking
# ---------------------------------------------------------------------------

def check_system(system: BioPepaSystem) -> list[Diagnostic]:
    """Run every static check and return the diagnostics.

    Expects the location shorthand to have been expanded; terms still missing
    a location are skipped by the location-sensitive checks.
    """
    diags: list[Diagnostic] = []
    try:
        leaves = system.instantiated()
    except CyclicCompositionError as exc:
        diags.append(Diagnostic(Severity.ERROR, "CYCLIC_COMPOSITION",
                                str(exc), None))
        leaves = []

    _check_duplicate_names(system, diags)
    param_names = frozenset(p.name for p in system.parameters)
    _check_parameter_graph(system, param_names, diags)

    instances = frozenset((leaf.species, leaf.location) for leaf in leaves)
    location_names = frozenset(loc.name for loc in system.locations)

    size_scope = _Scope(parameters=param_names, locations=location_names,
                        instances=instances, observables={},
                        allow_species=False, allow_sizes=False)
    folded_params = _fold_parameters(system)
    for loc in system.locations:
        _resolve(loc.size, size_scope, diags)
        value = constant_fold(loc.size, folded_params)
        if value is not None and not value > 0:
            diags.append(Diagnostic(
                Severity.ERROR, "NONPOSITIVE_SIZE",
                f"location {loc.name} has nonpositive size {value}",
                loc.span))

    _check_components(system, location_names, diags)
    _check_model_leaves(system, leaves, location_names, diags)

    reactions = _collect_reactions(system, leaves)
    _check_reactions(system, reactions, param_names, location_names,
                     instances, diags)
    _check_observables(system, param_names, location_names, instances, diags)
    _check_cooperation(system, leaves, reactions, diags)
    return diags


def _check_duplicate_names(system, diags):
    seen: dict[str, str] = {}

    def record(name, kind, span):
        if name in seen:
            diags.append(Diagnostic(
                Severity.ERROR, "DUPLICATE_DEFINITION",
                f"{kind} {name} conflicts with an earlier {seen[name]} "
                "definition", span))
        else:
            seen[name] = kind

    for loc in system.locations:
        record(loc.name, "location", loc.span)
    for param in system.parameters:
        record(param.name, "parameter", param.span)
    for comp in system.components.values():
        record(comp.name, "species component", comp.span)
    for obs in system.observables:
        record(obs.name, "observable", obs.span)
    for name in system.compositions:
        record(name, "labelled composition", None)


def _fold_parameters(system) -> dict[str, float]:
    """Best-effort constant values for parameters (cycles simply stay
    unknown); used only to evaluate location sizes statically."""
    values: dict[str, float] = {}
    pending = list(system.parameters)
    for _ in range(len(pending) + 1):
        remaining = []
        for param in pending:
            value = constant_fold(param.value, values)
            if value is None:
                remaining.append(param)
            else:
                values[param.name] = value
        if not remaining:
            break
        pending = remaining
    return values


def _check_parameter_graph(system, param_names, diags):
    deps = {}
    for param in system.parameters:
        names = expression_names(param.value)
        for name in sorted(names - param_names):
            diags.append(Diagnostic(
                Severity.ERROR, "UNDEFINED_PARAMETER",
                f"parameter {param.name} references undefined name {name}",
                param.span))
        deps[param.name] = names & param_names

    resolved: set[str] = set()
    pending = dict(deps)
    while pending:
        ready = [n for n, d in pending.items() if d <= resolved]
        if not ready:
            cycle = ", ".join(sorted(pending))
            span = next(p.span for p in system.parameters
                        if p.name in pending)
            diags.append(Diagnostic(
                Severity.ERROR, "CYCLIC_PARAMETER",
                f"parameter definitions form a cycle: {cycle}", span))
            break
        for name in ready:
            resolved.add(name)
            del pending[name]


def _check_components(system, location_names, diags):
    for comp in system.components.values():
        seen_prefixes = set()
        for term in comp.terms:
            if term.location is not None \
                    and term.location not in location_names:
                diags.append(Diagnostic(
                    Severity.ERROR, "UNDEFINED_LOCATION",
                    f"species {comp.name} refers to undeclared location "
                    f"{term.location}", term.span))
            if term.destination is not None \
                    and term.destination not in location_names:
                diags.append(Diagnostic(
                    Severity.ERROR, "UNDEFINED_LOCATION",
                    f"transport of {comp.name} targets undeclared location "
                    f"{term.destination}", term.span))
            key = (term.action, term.role, term.location, term.destination)
            if key in seen_prefixes:
                diags.append(Diagnostic(
                    Severity.ERROR, "DUPLICATE_DEFINITION",
                    f"species {comp.name} repeats the prefix "
                    f"({term.action}, {term.role.name.lower()})", term.span))
            seen_prefixes.add(key)


def _check_model_leaves(system, leaves, location_names, diags):
    _check_composition_refs(system.model, system, diags)
    for tree in system.compositions.values():
        _check_composition_refs(tree, system, diags)

    seen = set()
    for leaf in leaves:
        if leaf.species not in system.components:
            diags.append(Diagnostic(
                Severity.ERROR, "UNDEFINED_SPECIES",
                f"instantiated species {leaf.species} has no component "
                "definition", leaf.span))
        if leaf.location not in location_names:
            diags.append(Diagnostic(
                Severity.ERROR, "UNDEFINED_LOCATION",
                f"instance {leaf.species} uses undeclared location "
                f"{leaf.location}", leaf.span))
        if leaf.initial < 0 or leaf.initial != int(leaf.initial):
            diags.append(Diagnostic(
                Severity.ERROR, "BAD_INITIAL_AMOUNT",
                f"initial amount of {leaf.species}@{leaf.location} must be a "
                f"nonnegative integer molecule count, got {leaf.initial}",
                leaf.span))
        key = (leaf.species, leaf.location)
        if key in seen:
            diags.append(Diagnostic(
                Severity.ERROR, "DUPLICATE_DEFINITION",
                f"{leaf.species}@{leaf.location} is instantiated twice",
                leaf.span))
        seen.add(key)


def _check_composition_refs(node, system, diags):
    if isinstance(node, CompositionRef):
        if node.name not in system.compositions:
            diags.append(Diagnostic(
                Severity.ERROR, "UNDEFINED_COMPOSITION",
                f"unknown labelled composition {node.name}", node.span))
    elif isinstance(node, Cooperation):
        _check_composition_refs(node.left, system, diags)
        _check_composition_refs(node.right, system, diags)


def _check_reactions(system, reactions, param_names, location_names,
                     instances, diags):
    used_actions = set()
    for comp in system.components.values():
        used_actions.update(term.action for term in comp.terms)

    for action in sorted(used_actions - set(system.kinetic_laws)):
        span = _first_term_span(system, action)
        diags.append(Diagnostic(
            Severity.ERROR, "NO_KINETIC_LAW",
            f"action {action} has no kinetic law", span))
    for action, law in system.kinetic_laws.items():
        if action not in used_actions:
            diags.append(Diagnostic(
                Severity.ERROR, "UNUSED_KINETIC_LAW",
                f"kinetic law {action} is not used by any species component",
                law.span))

    scope = _Scope(parameters=param_names, locations=location_names,
                   instances=instances, observables={})
    for law in system.kinetic_laws.values():
        for expr in _law_expressions(law):
            _resolve(expr, scope, diags)

    for action, reaction in sorted(reactions.items()):
        law = reaction.law
        if law is None:
            continue
        if isinstance(law.body, MichaelisMenten):
            shape = (len(reaction.reactants), len(reaction.activators),
                     len(reaction.products))
            extras = len(reaction.inhibitors) + len(reaction.modifiers)
            if shape != (1, 1, 1) or extras:
                diags.append(Diagnostic(
                    Severity.ERROR, "MM_ROLE_MISMATCH",
                    f"fMM on {action} requires exactly one reactant, one "
                    "activating enzyme and one product; found "
                    f"{shape[0]} reactant(s), {shape[1]} activator(s), "
                    f"{shape[2]} product(s)", law.span))
        elif isinstance(law.body, MassAction) and not reaction.reactants:
            diags.append(Diagnostic(
                Severity.ERROR, "MA_NO_REACTANTS",
                f"fMA on {action} needs at least one reactant", law.span))

        locs = []
        for loc in reaction.participant_locations():
            if loc is not None and loc in location_names \
                    and loc not in locs:
                locs.append(loc)
        for i, a in enumerate(locs):
            for b in locs[i + 1:]:
                if not system.locations.adjacent(a, b):
                    diags.append(Diagnostic(
                        Severity.WARNING, "NON_ADJACENT_REACTION",
                        f"reaction {action} joins species in non-adjacent "
                        f"locations {a} and {b}",
                        law.span if law else None))


def _law_expressions(law):
    body = law.body
    if isinstance(body, MassAction):
        return (body.rate,)
    if isinstance(body, MichaelisMenten):
        return (body.vmax, body.km)
    return (body.body,)


def _first_term_span(system, action):
    for comp in system.components.values():
        for term in comp.terms:
            if term.action == action and term.span is not None:
                return term.span
    return None


def _check_observables(system, param_names, location_names, instances, diags):
    resolved: dict[str, Expression] = {}
    pending = {obs.name: obs for obs in system.observables}
    while pending:
        ready = [obs for obs in pending.values()
                 if expression_names(obs.body) & set(pending) <= {obs.name}]
        ready = [obs for obs in ready
                 if obs.name not in expression_names(obs.body)]
        if not ready:
            cycle = ", ".join(sorted(pending))
            span = next(iter(pending.values())).span
            diags.append(Diagnostic(
                Severity.ERROR, "CYCLIC_OBSERVABLE",
                f"observable definitions form a cycle: {cycle}", span))
            return
        for obs in ready:
            scope = _Scope(parameters=param_names, locations=location_names,
                           instances=instances, observables=resolved)
            resolved[obs.name] = _resolve(obs.body, scope, diags)
            del pending[obs.name]


def _actions_of(node, system, cache):
    """Action names performed by the species instances of a model subtree."""
    if isinstance(node, SpeciesLeaf):
        comp = system.components.get(node.species)
        if comp is None:
            return frozenset()
        return frozenset(
            term.action for term in comp.terms
            if term.location in (None, node.location)
            or term.destination == node.location)
    if isinstance(node, CompositionRef):
        if node.name in cache:
            return cache[node.name]
        target = system.compositions.get(node.name)
        cache[node.name] = frozenset()  # cycle guard
        result = _actions_of(target, system, cache) if target else frozenset()
        cache[node.name] = result
        return result
    if isinstance(node, Cooperation):
        return (_actions_of(node.left, system, cache)
                | _actions_of(node.right, system, cache))
    return frozenset()


def _check_cooperation(system, leaves, reactions, diags):
    performed = set(reactions)
    cache: dict[str, frozenset] = {}

    def walk(node):
        if not isinstance(node, Cooperation):
            return
        walk(node.left)
        walk(node.right)
        if node.actions is None:
            return
        shared = (_actions_of(node.left, system, cache)
                  & _actions_of(node.right, system, cache))
        for action in sorted(shared - node.actions):
            diags.append(Diagnostic(
                Severity.WARNING, "MISSING_COOPERATION_ACTION",
                f"action {action} is shared by both operands but missing "
                "from the cooperation set", node.span))
        for action in sorted(node.actions - performed):
            diags.append(Diagnostic(
                Severity.WARNING, "UNUSED_COOPERATION_ACTION",
                f"cooperation set names action {action}, which no component "
                "performs", node.span))

    walk(system.model)
    for tree in system.compositions.values():
        walk(tree)


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AnalysisResult:
    system: Optional[BioPepaSystem]
    diagnostics: list[Diagnostic] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.system is not None


def analyze(system: BioPepaSystem) -> AnalysisResult:
    """Expand the location shorthand, check the system, and (when error-free)
    return it with every expression reference resolved and kind-tagged."""
    expanded, diags = expand_location_shorthand(system)
    diags.extend(check_system(expanded))
    if has_errors(diags):
        return AnalysisResult(None, diags)
    return AnalysisResult(_resolve_system(expanded), diags)


def _resolve_system(system: BioPepaSystem) -> BioPepaSystem:
    sink: list[Diagnostic] = []
    leaves = system.instantiated()
    param_names = frozenset(p.name for p in system.parameters)
    location_names = frozenset(loc.name for loc in system.locations)
    instances = frozenset((leaf.species, leaf.location) for leaf in leaves)
    param_scope = _Scope(parameters=param_names, locations=frozenset(),
                         instances=frozenset(), observables={},
                         allow_species=False, allow_sizes=False,
                         allow_time=False)
    size_scope = _Scope(parameters=param_names, locations=frozenset(),
                        instances=frozenset(), observables={},
                        allow_species=False, allow_sizes=False)
    full_scope = _Scope(parameters=param_names, locations=location_names,
                        instances=instances, observables={})

    parameters = tuple(
        replace(p, value=_resolve(p.value, param_scope, sink))
        for p in system.parameters)
    locations = type(system.locations)(nodes={
        name: replace(loc, size=_resolve(loc.size, size_scope, sink))
        for name, loc in system.locations.nodes.items()})
    laws = {
        action: replace(law, body=_resolve_law_body(law.body, full_scope,
                                                    sink))
        for action, law in system.kinetic_laws.items()}

    resolved_obs: dict[str, Expression] = {}
    observables = []
    pending = list(system.observables)
    while pending:
        remaining = []
        for obs in pending:
            if expression_names(obs.body) & {o.name for o in pending
                                             if o is not obs}:
                remaining.append(obs)
                continue
            scope = replace(full_scope, observables=resolved_obs)
            body = _resolve(obs.body, scope, sink)
            resolved_obs[obs.name] = body
            observables.append(replace(obs, body=body))
        if len(remaining) == len(pending):
            break
        pending = remaining

    return replace(system, parameters=parameters, locations=locations,
                   kinetic_laws=laws, observables=tuple(observables))


def _resolve_law_body(body, scope, sink):
    if isinstance(body, MassAction):
        return MassAction(_resolve(body.rate, scope, sink))
    if isinstance(body, MichaelisMenten):
        return MichaelisMenten(_resolve(body.vmax, scope, sink),
                               _resolve(body.km, scope, sink))
    return CustomRate(_resolve(body.body, scope, sink))


# ---------------------------------------------------------------------------
# Reaction network derivation
# ---------------------------------------------------------------------------

def derive_reaction_network(system: BioPepaSystem) -> ReactionNetwork:
    """Flatten an analysed system into one reaction per action name.

    Species ordering and initial counts follow the model component left to
    right; reactions follow kinetic-law definition order.
    """
    leaves = system.instantiated()
    species_index: list[tuple[str, str]] = []
    initial: list[int] = []
    for leaf in leaves:
        key = (leaf.species, leaf.location)
        if key not in species_index:
            species_index.append(key)
            initial.append(int(leaf.initial))

    collected = _collect_reactions(system, leaves)
    reactions = [collected[action] for action in system.kinetic_laws
                 if action in collected]

    index = {key: i for i, key in enumerate(species_index)}
    matrix = np.zeros((len(reactions), len(species_index)), dtype=np.int64)
    for j, reaction in enumerate(reactions):
        for species, location, stoich in reaction.reactants:
            matrix[j, index[(species, location)]] -= stoich
        for species, location, stoich in reaction.products:
            matrix[j, index[(species, location)]] += stoich

    return ReactionNetwork(
        species_index=tuple(species_index),
        reactions=tuple(reactions),
        stoichiometry=matrix,
        initial_state=np.array(initial, dtype=np.int64))


# ---------------------------------------------------------------------------
# Conserved moieties
# ---------------------------------------------------------------------------

def conserved_moieties(network: ReactionNetwork) -> list[np.ndarray]:
    """Nonnegative integer species weightings left unchanged by every
    reaction.

    Computes a kernel basis of the stoichiometry matrix by exact rational
    Gaussian elimination, scales each basis vector to integers, and keeps
    the sign-pure ones (mixed-sign vectors are discarded).
    """
    matrix = network.stoichiometry
    if matrix.size > CONSERVATION_SIZE_LIMIT:
        log.warning(
            "conservation detection skipped: stoichiometry matrix has %d "
            "entries (limit %d)", matrix.size, CONSERVATION_SIZE_LIMIT)
        return []
    n_reactions, n_species = matrix.shape
    if n_species == 0:
        return []

    rows = [[Fraction(int(v)) for v in row] for row in matrix]
    pivot_cols: list[int] = []
    r = 0
    for c in range(n_species):
        pivot = next((k for k in range(r, n_reactions) if rows[k][c] != 0),
                     None)
        if pivot is None:
            continue
        rows[r], rows[pivot] = rows[pivot], rows[r]
        factor = rows[r][c]
        rows[r] = [v / factor for v in rows[r]]
        for k in range(n_reactions):
            if k != r and rows[k][c] != 0:
                scale = rows[k][c]
                rows[k] = [a - scale * b for a, b in zip(rows[k], rows[r])]
        pivot_cols.append(c)
        r += 1
        if r == n_reactions:
            break

    free_cols = [c for c in range(n_species) if c not in pivot_cols]
    result = []
    for f in free_cols:
        vec = [Fraction(0)] * n_species
        vec[f] = Fraction(1)
        for i, p in enumerate(pivot_cols):
            if i < len(rows):
                vec[p] = -rows[i][f]
        scale = 1
        for v in vec:
            scale = scale * v.denominator // gcd(scale, v.denominator)
        ints = [int(v * scale) for v in vec]
        common = 0
        for v in ints:
            common = gcd(common, abs(v))
        if common > 1:
            ints = [v // common for v in ints]
        if all(v <= 0 for v in ints):
            ints = [-v for v in ints]
        if any(v < 0 for v in ints):
            continue
        result.append(np.array(ints, dtype=np.int64))
    return result
