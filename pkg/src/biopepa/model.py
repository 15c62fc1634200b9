"""Domain types for Bio-PEPA models with locations.

Everything in this module is immutable after construction and carries an
optional source span (excluded from equality) so that diagnostics elsewhere
can point back into the source document.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Optional, Union


@dataclass(frozen=True)
class SourceSpan:
    """Byte range plus the line/column of its start (1-based)."""

    begin: int
    end: int
    line: int
    column: int

    def __post_init__(self):
        if self.begin > self.end:
            raise ValueError("span begin must not exceed end")


def _span_field():
    return field(default=None, compare=False, repr=False)


# ---------------------------------------------------------------------------
# Expressions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Number:
    value: float
    span: Optional[SourceSpan] = _span_field()


@dataclass(frozen=True)
class Name:
    """Unresolved identifier, as produced by the parser."""

    name: str
    span: Optional[SourceSpan] = _span_field()


@dataclass(frozen=True)
class ParameterRef:
    name: str
    span: Optional[SourceSpan] = _span_field()


@dataclass(frozen=True)
class SpeciesRef:
    """Current amount of ``species@location`` (molecule count)."""

    species: str
    location: str
    span: Optional[SourceSpan] = _span_field()


@dataclass(frozen=True)
class LocationSizeRef:
    location: str
    span: Optional[SourceSpan] = _span_field()


@dataclass(frozen=True)
class TimeRef:
    span: Optional[SourceSpan] = _span_field()


@dataclass(frozen=True)
class BinaryOp:
    op: str  # one of + - * /
    left: "Expression"
    right: "Expression"
    span: Optional[SourceSpan] = _span_field()

    def __post_init__(self):
        if self.op not in ("+", "-", "*", "/"):
            raise ValueError(f"unsupported operator {self.op!r}")


@dataclass(frozen=True)
class Negate:
    operand: "Expression"
    span: Optional[SourceSpan] = _span_field()


Expression = Union[
    Number, Name, ParameterRef, SpeciesRef, LocationSizeRef, TimeRef,
    BinaryOp, Negate,
]


def expression_names(expr: Expression) -> set[str]:
    """All unresolved identifier names appearing in ``expr``."""
    out: set[str] = set()
    _walk_names(expr, out)
    return out


def _walk_names(expr: Expression, out: set[str]) -> None:
    if isinstance(expr, Name):
        out.add(expr.name)
    elif isinstance(expr, BinaryOp):
        _walk_names(expr.left, out)
        _walk_names(expr.right, out)
    elif isinstance(expr, Negate):
        _walk_names(expr.operand, out)


def expression_species(expr: Expression) -> set[tuple[str, str]]:
    """All ``(species, location)`` amounts read by ``expr``."""
    if isinstance(expr, SpeciesRef):
        return {(expr.species, expr.location)}
    if isinstance(expr, BinaryOp):
        return expression_species(expr.left) | expression_species(expr.right)
    if isinstance(expr, Negate):
        return expression_species(expr.operand)
    return set()


# ---------------------------------------------------------------------------
# Locations
# ---------------------------------------------------------------------------

class LocationKind(enum.Enum):
    COMPARTMENT = "compartment"
    MEMBRANE = "membrane"


@dataclass(frozen=True)
class Location:
    """A named compartment or membrane with a (possibly time-dependent) size.

    ``unit`` is a free-form annotation kept verbatim; it is never interpreted.
    """

    name: str
    size: Expression
    kind: LocationKind
    parent: Optional[str] = None
    unit: Optional[str] = None
    span: Optional[SourceSpan] = _span_field()


class DuplicateLocationError(ValueError):
    pass


class UnknownParentError(ValueError):
    pass


class CyclicHierarchyError(ValueError):
    pass


class CyclicCompositionError(ValueError):
    pass


class UnknownLocationError(KeyError):
    pass


class NonpositiveSizeError(ValueError):
    pass


@dataclass(frozen=True)
class LocationTree:
    """Static containment forest of locations (child points at parent)."""

    nodes: Mapping[str, Location]

    def __contains__(self, name: str) -> bool:
        return name in self.nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes.values())

    def get(self, name: str) -> Location:
        try:
            return self.nodes[name]
        except KeyError:
            raise UnknownLocationError(name) from None

    def parent_of(self, name: str) -> Optional[str]:
        return self.get(name).parent

    def roots(self) -> list[str]:
        return [loc.name for loc in self.nodes.values() if loc.parent is None]

    def adjacent(self, a: str, b: str) -> bool:
        """True when one location is the parent of the other or both share
        a parent.  A location is not adjacent to itself."""
        la, lb = self.get(a), self.get(b)
        if a == b:
            return False
        if la.parent == b or lb.parent == a:
            return True
        return la.parent is not None and la.parent == lb.parent


def build_location_tree(locations: list[Location]) -> LocationTree:
    """Assemble declared locations into a containment forest.

    Raises ``DuplicateLocationError``, ``UnknownParentError`` or
    ``CyclicHierarchyError`` when the declarations do not form a forest.
    """
    nodes: dict[str, Location] = {}
    for loc in locations:
        if loc.name in nodes:
            raise DuplicateLocationError(loc.name)
        nodes[loc.name] = loc
    for loc in locations:
        if loc.parent is not None and loc.parent not in nodes:
            raise UnknownParentError(f"{loc.name}: unknown parent {loc.parent}")
    for loc in locations:
        seen = {loc.name}
        cursor = loc.parent
        while cursor is not None:
            if cursor in seen:
                raise CyclicHierarchyError(
                    f"location hierarchy contains a cycle through {cursor}")
            seen.add(cursor)
            cursor = nodes[cursor].parent
    return LocationTree(nodes)


def location_size_at(tree: LocationTree, name: str, t: float,
                     params: Mapping[str, float]) -> float:
    """Size of a location at time ``t`` (strictly positive by contract)."""
    from .kinetics import EvalEnvironment, eval_expression

    loc = tree.get(name)
    env = EvalEnvironment(parameters=params, time=t)
    value = eval_expression(loc.size, env)
    if not value > 0:
        raise NonpositiveSizeError(
            f"size of location {name} is {value} at t={t}")
    return value


# ---------------------------------------------------------------------------
# Kinetic laws
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MassAction:
    """Predefined mass-action law: rate constant times reactant counts."""

    rate: Expression


@dataclass(frozen=True)
class MichaelisMenten:
    """Predefined enzymatic law vmax*E*S/(km + S) over the reaction's unique
    substrate S and enzyme (activator) E."""

    vmax: Expression
    km: Expression


@dataclass(frozen=True)
class CustomRate:
    body: Expression


LawBody = Union[MassAction, MichaelisMenten, CustomRate]


@dataclass(frozen=True)
class KineticLaw:
    action: str
    body: LawBody
    span: Optional[SourceSpan] = _span_field()


# ---------------------------------------------------------------------------
# Species behaviour
# ---------------------------------------------------------------------------

class Role(enum.Enum):
    REACTANT = "<<"
    PRODUCT = ">>"
    ACTIVATOR = "(+)"
    INHIBITOR = "(-)"
    MODIFIER = "(.)"
    TRANSPORT = "->"


@dataclass(frozen=True)
class PrefixTerm:
    """One capability of a species: (action, stoichiometry, role, location).

    For ``Role.TRANSPORT`` the term moves the species from ``location`` to
    ``destination``; for every other role ``destination`` is None.
    """

    action: str
    role: Role
    stoichiometry: int = 1
    location: Optional[str] = None
    destination: Optional[str] = None
    span: Optional[SourceSpan] = _span_field()

    def __post_init__(self):
        if self.stoichiometry < 1:
            raise ValueError("stoichiometry must be at least 1")
        if (self.role is Role.TRANSPORT) != (self.destination is not None):
            raise ValueError("destination is set exactly for transport terms")


@dataclass(frozen=True)
class SpeciesComponent:
    """Choice over the prefix terms a species can take part in."""

    name: str
    terms: tuple[PrefixTerm, ...]
    span: Optional[SourceSpan] = _span_field()

    def __post_init__(self):
        if not self.terms:
            raise ValueError(f"species component {self.name} has no terms")


# ---------------------------------------------------------------------------
# Model component
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpeciesLeaf:
    """An instantiated species: ``name@location[count]``."""

    species: str
    location: str
    initial: float  # validated to a nonnegative integer by the analyzer
    span: Optional[SourceSpan] = _span_field()


@dataclass(frozen=True)
class CompositionRef:
    """Reference to a labelled composition inside a model expression."""

    name: str
    span: Optional[SourceSpan] = _span_field()


@dataclass(frozen=True)
class Cooperation:
    """Binary composition node; ``actions`` is None for the ``<*>`` wildcard,
    otherwise the explicit set of action names to synchronise on."""

    left: "ModelComponent"
    right: "ModelComponent"
    actions: Optional[frozenset[str]]
    span: Optional[SourceSpan] = _span_field()


ModelComponent = Union[SpeciesLeaf, CompositionRef, Cooperation]


def model_leaves(component: ModelComponent,
                 compositions: Mapping[str, ModelComponent]) -> list[SpeciesLeaf]:
    """Species leaves of a model expression in left-to-right order, with
    labelled composition references expanded in place."""
    out: list[SpeciesLeaf] = []
    _collect_leaves(component, compositions, out, ())
    return out


def _collect_leaves(component, compositions, out, stack):
    if isinstance(component, SpeciesLeaf):
        out.append(component)
    elif isinstance(component, CompositionRef):
        if component.name in stack:
            raise CyclicCompositionError(
                f"labelled composition {component.name} references itself")
        target = compositions.get(component.name)
        if target is not None:
            _collect_leaves(target, compositions, out, stack + (component.name,))
    else:
        _collect_leaves(component.left, compositions, out, stack)
        _collect_leaves(component.right, compositions, out, stack)


# ---------------------------------------------------------------------------
# Observables and the whole system
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Observable:
    """Derived quantity over species amounts, reported alongside state."""

    name: str
    body: Expression
    span: Optional[SourceSpan] = _span_field()


@dataclass(frozen=True)
class Parameter:
    name: str
    value: Expression
    span: Optional[SourceSpan] = _span_field()


@dataclass(frozen=True)
class BioPepaSystem:
    """A complete model: locations, species metadata, parameters, kinetic
    laws, species components and the top-level model component.

    ``species_info`` is an opaque name-to-text annotation map; nothing in
    this package assigns meaning to its contents.
    """

    locations: LocationTree
    parameters: tuple[Parameter, ...]
    kinetic_laws: Mapping[str, KineticLaw]
    components: Mapping[str, SpeciesComponent]
    model: ModelComponent
    observables: tuple[Observable, ...] = ()
    compositions: Mapping[str, ModelComponent] = field(default_factory=dict)
    species_info: Mapping[str, str] = field(default_factory=dict)

    def instantiated(self) -> list[SpeciesLeaf]:
        return model_leaves(self.model, self.compositions)
