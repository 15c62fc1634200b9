"""Lexer and parser for the concrete Bio-PEPA tool syntax.

A document is a sequence of ``;``-terminated definitions (locations,
parameters, kinetic laws, species components, observables, labelled
compositions, in any order) followed by the model component as the final
statement.  Parsing never raises on malformed input: it collects
``ParseDiagnostic`` records and resynchronises at the next statement.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass

from .model import (
    BinaryOp, BioPepaSystem, Cooperation, CompositionRef, CustomRate,
    CyclicHierarchyError, DuplicateLocationError, Expression, KineticLaw,
    Location, LocationKind, LocationTree, MassAction, MichaelisMenten, Name,
    Negate, Number, Observable, Parameter, PrefixTerm, Role, SourceSpan,
    SpeciesComponent, SpeciesLeaf, SpeciesRef, UnknownParentError,
    build_location_tree, expression_species,
)


class Severity(enum.Enum):
    ERROR = "error"
    WARNING = "warning"


@dataclass(frozen=True)
class ParseDiagnostic:
    severity: Severity
    message: str
    span: SourceSpan

    def __str__(self):
        return (f"{self.severity.value.upper()} PARSE_ERROR "
                f"{self.span.line}:{self.span.column} {self.message}")


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

class Tok(enum.Enum):
    IDENT = "identifier"
    NUMBER = "number"
    SEMI = "';'"
    COMMA = "','"
    COLON = "':'"
    EQUALS = "'='"
    DEFINE = "'::='"
    LPAREN = "'('"
    RPAREN = "')'"
    LBRACKET = "'['"
    RBRACKET = "']'"
    AT = "'@'"
    PLUS = "'+'"
    MINUS = "'-'"
    STAR = "'*'"
    SLASH = "'/'"
    LANGLE = "'<'"
    RANGLE = "'>'"
    REACTANT = "'<<'"
    PRODUCT = "'>>'"
    ACTIVATOR = "'(+)'"
    INHIBITOR = "'(-)'"
    MODIFIER = "'(.)'"
    TRANSPORT = "'->'"
    BIDIR = "'<->'"
    COOP_ALL = "'<*>'"
    EOF = "end of input"


@dataclass(frozen=True)
class Token:
    kind: Tok
    text: str
    span: SourceSpan


_THREE_CHAR = {"::=": Tok.DEFINE, "<->": Tok.BIDIR, "<*>": Tok.COOP_ALL,
               "(+)": Tok.ACTIVATOR, "(-)": Tok.INHIBITOR, "(.)": Tok.MODIFIER}
_TWO_CHAR = {"<<": Tok.REACTANT, ">>": Tok.PRODUCT, "->": Tok.TRANSPORT}
_ONE_CHAR = {";": Tok.SEMI, ",": Tok.COMMA, ":": Tok.COLON, "=": Tok.EQUALS,
             "(": Tok.LPAREN, ")": Tok.RPAREN, "[": Tok.LBRACKET,
             "]": Tok.RBRACKET, "@": Tok.AT, "+": Tok.PLUS, "-": Tok.MINUS,
             "*": Tok.STAR, "/": Tok.SLASH, "<": Tok.LANGLE, ">": Tok.RANGLE}

_IDENT_RE = re.compile(r"[A-Za-z][A-Za-z0-9_]*")
_NUMBER_RE = re.compile(r"\d+(?:\.\d+)?(?:[eE][+-]?\d+)?")


def tokenize(text: str) -> tuple[list[Token], list[ParseDiagnostic]]:
    tokens: list[Token] = []
    diagnostics: list[ParseDiagnostic] = []
    pos, line, col = 0, 1, 1
    n = len(text)

    def span(begin, end, bline, bcol):
        return SourceSpan(begin, end, bline, bcol)

    while pos < n:
        ch = text[pos]
        if ch in " \t\r\n":
            if ch == "\n":
                line += 1
                col = 1
            else:
                col += 1
            pos += 1
            continue
        if text.startswith("//", pos):
            end = text.find("\n", pos)
            pos = n if end < 0 else end
            continue
        if text.startswith("/*", pos):
            end = text.find("*/", pos + 2)
            if end < 0:
                diagnostics.append(ParseDiagnostic(
                    Severity.ERROR, "unterminated block comment",
                    span(pos, n, line, col)))
                break
            skipped = text[pos:end + 2]
            newlines = skipped.count("\n")
            if newlines:
                line += newlines
                col = len(skipped) - skipped.rfind("\n")
            else:
                col += len(skipped)
            pos = end + 2
            continue

        begin, bline, bcol = pos, line, col
        three = text[pos:pos + 3]
        if three in _THREE_CHAR:
            tokens.append(Token(_THREE_CHAR[three], three,
                                span(begin, begin + 3, bline, bcol)))
            pos += 3
            col += 3
            continue
        two = text[pos:pos + 2]
        if two in _TWO_CHAR:
            tokens.append(Token(_TWO_CHAR[two], two,
                                span(begin, begin + 2, bline, bcol)))
            pos += 2
            col += 2
            continue
        m = _IDENT_RE.match(text, pos)
        if m:
            tokens.append(Token(Tok.IDENT, m.group(),
                                span(begin, m.end(), bline, bcol)))
            col += m.end() - pos
            pos = m.end()
            continue
        m = _NUMBER_RE.match(text, pos)
        if m:
            tokens.append(Token(Tok.NUMBER, m.group(),
                                span(begin, m.end(), bline, bcol)))
            col += m.end() - pos
            pos = m.end()
            continue
        if ch in _ONE_CHAR:
            tokens.append(Token(_ONE_CHAR[ch], ch,
                                span(begin, begin + 1, bline, bcol)))
            pos += 1
            col += 1
            continue
        diagnostics.append(ParseDiagnostic(
            Severity.ERROR, f"unexpected character {ch!r}",
            span(begin, begin + 1, bline, bcol)))
        pos += 1
        col += 1

    tokens.append(Token(Tok.EOF, "", span(n, n, line, col)))
    return tokens, diagnostics


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_ROLE_TOKENS = {Tok.REACTANT: Role.REACTANT, Tok.PRODUCT: Role.PRODUCT,
                Tok.ACTIVATOR: Role.ACTIVATOR, Tok.INHIBITOR: Role.INHIBITOR,
                Tok.MODIFIER: Role.MODIFIER}

_COMPONENT_MARKERS = frozenset(
    [Tok.REACTANT, Tok.PRODUCT, Tok.ACTIVATOR, Tok.INHIBITOR, Tok.MODIFIER,
     Tok.TRANSPORT, Tok.BIDIR])


class _StatementError(Exception):
    """Internal: abort the current statement and resynchronise."""


class _Parser:
    def __init__(self, tokens: list[Token], diagnostics: list[ParseDiagnostic]):
        self.tokens = tokens
        self.pos = 0
        self.diagnostics = diagnostics
        self.locations: list[Location] = []
        self.parameters: list[Parameter] = []
        self.kinetic_laws: dict[str, KineticLaw] = {}
        self.components: dict[str, SpeciesComponent] = {}
        self.observables: list[Observable] = []
        self.compositions: dict[str, object] = {}
        self.model = None
        self.model_span = None

    # -- token plumbing ---------------------------------------------------

    def peek(self, offset=0) -> Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.kind is not Tok.EOF:
            self.pos += 1
        return tok

    def check(self, kind: Tok) -> bool:
        return self.peek().kind is kind

    def accept(self, kind: Tok) -> Token | None:
        if self.check(kind):
            return self.advance()
        return None

    def expect(self, kind: Tok, context: str) -> Token:
        tok = self.peek()
        if tok.kind is kind:
            return self.advance()
        self.error(f"expected {kind.value} {context}, found {describe(tok)}",
                   tok.span)
        raise _StatementError()

    def error(self, message: str, span: SourceSpan) -> None:
        self.diagnostics.append(ParseDiagnostic(Severity.ERROR, message, span))

    def warn(self, message: str, span: SourceSpan) -> None:
        self.diagnostics.append(ParseDiagnostic(Severity.WARNING, message, span))

    def resync(self) -> None:
        while not self.check(Tok.EOF):
            if self.advance().kind is Tok.SEMI:
                return

    # -- document ---------------------------------------------------------

    def parse_document(self) -> None:
        while not self.check(Tok.EOF):
            start = self.pos
            try:
                self.parse_statement()
            except _StatementError:
                if self.pos == start:
                    self.advance()
                self.resync()

    def parse_statement(self) -> None:
        tok = self.peek()
        if tok.kind is Tok.IDENT and tok.text == "location":
            self.parse_location()
        elif tok.kind is Tok.IDENT and tok.text == "kineticLawOf":
            self.parse_kinetic_law()
        elif tok.kind is Tok.IDENT and self.peek(1).kind is Tok.DEFINE:
            self.parse_composition()
        elif tok.kind is Tok.IDENT and self.peek(1).kind is Tok.EQUALS:
            self.parse_equation()
        else:
            self.parse_model_component()

    # -- individual statements ---------------------------------------------

    def parse_location(self) -> None:
        keyword = self.advance()
        name = self.expect(Tok.IDENT, "as location name")
        parent = None
        if self.check(Tok.IDENT) and self.peek().text == "in":
            self.advance()
            parent = self.expect(Tok.IDENT, "as enclosing location").text
        self.expect(Tok.COLON, "after location name")
        size = None
        kind = None
        unit = None
        while True:
            prop = self.expect(Tok.IDENT, "as location property")
            self.expect(Tok.EQUALS, f"after {prop.text}")
            if prop.text == "size":
                size = self.parse_expr()
            elif prop.text == "kind":
                value = self.expect(Tok.IDENT, "as location kind")
                if value.text == "compartment":
                    kind = LocationKind.COMPARTMENT
                elif value.text == "membrane":
                    kind = LocationKind.MEMBRANE
                else:
                    self.error("location kind must be compartment or membrane",
                               value.span)
                    raise _StatementError()
            elif prop.text == "unit":
                unit = self.expect(Tok.IDENT, "as unit annotation").text
            else:
                self.error(f"unknown location property {prop.text!r}",
                           prop.span)
                raise _StatementError()
            if not self.accept(Tok.COMMA):
                break
        self.expect(Tok.SEMI, "to terminate the location definition")
        if size is None:
            self.error(f"location {name.text} is missing its size", name.span)
            return
        if kind is None:
            self.error(f"location {name.text} is missing its kind", name.span)
            return
        self.locations.append(Location(
            name=name.text, size=size, kind=kind, parent=parent, unit=unit,
            span=_merge(keyword.span, name.span)))

    def parse_kinetic_law(self) -> None:
        keyword = self.advance()
        action = self.expect(Tok.IDENT, "as the rated action")
        self.expect(Tok.COLON, "after the action name")
        tok = self.peek()
        if tok.kind is Tok.IDENT and tok.text in ("fMA", "fMM") \
                and self.peek(1).kind is Tok.LPAREN:
            self.advance()
            self.expect(Tok.LPAREN, f"after {tok.text}")
            first = self.parse_expr()
            if tok.text == "fMA":
                body = MassAction(first)
            else:
                self.expect(Tok.COMMA, "between the fMM arguments")
                second = self.parse_expr()
                body = MichaelisMenten(first, second)
            self.expect(Tok.RPAREN, f"to close {tok.text}")
        else:
            body = CustomRate(self.parse_expr())
        self.expect(Tok.SEMI, "to terminate the kinetic law")
        if action.text in self.kinetic_laws:
            self.error(f"duplicate kinetic law for action {action.text}",
                       action.span)
            return
        self.kinetic_laws[action.text] = KineticLaw(
            action=action.text, body=body,
            span=_merge(keyword.span, action.span))

    def parse_equation(self) -> None:
        name = self.advance()
        self.advance()  # '='
        if self.rhs_is_species_component():
            terms = self.parse_species_terms(name)
            self.expect(Tok.SEMI, "to terminate the species definition")
            if name.text in self.components:
                self.error(f"duplicate species component {name.text}",
                           name.span)
                return
            self.components[name.text] = SpeciesComponent(
                name=name.text, terms=tuple(terms), span=name.span)
        else:
            expr = self.parse_expr()
            self.expect(Tok.SEMI, "to terminate the definition")
            if expression_species(expr):
                self.observables.append(Observable(
                    name=name.text, body=expr, span=name.span))
            else:
                self.parameters.append(Parameter(
                    name=name.text, value=expr, span=name.span))

    def rhs_is_species_component(self) -> bool:
        """Look ahead to the statement terminator for a prefix operator."""
        offset = 0
        while True:
            tok = self.peek(offset)
            if tok.kind in (Tok.SEMI, Tok.EOF):
                return False
            if tok.kind in _COMPONENT_MARKERS:
                return True
            offset += 1

    def parse_species_terms(self, component: Token) -> list[PrefixTerm]:
        terms = [self.parse_prefix_term(component)]
        while self.accept(Tok.PLUS):
            terms.append(self.parse_prefix_term(component))
        return terms

    def parse_prefix_term(self, component: Token) -> PrefixTerm:
        start = self.peek()
        if self.accept(Tok.LPAREN):
            action = self.expect(Tok.IDENT, "as action name")
            self.expect(Tok.COMMA, "between action and stoichiometry")
            number = self.expect(Tok.NUMBER, "as stoichiometry")
            self.expect(Tok.RPAREN, "after the stoichiometry")
            stoich = float(number.text)
            if stoich != int(stoich) or stoich < 1:
                self.error("stoichiometry must be a positive integer",
                           number.span)
                raise _StatementError()
            stoich = int(stoich)
        else:
            action = self.expect(Tok.IDENT, "as action name")
            stoich = 1

        tok = self.peek()
        if tok.kind in _ROLE_TOKENS:
            self.advance()
            species, location = self.parse_operand(component)
            return PrefixTerm(action=action.text, role=_ROLE_TOKENS[tok.kind],
                              stoichiometry=stoich, location=location,
                              span=_merge(start.span, tok.span))
        if tok.kind is Tok.IDENT:
            species, source = self.parse_operand(component)
            arrow = self.peek()
            if arrow.kind is Tok.BIDIR:
                self.error(
                    "bi-directional transport '<->' is not supported; "
                    "decompose it into forward and backward actions with "
                    "'->'", arrow.span)
                raise _StatementError()
            self.expect(Tok.TRANSPORT, "in the transport term")
            species2, dest = self.parse_operand(component)
            if source is None or dest is None:
                self.error("transport requires explicit @locations on both "
                           "sides", arrow.span)
                raise _StatementError()
            return PrefixTerm(action=action.text, role=Role.TRANSPORT,
                              stoichiometry=stoich, location=source,
                              destination=dest,
                              span=_merge(start.span, arrow.span))
        self.error(f"expected a prefix operator, found {describe(tok)}",
                   tok.span)
        raise _StatementError()

    def parse_operand(self, component: Token) -> tuple[str, str | None]:
        name = self.expect(Tok.IDENT, "as the species operand")
        if name.text != component.text:
            self.error(
                f"prefix operand {name.text} must repeat the species being "
                f"defined ({component.text})", name.span)
            raise _StatementError()
        location = None
        if self.accept(Tok.AT):
            location = self.expect(Tok.IDENT, "as the location qualifier").text
        return name.text, location

    def parse_composition(self) -> None:
        name = self.advance()
        self.advance()  # '::='
        tree = self.parse_model_expr()
        self.expect(Tok.SEMI, "to terminate the labelled composition")
        if name.text in self.compositions:
            self.error(f"duplicate labelled composition {name.text}",
                       name.span)
            return
        self.compositions[name.text] = tree

    def parse_model_component(self) -> None:
        start = self.peek()
        tree = self.parse_model_expr()
        self.accept(Tok.SEMI)
        if not self.check(Tok.EOF):
            self.error("the model component must be the final statement",
                       self.peek().span)
            raise _StatementError()
        self.model = tree
        self.model_span = start.span

    def parse_model_expr(self):
        node = self.parse_model_atom()
        while True:
            tok = self.peek()
            if tok.kind is Tok.COOP_ALL:
                self.advance()
                actions = None
            elif tok.kind is Tok.LANGLE:
                self.advance()
                names = [self.expect(Tok.IDENT, "in the cooperation set").text]
                while self.accept(Tok.COMMA):
                    names.append(
                        self.expect(Tok.IDENT, "in the cooperation set").text)
                self.expect(Tok.RANGLE, "to close the cooperation set")
                actions = frozenset(names)
            else:
                return node
            right = self.parse_model_atom()
            node = Cooperation(left=node, right=right, actions=actions,
                               span=tok.span)

    def parse_model_atom(self):
        if self.accept(Tok.LPAREN):
            node = self.parse_model_expr()
            self.expect(Tok.RPAREN, "to close the grouped composition")
            return node
        name = self.expect(Tok.IDENT, "as a species instance or composition "
                                      "name")
        if self.check(Tok.AT):
            self.advance()
            location = self.expect(Tok.IDENT, "as the instance location")
            self.expect(Tok.LBRACKET, "before the initial amount")
            negative = self.accept(Tok.MINUS) is not None
            number = self.expect(Tok.NUMBER, "as the initial amount")
            self.expect(Tok.RBRACKET, "after the initial amount")
            value = float(number.text)
            return SpeciesLeaf(species=name.text, location=location.text,
                               initial=-value if negative else value,
                               span=_merge(name.span, number.span))
        if self.check(Tok.LBRACKET):
            self.error(f"species instance {name.text} requires an @location "
                       "qualifier", name.span)
            raise _StatementError()
        return CompositionRef(name=name.text, span=name.span)

    # -- expressions --------------------------------------------------------

    def parse_expr(self) -> Expression:
        node = self.parse_term()
        while True:
            if self.check(Tok.PLUS):
                op = self.advance()
                node = BinaryOp("+", node, self.parse_term(), span=op.span)
            elif self.check(Tok.MINUS):
                op = self.advance()
                node = BinaryOp("-", node, self.parse_term(), span=op.span)
            else:
                return node

    def parse_term(self) -> Expression:
        node = self.parse_unary()
        while True:
            if self.check(Tok.STAR):
                op = self.advance()
                node = BinaryOp("*", node, self.parse_unary(), span=op.span)
            elif self.check(Tok.SLASH):
                op = self.advance()
                node = BinaryOp("/", node, self.parse_unary(), span=op.span)
            else:
                return node

    def parse_unary(self) -> Expression:
        if self.check(Tok.MINUS):
            op = self.advance()
            return Negate(self.parse_unary(), span=op.span)
        return self.parse_atom()

    def parse_atom(self) -> Expression:
        tok = self.peek()
        if tok.kind is Tok.NUMBER:
            self.advance()
            return Number(float(tok.text), span=tok.span)
        if tok.kind is Tok.IDENT:
            self.advance()
            if self.check(Tok.AT):
                self.advance()
                loc = self.expect(Tok.IDENT, "as the location qualifier")
                return SpeciesRef(tok.text, loc.text,
                                  span=_merge(tok.span, loc.span))
            return Name(tok.text, span=tok.span)
        if tok.kind is Tok.LPAREN:
            self.advance()
            node = self.parse_expr()
            self.expect(Tok.RPAREN, "to close the expression")
            return node
        self.error(f"expected an expression, found {describe(tok)}", tok.span)
        raise _StatementError()


def _merge(a: SourceSpan, b: SourceSpan) -> SourceSpan:
    return SourceSpan(min(a.begin, b.begin), max(a.end, b.end),
                      a.line, a.column)


def describe(tok: Token) -> str:
    if tok.kind in (Tok.IDENT, Tok.NUMBER):
        return f"{tok.kind.value} {tok.text!r}"
    return tok.kind.value


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------

def parse_system(text: str) -> tuple[BioPepaSystem | None,
                                     list[ParseDiagnostic]]:
    """Parse a complete model document.

    Returns ``(system, diagnostics)``; ``system`` is None exactly when any
    diagnostic has severity ERROR.
    """
    tokens, diagnostics = tokenize(text)
    parser = _Parser(tokens, diagnostics)
    parser.parse_document()

    if parser.model is None and not _has_error(diagnostics):
        eof = tokens[-1]
        parser.error("the document is missing its model component", eof.span)
    if _has_error(diagnostics):
        return None, diagnostics

    try:
        tree = build_location_tree(parser.locations)
    except DuplicateLocationError as exc:
        parser.error(f"duplicate location {exc.args[0]}",
                     _location_span(parser.locations, str(exc.args[0])))
        return None, diagnostics
    except UnknownParentError as exc:
        parser.error(f"unknown enclosing location: {exc.args[0]}",
                     parser.locations[0].span)
        return None, diagnostics
    except CyclicHierarchyError as exc:
        parser.error(str(exc.args[0]), parser.locations[0].span)
        return None, diagnostics

    system = BioPepaSystem(
        locations=tree,
        parameters=tuple(parser.parameters),
        kinetic_laws=parser.kinetic_laws,
        components=parser.components,
        model=parser.model,
        observables=tuple(parser.observables),
        compositions=parser.compositions,
    )
    return system, diagnostics


def parse_expression(text: str) -> tuple[Expression | None,
                                         list[ParseDiagnostic]]:
    """Parse a single arithmetic fragment (law body, size, observable...)."""
    tokens, diagnostics = tokenize(text)
    parser = _Parser(tokens, diagnostics)
    expr = None
    try:
        expr = parser.parse_expr()
        if not parser.check(Tok.EOF):
            parser.error(f"unexpected {describe(parser.peek())} after the "
                         "expression", parser.peek().span)
    except _StatementError:
        pass
    if _has_error(diagnostics):
        return None, diagnostics
    return expr, diagnostics


def _has_error(diagnostics) -> bool:
    return any(d.severity is Severity.ERROR for d in diagnostics)


def _location_span(locations, name):
    for loc in locations:
        if loc.name == name and loc.span is not None:
            return loc.span
    return SourceSpan(0, 0, 1, 1)


# ---------------------------------------------------------------------------
# Pretty printer
# ---------------------------------------------------------------------------

_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2}


def format_expression(expr: Expression) -> str:
    return _fmt_expr(expr, 0)


def _fmt_expr(expr: Expression, parent_prec: int) -> str:
    if isinstance(expr, Number):
        return _fmt_number(expr.value)
    if isinstance(expr, Name):
        return expr.name
    if isinstance(expr, SpeciesRef):
        return f"{expr.species}@{expr.location}"
    if isinstance(expr, Negate):
        inner = _fmt_expr(expr.operand, 3)
        return f"-{inner}"
    if isinstance(expr, BinaryOp):
        prec = _PRECEDENCE[expr.op]
        left = _fmt_expr(expr.left, prec)
        # operators parse left-associative, so a right operand of equal
        # precedence needs parentheses to reparse with the same shape
        right = _fmt_expr(expr.right, prec + 1)
        text = f"{left} {expr.op} {right}"
        return f"({text})" if prec < parent_prec else text
    raise TypeError(f"cannot print resolved expression node {expr!r}")


def _fmt_number(value: float) -> str:
    if value == int(value) and abs(value) < 1e16:
        return str(int(value))
    return repr(value)


def format_system(system: BioPepaSystem) -> str:
    """Render a system back to tool syntax; reparsing the output yields a
    structurally identical system."""
    lines: list[str] = []
    for loc in system.locations:
        head = f"location {loc.name}"
        if loc.parent is not None:
            head += f" in {loc.parent}"
        props = [f"size = {format_expression(loc.size)}",
                 f"kind = {loc.kind.value}"]
        if loc.unit is not None:
            props.append(f"unit = {loc.unit}")
        lines.append(f"{head} : " + ", ".join(props) + ";")
    for param in system.parameters:
        lines.append(f"{param.name} = {format_expression(param.value)};")
    for law in system.kinetic_laws.values():
        lines.append(f"kineticLawOf {law.action} : {_fmt_law(law.body)};")
    for comp in system.components.values():
        terms = " + ".join(_fmt_term(term, comp.name) for term in comp.terms)
        lines.append(f"{comp.name} = {terms};")
    for obs in system.observables:
        lines.append(f"{obs.name} = {format_expression(obs.body)};")
    for name, tree in system.compositions.items():
        lines.append(f"{name} ::= {_fmt_model(tree)};")
    lines.append(_fmt_model(system.model))
    return "\n".join(lines) + "\n"


def _fmt_law(body) -> str:
    if isinstance(body, MassAction):
        return f"fMA({format_expression(body.rate)})"
    if isinstance(body, MichaelisMenten):
        return (f"fMM({format_expression(body.vmax)}, "
                f"{format_expression(body.km)})")
    return format_expression(body.body)


def _fmt_term(term: PrefixTerm, species: str) -> str:
    head = (term.action if term.stoichiometry == 1
            else f"({term.action}, {term.stoichiometry})")
    at = f"@{term.location}" if term.location is not None else ""
    if term.role is Role.TRANSPORT:
        return f"{head} {species}{at} -> {species}@{term.destination}"
    return f"{head} {term.role.value} {species}{at}"


def _fmt_model(node) -> str:
    if isinstance(node, SpeciesLeaf):
        return f"{node.species}@{node.location}[{_fmt_number(node.initial)}]"
    if isinstance(node, CompositionRef):
        return node.name
    coop = "<*>" if node.actions is None else \
        "<" + ", ".join(sorted(node.actions)) + ">"
    left = _fmt_model(node.left)
    right = _fmt_model(node.right)
    if isinstance(node.right, Cooperation):
        right = f"({right})"
    return f"{left} {coop} {right}"
