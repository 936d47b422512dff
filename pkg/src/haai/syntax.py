"""S-expression reader, Haai AST, parser and canonical printer.

The reader turns text into :class:`Symbol` / :class:`Atom` / :class:`SList`
data; the parser turns data into :class:`Program`, :class:`ReactorDef`,
:class:`SignalDef` and expression nodes.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import Iterator, Union

from . import errors

RESERVED = frozenset({"defr", "defn", "def", "out", "if", "rho", "|"})
DEFR_KEYWORDS = ("defr", "defn")

_INT_RE = re.compile(r"[+-]?\d+\Z")
_DEC_RE = re.compile(r"[+-]?(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?\Z")
_NUMBERISH_RE = re.compile(r"[+-]?\.?\d")
_DELIMS = frozenset("()\";")


@dataclass(frozen=True)
class SourceSpan:
    file: str
    line: int
    column: int
    length: int = 0

    def __str__(self) -> str:
        return f"{self.file}:{self.line}:{self.column}"


_NOSPAN = SourceSpan("<generated>", 1, 1, 0)


# --- data -----------------------------------------------------------------

@dataclass(frozen=True)
class Symbol:
    name: str
    span: SourceSpan = field(default=_NOSPAN, compare=False, repr=False)


@dataclass(frozen=True, eq=False)
class Atom:
    """Literal datum: int, Decimal, bool or str."""

    value: int | Decimal | bool | str
    span: SourceSpan = field(default=_NOSPAN, repr=False)

    def __eq__(self, other: object) -> bool:
        return (isinstance(other, Atom) and type(self.value) is type(other.value)
                and self.value == other.value)

    def __hash__(self) -> int:
        return hash((type(self.value), self.value))


@dataclass(frozen=True)
class SList:
    items: tuple[Datum, ...]
    span: SourceSpan = field(default=_NOSPAN, compare=False, repr=False)


Datum = Union[Symbol, Atom, SList]


# --- reader ---------------------------------------------------------------

def _parse_atom(tok: str, span: SourceSpan) -> Datum:
    if tok in ("#t", "#true"):
        return Atom(True, span)
    if tok in ("#f", "#false"):
        return Atom(False, span)
    if _INT_RE.match(tok):
        return Atom(int(tok), span)
    if _DEC_RE.match(tok):
        try:
            return Atom(Decimal(tok), span)
        except InvalidOperation:  # pragma: no cover - regex already guards
            raise errors.InvalidNumber(f"bad number {tok!r}", span)
    if _NUMBERISH_RE.match(tok):
        raise errors.InvalidNumber(f"bad number {tok!r}", span)
    return Symbol(tok, span)


_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", '"': '"', "\\": "\\"}


def read_data(text: str, filename: str = "<input>") -> list[Datum]:
    """Read every top-level datum of ``text``; ``;`` comments are dropped."""
    pos, line, col = 0, 1, 1
    n = len(text)
    stack: list[tuple[list[Datum], SourceSpan, int]] = []
    top: list[Datum] = []

    def emit(d: Datum) -> None:
        (stack[-1][0] if stack else top).append(d)

    while pos < n:
        ch = text[pos]
        if ch == "\n":
            pos, line, col = pos + 1, line + 1, 1
        elif ch.isspace():
            pos, col = pos + 1, col + 1
        elif ch == ";":
            while pos < n and text[pos] != "\n":
                pos += 1
        elif ch == "(":
            stack.append(([], SourceSpan(filename, line, col), pos))
            pos, col = pos + 1, col + 1
        elif ch == ")":
            if not stack:
                raise errors.UnbalancedParens("unexpected ')'", SourceSpan(filename, line, col, 1))
            items, start, offset = stack.pop()
            emit(SList(tuple(items), SourceSpan(filename, start.line, start.column, pos + 1 - offset)))
            pos, col = pos + 1, col + 1
        elif ch == '"':
            sline, scol = line, col
            buf: list[str] = []
            pos, col = pos + 1, col + 1
            while True:
                if pos >= n:
                    raise errors.UnterminatedString(
                        "string not closed", SourceSpan(filename, sline, scol, 1))
                c = text[pos]
                if c == '"':
                    pos, col = pos + 1, col + 1
                    break
                if c == "\\" and pos + 1 < n:
                    buf.append(_ESCAPES.get(text[pos + 1], text[pos + 1]))
                    pos, col = pos + 2, col + 2
                    continue
                if c == "\n":
                    line, col = line + 1, 0
                buf.append(c)
                pos, col = pos + 1, col + 1
            emit(Atom("".join(buf), SourceSpan(filename, sline, scol, len(buf) + 2)))
        else:
            start = pos
            while pos < n and not text[pos].isspace() and text[pos] not in _DELIMS:
                pos += 1
            tok = text[start:pos]
            emit(_parse_atom(tok, SourceSpan(filename, line, col, len(tok))))
            col += len(tok)
    if stack:
        raise errors.UnbalancedParens("missing ')'", stack[-1][1])
    return top


# --- AST ------------------------------------------------------------------

@dataclass(frozen=True)
class VarRef:
    name: str
    span: SourceSpan = field(default=_NOSPAN, compare=False, repr=False)


@dataclass(frozen=True, eq=False)
class Literal:
    value: int | Decimal | bool | str
    span: SourceSpan = field(default=_NOSPAN, repr=False)

    def __eq__(self, other: object) -> bool:
        return (isinstance(other, Literal) and type(self.value) is type(other.value)
                and self.value == other.value)

    def __hash__(self) -> int:
        return hash((type(self.value), self.value))


@dataclass(frozen=True)
class Deploy:
    operator: Expr
    operands: tuple[Expr, ...]
    span: SourceSpan = field(default=_NOSPAN, compare=False, repr=False)


@dataclass(frozen=True)
class If:
    cond: Expr
    consequent: Expr
    alternate: Expr
    span: SourceSpan = field(default=_NOSPAN, compare=False, repr=False)


@dataclass(frozen=True)
class SignalDef:
    targets: tuple[str, ...]
    expr: Expr
    span: SourceSpan = field(default=_NOSPAN, compare=False, repr=False)


@dataclass(frozen=True)
class Body:
    defs: tuple[SignalDef, ...]
    sinks: tuple[Expr, ...]
    updates: tuple[Expr, ...] = ()


@dataclass(frozen=True)
class Rho:
    params: tuple[str, ...]
    body: Body
    span: SourceSpan = field(default=_NOSPAN, compare=False, repr=False)


Expr = Union[VarRef, Literal, Deploy, If, Rho]


@dataclass(frozen=True)
class TrampolineDecl:
    name: str
    init: Expr
    span: SourceSpan = field(default=_NOSPAN, compare=False, repr=False)


@dataclass(frozen=True)
class ReactorDef:
    name: str
    params: tuple[str, ...]
    trampolines: tuple[TrampolineDecl, ...]
    body: Body
    span: SourceSpan = field(default=_NOSPAN, compare=False, repr=False)

    @property
    def body_defs(self) -> tuple[SignalDef, ...]:
        return self.body.defs

    @property
    def sinks(self) -> tuple[Expr, ...]:
        return self.body.sinks

    @property
    def trampoline_updates(self) -> tuple[Expr, ...]:
        return self.body.updates


Definition = Union[ReactorDef, SignalDef]


@dataclass(frozen=True)
class Program:
    definitions: tuple[Definition, ...]

    @property
    def reactors(self) -> list[ReactorDef]:
        return [d for d in self.definitions if isinstance(d, ReactorDef)]

    @property
    def signal_defs(self) -> list[SignalDef]:
        return [d for d in self.definitions if isinstance(d, SignalDef)]

    def reactor(self, name: str) -> ReactorDef | None:
        for d in self.reactors:
            if d.name == name:
                return d
        return None


# --- parser ---------------------------------------------------------------

def _head(d: Datum) -> str | None:
    if isinstance(d, SList) and d.items and isinstance(d.items[0], Symbol):
        return d.items[0].name
    return None


def _is_bar(d: Datum) -> bool:
    return isinstance(d, Symbol) and d.name == "|"


def _identifier(d: Datum, err: type[errors.ParseError], what: str) -> str:
    if not isinstance(d, Symbol):
        raise err(f"{what} must be an identifier", getattr(d, "span", None))
    if d.name in RESERVED:
        raise errors.ReservedWord(f"{d.name!r} cannot be used as {what}", d.span)
    return d.name


def parse_program(data: list[Datum]) -> Program:
    defs: list[Definition] = []
    seen: set[str] = set()
    for d in data:
        head = _head(d)
        if head in DEFR_KEYWORDS:
            rdef = parse_reactor_def(d)
            if rdef.name in seen:
                raise errors.DuplicateReactor(f"reactor {rdef.name!r} defined twice", d.span)
            seen.add(rdef.name)
            defs.append(rdef)
        elif head == "def":
            defs.append(parse_signal_def(d))
        else:
            raise errors.NotADefinition("top-level form must be defr or def",
                                        getattr(d, "span", None))
    return Program(tuple(defs))


def parse(text: str, filename: str = "<input>") -> Program:
    return parse_program(read_data(text, filename))


def parse_reactor_def(d: Datum) -> ReactorDef:
    assert isinstance(d, SList)
    items = d.items
    if len(items) < 3 or not isinstance(items[1], SList) or not items[1].items:
        raise errors.MalformedDefr("expected (defr (name param ...) body)", d.span)
    header = items[1].items
    name = _identifier(header[0], errors.MalformedDefr, "a reactor name")
    bars = [i for i, h in enumerate(header) if _is_bar(h)]
    if len(bars) > 1:
        raise errors.MalformedDefr("more than one '|' in reactor header", items[1].span)
    split = bars[0] if bars else len(header)
    params = tuple(_identifier(p, errors.MalformedDefr, "a parameter") for p in header[1:split])
    if not params:
        raise errors.MalformedDefr(f"reactor {name!r} needs at least one parameter", items[1].span)
    tdecls: list[TrampolineDecl] = []
    if bars:
        if split == len(header) - 1:
            raise errors.BarWithoutTrampolines("'|' not followed by trampoline declarations",
                                               header[split].span)
        for t in header[split + 1:]:
            if not isinstance(t, SList) or len(t.items) != 2:
                raise errors.MalformedDefr("trampoline must be (name init-expression)",
                                           getattr(t, "span", None))
            tname = _identifier(t.items[0], errors.MalformedDefr, "a trampoline name")
            tdecls.append(TrampolineDecl(tname, parse_expression(t.items[1]), t.span))
    names = list(params) + [t.name for t in tdecls]
    _check_distinct(names, items[1].span)
    body = _parse_body(items[2:], d.span, errors.MalformedDefr, allow_updates=True)
    if tdecls and not body.updates:
        raise errors.MissingTrampolineUpdates(
            f"reactor {name!r} declares trampolines but its out form has no '| update ...'", d.span)
    if body.updates and not tdecls:
        raise errors.BarWithoutTrampolines(
            f"reactor {name!r} has trampoline updates but declares no trampolines", d.span)
    if body.updates and len(body.updates) != len(tdecls):
        raise errors.MalformedDefr(
            f"{len(tdecls)} trampolines but {len(body.updates)} update expressions", d.span)
    return ReactorDef(name, params, tuple(tdecls), body, d.span)


def _check_distinct(names: list[str], span: SourceSpan | None) -> None:
    seen: set[str] = set()
    for n in names:
        if n in seen:
            raise errors.DuplicateParam(f"{n!r} bound twice", span)
        seen.add(n)


def parse_signal_def(d: Datum) -> SignalDef:
    assert isinstance(d, SList)
    if len(d.items) != 3:
        raise errors.MalformedDef("expected (def name expression)", d.span)
    tgt = d.items[1]
    if isinstance(tgt, SList):
        if not tgt.items:
            raise errors.MalformedDef("def needs at least one target", tgt.span)
        targets = tuple(_identifier(t, errors.MalformedDef, "a def target") for t in tgt.items)
        if len(set(targets)) != len(targets):
            raise errors.MalformedDef("def targets must be distinct", tgt.span)
    else:
        targets = (_identifier(tgt, errors.MalformedDef, "a def target"),)
    return SignalDef(targets, parse_expression(d.items[2]), d.span)


def _parse_body(items: tuple[Datum, ...], span: SourceSpan, err: type[errors.ParseError],
                allow_updates: bool) -> Body:
    if not items:
        raise err("body has no sink expression", span)
    defs = []
    for it in items[:-1]:
        if _head(it) != "def":
            raise err("only def forms may precede the sink expression",
                      getattr(it, "span", span))
        defs.append(parse_signal_def(it))
    last = items[-1]
    head = _head(last)
    if head == "def":
        raise err("body has no sink expression", last.span)
    if head == "out":
        assert isinstance(last, SList)
        rest = last.items[1:]
        bars = [i for i, x in enumerate(rest) if _is_bar(x)]
        if len(bars) > 1:
            raise err("more than one '|' in out form", last.span)
        split = bars[0] if bars else len(rest)
        sinks = tuple(parse_expression(x) for x in rest[:split])
        if not sinks:
            raise err("out form needs at least one sink", last.span)
        updates: tuple[Expr, ...] = ()
        if bars:
            if not allow_updates:
                raise err("anonymous reactors cannot update trampolines", last.span)
            updates = tuple(parse_expression(x) for x in rest[split + 1:])
            if not updates:
                raise errors.MissingTrampolineUpdates("'|' not followed by update expressions",
                                                      last.span)
        return Body(tuple(defs), sinks, updates)
    return Body(tuple(defs), (parse_expression(last),))


def parse_expression(d: Datum) -> Expr:
    if isinstance(d, Symbol):
        if d.name in RESERVED:
            raise errors.ReservedWord(f"{d.name!r} is not an expression", d.span)
        return VarRef(d.name, d.span)
    if isinstance(d, Atom):
        return Literal(d.value, d.span)
    if not d.items:
        raise errors.EmptyDeploy("empty deployment expression ()", d.span)
    head = _head(d)
    if head == "if":
        if len(d.items) != 4:
            raise errors.MalformedIf(f"if takes exactly 3 expressions, got {len(d.items) - 1}",
                                     d.span)
        c, t, e = (parse_expression(x) for x in d.items[1:])
        return If(c, t, e, d.span)
    if head == "rho":
        if len(d.items) < 3 or not isinstance(d.items[1], SList):
            raise errors.MalformedRho("expected (rho (param ...) body)", d.span)
        params = tuple(_identifier(p, errors.MalformedRho, "a rho parameter")
                       for p in d.items[1].items)
        if len(set(params)) != len(params):
            raise errors.DuplicateParam("rho parameters must be distinct", d.items[1].span)
        body = _parse_body(d.items[2:], d.span, errors.MalformedRho, allow_updates=False)
        return Rho(params, body, d.span)
    if head in RESERVED:
        raise errors.ReservedWord(f"{head!r} form not allowed here", d.span)
    op = parse_expression(d.items[0])
    return Deploy(op, tuple(parse_expression(x) for x in d.items[1:]), d.span)


# --- traversal ------------------------------------------------------------

def subexpressions(e: Expr) -> Iterator[Expr]:
    """Pre-order walk of ``e`` including nested rho bodies."""
    stack = [e]
    while stack:
        cur = stack.pop()
        yield cur
        if isinstance(cur, Deploy):
            stack.extend(reversed((cur.operator, *cur.operands)))
        elif isinstance(cur, If):
            stack.extend((cur.alternate, cur.consequent, cur.cond))
        elif isinstance(cur, Rho):
            stack.extend(reversed(list(body_expressions(cur.body))))


def body_expressions(body: Body) -> Iterator[Expr]:
    for d in body.defs:
        yield d.expr
    yield from body.sinks
    yield from body.updates


def reactor_expressions(rdef: ReactorDef) -> Iterator[Expr]:
    for t in rdef.trampolines:
        yield t.init
    yield from body_expressions(rdef.body)


# --- printer --------------------------------------------------------------

def format_literal(v: int | Decimal | bool | str) -> str:
    if isinstance(v, bool):
        return "#t" if v else "#f"
    if isinstance(v, str):
        out = v.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\t", "\\t")
        return f'"{out}"'
    return str(v)


def to_source(node: Program | Definition | Expr | Body) -> str:
    """Canonical S-expression text; re-parsing yields an equal tree."""
    if isinstance(node, Program):
        return "\n".join(to_source(d) for d in node.definitions)
    if isinstance(node, VarRef):
        return node.name
    if isinstance(node, Literal):
        return format_literal(node.value)
    if isinstance(node, Deploy):
        return "(" + " ".join(to_source(x) for x in (node.operator, *node.operands)) + ")"
    if isinstance(node, If):
        return f"(if {to_source(node.cond)} {to_source(node.consequent)} {to_source(node.alternate)})"
    if isinstance(node, Rho):
        return f"(rho ({' '.join(node.params)}) {to_source(node.body)})"
    if isinstance(node, SignalDef):
        tgt = node.targets[0] if len(node.targets) == 1 else f"({' '.join(node.targets)})"
        return f"(def {tgt} {to_source(node.expr)})"
    if isinstance(node, Body):
        parts = [to_source(d) for d in node.defs]
        if len(node.sinks) == 1 and not node.updates:
            parts.append(to_source(node.sinks[0]))
        else:
            out = " ".join(to_source(s) for s in node.sinks)
            if node.updates:
                out += " | " + " ".join(to_source(u) for u in node.updates)
            parts.append(f"(out {out})")
        return " ".join(parts)
    if isinstance(node, ReactorDef):
        head = " ".join((node.name, *node.params))
        if node.trampolines:
            head += " | " + " ".join(f"({t.name} {to_source(t.init)})" for t in node.trampolines)
        return f"(defr ({head}) {to_source(node.body)})"
    raise TypeError(f"cannot print {node!r}")
