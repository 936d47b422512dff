from __future__ import annotations

from functools import lru_cache
from decimal import Decimal

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from haai import errors
from haai.fixtures import fixture_names, fixture_text
from haai.syntax import (RESERVED, Body, Deploy, If, Literal, Program, ReactorDef, Rho, SignalDef,
                         SList, TrampolineDecl, VarRef, parse, read_data, subexpressions,
                         to_source)

from support import reference_listing

# --- generators of well-formed programs -----------------------------------

idents = st.from_regex(r"[a-z][a-z0-9?!*-]{0,5}", fullmatch=True).filter(
    lambda s: s not in RESERVED)
literals = st.one_of(
    st.integers(-10**6, 10**6),
    st.decimals(min_value=-1000, max_value=1000, places=2, allow_nan=False,
                allow_infinity=False),
    st.booleans(),
    st.text(alphabet='abc xyz"\\\n', max_size=6),
).map(Literal)


@lru_cache(maxsize=None)
def exprs(depth: int = 3):
    leaf = st.one_of(idents.map(VarRef), literals)
    if depth == 0:
        return leaf
    sub = exprs(depth - 1)
    return st.one_of(
        leaf,
        st.builds(lambda op, args: Deploy(op, tuple(args)), sub, st.lists(sub, max_size=3)),
        st.builds(If, sub, sub, sub),
        st.builds(lambda ps, b: Rho(tuple(ps), b),
                  st.lists(idents, min_size=1, max_size=3, unique=True), bodies(depth - 1)),
    )


@lru_cache(maxsize=None)
def signal_defs(depth: int):
    return st.builds(lambda ts, e: SignalDef(tuple(ts), e),
                     st.lists(idents, min_size=1, max_size=3, unique=True), exprs(depth))


@lru_cache(maxsize=None)
def bodies(depth: int, updates: int = 0):
    sinks = st.lists(exprs(depth), min_size=1, max_size=3)
    ups = st.lists(exprs(depth), min_size=updates, max_size=updates)
    return st.builds(lambda ds, ss, us: Body(tuple(ds), tuple(ss), tuple(us)),
                     st.lists(signal_defs(depth), max_size=2), sinks, ups)


@st.composite
def reactor_defs(draw):
    names = draw(st.lists(idents, min_size=2, max_size=6, unique=True))
    name, rest = names[0], names[1:]
    k = draw(st.integers(0, len(rest) - 1))
    params, tnames = rest[:len(rest) - k], rest[len(rest) - k:]
    tramps = tuple(TrampolineDecl(t, draw(exprs(1))) for t in tnames)
    body = draw(bodies(2, updates=len(tramps)))
    return ReactorDef(name, tuple(params), tramps, body)


@st.composite
def programs(draw):
    rdefs = draw(st.lists(reactor_defs(), max_size=3, unique_by=lambda r: r.name))
    sdefs = draw(st.lists(signal_defs(2), max_size=3))
    return Program(tuple(rdefs) + tuple(sdefs))


# --- properties -------------------------------------------------------------

@settings(max_examples=150, deadline=None)
@given(programs())
def test_generated_programs_parse_and_round_trip(program):
    text = to_source(program)
    assert parse(text) == program
    assert to_source(parse(text)) == text


@pytest.mark.parametrize("name", fixture_names())
def test_fixture_round_trip(name):
    program = parse(fixture_text(name), name)
    assert parse(to_source(program)) == program


@pytest.mark.parametrize("name", fixture_names())
def test_spans_lie_inside_source(name):
    text = fixture_text(name)
    lines = text.splitlines()
    program = parse(text, name)
    roots = []
    for d in program.definitions:
        if isinstance(d, ReactorDef):
            roots += [t.init for t in d.trampolines]
            body = d.body
            roots += [sd.expr for sd in body.defs] + list(body.sinks) + list(body.updates)
        else:
            roots.append(d.expr)
    for root in roots:
        for e in subexpressions(root):
            sp = e.span
            assert sp.file == name
            assert 1 <= sp.line <= len(lines)
            assert 1 <= sp.column <= len(lines[sp.line - 1])


def test_literal_spans_point_at_token():
    [d] = parse('(def x  (+ 12 "ab"))').definitions
    plus = d.expr
    assert (plus.span.line, plus.span.column) == (1, 9)
    assert [(a.span.column, a.span.length) for a in plus.operands] == [(12, 2), (15, 4)]


# --- reader ---------------------------------------------------------------

def test_reader_atoms():
    data = read_data('42 -7 3.5 .5 1e3 #t #false "a\\"b\\n" foo ; gone')
    values = [getattr(d, "value", getattr(d, "name", None)) for d in data]
    assert values == [42, -7, Decimal("3.5"), Decimal(".5"), Decimal("1e3"), True, False,
                      'a"b\n', "foo"]
    assert type(values[0]) is int and type(values[2]) is Decimal


def test_reader_nesting():
    [d] = read_data("(a (b c) ())")
    assert isinstance(d, SList) and len(d.items) == 3
    assert d.items[2].items == ()


@pytest.mark.parametrize("text,exc", [
    ("(def x (+ 1 2)", errors.UnbalancedParens),
    ("(def x 1))", errors.UnbalancedParens),
    ("(def x 1.2.3)", errors.InvalidNumber),
    ("(def x 12abc)", errors.InvalidNumber),
    ('(def x "abc)', errors.UnterminatedString),
])
def test_reader_errors(text, exc):
    with pytest.raises(exc) as info:
        parse(text, "t.haai")
    assert info.value.span is not None and info.value.span.file == "t.haai"


# --- parser ---------------------------------------------------------------

def test_multi_sink_and_trampolines():
    p = parse("(defr (min-max s | (i s) (a s)) (def mi (smallest s i)) "
              "(def ma (largest s a)) (out mi ma | mi ma))")
    [r] = p.reactors
    assert r.params == ("s",)
    assert [t.name for t in r.trampolines] == ["i", "a"]
    assert r.sinks == (VarRef("mi"), VarRef("ma"))
    assert r.trampoline_updates == (VarRef("mi"), VarRef("ma"))


def test_defn_is_accepted_as_defr():
    [r] = parse("(defn (id x) x)").reactors
    assert r.name == "id" and r.body.sinks == (VarRef("x"),)


def test_multi_target_def():
    [d] = parse("(def (s p) (sum-and-product 2 3))").signal_defs
    assert d.targets == ("s", "p")


@pytest.mark.parametrize("text,exc", [
    ("(foo 1)", errors.NotADefinition),
    ("42", errors.NotADefinition),
    ("(defr foo 1)", errors.MalformedDefr),
    ("(defr (foo) 1)", errors.MalformedDefr),
    ("(defr (f x x) x)", errors.DuplicateParam),
    ("(defr (f x | (x 1)) (out x | x))", errors.DuplicateParam),
    ("(defr (f x) x) (defr (f y) y)", errors.DuplicateReactor),
    ("(defr (f x |) x)", errors.BarWithoutTrampolines),
    ("(defr (f x) (out x | x))", errors.BarWithoutTrampolines),
    ("(defr (f x | (a 0)) x)", errors.MissingTrampolineUpdates),
    ("(defr (f x | (a 0)) (out x |))", errors.MissingTrampolineUpdates),
    ("(defr (f x | (a 0) (b 0)) (out x | a))", errors.MalformedDefr),
    ("(def x (if 1 2))", errors.MalformedIf),
    ("(def x (rho x x))", errors.MalformedRho),
    ("(def x (rho (y) (out y | y)))", errors.MalformedRho),
    ("(def x ())", errors.EmptyDeploy),
    ("(def x (out 1))", errors.ReservedWord),
    ("(def if 1)", errors.ReservedWord),
    ("(def (a a) 1)", errors.MalformedDef),
    ("(def x)", errors.MalformedDef),
])
def test_parse_errors(text, exc):
    with pytest.raises(exc):
        parse(text)


def test_canonical_printer_shapes():
    p = parse("(defr (f a | (t 0))  (def s (+ a t))\n (out s | s))")
    assert to_source(p) == "(defr (f a | (t 0)) (def s (+ a t)) (out s | s))"
    assert to_source(parse('(def x (if #t "a\\"" -1.50))')) == '(def x (if #t "a\\"" -1.50))'


# --- transcription check --------------------------------------------------

@pytest.mark.parametrize("n", range(1, 11))
def test_listing_fixtures_match_reference_text(reference_text, n):
    printed = parse(reference_listing(reference_text, n))
    ours = parse(fixture_text(f"listing{n}"))
    assert ours == printed
