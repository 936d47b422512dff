from __future__ import annotations

import json
import re

import networkx as nx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from haai import errors
from haai.analysis import (EVENTUAL, STRONG, TIER_ORDER, WEAK, classify, detect_recursion,
                           detect_self_application, export_graph, features, report_json)
from haai.fixtures import fixture_names, fixture_program
from haai.stdlib import default_table, register_primitive
from haai.syntax import Program, parse

TABLE = default_table()

EDGE = re.compile(r"^\s*(n\d+) -> (n\d+)( \[style=dashed\])?;$", re.M)
NODE = re.compile(r"^\s*(n\d+) \[(.*)\];$", re.M)


def dot_graph(dot: str) -> tuple[nx.MultiDiGraph, dict[str, str]]:
    g = nx.MultiDiGraph()
    attrs = {m.group(1): m.group(2) for m in NODE.finditer(dot)}
    g.add_nodes_from(attrs)
    for a, b, dashed in EDGE.findall(dot):
        g.add_edge(a, b, dashed=bool(dashed))
    return g, attrs


def tier(program: Program) -> str:
    return classify(program, TABLE)[0].level


# --- Table 1 families -------------------------------------------------------

@pytest.mark.parametrize("fixture,expected", [
    ("listing1", STRONG),
    ("listing2", STRONG),
    ("listing3", STRONG),
    ("listing4", STRONG),
    ("listing5", STRONG),
    ("listing6", STRONG),
    ("listing7", STRONG),
    ("listing8", WEAK),
    ("listing9", STRONG),
    ("listing10", WEAK),
    ("collatz-fix", WEAK),
    ("divergence", WEAK),
    ("mutual", WEAK),
])
def test_fixture_tiers(fixture, expected):
    assert tier(fixture_program(fixture)) == expected


def test_features_of_families():
    assert features(fixture_program("listing4"), TABLE).uses_trampolines
    rep = features(fixture_program("listing7"), TABLE)
    assert rep.uses_conditionals and rep.uses_dynamic_operators
    rep = features(fixture_program("listing9"), TABLE)
    assert rep.rho_count == 1 and not rep.self_application_sites
    rep = features(fixture_program("listing10"), TABLE)
    assert rep.rho_count == 4 and len(rep.self_application_sites) == 2


def test_recursion_cycles_are_normalized():
    assert detect_recursion(fixture_program("mutual")) == [["ping", "pong"]]
    assert detect_recursion(fixture_program("listing8")) == [["collatz-length"]]


def test_parameter_shadowing_is_not_recursion():
    p = parse("(defr (f g) (g 1)) (defr (g f) (f 2))")
    assert detect_recursion(p) == []
    assert tier(p) == STRONG


def test_self_application_spans():
    [span] = detect_self_application(parse("(def y (rho (x) (x x)))", "f.haai"))
    assert (span.file, span.line, span.column) == ("f.haai", 1, 17)


def test_eventual_needs_a_slow_primitive():
    table = default_table()
    register_primitive(table, "sort-all", 1, sorted)
    tier_, rep = classify(parse("(defr (f v) (sort-all v))"), table)
    assert tier_.level == EVENTUAL and rep.non_constant_time_primitives == ["sort-all"]
    tier_, _ = classify(parse("(defr (f v) (sort-all (f v)))"), table)
    assert tier_.level == WEAK


def test_report_json():
    tier_, rep = classify(fixture_program("listing8"), TABLE)
    data = json.loads(report_json(tier_, rep))
    assert data["tier"] == WEAK
    assert data["features"]["recursion_cycles"] == [["collatz-length"]]


# --- properties -----------------------------------------------------------

POOL = [d for name in fixture_names() for d in fixture_program(name, with_deps=False).definitions]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, len(POOL) - 1), max_size=8, unique=True), st.data())
def test_adding_definitions_never_improves_the_tier(idx, data):
    defs = [POOL[i] for i in idx]
    extra = POOL[data.draw(st.sampled_from([i for i in range(len(POOL)) if i not in idx]))]
    names = [d.name for d in defs if hasattr(d, "params")]
    if hasattr(extra, "params") and extra.name in names:
        return
    before = tier(Program(tuple(defs)))
    after = tier(Program(tuple(defs) + (extra,)))
    assert TIER_ORDER[after] >= TIER_ORDER[before]


@st.composite
def reference_programs(draw):
    n = draw(st.integers(1, 10))
    refs = [draw(st.lists(st.integers(0, n - 1), max_size=3, unique=True)) for _ in range(n)]
    body = []
    for i, rs in enumerate(refs):
        expr = "x"
        for j in rs:
            expr = f"(r{j} {expr})"
        body.append(f"(defr (r{i} x) {expr})")
    return parse("\n".join(body)), refs


def reaches_itself(refs: list[list[int]], start: int) -> bool:
    seen, stack = set(), list(refs[start])
    while stack:
        k = stack.pop()
        if k == start:
            return True
        if k not in seen:
            seen.add(k)
            stack.extend(refs[k])
    return False


@settings(max_examples=200, deadline=None)
@given(reference_programs())
def test_cycle_soundness_against_brute_force(case):
    program, refs = case
    cycles = detect_recursion(program)
    in_cycle = {name for c in cycles for name in c}
    for i in range(len(refs)):
        assert (f"r{i}" in in_cycle) == reaches_itself(refs, i)
    for c in cycles:
        for a, b in zip(c, c[1:] + c[:1]):
            assert int(b[1:]) in refs[int(a[1:])]


# --- DOT export -------------------------------------------------------------

def test_min_max_graph_trampolines():
    dot = export_graph(fixture_program("listing4"), "min-max", TABLE)
    g, attrs = dot_graph(dot)
    tramps = [n for n, a in attrs.items() if 'class="trampoline"' in a]
    assert len(tramps) == 2
    for t in tramps:
        ins = [d["dashed"] for _, _, d in g.in_edges(t, data=True)]
        assert sorted(ins) == [False, True]
    assert "cluster_trampoline" in dot and "cluster_source" in dot


def test_sum_and_product_has_two_sinks():
    dot = export_graph(fixture_program("listing2"), "sum-and-product", TABLE)
    sinks = dot.split("subgraph cluster_sink {")[1].split("}")[0]
    assert len(NODE.findall(sinks)) == 2


def test_conditional_boxes_are_grey():
    dot = export_graph(fixture_program("listing6"), "collatz-step", TABLE)
    assert dot.count("subgraph cluster_box") == 2 and "lightgrey" in dot


def test_bare_branches_get_no_box():
    dot = export_graph(parse("(defr (f c a b) (if c a b))"), "f", TABLE)
    assert "cluster_box" not in dot


@pytest.mark.parametrize("name", fixture_names())
def test_every_graph_is_acyclic_without_dashed_edges(name):
    program = fixture_program(name)
    for rdef in program.reactors:
        g, _ = dot_graph(export_graph(program, rdef.name, TABLE))
        solid = nx.DiGraph((a, b) for a, b, d in g.edges(data=True) if not d["dashed"])
        assert nx.is_directed_acyclic_graph(solid)


def test_unknown_reactor():
    with pytest.raises(errors.UnknownReactor):
        export_graph(fixture_program("listing1"), "nope", TABLE)
