"""Static analysis over parsed programs: reactivity tiers, recursion, graph export.

Every answer here is a static approximation. Self-application is found by
the syntactic ``(x x)`` pattern only; captures routed through data
structures can evade it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterator

import networkx as nx

from . import errors
from .model import Named, Primitive, ReactorTable, free_identifiers
from .syntax import (Body, Deploy, Expr, If, Literal, Program, ReactorDef, Rho, SourceSpan,
                     VarRef, format_literal)

STRONG, EVENTUAL, WEAK = "Strong", "Eventual", "Weak"
TIER_ORDER = {STRONG: 0, EVENTUAL: 1, WEAK: 2}


@dataclass
class FeatureReport:
    uses_trampolines: bool = False
    uses_conditionals: bool = False
    uses_dynamic_operators: bool = False
    recursion_cycles: list[list[str]] = field(default_factory=list)
    rho_count: int = 0
    self_application_sites: list[SourceSpan] = field(default_factory=list)
    non_constant_time_primitives: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["self_application_sites"] = [str(s) for s in self.self_application_sites]
        return d


@dataclass
class ReactivityTier:
    level: str
    justification: list[str]

    def __str__(self) -> str:
        return self.level


# --- scope-aware traversal ------------------------------------------------

def _walk(expr: Expr, bound: frozenset[str]) -> Iterator[tuple[Expr, frozenset[str]]]:
    """Every sub-expression paired with the locally bound names at that point."""
    stack = [(expr, bound)]
    while stack:
        e, b = stack.pop()
        yield e, b
        if isinstance(e, Deploy):
            stack.extend((x, b) for x in reversed((e.operator, *e.operands)))
        elif isinstance(e, If):
            stack.extend((x, b) for x in (e.alternate, e.consequent, e.cond))
        elif isinstance(e, Rho):
            stack.extend(reversed(list(_walk_body(e.body, b | set(e.params)))))


def _walk_body(body: Body, bound: frozenset[str]) -> Iterator[tuple[Expr, frozenset[str]]]:
    for d in body.defs:
        yield d.expr, bound
        bound = bound | set(d.targets)
    for e in (*body.sinks, *body.updates):
        yield e, bound


def _reactor_roots(rdef: ReactorDef) -> Iterator[tuple[Expr, frozenset[str]]]:
    params = frozenset(rdef.params)
    for t in rdef.trampolines:
        yield t.init, params
    yield from _walk_body(rdef.body, params | {t.name for t in rdef.trampolines})


def _program_roots(program: Program) -> Iterator[tuple[Expr, frozenset[str]]]:
    for d in program.definitions:
        if isinstance(d, ReactorDef):
            yield from _reactor_roots(d)
        else:
            yield d.expr, frozenset()


def _all_exprs(program: Program) -> Iterator[tuple[Expr, frozenset[str]]]:
    for root, bound in _program_roots(program):
        yield from _walk(root, bound)


# --- detectors ------------------------------------------------------------

def detect_recursion(program: Program) -> list[list[str]]:
    """Elementary cycles of the reactor-reference graph, smallest name first."""
    names = {r.name for r in program.reactors}
    g = nx.DiGraph()
    for rdef in program.reactors:
        g.add_node(rdef.name)
        for ref in free_identifiers(rdef):
            if ref in names:
                g.add_edge(rdef.name, ref)
    cycles = []
    for cyc in nx.simple_cycles(g):
        k = cyc.index(min(cyc))
        cycles.append(cyc[k:] + cyc[:k])
    return sorted(cycles)


def detect_self_application(program: Program) -> list[SourceSpan]:
    """Spans of deployments shaped ``(x x …)``."""
    sites = []
    for e, _ in _all_exprs(program):
        if (isinstance(e, Deploy) and isinstance(e.operator, VarRef) and e.operands
                and isinstance(e.operands[0], VarRef)
                and e.operands[0].name == e.operator.name):
            sites.append(e.span)
    return sites


def _static_reactor(name: str, bound: frozenset[str], reactors: set[str],
                    table: ReactorTable | None) -> bool:
    if name in bound:
        return False
    return name in reactors or (table is not None and name in table)


def features(program: Program, table: ReactorTable | None = None) -> FeatureReport:
    reactors = {r.name for r in program.reactors}
    rep = FeatureReport()
    rep.uses_trampolines = any(r.trampolines for r in program.reactors)
    slow: dict[str, None] = {}
    for e, bound in _all_exprs(program):
        if isinstance(e, If):
            rep.uses_conditionals = True
        elif isinstance(e, Rho):
            rep.rho_count += 1
        elif isinstance(e, Deploy):
            op = e.operator
            if not (isinstance(op, VarRef) and _static_reactor(op.name, bound, reactors, table)):
                rep.uses_dynamic_operators = True
        elif isinstance(e, VarRef) and table is not None and e.name not in bound \
                and e.name not in reactors:
            v = table.get(e.name)
            if isinstance(v, Primitive) and not v.constant_time:
                slow.setdefault(e.name)
    rep.recursion_cycles = detect_recursion(program)
    rep.self_application_sites = detect_self_application(program)
    rep.non_constant_time_primitives = list(slow)
    return rep


def classify(program: Program, table: ReactorTable | None = None
             ) -> tuple[ReactivityTier, FeatureReport]:
    """Weakest tier implied by any detected feature."""
    rep = features(program, table)
    why: list[str] = []
    if rep.recursion_cycles:
        for c in rep.recursion_cycles:
            why.append("recursive reactors: " + " -> ".join([*c, c[0]]))
    for span in rep.self_application_sites:
        why.append(f"self-application at {span}")
    if why:
        return ReactivityTier(WEAK, why), rep
    if rep.non_constant_time_primitives:
        why = [f"primitive {n} is not constant-time" for n in rep.non_constant_time_primitives]
        return ReactivityTier(EVENTUAL, why), rep
    used = [label for flag, label in (
        (rep.uses_trampolines, "trampolines"),
        (rep.uses_conditionals, "conditional signals"),
        (rep.uses_dynamic_operators, "dynamic deployments"),
        (rep.rho_count > 0, "anonymous reactors without self-application"),
    ) if flag]
    why = ["no recursion, no self-application, only constant-time primitives"]
    if used:
        why.append("features present: " + ", ".join(used))
    return ReactivityTier(STRONG, why), rep


def report_json(tier: ReactivityTier, rep: FeatureReport) -> str:
    return json.dumps({"tier": tier.level, "justification": tier.justification,
                       "features": rep.to_dict()}, indent=2)


# --- DOT export -----------------------------------------------------------

def _quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


class _DotBuilder:
    """Reactor graph: ellipses for signals, boxes for operators."""

    def __init__(self, table: ReactorTable | None, reactors: set[str]):
        self.table = table
        self.reactors = reactors
        self.nodes: dict[str, list[str]] = {}  # id -> [label, shape, extra attributes]
        self.region: dict[str, str] = {}
        self.clusters: list[tuple[str, str, list[str]]] = []  # (id, label, members)
        self.edges: list[tuple[str, str, str]] = []
        self._cluster_stack: list[list[str]] = []
        self._n = 0

    def node(self, label: str, shape: str = "ellipse", region: str = "internal",
             extra: str = "") -> str:
        self._n += 1
        nid = f"n{self._n}"
        self.nodes[nid] = [label, shape, extra]
        if self._cluster_stack:
            self._cluster_stack[-1].append(nid)
            self.region[nid] = "cluster"
        else:
            self.region[nid] = region
        return nid

    def edge(self, a: str, b: str, style: str = "") -> None:
        self.edges.append((a, b, style))

    def open_cluster(self, label: str) -> None:
        members: list[str] = []
        self.clusters.append((f"cluster_box{len(self.clusters) + 1}", label, members))
        self._cluster_stack.append(members)

    def close_cluster(self) -> None:
        self._cluster_stack.pop()

    def expr(self, e: Expr, env: dict[str, str], nsinks: int = 1) -> list[str]:
        if isinstance(e, VarRef):
            if e.name in env:
                return [env[e.name]]
            return [self.node(e.name, extra='class="reactor"')]
        if isinstance(e, Literal):
            return [self.node(format_literal(e.value), extra='class="constant"')]
        if isinstance(e, Deploy):
            op = e.operator
            static = isinstance(op, VarRef) and op.name not in env
            label = op.name if static else "deploy"
            box = self.node(label, shape="box")
            if not static:
                self.edge(self.expr(op, env)[0], box)
            for a in e.operands:
                self.edge(self.expr(a, env)[0], box)
            outs = [self.node(label if nsinks == 1 else f"{label}[{i}]")
                    for i in range(nsinks)]
            for o in outs:
                self.edge(box, o)
            return outs
        if isinstance(e, If):
            cond = self.expr(e.cond, env)[0]
            box = self.node("if", shape="box")
            self.edge(cond, box)
            for arm, label in ((e.consequent, "then"), (e.alternate, "else")):
                if isinstance(arm, (VarRef, Literal)):
                    self.edge(self.expr(arm, env)[0], box)
                else:
                    self.open_cluster(label)
                    r = self.expr(arm, env)[0]
                    self.close_cluster()
                    self.edge(r, box)
            out = self.node("if")
            self.edge(box, out)
            return [out]
        if isinstance(e, Rho):
            self.open_cluster("rho")
            inner = dict(env)
            for p in e.params:
                inner[p] = self.node(p, extra='class="param"')
            self.body(e.body, inner, None)
            self.close_cluster()
            return [self.node("capture", extra='class="capture"')]
        raise TypeError(f"not an expression: {e!r}")

    def body(self, body: Body, env: dict[str, str], sink_region: str | None) -> list[str]:
        for d in body.defs:
            outs = self.expr(d.expr, env, len(d.targets))
            for t, o in zip(d.targets, outs):
                self.nodes[o][0] = t
                env[t] = o
        sinks = []
        for s in body.sinks:
            sig = self.expr(s, env)[0]
            if sink_region is not None and self.region.get(sig) in ("source", "sink"):
                # a parameter (or repeated signal) passed straight through
                fresh = self.node("out", region=sink_region)
                self.edge(sig, fresh)
                sig = fresh
            if sink_region is not None:
                self.region[sig] = sink_region
            sinks.append(sig)
        return sinks

    def reactor(self, rdef: ReactorDef) -> None:
        env: dict[str, str] = {}
        for p in rdef.params:
            env[p] = self.node(p, region="source")
        trs = []
        for t in rdef.trampolines:
            tid = self.node(t.name, region="trampoline", extra='class="trampoline"')
            trs.append((t, tid))
        for t, tid in trs:
            init = self.expr(t.init, env)[0]
            self.edge(init, tid)
        for t, tid in trs:
            env[t.name] = tid
        self.body(rdef.body, env, "sink")
        for (t, tid), upd in zip(trs, rdef.trampoline_updates):
            self.edge(self.expr(upd, env)[0], tid, "dashed")

    def attrs(self, nid: str) -> str:
        label, shape, extra = self.nodes[nid]
        return f"label={_quote(label)}, shape={shape}" + (f", {extra}" if extra else "")

    def render(self, name: str) -> str:
        lines = [f"digraph {_quote(name)} {{", "  rankdir=TB;", "  compound=true;"]
        in_cluster = {m for _, _, ms in self.clusters for m in ms}
        for region, label in (("source", "sources"), ("trampoline", "trampolines"),
                              ("internal", "internal"), ("sink", "sinks")):
            members = [n for n, r in self.region.items() if r == region and n not in in_cluster]
            if not members and region != "internal":
                continue
            lines.append(f"  subgraph cluster_{region} {{")
            lines.append(f"    label={_quote(label)};")
            if region in ("source", "sink"):
                lines.append("    rank=same;")
            for n in members:
                lines.append(f"    {n} [{self.attrs(n)}];")
            lines.append("  }")
        for cid, label, members in self.clusters:
            lines.append(f"  subgraph {cid} {{")
            lines.append(f"    label={_quote(label)}; style=filled; color=lightgrey;")
            for n in members:
                lines.append(f"    {n} [{self.attrs(n)}];")
            lines.append("  }")
        for a, b, style in self.edges:
            attr = f" [style={style}]" if style else ""
            lines.append(f"  {a} -> {b}{attr};")
        lines.append("}")
        return "\n".join(lines) + "\n"


def find_reactor(program: Program, name: str, table: ReactorTable | None = None) -> ReactorDef:
    rdef = program.reactor(name)
    if rdef is None and table is not None:
        v = table.get(name)
        if isinstance(v, Named):
            rdef = v.rdef
    if rdef is None:
        raise errors.UnknownReactor(f"no reactor named {name!r}")
    return rdef


def export_graph(program: Program, reactor: str, table: ReactorTable | None = None) -> str:
    """DOT text for the reactor graph of ``reactor``."""
    rdef = find_reactor(program, reactor, table)
    b = _DotBuilder(table, {r.name for r in program.reactors})
    b.reactor(rdef)
    return b.render(rdef.name)
