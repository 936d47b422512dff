"""Deployment of reactors into signal graphs and glitch-free update turns.

Scheduling is a binary heap keyed on ``(height, id)``. Heights are kept
strictly above every live dependency, also when a switch expands or
re-activates a subgraph mid-turn, so a node fires at most once per turn and
only after every same-turn dependency.

Deployment bodies are expanded from a FIFO worklist rather than by Python
recursion: recursive reactors can nest thousands of levels deep.
"""

from __future__ import annotations

import heapq
import json
import logging
import threading
import time
from collections import Counter, deque
from dataclasses import dataclass, field
from decimal import DecimalException
from typing import Any, Iterable, Sequence

from . import errors
from .model import (POISONED, UNVALUED, Capture, ConditionalNode, ConstantProducer, ControlNode,
                    Deployment, DynamicOperatorNode, Environment, ForwardProducer, IdSource,
                    IOReactor, Named, Node, Primitive, PrimitiveProducer, ReactorTable,
                    ReactorValue, Signal, SourceProducer, Trampoline, is_valued, lookup,
                    make_capture, to_json)
from .syntax import (Body, Deploy, Expr, If, Literal, Program, ReactorDef, Rho, SignalDef,
                     VarRef, parse)

log = logging.getLogger(__name__)

DEFAULT_MAX_DEPTH = 10_000


# --- reports --------------------------------------------------------------

@dataclass
class TraceEvent:
    turn: int
    kind: str  # emit | commit | switch | error
    id: int
    name: str
    value: Any

    def to_dict(self) -> dict[str, Any]:
        value = self.value if self.kind in ("switch", "error") else to_json(self.value)
        return {"turn": self.turn, "kind": self.kind, "signal_or_deployment_id": self.id,
                "name_path": self.name, "value": value}

    def to_json_line(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"), ensure_ascii=False)


@dataclass
class TurnReport:
    index: int
    seeded: list[tuple[str, Any]] = field(default_factory=list)
    events: list[TraceEvent] = field(default_factory=list)
    recomputed: list[int] = field(default_factory=list)
    switches: list[TraceEvent] = field(default_factory=list)
    commits: list[TraceEvent] = field(default_factory=list)
    errors: list[TraceEvent] = field(default_factory=list)
    deployments_created: int = 0
    elapsed: float = 0.0

    @property
    def recomputed_count(self) -> int:
        return len(self.recomputed)

    @property
    def ok(self) -> bool:
        return not self.errors

    def emissions(self) -> list[TraceEvent]:
        return [e for e in self.events if e.kind == "emit"]

    def trace_lines(self) -> list[str]:
        return [e.to_json_line() for e in self.events]


@dataclass
class SourceBinding:
    source_id: str
    kind: str
    config: tuple[Any, ...]
    signal: Signal


@dataclass
class ConsumerBinding:
    kind: str
    config: tuple[Any, ...]
    signal: Signal


# --- engine ---------------------------------------------------------------

class Engine:
    """Owns the signal graph; the only writer of runtime state."""

    def __init__(self, table: ReactorTable | None = None, max_depth: int = DEFAULT_MAX_DEPTH):
        if table is None:
            from .stdlib import default_table
            table = default_table()
        self.table = table
        self.max_depth = max_depth
        self.ids = IdSource()
        self.root = Deployment("root", None, None, 0, label="", ids=self.ids)
        self.env = Environment(table=table)
        self.globals: dict[str, list[Signal]] = {}
        self.sources: dict[str, Signal] = {}
        self.source_bindings: list[SourceBinding] = []
        self.consumers: list[ConsumerBinding] = []
        self.turn = 0
        self._lock = threading.Lock()
        self._heap: list[tuple[int, int, Node]] = []
        self._height = -1
        self._pending: deque[tuple[Deployment, list[Signal]]] = deque()
        self._trampolines: list[Trampoline] = []
        self._report: TurnReport | None = None

    # -- public API --------------------------------------------------------

    def load(self, text: str, filename: str = "<input>") -> list[TurnReport]:
        return self.load_program(parse(text, filename))

    def load_program(self, program: Program) -> list[TurnReport]:
        """Register every reactor, then deploy each signal definition in its own turn."""
        for rdef in program.reactors:
            self.define_reactor(rdef)
        return [self.deploy_global(sdef) for sdef in program.signal_defs]

    def define_reactor(self, rdef: ReactorDef) -> None:
        self.table.define(rdef.name, Named(rdef))

    def deploy_global(self, sdef: SignalDef) -> TurnReport:
        with self._turn() as report:
            holder = Deployment("global-def", None, self.root, self.root.depth, label="")
            targets = [self._signal(holder, t) for t in sdef.targets]
            holder.sinks = targets
            self._guarded(holder, lambda: self._eval_global(sdef, holder, targets))
            for t, sig in zip(sdef.targets, targets):
                self.env.bind(t, sig)
                self.globals[t] = [sig]
            self._propagate()
        return report

    def deploy(self, reactor: str | ReactorValue, args: Sequence[str | Signal]) -> Deployment:
        """Deploy ``reactor`` on global signals in a turn of its own."""
        value = self.table.get(reactor) if isinstance(reactor, str) else reactor
        if value is None:
            raise errors.UnknownReactor(f"no reactor named {reactor!r}")
        with self._turn():
            sigs = [self.signal(a) if isinstance(a, str) else a for a in args]
            holder = Deployment("global-def", None, self.root, self.root.depth, label="")
            box: list[Deployment] = []

            def build() -> None:
                sinks = self._deploy_reactor(value, sigs, holder, None, value.sink_count)
                self._drain()
                box.append(sinks[0].owner)
            self._guarded(holder, build)
            self._propagate()
        if not box:
            raise errors.RuntimeFault(f"deployment of {value.name} failed")
        return box[0]

    def run_turn(self, batch: Iterable[tuple[str | Signal, Any]] = ()) -> TurnReport:
        """Seed ``batch`` simultaneously and propagate to quiescence."""
        seeds = [(self.resolve_source(k) if isinstance(k, str) else k, v) for k, v in batch]
        with self._turn() as report:
            for sig, value in seeds:
                assert isinstance(sig.producer, SourceProducer)
                sig.producer.pending = value
                report.seeded.append((sig.producer.source_id, value))
                self._schedule(sig)
            self._propagate()
        return report

    def inject(self, source: str, value: Any) -> TurnReport:
        return self.run_turn([(source, value)])

    def resolve_source(self, key: str) -> Signal:
        """Global def name, then source id, then ``manual-in:<key>``."""
        sigs = self.globals.get(key)
        if sigs and isinstance(sigs[0].producer, SourceProducer):
            return sigs[0]
        for candidate in (key, f"manual-in:{key}"):
            if candidate in self.sources:
                return self.sources[candidate]
        raise errors.UnknownSource(f"no source named {key!r}")

    def signal(self, name: str) -> Signal:
        if name not in self.globals:
            raise errors.UnboundIdentifier(name)
        return self.globals[name][0]

    def value(self, name: str) -> Any:
        return self.signal(name).value

    def deployments(self, only_live: bool = False) -> list[Deployment]:
        return list(self.root.descendants(only_live=only_live))

    # -- turn machinery ----------------------------------------------------

    class _TurnScope:
        def __init__(self, engine: Engine):
            self.engine = engine

        def __enter__(self) -> TurnReport:
            e = self.engine
            if not e._lock.acquire(blocking=False):
                raise errors.EngineBusy("a turn is already in progress")
            e.turn += 1
            e._height = -1
            e._report = TurnReport(e.turn)
            self.start = time.perf_counter()
            return e._report

        def __exit__(self, exc_type, exc, tb) -> None:
            e = self.engine
            try:
                if exc_type is None:
                    e._commit_trampolines()
                report = e._report
                assert report is not None
                report.elapsed = time.perf_counter() - self.start
            finally:
                e._heap.clear()
                e._pending.clear()
                e._report = None
                e._lock.release()

    def _turn(self) -> Engine._TurnScope:
        return Engine._TurnScope(self)

    def _event(self, kind: str, node_id: int, name: str, value: Any) -> TraceEvent:
        report = self._report
        assert report is not None
        ev = TraceEvent(report.index, kind, node_id, name, value)
        report.events.append(ev)
        if kind == "switch":
            report.switches.append(ev)
        elif kind == "commit":
            report.commits.append(ev)
        elif kind == "error":
            report.errors.append(ev)
        return ev

    def _error(self, where: Node | Deployment, exc: Exception) -> None:
        if isinstance(where, Node):
            name = where.path
        else:
            name = where.label or "/".join(s.name for s in where.sinks) or "global"
        log.warning("turn %d: %s", self.turn, exc)
        self._event("error", where.id, name, str(exc))

    def _schedule(self, node: Node) -> None:
        if not node.active:
            return
        if node.queued_turn == self.turn:
            return  # an entry exists; _propagate re-pushes it if the node was raised
        node.queued_turn = self.turn
        node.queued_height = node.height
        heapq.heappush(self._heap, (node.height, node.id, node))

    def _propagate(self) -> None:
        heap = self._heap
        while heap:
            h, _, node = heapq.heappop(heap)
            if node.queued_turn != self.turn:
                continue  # stale entry
            if h < node.height:
                if node.queued_height != node.height:
                    node.queued_height = node.height
                    heapq.heappush(heap, (node.height, node.id, node))
                continue
            if h != node.queued_height:
                continue
            node.queued_turn = -1
            if not node.active:
                continue
            self._height = h
            self._fire(node)

    def _raise(self, node: Node, height: int) -> None:
        """Lift ``node`` to at least ``height`` and restore order downstream.

        Edges out of an unvalued signal are left unordered; ``_emit`` repairs
        them once the signal carries a value.
        """
        stack = [(node, height)]
        while stack:
            n, h = stack.pop()
            if n.height >= h:
                continue
            n.height = h
            if _carries(n):
                h += 1
                stack.extend((d, h) for d in n.dependents)

    def _settle(self, sig: Signal) -> None:
        h = sig.height + 1
        for d in sig.dependents:
            if d.height < h:
                self._raise(d, h)

    def _floor(self) -> int:
        return self._height + 1

    # -- graph construction helpers ---------------------------------------

    def _signal(self, owner: Deployment, name: str, producer=None, value: Any = UNVALUED,
                kind: str = "internal") -> Signal:
        sig = Signal(owner, name, kind, producer, value)
        sig.height = self._floor()
        self._report_created_node(sig)
        return sig

    def _report_created_node(self, node: Node) -> None:
        # everything created during a turn gets a chance to fire in it
        self._schedule(node)

    def _link(self, src: Node, dst: Node) -> None:
        dst.inputs.append(src)
        src.dependents[dst] = None
        if _carries(src):
            self._raise(dst, src.height + 1)

    def _unlink(self, src: Node, dst: Node) -> None:
        if src in dst.inputs:
            dst.inputs.remove(src)
        src.dependents.pop(dst, None)

    def _wire(self, sig: Signal, producer, inputs: Sequence[Node]) -> None:
        sig.producer = producer
        for i in inputs:
            self._link(i, sig)
        self._raise(sig, self._floor())
        self._schedule(sig)

    def _forward(self, sig: Signal, src: Signal) -> None:
        prod = sig.producer
        if isinstance(prod, ForwardProducer) and prod.src is not None:
            self._unlink(prod.src, sig)
        sig.producer = ForwardProducer(src)
        self._link(src, sig)
        self._schedule(sig)

    def _rebind(self, out: Signal, src: Signal | None) -> None:
        """Point a switch output at ``src`` (or at nothing)."""
        prod = out.producer
        assert isinstance(prod, ForwardProducer)
        if prod.src is src:
            return
        if prod.src is not None:
            self._unlink(prod.src, out)
        prod.src = src
        if src is not None:
            self._link(src, out)

    def _constant(self, owner: Deployment, name: str, value: Any, into: Signal | None) -> Signal:
        if into is None:
            return self._signal(owner, name, ConstantProducer(), value, kind="constant")
        into.kind = "constant"
        into.value = value
        self._wire(into, ConstantProducer(), ())
        self._settle(into)
        return into

    # -- evaluation --------------------------------------------------------

    def _eval_global(self, sdef: SignalDef, holder: Deployment, targets: list[Signal]) -> None:
        self.eval_expr(sdef.expr, self.env, holder, into=list(targets), nsinks=len(targets))
        self._drain()

    def _guarded(self, root: Deployment, build) -> bool:
        """Run an expansion; on a runtime fault freeze and poison ``root``."""
        try:
            build()
            return True
        except errors.RuntimeFault as exc:
            self._pending.clear()
            self._deactivate(root)
            root.poisoned = True
            self._error(root, exc)
            return False

    def _eval1(self, expr: Expr, env: Environment, owner: Deployment,
               into: Signal | None = None) -> Signal:
        return self.eval_expr(expr, env, owner, [into], 1)[0]

    def eval_expr(self, expr: Expr, env: Environment, owner: Deployment,
                  into: list[Signal | None] | None = None, nsinks: int = 1) -> list[Signal]:
        """Build the signals for ``expr`` inside ``owner``.

        ``into`` supplies pre-made output signals (possibly ``None`` entries);
        nested reactor bodies are queued on the worklist, not expanded here.
        """
        if into is None:
            into = [None] * nsinks
        if isinstance(expr, Deploy):
            return self._eval_deploy(expr, env, owner, into, nsinks)
        if nsinks != 1:
            raise errors.MultiSinkArityMismatch(
                f"{nsinks} targets bound to a single-signal expression", expr.span)
        target = into[0]
        if isinstance(expr, VarRef):
            bound = lookup(env, expr.name, expr.span)
            if isinstance(bound, Signal):
                if target is None:
                    return [bound]
                self._forward(target, bound)
                return [target]
            return [self._constant(owner, expr.name, bound, target)]
        if isinstance(expr, Literal):
            return [self._constant(owner, "const", expr.value, target)]
        if isinstance(expr, Rho):
            cap = make_capture(expr, env, next(self.ids.captures))
            return [self._constant(owner, cap.name, cap, target)]
        if isinstance(expr, If):
            return [self._eval_if(expr, env, owner, target)]
        raise TypeError(f"not an expression: {expr!r}")

    def _eval_if(self, expr: If, env: Environment, owner: Deployment,
                 target: Signal | None) -> Signal:
        cond = self._eval1(expr.cond, env, owner)
        out = target if target is not None else self._signal(owner, "if")
        out.kind = "conditional"
        ctrl = ConditionalNode(owner, expr, env, cond, out)
        ctrl.height = self._floor()
        self._link(cond, ctrl)
        owner.controls.append(ctrl)
        out.producer = ForwardProducer()
        self._link(ctrl, out)
        # a bare name or literal branch needs no box; build it right away
        for truth in (True, False):
            branch = ctrl.branch_expr(truth)
            if isinstance(branch, (VarRef, Literal)):
                ctrl.expanded[truth] = self._eval1(branch, env, owner)
        self._schedule(ctrl)
        self._schedule(out)
        return out

    def _eval_deploy(self, expr: Deploy, env: Environment, owner: Deployment,
                     into: list[Signal | None], nsinks: int) -> list[Signal]:
        static: ReactorValue | None = None
        if isinstance(expr.operator, VarRef):
            bound = lookup(env, expr.operator.name, expr.operator.span)
            if isinstance(bound, ReactorValue):
                static = bound
        if static is not None:
            args = [self._eval1(a, env, owner) for a in expr.operands]
            try:
                return self._deploy_reactor(static, args, owner, into, nsinks)
            except errors.RuntimeFault as exc:
                if exc.span is None:
                    exc.span = expr.span
                    exc.args = (str(exc),)
                raise
        selector = self._eval1(expr.operator, env, owner)
        args = [self._eval1(a, env, owner) for a in expr.operands]
        outs = [o if o is not None else self._signal(owner, "dyn") for o in into]
        ctrl = DynamicOperatorNode(owner, selector, args, outs)
        ctrl.height = self._floor()
        self._link(selector, ctrl)
        owner.controls.append(ctrl)
        for o in outs:
            o.kind = "dynamic-operator"
            o.producer = ForwardProducer()
            self._link(ctrl, o)
            self._schedule(o)
        self._schedule(ctrl)
        return outs

    def _deploy_reactor(self, reactor: ReactorValue, args: list[Signal], owner: Deployment,
                        into: list[Signal | None] | None, nsinks: int) -> list[Signal]:
        if into is None:
            into = [None] * nsinks
        if isinstance(reactor, IOReactor):
            return [self._deploy_io(reactor, args, owner, into[0])]
        if not reactor.accepts(len(args)):
            raise errors.ArityMismatch(
                f"{reactor.name} expects {reactor.arity} argument(s), got {len(args)}")
        if reactor.sink_count != nsinks:
            raise errors.MultiSinkArityMismatch(
                f"{reactor.name} has {reactor.sink_count} sink(s), {nsinks} expected")
        if isinstance(reactor, Primitive):
            sig = into[0] if into[0] is not None else self._signal(owner, reactor.name)
            self._wire(sig, PrimitiveProducer(reactor), args)
            return [sig]
        dep = self._instantiate(reactor, args, owner, into)
        return dep.sinks

    def _deploy_io(self, reactor: IOReactor, args: list[Signal], owner: Deployment,
                   target: Signal | None) -> Signal:
        if len(args) != reactor.arity:
            raise errors.ArityMismatch(
                f"{reactor.name} expects {reactor.arity} argument(s), got {len(args)}")
        n_config = reactor.arity if reactor.role == "producer" else reactor.arity - 1
        config = []
        for a in args[:n_config]:
            if not isinstance(a.producer, ConstantProducer):
                raise errors.RuntimeFault(f"{reactor.name} configuration must be a literal")
            config.append(a.value)
        if reactor.role == "producer":
            source_id = ":".join([reactor.name, *(str(c) for c in config)])
            existing = self.sources.get(source_id)
            if existing is not None:
                if target is None:
                    return existing
                self._forward(target, existing)
                return target
            sig = target if target is not None else self._signal(owner, reactor.name)
            sig.kind = "source"
            self._wire(sig, SourceProducer(source_id), ())
            self.sources[source_id] = sig
            self.source_bindings.append(SourceBinding(source_id, reactor.name, tuple(config), sig))
            return sig
        sig = target if target is not None else self._signal(owner, reactor.name)
        self._forward(sig, args[-1])
        self.consumers.append(ConsumerBinding(reactor.name, tuple(config), sig))
        return sig

    def _instantiate(self, reactor: ReactorValue, args: list[Signal], parent: Deployment,
                     into: list[Signal | None] | None, attach: bool = True) -> Deployment:
        depth = parent.depth + 1
        if depth > self.max_depth:
            raise errors.DepthExceeded(
                f"deploying {reactor.name} exceeds the depth budget of {self.max_depth}")
        kind = {Named: "named", Capture: "capture", Primitive: "primitive"}[type(reactor)]
        dep = Deployment(kind, reactor, parent, depth, attach=attach)
        if self._report is not None:
            self._report.deployments_created += 1
        dep.explicit_sources = list(args)
        if isinstance(reactor, Capture):
            dep.implicit_sources = reactor.implicit_sources
        if into is None:
            into = [None] * reactor.sink_count
        names = _sink_names(reactor)
        outs = [o if o is not None else self._signal(dep, names[i], kind="sink")
                for i, o in enumerate(into)]
        dep.sinks = outs
        if isinstance(reactor, Primitive):
            self._wire(outs[0], PrimitiveProducer(reactor), args)
        else:
            self._pending.append((dep, outs))
        return dep

    def _drain(self) -> None:
        while self._pending:
            dep, outs = self._pending.popleft()
            if dep.active:
                self._expand(dep, outs)

    def _expand(self, dep: Deployment, outs: list[Signal]) -> None:
        reactor = dep.reactor
        if isinstance(reactor, Named):
            rdef = reactor.rdef
            env = Environment(dict(zip(rdef.params, dep.explicit_sources)), table=self.table)
            trampolines = []
            for decl in rdef.trampolines:
                init = self._eval1(decl.init, env, dep)
                tr = Trampoline(dep, decl.name, init)
                tr.height = self._floor()
                tr.sources = list(dict.fromkeys(dep.explicit_sources))
                for i in dict.fromkeys([init, *tr.sources]):
                    self._link(i, tr)
                self._schedule(tr)
                trampolines.append(tr)
            for tr in trampolines:
                env.bind(tr.name, tr)
            dep.trampolines = trampolines
            self._trampolines.extend(trampolines)
            self._eval_body(rdef.body, env, dep, outs, trampolines)
        elif isinstance(reactor, Capture):
            rho = reactor.rho
            frame = dict(reactor.env)
            frame.update(zip(rho.params, dep.explicit_sources))
            env = Environment(frame, table=self.table)
            self._eval_body(rho.body, env, dep, outs, [])
        else:
            raise TypeError(f"cannot expand {reactor!r}")

    def _eval_body(self, body: Body, env: Environment, dep: Deployment, outs: list[Signal],
                   trampolines: list[Trampoline]) -> None:
        # a sink naming a local def receives that def's signal directly
        defined = Counter(t for d in body.defs for t in d.targets)
        direct: dict[str, int] = {}
        for i, s in enumerate(body.sinks):
            if isinstance(s, VarRef) and defined[s.name] == 1 and s.name not in direct:
                direct[s.name] = i
        for d in body.defs:
            into = [outs[direct[t]] if t in direct else None for t in d.targets]
            for t, o in zip(d.targets, into):
                if o is not None:
                    o.name = t
            sigs = self.eval_expr(d.expr, env, dep, into, len(d.targets))
            for t, sig in zip(d.targets, sigs):
                env.bind(t, sig)
                if sig.owner is dep and sig not in outs:
                    dep.internals.append(sig)
        for i, s in enumerate(body.sinks):
            if isinstance(s, VarRef) and direct.get(s.name) == i:
                continue
            self._eval1(s, env, dep, outs[i])
        for tr, upd in zip(trampolines, body.updates):
            tr.update_signal = self._eval1(upd, env, dep)

    # -- firing ------------------------------------------------------------

    def _emit(self, sig: Signal, value: Any) -> None:
        sig.value = value
        sig.emitted_turn = self.turn
        report = self._report
        assert report is not None
        report.recomputed.append(sig.id)
        self._event("emit", sig.id, sig.path, value)
        self._settle(sig)
        for d in sig.dependents:
            self._schedule(d)

    def _fire(self, node: Node) -> None:
        if isinstance(node, ControlNode):
            if isinstance(node, ConditionalNode):
                self._fire_conditional(node)
            else:
                assert isinstance(node, DynamicOperatorNode)
                self._fire_dynamic(node)
            return
        assert isinstance(node, Signal)
        if isinstance(node, Trampoline):
            self._fire_trampoline(node)
            return
        prod = node.producer
        if isinstance(prod, SourceProducer):
            if prod.pending is UNVALUED:
                return
            value, prod.pending = prod.pending, UNVALUED
            self._emit(node, value)
        elif isinstance(prod, ConstantProducer):
            if node.emitted_turn < 0:
                self._emit(node, node.value)
        elif isinstance(prod, PrimitiveProducer):
            args = [i.value for i in node.inputs]
            if not all(is_valued(a) for a in args):
                self._withdraw(node, POISONED if any(a is POISONED for a in args) else UNVALUED)
                return
            try:
                value = prod.prim.apply(*args)
            except errors.PrimitiveError as exc:
                self._poison(node, exc)
                return
            except (ArithmeticError, DecimalException, TypeError, ValueError) as exc:
                self._poison(node, errors.PrimitiveError(f"{prod.prim.name}: {exc}"))
                return
            self._emit(node, value)
        elif isinstance(prod, ForwardProducer):
            src = prod.src
            if src is not None and src.valued:
                self._emit(node, src.value)
            else:
                # never let a stale value outlive a switch to an unready source
                self._withdraw(node, UNVALUED if src is None else src.value)

    def _withdraw(self, sig: Signal, marker: Any) -> None:
        """Drop a value whose inputs are gone; readers are rescheduled, nothing is emitted."""
        was_valued = sig.valued
        sig.value = marker
        if was_valued:
            for d in sig.dependents:
                self._schedule(d)

    def _poison(self, sig: Signal, exc: errors.PrimitiveError) -> None:
        self._withdraw(sig, POISONED)
        self._error(sig, exc)

    def _fire_trampoline(self, tr: Trampoline) -> None:
        if not tr.init_signal.valued or not all(s.valued for s in tr.sources):
            return
        if not tr.initialized:
            tr.value = tr.init_signal.value
            tr.initialized = True
            if tr.init_signal not in tr.sources:
                self._unlink(tr.init_signal, tr)
        self._emit(tr, tr.value)

    def _commit_trampolines(self) -> int:
        staged = []
        for tr in self._trampolines:
            upd = tr.update_signal
            if (tr.initialized and tr.active and upd is not None
                    and upd.emitted_turn == self.turn and upd.valued):
                tr.pending = upd.value
                staged.append(tr)
        for tr in staged:
            tr.value, tr.pending = tr.pending, UNVALUED
            self._event("commit", tr.id, tr.path, tr.value)
        return len(staged)

    def _deactivate(self, dep: Deployment) -> None:
        for d in dep.descendants(only_live=False):
            d.active = False

    def _reactivate(self, dep: Deployment) -> None:
        """Wake the live part of ``dep`` and recompute it from current inputs."""
        nodes: list[Node] = []
        for d in dep.descendants(only_live=True):
            d.active = True
            nodes.extend(n for n in d.nodes
                         if not (isinstance(n, Signal) and isinstance(n.producer, ConstantProducer)))
        floor = self._floor()
        nodes.sort(key=lambda n: (n.height, n.id))
        for n in nodes:
            need = max((i.height + 1 for i in n.inputs), default=floor)
            self._raise(n, max(need, floor))
        for n in nodes:
            self._schedule(n)

    def _fire_conditional(self, ctrl: ConditionalNode) -> None:
        cond = ctrl.selector.value
        if not is_valued(cond):
            return
        out = ctrl.outs[0]
        truth = cond is not False
        if ctrl.active_branch is not truth:
            old = ctrl.current_child()
            if old is not None:
                self._deactivate(old)
            ctrl.active_branch = truth
            self._event("switch", ctrl.id, ctrl.path, "then" if truth else "else")
            result = self._select_branch(ctrl, truth)
            self._rebind(out, result)
        self._schedule(out)

    def _select_branch(self, ctrl: ConditionalNode, truth: bool) -> Signal | None:
        branch = ctrl.expanded.get(truth)
        if isinstance(branch, Signal):
            return branch
        if isinstance(branch, Deployment) and not branch.poisoned:
            self._reactivate(branch)
            return branch.sinks[0]
        owner = ctrl.owner
        box = Deployment("branch", None, owner, owner.depth, attach=False,
                         label=_box_label(owner, truth))
        if self._report is not None:
            self._report.deployments_created += 1
        ctrl.expanded[truth] = box

        def build() -> None:
            box.sinks = [self._eval1(ctrl.branch_expr(truth), ctrl.env, box)]
            self._drain()
        ctrl.poisoned = not self._guarded(box, build)
        return None if ctrl.poisoned else box.sinks[0]

    def _fire_dynamic(self, ctrl: DynamicOperatorNode) -> None:
        value = ctrl.selector.value
        if not is_valued(value):
            return
        current = ctrl.active_dep
        if current is not None and current.reactor is value:
            for o in ctrl.outs:
                self._schedule(o)
            return
        if current is not None:
            self._deactivate(current)
            ctrl.active_dep = None
        dep = None
        try:
            dep = self._dynamic_target(ctrl, value)
        except errors.RuntimeFault as exc:
            self._error(ctrl, exc)
        ctrl.poisoned = dep is None
        ctrl.active_dep = dep
        self._event("switch", ctrl.id, ctrl.path,
                    value.name if isinstance(value, ReactorValue) else None)
        for i, o in enumerate(ctrl.outs):
            self._rebind(o, dep.sinks[i] if dep is not None else None)
            self._schedule(o)

    def _dynamic_target(self, ctrl: DynamicOperatorNode, value: Any) -> Deployment | None:
        if not isinstance(value, ReactorValue) or isinstance(value, IOReactor):
            raise errors.NotAReactor(f"operator value {to_json(value)!r} is not a reactor")
        cached = ctrl.cache.get(id(value))
        if cached is not None and not cached[1].poisoned:
            self._reactivate(cached[1])
            return cached[1]
        if not value.accepts(len(ctrl.operands)):
            raise errors.ArityMismatch(
                f"{value.name} expects {value.arity} argument(s), got {len(ctrl.operands)}")
        if value.sink_count != len(ctrl.outs):
            raise errors.MultiSinkArityMismatch(
                f"{value.name} has {value.sink_count} sink(s), {len(ctrl.outs)} expected")
        dep = self._instantiate(value, list(ctrl.operands), ctrl.owner, None, attach=False)
        ctrl.cache[id(value)] = (value, dep)
        ctrl.created += 1
        if not self._guarded(dep, self._drain):
            return None
        return dep


def _carries(node: Node) -> bool:
    return not isinstance(node, Signal) or node.valued


def _sink_names(reactor: ReactorValue) -> list[str]:
    if isinstance(reactor, Named):
        sinks = reactor.rdef.sinks
    elif isinstance(reactor, Capture):
        sinks = reactor.rho.body.sinks
    else:
        return ["out"]
    return [s.name if isinstance(s, VarRef) else "out" for s in sinks]


def _box_label(owner: Deployment, truth: bool) -> str:
    arm = "then" if truth else "else"
    return f"{owner.label}/{arm}" if owner.label else arm


def write_trace(reports: Iterable[TurnReport], fh) -> int:
    """Write JSONL trace lines; returns the number of lines."""
    n = 0
    for r in reports:
        for line in r.trace_lines():
            fh.write(line + "\n")
            n += 1
    return n
