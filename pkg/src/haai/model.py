"""Runtime object model: values, reactor values, signals, deployments, scopes."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from decimal import Decimal
from itertools import count
from typing import Any, Callable, Iterator, Union

from . import errors
from .syntax import (Body, Deploy, Expr, If, Literal, ReactorDef, Rho, SignalDef, VarRef,
                     format_literal)

log = logging.getLogger(__name__)


# --- values ---------------------------------------------------------------

class _Marker:
    def __init__(self, name: str):
        self.name = name

    def __repr__(self) -> str:
        return self.name

    def __bool__(self) -> bool:
        return False


UNVALUED = _Marker("UNVALUED")
POISONED = _Marker("POISONED")


@dataclass(frozen=True)
class Pair:
    car: Any
    cdr: Any


Number = Union[int, Decimal]


def is_number(v: object) -> bool:
    return isinstance(v, (int, Decimal)) and not isinstance(v, bool)


def is_valued(v: object) -> bool:
    return v is not UNVALUED and v is not POISONED


class ReactorValue:
    """A first-class reactor. Equality is identity."""

    name: str

    @property
    def arity(self) -> int:
        raise NotImplementedError

    @property
    def sink_count(self) -> int:
        return 1

    def accepts(self, n: int) -> bool:
        return n == self.arity

    def __repr__(self) -> str:
        return f"<reactor {self.name}>"


class Primitive(ReactorValue):
    """Built-in reactor backed by a pure value transformer."""

    def __init__(self, name: str, arity: int, apply: Callable[..., Any], *,
                 variadic: bool = False, constant_time: bool = True):
        self.name = name
        self.min_arity = arity
        self.variadic = variadic
        self.constant_time = constant_time
        self.apply = apply

    @property
    def arity(self) -> int:
        return self.min_arity

    def accepts(self, n: int) -> bool:
        return n >= self.min_arity if self.variadic else n == self.min_arity


class IOReactor(ReactorValue):
    """Data producing (``producer``) or consuming (``consumer``) reactor.

    Its arguments must be constants known at deployment time, except the
    consumed signal, which is the last argument of a consumer.
    """

    def __init__(self, name: str, role: str, arity: int):
        self.name = name
        self.role = role
        self._arity = arity

    @property
    def arity(self) -> int:
        return self._arity


class Named(ReactorValue):
    def __init__(self, rdef: ReactorDef):
        self.rdef = rdef
        self.name = rdef.name

    @property
    def arity(self) -> int:
        return len(self.rdef.params)

    @property
    def sink_count(self) -> int:
        return len(self.rdef.sinks)


class Capture(ReactorValue):
    """A rho together with the identifiers it closes over."""

    def __init__(self, rho: Rho, env: dict[str, Signal | ReactorValue], uid: int):
        self.rho = rho
        self.env = env
        self.uid = uid
        self.name = f"rho#{uid}"

    @property
    def arity(self) -> int:
        return len(self.rho.params)

    @property
    def sink_count(self) -> int:
        return len(self.rho.body.sinks)

    @property
    def implicit_sources(self) -> list[Signal]:
        return [v for v in self.env.values() if isinstance(v, Signal)]


def to_json(v: Any) -> Any:
    """JSON-compatible rendering used by traces and the websocket wire format."""
    if v is UNVALUED or v is POISONED:
        return None
    if isinstance(v, bool) or isinstance(v, (int, str)):
        return v
    if isinstance(v, Decimal):
        f = float(v)
        if math.isfinite(f):
            return f
        return str(v)
    if isinstance(v, float):
        return v
    if isinstance(v, Pair):
        return {"pair": [to_json(v.car), to_json(v.cdr)]}
    if isinstance(v, tuple):
        return [to_json(x) for x in v]
    if isinstance(v, ReactorValue):
        return {"reactor": v.name}
    raise TypeError(f"not a Haai value: {v!r}")


def from_json(x: Any) -> Any:
    """Decode a JSON value into a Haai value; arrays become vectors."""
    if isinstance(x, bool) or isinstance(x, (int, str, Decimal)):
        return x
    if isinstance(x, float):
        if not math.isfinite(x):
            raise errors.BadPayload(f"non-finite number {x!r}")
        return Decimal(repr(x))
    if isinstance(x, list):
        return tuple(from_json(e) for e in x)
    if isinstance(x, dict) and set(x) == {"pair"} and len(x["pair"]) == 2:
        return Pair(from_json(x["pair"][0]), from_json(x["pair"][1]))
    raise errors.BadPayload(f"cannot decode {x!r}")


def display(v: Any) -> str:
    """Human-readable rendering for the REPL and stdout sinks."""
    if v is UNVALUED or v is POISONED:
        return f"<{v.name.lower()}>"
    if isinstance(v, Decimal):
        return repr(to_json(v))
    if isinstance(v, (bool, int, str)):
        return format_literal(v)
    if isinstance(v, Pair):
        return f"({display(v.car)} . {display(v.cdr)})"
    if isinstance(v, tuple):
        return "#(" + " ".join(display(x) for x in v) + ")"
    return repr(v)


# --- graph nodes ----------------------------------------------------------

class IdSource:
    """Per-engine counters so that identifiers are reproducible run to run."""

    def __init__(self) -> None:
        self.nodes = count(1)
        self.deployments = count(1)
        self.captures = count(1)


class Node:
    """Anything the turn scheduler can enqueue; ordered by (height, id)."""

    kind = "node"

    def __init__(self, owner: Deployment, name: str):
        self.id = next(owner.ids.nodes)
        self.owner = owner
        self.name = name
        self.height = 0
        self.inputs: list[Node] = []
        self.dependents: dict[Node, None] = {}
        # scheduler bookkeeping
        self.queued_turn = -1
        self.queued_height = -1
        self.done_turn = -1
        owner.nodes.append(self)

    @property
    def active(self) -> bool:
        return self.owner.active

    @property
    def path(self) -> str:
        label = self.owner.label
        return f"{label}/{self.name}" if label else self.name

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.path} #{self.id} h={self.height}>"


class Producer:
    """How a signal computes its value; see ``Engine._fire``."""


class SourceProducer(Producer):
    def __init__(self, source_id: str):
        self.source_id = source_id
        self.pending: Any = UNVALUED


class ConstantProducer(Producer):
    pass


class PrimitiveProducer(Producer):
    def __init__(self, prim: Primitive):
        self.prim = prim


class ForwardProducer(Producer):
    def __init__(self, src: Signal | None = None):
        self.src = src


class Signal(Node):
    def __init__(self, owner: Deployment, name: str, kind: str = "internal",
                 producer: Producer | None = None, value: Any = UNVALUED):
        super().__init__(owner, name)
        self.kind = kind
        self.producer = producer if producer is not None else ForwardProducer()
        self.value = value
        self.emitted_turn = -1

    @property
    def valued(self) -> bool:
        return is_valued(self.value)


class Trampoline(Signal):
    """Deployment-local state read as a signal; written only by turn commit."""

    def __init__(self, owner: Deployment, name: str, init_signal: Signal):
        super().__init__(owner, name, kind="trampoline", producer=Producer())
        self.init_signal = init_signal
        self.initialized = False
        self.pending: Any = UNVALUED
        self.update_signal: Signal | None = None
        self.sources: list[Signal] = []

    @property
    def current(self) -> Any:
        return self.value if self.initialized else UNVALUED


class ControlNode(Node):
    """Selector-driven switch (``if`` or reactor-valued operator)."""

    def __init__(self, owner: Deployment, name: str, selector: Signal, outs: list[Signal]):
        super().__init__(owner, name)
        self.selector = selector
        self.outs = outs
        self.poisoned = False

    def current_child(self) -> Deployment | None:
        raise NotImplementedError


class ConditionalNode(ControlNode):
    kind = "conditional"

    def __init__(self, owner: Deployment, expr: If, env: Environment, selector: Signal,
                 out: Signal):
        super().__init__(owner, "if", selector, [out])
        self.expr = expr
        self.env = env
        self.active_branch: bool | None = None
        # truth -> Signal (bare branch) or Deployment (boxed branch)
        self.expanded: dict[bool, Signal | Deployment] = {}

    def branch_expr(self, truth: bool) -> Expr:
        return self.expr.consequent if truth else self.expr.alternate

    def current_child(self) -> Deployment | None:
        if self.active_branch is None:
            return None
        b = self.expanded.get(self.active_branch)
        return b if isinstance(b, Deployment) else None


class DynamicOperatorNode(ControlNode):
    kind = "dynamic"

    def __init__(self, owner: Deployment, selector: Signal, operands: list[Signal],
                 outs: list[Signal]):
        super().__init__(owner, "dyn", selector, outs)
        self.operands = operands
        self.cache: dict[int, tuple[ReactorValue, Deployment]] = {}
        self.active_dep: Deployment | None = None
        self.created = 0

    def current_child(self) -> Deployment | None:
        return self.active_dep


# --- deployments ----------------------------------------------------------

class Deployment:
    """An instance of a reactor (or a conditional branch box / global def)."""

    def __init__(self, kind: str, reactor: ReactorValue | None, parent: Deployment | None,
                 depth: int, label: str | None = None, ids: IdSource | None = None,
                 attach: bool = True):
        if ids is None:
            assert parent is not None, "root deployment needs an IdSource"
            ids = parent.ids
        self.ids = ids
        self.id = next(ids.deployments)
        self.kind = kind
        self.reactor = reactor
        self.parent = parent
        self.depth = depth
        self.explicit_sources: list[Signal] = []
        self.implicit_sources: list[Signal] = []
        self.internals: list[Signal] = []
        self.sinks: list[Signal] = []
        self.trampolines: list[Trampoline] = []
        self.children: list[Deployment] = []
        self.controls: list[ControlNode] = []
        self.nodes: list[Node] = []
        self.active = True
        self.poisoned = False
        if label is None:
            label = f"{reactor.name}#{self.id}" if reactor is not None else f"{kind}#{self.id}"
        self.label = label
        # switch-owned deployments (branch boxes, dynamic deployments) are reached
        # through their control node instead of ``children``
        if parent is not None and attach:
            parent.children.append(self)

    def descendants(self, only_live: bool = False) -> Iterator[Deployment]:
        """This deployment and everything below it, iteratively.

        With ``only_live`` only the currently selected child of each switch is
        followed; otherwise every cached branch and dynamic deployment is too.
        """
        stack = [self]
        while stack:
            d = stack.pop()
            yield d
            stack.extend(reversed(d.children))
            for c in reversed(d.controls):
                if only_live:
                    child = c.current_child()
                    if child is not None:
                        stack.append(child)
                elif isinstance(c, ConditionalNode):
                    stack.extend(b for b in c.expanded.values() if isinstance(b, Deployment))
                elif isinstance(c, DynamicOperatorNode):
                    stack.extend(dep for _, dep in c.cache.values())

    def __repr__(self) -> str:
        return f"<Deployment {self.label} depth={self.depth} active={self.active}>"


# --- scopes ---------------------------------------------------------------

class ReactorTable:
    """Global name -> reactor mapping; redefinition replaces and is logged."""

    def __init__(self) -> None:
        self._entries: dict[str, ReactorValue] = {}

    def define(self, name: str, value: ReactorValue) -> None:
        if name in self._entries:
            log.info("redefining reactor %s", name)
        self._entries[name] = value

    def get(self, name: str) -> ReactorValue | None:
        return self._entries.get(name)

    def __contains__(self, name: object) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def primitives(self) -> dict[str, Primitive]:
        return {k: v for k, v in self._entries.items() if isinstance(v, Primitive)}


Binding = Union[Signal, ReactorValue]


class Environment:
    def __init__(self, frame: dict[str, Binding] | None = None,
                 parent: Environment | None = None, table: ReactorTable | None = None):
        self.frame = frame if frame is not None else {}
        self.parent = parent
        self.table = table

    def bind(self, name: str, value: Binding) -> None:
        self.frame[name] = value

    def child(self, frame: dict[str, Binding] | None = None) -> Environment:
        return Environment(frame, parent=self)

    def find(self, name: str) -> Binding | None:
        env: Environment | None = self
        while env is not None:
            if name in env.frame:
                return env.frame[name]
            if env.table is not None:
                found = env.table.get(name)
                if found is not None:
                    return found
            env = env.parent
        return None


def lookup(env: Environment, name: str, span=None) -> Binding:
    found = env.find(name)
    if found is None:
        raise errors.UnboundIdentifier(name, span)
    return found


def _free_in_expr(e: Expr, bound: frozenset[str], out: dict[str, None]) -> None:
    if isinstance(e, VarRef):
        if e.name not in bound:
            out.setdefault(e.name)
    elif isinstance(e, Literal):
        pass
    elif isinstance(e, Deploy):
        _free_in_expr(e.operator, bound, out)
        for x in e.operands:
            _free_in_expr(x, bound, out)
    elif isinstance(e, If):
        for x in (e.cond, e.consequent, e.alternate):
            _free_in_expr(x, bound, out)
    elif isinstance(e, Rho):
        _free_in_body(e.body, bound | set(e.params), out)


def _free_in_body(body: Body, bound: frozenset[str], out: dict[str, None]) -> None:
    # defs are sequential: a def sees earlier defs only
    for d in body.defs:
        _free_in_expr(d.expr, bound, out)
        bound = bound | set(d.targets)
    for e in (*body.sinks, *body.updates):
        _free_in_expr(e, bound, out)


def free_identifiers(node: Rho | ReactorDef | Expr) -> list[str]:
    """Identifiers referenced but not bound locally, in first-use order."""
    out: dict[str, None] = {}
    if isinstance(node, Rho):
        _free_in_body(node.body, frozenset(node.params), out)
    elif isinstance(node, ReactorDef):
        bound = frozenset(node.params)
        for t in node.trampolines:
            _free_in_expr(t.init, bound, out)
        _free_in_body(node.body, bound | {t.name for t in node.trampolines}, out)
    else:
        _free_in_expr(node, frozenset(), out)
    return list(out)


def make_capture(rho: Rho, env: Environment, uid: int = 0) -> Capture:
    snapshot: dict[str, Binding] = {}
    for name in free_identifiers(rho):
        snapshot[name] = lookup(env, name, rho.span)
    return Capture(rho, snapshot, uid)


__all__ = [
    "UNVALUED", "POISONED", "Pair", "ReactorValue", "Primitive", "IOReactor", "Named", "Capture",
    "Node", "Signal", "Trampoline", "ControlNode", "ConditionalNode", "DynamicOperatorNode",
    "Deployment", "IdSource", "ReactorTable", "Environment", "lookup", "free_identifiers", "make_capture",
    "to_json", "from_json", "display", "is_number", "is_valued", "SignalDef",
]
