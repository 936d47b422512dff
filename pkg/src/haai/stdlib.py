"""Built-in primitive reactors and the Haai-source prelude.

Every primitive is a referentially transparent value transformer that runs
in constant time. Unbounded structures are capped (``MAX_LENGTH``) so that
string and vector constructors stay O(1) per update.
"""

from __future__ import annotations

import decimal
import operator
from dataclasses import dataclass
from decimal import Decimal
from functools import reduce
from importlib import resources
from pathlib import Path
from typing import Any, Callable

from .errors import PrimitiveError
from .model import IOReactor, Named, Pair, Primitive, ReactorTable, is_number
from .syntax import parse

MAX_LENGTH = 4096

# Procedures whose reactor counterpart would break purity; never registered.
FORBIDDEN = frozenset({
    "set!", "set-car!", "set-cdr!", "vector-set!", "vector-fill!", "string-set!",
    "read", "write", "display", "newline", "open-input-file", "open-output-file",
    "eval", "call/cc", "call-with-current-continuation", "dynamic-wind", "load",
})


@dataclass(frozen=True)
class PrimitiveSpec:
    name: str
    arity: int
    apply: Callable[..., Any]
    variadic: bool = False
    constant_time: bool = True

    def build(self) -> Primitive:
        return Primitive(self.name, self.arity, self.apply, variadic=self.variadic,
                         constant_time=self.constant_time)


def _num(name: str, v: Any) -> Any:
    if not is_number(v):
        raise PrimitiveError(f"{name}: expected a number, got {v!r}")
    return v


def _int(name: str, v: Any) -> int:
    _num(name, v)
    if isinstance(v, Decimal):
        if v != v.to_integral_value():
            raise PrimitiveError(f"{name}: expected an integer, got {v}")
        return int(v)
    return v


def _arith(name: str, op: Callable[[Any, Any], Any]) -> Callable[..., Any]:
    def apply(*args: Any) -> Any:
        for a in args:
            _num(name, a)
        try:
            return reduce(op, args)
        except (ArithmeticError, decimal.DecimalException) as e:
            raise PrimitiveError(f"{name}: {e}") from None
    return apply


def _div(a: Any, b: Any) -> Any:
    if b == 0:
        raise PrimitiveError("/: division by zero")
    if isinstance(a, int) and isinstance(b, int) and a % b == 0:
        return a // b
    return Decimal(a) / Decimal(b)


def _compare(name: str, op: Callable[[Any, Any], bool]) -> Callable[[Any, Any], bool]:
    def apply(a: Any, b: Any) -> bool:
        return op(_num(name, a), _num(name, b))
    return apply


def _pred(name: str, test: Callable[[Any], bool], numeric: bool = True) -> Callable[[Any], bool]:
    def apply(v: Any) -> bool:
        if numeric:
            _num(name, v)
        return bool(test(v))
    return apply


def _int_op(name: str, op: Callable[[int, int], int]) -> Callable[[Any, Any], int]:
    def apply(a: Any, b: Any) -> int:
        x, y = _int(name, a), _int(name, b)
        if y == 0:
            raise PrimitiveError(f"{name}: division by zero")
        return op(x, y)
    return apply


def _quotient(a: int, b: int) -> int:
    # truncates toward zero, like Scheme
    q = abs(a) // abs(b)
    return q if (a < 0) == (b < 0) else -q


def _car(p: Any) -> Any:
    if not isinstance(p, Pair):
        raise PrimitiveError(f"car: expected a pair, got {p!r}")
    return p.car


def _cdr(p: Any) -> Any:
    if not isinstance(p, Pair):
        raise PrimitiveError(f"cdr: expected a pair, got {p!r}")
    return p.cdr


def _vector_ref(v: Any, i: Any) -> Any:
    if not isinstance(v, tuple):
        raise PrimitiveError(f"vector-ref: expected a vector, got {v!r}")
    k = _int("vector-ref", i)
    if not 0 <= k < len(v):
        raise PrimitiveError(f"vector-ref: index {k} out of range")
    return v[k]


def _vector_length(v: Any) -> int:
    if not isinstance(v, tuple):
        raise PrimitiveError(f"vector-length: expected a vector, got {v!r}")
    return len(v)


def _make_vector(n: Any, fill: Any) -> tuple:
    k = _int("make-vector", n)
    if not 0 <= k <= MAX_LENGTH:
        raise PrimitiveError(f"make-vector: size {k} outside 0..{MAX_LENGTH}")
    return (fill,) * k


def _vector(*items: Any) -> tuple:
    return tuple(items)


def _str(name: str, s: Any) -> str:
    if not isinstance(s, str):
        raise PrimitiveError(f"{name}: expected a string, got {s!r}")
    return s


def _string_append(a: Any, b: Any) -> str:
    out = _str("string-append", a) + _str("string-append", b)
    if len(out) > MAX_LENGTH:
        raise PrimitiveError(f"string-append: result longer than {MAX_LENGTH}")
    return out


def _substring(s: Any, start: Any, end: Any) -> str:
    s = _str("substring", s)
    i, j = _int("substring", start), _int("substring", end)
    if not 0 <= i <= j <= len(s):
        raise PrimitiveError(f"substring: bad range {i}..{j}")
    return s[i:j]


def _smallest(a: Any, b: Any) -> Any:
    return min(_num("smallest", a), _num("smallest", b))


def _largest(a: Any, b: Any) -> Any:
    return max(_num("largest", a), _num("largest", b))


PRIMITIVES: tuple[PrimitiveSpec, ...] = (
    PrimitiveSpec("+", 2, _arith("+", operator.add), variadic=True),
    PrimitiveSpec("-", 2, _arith("-", operator.sub), variadic=True),
    PrimitiveSpec("*", 2, _arith("*", operator.mul), variadic=True),
    PrimitiveSpec("/", 2, _arith("/", _div), variadic=True),
    PrimitiveSpec("quotient", 2, _int_op("quotient", _quotient)),
    PrimitiveSpec("remainder", 2, _int_op("remainder", lambda a, b: a - b * _quotient(a, b))),
    PrimitiveSpec("modulo", 2, _int_op("modulo", operator.mod)),
    PrimitiveSpec("abs", 1, lambda a: abs(_num("abs", a))),
    PrimitiveSpec("<", 2, _compare("<", operator.lt)),
    PrimitiveSpec("<=", 2, _compare("<=", operator.le)),
    PrimitiveSpec(">", 2, _compare(">", operator.gt)),
    PrimitiveSpec(">=", 2, _compare(">=", operator.ge)),
    PrimitiveSpec("=", 2, _compare("=", operator.eq)),
    PrimitiveSpec("smallest", 2, _smallest),
    PrimitiveSpec("largest", 2, _largest),
    PrimitiveSpec("even?", 1, lambda v: _int("even?", v) % 2 == 0),
    PrimitiveSpec("odd?", 1, lambda v: _int("odd?", v) % 2 == 1),
    PrimitiveSpec("negative?", 1, _pred("negative?", lambda v: v < 0)),
    PrimitiveSpec("positive?", 1, _pred("positive?", lambda v: v > 0)),
    PrimitiveSpec("zero?", 1, _pred("zero?", lambda v: v == 0)),
    PrimitiveSpec("number?", 1, _pred("number?", is_number, numeric=False)),
    PrimitiveSpec("boolean?", 1, _pred("boolean?", lambda v: isinstance(v, bool), numeric=False)),
    PrimitiveSpec("string?", 1, _pred("string?", lambda v: isinstance(v, str), numeric=False)),
    PrimitiveSpec("pair?", 1, _pred("pair?", lambda v: isinstance(v, Pair), numeric=False)),
    PrimitiveSpec("vector?", 1, _pred("vector?", lambda v: isinstance(v, tuple), numeric=False)),
    PrimitiveSpec("not", 1, lambda v: v is False),
    PrimitiveSpec("cons", 2, Pair),
    PrimitiveSpec("car", 1, _car),
    PrimitiveSpec("cdr", 1, _cdr),
    PrimitiveSpec("vector", 1, _vector, variadic=True),
    PrimitiveSpec("make-vector", 2, _make_vector),
    PrimitiveSpec("vector-ref", 2, _vector_ref),
    PrimitiveSpec("vector-length", 1, _vector_length),
    PrimitiveSpec("string-length", 1, lambda s: len(_str("string-length", s))),
    PrimitiveSpec("string-append", 2, _string_append),
    PrimitiveSpec("substring", 3, _substring),
)

# name -> (role, arity); the io boundary turns deployments of these into adapters
IO_REACTORS: dict[str, tuple[str, int]] = {
    "ws-in": ("producer", 1),
    "manual-in": ("producer", 1),
    "timer": ("producer", 1),
    "stdin-lines": ("producer", 1),
    "ws-out": ("consumer", 2),
    "stdout-out": ("consumer", 1),
}


def register_primitives(table: ReactorTable) -> int:
    for spec in PRIMITIVES:
        table.define(spec.name, spec.build())
    for name, (role, arity) in IO_REACTORS.items():
        table.define(name, IOReactor(name, role, arity))
    return len(PRIMITIVES) + len(IO_REACTORS)


def register_primitive(table: ReactorTable, name: str, arity: int, apply: Callable[..., Any],
                       *, variadic: bool = False, constant_time: bool = False) -> Primitive:
    """Add a user primitive. Defaults to non-constant-time, the safe assumption."""
    if name in FORBIDDEN:
        raise ValueError(f"{name} is not referentially transparent")
    prim = PrimitiveSpec(name, arity, apply, variadic, constant_time).build()
    table.define(name, prim)
    return prim


def prelude_source() -> str:
    return resources.files("haai").joinpath("prelude.haai").read_text(encoding="utf-8")


def load_prelude(table: ReactorTable, path: str | Path | None = None) -> int:
    if path is None:
        text, name = prelude_source(), "prelude.haai"
    else:
        text, name = Path(path).read_text(encoding="utf-8"), str(path)
    program = parse(text, name)
    for rdef in program.reactors:
        table.define(rdef.name, Named(rdef))
    return len(program.reactors)


def default_table(prelude: str | Path | None = None) -> ReactorTable:
    table = ReactorTable()
    register_primitives(table)
    load_prelude(table, prelude)
    return table
