"""Packaged example programs: numbered listings plus support reactors.

Listings that use reactors defined elsewhere are composed with their
dependencies, so every fixture loads as a self-contained program.
"""

from __future__ import annotations

from importlib import resources

from .syntax import Program, parse

DEPENDS: dict[str, tuple[str, ...]] = {
    "listing3": ("listing1",),
    "listing7": ("listing1", "to-fahrenheit"),
    "listing8": ("listing6",),
    "listing9": ("listing1", "to-fahrenheit"),
    "collatz-fix": ("listing6", "listing10"),
}


def _dir():
    return resources.files("haai").joinpath("examples")


def fixture_names() -> list[str]:
    return sorted(p.name[:-5] for p in _dir().iterdir() if p.name.endswith(".haai"))


def fixture_text(name: str) -> str:
    """The file itself, without dependencies."""
    path = _dir().joinpath(f"{name}.haai")
    if not path.is_file():
        raise KeyError(f"no fixture named {name!r}")
    return path.read_text(encoding="utf-8")


def load_order(name: str) -> list[str]:
    order: list[str] = []
    stack = [(name, False)]
    while stack:
        n, expanded = stack.pop()
        if n in order:
            continue
        if expanded:
            order.append(n)
            continue
        stack.append((n, True))
        stack.extend((d, False) for d in reversed(DEPENDS.get(n, ())))
    return order


def fixture_source(name: str, with_deps: bool = True) -> str:
    names = load_order(name) if with_deps else [name]
    return "\n".join(fixture_text(n) for n in names)


def fixture_program(name: str, with_deps: bool = True) -> Program:
    """Each file is parsed on its own so spans name the right file."""
    names = load_order(name) if with_deps else [name]
    defs = []
    for n in names:
        defs.extend(parse(fixture_text(n), f"{n}.haai").definitions)
    return Program(tuple(defs))
