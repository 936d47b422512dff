from __future__ import annotations

import json
import re
from pathlib import Path

from haai import Engine
from haai.fixtures import fixture_text, load_order

REFERENCE = Path(__file__).resolve().parents[1] / "paper.md"


def make_engine(*fixtures: str, program: str = "", max_depth: int | None = None) -> Engine:
    """Engine loaded with packaged fixtures (and their dependencies) plus ``program``."""
    eng = Engine() if max_depth is None else Engine(max_depth=max_depth)
    names: list[str] = []
    for name in fixtures:
        names += [n for n in load_order(name) if n not in names]
    eng.load("\n".join(fixture_text(n) for n in names) + "\n" + program)
    return eng


def emitted(report, name: str) -> list:
    return [ev.value for ev in report.emissions() if ev.name == name]


def write_script(path: Path, events: list[tuple[int, str, object]]) -> Path:
    path.write_text("".join(json.dumps({"batch": b, "source": s, "value": v}) + "\n"
                            for b, s, v in events), encoding="utf-8")
    return path


def reference_listing(reference_text: str, n: int) -> str:
    """Code block ``n`` of the reference document, line numbers stripped."""
    m = re.search(rf"\*\*Listing {n}\*\*.*?```(.*?)```", reference_text, re.S)
    assert m, f"listing {n} not found"
    code = [re.sub(r"^\s*\d+ ?", "", ln) for ln in m.group(1).splitlines() if ln.strip()]
    return " ".join(code)
