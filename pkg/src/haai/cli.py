"""Command-line entry point: ``haai run | repl | check | graph``.

Exit codes: 0 clean, 1 parse or usage error, 2 runtime errors during run,
3 Eventual and 4 Weak for ``check``.
"""

from __future__ import annotations

import argparse
import logging
import queue
import sys
import threading
from pathlib import Path
from typing import TextIO

from . import analysis, errors
from .boundary import ReplaySource, Runtime, decode_payload
from .engine import DEFAULT_MAX_DEPTH, Engine, TurnReport
from .fixtures import fixture_names, fixture_program
from .model import display
from .stdlib import default_table
from .syntax import Program, ReactorDef, SignalDef, parse, read_data

log = logging.getLogger("haai")

EXIT_OK, EXIT_PARSE, EXIT_RUNTIME, EXIT_EVENTUAL, EXIT_WEAK = 0, 1, 2, 3, 4
TIER_EXIT = {analysis.STRONG: EXIT_OK, analysis.EVENTUAL: EXIT_EVENTUAL,
             analysis.WEAK: EXIT_WEAK}
FIXTURE_PREFIX = "fixture:"


def load_program_arg(path: str) -> Program:
    """Parse a program file; ``fixture:<name>`` loads a packaged example."""
    if path.startswith(FIXTURE_PREFIX):
        name = path[len(FIXTURE_PREFIX):]
        if name not in fixture_names():
            raise FileNotFoundError(f"no packaged fixture {name!r}")
        return fixture_program(name)
    return parse(Path(path).read_text(encoding="utf-8"), path)


def _open_out(path: str | None) -> TextIO:
    if path is None or path == "-":
        return sys.stdout
    return open(path, "w", encoding="utf-8")


# --- run ------------------------------------------------------------------

def cmd_run(args: argparse.Namespace) -> int:
    try:
        program = load_program_arg(args.program)
    except errors.ParseError as exc:
        print(exc, file=sys.stderr)
        return EXIT_PARSE
    except OSError as exc:
        print(f"cannot read program: {exc}", file=sys.stderr)
        return EXIT_PARSE
    replay = None
    if args.script:
        try:
            replay = ReplaySource.from_file(args.script)
        except (errors.ScriptNotFound, errors.BadPayload) as exc:
            print(exc, file=sys.stderr)
            return EXIT_PARSE

    engine = Engine(default_table(args.prelude), max_depth=args.max_depth)
    window = None if args.poll_ms is None else args.poll_ms / 1000.0
    runtime = Runtime(engine, replay=replay is not None, window=window)
    trace = _open_out(args.trace) if args.trace else None
    failed = False

    def on_report(report: TurnReport) -> None:
        nonlocal failed
        failed = failed or bool(report.errors)
        for ev in report.errors:
            print(f"turn {ev.turn}: {ev.value}", file=sys.stderr)
        if trace is not None:
            for line in report.trace_lines():
                trace.write(line + "\n")

    runtime.listeners.append(on_report)
    try:
        for report in engine.load_program(program):
            runtime.record(report)
        if replay is not None:
            replay.feed(runtime.queue)
            runtime.drain()
        elif runtime.sources:
            _run_live(runtime, args.turns)
    except errors.ConnectFailed as exc:
        print(exc, file=sys.stderr)
        failed = True
    finally:
        runtime.close()
        if trace is not None and trace is not sys.stdout:
            trace.close()
    return EXIT_RUNTIME if failed else EXIT_OK


def _run_live(runtime: Runtime, turns: int | None) -> None:
    done = 0
    try:
        while turns is None or done < turns:
            if runtime.step(timeout=0.1) is not None:
                done += 1
    except KeyboardInterrupt:
        pass


# --- check / graph --------------------------------------------------------

def cmd_check(args: argparse.Namespace) -> int:
    try:
        program = load_program_arg(args.program)
    except errors.ParseError as exc:
        print(exc, file=sys.stderr)
        return EXIT_PARSE
    except OSError as exc:
        print(f"cannot read program: {exc}", file=sys.stderr)
        return EXIT_PARSE
    tier, rep = analysis.classify(program, default_table(args.prelude))
    if args.json:
        print(analysis.report_json(tier, rep))
    else:
        print(format_check(tier, rep))
    return TIER_EXIT[tier.level]


def format_check(tier: analysis.ReactivityTier, rep: analysis.FeatureReport) -> str:
    lines = [f"tier: {tier.level} (static approximation)"]
    lines += [f"  - {j}" for j in tier.justification]
    for key, value in rep.to_dict().items():
        lines.append(f"{key}: {value}")
    return "\n".join(lines)


def cmd_graph(args: argparse.Namespace) -> int:
    try:
        program = load_program_arg(args.program)
        dot = analysis.export_graph(program, args.reactor, default_table(args.prelude))
    except (errors.ParseError, errors.UnknownReactor) as exc:
        print(exc, file=sys.stderr)
        return EXIT_PARSE
    except OSError as exc:
        print(f"cannot read program: {exc}", file=sys.stderr)
        return EXIT_PARSE
    out = _open_out(args.trace)
    out.write(dot)
    if out is not sys.stdout:
        out.close()
    return EXIT_OK


# --- repl -----------------------------------------------------------------

def parse_value(text: str):
    """A value typed at the prompt: JSON, or a Haai literal such as ``#t``."""
    try:
        return decode_payload(text)
    except errors.BadPayload:
        pass
    data = read_data(text)
    if len(data) == 1 and hasattr(data[0], "value"):
        return data[0].value
    return text


def paren_balance(text: str) -> int:
    """Open minus close parentheses, ignoring strings and comments."""
    depth, in_str, esc = 0, False, False
    for line in text.splitlines() or [text]:
        for ch in line:
            if in_str:
                if esc:
                    esc = False
                elif ch == "\\":
                    esc = True
                elif ch == '"':
                    in_str = False
            elif ch == '"':
                in_str = True
            elif ch == ";":
                break
            elif ch == "(":
                depth += 1
            elif ch == ")":
                depth -= 1
    return depth


class Repl:
    """Session state; ``handle`` runs one complete command on the executor thread."""

    def __init__(self, engine: Engine, runtime: Runtime, out: TextIO):
        self.engine = engine
        self.runtime = runtime
        self.out = out
        self.trace = False
        self.definitions: list[ReactorDef | SignalDef] = []
        runtime.listeners.append(self.echo)

    def echo(self, report: TurnReport) -> None:
        names = {sigs[0].id: name for name, sigs in self.engine.globals.items()}
        for ev in report.events:
            if self.trace:
                print(ev.to_json_line(), file=self.out)
            elif ev.kind == "emit" and ev.id in names:
                print(f"{names[ev.id]} = {display(ev.value)}", file=self.out)
            elif ev.kind == "error":
                print(f"error: {ev.value}", file=self.out)

    def handle(self, text: str) -> bool:
        """Returns False when the session should end."""
        text = text.strip()
        if not text:
            return True
        try:
            if text.startswith(":"):
                return self.command(text)
            self.define(text)
        except errors.HaaiError as exc:
            print(f"error: {exc}", file=self.out)
        return True

    def define(self, text: str) -> None:
        self.define_program(parse(text, "<repl>"))

    def define_program(self, program: Program) -> None:
        for d in program.definitions:
            self.definitions.append(d)
            if isinstance(d, ReactorDef):
                self.engine.define_reactor(d)
                print(f"defined {d.name}", file=self.out)
            else:
                self.runtime.record(self.engine.deploy_global(d))

    def command(self, text: str) -> bool:
        parts = text.split(None, 2)
        cmd = parts[0]
        if cmd in (":quit", ":q"):
            return False
        if cmd == ":inject" and len(parts) == 3:
            source = self.engine.resolve_source(parts[1])
            self.runtime.record(self.engine.run_turn([(source, parse_value(parts[2]))]))
        elif cmd == ":trace" and len(parts) == 2 and parts[1] in ("on", "off"):
            self.trace = parts[1] == "on"
        elif cmd == ":graph" and len(parts) == 2:
            print(analysis.export_graph(self.session_program(), parts[1], self.engine.table),
                  end="", file=self.out)
        elif cmd == ":check":
            tier, rep = analysis.classify(self.session_program(), self.engine.table)
            print(format_check(tier, rep), file=self.out)
        else:
            print("commands: :inject <source> <value> | :trace on|off | :graph <reactor> | "
                  ":check | :quit", file=self.out)
        return True

    def session_program(self) -> Program:
        # the latest definition of each reactor wins, as in the reactor table
        latest: dict[str, ReactorDef] = {}
        for d in self.definitions:
            if isinstance(d, ReactorDef):
                latest[d.name] = d
        defs = [d for d in self.definitions
                if not isinstance(d, ReactorDef) or latest[d.name] is d]
        return Program(tuple(defs))


def read_commands(stream: TextIO, commands: queue.Queue, prompt: TextIO | None = None) -> None:
    """Reader thread: collect lines until parentheses balance, then hand off."""
    buf: list[str] = []
    for line in stream:
        buf.append(line)
        text = "".join(buf)
        if text.lstrip().startswith(":") or paren_balance(text) <= 0:
            commands.put(text)
            buf = []
    if buf:
        commands.put("".join(buf))
    commands.put(None)


def cmd_repl(args: argparse.Namespace, stdin: TextIO | None = None,
             stdout: TextIO | None = None) -> int:
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    engine = Engine(default_table(args.prelude), max_depth=args.max_depth)
    window = None if args.poll_ms is None else args.poll_ms / 1000.0
    runtime = Runtime(engine, window=window, stdout=stdout)
    repl = Repl(engine, runtime, stdout)
    if args.program:
        try:
            repl.define_program(load_program_arg(args.program))
        except (errors.HaaiError, OSError) as exc:
            print(f"error: {exc}", file=stdout)
    commands: queue.Queue = queue.Queue()
    reader = threading.Thread(target=read_commands, args=(stdin, commands), daemon=True)
    reader.start()
    try:
        while True:
            try:
                text = commands.get(timeout=0.05)
            except queue.Empty:
                runtime.step(blocking=False)  # live sources, between commands
                continue
            if text is None or not repl.handle(text):
                break
            stdout.flush()
    except KeyboardInterrupt:
        pass
    finally:
        runtime.close()
    return EXIT_OK


# --- entry point ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="haai", description="Haai reactive language runtime")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--prelude", help="prelude file replacing the built-in one")
        p.add_argument("--max-depth", type=int, default=DEFAULT_MAX_DEPTH,
                       help="deployment nesting budget (default %(default)s)")
        p.add_argument("--poll-ms", type=int, help="live batching window in milliseconds")

    p = sub.add_parser("run", help="deploy a program and process events")
    p.add_argument("program", help="path, or fixture:<name> for a packaged example")
    p.add_argument("--script", help="replay script (JSON Lines)")
    p.add_argument("--trace", help="write the JSONL trace here ('-' for stdout)")
    p.add_argument("--turns", type=int, help="stop live mode after this many turns")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("repl", help="interactive session")
    p.add_argument("program", nargs="?")
    common(p)
    p.set_defaults(func=cmd_repl)

    p = sub.add_parser("check", help="classify the reactivity tier")
    p.add_argument("program")
    p.add_argument("--json", action="store_true")
    p.add_argument("--prelude")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("graph", help="export a reactor graph as DOT")
    p.add_argument("program")
    p.add_argument("--reactor", required=True)
    p.add_argument("--trace", help="output path (default stdout)")
    p.add_argument("--prelude")
    p.set_defaults(func=cmd_graph)
    return ap


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors share the parse-error code
        return EXIT_OK if exc.code in (0, None) else EXIT_PARSE
    level = logging.WARNING - 10 * args.verbose
    logging.basicConfig(level=max(level, logging.DEBUG), format="%(levelname)s %(name)s: %(message)s")
    if args.command in ("run", "repl") and args.max_depth < 1:
        print("--max-depth must be positive", file=sys.stderr)
        return EXIT_PARSE
    return args.func(args)
