"""Command line: `olio check FILE` and `olio run FILE`.

check runs the full front half of the pipeline (tokenize, parse, optimize,
verify) and reports diagnostics without ever touching the network.  run
continues into the interpreter: programs with input ports come up as
servers (printing one LISTEN line per bound port), programs without run
their main behavior once and exit.

Exit codes: 0 success / clean, 1 semantic errors or a runtime failure,
2 unreadable or unparsable input.
"""

import argparse
import logging
import os
import sys

from . import comm
from .console import CONSOLE_IOL_SOURCE
from .lexer import EOF, KEYWORD, STRING, LexError, tokenize
from .parser import IncludeError, ParseError, optimize_ast, parse_program
from .runtime import BuildError, FaultSignal, Interpreter
from .semantics import verify_program

log = logging.getLogger("olio.cli")


class FileIncludeLoader:
    """Loads `include "name.iol"` files relative to the file naming them.

    console.iol never touches the filesystem: the console declarations
    ship with the runtime.  Nested includes are spliced here, depth first,
    so each file's includes resolve against its own directory; a file
    including itself (however indirectly) is an error.
    """

    def __init__(self, root_file):
        root = os.path.abspath(root_file)
        self.root_dir = os.path.dirname(root)
        self._active = [root]

    def __call__(self, path):
        return self._load(path, self.root_dir)

    def _load(self, path, base_dir):
        if path == "console.iol":
            return self._splice(tokenize(CONSOLE_IOL_SOURCE, file=path),
                                base_dir)
        full = os.path.normpath(os.path.join(base_dir, path))
        if full in self._active:
            chain = " -> ".join(os.path.basename(p) for p in self._active)
            raise IncludeError(f"include cycle: {chain} -> {path}")
        try:
            with open(full, encoding="utf-8") as f:
                source = f.read()
        except OSError as e:
            raise IncludeError(f"cannot read include {path!r}: {e}")
        self._active.append(full)
        try:
            return self._splice(tokenize(source, file=path),
                                os.path.dirname(full))
        finally:
            self._active.pop()

    def _splice(self, tokens, base_dir):
        out = []
        i = 0
        while i < len(tokens):
            tok = tokens[i]
            if tok.kind == KEYWORD and tok.text == "include" \
                    and i + 1 < len(tokens) and tokens[i + 1].kind == STRING:
                out.extend(self._load(tokens[i + 1].text, base_dir))
                i += 2
            else:
                if tok.kind != EOF:
                    out.append(tok)
                i += 1
        return out


def load_program(path):
    """Read, tokenize, parse, and optimize one program file.

    Returns (program, exit_code, diagnostics); a nonzero exit code means
    the pipeline stopped early and program is None.
    """
    try:
        with open(path, encoding="utf-8") as f:
            source = f.read()
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return None, 2, []
    try:
        tokens = tokenize(source, file=path)
        program = parse_program(tokens,
                                include_loader=FileIncludeLoader(path))
    except (LexError, ParseError, IncludeError) as e:
        print(f"error: {path}: {e}", file=sys.stderr)
        return None, 2, []
    program = optimize_ast(program)
    diagnostics = verify_program(program)
    return program, 0, diagnostics


def cmd_check(args):
    _program, code, diagnostics = load_program(args.file)
    if code:
        return code
    for diag in diagnostics:
        print(diag)
    if any(d.severity == "error" for d in diagnostics):
        return 1
    return 0


def _parse_overrides(pairs):
    overrides = {}
    for pair in pairs or ():
        name, sep, location = pair.partition("=")
        if not sep or not name or not location:
            raise ValueError(
                f"bad --location-override {pair!r}; expected NAME=URI")
        overrides[name] = location
    return overrides


def cmd_run(args):
    program, code, diagnostics = load_program(args.file)
    if code:
        return code
    errors = [d for d in diagnostics if d.severity == "error"]
    if errors:
        for diag in errors:
            print(diag, file=sys.stderr)
        return 1

    try:
        overrides = _parse_overrides(args.location_override)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    trace = None
    if args.trace:
        trace = lambda line: print(line, file=sys.stderr, flush=True)

    try:
        interp = Interpreter(
            program,
            trace=trace,
            location_overrides=overrides,
            request_timeout=args.timeout_ms / 1000.0)
    except BuildError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    def announce(bound):
        for name, location in bound:
            print(f"LISTEN {name} {location}", flush=True)

    try:
        if program.input_ports:
            interp.serve(ready=announce)
        else:
            interp.run_once()
    except FaultSignal as f:
        print(f"fault: {f.name}: {f.detail or f.name}", file=sys.stderr)
        return 1
    except comm.BindError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        interp.stop()
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="olio",
        description="Check and run service-orchestration programs.")
    sub = parser.add_subparsers(dest="command", required=True)

    check = sub.add_parser("check",
                           help="parse and verify a program, print "
                                "diagnostics, touch no sockets")
    check.add_argument("file")
    check.set_defaults(func=cmd_check)

    run = sub.add_parser("run", help="execute a program")
    run.add_argument("file")
    run.add_argument("--location-override", action="append",
                     metavar="NAME=URI",
                     help="rebind a named port (repeatable)")
    run.add_argument("--timeout-ms", type=int, default=30_000,
                     help="solicit-response timeout in milliseconds "
                          "(default 30000)")
    run.add_argument("--trace", action="store_true",
                     help="log every sent and received message to stderr")
    run.set_defaults(func=cmd_run)

    logging.basicConfig(stream=sys.stderr, level=logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
