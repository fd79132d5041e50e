"""Recursive-descent parser for deployment and behavior parts.

Statement-level ``|`` composes processes in parallel; inside a type
definition the same token separates choice alternatives. The two never
clash because type expressions only occur in deployment context.
"""

from __future__ import annotations

from . import ast_nodes as A
from .lexer import (
    EOF, IDENT, INT, DOUBLE, STRING, KEYWORD, PUNCT,
    NATIVE_TYPE_NAMES, Token,
)

EXECUTION_MODES = ("single", "concurrent", "sequential")


class ParseError(Exception):
    def __init__(self, message, token, expected=()):
        self.message = message
        self.line = token.line if token else 0
        self.column = token.column if token else 0
        self.file = token.file if token else None
        self.expected = frozenset(expected)
        super().__init__(f"{message} at {self.line}:{self.column}")


class IncludeError(Exception):
    pass


class _Parser:
    def __init__(self, tokens, include_loader=None):
        self.toks = list(tokens)
        self.pos = 0
        self.loader = include_loader

    # --- token plumbing ---

    def peek(self, ahead=0):
        i = min(self.pos + ahead, len(self.toks) - 1)
        return self.toks[i]

    def at(self, kind, text=None):
        t = self.peek()
        return t.kind == kind and (text is None or t.text == text)

    def at_punct(self, text):
        return self.at(PUNCT, text)

    def advance(self):
        t = self.toks[self.pos]
        if t.kind != EOF:
            self.pos += 1
        return t

    def expect(self, kind, text=None):
        if not self.at(kind, text):
            want = text if text is not None else kind
            raise ParseError(f"expected {want!r}, found {self.peek().text!r}",
                             self.peek(), expected={want})
        return self.advance()

    def fail(self, message, expected=()):
        raise ParseError(f"{message}, found {self.peek().text!r}",
                         self.peek(), expected=expected)

    # --- program ---

    def parse_program(self):
        prog = A.AstProgram()
        while not self.at(EOF):
            t = self.peek()
            if t.kind == KEYWORD and t.text == "include":
                self._splice_include(prog)
            elif t.kind == KEYWORD and t.text == "type":
                prog.type_decls.append(self._type_decl())
            elif t.kind == KEYWORD and t.text == "interface":
                prog.interfaces.append(self._interface_decl())
            elif t.kind == KEYWORD and t.text in ("inputPort", "outputPort"):
                port = self._port_decl()
                (prog.input_ports if port.direction == "input"
                 else prog.output_ports).append(port)
            elif t.kind == KEYWORD and t.text == "execution":
                prog.execution_mode = self._execution_decl()
            elif t.kind == KEYWORD and t.text == "init":
                if prog.init_block is not None:
                    raise ParseError("duplicate init block", t)
                self.advance()
                prog.init_block = self._braced_process()
            elif t.kind == KEYWORD and t.text == "define":
                self.advance()
                name = self.expect(IDENT)
                if name.text in prog.defines:
                    raise ParseError(f"duplicate define {name.text!r}", name)
                prog.defines[name.text] = self._braced_process()
            elif t.kind == KEYWORD and t.text == "main":
                if prog.main_block is not None:
                    raise ParseError("duplicate main block", t)
                self.advance()
                prog.main_block = self._braced_process()
            else:
                self.fail("expected a declaration",
                          expected={"include", "type", "interface", "inputPort",
                                    "outputPort", "execution", "init", "define",
                                    "main"})
        return prog

    def _splice_include(self, prog):
        kw = self.advance()
        path = self.expect(STRING).text
        if self.loader is None:
            raise IncludeError(f"no include loader for {path!r} "
                               f"(at {kw.line}:{kw.column})")
        spliced = list(self.loader(path))
        while spliced and spliced[-1].kind == EOF:
            spliced.pop()
        self.toks[self.pos:self.pos] = spliced
        prog.includes.append(path)

    # --- deployment declarations ---

    def _type_decl(self):
        kw = self.advance()
        name = self.expect(IDENT)
        self.expect(PUNCT, ":")
        return A.TypeDecl(name.text, self._type_expr(), pos=name)

    def _type_expr(self):
        left = self._type_primary()
        if self.at_punct("|"):
            bar = self.advance()
            right = self._type_expr()  # right-associative
            return A.ChoiceType(left, right, pos=bar)
        return left

    def _type_primary(self):
        t = self.peek()
        if t.kind == KEYWORD and t.text == "undefined":
            self.advance()
            return A.UndefinedType(pos=t)
        if t.kind == KEYWORD and t.text in NATIVE_TYPE_NAMES:
            self.advance()
            if self.at_punct("{"):
                self.advance()
                if self.at_punct("?"):
                    self.advance()
                    self.expect(PUNCT, "}")
                    return A.UntypedSubnodes(t.text, pos=t)
                subs = []
                while self.at_punct("."):
                    subs.append(self._subtype())
                self.expect(PUNCT, "}")
                return A.InlineType(t.text, subs, pos=t)
            return A.NativeType(t.text, pos=t)
        if t.kind == IDENT:
            self.advance()
            return A.LinkType(t.text, pos=t)
        self.fail("expected a type expression",
                  expected=set(NATIVE_TYPE_NAMES) | {"undefined", "identifier"})

    def _subtype(self):
        dot = self.expect(PUNCT, ".")
        name = self.expect(IDENT)
        card = A.ONCE
        if self.at_punct("?"):
            self.advance()
            card = A.OPTIONAL
        elif self.at_punct("*"):
            self.advance()
            card = A.ANY_COUNT
        elif self.at_punct("["):
            self.advance()
            lo = int(self.expect(INT).text)
            self.expect(PUNCT, ",")
            if self.at_punct("*"):
                self.advance()
                hi = None
            else:
                hi = int(self.expect(INT).text)
            self.expect(PUNCT, "]")
            card = A.Cardinality(lo, hi)
        self.expect(PUNCT, ":")
        return A.SubTypeAst(name.text, card, self._type_expr(), pos=name)

    def _type_ref(self):
        t = self.peek()
        if t.kind == IDENT or (t.kind == KEYWORD and
                               (t.text in NATIVE_TYPE_NAMES or t.text == "undefined")):
            self.advance()
            return t
        self.fail("expected a type name")

    def _interface_decl(self):
        self.advance()
        name = self.expect(IDENT)
        decl = A.InterfaceDecl(name.text, pos=name)
        self.expect(PUNCT, "{")
        while not self.at_punct("}"):
            section = self.peek()
            if section.kind == KEYWORD and section.text == "RequestResponse":
                self.advance()
                self.expect(PUNCT, ":")
                while True:
                    op = self.expect(IDENT)
                    self.expect(PUNCT, "(")
                    req = self._type_ref()
                    self.expect(PUNCT, ")")
                    self.expect(PUNCT, "(")
                    resp = self._type_ref()
                    self.expect(PUNCT, ")")
                    decl.request_response_ops.append(
                        A.RequestResponseOp(op.text, req.text, resp.text, pos=op))
                    if not self.at_punct(","):
                        break
                    self.advance()
            elif section.kind == KEYWORD and section.text == "OneWay":
                self.advance()
                self.expect(PUNCT, ":")
                while True:
                    op = self.expect(IDENT)
                    self.expect(PUNCT, "(")
                    req = self._type_ref()
                    self.expect(PUNCT, ")")
                    decl.one_way_ops.append(A.OneWayOp(op.text, req.text, pos=op))
                    if not self.at_punct(","):
                        break
                    self.advance()
            else:
                self.fail("expected 'RequestResponse' or 'OneWay'",
                          expected={"RequestResponse", "OneWay"})
        self.expect(PUNCT, "}")
        return decl

    def _port_decl(self):
        kw = self.advance()
        direction = "input" if kw.text == "inputPort" else "output"
        name = self.expect(IDENT)
        location = None
        protocol = "mop"
        interfaces = []
        self.expect(PUNCT, "{")
        while not self.at_punct("}"):
            f = self.peek()
            if f.kind == KEYWORD and f.text == "Location":
                self.advance()
                self.expect(PUNCT, ":")
                location = self.expect(STRING).text
            elif f.kind == KEYWORD and f.text == "Protocol":
                self.advance()
                self.expect(PUNCT, ":")
                if self.at(STRING):
                    protocol = self.advance().text
                else:
                    protocol = self.expect(IDENT).text
            elif f.kind == KEYWORD and f.text == "Interfaces":
                self.advance()
                self.expect(PUNCT, ":")
                interfaces.append(self.expect(IDENT).text)
                while self.at_punct(","):
                    self.advance()
                    interfaces.append(self.expect(IDENT).text)
            else:
                self.fail("expected 'Location', 'Protocol' or 'Interfaces'",
                          expected={"Location", "Protocol", "Interfaces"})
        self.expect(PUNCT, "}")
        if location is None:
            raise ParseError(f"port {name.text!r} has no Location", name)
        if not interfaces:
            raise ParseError(f"port {name.text!r} has no Interfaces", name)
        return A.PortConfig(name.text, location, protocol, interfaces,
                            direction, pos=name)

    def _execution_decl(self):
        self.advance()
        self.expect(PUNCT, "{")
        t = self.peek()
        if t.kind == KEYWORD and t.text in EXECUTION_MODES:
            self.advance()
        else:
            self.fail("expected an execution mode", expected=set(EXECUTION_MODES))
        self.expect(PUNCT, "}")
        return t.text

    # --- behavior ---

    def _braced_process(self):
        self.expect(PUNCT, "{")
        p = self._process()
        self.expect(PUNCT, "}")
        return p

    def _process(self):
        left = self._sequence()
        if self.at_punct("|"):
            bar = self.advance()
            right = self._process()  # right-associative
            return A.Parallel(left, right, pos=bar)
        return left

    def _sequence(self):
        first = self._statement()
        if not self.at_punct(";"):
            return first
        items = [first]
        while self.at_punct(";"):
            self.advance()
            items.append(self._statement())
        return A.Sequence(items, pos=items[0].pos)

    def _statement(self):
        t = self.peek()
        if self.at_punct("{"):
            self.advance()
            p = self._process()
            self.expect(PUNCT, "}")
            return p
        if self.at_punct("["):
            return self._input_choice()
        if t.kind == KEYWORD and t.text == "if":
            return self._if_statement()
        if t.kind == KEYWORD and t.text == "match":
            return self._match_statement()
        if t.kind == IDENT and t.text == "nullProcess":
            self.advance()
            return A.Nil(pos=t)
        if t.kind == IDENT:
            return self._ident_statement()
        self.fail("expected a statement")

    def _ident_statement(self):
        name = self.advance()
        if self.at_punct("@"):
            return self._output_statement(name)
        if self.at_punct("("):
            return self._receive_statement(name)
        if self.at_punct(".") or self.at_punct("="):
            path = self._continue_path(name)
            self.expect(PUNCT, "=")
            return A.Assign(path, self._expr(), pos=name)
        return A.CallDefine(name.text, pos=name)

    def _output_statement(self, op):
        self.advance()  # @
        port = self.expect(IDENT)
        self.expect(PUNCT, "(")
        arg = None
        if not self.at_punct(")"):
            arg = self._expr()
        self.expect(PUNCT, ")")
        if self.at_punct("("):
            self.advance()
            result = None
            if not self.at_punct(")"):
                result = self._path()
            self.expect(PUNCT, ")")
            return A.SolicitResponse(op.text, port.text, arg, result, pos=op)
        return A.Notification(op.text, port.text, arg, pos=op)

    def _receive_statement(self, op):
        self.advance()  # (
        in_path = self._path()
        self.expect(PUNCT, ")")
        if not self.at_punct("("):
            return A.OneWayRecv(op.text, in_path, pos=op)
        self.advance()
        out_path = self._path()
        self.expect(PUNCT, ")")
        body = A.Nil(pos=op)
        if self.at_punct("{"):
            body = self._braced_process()
        return A.RequestResponseRecv(op.text, in_path, out_path, body, pos=op)

    def _input_choice(self):
        branches = []
        first = self.peek()
        while self.at_punct("["):
            self.advance()
            guard = self._statement()
            if not isinstance(guard, (A.OneWayRecv, A.RequestResponseRecv)):
                raise ParseError("input-choice guard must be a receive statement",
                                 guard.pos or first)
            self.expect(PUNCT, "]")
            body = A.Nil(pos=guard.pos)
            if self.at_punct("{"):
                body = self._braced_process()
            branches.append(A.InputChoiceBranch(guard, body))
        return A.InputChoice(branches, pos=first)

    def _if_statement(self):
        kw = self.advance()
        self.expect(PUNCT, "(")
        cond = self._expr()
        self.expect(PUNCT, ")")
        then = self._braced_process()
        orelse = None
        if self.at(KEYWORD, "else"):
            self.advance()
            orelse = self._braced_process()
        return A.If(cond, then, orelse, pos=kw)

    def _match_statement(self):
        kw = self.advance()
        self.expect(PUNCT, "(")
        subject = self._path()
        self.expect(PUNCT, ")")
        self.expect(PUNCT, "{")
        arms = []
        while not self.at_punct("}"):
            arm_type = self._type_ref()
            self.expect(PUNCT, "{")
            body = self._process()
            self.expect(PUNCT, "}")
            arms.append(A.MatchArm(arm_type.text, body, pos=arm_type))
        if not arms:
            self.fail("match needs at least one arm")
        self.expect(PUNCT, "}")
        return A.Match(subject, arms, pos=kw)

    # --- paths and expressions ---

    def _path(self):
        return self._continue_path(self.expect(IDENT))

    def _continue_path(self, first):
        path = [first.text]
        while self.at_punct("."):
            self.advance()
            path.append(self.expect(IDENT).text)
        return path

    def _expr(self):
        left = self._additive()
        while self.at_punct("==") or self.at_punct("!="):
            op = self.advance()
            right = self._additive()
            left = A.Binary(op.text, left, right, pos=op)
        return left

    def _additive(self):
        left = self._primary_expr()
        while self.at_punct("+"):
            op = self.advance()
            right = self._primary_expr()
            left = A.Binary("+", left, right, pos=op)
        return left

    def _primary_expr(self):
        t = self.peek()
        if t.kind == INT:
            self.advance()
            return A.Literal(int(t.text), pos=t)
        if t.kind == DOUBLE:
            self.advance()
            return A.Literal(float(t.text), pos=t)
        if t.kind == STRING:
            self.advance()
            return A.Literal(t.text, pos=t)
        if self.at_punct("("):
            self.advance()
            e = self._expr()
            self.expect(PUNCT, ")")
            return e
        if t.kind == IDENT and t.text == "is_defined" and self.peek(1).text == "(":
            self.advance()
            self.expect(PUNCT, "(")
            path = self._path()
            self.expect(PUNCT, ")")
            return A.IsDefined(path, pos=t)
        if t.kind == IDENT:
            self.advance()
            return A.PathRead(self._continue_path(t), pos=t)
        self.fail("expected an expression")


def parse_program(tokens, include_loader=None):
    """Parse a full program; ``include`` directives splice in tokens
    obtained from include_loader(path)."""
    return _Parser(tokens, include_loader).parse_program()


def parse_type_definition(tokens):
    """Parse a standalone type expression (the part after ``type id :``)."""
    p = _Parser(tokens)
    t = p._type_expr()
    p.expect(EOF)
    return t


# --- tree optimizer ---------------------------------------------------------

def _optimize_process(p):
    match p:
        case A.Sequence(items=items):
            out = []
            for item in items:
                o = _optimize_process(item)
                if isinstance(o, A.Nil):
                    continue
                if isinstance(o, A.Sequence):
                    out.extend(o.items)
                else:
                    out.append(o)
            if not out:
                return A.Nil(pos=p.pos)
            return A.Sequence(out, pos=p.pos)
        case A.Parallel(left=l, right=r):
            return A.Parallel(_optimize_process(l), _optimize_process(r), pos=p.pos)
        case A.If(cond=c, then=t, orelse=o):
            return A.If(c, _optimize_process(t),
                        None if o is None else _optimize_process(o), pos=p.pos)
        case A.Match(subject_path=sp, arms=arms):
            return A.Match(sp, [A.MatchArm(a.type_name, _optimize_process(a.body),
                                           pos=a.pos)
                                for a in arms], pos=p.pos)
        case A.RequestResponseRecv(operation=op, in_path=ip, out_path=outp, body=b):
            return A.RequestResponseRecv(op, ip, outp, _optimize_process(b), pos=p.pos)
        case A.InputChoice(branches=branches):
            return A.InputChoice(
                [A.InputChoiceBranch(_optimize_process(br.guard),
                                     _optimize_process(br.body))
                 for br in branches], pos=p.pos)
        case _:
            return p


def optimize_ast(program):
    """Drop Nil elements from sequences and splice nested sequences.

    Semantics-preserving and idempotent.
    """
    out = A.AstProgram(
        includes=list(program.includes),
        type_decls=program.type_decls,
        interfaces=program.interfaces,
        input_ports=program.input_ports,
        output_ports=program.output_ports,
        execution_mode=program.execution_mode,
        init_block=(None if program.init_block is None
                    else _optimize_process(program.init_block)),
        defines={n: _optimize_process(b) for n, b in program.defines.items()},
        main_block=(None if program.main_block is None
                    else _optimize_process(program.main_block)),
    )
    return out
