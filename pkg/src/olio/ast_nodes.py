"""AST for deployment and behavior parts, plus the canonical source printer."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from .lexer import Token


# --- type expressions -------------------------------------------------------

@dataclass(frozen=True)
class Cardinality:
    min: int
    max: Optional[int]  # None = unbounded

    def __str__(self):
        if self.min == 1 and self.max == 1:
            return ""
        if self.min == 0 and self.max == 1:
            return "?"
        if self.min == 0 and self.max is None:
            return "*"
        if self.max is None:
            return f"[{self.min},*]"
        return f"[{self.min},{self.max}]"


ONCE = Cardinality(1, 1)
OPTIONAL = Cardinality(0, 1)
ANY_COUNT = Cardinality(0, None)


@dataclass
class TypeAst:
    pos: Optional[Token] = field(default=None, compare=False, kw_only=True)


@dataclass
class NativeType(TypeAst):
    name: str = ""


@dataclass
class InlineType(TypeAst):
    native: str = ""
    subtypes: list[SubTypeAst] = field(default_factory=list)


@dataclass
class UntypedSubnodes(TypeAst):
    """NativeType { ? }"""
    native: str = ""


@dataclass
class LinkType(TypeAst):
    name: str = ""


@dataclass
class UndefinedType(TypeAst):
    pass


@dataclass
class ChoiceType(TypeAst):
    left: TypeAst = None
    right: TypeAst = None


@dataclass
class SubTypeAst:
    name: str
    cardinality: Cardinality
    definition: TypeAst
    pos: Optional[Token] = field(default=None, compare=False, kw_only=True)


# --- deployment -------------------------------------------------------------

@dataclass
class TypeDecl:
    name: str
    definition: TypeAst
    pos: Optional[Token] = field(default=None, compare=False, kw_only=True)


@dataclass
class RequestResponseOp:
    name: str
    request_type: str
    response_type: str
    pos: Optional[Token] = field(default=None, compare=False, kw_only=True)


@dataclass
class OneWayOp:
    name: str
    request_type: str
    pos: Optional[Token] = field(default=None, compare=False, kw_only=True)


@dataclass
class InterfaceDecl:
    name: str
    request_response_ops: list[RequestResponseOp] = field(default_factory=list)
    one_way_ops: list[OneWayOp] = field(default_factory=list)
    pos: Optional[Token] = field(default=None, compare=False, kw_only=True)

    def operation_names(self):
        return [op.name for op in self.request_response_ops] + \
               [op.name for op in self.one_way_ops]


@dataclass
class PortConfig:
    name: str
    location: str
    protocol: str
    interfaces: list[str]
    direction: str  # "input" | "output"
    pos: Optional[Token] = field(default=None, compare=False, kw_only=True)


# --- expressions ------------------------------------------------------------

Path = list[str]


@dataclass
class ExprAst:
    pos: Optional[Token] = field(default=None, compare=False, kw_only=True)


@dataclass
class Literal(ExprAst):
    value: object = None  # int | float | str


@dataclass
class PathRead(ExprAst):
    path: Path = field(default_factory=list)


@dataclass
class Binary(ExprAst):
    op: str = ""  # "==", "!=", "+"
    left: ExprAst = None
    right: ExprAst = None


@dataclass
class IsDefined(ExprAst):
    path: Path = field(default_factory=list)


# --- behavior ---------------------------------------------------------------

@dataclass
class ProcessAst:
    pos: Optional[Token] = field(default=None, compare=False, kw_only=True)


@dataclass
class Nil(ProcessAst):
    pass


@dataclass
class Sequence(ProcessAst):
    items: list[ProcessAst] = field(default_factory=list)


@dataclass
class Parallel(ProcessAst):
    left: ProcessAst = None
    right: ProcessAst = None


@dataclass
class OneWayRecv(ProcessAst):
    operation: str = ""
    var_path: Path = field(default_factory=list)


@dataclass
class RequestResponseRecv(ProcessAst):
    operation: str = ""
    in_path: Path = field(default_factory=list)
    out_path: Path = field(default_factory=list)
    body: ProcessAst = None


InputStatementAst = Union[OneWayRecv, RequestResponseRecv]


@dataclass
class InputChoiceBranch:
    guard: InputStatementAst
    body: ProcessAst


@dataclass
class InputChoice(ProcessAst):
    branches: list[InputChoiceBranch] = field(default_factory=list)


@dataclass
class Notification(ProcessAst):
    operation: str = ""
    port: str = ""
    arg: Optional[ExprAst] = None  # None = empty payload


@dataclass
class SolicitResponse(ProcessAst):
    operation: str = ""
    port: str = ""
    arg: Optional[ExprAst] = None
    result_path: Optional[Path] = None  # None = reply discarded


@dataclass
class Assign(ProcessAst):
    path: Path = field(default_factory=list)
    expr: ExprAst = None


@dataclass
class If(ProcessAst):
    cond: ExprAst = None
    then: ProcessAst = None
    orelse: Optional[ProcessAst] = None


@dataclass
class MatchArm:
    type_name: str
    body: ProcessAst
    pos: Optional[Token] = field(default=None, compare=False, kw_only=True)


@dataclass
class Match(ProcessAst):
    subject_path: Path = field(default_factory=list)
    arms: list[MatchArm] = field(default_factory=list)


@dataclass
class CallDefine(ProcessAst):
    name: str = ""


# --- program ----------------------------------------------------------------

@dataclass
class AstProgram:
    includes: list[str] = field(default_factory=list)
    type_decls: list[TypeDecl] = field(default_factory=list)
    interfaces: list[InterfaceDecl] = field(default_factory=list)
    input_ports: list[PortConfig] = field(default_factory=list)
    output_ports: list[PortConfig] = field(default_factory=list)
    execution_mode: str = "single"
    init_block: Optional[ProcessAst] = None
    defines: dict[str, ProcessAst] = field(default_factory=dict)
    main_block: Optional[ProcessAst] = None

    def type_table(self):
        return {d.name: d.definition for d in self.type_decls}


# --- canonical source printer ----------------------------------------------

def _escape_string(s):
    out = []
    for c in s:
        if c == "\\":
            out.append("\\\\")
        elif c == '"':
            out.append('\\"')
        elif c == "\n":
            out.append("\\n")
        elif c == "\t":
            out.append("\\t")
        else:
            out.append(c)
    return '"' + "".join(out) + '"'


def type_to_source(t, indent=0):
    pad = "    " * indent
    match t:
        case NativeType(name=n):
            return n
        case LinkType(name=n):
            return n
        case UndefinedType():
            return "undefined"
        case UntypedSubnodes(native=n):
            return n + " { ? }"
        case InlineType(native=n, subtypes=subs):
            lines = [n + " {"]
            for s in subs:
                card = str(s.cardinality)
                lines.append(f"{pad}    .{s.name}{card}: "
                             f"{type_to_source(s.definition, indent + 1)}")
            lines.append(pad + "}")
            return "\n".join(lines)
        case ChoiceType(left=l, right=r):
            return f"{type_to_source(l, indent)} | {type_to_source(r, indent)}"
    raise TypeError(f"unknown type node {t!r}")


def _path_to_source(path):
    return ".".join(path)


def expr_to_source(e, parent_prec=0):
    # precedence: equality 1, additive 2, primary 3
    match e:
        case Literal(value=v):
            if isinstance(v, str):
                return _escape_string(v)
            return repr(v)
        case PathRead(path=p):
            return _path_to_source(p)
        case IsDefined(path=p):
            return f"is_defined( {_path_to_source(p)} )"
        case Binary(op=op, left=l, right=r):
            prec = 1 if op in ("==", "!=") else 2
            text = f"{expr_to_source(l, prec)} {op} {expr_to_source(r, prec + 1)}"
            if prec < parent_prec:
                return f"( {text} )"
            return text
    raise TypeError(f"unknown expr node {e!r}")


def _stmt_to_lines(p, indent):
    pad = "    " * indent
    match p:
        case Nil():
            return [pad + "nullProcess"]
        case Sequence() | Parallel():
            lines = [pad + "{"]
            lines.extend(_process_to_lines(p, indent + 1))
            lines.append(pad + "}")
            return lines
        case Assign(path=path, expr=e):
            return [f"{pad}{_path_to_source(path)} = {expr_to_source(e)}"]
        case CallDefine(name=n):
            return [pad + n]
        case If(cond=c, then=t, orelse=o):
            lines = [f"{pad}if ( {expr_to_source(c)} ) {{"]
            lines.extend(_process_to_lines(t, indent + 1))
            if o is not None:
                lines.append(pad + "} else {")
                lines.extend(_process_to_lines(o, indent + 1))
            lines.append(pad + "}")
            return lines
        case Match(subject_path=sp, arms=arms):
            lines = [f"{pad}match( {_path_to_source(sp)} ) {{"]
            for arm in arms:
                lines.append(f"{pad}    {arm.type_name} {{")
                lines.extend(_process_to_lines(arm.body, indent + 2))
                lines.append(pad + "    }")
            lines.append(pad + "}")
            return lines
        case OneWayRecv(operation=op, var_path=vp):
            return [f"{pad}{op}( {_path_to_source(vp)} )"]
        case RequestResponseRecv(operation=op, in_path=ip, out_path=outp, body=b):
            lines = [f"{pad}{op}( {_path_to_source(ip)} )( {_path_to_source(outp)} ) {{"]
            lines.extend(_process_to_lines(b, indent + 1))
            lines.append(pad + "}")
            return lines
        case Notification(operation=op, port=port, arg=a):
            arg_txt = "" if a is None else f" {expr_to_source(a)} "
            return [f"{pad}{op}@{port}({arg_txt})"]
        case SolicitResponse(operation=op, port=port, arg=a, result_path=rp):
            arg_txt = "" if a is None else f" {expr_to_source(a)} "
            res_txt = "" if rp is None else f" {_path_to_source(rp)} "
            return [f"{pad}{op}@{port}({arg_txt})({res_txt})"]
        case InputChoice(branches=branches):
            lines = []
            for br in branches:
                lines.append(pad + "[")
                lines.extend(_stmt_to_lines(br.guard, indent + 1))
                lines.append(pad + "]")
                if not isinstance(br.body, Nil):
                    lines.append(pad + "{")
                    lines.extend(_process_to_lines(br.body, indent + 1))
                    lines.append(pad + "}")
            return lines
    raise TypeError(f"unknown process node {p!r}")


def _process_to_lines(p, indent):
    match p:
        case Sequence(items=items):
            lines = []
            for k, item in enumerate(items):
                item_lines = _stmt_to_lines(item, indent)
                if k < len(items) - 1:
                    item_lines[-1] += ";"
                lines.extend(item_lines)
            return lines
        case Parallel(left=l, right=r):
            # sequences on either side need explicit grouping
            def side(node):
                if isinstance(node, (Sequence,)):
                    pad = "    " * indent
                    return [pad + "{"] + _process_to_lines(node, indent + 1) + [pad + "}"]
                if isinstance(node, Parallel):
                    return _process_to_lines(node, indent)
                return _stmt_to_lines(node, indent)
            return side(l) + ["    " * indent + "|"] + side(r)
        case _:
            return _stmt_to_lines(p, indent)


def to_source(program):
    """Render a program back to canonical source text.

    Spliced include contents are printed in place; the includes list itself
    is not re-emitted (re-parsing the output must not re-splice files).
    """
    chunks = []
    for d in program.type_decls:
        chunks.append(f"type {d.name}: {type_to_source(d.definition)}")
    for iface in program.interfaces:
        lines = [f"interface {iface.name} {{"]
        if iface.request_response_ops:
            lines.append("    RequestResponse:")
            lines.append(",\n".join(
                f"        {op.name}( {op.request_type} )( {op.response_type} )"
                for op in iface.request_response_ops))
        if iface.one_way_ops:
            lines.append("    OneWay:")
            lines.append(",\n".join(
                f"        {op.name}( {op.request_type} )"
                for op in iface.one_way_ops))
        lines.append("}")
        chunks.append("\n".join(lines))
    for port in program.input_ports + program.output_ports:
        kw = "inputPort" if port.direction == "input" else "outputPort"
        lines = [f"{kw} {port.name} {{",
                 f"    Location: {_escape_string(port.location)}",
                 f"    Protocol: {port.protocol}",
                 f"    Interfaces: {', '.join(port.interfaces)}",
                 "}"]
        chunks.append("\n".join(lines))
    if program.execution_mode != "single":
        chunks.append(f"execution{{ {program.execution_mode} }}")
    if program.init_block is not None:
        chunks.append("init {\n" + "\n".join(_process_to_lines(program.init_block, 1)) + "\n}")
    for name, body in program.defines.items():
        chunks.append(f"define {name} {{\n" + "\n".join(_process_to_lines(body, 1)) + "\n}")
    if program.main_block is not None:
        chunks.append("main {\n" + "\n".join(_process_to_lines(program.main_block, 1)) + "\n}")
    return "\n\n".join(chunks) + "\n"
