"""Well-formedness verification of parsed programs.

Diagnostics are collected exhaustively (never fail-fast) so one run
reports everything wrong with a source file.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import ast_nodes as A
from .lexer import NATIVE_TYPE_NAMES


@dataclass
class Diagnostic:
    severity: str  # "error" | "warning"
    message: str
    file: str | None = None
    line: int = 0
    column: int = 0

    def __str__(self):
        where = self.file or "<source>"
        return f"{self.severity}: {where}:{self.line}:{self.column}: {self.message}"


def verify_program(program: A.AstProgram) -> list[Diagnostic]:
    """Check a parsed program; an empty result means it is safe to resolve
    types and build the interpretation tree."""
    diags = []

    def err(pos, message):
        if pos is None:
            diags.append(Diagnostic("error", message))
        else:
            diags.append(Diagnostic("error", message, pos.file, pos.line,
                                    pos.column))

    # type declarations: unique names
    type_names = set()
    for decl in program.type_decls:
        if decl.name in type_names:
            err(decl.pos, f"type '{decl.name}' is already defined")
        type_names.add(decl.name)

    def type_ref_ok(name):
        return (name in type_names or name in NATIVE_TYPE_NAMES
                or name == "undefined")

    # type bodies: link targets, cardinality sanity, duplicate subtype
    # names; both arms of a choice get the full treatment
    def walk_type(t):
        match t:
            case A.LinkType(name=n):
                if n not in type_names:
                    err(t.pos, f"unknown type '{n}'")
            case A.InlineType(subtypes=subs):
                seen = set()
                for s in subs:
                    if s.name in seen:
                        err(s.pos, f"duplicate subtype name '{s.name}'")
                    seen.add(s.name)
                    card = s.cardinality
                    if card.max is not None and card.min > card.max:
                        err(s.pos, f"cardinality [{card.min},{card.max}] "
                                   f"has min > max")
                    walk_type(s.definition)
            case A.ChoiceType(left=left, right=right):
                walk_type(left)
                walk_type(right)
            case _:
                pass

    for decl in program.type_decls:
        walk_type(decl.definition)

    # interfaces: unique names, unique op names, resolvable op types
    interfaces = {}
    for iface in program.interfaces:
        if iface.name in interfaces:
            err(iface.pos, f"interface '{iface.name}' is already defined")
        interfaces[iface.name] = iface
        op_names = set()
        for op in iface.request_response_ops:
            if op.name in op_names:
                err(op.pos, f"duplicate operation '{op.name}' "
                            f"in interface '{iface.name}'")
            op_names.add(op.name)
            for ref in (op.request_type, op.response_type):
                if not type_ref_ok(ref):
                    err(op.pos, f"operation '{op.name}' uses unknown "
                                f"type '{ref}'")
        for op in iface.one_way_ops:
            if op.name in op_names:
                err(op.pos, f"duplicate operation '{op.name}' "
                            f"in interface '{iface.name}'")
            op_names.add(op.name)
            if not type_ref_ok(op.request_type):
                err(op.pos, f"operation '{op.name}' uses unknown "
                            f"type '{op.request_type}'")

    # ports: unique names and known interfaces
    port_names = set()
    for port in program.input_ports + program.output_ports:
        if port.name in port_names:
            err(port.pos, f"port '{port.name}' is already defined")
        port_names.add(port.name)
        for iname in port.interfaces:
            if iname not in interfaces:
                err(port.pos, f"port '{port.name}' references unknown "
                              f"interface '{iname}'")

    # operation visibility maps for behavior checks
    input_one_way = set()
    input_request_response = set()
    for port in program.input_ports:
        for iname in port.interfaces:
            iface = interfaces.get(iname)
            if iface is None:
                continue
            input_request_response.update(
                op.name for op in iface.request_response_ops)
            input_one_way.update(op.name for op in iface.one_way_ops)

    output_ops = {}  # port name -> (one_way set, request_response set)
    for port in program.output_ports:
        ow, rr = set(), set()
        for iname in port.interfaces:
            iface = interfaces.get(iname)
            if iface is None:
                continue
            ow.update(op.name for op in iface.one_way_ops)
            rr.update(op.name for op in iface.request_response_ops)
        output_ops[port.name] = (ow, rr)

    def check_receive(p, want_rr):
        name = p.operation
        rr_ok = name in input_request_response
        ow_ok = name in input_one_way
        if want_rr:
            if rr_ok:
                return
            if ow_ok:
                err(p.pos, f"operation '{name}' is one-way but is used "
                           f"as request-response")
            else:
                err(p.pos, f"operation '{name}' is not provided by any "
                           f"input port")
        else:
            if ow_ok:
                return
            if rr_ok:
                err(p.pos, f"operation '{name}' is request-response but "
                           f"is used as one-way")
            else:
                err(p.pos, f"operation '{name}' is not provided by any "
                           f"input port")

    def check_send(p, want_rr):
        entry = output_ops.get(p.port)
        if entry is None:
            err(p.pos, f"'{p.port}' is not a declared output port")
            return
        ow, rr = entry
        name = p.operation
        if want_rr:
            if name in rr:
                return
            if name in ow:
                err(p.pos, f"operation '{name}' on port '{p.port}' is "
                           f"one-way; a solicit-response expects a reply")
            else:
                err(p.pos, f"operation '{name}' is not provided by "
                           f"port '{p.port}'")
        else:
            if name in ow:
                return
            if name in rr:
                err(p.pos, f"operation '{name}' on port '{p.port}' is "
                           f"request-response; a notification sends no "
                           f"reply channel")
            else:
                err(p.pos, f"operation '{name}' is not provided by "
                           f"port '{p.port}'")

    def walk_process(p):
        match p:
            case A.Nil() | A.Assign() | None:
                pass
            case A.Sequence(items=items):
                for item in items:
                    walk_process(item)
            case A.Parallel(left=left, right=right):
                walk_process(left)
                walk_process(right)
            case A.OneWayRecv():
                check_receive(p, want_rr=False)
            case A.RequestResponseRecv(body=body):
                check_receive(p, want_rr=True)
                walk_process(body)
            case A.InputChoice(branches=branches):
                for br in branches:
                    walk_process(br.guard)
                    walk_process(br.body)
            case A.Notification():
                check_send(p, want_rr=False)
            case A.SolicitResponse():
                check_send(p, want_rr=True)
            case A.If(then=then, orelse=orelse):
                walk_process(then)
                walk_process(orelse)
            case A.Match(arms=arms):
                for arm in arms:
                    if not type_ref_ok(arm.type_name):
                        err(arm.pos, f"match arm names unknown type "
                                     f"'{arm.type_name}'")
                    walk_process(arm.body)
            case A.CallDefine(name=name):
                if name not in program.defines:
                    err(p.pos, f"call to undefined procedure '{name}'")
            case _:
                raise TypeError(f"unknown process node {p!r}")

    walk_process(program.init_block)
    for body in program.defines.values():
        walk_process(body)
    walk_process(program.main_block)

    return diags
