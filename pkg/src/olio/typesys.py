"""Runtime value trees and the structural type checker.

Types are resolved once per program into a shared immutable table;
``conforms`` and ``select_arm`` are pure functions over that table, so
concurrent sessions can share it freely.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .ast_nodes import (
    Cardinality, ChoiceType, InlineType, LinkType, NativeType,
    UndefinedType, UntypedSubnodes,
)
from .lexer import NATIVE_TYPE_NAMES


class UnresolvedLink(Exception):
    pass


class CyclicTypeError(Exception):
    """A conformance check ran into a link cycle that never reaches a
    structural variant (e.g. ``type a: b`` / ``type b: a``)."""


class _CycleHit(Exception):
    # internal: a ref was re-entered for the same value; a surrounding
    # choice may still settle the answer through its other arm
    pass


class Long(int):
    """Wire-distinct 64-bit integer root; compares equal to int by value
    but is a different root kind for typing and encoding."""
    __slots__ = ()

    def __repr__(self):
        return f"Long({int(self)})"


class ValueTree:
    """A message value: a basic root plus named, ordered lists of children.

    root is one of None (empty), int, Long, float, str, bool, bytes.
    An absent child name and an empty child list are the same state.
    """

    __slots__ = ("root", "children")

    def __init__(self, root=None, children=None):
        self.root = root
        self.children = children if children is not None else {}

    def __eq__(self, other):
        if not isinstance(other, ValueTree):
            return NotImplemented
        if not _same_root(self.root, other.root):
            return False
        mine = {k: v for k, v in self.children.items() if v}
        theirs = {k: v for k, v in other.children.items() if v}
        return mine == theirs

    __hash__ = None

    def __repr__(self):
        if self.children:
            return f"ValueTree({self.root!r}, {self.children!r})"
        return f"ValueTree({self.root!r})"

    def copy(self):
        return ValueTree(self.root, {
            name: [kid.copy() for kid in kids]
            for name, kids in self.children.items() if kids
        })


def _same_root(a, b):
    # bool vs int vs Long are distinct kinds even when == agrees
    return type(a) is type(b) and a == b


def leaf(root=None):
    return ValueTree(root)


# --- resolved types ----------------------------------------------------------

@dataclass
class Basic:
    native: str


@dataclass
class Tree:
    native: str
    subtypes: dict  # name -> (Cardinality, ResolvedType)


@dataclass
class OpenTree:
    """Root constrained, children not inspected (``T { ? }`` and
    ``undefined``, which resolves to OpenTree("any"))."""
    native: str


@dataclass
class Choice:
    left: object
    right: object


@dataclass
class Ref:
    """Named indirection back into the resolved table; keeps recursive
    types finite."""
    name: str
    table: dict = field(repr=False, compare=False)

    def deref(self):
        try:
            return self.table[self.name]
        except KeyError:
            raise UnresolvedLink(self.name) from None


def resolve(type_table):
    """Turn a name → TypeAst table into a name → ResolvedType table.

    Links become Ref nodes into the output table itself, so recursive
    definitions resolve without infinite expansion.
    """
    resolved = {}

    def go(t):
        match t:
            case NativeType(name=n):
                return Basic(n)
            case UntypedSubnodes(native=n):
                return OpenTree(n)
            case UndefinedType():
                return OpenTree("any")
            case LinkType(name=n):
                if n not in type_table:
                    raise UnresolvedLink(n)
                return Ref(n, resolved)
            case InlineType(native=n, subtypes=subs):
                return Tree(n, {s.name: (s.cardinality, go(s.definition))
                                for s in subs})
            case ChoiceType(left=l, right=r):
                return Choice(go(l), go(r))
        raise TypeError(f"unknown type node {t!r}")

    for name, definition in type_table.items():
        resolved[name] = go(definition)
    return resolved


def resolve_type_ref(name, resolved_table):
    """Map an operation's request/response type name to a ResolvedType."""
    if name in resolved_table:
        return resolved_table[name]
    if name == "undefined":
        return OpenTree("any")
    if name in NATIVE_TYPE_NAMES:
        return Basic(name)
    raise UnresolvedLink(name)


# --- conformance -------------------------------------------------------------

def _root_matches(root, native):
    match native:
        case "void":
            return root is None
        case "any":
            return root is not None
        case "int":
            return type(root) is int
        case "long":
            return type(root) is Long
        case "double":
            return type(root) is float
        case "string":
            return type(root) is str
        case "raw":
            return type(root) is bytes
    raise ValueError(f"unknown native type {native!r}")


def check_cardinality(count, card: Cardinality):
    return card.min <= count and (card.max is None or count <= card.max)


def _conforms(value, rtype, seen):
    match rtype:
        case Basic(native=n):
            return _root_matches(value.root, n) and \
                not any(value.children.values())
        case OpenTree(native=n):
            return _root_matches(value.root, n)
        case Tree(native=n, subtypes=subs):
            if not _root_matches(value.root, n):
                return False
            for name, (card, sub) in subs.items():
                kids = value.children.get(name, [])
                if not check_cardinality(len(kids), card):
                    return False
                for kid in kids:
                    # a new value level: previous ref assumptions no
                    # longer apply
                    if not _conforms(kid, sub, frozenset()):
                        return False
            for name, kids in value.children.items():
                if kids and name not in subs:
                    return False
            return True
        case Choice(left=l, right=r):
            left_answer = right_answer = None
            try:
                left_answer = _conforms(value, l, seen)
            except _CycleHit:
                pass
            if left_answer is True:
                return True
            try:
                right_answer = _conforms(value, r, seen)
            except _CycleHit:
                pass
            if right_answer is True:
                return True
            if left_answer is None and right_answer is None:
                raise _CycleHit
            return False
        case Ref(name=n):
            pair = (id(value), n)
            if pair in seen:
                raise _CycleHit
            return _conforms(value, rtype.deref(), seen | {pair})
    raise TypeError(f"unknown resolved type {rtype!r}")


def conforms(value, rtype):
    """Structural runtime check of a ValueTree against a ResolvedType."""
    try:
        return _conforms(value, rtype, frozenset())
    except _CycleHit:
        raise CyclicTypeError(
            "type links form a cycle with no structural variant") from None


def select_arm(value, arms):
    """Index of the first arm the value conforms to, or None."""
    for i, arm in enumerate(arms):
        if conforms(value, arm):
            return i
    return None
