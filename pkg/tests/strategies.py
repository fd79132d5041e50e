"""Shared hypothesis generators for value trees, resolved types and
wire messages."""

from hypothesis import strategies as st

from olio.ast_nodes import Cardinality
from olio.comm import Message
from olio.typesys import Basic, Choice, Long, OpenTree, Tree, ValueTree, leaf

NATIVES = ["void", "any", "int", "long", "double", "string", "raw"]

child_names = st.from_regex(r"[a-z][a-z0-9_]{0,5}", fullmatch=True)

roots = st.one_of(
    st.none(),
    st.booleans(),
    st.integers(min_value=-10**9, max_value=10**9),
    st.integers(min_value=-10**9, max_value=10**9).map(Long),
    st.floats(allow_nan=False, allow_infinity=False, width=64),
    st.text(max_size=6),
    st.binary(max_size=4),
)

values = st.recursive(
    roots.map(leaf),
    lambda kids: st.builds(
        ValueTree, roots,
        st.dictionaries(child_names, st.lists(kids, min_size=1, max_size=3),
                        max_size=3)),
    max_leaves=10)

cardinalities = st.one_of(
    st.sampled_from([Cardinality(1, 1), Cardinality(0, 1), Cardinality(0, None)]),
    st.tuples(st.integers(0, 3), st.one_of(st.none(), st.integers(0, 3))).map(
        lambda t: Cardinality(t[0], None if t[1] is None else t[0] + t[1])),
)

natives_st = st.sampled_from(NATIVES)

# ref-free resolved types, depth-bounded
resolved_types = st.recursive(
    st.one_of(natives_st.map(Basic), natives_st.map(OpenTree)),
    lambda kid: st.one_of(
        st.builds(Choice, kid, kid),
        st.builds(Tree, natives_st,
                  st.dictionaries(child_names, st.tuples(cardinalities, kid),
                                  max_size=3)),
    ),
    max_leaves=8)


def _root_for(native):
    match native:
        case "void":
            return st.none()
        case "any":
            return roots.filter(lambda r: r is not None)
        case "int":
            return st.integers(min_value=-10**6, max_value=10**6)
        case "long":
            return st.integers(min_value=-10**6, max_value=10**6).map(Long)
        case "double":
            return st.floats(allow_nan=False, allow_infinity=False, width=64)
        case "string":
            return st.text(max_size=6)
        case "raw":
            return st.binary(max_size=4)
    raise ValueError(native)


@st.composite
def value_conforming_to(draw, rtype):
    """A value built to satisfy rtype (useful to bias property inputs
    toward the conforming side)."""
    match rtype:
        case Basic(native=n):
            return leaf(draw(_root_for(n)))
        case OpenTree(native=n):
            return leaf(draw(_root_for(n)))
        case Choice(left=l, right=r):
            return draw(value_conforming_to(draw(st.sampled_from([l, r]))))
        case Tree(native=n, subtypes=subs):
            kids = {}
            for name, (card, sub) in subs.items():
                hi = card.min + 2 if card.max is None else min(card.max, card.min + 2)
                count = draw(st.integers(card.min, hi))
                if count:
                    kids[name] = [draw(value_conforming_to(sub))
                                  for _ in range(count)]
            return ValueTree(draw(_root_for(n)), kids)
    raise ValueError(rtype)


messages = st.builds(
    Message,
    st.text(min_size=1, max_size=10),          # operation
    values,                                    # payload
    st.one_of(st.none(), st.text(max_size=8)),  # fault
    st.text(max_size=8),                       # resource path
)


@st.composite
def value_type_pairs(draw):
    """(value, type) with the value biased toward sometimes conforming."""
    rtype = draw(resolved_types)
    if draw(st.booleans()):
        value = draw(value_conforming_to(rtype))
        if draw(st.integers(0, 3)) == 0:
            # perturb: swap the root for an arbitrary one
            value = ValueTree(draw(roots), value.children)
    else:
        value = draw(values)
    return value, rtype
