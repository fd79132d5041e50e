import pytest
from hypothesis import given, settings, strategies as st

from olio import ast_nodes as A
from olio.lexer import tokenize
from olio.parser import parse_program
from olio.typesys import (
    Basic, Choice, OpenTree, Ref, Tree,
    Long, ValueTree, leaf,
    check_cardinality, conforms, resolve, resolve_type_ref, select_arm,
    CyclicTypeError, UnresolvedLink,
)

from strategies import (
    cardinalities, resolved_types, value_type_pairs, values,
)


def table_from(src):
    prog = parse_program(tokenize(src))
    return resolve(prog.type_table())


def V(root=None, **kids):
    return ValueTree(root, {k: v if isinstance(v, list) else [v]
                            for k, v in kids.items()})


# --- resolve ---

def test_resolve_single_native():
    assert resolve({"t": A.NativeType("int")}) == {"t": Basic("int")}


def test_resolve_link_through_table():
    t = table_from("""
        type linked_type: string
        type linked_choice: linked_type | void
    """)
    lc = t["linked_choice"]
    assert isinstance(lc, Choice)
    assert isinstance(lc.left, Ref) and lc.left.name == "linked_type"
    assert lc.left.deref() == Basic("string")
    assert lc.right == Basic("void")
    assert conforms(leaf("abc"), lc)
    assert conforms(leaf(), lc)
    assert not conforms(leaf(7), lc)


def test_resolve_missing_link_rejected():
    with pytest.raises(UnresolvedLink):
        resolve({"t": A.LinkType("ghost")})


def test_pure_link_cycle_resolves_but_never_checks():
    t = table_from("type a: b\ntype b: a")
    assert isinstance(t["a"], Ref)
    with pytest.raises(CyclicTypeError):
        conforms(leaf(1), t["a"])


def test_cycle_with_structural_escape_is_checkable():
    t = table_from("type a: a | int")
    assert conforms(leaf(5), t["a"])
    assert not conforms(leaf("s"), t["a"])


def test_recursive_tree_type_terminates_on_finite_values():
    t = table_from("type lst: void { .head: int .tail?: lst }")
    chain = V(head=leaf(1), tail=V(head=leaf(2)))
    assert conforms(chain, t["lst"])
    assert not conforms(V(head=leaf("x")), t["lst"])


def test_resolve_type_ref_names():
    t = table_from("type custom: int")
    assert resolve_type_ref("custom", t) == Basic("int")
    assert resolve_type_ref("string", t) == Basic("string")
    assert resolve_type_ref("undefined", t) == OpenTree("any")
    with pytest.raises(UnresolvedLink):
        resolve_type_ref("ghost", t)


# --- conformance on the rental corpus types ---

RENTAL_TYPES = """
type customer: void {
    .name: string
    .age: int
    .license: string
}
type car_return: void {
    .car_state: string
    .c?: customer
    .car_id: string
}
type request: customer | car_return
"""


def john_smith():
    return V(name=leaf("John Smith"), age=leaf(32), license=leaf("l23454675"))


def damaged_car():
    return V(car_state=leaf("damaged"), car_id=leaf("43535"))


def test_customer_value_conforms():
    t = table_from(RENTAL_TYPES)
    assert conforms(john_smith(), t["customer"])


def test_choice_accepts_either_shape_with_independent_arm_oracle():
    t = table_from(RENTAL_TYPES)
    v = damaged_car()
    in_customer = conforms(v, t["customer"])
    in_car_return = conforms(v, t["car_return"])
    assert (in_customer, in_car_return) == (False, True)
    assert conforms(v, t["request"]) == (in_customer or in_car_return)
    assert conforms(v, t["request"])


def test_optional_subtype_allows_zero_or_one():
    t = table_from(RENTAL_TYPES)
    with_c = damaged_car()
    with_c.children["c"] = [john_smith()]
    assert conforms(with_c, t["car_return"])
    with_c.children["c"].append(john_smith())
    assert not conforms(with_c, t["car_return"])


def test_closed_world_rejects_undeclared_children():
    t = table_from(RENTAL_TYPES)
    v = john_smith()
    v.children["extra"] = [leaf(1)]
    assert not conforms(v, t["customer"])
    assert not conforms(v, t["request"])


def test_missing_required_child_rejects():
    t = table_from(RENTAL_TYPES)
    v = john_smith()
    del v.children["age"]
    assert not conforms(v, t["customer"])


# --- basic roots ---

def test_void_identity():
    assert conforms(leaf(), Basic("void"))
    assert not conforms(leaf(0), Basic("void"))
    assert not conforms(V(x=leaf(1)), Basic("void"))


def test_numeric_roots_do_not_coerce():
    assert conforms(leaf(5), Basic("int"))
    assert not conforms(leaf(5), Basic("double"))
    assert not conforms(leaf(5), Basic("long"))
    assert conforms(leaf(5.0), Basic("double"))
    assert not conforms(leaf(5.0), Basic("int"))
    assert conforms(leaf(Long(5)), Basic("long"))
    assert not conforms(leaf(Long(5)), Basic("int"))


def test_bool_root_is_not_an_int_and_not_declarable():
    assert not conforms(leaf(True), Basic("int"))
    assert conforms(leaf(True), Basic("any"))


def test_raw_root():
    assert conforms(leaf(b"\x00\xff"), Basic("raw"))
    assert not conforms(leaf("text"), Basic("raw"))


def test_any_requires_a_value():
    assert conforms(leaf("x"), Basic("any"))
    assert conforms(leaf(0), Basic("any"))
    assert not conforms(leaf(), Basic("any"))


def test_basic_is_closed_but_open_tree_is_not():
    v = V("payload", extra=leaf(1))
    assert not conforms(v, Basic("string"))
    assert conforms(v, OpenTree("string"))
    assert conforms(v, OpenTree("any"))


def test_untyped_subnodes_constrains_only_the_root():
    t = table_from("type blob: string { ? }")
    assert conforms(V("x", anything=leaf(1), more=V(2, deep=leaf(3))), t["blob"])
    assert not conforms(V(5, anything=leaf(1)), t["blob"])


# --- cardinalities ---

def test_cardinality_optional():
    assert check_cardinality(1, A.Cardinality(0, 1))
    assert not check_cardinality(2, A.Cardinality(0, 1))


def test_cardinality_star_lower_bound():
    assert check_cardinality(0, A.Cardinality(0, None))


def test_cardinality_range_enumerated_against_inequality():
    card = A.Cardinality(2, 5)
    got = [check_cardinality(k, card) for k in range(8)]
    oracle = [2 <= k <= 5 for k in range(8)]
    assert got == oracle
    assert got == [False, False, True, True, True, True, False, False]


@given(st.integers(min_value=0, max_value=50), cardinalities)
def test_cardinality_matches_direct_inequality(count, card):
    expected = card.min <= count and (card.max is None or count <= card.max)
    assert check_cardinality(count, card) == expected


# --- select_arm ---

def test_select_arm_picks_shape():
    t = table_from(RENTAL_TYPES)
    arms = [t["customer"], t["car_return"]]
    assert select_arm(john_smith(), arms) == 0
    assert select_arm(damaged_car(), arms) == 1
    assert select_arm(leaf("neither"), arms) is None


def test_select_arm_universal():
    assert select_arm(leaf(99), [OpenTree("any")]) == 0


def test_select_arm_is_left_biased_on_overlap():
    arms = [Basic("string"), Basic("string")]
    assert select_arm(leaf("s"), arms) == 0


# --- properties ---

@settings(max_examples=300, deadline=None)
@given(value_type_pairs(), resolved_types)
def test_choice_or_decomposition(pair, other):
    v, a = pair
    combined = conforms(v, Choice(a, other))
    assert combined == (conforms(v, a) or conforms(v, other))


@settings(max_examples=200, deadline=None)
@given(value_type_pairs(), resolved_types)
def test_choice_symmetry_of_outcome(pair, other):
    v, a = pair
    assert conforms(v, Choice(a, other)) == conforms(v, Choice(other, a))


@settings(max_examples=200, deadline=None)
@given(value_type_pairs(), resolved_types)
def test_subset_rule(pair, b):
    v, a = pair
    if conforms(v, a):
        assert conforms(v, Choice(a, b))
        assert conforms(v, Choice(b, a))


@settings(max_examples=200, deadline=None)
@given(value_type_pairs())
def test_select_arm_singleton_agrees_with_conforms(pair):
    v, t = pair
    expected = 0 if conforms(v, t) else None
    assert select_arm(v, [t]) == expected
    assert select_arm(v, [t]) == expected  # deterministic


@settings(max_examples=200, deadline=None)
@given(values, st.lists(resolved_types, min_size=1, max_size=4))
def test_select_arm_returns_first_matching_index(v, arms):
    per_arm = [conforms(v, t) for t in arms]
    expected = per_arm.index(True) if True in per_arm else None
    assert select_arm(v, arms) == expected


@settings(max_examples=200, deadline=None)
@given(values)
def test_undefined_accepts_every_valued_tree(v):
    assert conforms(v, OpenTree("any")) == (v.root is not None)


# --- value equality semantics ---

def test_value_equality_is_root_kind_aware():
    assert leaf(1) != leaf(True)
    assert leaf(1) != leaf(Long(1))
    assert leaf(1) != leaf(1.0)
    assert leaf("1") != leaf(1)
    assert leaf(Long(2)) == leaf(Long(2))


def test_value_equality_ignores_empty_child_lists():
    a = ValueTree(1, {"x": []})
    assert a == leaf(1)


def test_value_copy_is_deep():
    v = V("r", kid=V(1, deep=leaf(2)))
    c = v.copy()
    assert c == v
    c.children["kid"][0].children["deep"][0].root = 99
    assert v.children["kid"][0].children["deep"][0].root == 2
