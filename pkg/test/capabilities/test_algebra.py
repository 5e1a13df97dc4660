from itertools import chain, combinations

import pytest

from caplet.capabilities.algebra import (DENY_KINDS, CapKind, base_edges, deny_exclusions, implication_closure,
                                         incompatible, lattice_dot, structural_children)
from caplet.lang import ast

ALL_SUBSETS = [frozenset(s) for s in chain.from_iterable(combinations(list(CapKind), n) for n in range(10))]


def reachable(kind):
    """Oracle: every kind reachable from ``kind`` along some path of implication edges."""
    edges = base_edges().implications
    found = {kind}
    for _ in range(len(CapKind)):
        found |= {e.target for e in edges if e.source in found}
    return found


# --- base_edges ---

def test_capkind_has_nine_members():
    """Conjunctions are sets of kinds, never extra members."""
    assert len(CapKind) == 9
    assert len(ALL_SUBSETS) == 512


def test_base_edges_fixed_table():
    """The built-in implications and incompatibilities."""
    table = base_edges()
    pairs = {(e.source, e.target) for e in table.implications}

    assert pairs == {
        (CapKind.WRITE_REF, CapKind.READ_REF),
        (CapKind.WRITE_REF, CapKind.UNIQUE),
        (CapKind.READ_REF, CapKind.IMMUTABLE),
        (CapKind.IMMUTABLE, CapKind.READ),
        (CapKind.UNIQUE, CapKind.WRITE),
    }
    assert frozenset({CapKind.UNIQUE, CapKind.READ}) in table.incompatibilities
    assert frozenset({CapKind.IMMUTABLE, CapKind.WRITE}) in table.incompatibilities
    assert frozenset({CapKind.UNIQUE, CapKind.WRITE}) in table.incompatibilities


def test_extended_edges_are_marked():
    """Only unique => write goes beyond the quoted implications."""
    extended = [e for e in base_edges().implications if e.extended]

    assert [(e.source, e.target) for e in extended] == [(CapKind.UNIQUE, CapKind.WRITE)]


def test_implications_are_acyclic():
    """No kind reaches itself through a non-empty path."""
    edges = base_edges().implications
    for kind in CapKind:
        successors = {e.target for e in edges if e.source is kind}
        assert all(kind not in reachable(s) for s in successors)


def test_no_pair_relates_a_kind_to_itself():
    assert all(len(pair) == 2 for pair in base_edges().incompatibilities)


# --- implication_closure ---

@pytest.mark.parametrize("kinds, expected", [
    (set(), set()),
    ({CapKind.IMMUTABLE}, {CapKind.IMMUTABLE, CapKind.READ}),
    ({CapKind.WRITE_REF}, {CapKind.WRITE_REF, CapKind.READ_REF, CapKind.IMMUTABLE, CapKind.READ,
                           CapKind.UNIQUE, CapKind.WRITE}),
    ({CapKind.LOCAL}, {CapKind.LOCAL}),
])
def test_implication_closure_examples(kinds, expected):
    assert implication_closure(kinds) == frozenset(expected)


def test_closure_matches_reachability_oracle():
    """Closure of every subset is the union of what each member reaches."""
    for subset in ALL_SUBSETS:
        expected = set().union(*(reachable(k) for k in subset)) if subset else set()
        assert implication_closure(subset) == expected


def test_closure_is_idempotent():
    for subset in ALL_SUBSETS:
        once = implication_closure(subset)
        assert implication_closure(once) == once


def test_closure_is_monotone():
    """Adding one kind never removes anything from the closure."""
    for subset in ALL_SUBSETS:
        closed = implication_closure(subset)
        for kind in CapKind:
            assert closed <= implication_closure(subset | {kind})


def test_no_kind_implies_a_deny_kind():
    for kind in CapKind:
        assert implication_closure({kind}) & DENY_KINDS <= {kind}


# --- incompatible ---

@pytest.mark.parametrize("k1, k2, expected", [
    (CapKind.IMMUTABLE, CapKind.WRITE, True),
    (CapKind.READ, CapKind.WRITE, False),
    (CapKind.WRITE_REF, CapKind.READ_REF, True),
])
def test_incompatible_examples(k1, k2, expected):
    assert incompatible(k1, k2) is expected


def test_incompatible_against_oracle():
    """All 81 ordered pairs agree with closure plus the base pairs."""
    pairs = base_edges().incompatibilities
    for k1 in CapKind:
        for k2 in CapKind:
            expected = any(frozenset({a, b}) in pairs for a in reachable(k1) for b in reachable(k2) if a is not b)
            assert incompatible(k1, k2) is expected


def test_incompatible_is_symmetric():
    for k1 in CapKind:
        for k2 in CapKind:
            assert incompatible(k1, k2) == incompatible(k2, k1)


@pytest.mark.parametrize("kind", [CapKind.READ, CapKind.WRITE, CapKind.LOCAL,
                                  CapKind.NO_READ_REF, CapKind.NO_WRITE_REF])
def test_incompatible_irreflexive_on_weak_kinds(kind):
    assert not incompatible(kind, kind)


def test_deny_exclusion_kept_apart_from_base_pairs():
    """noReadRef excludes readers of other roots without changing `incompatible`."""
    assert deny_exclusions() == [(CapKind.NO_READ_REF, CapKind.READ)]
    assert not incompatible(CapKind.NO_READ_REF, CapKind.READ)


# --- structural_children ---

def test_structural_mut_ref_write_ref():
    children = structural_children(CapKind.WRITE_REF, ast.MutRef(ast.INT))

    assert len(children) == 1
    assert isinstance(children[0][0], ast.Deref)
    assert children[0][1] is CapKind.WRITE_REF


def test_structural_shared_ref_read_ref():
    cell = ast.StructType("Cell", (ast.INT,))
    children = structural_children(CapKind.READ_REF, ast.SharedRef(cell))

    assert [(type(p), k) for p, k in children] == [(ast.Deref, CapKind.READ_REF)]


@pytest.mark.parametrize("kind", list(CapKind))
def test_structural_stops_at_raw_pointers_and_unsafe_cells(kind):
    assert structural_children(kind, ast.RawPtr(ast.INT, mutable=True)) == []
    assert structural_children(kind, ast.UnsafeCellOf(ast.INT)) == []


@pytest.mark.parametrize("kind", [CapKind.LOCAL, CapKind.NO_READ_REF, CapKind.NO_WRITE_REF,
                                  CapKind.UNIQUE, CapKind.IMMUTABLE])
def test_structural_other_kinds_do_not_cross_deref(kind):
    assert structural_children(kind, ast.MutRef(ast.INT)) == []


def test_structural_fields_inherit_kind_but_skip_unsafe_cells():
    """Fields of a struct inherit the kind; an UnsafeCell field is opaque."""
    ty = ast.StructType("Pair", ())
    fields = [("a", ast.INT), ("cell", ast.UnsafeCellOf(ast.INT))]

    children = structural_children(CapKind.LOCAL, ty, fields)

    assert [(p.name, k) for p, k in children] == [("a", CapKind.LOCAL)]
    assert structural_children(CapKind.NO_READ_REF, ty, fields) == []


def test_structural_tuple_elements():
    ty = ast.TupleType((ast.INT, ast.BOOL))

    children = structural_children(CapKind.READ, ty)

    assert [p.name for p, _ in children] == ["0", "1"]


# --- lattice_dot ---

def test_lattice_dot_lists_every_kind_and_marks_extended():
    dot = lattice_dot()

    assert dot.startswith("digraph capabilities {")
    for kind in CapKind:
        assert f'"{kind.value}";' in dot
    assert '"unique" -> "write" [style=bold, label="extended"];' in dot
    assert '"readRef" -> "immutable";' in dot
