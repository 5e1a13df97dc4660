import pytest

from caplet.capabilities.algebra import CapKind
from caplet.errors import FlowError
from caplet.flow import EdgeKind, analyze_function
from caplet.flow.roots import RootPlace, check_disjoint, unused_roots
from caplet.flow.liveness import Use
from caplet.lang import ast
from caplet.services.pipeline import prepare


CELL_CLIENT = """
fn cell_client(c: &Cell<i32>) {
    let before = c.get();
    c.set(before + 1);
    let after = c.get();
    assert!(before + 1 == after);
}
"""

REFCELL_CLIENT = """
fn use_refcell(x: &RefCell<i32>);

fn refcell_client(x: &RefCell<i32>, y: RefMut<i32>) {
    let Ok(a) = x.try_borrow() else { return; };
    let before: i32 = *a;
    use_refcell(x);
    let after: i32 = *(x.borrow());
    assert!(before == after);
}
"""


def _analyze(load_typed, source, key):
    program = load_typed(source)
    return analyze_function(program, program.instances[key])


def _call_edge(analysis, callee):
    for edge in analysis.graph.edges:
        stmt = edge.stmt
        if isinstance(stmt, ast.CallStmt) and stmt.call.target == callee:
            return edge
    raise AssertionError(f"no call to {callee}")


# --- graph construction ---

def test_straight_line_body_is_a_chain(load_typed):
    """Four statements give five points joined by four statement edges."""
    graph = _analyze(load_typed, CELL_CLIENT, "cell_client").graph

    assert len(graph.points) == 5
    assert [e.kind for e in graph.edges] == [EdgeKind.STATEMENT] * 4
    assert [(e.source, e.target) for e in graph.edges] == [(0, 1), (1, 2), (2, 3), (3, 4)]
    assert graph.final == 4
    assert graph.interference is False


def test_if_else_gives_a_diamond_with_one_join(load_typed):
    source = """
fn pick(b: bool) -> i32 {
    let x: i32 = 0;
    if b { let y: i32 = 1; } else { let z: i32 = 2; }
    return x;
}
"""
    graph = _analyze(load_typed, source, "pick").graph

    assume = [e for e in graph.edges if e.kind is EdgeKind.ASSUME]
    joins = [e for e in graph.edges if e.kind is EdgeKind.JOIN]
    assert len(assume) == 2
    assert {e.guard.negated for e in assume} == {True, False}
    assert len(joins) == 2
    assert len({e.target for e in joins}) == 1
    assert graph.final is None
    assert graph.points[-1].terminal


def test_empty_body_has_a_single_point(load_typed):
    graph = _analyze(load_typed, "fn nothing() { }", "nothing").graph

    assert len(graph.points) == 1
    assert graph.edges == []
    assert graph.final == 0


def test_edges_follow_point_order(corpus_dir):
    """Every edge goes from a smaller to a larger point id."""
    prepared = prepare(sorted((corpus_dir / "clients").glob("*.cap")), [corpus_dir / "lib"])

    for analysis in prepared.analyses.values():
        for edge in analysis.graph.edges:
            assert edge.source < edge.target


def test_thread_shared_variable_adds_interference_edges(load_typed):
    source = """
fn bump(a: &AtomicI32) {
    a.store(1);
    a.store(2);
}
"""
    graph = _analyze(load_typed, source, "bump").graph

    assert graph.interference is True
    kinds = [e.kind for e in graph.edges]
    assert kinds == [EdgeKind.INTERFERENCE, EdgeKind.STATEMENT] * 2


def test_let_else_continues_on_the_matching_arm(load_typed):
    graph = _analyze(load_typed, REFCELL_CLIENT, "refcell_client").graph

    returns = [e for e in graph.edges if e.kind is EdgeKind.RETURN]
    assert len(returns) == 1
    assert graph.point(returns[0].target).terminal
    assert not [e for e in graph.edges if e.kind is EdgeKind.JOIN]


def test_ancestors_include_the_point_itself(load_typed):
    graph = _analyze(load_typed, CELL_CLIENT, "cell_client").graph

    assert graph.ancestors(0) == {0}
    assert graph.ancestors(3) == {0, 1, 2, 3}


# --- liveness ---

def test_copy_variable_is_live_until_its_last_use(load_typed):
    analysis = _analyze(load_typed, CELL_CLIENT, "cell_client")

    assert "before" in analysis.liveness.live_at(1)
    assert "before" in analysis.liveness.live_at(3)
    assert "before" not in analysis.liveness.live_at(4)


def test_moved_variable_stops_being_live(load_typed):
    source = """
fn consume(b: Box<i32>);

fn give(b: Box<i32>) {
    consume(b);
}
"""
    analysis = _analyze(load_typed, source, "give")

    assert "b" in analysis.liveness.live_at(0)
    assert "b" in analysis.liveness.moved[1]
    assert "b" not in analysis.liveness.live_at(1)
    assert analysis.liveness.uses[0]["b"] is Use.MOVE


def test_shared_reference_holds_read_ref(load_typed):
    analysis = _analyze(load_typed, CELL_CLIENT, "cell_client")

    assert analysis.liveness.explicit_kind("c", 1) is CapKind.READ_REF
    assert analysis.liveness.explicit_kind("before", 1) is CapKind.WRITE_REF
    assert analysis.liveness.explicit_kind("after", 1) is None


# --- roots ---

def test_roots_at_the_set_statement(load_typed):
    analysis = _analyze(load_typed, CELL_CLIENT, "cell_client")

    roots = {r.place.base: r.kind for r in analysis.roots.roots_at(1)}
    assert roots == {"c": CapKind.READ_REF, "before": CapKind.WRITE_REF}


def test_reference_parameter_is_held_across_every_statement(load_typed):
    """``c`` is a shared reference parameter: its root survives every statement of the body."""
    analysis = _analyze(load_typed, CELL_CLIENT, "cell_client")

    for edge in analysis.graph.edges:
        root = analysis.roots.root_of("c", edge.source)
        assert analysis.roots.held_across(root, edge)
    assert "c" in analysis.liveness.live_at(analysis.graph.final)


def test_shared_borrow_demotes_the_owner(load_typed):
    """After ``let r = &x`` the owner keeps ReadRef only, so its WriteRef is not held across."""
    source = """
fn demote() {
    let x = 5;
    let r = &x;
    assert!(*r == 5);
}
"""
    analysis = _analyze(load_typed, source, "demote")
    borrow = analysis.graph.edges[1]
    before = analysis.roots.root_of("x", borrow.source)

    assert before.kind is CapKind.WRITE_REF
    assert analysis.roots.root_of("x", borrow.target).kind is CapKind.READ_REF
    assert not analysis.roots.held_across(before, borrow)
    assert analysis.roots.held_across(before, borrow, CapKind.READ_REF)


def test_moved_variable_is_not_held_across_the_call(load_typed):
    source = """
fn consume(b: Box<i32>);

fn mover(b: Box<i32>) {
    consume(b);
}
"""
    analysis = _analyze(load_typed, source, "mover")
    call = _call_edge(analysis, "consume")

    assert not analysis.roots.held_across(analysis.roots.root_of("b", call.source), call)


def test_frame_set_excludes_call_arguments(load_typed):
    analysis = _analyze(load_typed, REFCELL_CLIENT, "refcell_client")
    edge = _call_edge(analysis, "use_refcell")

    framed = {r.place.base for r in analysis.roots.frame_set(edge)}
    assert "x" not in framed
    assert {"a", "y"} <= framed
    assert analysis.roots.root_of("x", edge.source) is not None


def test_transition_keeps_read_ref_on_read_roots(load_typed):
    analysis = _analyze(load_typed, REFCELL_CLIENT, "refcell_client")
    edge = _call_edge(analysis, "use_refcell")

    seeded = {root.place.base: kind for root, kind in analysis.roots.transition_roots(edge)}
    assert seeded["x"] is CapKind.READ_REF
    assert seeded["y"] is analysis.roots.root_of("y", edge.source).kind


def test_roots_of_corpus_functions_are_disjoint(corpus_dir):
    prepared = prepare(sorted((corpus_dir / "clients").glob("*.cap")), [corpus_dir / "lib"])

    assert prepared.analyses
    for analysis in prepared.analyses.values():
        for point in analysis.graph.points:
            check_disjoint(analysis.roots.roots_at(point.id))


def test_overlapping_roots_are_rejected():
    whole = RootPlace(0, ast.Place("p"), ast.IntType(), CapKind.WRITE_REF)
    field = RootPlace(0, ast.Place("p", (ast.FieldProj("f"),)), ast.IntType(), CapKind.WRITE_REF)

    with pytest.raises(FlowError):
        check_disjoint([whole, field])


def test_unused_roots_skip_mentioned_variables():
    a = RootPlace(0, ast.Place("a"), ast.IntType(), CapKind.WRITE_REF)
    b = RootPlace(1, ast.Place("b"), ast.IntType(), CapKind.WRITE_REF)

    assert unused_roots({"a": Use.READ}, [a, b]) == [b]


def test_root_table_dump(load_typed):
    analysis = _analyze(load_typed, CELL_CLIENT, "cell_client")

    lines = analysis.roots.to_tsv().splitlines()
    assert lines[0] == "function\tpoint\tversion\troot\tplace\tkind\ttype"
    assert "cell_client\t1\tv$1\t0\tc\treadRef\t&Cell<i32>" in lines
