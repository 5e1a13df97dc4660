from caplet.capabilities.algebra import CapKind
from caplet.capabilities.annotations import instantiate_annotations, matching_annotations, trigger_kind
from caplet.lang import ast

CELL = ast.StructType("Cell", (ast.IntType(),))
ARC = ast.StructType("Arc", (ast.IntType(),))

CELL_CLIENT = """
fn client(c: &Cell<i32>) -> i32 {
    return c.get();
}
"""

ARC_CLIENT = """
fn client(x: &Arc<i32>) -> bool {
    return Arc::strong_count(x) == 1;
}
"""


def recording_evaluator():
    """Returns an evaluate callback naming each encoded expression, and the list of versions it saw."""
    seen = []

    def evaluate(expr, version):
        seen.append(version)
        return f"e{len(seen)}"
    return evaluate, seen


# --- matching ---

def test_trigger_kind():
    assert trigger_kind(ast.Receiver.SHARED) is CapKind.READ_REF
    assert trigger_kind(ast.Receiver.MUT) is CapKind.WRITE_REF


def test_mutable_holder_gets_shared_annotations_too(load_typed):
    program = load_typed(CELL_CLIENT)

    shared = matching_annotations(program, CELL, ast.Receiver.SHARED)
    mutable = matching_annotations(program, CELL, ast.Receiver.MUT)

    assert sorted(a.kind for a in shared) == ["local", "noReadRef", "noWriteRef"]
    assert len(mutable) == 4
    assert all(a in mutable for a in shared)


# --- instantiation ---

def test_shared_cell_annotations(load_typed):
    program = load_typed(CELL_CLIENT)
    evaluate, seen = recording_evaluator()

    atoms = instantiate_annotations(program, CELL, ast.Receiver.SHARED, evaluate, root="0", version="v$2")

    assert sorted(a.atom.kind.value for a in atoms) == ["local", "noReadRef", "noWriteRef"]
    assert all(a.condition is None for a in atoms)
    assert all(a.atom.pointee == ast.IntType() for a in atoms)
    assert seen == ["v$2"] * 3
    assert atoms[0].atom.term() == f"(cap${atoms[0].atom.kind.value}$i32 0 e1 v$2)"


def test_condition_read_at_condition_version(load_typed):
    """Conditional annotations read their condition at the holder's version and their target at ``version``."""
    program = load_typed(ARC_CLIENT)
    evaluate, _ = recording_evaluator()

    atoms = instantiate_annotations(program, ARC, ast.Receiver.MUT, evaluate, root="1", version="t$0",
                                    condition_version="v$0")

    guarded = [a for a in atoms if a.condition is not None]
    assert len(atoms) == 6
    assert sorted(a.atom.kind.value for a in guarded) == ["local", "unique", "writeRef"]
    assert all(a.atom.version == "t$0" for a in atoms)


def test_guarded_implication(load_typed):
    program = load_typed(ARC_CLIENT)
    evaluate, _ = recording_evaluator()

    atoms = instantiate_annotations(program, ARC, ast.Receiver.SHARED, evaluate, root="1", version="v$0")

    plain = next(a for a in atoms if a.condition is None)
    guarded = next(a for a in atoms if a.condition is not None)
    assert plain.implication("trig") == f"(=> trig {plain.atom.term()})"
    assert guarded.implication("trig") == f"(=> (and trig {guarded.condition}) {guarded.atom.term()})"
