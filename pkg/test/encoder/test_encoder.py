import itertools
from pathlib import Path

import pytest

from caplet.encoder import EncoderOptions, ObligationKind, encode_function, lower_obligations, smt
from caplet.encoder.obligations import sanitize
from caplet.encoder.snapshots import SnapshotEncoder
from caplet.errors import EncodingError
from caplet.flow import analyze_function
from caplet.lang import ast
from caplet.services.pipeline import prepare

GOLDEN = Path(__file__).resolve().parents[1] / "golden"

CELL_CLIENT = """
fn cell_client(c: &Cell<i32>) {
    let before = c.get();
    c.set(before + 1);
    let after = c.get();
    assert!(before + 1 == after);
}
"""


def _encode(load_typed, source, key, options=None):
    program = load_typed(source)
    analysis = analyze_function(program, program.instances[key])
    return encode_function(program, analysis.graph, analysis.roots, options)


def _corpus_function(corpus_dir, name, key, options=None):
    prepared = prepare([corpus_dir / "clients" / name], [corpus_dir / "lib"], options)
    return next(e for e in prepared.encoded if e.key == key)


# --- smt terms ---

def test_connectives_fold_constants():
    assert smt.and_() == "true"
    assert smt.and_("a", "true") == "a"
    assert smt.and_("a", "false", "b") == "false"
    assert smt.or_("a", "b") == "(or a b)"
    assert smt.not_("true") == "false"
    assert smt.implies("true", "p") == "p"
    assert smt.eq("x", "x") == "true"
    assert smt.int_lit(-3) == "(- 3)"


def test_forall_with_trigger():
    term = smt.forall([("a", "Address")], "(p a)", [["(p a)"]])

    assert term == "(forall ((a Address)) (! (p a) :pattern ((p a))))"
    assert smt.forall([], "(p a)") == "(p a)"


def test_script_emits_each_declaration_once():
    script = smt.Script()
    script.declare_sort("Address")
    script.declare_sort("Address")
    script.declare_const("x", "Int")
    script.declare_const("x", "Int")
    script.axiom("(> x 0)", "positive")
    script.axiom("(> x 0)")
    script.axiom("true")

    assert script.prelude() == ["(set-logic ALL)", "(declare-sort Address 0)", "(declare-fun x () Int)",
                                "; positive", "(assert (> x 0))"]


# --- snapshots ---

def test_snapshot_sorts(load_typed):
    program = load_typed(CELL_CLIENT)
    script = smt.Script()
    snapshots = SnapshotEncoder(program, script)
    cell = ast.StructType("Cell", (ast.IntType(),))

    assert snapshots.sort(ast.IntType()) == "Int"
    assert snapshots.sort(ast.BoolType()) == "Bool"
    assert snapshots.sort(ast.RawPtr(ast.IntType())) == "Address"
    assert snapshots.sort(cell) == "MemSnap$Cell<i32>$"
    assert snapshots.sort(ast.SharedRef(cell)) == "MemSnap$&Cell<i32>$"
    assert snapshots.value_sort(ast.SharedRef(cell)) == "MemSnap$Cell<i32>$"
    assert len([d for d in script.datatypes if "MemSnap$Cell<i32>$" in d]) == 2


def test_mem_to_value(load_typed):
    snapshots = SnapshotEncoder(load_typed(CELL_CLIENT), smt.Script())
    ref = ast.SharedRef(ast.StructType("Cell", (ast.IntType(),)))

    # Reference-free types are their own value snapshot
    assert snapshots.value_of(ast.IntType(), "x") == "x"
    assert snapshots.value_of(ref, "r") == "(rtarget$&Cell<i32> r)"


INTS = range(-2, 3)
ADDRESSES = [f"addr{i}" for i in range(4)]


def _option(ty):
    return ast.EnumType("Option", (ty,))


def _memory_snapshots(snapshots, ty):
    """Every memory snapshot of ``ty`` over small integers, both booleans and four addresses."""
    program = snapshots.program
    if isinstance(ty, ast.IntType):
        yield from (smt.int_lit(i) for i in INTS)
    elif isinstance(ty, ast.BoolType):
        yield from ("true", "false")
    elif ast.is_reference(ty):
        for address in ADDRESSES:
            for target in _memory_snapshots(snapshots, ty.inner):
                yield snapshots.reference(ty, address, target)
    elif isinstance(ty, ast.EnumType):
        for index, (_, payload) in enumerate(program.variants_of(ty)):
            if payload is None:
                yield snapshots.construct(ty, [], index)
            else:
                for inner in _memory_snapshots(snapshots, payload):
                    yield snapshots.construct(ty, [inner], index)
    else:
        components = [list(_memory_snapshots(snapshots, t)) for _, t in program.fields_of(ty)]
        for args in itertools.product(*components):
            yield snapshots.construct(ty, list(args))


@pytest.mark.parametrize("ground", [True, False], ids=["ground", "quantified"])
@pytest.mark.parametrize("ty", [
    _option(ast.SharedRef(ast.INT)),
    ast.TupleType((ast.SharedRef(ast.INT), ast.BOOL)),
    ast.SharedRef(_option(ast.INT)),
    _option(ast.TupleType((ast.SharedRef(ast.INT), ast.BOOL))),
    ast.TupleType((_option(ast.SharedRef(ast.INT)), ast.INT)),
    ast.SharedRef(ast.TupleType((ast.SharedRef(ast.INT), ast.BOOL))),
], ids=str)
def test_value_snapshot_agrees_with_the_value_constructors(load_typed, ty, ground):
    """Converting any small memory snapshot gives the value built from its components."""
    z3 = pytest.importorskip("z3")
    script = smt.Script()
    snapshots = SnapshotEncoder(load_typed(CELL_CLIENT), script, ground=ground)
    for address in ADDRESSES:
        script.declare_const(address, "Address")
    script.axiom(smt.distinct(ADDRESSES))
    script.declare_const("s", snapshots.sort(ty))
    converted = snapshots.value_of(ty, "s")
    cases = [(m, snapshots.value_of(ty, m)) for m in _memory_snapshots(snapshots, ty)]
    while snapshots.instantiate():
        pass
    prelude = "\n".join(script.prelude())

    for memory, value in cases:
        solver = z3.Solver()
        solver.from_string(f"{prelude}\n(assert (= s {memory}))\n(assert (not (= {converted} {value})))\n")
        assert solver.check() == z3.unsat, f"{ty}: {memory}"


def test_generic_type_has_no_snapshot(load_typed):
    snapshots = SnapshotEncoder(load_typed(CELL_CLIENT), smt.Script())

    with pytest.raises(EncodingError):
        snapshots.sort(ast.TypeParam("T"))


def test_reference_memory_is_coherent_with_its_target(load_typed):
    program = load_typed(CELL_CLIENT)
    script = smt.Script()
    snapshots = SnapshotEncoder(program, script)
    ref = ast.SharedRef(ast.StructType("Cell", (ast.IntType(),)))

    assert snapshots.mem(ref, "a", "v") == "(mem$&Cell<i32> a v)"
    assert "(declare-fun mem$&Cell<i32> (Address Version) MemSnap$&Cell<i32>$)" in script.declarations()
    assert any("coherence of &Cell<i32>" in axiom for axiom in script.axioms)


# --- obligations ---

def test_assertion_gives_one_obligation(load_typed):
    encoded = _encode(load_typed, CELL_CLIENT, "cell_client")

    assert len(encoded.obligations) == 1
    obligation = encoded.obligations[0]
    assert obligation.kind is ObligationKind.ASSERT
    assert (obligation.span.line, obligation.index) == (6, 0)
    assert obligation.point == 3


def test_query_shape(load_typed):
    encoded = _encode(load_typed, CELL_CLIENT, "cell_client")
    (obligation, script), = lower_obligations(encoded)

    lines = script.splitlines()
    assert lines[0] == "; assert at 6:5 in cell_client"
    assert lines[1] == "(set-logic ALL)"
    assert lines[-1] == "(check-sat)"
    assert lines[-2] == f"(assert {smt.not_(obligation.goal)})"
    assert "(declare-fun v$3 () Version)" in lines


def test_postcondition_obligation_on_return(corpus_dir):
    encoded = _corpus_function(corpus_dir, "cell_client.cap", "cell_roundtrip")

    kinds = [o.kind for o in encoded.obligations]
    assert kinds == [ObligationKind.POSTCONDITION]


def test_precondition_obligation_on_call(load_typed):
    source = """
#[requires(x > 0)]
fn positive(x: i32);

fn caller() {
    positive(1);
    positive(0);
}
"""
    encoded = _encode(load_typed, source, "caller")

    assert [o.kind for o in encoded.obligations] == [ObligationKind.PRECONDITION] * 2
    assert [o.span.line for o in encoded.obligations] == [6, 7]
    assert encoded.obligations[0].description == "precondition of positive"


def test_obligations_numbered_in_source_order(corpus_dir):
    encoded = _corpus_function(corpus_dir, "cell_two_calls.cap", "cell_two_calls")

    assert [o.index for o in encoded.obligations] == list(range(len(encoded.obligations)))
    positions = [o.span.sort_key() for o in encoded.obligations]
    assert positions == sorted(positions)


def test_specification_needs_a_live_root(load_typed):
    source = """
fn consume(b: Box<i32>);

fn gone(b: Box<i32>) {
    consume(b);
    assert!(*b == 1);
}
"""
    program = load_typed(source)
    analysis = analyze_function(program, program.instances["gone"])

    with pytest.raises(EncodingError, match="no live root"):
        encode_function(program, analysis.graph, analysis.roots)


def test_write_scripts(load_typed, tmp_path):
    encoded = _encode(load_typed, CELL_CLIENT, "cell_client")

    paths = encoded.write(tmp_path)

    assert paths == [tmp_path / "cell_client" / "0.smt2"]
    assert paths[0].read_text(encoding="utf-8") == encoded.query(encoded.obligations[0])


def test_sanitize_method_keys():
    assert sanitize("Cell<i32>::get") == "Cell_i32___get"


# --- determinism ---

def test_encoding_is_deterministic(corpus_dir):
    """Two independent runs over the corpus give byte-identical scripts."""
    clients = sorted((corpus_dir / "clients").glob("*.cap"))
    first = prepare(clients, [corpus_dir / "lib"])
    second = prepare(clients, [corpus_dir / "lib"])

    assert [e.key for e in first.encoded] == [e.key for e in second.encoded]
    for a, b in zip(first.encoded, second.encoded):
        assert [s for _, s in a.scripts()] == [s for _, s in b.scripts()]


GOLDEN_SOURCE = """
fn golden() {
    assert!(1 + 1 == 2);
    if 1 < 2 {
        assert!(true);
    } else {
        assert!(false);
    }
}
"""


def test_golden_scripts(load_typed):
    """Compare every query of ``golden`` with the checked-in scripts."""
    encoded = _encode(load_typed, GOLDEN_SOURCE, "golden")
    directory = GOLDEN / sanitize(encoded.key)
    assert directory.is_dir(), f"golden scripts missing from {directory}"

    expected = sorted(p.name for p in directory.glob("*.smt2"))
    assert expected == sorted(f"{o.index}.smt2" for o in encoded.obligations)
    for obligation, script in encoded.scripts():
        assert script == (directory / f"{obligation.index}.smt2").read_text(encoding="utf-8")


# --- axiom modes ---

def test_ground_encoding_has_no_quantifiers(load_typed):
    encoded = _encode(load_typed, CELL_CLIENT, "cell_client")
    (_, script), = lower_obligations(encoded)

    assert "forall" not in script
    assert "gv" not in script
    # coherence of the reference parameter, instantiated at the entry version
    assert "(assert (= (rtarget$&Cell<i32> (mem$&Cell<i32> addr" in script


def test_quantified_encoding_states_axioms_once_per_type(load_typed):
    encoded = _encode(load_typed, CELL_CLIENT, "cell_client", EncoderOptions(quantified_axioms=True))
    (_, script), = lower_obligations(encoded)

    assert "(declare-fun gv (Version) Version)" in script
    assert "; coherence of &Cell<i32>" in script
    assert "; writeRef implies readRef on Cell<i32>" in script
    assert ":pattern" in script


# --- solving ---

def _solve(script, timeout_ms=10_000):
    """The z3 verdict for ``script``; ``unknown`` when the timeout is hit."""
    z3 = pytest.importorskip("z3")
    solver = z3.Solver()
    solver.set("timeout", timeout_ms)
    solver.from_string(script)
    return str(solver.check())


def _verdicts(encoded, line):
    return {_solve(encoded.query(o)) for o in encoded.obligations if o.span.line == line}


@pytest.mark.parametrize("name, key, line, expected", [
    ("arc_client.cap", "arc_client", 6, "unsat"),
    ("arc_client.cap", "arc_client", 7, "unsat"),
    ("arc_client.cap", "arc_client", 8, "unsat"),
    ("arc_client.cap", "arc_client", 10, "sat"),
    ("arc_client.cap", "arc_client", 11, "sat"),
    ("arc_client.cap", "arc_client", 13, "sat"),
    ("arc_client.cap", "arc_shared", 21, "sat"),
    ("mutex_lock_client.cap", "mutex_lock_client", 4, "sat"),
    ("mutex_lock_client.cap", "mutex_lock_client", 6, "unsat"),
    ("mutex_lock_client.cap", "mutex_lock_client", 8, "unsat"),
])
def test_solver_verdicts(corpus_dir, name, key, line, expected):
    """Failing lines get a model instead of running into the timeout."""
    encoded = _corpus_function(corpus_dir, name, key)

    assert _verdicts(encoded, line) == {expected}


# --- framing mutations ---

CELL_ASSIGN = """
fn cell_assign(c: &Cell<i32>) {
    let mut n = 0;
    c.set(1);
    n = 2;
    assert!(c.get() == 1);
}
"""


@pytest.mark.parametrize("source, key, line, family", [
    ("refcell_client.cap", "refcell_client", 11, "immutable"),
    ("mutex_client.cap", "mutex_client", 6, "unique"),
    (CELL_ASSIGN, "cell_assign", 6, "local"),
    ("cell_two_calls.cap", "cell_two_calls", 13, "local"),
], ids=["immutable", "unique", "local-assignment", "local-pure-call"])
def test_framing_family_is_load_bearing(load_typed, corpus_dir, source, key, line, family):
    """The assertion verifies with every framing family and no longer does without ``family``."""
    if source.endswith(".cap"):
        source = (corpus_dir / "clients" / source).read_text(encoding="utf-8")
    full = _encode(load_typed, source, key)
    mutated = _encode(load_typed, source, key, EncoderOptions(disabled_framing=frozenset({family})))

    assert _verdicts(full, line) == {"unsat"}
    # a timeout counts as not verified
    assert "unsat" not in _verdicts(mutated, line)
