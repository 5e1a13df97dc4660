from caplet.lang.parser import parse_files
from caplet.lang.typecheck import typecheck
from caplet.purity import check_program, check_purity, check_spec_purity


def _violations(load_typed, source, key):
    program = load_typed(source)
    return check_purity(program, program.instances[key])


def _rules(violations):
    return [v.rule for v in violations]


# --- check_purity ---

def test_deref_in_pure_value_body(load_typed):
    source = """
#[pure]
fn read(p: *mut i32) -> i32 {
    return deref(p);
}
"""
    violations = _violations(load_typed, source, "read")

    assert _rules(violations) == ["d"]
    assert violations[0].function == "read"
    assert violations[0].span.line == 4


def test_deref_in_pure_memory_body(load_typed):
    source = """
#[pure_memory]
fn read(p: *mut i32) -> i32 {
    return deref(p);
}
"""
    assert _rules(_violations(load_typed, source, "read")) == ["e"]


def test_deref_allowed_in_pure_unstable_body(load_typed):
    source = """
#[pure_unstable]
fn read(p: *mut i32) -> i32 {
    return deref(p);
}
"""
    assert _violations(load_typed, source, "read") == []


def test_mutable_reference_parameter(load_typed):
    source = """
#[pure]
fn peek(r: &mut i32) -> i32 {
    return 0;
}
"""
    violations = _violations(load_typed, source, "peek")

    assert _rules(violations) == ["a"]
    assert "`r`" in violations[0].message


def test_constant_function_at_every_level(load_typed):
    for attribute in ("pure", "pure_memory", "pure_unstable"):
        source = f"""
#[{attribute}]
fn seven() -> i32 {{
    return 7;
}}
"""
        assert _violations(load_typed, source, "seven") == []


def test_assignment_to_parameter(load_typed):
    source = """
#[pure]
fn bump(mut x: i32) -> i32 {
    let y: i32 = 1;
    x = y;
    return x;
}
"""
    assert _rules(_violations(load_typed, source, "bump")) == ["b"]


def test_assignment_to_local_is_allowed(load_typed):
    source = """
#[pure]
fn bump(x: i32) -> i32 {
    let mut y: i32 = x;
    y = y + 1;
    return y;
}
"""
    assert _violations(load_typed, source, "bump") == []


def test_impure_call_and_assert(load_typed):
    source = """
#[pure_unstable]
fn poke(c: &Cell<i32>) -> i32 {
    c.set(1);
    assert!(true);
    return 0;
}
"""
    violations = _violations(load_typed, source, "poke")

    assert _rules(violations) == ["g", "g"]
    assert [v.span.line for v in violations] == [4, 5]


def test_callee_level_above_caller(load_typed):
    source = """
#[pure_memory]
fn load(c: &Cell<i32>) -> i32 {
    return c.get();
}

#[pure]
fn address(c: &Cell<i32>) -> bool {
    return c.as_ptr() == c.as_ptr();
}
"""
    program = load_typed(source)

    assert _rules(check_purity(program, program.instances["load"])) == ["c"]
    assert _rules(check_purity(program, program.instances["address"])) == ["d", "d"]


def test_reference_cast_observes_address(load_typed):
    source = """
#[pure]
fn same(a: &i32, b: &i32) -> bool {
    return a as *const _ == b as *const _;
}
"""
    assert _rules(_violations(load_typed, source, "same")) == ["d", "d"]


def test_impure_function_is_not_checked(load_typed):
    source = """
fn client(c: &Cell<i32>) {
    c.set(1);
}
"""
    assert _violations(load_typed, source, "client") == []


# --- check_spec_purity ---

def test_cell_postconditions_are_pure(load_typed):
    source = """
fn client(c: &Cell<i32>) -> i32 {
    c.set(1);
    let previous = c.replace(2);
    return c.get();
}
"""
    program = load_typed(source)

    for key in ("Cell<i32>::get", "Cell<i32>::set", "Cell<i32>::replace"):
        for spec in program.instances[key].decl.ensures:
            assert check_spec_purity(program, spec) == []


def test_specification_calling_impure_extern(load_typed):
    source = """
fn effect() -> i32;

#[ensures(effect() == 1)]
fn client() -> i32 {
    return 1;
}
"""
    program = load_typed(source)
    violations = check_spec_purity(program, program.instances["client"].decl.ensures[0])

    assert len(violations) == 1
    assert violations[0].rule == "spec"
    assert "effect" in violations[0].message


def test_capable_condition_calling_pure_unstable(load_typed):
    source = """
fn client(x: &Arc<i32>) -> bool {
    return Arc::strong_count(x) == 1;
}
"""
    program = load_typed(source)

    conditions = [a.condition for a in program.annotations["Arc<i32>"] if a.condition is not None]
    assert conditions
    for condition in conditions:
        assert check_spec_purity(program, condition) == []


# --- check_program ---

def test_corpus_is_free_of_violations(corpus_dir):
    clients = sorted((corpus_dir / "clients").glob("*.cap"))
    program = typecheck(parse_files(clients, tuple(sorted((corpus_dir / "lib").glob("*.cap")))))

    assert check_program(program) == []


def test_program_violations_carry_the_file(load_typed):
    source = """
#[pure]
fn read(p: *mut i32) -> i32 {
    return deref(p);
}
"""
    program = load_typed(source, "bad.cap")
    violations = check_program(program)

    assert len(violations) == 1
    assert violations[0].filename.endswith("bad.cap")
    assert violations[0].render().endswith("purity rule (d): `deref` reads through a raw pointer")
