import pytest

from caplet.errors import ExpectationError
from caplet.schemas import SolverResult, SolverStatus, Verdict, VerificationOutcome
from caplet.services.expectations import check_expectations, parse_expectations

SOURCE = """fn client(c: &Cell<i32>) {
    c.set(1);
    assert!(c.get() == 1); //~ VERIFY
    assert!(c.get() == 2); //~ FAIL
    assert!(c.get() > 0);  //~ INCOMPLETE
    assert!(true);
}
"""

STATUS = {Verdict.VERIFIED: SolverStatus.UNSAT, Verdict.NOT_VERIFIED: SolverStatus.SAT,
          Verdict.INCONCLUSIVE: SolverStatus.TIMEOUT}


def outcome(line, verdict, file="client.cap"):
    return VerificationOutcome(file=file, function="client", line=line, col=5, kind="assert", index=line,
                               verdict=verdict, result=SolverResult(status=STATUS[verdict]))


def test_parse_expectations():
    assert parse_expectations(SOURCE) == {3: "VERIFY", 4: "FAIL", 5: "INCOMPLETE"}


def test_parse_ignores_other_comments():
    assert parse_expectations("let x = 1; // VERIFY\nlet y = 2; //~ MAYBE\n") == {}


def test_all_expectations_met():
    outcomes = [outcome(3, Verdict.VERIFIED), outcome(4, Verdict.NOT_VERIFIED), outcome(5, Verdict.NOT_VERIFIED),
                outcome(6, Verdict.VERIFIED)]

    assert check_expectations(outcomes, SOURCE, "client.cap") == []


def test_unannotated_line_expects_verify():
    outcomes = [outcome(3, Verdict.VERIFIED), outcome(4, Verdict.NOT_VERIFIED), outcome(5, Verdict.NOT_VERIFIED),
                outcome(6, Verdict.NOT_VERIFIED)]

    mismatches = check_expectations(outcomes, SOURCE, "client.cap")

    assert [(m.line, m.expected, m.actual) for m in mismatches] == [(6, "VERIFY", Verdict.NOT_VERIFIED)]
    assert mismatches[0].message == "expected VERIFY, got not_verified"


def test_fail_line_that_verifies():
    outcomes = [outcome(3, Verdict.VERIFIED), outcome(4, Verdict.VERIFIED), outcome(5, Verdict.NOT_VERIFIED),
                outcome(6, Verdict.VERIFIED)]

    mismatches = check_expectations(outcomes, SOURCE, "client.cap")

    assert [(m.line, m.expected) for m in mismatches] == [(4, "FAIL")]


def test_inconclusive_never_meets_an_expectation():
    outcomes = [outcome(3, Verdict.VERIFIED), outcome(4, Verdict.NOT_VERIFIED), outcome(4, Verdict.INCONCLUSIVE),
                outcome(5, Verdict.NOT_VERIFIED), outcome(6, Verdict.VERIFIED)]

    mismatches = check_expectations(outcomes, SOURCE, "client.cap")

    assert [(m.line, m.actual) for m in mismatches] == [(4, Verdict.INCONCLUSIVE)]


def test_one_failing_obligation_fails_the_line():
    source = "fn f() {\n    g(1); //~ FAIL\n}\n"
    outcomes = [outcome(2, Verdict.VERIFIED), outcome(2, Verdict.NOT_VERIFIED)]

    assert check_expectations(outcomes, source, "client.cap") == []


def test_expectation_without_obligation():
    with pytest.raises(ExpectationError) as excinfo:
        check_expectations([outcome(3, Verdict.VERIFIED)], SOURCE, "client.cap")

    assert excinfo.value.span.line == 4
    assert excinfo.value.filename == "client.cap"


def test_outcomes_of_other_files_are_ignored():
    source = "fn f() {\n    assert!(true);\n}\n"
    outcomes = [outcome(2, Verdict.VERIFIED), outcome(2, Verdict.NOT_VERIFIED, file="other.cap")]

    assert check_expectations(outcomes, source, "client.cap") == []
