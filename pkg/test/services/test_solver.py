import subprocess
from pathlib import Path
from unittest.mock import MagicMock, patch

import pytest

from caplet.config import Settings
from caplet.encoder import Obligation, ObligationKind
from caplet.errors import SolverConfigError
from caplet.lang.ast import Span
from caplet.schemas import SolverResult, SolverStatus, Verdict
from caplet.services.solver import (BUNDLED_RUNNER, SolverConfig, parse_status, resolve_solver, run_script,
                                    verify_function, verify_functions)

POPEN = "caplet.services.solver.subprocess.Popen"


@pytest.fixture
def config():
    return SolverConfig(command=["z3"], timeout_ms=500, jobs=2)


def _encoded(key, lines, tmp_path):
    """An encoded function stand-in whose obligations sit on ``lines``."""
    encoded = MagicMock()
    encoded.key = key
    encoded.obligations = [Obligation(ObligationKind.ASSERT, "true", 0, Span(line, 5), key, "client.cap", index=i)
                           for i, line in enumerate(lines)]
    encoded.write.return_value = [tmp_path / f"{key}-{i}.smt2" for i in range(len(lines))]
    return encoded


# --- status parsing ---

def test_parse_status_last_status_line():
    assert parse_status("unsat\n") is SolverStatus.UNSAT
    assert parse_status("sat\n(model\n  (define-fun x () Int 1)\n)\n") is SolverStatus.SAT
    assert parse_status("warning: something\nunknown\n") is SolverStatus.UNKNOWN
    # An echoed status earlier in the output does not win over the final answer
    assert parse_status("sat\nunknown\n") is SolverStatus.UNKNOWN
    assert parse_status("(error \"line 1\")\n") is None
    assert parse_status("") is None


def test_verdict_of_each_status():
    assert SolverResult(status=SolverStatus.UNSAT).verdict is Verdict.VERIFIED
    assert SolverResult(status=SolverStatus.SAT).verdict is Verdict.NOT_VERIFIED
    for status in (SolverStatus.UNKNOWN, SolverStatus.TIMEOUT, SolverStatus.PROCESS_ERROR):
        assert SolverResult(status=status).verdict is Verdict.INCONCLUSIVE


# --- run_script ---

def test_run_script_unsat(config, mock_process, tmp_path):
    script = tmp_path / "0.smt2"
    with patch(POPEN, return_value=mock_process) as popen:
        result = run_script(script, config)

    assert result.status is SolverStatus.UNSAT
    assert result.verdict is Verdict.VERIFIED
    assert popen.call_args.args[0] == ["z3", str(script)]
    mock_process.communicate.assert_called_once_with(timeout=0.5)


def test_run_script_sat_keeps_output(config, mock_process, tmp_path):
    mock_process.communicate.return_value = ("sat\n(model)\n", "")
    with patch(POPEN, return_value=mock_process):
        result = run_script(tmp_path / "0.smt2", config)

    assert result.status is SolverStatus.SAT
    assert "(model)" in result.output


def test_run_script_timeout_kills_the_process(config, mock_process, tmp_path):
    # First call times out, the second one collects what is left after kill
    mock_process.communicate.side_effect = [subprocess.TimeoutExpired("z3", 0.5), ("", "")]
    with patch(POPEN, return_value=mock_process):
        result = run_script(tmp_path / "0.smt2", config)

    assert result.status is SolverStatus.TIMEOUT
    assert result.verdict is Verdict.INCONCLUSIVE
    mock_process.kill.assert_called_once()


def _pigeonhole(pigeons):
    """An unsat script that is hard for the solver: ``pigeons`` pigeons in one hole fewer."""
    holes = range(pigeons - 1)
    lines = [f"(declare-const p{i}_{j} Bool)" for i in range(pigeons) for j in holes]
    lines += [f"(assert (or {' '.join(f'p{i}_{j}' for j in holes)}))" for i in range(pigeons)]
    lines += [f"(assert (not (and p{i}_{j} p{k}_{j})))"
              for j in holes for i in range(pigeons) for k in range(i + 1, pigeons)]
    return "\n".join([*lines, "(check-sat)", ""])


def test_run_script_real_process_timeout(tmp_path):
    pytest.importorskip("z3")
    script = tmp_path / "pigeons.smt2"
    script.write_text(_pigeonhole(14), encoding="utf-8")

    result = run_script(script, SolverConfig(timeout_ms=1))

    assert result.status is SolverStatus.TIMEOUT
    assert result.verdict is Verdict.INCONCLUSIVE
    assert result.elapsed_ms >= 1


def test_run_script_unparsable_output(config, mock_process, tmp_path):
    mock_process.returncode = 1
    mock_process.communicate.return_value = ("", "(error \"unknown constant x\")\n")
    with patch(POPEN, return_value=mock_process):
        result = run_script(tmp_path / "0.smt2", config)

    assert result.status is SolverStatus.PROCESS_ERROR
    assert "unknown constant" in result.message


def test_run_script_empty_output_reports_exit_code(config, mock_process, tmp_path):
    mock_process.returncode = 139
    mock_process.communicate.return_value = ("", "")
    with patch(POPEN, return_value=mock_process):
        result = run_script(tmp_path / "0.smt2", config)

    assert result.status is SolverStatus.PROCESS_ERROR
    assert result.message == "solver exited with code 139"


def test_run_script_missing_executable(config, tmp_path):
    with patch(POPEN, side_effect=FileNotFoundError("z3")) as popen:
        result = run_script(tmp_path / "0.smt2", config)

    assert result.status is SolverStatus.PROCESS_ERROR
    assert popen.call_count == 1


def test_run_script_retries_transient_launch_errors(config, mock_process, tmp_path):
    with patch("caplet.services.solver.time.sleep"):
        with patch(POPEN, side_effect=[BlockingIOError("busy"), mock_process]) as popen:
            result = run_script(tmp_path / "0.smt2", config)

    assert result.status is SolverStatus.UNSAT
    assert popen.call_count == 2


def test_run_script_gives_up_after_three_launches(config, tmp_path):
    with patch(POPEN, side_effect=PermissionError("denied")) as popen:
        result = run_script(tmp_path / "0.smt2", config)

    assert result.status is SolverStatus.PROCESS_ERROR
    assert popen.call_count == 3


# --- resolve_solver ---

def test_resolve_bundled_runner():
    config = resolve_solver(Settings(solver=None, timeout_ms=1000, jobs=3), show_model=True)

    assert config.command == [*BUNDLED_RUNNER, "--model"]
    assert config.bundled
    assert (config.timeout_ms, config.jobs, config.show_model) == (1000, 3, True)


def test_resolve_external_solver():
    with patch("caplet.services.solver.shutil.which", return_value="/usr/bin/z3"):
        config = resolve_solver(Settings(solver="z3", solver_args=["-smt2"]))

    assert config.command == ["/usr/bin/z3", "-smt2"]
    assert not config.bundled


def test_resolve_missing_solver():
    with patch("caplet.services.solver.shutil.which", return_value=None):
        with pytest.raises(SolverConfigError, match="not found"):
            resolve_solver(Settings(solver="no-such-solver"))


# --- verify_functions ---

def test_outcomes_sorted_by_location(config, tmp_path):
    first = _encoded("second_fn", [9, 4], tmp_path)
    answers = {"second_fn-0.smt2": "sat", "second_fn-1.smt2": "unsat"}

    def fake_run(script, cfg):
        return SolverResult(status=SolverStatus(answers[script.name]), output="model")

    with patch("caplet.services.solver.run_script", side_effect=fake_run):
        outcomes = verify_functions([first], config)

    assert [(o.line, o.verdict) for o in outcomes] == [(4, Verdict.VERIFIED), (9, Verdict.NOT_VERIFIED)]
    # Models are only kept with --show-model
    assert all(o.result.output == "" for o in outcomes)


def test_unexpected_failure_is_inconclusive(config, tmp_path):
    encoded = _encoded("f", [3], tmp_path)
    with patch("caplet.services.solver.run_script", side_effect=RuntimeError("boom")):
        outcomes = verify_functions([encoded], config)

    assert outcomes[0].verdict is Verdict.INCONCLUSIVE
    assert outcomes[0].result.message == "boom"


def test_scripts_written_to_out_dir(config, tmp_path):
    encoded = _encoded("f", [3], tmp_path)
    with patch("caplet.services.solver.run_script", return_value=SolverResult(status=SolverStatus.UNSAT)):
        verify_functions([encoded], config, out_dir=tmp_path / "out")

    encoded.write.assert_called_once_with(Path(tmp_path / "out"))


def test_verify_single_function(config, tmp_path):
    """verify_function checks every obligation of one encoded function."""
    encoded = _encoded("cell_client", [6, 7], tmp_path)
    with patch("caplet.services.solver.run_script", return_value=SolverResult(status=SolverStatus.UNSAT)):
        outcomes = verify_function(encoded, config)

    assert [(o.function, o.line, o.index) for o in outcomes] == [("cell_client", 6, 0), ("cell_client", 7, 1)]
    assert all(o.verdict is Verdict.VERIFIED for o in outcomes)
