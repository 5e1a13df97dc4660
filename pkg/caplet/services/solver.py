"""Solver bridge: run SMT scripts through an external process and map answers to verdicts."""
from __future__ import annotations

import logging
import shutil
import subprocess
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field
from tenacity import retry, retry_if_exception, stop_after_attempt, wait_fixed

from caplet.config import Settings
from caplet.encoder import EncodedFunction, Obligation
from caplet.errors import SolverConfigError
from caplet.schemas import SolverResult, SolverStatus, VerificationOutcome

logger = logging.getLogger(__name__)

BUNDLED_RUNNER = [sys.executable, "-m", "caplet.services.z3_runner"]
STATUS_TOKENS = {"sat": SolverStatus.SAT, "unsat": SolverStatus.UNSAT, "unknown": SolverStatus.UNKNOWN}


class SolverConfig(BaseModel):
    command: list[str] = Field(default_factory=lambda: list(BUNDLED_RUNNER),
                               description="Executable and leading arguments; the script path is appended.")
    timeout_ms: int = Field(default=30000, ge=1)
    jobs: int = Field(default=1, ge=1)
    show_model: bool = False

    model_config = ConfigDict(frozen=True)

    @property
    def bundled(self) -> bool:
        return self.command[:len(BUNDLED_RUNNER)] == BUNDLED_RUNNER


def resolve_solver(settings: Settings, show_model: bool = False) -> SolverConfig:
    """Build the solver configuration, checking that a configured executable exists."""
    if settings.solver is None:
        command = list(BUNDLED_RUNNER)
        if show_model:
            command.append("--model")
        command.extend(settings.solver_args)
    else:
        executable = shutil.which(settings.solver)
        if executable is None:
            raise SolverConfigError(f"solver executable `{settings.solver}` not found")
        command = [executable, *settings.solver_args]
    return SolverConfig(command=command, timeout_ms=settings.timeout_ms, jobs=settings.jobs,
                        show_model=show_model)


def _transient(error: BaseException) -> bool:
    return isinstance(error, OSError) and not isinstance(error, FileNotFoundError)


@retry(retry=retry_if_exception(_transient), stop=stop_after_attempt(3), wait=wait_fixed(0.2), reraise=True)
def _launch(command: list[str]) -> subprocess.Popen:
    return subprocess.Popen(command, stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)


def parse_status(output: str) -> Optional[SolverStatus]:
    for line in reversed(output.splitlines()):
        status = STATUS_TOKENS.get(line.strip())
        if status is not None:
            return status
    return None


def _elapsed(start: float) -> int:
    return int((time.monotonic() - start) * 1000)


def run_script(script: Path, config: SolverConfig) -> SolverResult:
    """Run one script; every failure is returned as a result, never raised."""
    command = [*config.command, str(script)]
    start = time.monotonic()
    try:
        process = _launch(command)
    except OSError as e:
        logger.error(f"Could not launch solver {command[0]}: {e}")
        return SolverResult(status=SolverStatus.PROCESS_ERROR, elapsed_ms=_elapsed(start), message=str(e))
    try:
        stdout, stderr = process.communicate(timeout=config.timeout_ms / 1000)
    except subprocess.TimeoutExpired:
        process.kill()
        process.communicate()
        logger.warning(f"Solver timed out after {config.timeout_ms} ms on {script}")
        return SolverResult(status=SolverStatus.TIMEOUT, elapsed_ms=_elapsed(start))
    elapsed = _elapsed(start)
    status = parse_status(stdout)
    if status is None:
        message = (stderr or stdout).strip() or f"solver exited with code {process.returncode}"
        logger.warning(f"Unparsable solver output on {script}: {message}")
        return SolverResult(status=SolverStatus.PROCESS_ERROR, elapsed_ms=elapsed, message=message,
                            output=stdout)
    if status is SolverStatus.UNKNOWN:
        logger.warning(f"Solver answered unknown on {script}")
    return SolverResult(status=status, elapsed_ms=elapsed, output=stdout)


def _outcome(encoded: EncodedFunction, obligation: Obligation, result: SolverResult,
             show_model: bool) -> VerificationOutcome:
    if not show_model:
        result = result.model_copy(update={"output": ""})
    return VerificationOutcome(file=obligation.filename, function=encoded.key, line=obligation.span.line,
                               col=obligation.span.col, kind=obligation.kind.value, index=obligation.index,
                               description=obligation.description, verdict=result.verdict, result=result)


def _safe_run(script: Path, config: SolverConfig) -> SolverResult:
    try:
        return run_script(script, config)
    except Exception as e:
        logger.error(f"Solver run on {script} failed: {e}", exc_info=True)
        return SolverResult(status=SolverStatus.PROCESS_ERROR, message=str(e))


def verify_functions(functions: list[EncodedFunction], config: SolverConfig,
                     out_dir: Optional[Path] = None) -> list[VerificationOutcome]:
    """Solve every obligation of ``functions`` with up to ``config.jobs`` solver processes."""
    with tempfile.TemporaryDirectory(prefix="caplet-") as scratch:
        directory = Path(out_dir) if out_dir is not None else Path(scratch)
        jobs = []
        for encoded in functions:
            paths = encoded.write(directory)
            jobs.extend(zip([encoded] * len(paths), encoded.obligations, paths))
        logger.info(f"Dispatching {len(jobs)} obligations with {config.jobs} solver jobs")
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(lambda job: _safe_run(job[2], config), jobs))
    outcomes = [_outcome(encoded, obligation, result, config.show_model)
                for (encoded, obligation, _), result in zip(jobs, results)]
    for outcome in outcomes:
        logger.info(f"{outcome.file}:{outcome.line}:{outcome.col} {outcome.kind} -> {outcome.verdict.value}")
    return sorted(outcomes, key=VerificationOutcome.sort_key)


def verify_function(encoded: EncodedFunction, config: SolverConfig,
                    out_dir: Optional[Path] = None) -> list[VerificationOutcome]:
    return verify_functions([encoded], config, out_dir)
