import logging
import sys
from pathlib import Path
from typing import List, Optional

import click
import typer
from dotenv import load_dotenv
from rich.console import Console
from rich.table import Table

from caplet.capabilities.algebra import lattice_dot
from caplet.config import Settings
from caplet.encoder import EncoderOptions
from caplet.errors import CapletError
from caplet.schemas import (Diagnostic, ExpectationMismatch, JsonReport, ReportEntry, Verdict,
                            VerificationOutcome)
from caplet.services.corpus import corpus_manifest, manifest_problems
from caplet.services.expectations import check_expectations
from caplet.services.pipeline import prepare
from caplet.services.solver import resolve_solver, verify_functions

load_dotenv()

EXIT_OK, EXIT_FAILED, EXIT_INCONCLUSIVE, EXIT_ERROR = 0, 1, 2, 3

app = typer.Typer(add_completion=False, help="Deductive verifier for capability-annotated programs.")
console = Console()
err_console = Console(stderr=True)
logger = logging.getLogger(__name__)

# Logging Configuration
date_format_string = "%dth %B %Y %H:%M:%S"
log_formatter = logging.Formatter(
    fmt='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    datefmt=date_format_string
)


def configure_logging(log_file: str, verbose: bool = False) -> None:
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_caplet", False):
            root.removeHandler(handler)
            handler.close()
    log_file_handler = logging.FileHandler(log_file)
    log_file_handler.setFormatter(log_formatter)
    log_file_handler.setLevel(logging.DEBUG if verbose else logging.INFO)
    # stdout carries the report
    log_stream_handler = logging.StreamHandler(sys.stderr)
    log_stream_handler.setFormatter(log_formatter)
    log_stream_handler.setLevel(logging.DEBUG if verbose else logging.WARNING)
    for handler in (log_file_handler, log_stream_handler):
        handler._caplet = True
        root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)


@app.callback()
def cli():
    """Verify client programs against library capability specifications."""


def exit_code(outcomes: list[VerificationOutcome]) -> int:
    verdicts = {o.verdict for o in outcomes}
    if Verdict.NOT_VERIFIED in verdicts:
        return EXIT_FAILED
    if Verdict.INCONCLUSIVE in verdicts:
        return EXIT_INCONCLUSIVE
    return EXIT_OK


def expectation_exit_code(mismatches: list[ExpectationMismatch]) -> int:
    if not mismatches:
        return EXIT_OK
    if all(m.actual is Verdict.INCONCLUSIVE for m in mismatches):
        return EXIT_INCONCLUSIVE
    return EXIT_FAILED


def render_table(outcomes: list[VerificationOutcome], show_model: bool) -> None:
    table = Table(title="Proof obligations")
    for column in ("Location", "Function", "Kind", "Verdict", "ms"):
        table.add_column(column, justify="right" if column == "ms" else "left")
    styles = {Verdict.VERIFIED: "green", Verdict.NOT_VERIFIED: "red", Verdict.INCONCLUSIVE: "yellow"}
    for o in outcomes:
        table.add_row(f"{o.file}:{o.line}:{o.col}", o.function, o.kind,
                      f"[{styles[o.verdict]}]{o.verdict.value}[/]", str(o.result.elapsed_ms))
    console.print(table)
    if show_model:
        for o in outcomes:
            if o.verdict is Verdict.NOT_VERIFIED and o.result.output:
                console.print(f"[bold]{o.file}:{o.line}:{o.col}[/bold] model:")
                console.print(o.result.output, markup=False, highlight=False)
    counts = {v: sum(1 for o in outcomes if o.verdict is v) for v in Verdict}
    console.print(f"{len(outcomes)} obligations: {counts[Verdict.VERIFIED]} verified, "
                  f"{counts[Verdict.NOT_VERIFIED]} not verified, {counts[Verdict.INCONCLUSIVE]} inconclusive")


def _fail(diagnostics: list[Diagnostic], as_json: bool) -> None:
    if as_json:
        typer.echo(JsonReport(diagnostics=diagnostics, exit_code=EXIT_ERROR).dump())
    for diagnostic in diagnostics:
        err_console.print(diagnostic.render(), markup=False, highlight=False, soft_wrap=True)
    raise typer.Exit(code=EXIT_ERROR)


def _error_diagnostic(error: CapletError) -> Diagnostic:
    span = error.span
    return Diagnostic(file=error.filename or "<input>", line=span.line if span else 0,
                      col=span.col if span else 0, message=error.message)


@app.command()
def verify(
    files: List[Path] = typer.Argument(None, help="Client .cap files."),
    expect: bool = typer.Option(False, "--expect", help="Compare verdicts with //~ comments."),
    as_json: bool = typer.Option(False, "--json", help="Print the report as JSON."),
    emit_smt: Optional[Path] = typer.Option(None, "--emit-smt", help="Write SMT scripts here instead of solving."),
    dump_lattice: bool = typer.Option(False, "--dump-lattice", help="Print the capability lattice as DOT."),
    dump_roots: bool = typer.Option(False, "--dump-roots", help="Print the root table of every function."),
    lib: Optional[List[Path]] = typer.Option(None, "--lib", help="Library specification directory."),
    solver: Optional[str] = typer.Option(None, "--solver", help="Solver executable."),
    solver_arg: Optional[List[str]] = typer.Option(None, "--solver-arg", help="Extra solver argument."),
    timeout: Optional[int] = typer.Option(None, "--timeout", min=1, help="Per-obligation timeout in ms."),
    jobs: Optional[int] = typer.Option(None, "--jobs", min=1, help="Concurrent solver processes."),
    show_model: bool = typer.Option(False, "--show-model", help="Attach solver models to failed obligations."),
    quantified_axioms: bool = typer.Option(False, "--quantified-axioms",
                                           help="Emit triggered quantified axioms instead of ground instances."),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging on stderr."),
):
    """Verify every client function in FILES."""
    overrides = {"solver": solver, "solver_args": solver_arg or None, "timeout_ms": timeout, "jobs": jobs}
    settings = Settings().model_copy(update={k: v for k, v in overrides.items() if v is not None})
    configure_logging(settings.log_file, verbose)
    if dump_lattice:
        typer.echo(lattice_dot())
        if not files:
            raise typer.Exit(code=EXIT_OK)
    if not files:
        _fail([Diagnostic(file="<command line>", message="no input files")], as_json)
    missing = [f for f in files if not f.is_file()]
    if missing:
        _fail([Diagnostic(file=str(f), message="no such file") for f in missing], as_json)

    try:
        config = None if emit_smt is not None else resolve_solver(settings, show_model)
        prepared = prepare(files, lib, EncoderOptions(quantified_axioms=quantified_axioms))
    except CapletError as e:
        logger.error(f"Verification aborted: {e.render()}")
        _fail([_error_diagnostic(e)], as_json)
    if prepared.violations:
        _fail([Diagnostic(file=v.filename, line=v.span.line, col=v.span.col, message=v.message, rule=v.rule)
               for v in prepared.violations], as_json)
    if dump_roots:
        for analysis in prepared.analyses.values():
            typer.echo(analysis.roots.to_tsv(), nl=False)
    if emit_smt is not None:
        written = [path for encoded in prepared.encoded for path in encoded.write(emit_smt)]
        logger.info(f"Wrote {len(written)} SMT scripts to {emit_smt}")
        if not as_json:
            typer.echo(f"wrote {len(written)} scripts to {emit_smt}")
        raise typer.Exit(code=EXIT_OK)

    outcomes = verify_functions(prepared.encoded, config)
    mismatches: list[ExpectationMismatch] = []
    code = exit_code(outcomes)
    if expect:
        try:
            for f in files:
                mismatches.extend(check_expectations(outcomes, f.read_text(encoding="utf-8"), str(f)))
        except CapletError as e:
            _fail([_error_diagnostic(e)], as_json)
        code = expectation_exit_code(mismatches)

    if as_json:
        report = JsonReport(entries=[ReportEntry.from_outcome(o) for o in outcomes], mismatches=mismatches,
                            exit_code=code)
        typer.echo(report.dump())
    else:
        render_table(outcomes, show_model)
        for m in mismatches:
            console.print(f"[red]{m.file}:{m.line}: {m.message}[/red]", soft_wrap=True)
    raise typer.Exit(code=code)


@app.command()
def corpus(
    root: Path = typer.Argument(Path("corpus"), help="Corpus directory holding manifest.tsv."),
    timeout: Optional[int] = typer.Option(None, "--timeout", min=1, help="Per-obligation timeout in ms."),
    jobs: Optional[int] = typer.Option(None, "--jobs", min=1, help="Concurrent solver processes."),
):
    """Run every client of the corpus manifest in expectation mode and compare exit codes."""
    problems = manifest_problems(root)
    if problems:
        _fail([Diagnostic(file=str(root / "manifest.tsv"), message=p) for p in problems], False)
    failed = 0
    for entry in corpus_manifest(root):
        argv = ["verify", str(root / entry.file), "--expect", "--lib", str(root / "lib")]
        if timeout is not None:
            argv += ["--timeout", str(timeout)]
        if jobs is not None:
            argv += ["--jobs", str(jobs)]
        code = main(argv)
        ok = code == entry.expected_exit
        failed += not ok
        console.print(f"{'[green]ok[/]' if ok else '[red]FAILED[/]'} {entry.file}: exit {code}, "
                      f"expected {entry.expected_exit}")
    raise typer.Exit(code=EXIT_OK if failed == 0 else EXIT_FAILED)


def main(argv: Optional[List[str]] = None) -> int:
    """Run the CLI and return its exit code; usage errors exit with 3."""
    command = typer.main.get_command(app)
    try:
        result = command.main(args=argv, prog_name="caplet", standalone_mode=False)
    except click.exceptions.Abort:
        return EXIT_ERROR
    except click.ClickException as e:
        e.show()
        return EXIT_ERROR
    return result if isinstance(result, int) else EXIT_OK


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
