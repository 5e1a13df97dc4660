"""Bundled solver: ``python -m caplet.services.z3_runner <script.smt2>``.

Reads an SMT-LIB 2 script with the z3 bindings, checks it and prints ``sat``,
``unsat`` or ``unknown``. With ``--model`` the model of a sat answer follows
the status line.
"""
from pathlib import Path

import typer
import z3

runner = typer.Typer(add_completion=False)


def check_file(path: Path, timeout_ms: int = 0) -> tuple[str, str]:
    solver = z3.Solver()
    if timeout_ms:
        solver.set("timeout", timeout_ms)
    solver.from_file(str(path))
    status = solver.check()
    model = str(solver.model()) if status == z3.sat else ""
    return str(status), model


@runner.command()
def run(script: Path = typer.Argument(..., exists=True, dir_okay=False),
        model: bool = typer.Option(False, "--model", help="Print the model after a sat answer."),
        timeout_ms: int = typer.Option(0, "--timeout-ms", help="z3 soft timeout, 0 for none.")):
    try:
        status, text = check_file(script, timeout_ms)
    except z3.Z3Exception as e:
        typer.echo(f"error: {e}", err=True)
        raise typer.Exit(code=1)
    typer.echo(status)
    if model and text:
        typer.echo(text)


if __name__ == "__main__":
    runner()
