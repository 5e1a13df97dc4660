"""parse → type check → purity → flow analysis → encoding, for a set of client files."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from caplet.encoder import EncodedFunction, EncoderOptions, encode_function
from caplet.flow import FunctionAnalysis, analyze_function
from caplet.lang.parser import parse_files
from caplet.lang.typecheck import TypedProgram, typecheck
from caplet.purity import Violation, check_program

logger = logging.getLogger(__name__)

DEFAULT_LIBRARY = Path(__file__).resolve().parents[2] / "corpus" / "lib"


def library_files(directories: list[Path]) -> list[Path]:
    files: list[Path] = []
    for directory in directories:
        files.extend(sorted(Path(directory).glob("*.cap")))
    return files


@dataclass
class PreparedProgram:
    """A checked program with, unless purity failed, every client function analyzed and encoded."""
    program: TypedProgram
    violations: list[Violation] = field(default_factory=list)
    analyses: dict[str, FunctionAnalysis] = field(default_factory=dict)
    encoded: list[EncodedFunction] = field(default_factory=list)


def prepare(files: list[Path], library_dirs: Optional[list[Path]] = None,
            options: Optional[EncoderOptions] = None) -> PreparedProgram:
    """Run the front half of the verifier; frontend, flow and encoding errors propagate."""
    libraries = library_files(library_dirs if library_dirs is not None else [DEFAULT_LIBRARY])
    program = typecheck(parse_files(list(files), tuple(libraries)))
    prepared = PreparedProgram(program, check_program(program))
    if prepared.violations:
        return prepared
    for key in program.clients:
        instance = program.instances[key]
        analysis = analyze_function(program, instance)
        prepared.analyses[key] = analysis
        prepared.encoded.append(encode_function(program, analysis.graph, analysis.roots, options))
        logger.info(f"Encoded {key}: {len(prepared.encoded[-1].obligations)} obligations")
    return prepared
