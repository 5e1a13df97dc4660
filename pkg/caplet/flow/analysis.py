from __future__ import annotations

import logging
from dataclasses import dataclass

from caplet.flow.cfg import ProgramGraph, build_graph
from caplet.flow.liveness import Liveness, analyze
from caplet.flow.normalize import normalize
from caplet.flow.roots import RootTable, compute_roots
from caplet.lang.typecheck import FunctionInstance, TypedProgram

logger = logging.getLogger(__name__)


@dataclass
class FunctionAnalysis:
    graph: ProgramGraph
    liveness: Liveness
    roots: RootTable


def analyze_function(program: TypedProgram, instance: FunctionInstance) -> FunctionAnalysis:
    """Normalize a bodied function, then build its graph, liveness and root table."""
    normalize(program, instance)
    graph = build_graph(program, instance)
    liveness = analyze(program, graph)
    roots = compute_roots(program, graph, liveness)
    logger.debug(f"Analyzed {instance.key}")
    return FunctionAnalysis(graph, liveness, roots)
