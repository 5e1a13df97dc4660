"""Proof obligations and the per-obligation SMT queries built from an encoded function."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

from caplet.encoder import smt
from caplet.flow.cfg import ProgramGraph
from caplet.lang import ast

logger = logging.getLogger(__name__)

FRAMING_FAMILIES = ("immutable", "unique", "local")


class ObligationKind(str, Enum):
    ASSERT = "assert"
    PRECONDITION = "precondition"
    POSTCONDITION = "postcondition"


_KIND_ORDER = {ObligationKind.ASSERT: 0, ObligationKind.PRECONDITION: 1, ObligationKind.POSTCONDITION: 2}


@dataclass
class Obligation:
    kind: ObligationKind
    goal: str
    point: int
    span: ast.Span
    function: str
    filename: str = "<input>"
    hypotheses: list[str] = field(default_factory=list)
    description: str = ""
    creation: int = 0
    index: int = -1

    def sort_key(self) -> tuple:
        return (self.span.sort_key(), _KIND_ORDER[self.kind], self.creation)


@dataclass(frozen=True)
class EncoderOptions:
    # framing families left out of the encoding, a subset of FRAMING_FAMILIES
    disabled_framing: frozenset[str] = frozenset()
    max_call_depth: int = 2
    # state the global axioms once per type with triggers instead of instantiating them per term
    quantified_axioms: bool = False

    def framing(self, family: str) -> bool:
        return family not in self.disabled_framing


def sanitize(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name)


@dataclass
class EncodedFunction:
    """Everything needed to print one solver query per obligation of a function."""
    key: str
    graph: ProgramGraph
    prelude: list[str]
    global_facts: list[str]
    edge_conds: dict[int, str]
    edge_facts: dict[int, list[str]]
    point_facts: dict[int, list[str]]
    obligations: list[Obligation]

    def _reach(self, pid: int) -> str:
        if pid == self.graph.entry.id:
            return smt.TRUE
        return smt.or_(*(self.edge_conds[e.id] for e in self.graph.incoming(pid)))

    def query(self, obligation: Obligation) -> str:
        ancestors = self.graph.ancestors(obligation.point)
        lines = [f"; {obligation.kind.value} at {obligation.span} in {self.key}", *self.prelude]
        lines.extend(f"(assert {fact})" for fact in self.global_facts)
        for point in self.graph.points:
            if point.id in ancestors:
                lines.append(f"(define-fun {point.reach} () Bool {self._reach(point.id)})")
        for edge in self.graph.edges:
            if edge.target not in ancestors:
                continue
            cond = self.edge_conds[edge.id]
            lines.extend(f"(assert {smt.implies(cond, fact)})" for fact in self.edge_facts.get(edge.id, []))
        for point in self.graph.points:
            if point.id in ancestors:
                lines.extend(f"(assert {fact})" for fact in self.point_facts.get(point.id, []))
        for earlier in self.obligations:
            if earlier is obligation or earlier.point not in ancestors:
                continue
            if earlier.point == obligation.point and earlier.creation >= obligation.creation:
                continue
            held = smt.implies(smt.and_(*earlier.hypotheses), earlier.goal)
            lines.append(f"(assert {smt.implies(self.graph.point(earlier.point).reach, held)})")
        lines.append(f"(assert {self.graph.point(obligation.point).reach})")
        lines.extend(f"(assert {h})" for h in obligation.hypotheses)
        lines.append(f"(assert {smt.not_(obligation.goal)})")
        lines.append("(check-sat)")
        return "\n".join(lines) + "\n"

    def scripts(self) -> list[tuple[Obligation, str]]:
        return [(o, self.query(o)) for o in self.obligations]

    def write(self, out_dir: Path, only: Optional[list[Obligation]] = None) -> list[Path]:
        """Write ``<out_dir>/<function>/<index>.smt2`` for each obligation."""
        directory = Path(out_dir) / sanitize(self.key)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for obligation in only if only is not None else self.obligations:
            path = directory / f"{obligation.index}.smt2"
            path.write_text(self.query(obligation), encoding="utf-8")
            paths.append(path)
        logger.debug(f"Wrote {len(paths)} scripts for {self.key} to {directory}")
        return paths


def number(obligations: list[Obligation]) -> list[Obligation]:
    ordered = sorted(obligations, key=Obligation.sort_key)
    for index, obligation in enumerate(ordered):
        obligation.index = index
    return ordered
