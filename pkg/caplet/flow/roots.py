"""Root places: the live variables whose capabilities are seeded at each point."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Optional

from caplet.capabilities.algebra import CapKind, implication_closure
from caplet.errors import FlowError
from caplet.flow.cfg import Edge, EdgeKind, ProgramGraph
from caplet.flow.liveness import Liveness, Use
from caplet.lang import ast
from caplet.lang.typecheck import TypedProgram

logger = logging.getLogger(__name__)


def variable_address(index: int, name: str) -> str:
    return f"addr${index}${name}"


@dataclass(frozen=True)
class RootPlace:
    id: int
    place: ast.Place
    ty: ast.TypeExpr
    kind: CapKind

    @property
    def address(self) -> str:
        return variable_address(self.id, self.place.base)


def check_disjoint(roots: list[RootPlace], span: ast.Span = ast.NO_SPAN) -> None:
    for i, a in enumerate(roots):
        for b in roots[i + 1:]:
            if a.place.is_prefix_of(b.place) or b.place.is_prefix_of(a.place):
                raise FlowError(f"root places `{a.place}` and `{b.place}` overlap", span)


def unused_roots(uses: dict[str, Use], roots: list[RootPlace]) -> list[RootPlace]:
    """The frame set of a statement: roots it does not mention at all."""
    return [r for r in roots if r.place.base not in uses]


@dataclass
class RootTable:
    graph: ProgramGraph
    liveness: Liveness
    index: dict[str, int]
    at_point: dict[int, list[RootPlace]] = field(default_factory=dict)

    def roots_at(self, pid: int) -> list[RootPlace]:
        return self.at_point.get(pid, [])

    def root_of(self, name: str, pid: int) -> Optional[RootPlace]:
        return next((r for r in self.roots_at(pid) if r.place.base == name), None)

    def frame_set(self, edge: Edge) -> list[RootPlace]:
        return unused_roots(self.liveness.uses.get(edge.id, {}), self.roots_at(edge.source))

    def held_across(self, root: RootPlace, edge: Edge, kind: Optional[CapKind] = None) -> bool:
        """True when ``root`` holds ``kind`` (its own kind by default) at both ends of ``edge``."""
        kind = kind or root.kind
        ends = [self.root_of(root.place.base, pid) for pid in (edge.source, edge.target)]
        return all(end is not None and kind in implication_closure([end.kind]) for end in ends)

    def transition_roots(self, edge: Edge) -> list[tuple[RootPlace, CapKind]]:
        """Capabilities seeded at the transition version of ``edge``.

        Unmentioned roots keep their explicit kind; roots the statement only
        reads and that stay live keep ReadRef; moved, assigned and mutably
        borrowed roots get nothing.
        """
        if edge.kind in (EdgeKind.JOIN, EdgeKind.RETURN):
            return []
        roots = self.roots_at(edge.source)
        if edge.kind is EdgeKind.INTERFERENCE:
            return [(r, r.kind) for r in roots]
        uses = self.liveness.uses.get(edge.id, {})
        seeded: list[tuple[RootPlace, CapKind]] = []
        for root in roots:
            use = uses.get(root.place.base)
            if use is None:
                seeded.append((root, root.kind))
            elif use is Use.READ and self.held_across(root, edge, CapKind.READ_REF):
                seeded.append((root, CapKind.READ_REF))
        return seeded

    def to_tsv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, delimiter="\t", lineterminator="\n")
        writer.writerow(["function", "point", "version", "root", "place", "kind", "type"])
        for point in self.graph.points:
            for root in self.roots_at(point.id):
                writer.writerow([self.graph.instance.key, point.id, point.version, root.id,
                                 str(root.place), root.kind.value, str(root.ty)])
        return out.getvalue()


def compute_roots(program: TypedProgram, graph: ProgramGraph, liveness: Liveness) -> RootTable:
    variables = graph.instance.variables
    index = {name: i for i, name in enumerate(variables)}
    table = RootTable(graph, liveness, index)
    for point in graph.points:
        if point.terminal:
            continue
        roots = []
        for name in sorted(liveness.live_at(point.id), key=index.__getitem__):
            kind = liveness.explicit_kind(name, point.id)
            if kind is not None:
                roots.append(RootPlace(index[name], ast.Place(name), variables[name], kind))
        check_disjoint(roots)
        table.at_point[point.id] = roots
    logger.debug(f"Computed roots for {graph.instance.key}: "
                 f"{sum(len(r) for r in table.at_point.values())} root instances")
    return table
