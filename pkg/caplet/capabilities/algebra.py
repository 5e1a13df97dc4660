"""Capability kinds, their implication lattice and the structural rules."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Iterable, Union

from caplet.lang import ast


class CapKind(str, Enum):
    READ_REF = "readRef"
    WRITE_REF = "writeRef"
    READ = "read"
    WRITE = "write"
    IMMUTABLE = "immutable"
    UNIQUE = "unique"
    LOCAL = "local"
    NO_READ_REF = "noReadRef"
    NO_WRITE_REF = "noWriteRef"


DENY_KINDS = frozenset({CapKind.NO_READ_REF, CapKind.NO_WRITE_REF})

KIND_BY_NAME = {kind.value: kind for kind in CapKind}


@dataclass(frozen=True)
class Edge:
    source: CapKind
    target: CapKind
    extended: bool = False


@dataclass(frozen=True)
class EdgeTable:
    implications: frozenset[Edge]
    incompatibilities: frozenset[frozenset[CapKind]]
    # Pairs (deny, reading) whose holders must be the same root.
    exclusions: frozenset[tuple[CapKind, CapKind]] = frozenset()

    def implied_by(self, kind: CapKind) -> list[CapKind]:
        return sorted((e.target for e in self.implications if e.source is kind), key=_order)

    def pairs(self) -> list[tuple[CapKind, CapKind]]:
        """Incompatible pairs in a fixed order, each listed once."""
        ordered = [tuple(sorted(pair, key=_order)) for pair in self.incompatibilities]
        return sorted(ordered, key=lambda p: (_order(p[0]), _order(p[1])))


def _order(kind: CapKind) -> int:
    return list(CapKind).index(kind)


@lru_cache(maxsize=1)
def base_edges() -> EdgeTable:
    implications = frozenset({
        Edge(CapKind.WRITE_REF, CapKind.READ_REF),
        Edge(CapKind.WRITE_REF, CapKind.UNIQUE),
        Edge(CapKind.READ_REF, CapKind.IMMUTABLE),
        Edge(CapKind.IMMUTABLE, CapKind.READ),
        Edge(CapKind.UNIQUE, CapKind.WRITE, extended=True),
    })
    incompatibilities = frozenset({
        frozenset({CapKind.IMMUTABLE, CapKind.WRITE}),
        frozenset({CapKind.UNIQUE, CapKind.READ}),
        frozenset({CapKind.UNIQUE, CapKind.WRITE}),
    })
    return EdgeTable(implications, incompatibilities, frozenset({(CapKind.NO_READ_REF, CapKind.READ)}))


def implication_closure(kinds: Iterable[CapKind]) -> frozenset[CapKind]:
    table = base_edges()
    seen = set(kinds)
    stack = list(seen)
    while stack:
        kind = stack.pop()
        for target in table.implied_by(kind):
            if target not in seen:
                seen.add(target)
                stack.append(target)
    return frozenset(seen)


def incompatible(k1: CapKind, k2: CapKind) -> bool:
    pairs = base_edges().incompatibilities
    c1, c2 = implication_closure({k1}), implication_closure({k2})
    return any(frozenset({a, b}) in pairs for a in c1 for b in c2 if a is not b)


def deny_exclusions() -> list[tuple[CapKind, CapKind]]:
    return sorted(base_edges().exclusions, key=lambda p: (_order(p[0]), _order(p[1])))


Projection = Union[ast.Deref, ast.FieldProj]

_FIELD_KINDS = frozenset(CapKind) - DENY_KINDS
_EXTENDED_PAIRS = frozenset({frozenset({CapKind.UNIQUE, CapKind.WRITE})})


def structural_children(kind: CapKind, place_type: ast.TypeExpr,
                        fields: list[tuple[str, ast.TypeExpr]] | None = None) -> list[tuple[Projection, CapKind]]:
    """Capabilities a place of ``place_type`` passes on to its sub-places.

    ``fields`` lists the (name, type) components of a struct or tuple type;
    tuples fall back to their own element list when it is omitted.
    """
    if isinstance(place_type, (ast.RawPtr, ast.UnsafeCellOf)):
        return []
    if isinstance(place_type, ast.TupleType) and fields is None:
        fields = [(str(i), t) for i, t in enumerate(place_type.elements)]
    if isinstance(place_type, (ast.StructType, ast.TupleType)):
        if kind not in _FIELD_KINDS:
            return []
        return [(ast.FieldProj(name), kind) for name, ty in (fields or [])
                if not isinstance(ty, ast.UnsafeCellOf)]
    if isinstance(place_type, ast.MutRef) and kind is CapKind.WRITE_REF:
        return [(ast.Deref(), CapKind.WRITE_REF)]
    if isinstance(place_type, (ast.SharedRef, ast.MutRef)) and kind is CapKind.READ_REF:
        return [(ast.Deref(), CapKind.READ_REF)]
    return []


def lattice_dot() -> str:
    """The edge table as a DOT graph; extended edges are drawn bold."""
    table = base_edges()
    lines = ["digraph capabilities {", "  rankdir=BT;"]
    for kind in CapKind:
        lines.append(f'  "{kind.value}";')
    for edge in sorted(table.implications, key=lambda e: (_order(e.source), _order(e.target))):
        style = "" if not edge.extended else " [style=bold, label=\"extended\"]"
        lines.append(f'  "{edge.source.value}" -> "{edge.target.value}"{style};')
    for a, b in table.pairs():
        label = ", label=\"extended\"" if frozenset({a, b}) in _EXTENDED_PAIRS else ""
        lines.append(f'  "{a.value}" -> "{b.value}" [dir=none, style=dashed{label}];')
    for deny, kind in deny_exclusions():
        lines.append(f'  "{deny.value}" -> "{kind.value}" [dir=none, style=dotted];')
    lines.append("}")
    return "\n".join(lines) + "\n"
