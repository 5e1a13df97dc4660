"""Control-flow graph of a normalized function body.

Points are numbered in creation order, which is also a topological order:
every edge goes from a smaller to a larger point id. Each point owns a
memory version ``v$<id>`` and each edge a transition version ``t$<id>``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from caplet.lang import ast
from caplet.lang.typecheck import FunctionInstance, TypedProgram

logger = logging.getLogger(__name__)


class EdgeKind(str, Enum):
    STATEMENT = "statement"
    ASSUME = "assume"
    INTERFERENCE = "interference"
    JOIN = "join"
    RETURN = "return"


@dataclass(eq=False)
class Guard:
    """Branch condition of an assume edge: a boolean test or one arm of a match."""
    cond: Optional[ast.Expr] = None
    negated: bool = False
    scrutinee: Optional[ast.Expr] = None
    arm: Optional[ast.MatchArm] = None

    @property
    def binder(self) -> Optional[str]:
        return self.arm.binder if self.arm is not None else None


@dataclass(eq=False)
class ProgramPoint:
    id: int
    scope: frozenset[str] = frozenset()
    terminal: bool = False
    statement_after: Optional[ast.Stmt] = None

    @property
    def version(self) -> str:
        return f"v${self.id}"

    @property
    def reach(self) -> str:
        return f"reach${self.id}"


@dataclass(eq=False)
class Edge:
    id: int
    kind: EdgeKind
    source: int
    target: int
    stmt: Optional[ast.Stmt] = None
    guard: Optional[Guard] = None
    span: ast.Span = ast.NO_SPAN

    @property
    def transition(self) -> str:
        return f"t${self.id}"


@dataclass
class ProgramGraph:
    instance: FunctionInstance
    points: list[ProgramPoint] = field(default_factory=list)
    edges: list[Edge] = field(default_factory=list)
    final: Optional[int] = None
    interference: bool = False

    @property
    def entry(self) -> ProgramPoint:
        return self.points[0]

    def point(self, pid: int) -> ProgramPoint:
        return self.points[pid]

    def outgoing(self, pid: int) -> list[Edge]:
        return [e for e in self.edges if e.source == pid]

    def incoming(self, pid: int) -> list[Edge]:
        return [e for e in self.edges if e.target == pid]

    def ancestors(self, pid: int) -> set[int]:
        """``pid`` together with every point that can reach it."""
        seen = {pid}
        stack = [pid]
        while stack:
            current = stack.pop()
            for edge in self.incoming(current):
                if edge.source not in seen:
                    seen.add(edge.source)
                    stack.append(edge.source)
        return seen


class GraphBuilder:

    def __init__(self, program: TypedProgram, instance: FunctionInstance):
        self.program = program
        self.instance = instance
        self.graph = ProgramGraph(instance)
        self.graph.interference = any(program.is_thread_shared(t) for t in instance.variables.values())

    def build(self) -> ProgramGraph:
        entry = self._point(frozenset(p.name for p in self.instance.params))
        body = self.instance.decl.body or []
        self.graph.final = self._block(body, entry.id)
        logger.debug(f"Built graph for {self.instance.key}: {len(self.graph.points)} points, "
                     f"{len(self.graph.edges)} edges")
        return self.graph

    def _point(self, scope: frozenset[str], terminal: bool = False) -> ProgramPoint:
        point = ProgramPoint(len(self.graph.points), scope, terminal)
        self.graph.points.append(point)
        return point

    def _edge(self, kind: EdgeKind, source: int, target: int, stmt: Optional[ast.Stmt] = None,
              guard: Optional[Guard] = None, span: ast.Span = ast.NO_SPAN) -> Edge:
        edge = Edge(len(self.graph.edges), kind, source, target, stmt, guard, span)
        self.graph.edges.append(edge)
        return edge

    def _step(self, kind: EdgeKind, source: int, stmt: Optional[ast.Stmt] = None,
              declares: Optional[str] = None, span: ast.Span = ast.NO_SPAN) -> int:
        scope = self.graph.point(source).scope
        target = self._point(scope | {declares} if declares else scope)
        self._edge(kind, source, target.id, stmt, span=span)
        return target.id

    def _block(self, block: list[ast.Stmt], current: Optional[int]) -> Optional[int]:
        for stmt in block:
            if current is None:
                break
            current = self._stmt(stmt, current)
        return current

    def _stmt(self, stmt: ast.Stmt, current: int) -> Optional[int]:
        if self.graph.interference:
            current = self._step(EdgeKind.INTERFERENCE, current, span=stmt.span)
        if isinstance(stmt, ast.IfElse):
            return self._if_else(stmt, current)
        if isinstance(stmt, ast.Match):
            return self._match(stmt, current)
        if isinstance(stmt, ast.Return):
            self.graph.point(current).statement_after = stmt
            terminal = self._point(self.graph.point(current).scope, terminal=True)
            self._edge(EdgeKind.RETURN, current, terminal.id, stmt, span=stmt.span)
            return None
        self.graph.point(current).statement_after = stmt
        declares = stmt.name if isinstance(stmt, ast.Let) else None
        return self._step(EdgeKind.STATEMENT, current, stmt, declares, stmt.span)

    def _branch(self, source: int, guard: Guard, declares: Optional[str], span: ast.Span) -> int:
        scope = self.graph.point(source).scope
        entry = self._point(scope | {declares} if declares else scope)
        self._edge(EdgeKind.ASSUME, source, entry.id, guard=guard, span=span)
        return entry.id

    def _join(self, source: int, ends: list[Optional[int]]) -> Optional[int]:
        live_ends = [end for end in ends if end is not None]
        if not live_ends:
            return None
        join = self._point(self.graph.point(source).scope)
        for end in live_ends:
            self._edge(EdgeKind.JOIN, end, join.id)
        return join.id

    def _if_else(self, stmt: ast.IfElse, current: int) -> Optional[int]:
        then_entry = self._branch(current, Guard(cond=stmt.cond), None, stmt.span)
        else_entry = self._branch(current, Guard(cond=stmt.cond, negated=True), None, stmt.span)
        then_end = self._block(stmt.then, then_entry)
        else_end = self._block(stmt.otherwise, else_entry)
        return self._join(current, [then_end, else_end])

    def _match(self, stmt: ast.Match, current: int) -> Optional[int]:
        entries = [self._branch(current, Guard(scrutinee=stmt.scrutinee, arm=arm), arm.binder,
                                 arm.span if arm.span != ast.NO_SPAN else stmt.span)
                   for arm in stmt.arms]
        if stmt.let_else:
            self._block(stmt.arms[1].body, entries[1])
            return entries[0]
        ends = [self._block(arm.body, entry) for arm, entry in zip(stmt.arms, entries)]
        return self._join(current, ends)


def build_graph(program: TypedProgram, instance: FunctionInstance) -> ProgramGraph:
    return GraphBuilder(program, instance).build()
