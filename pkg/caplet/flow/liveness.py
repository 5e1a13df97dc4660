"""Variable liveness and borrow tracking over a program graph.

Copy variables are live until their last use, except shared reference
parameters, whose borrow outlives the body. Non-copy variables stay live
until the end of their scope unless they are moved or dropped earlier, so a
moved value stops being a root right after the statement that consumed it.
A ``let`` whose type can hold a borrow keeps the owned places it borrowed
(and everything its right-hand side variables borrowed) alive and demoted
while it is itself live.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

from caplet.capabilities.algebra import CapKind
from caplet.flow.cfg import Edge, EdgeKind, ProgramGraph
from caplet.lang import ast
from caplet.lang.typecheck import TypedProgram

logger = logging.getLogger(__name__)


class Use(IntEnum):
    READ = 1
    MUTATE = 2
    MOVE = 3


class _UseCollector:

    def __init__(self, program: TypedProgram, variables: dict[str, ast.TypeExpr]):
        self.program = program
        self.variables = variables
        self.uses: dict[str, Use] = {}

    def mark(self, name: str, use: Use) -> None:
        if name in self.variables:
            self.uses[name] = max(self.uses.get(name, use), use)

    def value(self, e: ast.Expr, consumed: bool = True) -> None:
        """``e`` is evaluated; when ``consumed``, a non-copy variable is moved out."""
        if isinstance(e, ast.Var):
            ty = self.variables.get(e.name)
            if ty is None:
                return
            if not consumed or self.program.is_copy(ty):
                self.mark(e.name, Use.READ)
            elif isinstance(ty, ast.MutRef):
                self.mark(e.name, Use.MUTATE)
            else:
                self.mark(e.name, Use.MOVE)
        elif isinstance(e, ast.Borrow):
            self.place(e.operand, Use.MUTATE if e.mutable else Use.READ)
        elif isinstance(e, (ast.FieldAccess, ast.DerefExpr)):
            self.place(e, Use.READ)
        else:
            for child in ast.child_exprs(e):
                self.value(child, consumed)

    def place(self, e: ast.Expr, use: Use) -> None:
        if isinstance(e, ast.Var):
            self.mark(e.name, use)
        elif isinstance(e, ast.FieldAccess):
            self.place(e.base, use)
        elif isinstance(e, ast.DerefExpr):
            if isinstance(e.operand, (ast.Var, ast.FieldAccess, ast.DerefExpr)):
                self.place(e.operand, use)
            else:
                self.value(e.operand)
        else:
            self.value(e)


def edge_uses(program: TypedProgram, graph: ProgramGraph, edge: Edge) -> dict[str, Use]:
    """How each variable is used by the statement or guard on ``edge``."""
    collector = _UseCollector(program, graph.instance.variables)
    stmt = edge.stmt
    if edge.kind is EdgeKind.ASSUME and edge.guard is not None:
        if edge.guard.cond is not None:
            collector.value(edge.guard.cond, consumed=False)
        elif edge.guard.scrutinee is not None:
            collector.value(edge.guard.scrutinee)
    elif isinstance(stmt, ast.Let):
        collector.value(stmt.rhs)
    elif isinstance(stmt, ast.Assign):
        collector.place(stmt.target, Use.MUTATE)
        collector.value(stmt.rhs)
    elif isinstance(stmt, ast.CallStmt):
        collector.value(stmt.call)
    elif isinstance(stmt, ast.Assert):
        collector.value(stmt.cond, consumed=False)
    elif isinstance(stmt, ast.Drop):
        collector.mark(stmt.name, Use.MOVE)
    elif isinstance(stmt, ast.Return) and stmt.value is not None:
        collector.value(stmt.value)
    return collector.uses


def edge_defs(edge: Edge) -> set[str]:
    if isinstance(edge.stmt, ast.Let) and edge.kind is EdgeKind.STATEMENT:
        return {edge.stmt.name}
    if edge.kind is EdgeKind.ASSUME and edge.guard is not None and edge.guard.binder is not None:
        return {edge.guard.binder}
    return set()


def _owned_root(e: ast.Expr) -> Optional[str]:
    """The variable owning the place ``e`` when no dereference is involved."""
    while isinstance(e, ast.FieldAccess):
        e = e.base
    return e.name if isinstance(e, ast.Var) else None


def spec_vars(exprs: list[ast.Expr]) -> set[str]:
    return {node.name for e in exprs for node in ast.walk_expr(e) if isinstance(node, ast.Var)}


@dataclass
class Liveness:
    graph: ProgramGraph
    program: TypedProgram
    live: dict[int, frozenset[str]] = field(default_factory=dict)
    moved: dict[int, frozenset[str]] = field(default_factory=dict)
    borrows: dict[str, frozenset[tuple[str, bool]]] = field(default_factory=dict)
    uses: dict[int, dict[str, Use]] = field(default_factory=dict)

    def live_at(self, pid: int) -> frozenset[str]:
        return self.live.get(pid, frozenset())

    def explicit_kind(self, name: str, pid: int) -> Optional[CapKind]:
        """The capability a live variable holds on its own slot, or None when it is mutably borrowed."""
        live = self.live_at(pid)
        if name not in live:
            return None
        shared = False
        for borrower in live:
            for owner, mutable in self.borrows.get(borrower, frozenset()):
                if owner != name:
                    continue
                if mutable:
                    return None
                shared = True
        ty = self.graph.instance.variables[name]
        if shared or isinstance(ty, ast.SharedRef):
            return CapKind.READ_REF
        return CapKind.WRITE_REF


class LivenessAnalysis:

    def __init__(self, program: TypedProgram, graph: ProgramGraph):
        self.program = program
        self.graph = graph
        self.variables = graph.instance.variables
        self.parameters = {p.name for p in graph.instance.params}
        self.result = Liveness(graph, program)

    def run(self) -> Liveness:
        for edge in self.graph.edges:
            self.result.uses[edge.id] = edge_uses(self.program, self.graph, edge)
        self._borrows()
        self._moved()
        copy_live = self._copy_liveness()
        for point in self.graph.points:
            owned = {v for v in point.scope - self.result.moved[point.id] if self._scoped(v)}
            live = owned | copy_live[point.id]
            self.result.live[point.id] = frozenset(self._with_owners(live))
        return self.result

    def _scoped(self, name: str) -> bool:
        ty = self.variables[name]
        if not self.program.is_copy(ty):
            return True
        return isinstance(ty, ast.SharedRef) and name in self.parameters

    def _borrows(self) -> None:
        borrows = self.result.borrows
        for edge in self.graph.edges:
            stmt = edge.stmt
            if edge.kind is EdgeKind.STATEMENT and isinstance(stmt, ast.Let):
                if not self.program.is_borrowing(stmt.var_type):
                    continue
                taken: set[tuple[str, bool]] = set()
                for node in ast.walk_expr(stmt.rhs):
                    if isinstance(node, ast.Borrow):
                        owner = _owned_root(node.operand)
                        if owner is not None and owner in self.variables \
                                and not ast.is_reference(self.variables[owner]):
                            taken.add((owner, node.mutable))
                    elif isinstance(node, ast.Var):
                        taken |= borrows.get(node.name, frozenset())
                if taken:
                    borrows[stmt.name] = frozenset(taken)
            elif edge.kind is EdgeKind.ASSUME and edge.guard is not None and edge.guard.binder is not None:
                scrutinee = edge.guard.scrutinee
                arm = edge.guard.arm
                if isinstance(scrutinee, ast.Var) and scrutinee.name in borrows \
                        and self.program.is_borrowing(arm.binder_type):
                    borrows[edge.guard.binder] = borrows[scrutinee.name]

    def _moved(self) -> None:
        moved: dict[int, set[str]] = {p.id: set() for p in self.graph.points}
        for point in self.graph.points:
            for edge in self.graph.outgoing(point.id):
                consumed = {v for v, use in self.result.uses[edge.id].items() if use is Use.MOVE}
                moved[edge.target] |= moved[point.id] | consumed
        self.result.moved = {pid: frozenset(names) for pid, names in moved.items()}

    def _copy_liveness(self) -> dict[int, set[str]]:
        decl = self.graph.instance.decl
        post_vars = spec_vars(decl.ensures) - {"result"}
        live: dict[int, set[str]] = {p.id: set() for p in self.graph.points}
        if self.graph.final is not None:
            live[self.graph.final] |= post_vars
        for point in reversed(self.graph.points):
            for edge in self.graph.outgoing(point.id):
                used = set(self.result.uses[edge.id])
                if edge.kind is EdgeKind.RETURN:
                    used |= post_vars
                live[point.id] |= used | (live[edge.target] - edge_defs(edge))
        return {pid: {v for v in names if v in self.variables and self.program.is_copy(self.variables[v])}
                for pid, names in live.items()}

    def _with_owners(self, live: set[str]) -> set[str]:
        result = set(live)
        stack = list(live)
        while stack:
            borrower = stack.pop()
            for owner, _ in self.result.borrows.get(borrower, frozenset()):
                if owner not in result:
                    result.add(owner)
                    stack.append(owner)
        return result


def analyze(program: TypedProgram, graph: ProgramGraph) -> Liveness:
    return LivenessAnalysis(program, graph).run()
