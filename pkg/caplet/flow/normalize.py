"""Hoisting of impure calls into their own ``let`` statements.

After normalization an impure call only appears as the whole right-hand side
of a ``let`` or as a call statement returning unit, and every ``match``
scrutinee is a variable. Hoisted temporaries are named ``$t1``, ``$t2``, ...
and carry the span of the statement they were taken from.
"""
from __future__ import annotations

import logging
from typing import Optional

from caplet.errors import EncodingError
from caplet.lang import ast
from caplet.lang.typecheck import BUILTIN_DEREF, FunctionInstance, TypedProgram

logger = logging.getLogger(__name__)


def is_impure_call(program: TypedProgram, e: ast.Expr) -> bool:
    if not isinstance(e, ast.Call) or e.variant is not None or e.target in (None, BUILTIN_DEREF):
        return False
    return not program.instances[e.target].is_pure


class Normalizer:

    def __init__(self, program: TypedProgram, instance: FunctionInstance):
        self.program = program
        self.instance = instance
        self.counter = 0

    def run(self) -> None:
        body = self.instance.decl.body
        if body is None:
            return
        self.instance.decl.body = self._block(body)
        if self.counter:
            logger.debug(f"Hoisted {self.counter} temporaries in {self.instance.key}")

    def _temp(self, e: ast.Expr, out: list[ast.Stmt], span: ast.Span) -> ast.Var:
        self.counter += 1
        name = f"$t{self.counter}"
        while name in self.instance.variables:
            self.counter += 1
            name = f"$t{self.counter}"
        self.instance.variables[name] = e.ty
        out.append(ast.Let(name, None, e, var_type=e.ty, span=span))
        return ast.Var(name, span=e.span, ty=e.ty)

    def _block(self, block: list[ast.Stmt]) -> list[ast.Stmt]:
        out: list[ast.Stmt] = []
        for stmt in block:
            self._stmt(stmt, out)
        return out

    def _stmt(self, stmt: ast.Stmt, out: list[ast.Stmt]) -> None:
        span = stmt.span
        if isinstance(stmt, ast.Let):
            stmt.rhs = self._top(stmt.rhs, out, span)
        elif isinstance(stmt, ast.Assign):
            stmt.target = self._hoist(stmt.target, out, span)
            stmt.rhs = self._operand(stmt.rhs, out, span)
        elif isinstance(stmt, ast.CallStmt):
            call = self._top(stmt.call, out, span)
            if is_impure_call(self.program, call) and call.ty != ast.UNIT:
                self._temp(call, out, span)
                return
            stmt.call = call
        elif isinstance(stmt, ast.Assert):
            stmt.cond = self._hoist(stmt.cond, out, span)
        elif isinstance(stmt, ast.IfElse):
            stmt.cond = self._hoist(stmt.cond, out, span)
            stmt.then = self._block(stmt.then)
            stmt.otherwise = self._block(stmt.otherwise)
        elif isinstance(stmt, ast.Match):
            scrutinee = self._hoist(stmt.scrutinee, out, span)
            if not isinstance(scrutinee, ast.Var):
                scrutinee = self._temp(scrutinee, out, span)
            stmt.scrutinee = scrutinee
            for arm in stmt.arms:
                arm.body = self._block(arm.body)
        elif isinstance(stmt, ast.Return) and stmt.value is not None:
            stmt.value = self._operand(stmt.value, out, span)
        out.append(stmt)

    def _top(self, e: ast.Expr, out: list[ast.Stmt], span: ast.Span) -> ast.Expr:
        """Hoist inside ``e`` but leave an impure call at the root in place."""
        if is_impure_call(self.program, e):
            e.args = [self._hoist(a, out, span) for a in e.args]
            return e
        return self._hoist(e, out, span)

    def _operand(self, e: ast.Expr, out: list[ast.Stmt], span: ast.Span) -> ast.Expr:
        e = self._top(e, out, span)
        if is_impure_call(self.program, e):
            return self._temp(e, out, span)
        return e

    def _hoist(self, e: ast.Expr, out: list[ast.Stmt], span: ast.Span, guarded: Optional[str] = None) -> ast.Expr:
        if isinstance(e, ast.Call):
            e.args = [self._hoist(a, out, span, guarded) for a in e.args]
            if is_impure_call(self.program, e):
                if guarded is not None:
                    raise EncodingError(f"impure call `{e.target}` inside {guarded}", e.span)
                return self._temp(e, out, span)
            return e
        if isinstance(e, (ast.Unary, ast.DerefExpr, ast.Borrow, ast.Cast, ast.Old)):
            e.operand = self._hoist(e.operand, out, span, guarded)
        elif isinstance(e, ast.FieldAccess):
            e.base = self._hoist(e.base, out, span, guarded)
        elif isinstance(e, ast.Binary):
            e.left = self._hoist(e.left, out, span, guarded)
            lazy = "a short-circuit operator" if e.op in ("&&", "||", "==>") else guarded
            e.right = self._hoist(e.right, out, span, lazy)
        elif isinstance(e, ast.Conditional):
            e.cond = self._hoist(e.cond, out, span, guarded)
            e.then = self._hoist(e.then, out, span, "a conditional branch")
            e.otherwise = self._hoist(e.otherwise, out, span, "a conditional branch")
        elif isinstance(e, ast.IfLet):
            e.scrutinee = self._hoist(e.scrutinee, out, span, guarded)
            e.then = self._hoist(e.then, out, span, "a conditional branch")
            e.otherwise = self._hoist(e.otherwise, out, span, "a conditional branch")
        elif isinstance(e, ast.TupleExpr):
            e.elements = [self._hoist(x, out, span, guarded) for x in e.elements]
        return e


def normalize(program: TypedProgram, instance: FunctionInstance) -> None:
    Normalizer(program, instance).run()
