"""Syntactic checks for the three purity levels.

Rule ids:

- ``a`` parameters of pure functions have copy types
- ``b`` assignments only target local variables
- ``c`` callees are pure at a level no higher than the caller's
- ``d`` pure-value bodies do not read raw pointers or unsafe cells and do not observe addresses
- ``e`` pure-memory bodies do not read through raw pointers
- ``f`` pure-unstable bodies may use ``deref``; never reported
- ``g`` no impure calls, assertions or drops
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Optional

from caplet.lang import ast
from caplet.lang.typecheck import BUILTIN_DEREF, FunctionInstance, TypedProgram

logger = logging.getLogger(__name__)

LEVELS = {ast.Purity.VALUE: 1, ast.Purity.MEMORY: 2, ast.Purity.UNSTABLE: 3}


def level_of(purity: ast.Purity) -> int:
    return LEVELS.get(purity, 99)


@dataclass(frozen=True)
class Violation:
    rule: str
    span: ast.Span
    message: str
    function: str = ""
    filename: str = "<input>"

    def render(self) -> str:
        return f"{self.filename}:{self.span.line}:{self.span.col}: error: purity rule ({self.rule}): {self.message}"


def _sorted(violations: Iterable[Violation]) -> list[Violation]:
    return sorted(violations, key=lambda v: (v.span.sort_key(), v.rule, v.message))


class PurityChecker:

    def __init__(self, program: TypedProgram, instance: FunctionInstance):
        self.program = program
        self.instance = instance
        self.level = instance.purity
        self.locals: set[str] = set()
        self.violations: list[Violation] = []

    def report(self, rule: str, span: ast.Span, message: str) -> None:
        self.violations.append(Violation(rule, span, message, self.instance.key, self.instance.decl.origin))

    def run(self) -> list[Violation]:
        decl = self.instance.decl
        for param in decl.params:
            if not self.program.is_copy(param.ty):
                self.report("a", decl.span, f"parameter `{param.name}` of type `{param.ty}` is not a copy type")
        self._block(decl.body or [])
        return _sorted(self.violations)

    def _block(self, block: list[ast.Stmt]) -> None:
        for stmt in block:
            self._stmt(stmt)

    def _stmt(self, stmt: ast.Stmt) -> None:
        if isinstance(stmt, ast.Let):
            self.locals.add(stmt.name)
        elif isinstance(stmt, ast.Assign):
            if not self._local_place(stmt.target):
                self.report("b", stmt.span, "assignment to a place that is not a local variable")
        elif isinstance(stmt, ast.Assert):
            self.report("g", stmt.span, "assertion inside a pure function")
        elif isinstance(stmt, ast.Drop):
            self.report("g", stmt.span, f"drop of `{stmt.name}` inside a pure function")
        elif isinstance(stmt, ast.Match):
            for arm in stmt.arms:
                if arm.binder is not None:
                    self.locals.add(arm.binder)
        for e in ast.stmt_exprs(stmt):
            self._expr(e)
        if isinstance(stmt, ast.IfElse):
            self._block(stmt.then)
            self._block(stmt.otherwise)
        elif isinstance(stmt, ast.Match):
            for arm in stmt.arms:
                self._block(arm.body)

    def _local_place(self, e: ast.Expr) -> bool:
        while isinstance(e, ast.FieldAccess):
            e = e.base
        return isinstance(e, ast.Var) and e.name in self.locals

    def _expr(self, e: ast.Expr) -> None:
        for node in ast.walk_expr(e):
            if isinstance(node, ast.Call):
                self._call(node)
            elif isinstance(node, ast.FieldAccess) and isinstance(node.ty, ast.UnsafeCellOf):
                if self.level is ast.Purity.VALUE:
                    self.report("d", node.span, f"reads unsafe cell field `{node.name}`")
            elif isinstance(node, ast.Cast) and ast.is_reference(node.operand.ty):
                if self.level is ast.Purity.VALUE:
                    self.report("d", node.span, "casting a reference to a raw pointer observes its address")
            elif isinstance(node, ast.Binary) and node.op == "====" \
                    and self.program.contains_reference(node.left.ty):
                if self.level is ast.Purity.VALUE:
                    self.report("d", node.span, "`====` on references observes their addresses")

    def _call(self, call: ast.Call) -> None:
        if call.variant is not None:
            return
        if call.target == BUILTIN_DEREF:
            if self.level is ast.Purity.VALUE:
                self.report("d", call.span, "`deref` reads through a raw pointer")
            elif self.level is ast.Purity.MEMORY:
                self.report("e", call.span, "`deref` reads through a raw pointer")
            return
        callee = self.program.instances.get(call.target)
        if callee is None:
            return
        if not callee.is_pure:
            self.report("g", call.span, f"call to impure function `{callee.key}`")
        elif level_of(callee.purity) > level_of(self.level):
            rule = "d" if self.level is ast.Purity.VALUE else "c"
            self.report(rule, call.span, f"call to `{callee.key}` ({callee.purity.value}) "
                                         f"from a {self.level.value} function")


def check_purity(program: TypedProgram, instance: FunctionInstance) -> list[Violation]:
    """Check one bodied pure function; the result is sorted by source position."""
    if instance.decl.body is None or not instance.is_pure:
        return []
    return PurityChecker(program, instance).run()


def check_spec_purity(program: TypedProgram, spec: ast.Expr, level: ast.Purity = ast.Purity.UNSTABLE,
                      function: str = "", filename: str = "<input>") -> list[Violation]:
    """Every call in a specification must target a pure function at or below ``level``."""
    violations = []
    for node in ast.walk_expr(spec):
        if not isinstance(node, ast.Call) or node.variant is not None or node.target == BUILTIN_DEREF:
            continue
        callee = program.instances.get(node.target)
        if callee is None:
            continue
        if not callee.is_pure:
            violations.append(Violation("spec", node.span, f"specification calls impure function `{callee.key}`",
                                        function, filename))
        elif level_of(callee.purity) > level_of(level):
            violations.append(Violation("spec", node.span, f"specification calls `{callee.key}` "
                                                           f"({callee.purity.value}) above {level.value}",
                                        function, filename))
    return _sorted(violations)


def check_program(program: TypedProgram) -> list[Violation]:
    """Purity of every bodied pure function and of every specification in the program."""
    violations: list[Violation] = []
    for key in sorted(program.instances):
        instance = program.instances[key]
        origin = instance.decl.origin
        violations.extend(check_purity(program, instance))
        for spec in [*instance.decl.requires, *instance.decl.ensures]:
            violations.extend(check_spec_purity(program, spec, function=key, filename=origin))
        for stmt in ast.walk_stmts(instance.decl.body or []):
            if isinstance(stmt, ast.Assert):
                violations.extend(check_spec_purity(program, stmt.cond, function=key, filename=origin))
    for ty_key in sorted(program.annotations):
        decl = _struct_decl(program, program.types.get(ty_key))
        origin = decl.origin if decl is not None else "<input>"
        for annotation in program.annotations[ty_key]:
            exprs = [annotation.target] + ([annotation.condition] if annotation.condition is not None else [])
            for e in exprs:
                violations.extend(check_spec_purity(program, e, function=ty_key, filename=origin))
    if violations:
        logger.info(f"Found {len(violations)} purity violations")
    return sorted(violations, key=lambda v: (v.filename, v.span.sort_key(), v.rule))


def _struct_decl(program: TypedProgram, ty: Optional[ast.TypeExpr]) -> Optional[ast.StructDecl]:
    if isinstance(ty, ast.StructType):
        return program.checker.structs.get(ty.name)
    return None
