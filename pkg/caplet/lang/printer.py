"""Pretty printer for parsed programs.

The output re-parses to the same program: compound sub-expressions are always
parenthesized, so printing the re-parsed program yields the same text again.
"""
from __future__ import annotations

from caplet.lang import ast

INDENT = "    "

_FLAGS = {
    ast.Purity.VALUE: "pure",
    ast.Purity.MEMORY: "pure_memory",
    ast.Purity.UNSTABLE: "pure_unstable",
}


def format_expr(e: ast.Expr) -> str:
    if isinstance(e, ast.IntLit):
        return str(e.value)
    if isinstance(e, ast.BoolLit):
        return "true" if e.value else "false"
    if isinstance(e, ast.UnitLit):
        return "()"
    if isinstance(e, ast.Var):
        return e.name
    if isinstance(e, ast.Unary):
        return f"{e.op}{_wrap(e.operand)}"
    if isinstance(e, ast.DerefExpr):
        return f"*{_wrap(e.operand)}"
    if isinstance(e, ast.Borrow):
        return f"&mut {_wrap(e.operand)}" if e.mutable else f"&{_wrap(e.operand)}"
    if isinstance(e, ast.FieldAccess):
        return f"{_wrap(e.base)}.{e.name}"
    if isinstance(e, ast.Binary):
        return f"{_wrap(e.left)} {e.op} {_wrap(e.right)}"
    if isinstance(e, ast.Cast):
        return f"{_wrap(e.operand)} as {e.target}"
    if isinstance(e, ast.Call):
        return _call(e)
    if isinstance(e, ast.Old):
        return f"old({format_expr(e.operand)})"
    if isinstance(e, ast.Conditional):
        return (f"if {format_expr(e.cond)} {{ {format_expr(e.then)} }} "
                f"else {{ {format_expr(e.otherwise)} }}")
    if isinstance(e, ast.IfLet):
        return (f"if let {_pattern(e.variant, e.binder)} = {format_expr(e.scrutinee)} "
                f"{{ {format_expr(e.then)} }} else {{ {format_expr(e.otherwise)} }}")
    if isinstance(e, ast.TupleExpr):
        if len(e.elements) == 1:
            return f"({format_expr(e.elements[0])},)"
        return f"({', '.join(format_expr(x) for x in e.elements)})"
    raise TypeError(f"cannot print {type(e).__name__}")


def _atomic(e: ast.Expr) -> bool:
    if isinstance(e, ast.IntLit):
        return e.value >= 0
    return isinstance(e, (ast.BoolLit, ast.UnitLit, ast.Var, ast.FieldAccess, ast.Call,
                          ast.Old, ast.TupleExpr))


def _wrap(e: ast.Expr) -> str:
    text = format_expr(e)
    return text if _atomic(e) else f"({text})"


def _call(e: ast.Call) -> str:
    args = ", ".join(format_expr(a) for a in e.args)
    if e.receiver is not None:
        return f"{_wrap(e.receiver)}.{e.name}({args})"
    if e.owner is not None:
        owner = e.owner.name if isinstance(e.owner, (ast.NamedType, ast.StructType, ast.EnumType)) else e.owner
        return f"{owner}::{e.name}({args})"
    return f"{e.name}({args})"


def _pattern(variant: str, binder: str | None) -> str:
    return f"{variant}({binder})" if binder is not None else variant


# --- statements ---

def _block(stmts: list[ast.Stmt], depth: int) -> list[str]:
    lines = []
    for stmt in stmts:
        lines.extend(format_stmt(stmt, depth))
    return lines


def _braced(head: str, stmts: list[ast.Stmt], depth: int, tail: str = "") -> list[str]:
    pad = INDENT * depth
    return [f"{pad}{head}{{", *_block(stmts, depth + 1), f"{pad}}}{tail}"]


def format_stmt(stmt: ast.Stmt, depth: int = 0) -> list[str]:
    pad = INDENT * depth
    if isinstance(stmt, ast.Let):
        declared = f": {stmt.declared}" if stmt.declared is not None else ""
        mut = "mut " if stmt.mutable else ""
        return [f"{pad}let {mut}{stmt.name}{declared} = {format_expr(stmt.rhs)};"]
    if isinstance(stmt, ast.Assign):
        return [f"{pad}{_wrap(stmt.target)} = {format_expr(stmt.rhs)};"]
    if isinstance(stmt, ast.CallStmt):
        return [f"{pad}{format_expr(stmt.call)};"]
    if isinstance(stmt, ast.Drop):
        return [f"{pad}drop({stmt.name});"]
    if isinstance(stmt, ast.Assert):
        return [f"{pad}assert!({format_expr(stmt.cond)});"]
    if isinstance(stmt, ast.Return):
        return [f"{pad}return {format_expr(stmt.value)};" if stmt.value is not None else f"{pad}return;"]
    if isinstance(stmt, ast.IfElse):
        lines = _braced(f"if {format_expr(stmt.cond)} ", stmt.then, depth)
        if stmt.otherwise:
            lines[-1] += " else {"
            lines.extend(_block(stmt.otherwise, depth + 1))
            lines.append(f"{pad}}}")
        return lines
    if isinstance(stmt, ast.Match):
        if stmt.let_else:
            first, rest = stmt.arms
            return _braced(f"let {_pattern(first.variant, first.binder)} = {format_expr(stmt.scrutinee)} else ",
                           rest.body, depth, ";")
        lines = [f"{pad}match {format_expr(stmt.scrutinee)} {{"]
        for arm in stmt.arms:
            lines.extend(_braced(f"{_pattern(arm.variant, arm.binder)} => ", arm.body, depth + 1))
        lines.append(f"{pad}}}")
        return lines
    raise TypeError(f"cannot print {type(stmt).__name__}")


# --- declarations ---

def _annotation(a: ast.CapabilityAnnotation) -> str:
    receiver = "&self" if a.receiver is ast.Receiver.SHARED else "&mut self"
    condition = f" if {format_expr(a.condition)}" if a.condition is not None else ""
    return f"#[capable({receiver}{condition} => {a.kind}({format_expr(a.target)}))]"


def _generics(names: list[str]) -> str:
    return f"<{', '.join(names)}>" if names else ""


def _param(p: ast.Param) -> str:
    if p.is_self:
        if isinstance(p.ty, ast.MutRef):
            return "&mut self"
        return "&self" if isinstance(p.ty, ast.SharedRef) else "self"
    return f"{'mut ' if p.mutable else ''}{p.name}: {p.ty}"


def format_function(decl: ast.FunctionDecl, depth: int = 0) -> list[str]:
    pad = INDENT * depth
    lines = [f"{pad}#[requires({format_expr(r)})]" for r in decl.requires]
    lines.extend(f"{pad}#[ensures({format_expr(e)})]" for e in decl.ensures)
    if decl.purity in _FLAGS:
        lines.append(f"{pad}#[{_FLAGS[decl.purity]}]")
    if decl.ghost:
        lines.append(f"{pad}#[ghost_fn]")
    ret = f" -> {decl.ret}" if decl.ret != ast.UNIT else ""
    head = f"fn {decl.name}{_generics(decl.generics)}({', '.join(_param(p) for p in decl.params)}){ret}"
    if decl.body is None:
        lines.append(f"{pad}{head};")
    else:
        lines.extend(_braced(f"{head} ", decl.body, depth))
    return lines


def format_program(program: ast.Program) -> str:
    """Render a parsed program as source text."""
    chunks: list[list[str]] = []
    for struct in program.structs:
        lines = [_annotation(a) for a in struct.annotations]
        if struct.thread_shared:
            lines.append("#[thread_shared]")
        if struct.borrowing:
            lines.append("#[borrowing]")
        lines.append(f"struct {struct.name}{_generics(struct.generics)} {{")
        lines.extend(f"{INDENT}{f.name}: {f.ty}," for f in struct.fields)
        lines.append("}")
        chunks.append(lines)
    for enum in program.enums:
        variants = [f"{INDENT}{v.name}({v.payload})," if v.payload is not None else f"{INDENT}{v.name},"
                    for v in enum.variants]
        chunks.append([f"enum {enum.name}{_generics(enum.generics)} {{", *variants, "}"])
    for impl in program.impls:
        lines = [_annotation(a) for a in impl.annotations]
        if impl.thread_shared:
            lines.append("#[thread_shared]")
        lines.append(f"impl{_generics(impl.generics)} {impl.self_type} {{")
        for method in impl.methods:
            lines.extend(format_function(method, 1))
        lines.append("}")
        chunks.append(lines)
    for function in program.functions:
        chunks.append(format_function(function))
    return "\n\n".join("\n".join(chunk) for chunk in chunks) + ("\n" if chunks else "")
