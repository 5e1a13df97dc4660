"""Parser for .cap files: lark grammar plus a transformer building the AST."""
from __future__ import annotations

import logging
from functools import lru_cache
from pathlib import Path
from typing import Any

from lark import Lark, Token, Transformer, v_args
from lark.exceptions import UnexpectedCharacters, UnexpectedEOF, UnexpectedInput, VisitError

from caplet.errors import CapletError, FrontendError, LoopOrRecursionError
from caplet.lang import ast

logger = logging.getLogger(__name__)

GRAMMAR_PATH = Path(__file__).with_name("grammar.lark")

PURITY_FLAGS = {
    "pure": ast.Purity.VALUE,
    "pure_memory": ast.Purity.MEMORY,
    "pure_unstable": ast.Purity.UNSTABLE,
}
KNOWN_FLAGS = set(PURITY_FLAGS) | {"ghost_fn", "thread_shared", "borrowing", "extern_spec", "trusted"}


@lru_cache(maxsize=1)
def _parser() -> Lark:
    return Lark(
        GRAMMAR_PATH.read_text(encoding="utf-8"),
        parser="earley",
        ambiguity="resolve",
        propagate_positions=True,
        maybe_placeholders=True,
    )


def _span(meta: Any) -> ast.Span:
    if getattr(meta, "empty", True):
        return ast.NO_SPAN
    return ast.Span(meta.line, meta.column, meta.end_line, meta.end_column)


def _tok_span(tok: Token) -> ast.Span:
    return ast.Span(tok.line or 0, tok.column or 0, tok.end_line or 0, tok.end_column or 0)


def _present(items: list) -> list:
    return [i for i in items if i is not None]


_NO_BODY = object()


class _Attr:
    """Intermediate attribute value, folded into the following declaration."""

    def __init__(self, kind: str, value: Any, span: ast.Span):
        self.kind = kind
        self.value = value
        self.span = span


@v_args(meta=True)
class AstBuilder(Transformer):

    # --- items ---

    def start(self, meta, children):
        program = ast.Program()
        for item in children:
            if isinstance(item, ast.StructDecl):
                program.structs.append(item)
            elif isinstance(item, ast.EnumDecl):
                program.enums.append(item)
            elif isinstance(item, ast.ImplBlock):
                program.impls.append(item)
            elif isinstance(item, ast.FunctionDecl):
                program.functions.append(item)
        return program

    def item(self, meta, children):
        *attrs, decl = children
        if isinstance(decl, ast.FunctionDecl):
            _apply_fn_attrs(decl, attrs)
        elif isinstance(decl, (ast.StructDecl, ast.ImplBlock)):
            for attr in attrs:
                if attr.kind == "capable":
                    decl.annotations.append(attr.value)
                elif attr.kind == "flag" and attr.value == "thread_shared":
                    decl.thread_shared = True
                elif attr.kind == "flag" and attr.value == "borrowing" and isinstance(decl, ast.StructDecl):
                    decl.borrowing = True
                elif attr.kind == "flag" and attr.value in ("extern_spec", "trusted"):
                    continue
                else:
                    raise FrontendError(f"attribute `{attr.value}` is not allowed here", attr.span)
        elif attrs:
            raise FrontendError("attributes are not allowed on enum declarations", attrs[0].span)
        return decl

    def attribute(self, meta, children):
        return children[0]

    def requires_attr(self, meta, children):
        return _Attr("requires", children[0], _span(meta))

    def ensures_attr(self, meta, children):
        return _Attr("ensures", children[0], _span(meta))

    def flag_attr(self, meta, children):
        name = str(children[0])
        if name not in KNOWN_FLAGS:
            raise FrontendError(f"unknown attribute `{name}`", _tok_span(children[0]))
        return _Attr("flag", name, _span(meta))

    def capable_attr(self, meta, children):
        if len(children) == 4:
            receiver, cond, kind, target = children
        else:
            receiver, kind, target = children
            cond = None
        annotation = ast.CapabilityAnnotation(receiver, cond, str(kind), target, _span(meta))
        return _Attr("capable", annotation, _span(meta))

    def shared_receiver(self, meta, children):
        return ast.Receiver.SHARED

    def mut_receiver(self, meta, children):
        return ast.Receiver.MUT

    def struct_decl(self, meta, children):
        name, *rest = children
        generics: list[str] = []
        if rest and isinstance(rest[0], list):
            generics = rest.pop(0)
        fields = [f for f in rest if isinstance(f, ast.FieldDecl)]
        return ast.StructDecl(str(name), generics, fields, span=_span(meta))

    def field_decl(self, meta, children):
        return ast.FieldDecl(str(children[0]), children[1])

    def enum_decl(self, meta, children):
        name, *rest = children
        generics: list[str] = []
        if rest and isinstance(rest[0], list):
            generics = rest.pop(0)
        return ast.EnumDecl(str(name), generics, list(rest), span=_span(meta))

    def variant(self, meta, children):
        payload = children[1] if len(children) > 1 else None
        return ast.VariantDecl(str(children[0]), payload)

    def impl_block(self, meta, children):
        generics: list[str] = []
        if isinstance(children[0], list):
            generics = children.pop(0)
        self_type, *methods = children
        block = ast.ImplBlock(generics, self_type, span=_span(meta))
        for method in methods:
            method.owner = self_type
            method.owner_generics = list(generics)
            block.methods.append(method)
        return block

    def method(self, meta, children):
        *attrs, decl = children
        _apply_fn_attrs(decl, attrs)
        return decl

    def fn_decl(self, meta, children):
        name, *middle, body = children
        generics: list[str] = []
        params: list[ast.Param] = []
        ret: ast.TypeExpr = ast.UNIT
        for child in middle:
            if isinstance(child, list):
                generics = child
            elif isinstance(child, ast.Param):
                params.append(child)
            elif isinstance(child, ast.TypeExpr):
                ret = child
        return ast.FunctionDecl(str(name), generics, params, ret,
                                body=None if body is _NO_BODY else body, span=_span(meta))

    def body_block(self, meta, children):
        return children[0]

    def body_none(self, meta, children):
        return _NO_BODY

    def generics(self, meta, children):
        return [str(c) for c in children]

    def self_shared(self, meta, children):
        return ast.Param("self", ast.SharedRef(ast.NamedType("Self")), is_self=True)

    def self_mut(self, meta, children):
        return ast.Param("self", ast.MutRef(ast.NamedType("Self")), is_self=True)

    def self_value(self, meta, children):
        return ast.Param("self", ast.NamedType("Self"), is_self=True)

    def named_param(self, meta, children):
        return ast.Param(str(children[0]), children[1])

    def mut_named_param(self, meta, children):
        return ast.Param(str(children[0]), children[1], mutable=True)

    # --- types ---

    def mut_ref_type(self, meta, children):
        return ast.MutRef(children[0])

    def shared_ref_type(self, meta, children):
        return ast.SharedRef(children[0])

    def const_ptr_type(self, meta, children):
        return ast.RawPtr(children[0], mutable=False)

    def mut_ptr_type(self, meta, children):
        return ast.RawPtr(children[0], mutable=True)

    def unit_type(self, meta, children):
        return ast.UNIT

    def tuple_type(self, meta, children):
        return ast.TupleType(tuple(_present(children)))

    def path_type(self, meta, children):
        name, *args = children
        return ast.NamedType(str(name), tuple(_present(args)))

    # --- statements ---

    def block(self, meta, children):
        return list(children)

    def let_stmt(self, meta, children):
        name, *rest = children
        declared = rest[0] if len(rest) == 2 else None
        return ast.Let(str(name), declared, rest[-1], span=_span(meta))

    def let_mut_stmt(self, meta, children):
        stmt = self.let_stmt(meta, children)
        stmt.mutable = True
        return stmt

    def let_else_stmt(self, meta, children):
        (variant, binder), rhs, otherwise = children
        arms = [
            ast.MatchArm(variant, binder, [], span=_span(meta)),
            ast.MatchArm("_", None, otherwise, span=_span(meta)),
        ]
        return ast.Match(rhs, arms, let_else=True, span=_span(meta))

    def assign_stmt(self, meta, children):
        return ast.Assign(children[0], children[1], span=_span(meta))

    def assert_stmt(self, meta, children):
        return ast.Assert(children[0], span=_span(meta))

    def if_stmt(self, meta, children):
        cond, then, *rest = children
        otherwise: list[ast.Stmt] = []
        if rest and rest[0] is not None:
            otherwise = rest[0] if isinstance(rest[0], list) else [rest[0]]
        return ast.IfElse(cond, then, otherwise, span=_span(meta))

    def match_stmt(self, meta, children):
        scrutinee, *arms = children
        return ast.Match(scrutinee, list(arms), span=_span(meta))

    def match_arm(self, meta, children):
        (variant, binder), body = children
        return ast.MatchArm(variant, binder, body, span=_span(meta))

    def return_stmt(self, meta, children):
        value = children[0] if children else None
        return ast.Return(value, span=_span(meta))

    def call_stmt(self, meta, children):
        expr = children[0]
        if isinstance(expr, ast.Call) and expr.name == "drop" and expr.receiver is None \
                and expr.owner is None and len(expr.args) == 1 and isinstance(expr.args[0], ast.Var):
            return ast.Drop(expr.args[0].name, span=_span(meta))
        if not isinstance(expr, ast.Call):
            raise FrontendError("expression statements must be calls", _span(meta))
        return ast.CallStmt(expr, span=_span(meta))

    def loop_stmt(self, meta, children):
        raise LoopOrRecursionError("loops are not supported", _span(meta))

    def binding_pattern(self, meta, children):
        binder = str(children[1])
        return (str(children[0]), None if binder == "_" else binder)

    def unit_pattern(self, meta, children):
        return (str(children[0]), None)

    # --- expressions ---

    def implies_op(self, meta, children):
        return ast.Binary("==>", children[0], children[1], span=_span(meta))

    def or_op(self, meta, children):
        return ast.Binary("||", children[0], children[1], span=_span(meta))

    def and_op(self, meta, children):
        return ast.Binary("&&", children[0], children[1], span=_span(meta))

    def compare(self, meta, children):
        return ast.Binary(str(children[1]), children[0], children[2], span=_span(meta))

    def arith(self, meta, children):
        return ast.Binary(str(children[1]), children[0], children[2], span=_span(meta))

    def mul_op(self, meta, children):
        return ast.Binary("*", children[0], children[1], span=_span(meta))

    def cast_op(self, meta, children):
        return ast.Cast(children[0], children[1], span=_span(meta))

    def neg_op(self, meta, children):
        operand = children[0]
        if isinstance(operand, ast.IntLit):
            return ast.IntLit(-operand.value, span=_span(meta))
        return ast.Unary("-", operand, span=_span(meta))

    def not_op(self, meta, children):
        return ast.Unary("!", children[0], span=_span(meta))

    def deref_op(self, meta, children):
        return ast.DerefExpr(children[0], span=_span(meta))

    def mut_borrow_op(self, meta, children):
        return ast.Borrow(children[0], mutable=True, span=_span(meta))

    def borrow_op(self, meta, children):
        return ast.Borrow(children[0], mutable=False, span=_span(meta))

    def method_call(self, meta, children):
        receiver, name, *args = children
        return ast.Call(str(name), _present(args), receiver=receiver, span=_span(meta))

    def field_access(self, meta, children):
        return ast.FieldAccess(children[0], str(children[1]), span=_span(meta))

    def tuple_index(self, meta, children):
        return ast.FieldAccess(children[0], str(children[1]), span=_span(meta))

    def int_lit(self, meta, children):
        return ast.IntLit(int(children[0]), span=_span(meta))

    def true_lit(self, meta, children):
        return ast.BoolLit(True, span=_span(meta))

    def false_lit(self, meta, children):
        return ast.BoolLit(False, span=_span(meta))

    def fn_call(self, meta, children):
        name, *args = children
        return ast.Call(str(name), _present(args), span=_span(meta))

    def path_call(self, meta, children):
        owner, name, *args = children
        return ast.Call(str(name), _present(args), owner=ast.NamedType(str(owner)), span=_span(meta))

    def var(self, meta, children):
        return ast.Var(str(children[0]), span=_span(meta))

    def unit_lit(self, meta, children):
        return ast.UnitLit(span=_span(meta))

    def tuple_lit(self, meta, children):
        return ast.TupleExpr(_present(children), span=_span(meta))

    def old_expr(self, meta, children):
        return ast.Old(children[0], span=_span(meta))

    def if_let_expr(self, meta, children):
        (variant, binder), scrutinee, then, otherwise = children
        return ast.IfLet(variant, binder, scrutinee, then, otherwise, span=_span(meta))

    def cond_expr(self, meta, children):
        return ast.Conditional(children[0], children[1], children[2], span=_span(meta))


def _apply_fn_attrs(decl: ast.FunctionDecl, attrs: list[_Attr]) -> None:
    for attr in attrs:
        if attr.kind == "requires":
            decl.requires.append(attr.value)
        elif attr.kind == "ensures":
            decl.ensures.append(attr.value)
        elif attr.kind == "flag" and attr.value in PURITY_FLAGS:
            if decl.purity is not ast.Purity.NONE:
                raise FrontendError(f"`{decl.name}` carries more than one purity attribute", attr.span)
            decl.purity = PURITY_FLAGS[attr.value]
        elif attr.kind == "flag" and attr.value == "ghost_fn":
            decl.ghost = True
        elif attr.kind == "flag" and attr.value in ("extern_spec", "trusted"):
            continue
        else:
            raise FrontendError(f"attribute `{attr.value if attr.kind == 'flag' else attr.kind}` "
                                f"is not allowed on functions", attr.span)


def parse_program(source: str, filename: str = "<input>", library: bool = False) -> ast.Program:
    """Parse Caplet source text into an (untyped) program.

    Declarations from library files are marked so the verifier trusts their
    specifications instead of verifying their bodies.
    """
    if not source.strip():
        return ast.Program(filename=filename)
    try:
        tree = _parser().parse(source)
        program = AstBuilder().transform(tree)
    except UnexpectedCharacters as e:
        raise FrontendError(f"unexpected character {source[e.pos_in_stream]!r}",
                            ast.Span(e.line, e.column), filename) from None
    except UnexpectedEOF:
        lines = source.splitlines() or [""]
        raise FrontendError("unexpected end of input", ast.Span(len(lines), len(lines[-1]) + 1),
                            filename) from None
    except UnexpectedInput as e:
        raise FrontendError("syntax error", ast.Span(getattr(e, "line", 0), getattr(e, "column", 0)),
                            filename) from None
    except VisitError as e:
        if isinstance(e.orig_exc, CapletError):
            e.orig_exc.filename = filename
            raise e.orig_exc from None
        raise
    program.filename = filename
    _mark_origin(program, filename, library)
    logger.debug(f"Parsed {filename}: {len(program.structs)} structs, {len(program.enums)} enums, "
                 f"{len(program.impls)} impls, {len(program.functions)} functions")
    return program


def _mark_origin(program: ast.Program, filename: str, library: bool) -> None:
    decls: list = [*program.structs, *program.enums, *program.impls, *program.functions]
    for impl in program.impls:
        decls.extend(impl.methods)
    for decl in decls:
        decl.origin = filename
        decl.library = library


def parse_file(path: str | Path, library: bool = False) -> ast.Program:
    path = Path(path)
    return parse_program(path.read_text(encoding="utf-8"), str(path), library=library)


def parse_files(paths: list[str | Path], library_paths: tuple[str | Path, ...] = ()) -> ast.Program:
    """Parse library specification files followed by client files into one program."""
    merged = ast.Program()
    tagged = [(p, True) for p in library_paths] + [(p, False) for p in paths]
    for path, library in tagged:
        part = parse_file(path, library=library)
        merged.structs.extend(part.structs)
        merged.enums.extend(part.enums)
        merged.impls.extend(part.impls)
        merged.functions.extend(part.functions)
        merged.filename = part.filename
    return merged
