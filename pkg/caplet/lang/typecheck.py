"""Name resolution, type checking and on-demand monomorphization.

Generic declarations are never checked in the abstract: every use site asks
for a concrete instance (``Cell<i32>::get``), which is deep-copied from the
declaration, given concrete types and checked on its own. Method-call sugar is
rewritten into explicit borrows and dereferences so later passes see the
receiver as an ordinary first argument.
"""
from __future__ import annotations

import copy
import logging
from collections import defaultdict, deque
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Optional

from caplet.capabilities.algebra import KIND_BY_NAME
from caplet.errors import CapletError, LoopOrRecursionError, ResolutionError, TypeCheckError
from caplet.lang import ast

logger = logging.getLogger(__name__)

INT_NAMES = frozenset({"i32", "isize", "usize", "u32", "i64", "u64"})
BUILTIN_DEREF = "$deref"
_INFER = ast.NamedType("_")


@dataclass(eq=False)
class FunctionInstance:
    """One monomorphized function; ``decl`` is a private, fully typed copy."""
    key: str
    decl: ast.FunctionDecl
    owner: Optional[ast.TypeExpr]
    mapping: dict[str, ast.TypeExpr] = field(default_factory=dict)
    variables: dict[str, ast.TypeExpr] = field(default_factory=dict)
    mutable_vars: set[str] = field(default_factory=set)
    calls: set[str] = field(default_factory=set)

    @property
    def symbol(self) -> str:
        return "fn$" + self.key.replace("::", "$")

    @property
    def purity(self) -> ast.Purity:
        return self.decl.purity

    @property
    def is_pure(self) -> bool:
        return self.decl.purity is not ast.Purity.NONE

    @property
    def library(self) -> bool:
        return self.decl.library

    @property
    def params(self) -> list[ast.Param]:
        return self.decl.params

    @property
    def ret(self) -> ast.TypeExpr:
        return self.decl.ret

    def defining_expr(self) -> Optional[ast.Expr]:
        """The returned expression of a body made of a single ``return e;``."""
        body = self.decl.body
        if body and len(body) == 1 and isinstance(body[0], ast.Return) and body[0].value is not None:
            return body[0].value
        return None


class _Scope:
    def __init__(self, parent: Optional["_Scope"] = None):
        self.parent = parent
        self.vars: dict[str, tuple[str, ast.TypeExpr, bool]] = {}

    def declare(self, name: str, unique: str, ty: ast.TypeExpr, mutable: bool = False) -> None:
        self.vars[name] = (unique, ty, mutable)

    def lookup(self, name: str) -> Optional[tuple[str, ast.TypeExpr, bool]]:
        scope: Optional[_Scope] = self
        while scope is not None:
            if name in scope.vars:
                return scope.vars[name]
            scope = scope.parent
        return None

    def child(self) -> "_Scope":
        return _Scope(self)


@dataclass
class _Ctx:
    instance: Optional[FunctionInstance]
    mapping: dict[str, ast.TypeExpr]
    self_type: Optional[ast.TypeExpr]
    library: bool = False
    spec: bool = False
    allow_old: bool = False
    pure_body: bool = False

    def as_spec(self, allow_old: bool = False) -> "_Ctx":
        return _Ctx(self.instance, self.mapping, self.self_type, self.library, True, allow_old, self.pure_body)


@contextmanager
def _origin(filename: str):
    """Attach the declaring file to errors raised while checking one declaration."""
    try:
        yield
    except CapletError as e:
        if e.filename is None:
            e.filename = filename
        raise


def _head(ty: ast.TypeExpr) -> Optional[str]:
    if isinstance(ty, (ast.StructType, ast.EnumType)):
        return ty.name
    if isinstance(ty, ast.UnsafeCellOf):
        return "UnsafeCell"
    return None


def same_type(a: ast.TypeExpr, b: ast.TypeExpr, ignore_ptr_mut: bool = False) -> bool:
    if isinstance(a, ast.RawPtr) and isinstance(b, ast.RawPtr):
        return (ignore_ptr_mut or a.mutable == b.mutable) and same_type(a.inner, b.inner, ignore_ptr_mut)
    if type(a) is not type(b):
        return False
    if isinstance(a, (ast.SharedRef, ast.MutRef, ast.UnsafeCellOf)):
        return same_type(a.inner, b.inner, ignore_ptr_mut)
    if isinstance(a, (ast.StructType, ast.EnumType)):
        return a.name == b.name and len(a.args) == len(b.args) and all(
            same_type(x, y, ignore_ptr_mut) for x, y in zip(a.args, b.args))
    if isinstance(a, ast.TupleType):
        return len(a.elements) == len(b.elements) and all(
            same_type(x, y, ignore_ptr_mut) for x, y in zip(a.elements, b.elements))
    return a == b


def unify(pattern: ast.TypeExpr, actual: ast.TypeExpr, mapping: dict[str, ast.TypeExpr]) -> bool:
    """Bind the type parameters of ``pattern`` so it matches ``actual``."""
    if isinstance(pattern, ast.TypeParam):
        bound = mapping.get(pattern.name)
        if bound is None:
            mapping[pattern.name] = actual
            return True
        return same_type(bound, actual, ignore_ptr_mut=True)
    if isinstance(pattern, ast.SharedRef) and isinstance(actual, ast.MutRef):
        return unify(pattern.inner, actual.inner, mapping)
    if isinstance(pattern, ast.RawPtr) and isinstance(actual, ast.RawPtr):
        return unify(pattern.inner, actual.inner, mapping)
    if type(pattern) is not type(actual):
        return False
    if isinstance(pattern, (ast.SharedRef, ast.MutRef, ast.UnsafeCellOf)):
        return unify(pattern.inner, actual.inner, mapping)
    if isinstance(pattern, (ast.StructType, ast.EnumType)):
        return pattern.name == actual.name and len(pattern.args) == len(actual.args) and all(
            unify(p, a, mapping) for p, a in zip(pattern.args, actual.args))
    if isinstance(pattern, ast.TupleType):
        return len(pattern.elements) == len(actual.elements) and all(
            unify(p, a, mapping) for p, a in zip(pattern.elements, actual.elements))
    return pattern == actual


def always_returns(block: list[ast.Stmt]) -> bool:
    if not block:
        return False
    last = block[-1]
    if isinstance(last, ast.Return):
        return True
    if isinstance(last, ast.IfElse):
        return always_returns(last.then) and always_returns(last.otherwise)
    if isinstance(last, ast.Match) and not last.let_else:
        return all(always_returns(arm.body) for arm in last.arms)
    return False


@dataclass
class TypedProgram:
    """The checked program: function instances plus type-level queries."""
    program: ast.Program
    instances: dict[str, FunctionInstance]
    clients: list[str]
    annotations: dict[str, list[ast.CapabilityAnnotation]]
    types: dict[str, ast.TypeExpr]
    checker: "TypeChecker"

    def function(self, key: str) -> FunctionInstance:
        return self.instances[key]

    def fields_of(self, ty: ast.TypeExpr) -> list[tuple[str, ast.TypeExpr]]:
        return self.checker.fields_of(ty)

    def variants_of(self, ty: ast.EnumType) -> list[tuple[str, Optional[ast.TypeExpr]]]:
        return self.checker.variants_of(ty)

    def annotations_of(self, ty: ast.TypeExpr) -> list[ast.CapabilityAnnotation]:
        return self.annotations.get(ty.mangle(), [])

    def is_copy(self, ty: ast.TypeExpr) -> bool:
        if isinstance(ty, (ast.IntType, ast.BoolType, ast.RawPtr, ast.SharedRef)):
            return True
        if isinstance(ty, ast.TupleType):
            return all(self.is_copy(e) for e in ty.elements)
        return False

    def is_thread_shared(self, ty: ast.TypeExpr) -> bool:
        return self.checker.is_thread_shared(ty)

    def is_borrowing(self, ty: ast.TypeExpr) -> bool:
        """True when values of ``ty`` keep the places they were made from borrowed."""
        if isinstance(ty, (ast.SharedRef, ast.MutRef)):
            return True
        if isinstance(ty, ast.StructType):
            decl = self.checker.structs.get(ty.name)
            if decl is not None and decl.borrowing:
                return True
        return any(self.is_borrowing(t) for _, t in self.components(ty))

    def contains_reference(self, ty: ast.TypeExpr) -> bool:
        return ast.contains_reference(ty, self.components)

    def components(self, ty: ast.TypeExpr) -> list[tuple[str, ast.TypeExpr]]:
        if isinstance(ty, ast.EnumType):
            return [(name, t) for name, t in self.variants_of(ty) if t is not None]
        if isinstance(ty, (ast.StructType, ast.TupleType)):
            return self.fields_of(ty)
        return []


class TypeChecker:

    def __init__(self, program: ast.Program):
        self.program = program
        self.structs: dict[str, ast.StructDecl] = {}
        self.enums: dict[str, ast.EnumDecl] = {}
        self.functions: dict[str, ast.FunctionDecl] = {}
        self.impls: dict[str, list[ast.ImplBlock]] = defaultdict(list)
        self.variant_enums: dict[str, list[ast.EnumDecl]] = defaultdict(list)
        self.instances: dict[str, FunctionInstance] = {}
        self.annotations: dict[str, list[ast.CapabilityAnnotation]] = {}
        self.types: dict[str, ast.TypeExpr] = {}
        self._pending: deque[FunctionInstance] = deque()
        self._pending_types: deque[ast.StructType] = deque()
        self._fields_cache: dict[str, list[tuple[str, ast.TypeExpr]]] = {}
        self._index()

    # --- declarations ---

    def _index(self) -> None:
        for decl in self.program.structs:
            self._unique_type_name(decl.name, decl.span)
            self.structs[decl.name] = decl
        for decl in self.program.enums:
            self._unique_type_name(decl.name, decl.span)
            if not 1 <= len(decl.variants) <= 2:
                raise TypeCheckError(f"enum `{decl.name}` must have one or two variants", decl.span)
            self.enums[decl.name] = decl
            for variant in decl.variants:
                self.variant_enums[variant.name].append(decl)
        for decl in self.program.functions:
            if decl.name in self.functions:
                raise ResolutionError(f"function `{decl.name}` is defined more than once", decl.span)
            self.functions[decl.name] = decl
        for impl in self.program.impls:
            head = impl.self_type.name if isinstance(impl.self_type, ast.NamedType) else None
            if head is None or (head not in self.structs and head not in self.enums and head != "UnsafeCell"):
                raise ResolutionError(f"impl for unknown type `{impl.self_type}`", impl.span)
            self.impls[head].append(impl)

    def _unique_type_name(self, name: str, span: ast.Span) -> None:
        if name in self.structs or name in self.enums or name in INT_NAMES or name in ("bool", "UnsafeCell"):
            raise ResolutionError(f"type `{name}` is defined more than once", span)

    def resolve(self, ty: ast.TypeExpr, mapping: dict[str, ast.TypeExpr], self_type: Optional[ast.TypeExpr],
                library: bool, span: ast.Span, allow_infer: bool = False) -> ast.TypeExpr:
        def go(t: ast.TypeExpr) -> ast.TypeExpr:
            return self.resolve(t, mapping, self_type, library, span, allow_infer)

        if isinstance(ty, ast.NamedType):
            name = ty.name
            if name in mapping and not ty.args:
                return mapping[name]
            if name in INT_NAMES:
                return ast.INT
            if name == "bool":
                return ast.BOOL
            if name == "Self":
                if self_type is None:
                    raise ResolutionError("`Self` used outside of an impl block", span)
                return self_type
            if name == "_" and allow_infer:
                return ty
            args = tuple(go(a) for a in ty.args)
            if name == "UnsafeCell":
                if not library:
                    raise TypeCheckError("`UnsafeCell` may only appear in library declarations", span)
                if len(args) != 1:
                    raise TypeCheckError("`UnsafeCell` takes one type argument", span)
                return ast.UnsafeCellOf(args[0])
            decl = self.structs.get(name) or self.enums.get(name)
            if decl is None:
                raise ResolutionError(f"unknown type `{name}`", span)
            if len(args) != len(decl.generics):
                raise TypeCheckError(f"`{name}` expects {len(decl.generics)} type argument(s), "
                                     f"found {len(args)}", span)
            if isinstance(decl, ast.StructDecl):
                return ast.StructType(name, args)
            return ast.EnumType(name, args)
        if isinstance(ty, ast.SharedRef):
            return ast.SharedRef(go(ty.inner))
        if isinstance(ty, ast.MutRef):
            return ast.MutRef(go(ty.inner))
        if isinstance(ty, ast.RawPtr):
            return ast.RawPtr(go(ty.inner), ty.mutable)
        if isinstance(ty, ast.UnsafeCellOf):
            return ast.UnsafeCellOf(go(ty.inner))
        if isinstance(ty, ast.TupleType):
            return ast.TupleType(tuple(go(e) for e in ty.elements))
        if isinstance(ty, ast.TypeParam):
            return mapping.get(ty.name, ty)
        return ty

    def fields_of(self, ty: ast.TypeExpr) -> list[tuple[str, ast.TypeExpr]]:
        if isinstance(ty, ast.TupleType):
            return [(str(i), t) for i, t in enumerate(ty.elements)]
        if not isinstance(ty, ast.StructType):
            return []
        key = ty.mangle()
        if key not in self._fields_cache:
            decl = self.structs[ty.name]
            mapping = dict(zip(decl.generics, ty.args))
            self._fields_cache[key] = [
                (f.name, self.resolve(f.ty, mapping, ty, decl.library, decl.span)) for f in decl.fields]
        return self._fields_cache[key]

    def variants_of(self, ty: ast.EnumType) -> list[tuple[str, Optional[ast.TypeExpr]]]:
        decl = self.enums[ty.name]
        mapping = dict(zip(decl.generics, ty.args))
        return [(v.name, None if v.payload is None else self.resolve(v.payload, mapping, ty, decl.library, decl.span))
                for v in decl.variants]

    def is_thread_shared(self, ty: ast.TypeExpr) -> bool:
        if isinstance(ty, (ast.SharedRef, ast.MutRef, ast.RawPtr, ast.UnsafeCellOf)):
            return self.is_thread_shared(ty.inner)
        if isinstance(ty, ast.TupleType):
            return any(self.is_thread_shared(e) for e in ty.elements)
        if isinstance(ty, (ast.StructType, ast.EnumType)):
            decl = self.structs.get(ty.name)
            if decl is not None and decl.thread_shared:
                return True
            if any(impl.thread_shared for impl in self.impls.get(ty.name, [])):
                return True
            return any(self.is_thread_shared(a) for a in ty.args)
        return False

    def use(self, ty: Optional[ast.TypeExpr]) -> None:
        """Record a concrete type (and its components) as used by the program."""
        if ty is None or not ty.is_concrete():
            return
        key = ty.mangle()
        if key in self.types:
            return
        self.types[key] = ty
        if isinstance(ty, (ast.SharedRef, ast.MutRef, ast.RawPtr, ast.UnsafeCellOf)):
            self.use(ty.inner)
        elif isinstance(ty, ast.TupleType):
            for e in ty.elements:
                self.use(e)
        elif isinstance(ty, ast.StructType):
            for _, t in self.fields_of(ty):
                self.use(t)
            self._pending_types.append(ty)
        elif isinstance(ty, ast.EnumType):
            for _, t in self.variants_of(ty):
                self.use(t)

    # --- instances ---

    def _generic_mapping(self, names: list[str]) -> dict[str, ast.TypeExpr]:
        return {g: ast.TypeParam(g) for g in names}

    def _match_impl(self, impl: ast.ImplBlock, owner: ast.TypeExpr) -> Optional[dict[str, ast.TypeExpr]]:
        generic = self.resolve(impl.self_type, self._generic_mapping(impl.generics), None, True, impl.span)
        mapping: dict[str, ast.TypeExpr] = {}
        if not unify(generic, owner, mapping) or any(g not in mapping for g in impl.generics):
            return None
        return mapping

    def _find_method(self, head: str, name: str) -> Optional[tuple[ast.ImplBlock, ast.FunctionDecl]]:
        for impl in self.impls.get(head, []):
            for method in impl.methods:
                if method.name == name:
                    return impl, method
        return None

    def method_instance(self, owner: ast.TypeExpr, name: str) -> Optional[FunctionInstance]:
        head = _head(owner)
        if head is None:
            return None
        for impl in self.impls.get(head, []):
            for method in impl.methods:
                if method.name != name:
                    continue
                mapping = self._match_impl(impl, owner)
                if mapping is not None:
                    return self.instantiate(method, owner, mapping)
        return None

    def instantiate(self, decl: ast.FunctionDecl, owner: Optional[ast.TypeExpr],
                    mapping: dict[str, ast.TypeExpr]) -> FunctionInstance:
        if owner is not None and decl.generics:
            raise TypeCheckError(f"generic method `{decl.name}` is not supported", decl.span)
        if owner is not None:
            key = f"{owner.mangle()}::{decl.name}"
        elif decl.generics:
            key = f"{decl.name}<{'.'.join(mapping[g].mangle() for g in decl.generics)}>"
        else:
            key = decl.name
        if key in self.instances:
            return self.instances[key]
        inst_decl = copy.deepcopy(decl)
        for param in inst_decl.params:
            param.ty = self.resolve(param.ty, mapping, owner, decl.library, decl.span)
            self.use(param.ty)
        inst_decl.ret = self.resolve(inst_decl.ret, mapping, owner, decl.library, decl.span)
        self.use(inst_decl.ret)
        inst_decl.owner = owner
        instance = FunctionInstance(key, inst_decl, owner, dict(mapping))
        self.instances[key] = instance
        self._pending.append(instance)
        logger.debug(f"Instantiated {key}")
        return instance

    def check(self) -> TypedProgram:
        clients: list[str] = []
        for decl in self.program.functions:
            if decl.library or decl.generics:
                continue
            instance = self.instantiate(decl, None, {})
            if decl.body is not None:
                clients.append(instance.key)
        for impls in self.impls.values():
            for impl in impls:
                if impl.library or impl.generics:
                    continue
                owner = self.resolve(impl.self_type, {}, None, False, impl.span)
                for method in impl.methods:
                    instance = self.instantiate(method, owner, {})
                    if method.body is not None:
                        clients.append(instance.key)
        while self._pending or self._pending_types:
            if self._pending:
                instance = self._pending.popleft()
                with _origin(instance.decl.origin):
                    self._check_instance(instance)
            else:
                ty = self._pending_types.popleft()
                with _origin(self.structs[ty.name].origin):
                    self._check_annotations(ty)
        self._reject_recursion()
        logger.info(f"Type checked {len(self.instances)} function instances, {len(clients)} to verify")
        return TypedProgram(self.program, self.instances, clients, self.annotations, self.types, self)

    def _reject_recursion(self) -> None:
        state: dict[str, int] = {}

        def visit(key: str, path: list[str]) -> None:
            state[key] = 1
            for callee in sorted(self.instances[key].calls):
                if state.get(callee) == 1:
                    cycle = path[path.index(callee):] + [callee] if callee in path else [key, callee]
                    raise LoopOrRecursionError(f"recursive call cycle: {' -> '.join(cycle)}",
                                               self.instances[key].decl.span, self.instances[key].decl.origin)
                if callee not in state:
                    visit(callee, path + [callee])
            state[key] = 2

        for key in sorted(self.instances):
            if key not in state:
                visit(key, [key])

    def _check_instance(self, instance: FunctionInstance) -> None:
        decl = instance.decl
        ctx = _Ctx(instance, instance.mapping, instance.owner, decl.library,
                   pure_body=decl.purity is not ast.Purity.NONE or decl.ghost)
        scope = _Scope()
        for param in decl.params:
            if param.name in instance.variables:
                raise TypeCheckError(f"parameter `{param.name}` is declared twice", decl.span)
            scope.declare(param.name, param.name, param.ty, param.mutable)
            instance.variables[param.name] = param.ty
            if param.mutable:
                instance.mutable_vars.add(param.name)
        spec = ctx.as_spec()
        decl.requires = [self._bool(e, scope, spec) for e in decl.requires]
        post_scope = scope.child()
        if decl.ret != ast.UNIT:
            post_scope.declare("result", "result", decl.ret)
        decl.ensures = [self._bool(e, post_scope, ctx.as_spec(allow_old=True)) for e in decl.ensures]
        if decl.body is not None:
            self._block(decl.body, scope.child(), ctx)
            if decl.ret != ast.UNIT and not always_returns(decl.body):
                raise TypeCheckError(f"`{decl.qualified_name}` may finish without returning a value", decl.span)

    def _check_annotations(self, ty: ast.StructType) -> None:
        key = ty.mangle()
        if key in self.annotations:
            return
        decl = self.structs[ty.name]
        sources: list[tuple[list[ast.CapabilityAnnotation], dict[str, ast.TypeExpr], bool]] = [
            (decl.annotations, dict(zip(decl.generics, ty.args)), decl.library)]
        for impl in self.impls.get(ty.name, []):
            mapping = self._match_impl(impl, ty)
            if mapping is not None:
                sources.append((impl.annotations, mapping, impl.library))
        typed: list[ast.CapabilityAnnotation] = []
        self.annotations[key] = typed
        for annotations, mapping, library in sources:
            for original in annotations:
                annotation = copy.deepcopy(original)
                if annotation.kind not in KIND_BY_NAME:
                    raise ResolutionError(f"unknown capability kind `{annotation.kind}`", annotation.span)
                self_ty = ast.SharedRef(ty) if annotation.receiver is ast.Receiver.SHARED else ast.MutRef(ty)
                scope = _Scope()
                scope.declare("self", "self", self_ty)
                ctx = _Ctx(None, mapping, ty, library, spec=True)
                if annotation.condition is not None:
                    annotation.condition = self._bool(annotation.condition, scope, ctx)
                annotation.target = self.expr(annotation.target, scope, ctx)
                if not isinstance(annotation.target.ty, (ast.RawPtr, ast.SharedRef, ast.MutRef)):
                    raise TypeCheckError(f"capability target must be a pointer, found `{annotation.target.ty}`",
                                         annotation.span)
                typed.append(annotation)

    # --- statements ---

    def _fresh(self, ctx: _Ctx, name: str) -> str:
        assert ctx.instance is not None
        if name not in ctx.instance.variables:
            return name
        k = 1
        while f"{name}${k}" in ctx.instance.variables:
            k += 1
        return f"{name}${k}"

    def _declare(self, scope: _Scope, ctx: _Ctx, name: str, ty: ast.TypeExpr, mutable: bool) -> str:
        unique = self._fresh(ctx, name)
        scope.declare(name, unique, ty, mutable)
        ctx.instance.variables[unique] = ty
        if mutable:
            ctx.instance.mutable_vars.add(unique)
        self.use(ty)
        return unique

    def _block(self, block: list[ast.Stmt], scope: _Scope, ctx: _Ctx) -> None:
        for stmt in block:
            self._stmt(stmt, scope, ctx)

    def _stmt(self, stmt: ast.Stmt, scope: _Scope, ctx: _Ctx) -> None:
        if isinstance(stmt, ast.Let):
            declared = None
            if stmt.declared is not None:
                declared = self.resolve(stmt.declared, ctx.mapping, ctx.self_type, ctx.library, stmt.span)
            rhs = self.expr(stmt.rhs, scope, ctx, declared)
            stmt.rhs = self.coerce(rhs, declared) if declared is not None else rhs
            stmt.var_type = declared or rhs.ty
            stmt.name = self._declare(scope, ctx, stmt.name, stmt.var_type, stmt.mutable)
        elif isinstance(stmt, ast.Assign):
            target = self.expr(stmt.target, scope, ctx)
            if not self._mutable_place(target, scope):
                raise TypeCheckError("left-hand side is not a mutable place", stmt.span)
            stmt.target = target
            stmt.rhs = self.coerce(self.expr(stmt.rhs, scope, ctx, target.ty), target.ty)
        elif isinstance(stmt, ast.CallStmt):
            stmt.call = self.expr(stmt.call, scope, ctx)
        elif isinstance(stmt, ast.Assert):
            stmt.cond = self._bool(stmt.cond, scope, ctx.as_spec())
        elif isinstance(stmt, ast.IfElse):
            stmt.cond = self._bool(stmt.cond, scope, ctx)
            self._block(stmt.then, scope.child(), ctx)
            self._block(stmt.otherwise, scope.child(), ctx)
        elif isinstance(stmt, ast.Match):
            self._match(stmt, scope, ctx)
        elif isinstance(stmt, ast.Drop):
            found = scope.lookup(stmt.name)
            if found is None:
                raise ResolutionError(f"unresolved name `{stmt.name}`", stmt.span)
            stmt.name = found[0]
            stmt.glue = self._drop_glue(stmt, found[1], ctx)
        elif isinstance(stmt, ast.Return):
            ret = ctx.instance.decl.ret
            if stmt.value is None:
                if ret != ast.UNIT:
                    raise TypeCheckError(f"expected a return value of type `{ret}`", stmt.span)
            else:
                stmt.value = self.coerce(self.expr(stmt.value, scope, ctx, ret), ret)
        else:
            raise TypeCheckError(f"unsupported statement {type(stmt).__name__}", stmt.span)

    def _match(self, stmt: ast.Match, scope: _Scope, ctx: _Ctx) -> None:
        stmt.scrutinee = self.expr(stmt.scrutinee, scope, ctx)
        ty = stmt.scrutinee.ty
        if not isinstance(ty, ast.EnumType):
            raise TypeCheckError(f"cannot match on a value of type `{ty}`", stmt.span)
        variants = self.variants_of(ty)
        names = [name for name, _ in variants]
        taken: set[int] = set()
        for arm in stmt.arms:
            if arm.variant == "_":
                continue
            if arm.variant not in names:
                raise TypeCheckError(f"`{ty}` has no variant `{arm.variant}`", arm.span)
            arm.variant_index = names.index(arm.variant)
            if arm.variant_index in taken:
                raise TypeCheckError(f"variant `{arm.variant}` is matched twice", arm.span)
            taken.add(arm.variant_index)
        for arm in stmt.arms:
            if arm.variant == "_":
                remaining = [i for i in range(len(names)) if i not in taken]
                if len(remaining) != 1:
                    raise TypeCheckError("the `_` arm must cover exactly one variant", arm.span)
                arm.variant_index = remaining[0]
                arm.variant = names[remaining[0]]
                taken.add(remaining[0])
        if len(taken) != len(names):
            raise TypeCheckError(f"match on `{ty}` is not exhaustive", stmt.span)
        for position, arm in enumerate(stmt.arms):
            payload = variants[arm.variant_index][1]
            if arm.binder is not None and payload is None:
                raise TypeCheckError(f"variant `{arm.variant}` carries no value", arm.span)
            arm.binder_type = payload if arm.binder is not None else None
            if stmt.let_else and position == 0:
                continue
            arm_scope = scope.child()
            if arm.binder is not None:
                arm.binder = self._declare(arm_scope, ctx, arm.binder, payload, False)
            self._block(arm.body, arm_scope, ctx)
        if stmt.let_else:
            if not always_returns(stmt.arms[1].body):
                raise TypeCheckError("the `else` block of a `let ... else` must return", stmt.span)
            first = stmt.arms[0]
            if first.binder is not None:
                first.binder = self._declare(scope, ctx, first.binder, first.binder_type, False)

    def _mutable_place(self, e: ast.Expr, scope: _Scope) -> bool:
        if isinstance(e, ast.Var):
            found = next((v for v in self._all_vars(scope) if v[0] == e.name), None)
            return found is not None and found[2]
        if isinstance(e, ast.FieldAccess):
            return self._mutable_place(e.base, scope)
        if isinstance(e, ast.DerefExpr):
            return isinstance(e.operand.ty, ast.MutRef)
        return False

    @staticmethod
    def _all_vars(scope: _Scope):
        seen: Optional[_Scope] = scope
        while seen is not None:
            yield from seen.vars.values()
            seen = seen.parent

    # --- expressions ---

    def _typed(self, e: ast.Expr, ty: ast.TypeExpr) -> ast.Expr:
        e.ty = ty
        self.use(ty)
        return e

    def _bool(self, e: ast.Expr, scope: _Scope, ctx: _Ctx) -> ast.Expr:
        e = self.expr(e, scope, ctx, ast.BOOL)
        if e.ty != ast.BOOL:
            raise TypeCheckError(f"expected `bool`, found `{e.ty}`", e.span)
        return e

    def _int(self, e: ast.Expr, scope: _Scope, ctx: _Ctx) -> ast.Expr:
        e = self.expr(e, scope, ctx, ast.INT)
        if e.ty != ast.INT:
            raise TypeCheckError(f"expected an integer, found `{e.ty}`", e.span)
        return e

    def coerce(self, e: ast.Expr, expected: ast.TypeExpr) -> ast.Expr:
        actual = e.ty
        if same_type(actual, expected):
            return e
        if isinstance(expected, ast.SharedRef) and isinstance(actual, ast.MutRef) \
                and same_type(actual.inner, expected.inner):
            inner = self._typed(ast.DerefExpr(e, span=e.span), actual.inner)
            return self._typed(ast.Borrow(inner, span=e.span), expected)
        if isinstance(expected, ast.RawPtr) and isinstance(actual, ast.RawPtr) \
                and same_type(actual.inner, expected.inner) and (actual.mutable or not expected.mutable):
            return e
        raise TypeCheckError(f"expected `{expected}`, found `{actual}`", e.span)

    def expr(self, e: ast.Expr, scope: _Scope, ctx: _Ctx, expected: Optional[ast.TypeExpr] = None) -> ast.Expr:
        if e.ty is not None:
            return e
        if isinstance(e, ast.IntLit):
            return self._typed(e, ast.INT)
        if isinstance(e, ast.BoolLit):
            return self._typed(e, ast.BOOL)
        if isinstance(e, ast.UnitLit):
            return self._typed(e, ast.UNIT)
        if isinstance(e, ast.Var):
            found = scope.lookup(e.name)
            if found is not None:
                e.name = found[0]
                return self._typed(e, found[1])
            if e.name in self.variant_enums:
                return self.expr(ast.Call(e.name, [], span=e.span), scope, ctx, expected)
            raise ResolutionError(f"unresolved name `{e.name}`", e.span)
        if isinstance(e, ast.Unary):
            if e.op == "-":
                e.operand = self._int(e.operand, scope, ctx)
                return self._typed(e, ast.INT)
            e.operand = self._bool(e.operand, scope, ctx)
            return self._typed(e, ast.BOOL)
        if isinstance(e, ast.DerefExpr):
            return self._deref(e, scope, ctx)
        if isinstance(e, ast.Borrow):
            e.operand = self.expr(e.operand, scope, ctx)
            if e.mutable:
                if not ctx.spec and not self._mutable_place(e.operand, scope):
                    raise TypeCheckError("cannot borrow an immutable place as mutable", e.span)
                return self._typed(e, ast.MutRef(e.operand.ty))
            return self._typed(e, ast.SharedRef(e.operand.ty))
        if isinstance(e, ast.FieldAccess):
            return self._field(e, scope, ctx)
        if isinstance(e, ast.Binary):
            return self._binary(e, scope, ctx)
        if isinstance(e, ast.Cast):
            return self._cast(e, scope, ctx)
        if isinstance(e, ast.Call):
            return self._call(e, scope, ctx, expected)
        if isinstance(e, ast.Old):
            if not ctx.allow_old:
                raise TypeCheckError("`old` is only allowed in postconditions", e.span)
            e.operand = self.expr(e.operand, scope, ctx, expected)
            return self._typed(e, e.operand.ty)
        if isinstance(e, ast.Conditional):
            e.cond = self._bool(e.cond, scope, ctx)
            e.then = self.expr(e.then, scope, ctx, expected)
            e.otherwise = self.coerce(self.expr(e.otherwise, scope, ctx, e.then.ty), e.then.ty)
            return self._typed(e, e.then.ty)
        if isinstance(e, ast.IfLet):
            return self._if_let(e, scope, ctx, expected)
        if isinstance(e, ast.TupleExpr):
            e.elements = [self.expr(x, scope, ctx) for x in e.elements]
            return self._typed(e, ast.TupleType(tuple(x.ty for x in e.elements)))
        raise TypeCheckError(f"unsupported expression {type(e).__name__}", e.span)

    def _deref(self, e: ast.DerefExpr, scope: _Scope, ctx: _Ctx) -> ast.Expr:
        e.operand = self.expr(e.operand, scope, ctx)
        ty = e.operand.ty
        if isinstance(ty, (ast.SharedRef, ast.MutRef)):
            return self._typed(e, ty.inner)
        if isinstance(ty, ast.RawPtr):
            raise TypeCheckError("raw pointers cannot be dereferenced with `*`; use `deref(..)` in specifications",
                                 e.span)
        head = _head(ty)
        if head is not None and self._find_method(head, "deref") is not None:
            call = ast.Call("deref", [], receiver=e.operand, span=e.span)
            e.operand = self._method_call(call, scope, ctx)
            return self._typed(e, e.operand.ty.inner)
        raise TypeCheckError(f"type `{ty}` cannot be dereferenced", e.span)

    def _field(self, e: ast.FieldAccess, scope: _Scope, ctx: _Ctx) -> ast.Expr:
        base = self.expr(e.base, scope, ctx)
        while isinstance(base.ty, (ast.SharedRef, ast.MutRef)):
            base = self._typed(ast.DerefExpr(base, span=base.span), base.ty.inner)
            e.auto_derefs += 1
        e.base = base
        ty = base.ty
        if isinstance(ty, ast.StructType):
            decl = self.structs[ty.name]
            if decl.library and not ctx.library:
                raise TypeCheckError(f"field `{e.name}` of library type `{ty}` is private", e.span)
        fields = dict(self.fields_of(ty))
        if e.name not in fields:
            raise TypeCheckError(f"type `{ty}` has no field `{e.name}`", e.span)
        return self._typed(e, fields[e.name])

    def _binary(self, e: ast.Binary, scope: _Scope, ctx: _Ctx) -> ast.Expr:
        if e.op in ("+", "-", "*"):
            e.left, e.right = self._int(e.left, scope, ctx), self._int(e.right, scope, ctx)
            return self._typed(e, ast.INT)
        if e.op in ("<", "<=", ">", ">="):
            e.left, e.right = self._int(e.left, scope, ctx), self._int(e.right, scope, ctx)
            return self._typed(e, ast.BOOL)
        if e.op in ("&&", "||", "==>"):
            e.left, e.right = self._bool(e.left, scope, ctx), self._bool(e.right, scope, ctx)
            return self._typed(e, ast.BOOL)
        if e.op in ("==", "!=", "===="):
            e.left = self.expr(e.left, scope, ctx)
            e.right = self.expr(e.right, scope, ctx, e.left.ty)
            if not same_type(e.left.ty, e.right.ty, ignore_ptr_mut=True):
                if e.op == "====":
                    raise TypeCheckError(f"`====` compares values of one type, found `{e.left.ty}` "
                                         f"and `{e.right.ty}`", e.span)
                raise TypeCheckError(f"cannot compare `{e.left.ty}` with `{e.right.ty}`", e.span)
            return self._typed(e, ast.BOOL)
        raise TypeCheckError(f"unknown operator `{e.op}`", e.span)

    def _cast(self, e: ast.Cast, scope: _Scope, ctx: _Ctx) -> ast.Expr:
        e.operand = self.expr(e.operand, scope, ctx)
        source = e.operand.ty
        target = self.resolve(e.target, ctx.mapping, ctx.self_type, ctx.library, e.span, allow_infer=True)
        if target == ast.INT and source == ast.INT:
            e.target = target
            return self._typed(e, target)
        if isinstance(target, ast.RawPtr) and isinstance(source, (ast.SharedRef, ast.MutRef, ast.RawPtr)):
            if target.inner == _INFER:
                target = ast.RawPtr(source.inner, target.mutable)
            elif not same_type(target.inner, source.inner, ignore_ptr_mut=True):
                raise TypeCheckError(f"cannot cast `{source}` to `{target}`", e.span)
            if isinstance(source, ast.SharedRef) and target.mutable:
                raise TypeCheckError("cannot cast a shared reference to `*mut`", e.span)
            e.target = target
            return self._typed(e, target)
        raise TypeCheckError(f"cannot cast `{source}` to `{target}`", e.span)

    def _if_let(self, e: ast.IfLet, scope: _Scope, ctx: _Ctx, expected: Optional[ast.TypeExpr]) -> ast.Expr:
        scrutinee = self.expr(e.scrutinee, scope, ctx)
        while isinstance(scrutinee.ty, (ast.SharedRef, ast.MutRef)):
            scrutinee = self._typed(ast.DerefExpr(scrutinee, span=scrutinee.span), scrutinee.ty.inner)
        e.scrutinee = scrutinee
        if not isinstance(scrutinee.ty, ast.EnumType):
            raise TypeCheckError(f"`if let` needs an enum value, found `{scrutinee.ty}`", e.span)
        variants = self.variants_of(scrutinee.ty)
        names = [name for name, _ in variants]
        if e.variant not in names:
            raise TypeCheckError(f"`{scrutinee.ty}` has no variant `{e.variant}`", e.span)
        e.variant_index = names.index(e.variant)
        payload = variants[e.variant_index][1]
        then_scope = scope.child()
        if e.binder is not None:
            if payload is None:
                raise TypeCheckError(f"variant `{e.variant}` carries no value", e.span)
            then_scope.declare(e.binder, e.binder, payload)
        e.then = self.expr(e.then, then_scope, ctx, expected)
        e.otherwise = self.coerce(self.expr(e.otherwise, scope, ctx, e.then.ty), e.then.ty)
        return self._typed(e, e.then.ty)

    # --- calls ---

    def _call(self, call: ast.Call, scope: _Scope, ctx: _Ctx, expected: Optional[ast.TypeExpr]) -> ast.Expr:
        if call.receiver is not None:
            return self._method_call(call, scope, ctx)
        if call.owner is not None:
            return self._path_call(call, scope, ctx, expected)
        if call.name in self.functions:
            return self._free_call(call, scope, ctx, expected)
        if call.name == "deref":
            return self._builtin_deref(call, scope, ctx)
        if call.name in self.variant_enums:
            return self._variant(call, scope, ctx, expected)
        raise ResolutionError(f"unresolved function `{call.name}`", call.span)

    def _builtin_deref(self, call: ast.Call, scope: _Scope, ctx: _Ctx) -> ast.Expr:
        if not (ctx.spec or ctx.pure_body):
            raise TypeCheckError("`deref` is only available in specifications and pure functions", call.span)
        if len(call.args) != 1:
            raise TypeCheckError("`deref` takes one argument", call.span)
        arg = self.expr(call.args[0], scope, ctx)
        if not isinstance(arg.ty, ast.RawPtr):
            raise TypeCheckError(f"`deref` expects a raw pointer, found `{arg.ty}`", call.span)
        call.args = [arg]
        call.target = BUILTIN_DEREF
        return self._typed(call, arg.ty.inner)

    def _variant(self, call: ast.Call, scope: _Scope, ctx: _Ctx, expected: Optional[ast.TypeExpr]) -> ast.Expr:
        candidates = self.variant_enums[call.name]
        decl = candidates[0]
        if isinstance(expected, ast.EnumType) and any(c.name == expected.name for c in candidates):
            decl = self.enums[expected.name]
        elif len(candidates) > 1:
            raise TypeCheckError(f"variant `{call.name}` is ambiguous; add a type annotation", call.span)
        mapping: dict[str, ast.TypeExpr] = {}
        if isinstance(expected, ast.EnumType) and expected.name == decl.name:
            mapping.update(zip(decl.generics, expected.args))
        index = [v.name for v in decl.variants].index(call.name)
        payload = decl.variants[index].payload
        if payload is None:
            if call.args:
                raise TypeCheckError(f"variant `{call.name}` carries no value", call.span)
        else:
            if len(call.args) != 1:
                raise TypeCheckError(f"variant `{call.name}` takes one value", call.span)
            generic = self.resolve(payload, self._generic_mapping(decl.generics), None, True, decl.span)
            hint = ast.substitute(generic, mapping)
            arg = self.expr(call.args[0], scope, ctx, hint if hint.is_concrete() else None)
            if not unify(generic, arg.ty, mapping):
                raise TypeCheckError(f"variant `{call.name}` cannot hold a `{arg.ty}`", call.span)
            call.args = [self.coerce(arg, ast.substitute(generic, mapping))]
        if any(g not in mapping for g in decl.generics):
            raise TypeCheckError(f"cannot infer the type of `{call.name}`; add a type annotation", call.span)
        call.variant = index
        return self._typed(call, ast.EnumType(decl.name, tuple(mapping[g] for g in decl.generics)))

    def _method_call(self, call: ast.Call, scope: _Scope, ctx: _Ctx) -> ast.Expr:
        recv = self.expr(call.receiver, scope, ctx)
        chain = [recv]
        base = recv.ty
        instance = self.method_instance(base, call.name)
        while instance is None and isinstance(base, (ast.SharedRef, ast.MutRef)):
            chain.append(self._typed(ast.DerefExpr(chain[-1], span=recv.span), base.inner))
            base = base.inner
            instance = self.method_instance(base, call.name)
        if instance is None:
            raise ResolutionError(f"no method `{call.name}` on `{recv.ty}`", call.span)
        kind = instance.decl.receiver
        if kind is None:
            raise TypeCheckError(f"`{instance.key}` is not a method; call it as `{_head(base)}::{call.name}(..)`",
                                 call.span)
        place = chain[-1]
        derefs = len(chain) - 1
        holder = chain[-2].ty if derefs else None
        if kind is ast.Receiver.SHARED:
            if derefs and isinstance(holder, ast.SharedRef):
                arg, call.adjust = chain[-2], ast.Adjust.NONE if derefs == 1 else ast.Adjust.AUTO_DEREF
            else:
                arg = self._typed(ast.Borrow(place, span=recv.span), ast.SharedRef(base))
                call.adjust = ast.Adjust.AUTO_REF
        elif kind is ast.Receiver.MUT:
            if derefs and isinstance(holder, ast.MutRef):
                arg, call.adjust = chain[-2], ast.Adjust.NONE if derefs == 1 else ast.Adjust.AUTO_DEREF
            elif derefs:
                raise TypeCheckError(f"cannot call `{call.name}` through a shared reference", call.span)
            else:
                if not ctx.spec and not self._mutable_place(place, scope):
                    raise TypeCheckError(f"`{call.name}` needs a mutable receiver", call.span)
                arg = self._typed(ast.Borrow(place, mutable=True, span=recv.span), ast.MutRef(base))
                call.adjust = ast.Adjust.AUTO_MUT_REF
        else:
            if derefs and not self._copy(base):
                raise TypeCheckError(f"cannot move a `{base}` out of a reference", call.span)
            arg = place
            call.adjust = ast.Adjust.AUTO_DEREF if derefs else ast.Adjust.NONE
        call.receiver = None
        params = instance.params[1:]
        if len(call.args) != len(params):
            raise TypeCheckError(f"`{instance.key}` takes {len(params)} argument(s), found {len(call.args)}",
                                 call.span)
        call.args = [arg] + [self.coerce(self.expr(a, scope, ctx, p.ty), p.ty) for a, p in zip(call.args, params)]
        return self._finish_call(call, instance, ctx)

    def _path_call(self, call: ast.Call, scope: _Scope, ctx: _Ctx, expected: Optional[ast.TypeExpr]) -> ast.Expr:
        owner_name = call.owner.name if isinstance(call.owner, ast.NamedType) else str(call.owner)
        if owner_name == "Self" and ctx.self_type is not None:
            owner_name = _head(ctx.self_type) or owner_name
        found = self._find_method(owner_name, call.name)
        if found is None:
            raise ResolutionError(f"no function `{owner_name}::{call.name}`", call.span)
        impl, decl = found
        generic_mapping = self._generic_mapping(impl.generics)
        generic_self = self.resolve(impl.self_type, generic_mapping, None, True, impl.span)
        params = [self.resolve(p.ty, generic_mapping, generic_self, True, decl.span) for p in decl.params]
        if len(call.args) != len(params):
            raise TypeCheckError(f"`{owner_name}::{call.name}` takes {len(params)} argument(s), "
                                 f"found {len(call.args)}", call.span)
        mapping: dict[str, ast.TypeExpr] = {}
        args = []
        for arg, param_ty in zip(call.args, params):
            arg = self.expr(arg, scope, ctx, param_ty if param_ty.is_concrete() else None)
            if not unify(param_ty, arg.ty, mapping):
                raise TypeCheckError(f"expected `{param_ty}`, found `{arg.ty}`", arg.span)
            args.append(arg)
        if any(g not in mapping for g in impl.generics) and expected is not None:
            ret = self.resolve(decl.ret, generic_mapping, generic_self, True, decl.span)
            unify(ret, expected, mapping)
        if any(g not in mapping for g in impl.generics):
            raise TypeCheckError(f"cannot infer the type arguments of `{owner_name}::{call.name}`", call.span)
        owner = ast.substitute(generic_self, mapping)
        instance = self.method_instance(owner, call.name)
        call.args = [self.coerce(a, p.ty) for a, p in zip(args, instance.params)]
        return self._finish_call(call, instance, ctx)

    def _free_call(self, call: ast.Call, scope: _Scope, ctx: _Ctx, expected: Optional[ast.TypeExpr]) -> ast.Expr:
        decl = self.functions[call.name]
        if len(call.args) != len(decl.params):
            raise TypeCheckError(f"`{call.name}` takes {len(decl.params)} argument(s), found {len(call.args)}",
                                 call.span)
        generic_mapping = self._generic_mapping(decl.generics)
        params = [self.resolve(p.ty, generic_mapping, None, decl.library, decl.span) for p in decl.params]
        mapping: dict[str, ast.TypeExpr] = {}
        args = []
        for arg, param_ty in zip(call.args, params):
            arg = self.expr(arg, scope, ctx, param_ty if param_ty.is_concrete() else None)
            if not unify(param_ty, arg.ty, mapping):
                raise TypeCheckError(f"expected `{param_ty}`, found `{arg.ty}`", arg.span)
            args.append(arg)
        if any(g not in mapping for g in decl.generics) and expected is not None:
            unify(self.resolve(decl.ret, generic_mapping, None, decl.library, decl.span), expected, mapping)
        if any(g not in mapping for g in decl.generics):
            raise TypeCheckError(f"cannot infer the type arguments of `{call.name}`", call.span)
        instance = self.instantiate(decl, None, mapping)
        call.args = [self.coerce(a, p.ty) for a, p in zip(args, instance.params)]
        return self._finish_call(call, instance, ctx)

    def _drop_glue(self, stmt: ast.Drop, ty: ast.TypeExpr, ctx: _Ctx) -> Optional[ast.Call]:
        instance = self.method_instance(ty, "drop")
        if instance is None or instance.decl.receiver is not ast.Receiver.VALUE or len(instance.params) != 1:
            return None
        this = self._typed(ast.Var(stmt.name, span=stmt.span), ty)
        call = ast.Call("drop", [this], span=stmt.span)
        self._finish_call(call, instance, ctx)
        return call

    def _finish_call(self, call: ast.Call, instance: FunctionInstance, ctx: _Ctx) -> ast.Expr:
        call.target = instance.key
        caller = ctx.instance
        if instance.decl.ghost and not ctx.spec and not (caller is not None and caller.decl.ghost):
            raise TypeCheckError(f"ghost function `{instance.key}` can only be called from specifications",
                                 call.span)
        if caller is not None and not ctx.spec:
            caller.calls.add(instance.key)
        return self._typed(call, instance.ret)

    def _copy(self, ty: ast.TypeExpr) -> bool:
        if isinstance(ty, (ast.IntType, ast.BoolType, ast.RawPtr, ast.SharedRef)):
            return True
        if isinstance(ty, ast.TupleType):
            return all(self._copy(e) for e in ty.elements)
        return False


def typecheck(program: ast.Program) -> TypedProgram:
    """Resolve names, check types and monomorphize everything the program uses."""
    return TypeChecker(program).check()
