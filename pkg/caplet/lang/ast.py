"""Syntax tree of the Caplet core language.

Types are immutable values; expression and statement nodes are mutable so the
type checker can annotate them in place (``ty``, call resolution, receiver
adjustments).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional, Union


@dataclass(frozen=True)
class Span:
    line: int = 0
    col: int = 0
    end_line: int = 0
    end_col: int = 0

    def __str__(self) -> str:
        return f"{self.line}:{self.col}"

    def sort_key(self) -> tuple[int, int]:
        return (self.line, self.col)


NO_SPAN = Span()


# --- TYPES ---

class TypeExpr:
    """Base of all type expressions."""

    def mangle(self) -> str:
        raise NotImplementedError

    def is_concrete(self) -> bool:
        return True


@dataclass(frozen=True)
class IntType(TypeExpr):
    def mangle(self) -> str:
        return "i32"

    def __str__(self) -> str:
        return "i32"


@dataclass(frozen=True)
class BoolType(TypeExpr):
    def mangle(self) -> str:
        return "bool"

    def __str__(self) -> str:
        return "bool"


@dataclass(frozen=True)
class SharedRef(TypeExpr):
    inner: TypeExpr

    def mangle(self) -> str:
        return f"&{self.inner.mangle()}"

    def is_concrete(self) -> bool:
        return self.inner.is_concrete()

    def __str__(self) -> str:
        return f"&{self.inner}"


@dataclass(frozen=True)
class MutRef(TypeExpr):
    inner: TypeExpr

    def mangle(self) -> str:
        return f"&mut_{self.inner.mangle()}"

    def is_concrete(self) -> bool:
        return self.inner.is_concrete()

    def __str__(self) -> str:
        return f"&mut {self.inner}"


@dataclass(frozen=True)
class RawPtr(TypeExpr):
    inner: TypeExpr
    mutable: bool = True

    def mangle(self) -> str:
        return f"*{'mut' if self.mutable else 'const'}_{self.inner.mangle()}"

    def is_concrete(self) -> bool:
        return self.inner.is_concrete()

    def __str__(self) -> str:
        return f"*{'mut' if self.mutable else 'const'} {self.inner}"


@dataclass(frozen=True)
class StructType(TypeExpr):
    name: str
    args: tuple[TypeExpr, ...] = ()

    def mangle(self) -> str:
        if not self.args:
            return self.name
        return f"{self.name}<{'.'.join(a.mangle() for a in self.args)}>"

    def is_concrete(self) -> bool:
        return all(a.is_concrete() for a in self.args)

    def __str__(self) -> str:
        if not self.args:
            return self.name
        return f"{self.name}<{', '.join(str(a) for a in self.args)}>"


@dataclass(frozen=True)
class EnumType(TypeExpr):
    name: str
    args: tuple[TypeExpr, ...] = ()

    def mangle(self) -> str:
        if not self.args:
            return self.name
        return f"{self.name}<{'.'.join(a.mangle() for a in self.args)}>"

    def is_concrete(self) -> bool:
        return all(a.is_concrete() for a in self.args)

    def __str__(self) -> str:
        if not self.args:
            return self.name
        return f"{self.name}<{', '.join(str(a) for a in self.args)}>"


@dataclass(frozen=True)
class TupleType(TypeExpr):
    elements: tuple[TypeExpr, ...] = ()

    def mangle(self) -> str:
        if not self.elements:
            return "Unit"
        return f"Tuple<{'.'.join(e.mangle() for e in self.elements)}>"

    def is_concrete(self) -> bool:
        return all(e.is_concrete() for e in self.elements)

    def __str__(self) -> str:
        if len(self.elements) == 1:
            return f"({self.elements[0]},)"
        return f"({', '.join(str(e) for e in self.elements)})"


@dataclass(frozen=True)
class UnsafeCellOf(TypeExpr):
    inner: TypeExpr

    def mangle(self) -> str:
        return f"UnsafeCell<{self.inner.mangle()}>"

    def is_concrete(self) -> bool:
        return self.inner.is_concrete()

    def __str__(self) -> str:
        return f"UnsafeCell<{self.inner}>"


@dataclass(frozen=True)
class TypeParam(TypeExpr):
    """A generic parameter; never survives monomorphization."""
    name: str

    def mangle(self) -> str:
        return f"?{self.name}"

    def is_concrete(self) -> bool:
        return False

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class NamedType(TypeExpr):
    """An unresolved type path as written in source; resolved by the type checker."""
    name: str
    args: tuple[TypeExpr, ...] = ()

    def mangle(self) -> str:
        return f"?{self.name}"

    def is_concrete(self) -> bool:
        return False

    def __str__(self) -> str:
        if not self.args:
            return self.name
        return f"{self.name}<{', '.join(str(a) for a in self.args)}>"


INT = IntType()
BOOL = BoolType()
UNIT = TupleType(())


def is_reference(ty: TypeExpr) -> bool:
    return isinstance(ty, (SharedRef, MutRef))


def contains_reference(ty: TypeExpr, fields_of=None) -> bool:
    """True when a snapshot of ``ty`` stores a reference address somewhere."""
    if isinstance(ty, (SharedRef, MutRef)):
        return True
    if isinstance(ty, TupleType):
        return any(contains_reference(e, fields_of) for e in ty.elements)
    if isinstance(ty, (StructType, EnumType)) and fields_of is not None:
        return any(contains_reference(t, fields_of) for _, t in fields_of(ty) if t is not None)
    return False


def substitute(ty: TypeExpr, mapping: dict[str, TypeExpr]) -> TypeExpr:
    if isinstance(ty, TypeParam):
        return mapping.get(ty.name, ty)
    if isinstance(ty, SharedRef):
        return SharedRef(substitute(ty.inner, mapping))
    if isinstance(ty, MutRef):
        return MutRef(substitute(ty.inner, mapping))
    if isinstance(ty, RawPtr):
        return RawPtr(substitute(ty.inner, mapping), ty.mutable)
    if isinstance(ty, UnsafeCellOf):
        return UnsafeCellOf(substitute(ty.inner, mapping))
    if isinstance(ty, StructType):
        return StructType(ty.name, tuple(substitute(a, mapping) for a in ty.args))
    if isinstance(ty, EnumType):
        return EnumType(ty.name, tuple(substitute(a, mapping) for a in ty.args))
    if isinstance(ty, TupleType):
        return TupleType(tuple(substitute(e, mapping) for e in ty.elements))
    return ty


# --- PLACES ---

@dataclass(frozen=True)
class Deref:
    def __str__(self) -> str:
        return "*"


@dataclass(frozen=True)
class FieldProj:
    name: str

    def __str__(self) -> str:
        return f".{self.name}"


Projection = Union[Deref, FieldProj]


@dataclass(frozen=True)
class Place:
    base: str
    projections: tuple[Projection, ...] = ()

    def is_prefix_of(self, other: "Place") -> bool:
        return (self.base == other.base
                and len(self.projections) <= len(other.projections)
                and other.projections[:len(self.projections)] == self.projections)

    def __str__(self) -> str:
        text = self.base
        for proj in self.projections:
            text = f"(*{text})" if isinstance(proj, Deref) else f"{text}.{proj.name}"
        return text


# --- EXPRESSIONS ---

class Receiver(str, Enum):
    SHARED = "&self"
    MUT = "&mut self"
    VALUE = "self"


class Adjust(str, Enum):
    """How a method receiver is passed once resolved."""
    NONE = "none"
    AUTO_REF = "auto_ref"
    AUTO_MUT_REF = "auto_mut_ref"
    AUTO_DEREF = "auto_deref"


@dataclass(eq=False)
class Expr:
    span: Span = field(default=NO_SPAN, kw_only=True)
    ty: Optional[TypeExpr] = field(default=None, kw_only=True)


@dataclass(eq=False)
class IntLit(Expr):
    value: int


@dataclass(eq=False)
class BoolLit(Expr):
    value: bool


@dataclass(eq=False)
class UnitLit(Expr):
    pass


@dataclass(eq=False)
class Var(Expr):
    name: str


@dataclass(eq=False)
class Unary(Expr):
    op: str  # "-" or "!"
    operand: Expr


@dataclass(eq=False)
class DerefExpr(Expr):
    operand: Expr


@dataclass(eq=False)
class Borrow(Expr):
    operand: Expr
    mutable: bool = False


@dataclass(eq=False)
class FieldAccess(Expr):
    base: Expr
    name: str
    auto_derefs: int = 0


@dataclass(eq=False)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(eq=False)
class Cast(Expr):
    operand: Expr
    target: TypeExpr


@dataclass(eq=False)
class Call(Expr):
    """A call. ``receiver`` is set for method-call syntax, ``owner`` for ``Type::f`` paths.

    After type checking, ``target`` names the resolved function instance and
    ``adjust`` describes how the receiver (or first argument) is passed.
    """
    name: str
    args: list[Expr] = field(default_factory=list)
    receiver: Optional[Expr] = None
    owner: Optional[TypeExpr] = None
    target: Optional[str] = None
    adjust: Adjust = Adjust.NONE
    variant: Optional[int] = None  # enum constructor index when the call builds a variant


@dataclass(eq=False)
class Old(Expr):
    operand: Expr


@dataclass(eq=False)
class Conditional(Expr):
    cond: Expr
    then: Expr
    otherwise: Expr


@dataclass(eq=False)
class IfLet(Expr):
    variant: str
    binder: Optional[str]
    scrutinee: Expr
    then: Expr
    otherwise: Expr
    variant_index: Optional[int] = None


@dataclass(eq=False)
class TupleExpr(Expr):
    elements: list[Expr] = field(default_factory=list)


# --- STATEMENTS ---

@dataclass(eq=False)
class Stmt:
    span: Span = field(default=NO_SPAN, kw_only=True)


@dataclass(eq=False)
class Let(Stmt):
    name: str
    declared: Optional[TypeExpr]
    rhs: Expr
    mutable: bool = False
    var_type: Optional[TypeExpr] = None


@dataclass(eq=False)
class Assign(Stmt):
    target: Expr
    rhs: Expr


@dataclass(eq=False)
class CallStmt(Stmt):
    call: Expr


@dataclass(eq=False)
class Assert(Stmt):
    cond: Expr


@dataclass(eq=False)
class IfElse(Stmt):
    cond: Expr
    then: list[Stmt]
    otherwise: list[Stmt]


@dataclass(eq=False)
class MatchArm:
    variant: str
    binder: Optional[str]
    body: list[Stmt]
    span: Span = NO_SPAN
    variant_index: Optional[int] = None
    binder_type: Optional[TypeExpr] = None


@dataclass(eq=False)
class Match(Stmt):
    """Two-arm match on an enum value; ``let_else`` keeps the first binder in the enclosing scope."""
    scrutinee: Expr
    arms: list[MatchArm]
    let_else: bool = False


@dataclass(eq=False)
class Drop(Stmt):
    """`drop(x)`. ``glue`` is the typed call of the dropped type's `drop(self)`, when it declares one."""
    name: str
    glue: Optional[Call] = None


@dataclass(eq=False)
class Return(Stmt):
    value: Optional[Expr] = None


Block = list[Stmt]


# --- DECLARATIONS ---

@dataclass(eq=False)
class CapabilityAnnotation:
    receiver: Receiver
    condition: Optional[Expr]
    kind: str
    target: Expr
    span: Span = NO_SPAN


@dataclass(eq=False)
class Param:
    name: str
    ty: TypeExpr
    is_self: bool = False
    mutable: bool = False


class Purity(str, Enum):
    NONE = "none"
    VALUE = "pure"
    MEMORY = "pure_memory"
    UNSTABLE = "pure_unstable"


@dataclass(eq=False)
class FunctionDecl:
    name: str
    generics: list[str]
    params: list[Param]
    ret: TypeExpr
    requires: list[Expr] = field(default_factory=list)
    ensures: list[Expr] = field(default_factory=list)
    purity: Purity = Purity.NONE
    ghost: bool = False
    body: Optional[list[Stmt]] = None
    owner: Optional[TypeExpr] = None
    owner_generics: list[str] = field(default_factory=list)
    span: Span = NO_SPAN
    origin: str = "<input>"
    library: bool = False

    @property
    def qualified_name(self) -> str:
        if self.owner is None:
            return self.name
        base = self.owner.name if isinstance(self.owner, (NamedType, StructType, EnumType)) else str(self.owner)
        return f"{base}::{self.name}"

    @property
    def receiver(self) -> Optional[Receiver]:
        if not self.params or not self.params[0].is_self:
            return None
        ty = self.params[0].ty
        if isinstance(ty, MutRef):
            return Receiver.MUT
        if isinstance(ty, SharedRef):
            return Receiver.SHARED
        return Receiver.VALUE


@dataclass(eq=False)
class FieldDecl:
    name: str
    ty: TypeExpr


@dataclass(eq=False)
class StructDecl:
    name: str
    generics: list[str]
    fields: list[FieldDecl]
    thread_shared: bool = False
    borrowing: bool = False
    annotations: list[CapabilityAnnotation] = field(default_factory=list)
    span: Span = NO_SPAN
    origin: str = "<input>"
    library: bool = False


@dataclass(eq=False)
class VariantDecl:
    name: str
    payload: Optional[TypeExpr]


@dataclass(eq=False)
class EnumDecl:
    name: str
    generics: list[str]
    variants: list[VariantDecl]
    span: Span = NO_SPAN
    origin: str = "<input>"
    library: bool = False


@dataclass(eq=False)
class ImplBlock:
    generics: list[str]
    self_type: TypeExpr
    annotations: list[CapabilityAnnotation] = field(default_factory=list)
    methods: list[FunctionDecl] = field(default_factory=list)
    thread_shared: bool = False
    span: Span = NO_SPAN
    origin: str = "<input>"
    library: bool = False


@dataclass(eq=False)
class Program:
    structs: list[StructDecl] = field(default_factory=list)
    enums: list[EnumDecl] = field(default_factory=list)
    impls: list[ImplBlock] = field(default_factory=list)
    functions: list[FunctionDecl] = field(default_factory=list)
    filename: str = "<input>"

    def is_empty(self) -> bool:
        return not (self.structs or self.enums or self.impls or self.functions)


# --- TRAVERSAL ---

def child_exprs(e: Expr) -> list[Expr]:
    if isinstance(e, (Unary, DerefExpr, Borrow, Old)):
        return [e.operand]
    if isinstance(e, Cast):
        return [e.operand]
    if isinstance(e, FieldAccess):
        return [e.base]
    if isinstance(e, Binary):
        return [e.left, e.right]
    if isinstance(e, Call):
        return ([e.receiver] if e.receiver is not None else []) + list(e.args)
    if isinstance(e, Conditional):
        return [e.cond, e.then, e.otherwise]
    if isinstance(e, IfLet):
        return [e.scrutinee, e.then, e.otherwise]
    if isinstance(e, TupleExpr):
        return list(e.elements)
    return []


def walk_expr(e: Expr) -> Iterator[Expr]:
    """Pre-order traversal of an expression tree."""
    yield e
    for child in child_exprs(e):
        yield from walk_expr(child)


def stmt_exprs(s: Stmt) -> list[Expr]:
    """Expressions owned directly by a statement (not by nested blocks)."""
    if isinstance(s, Let):
        return [s.rhs]
    if isinstance(s, Assign):
        return [s.target, s.rhs]
    if isinstance(s, CallStmt):
        return [s.call]
    if isinstance(s, Assert):
        return [s.cond]
    if isinstance(s, IfElse):
        return [s.cond]
    if isinstance(s, Match):
        return [s.scrutinee]
    if isinstance(s, Return):
        return [s.value] if s.value is not None else []
    return []


def walk_stmts(block: list[Stmt]) -> Iterator[Stmt]:
    for stmt in block:
        yield stmt
        if isinstance(stmt, IfElse):
            yield from walk_stmts(stmt.then)
            yield from walk_stmts(stmt.otherwise)
        elif isinstance(stmt, Match):
            for arm in stmt.arms:
                yield from walk_stmts(arm.body)
