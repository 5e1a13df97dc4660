"""Encoding of typed expressions into SMT terms.

An expression is encoded in one of three modes: as a memory snapshot, as a
value snapshot, or as the address of the place it denotes. Pure calls become
applications of uninterpreted functions; each call site also records the
callee's postcondition, instantiated for that site, as a side fact. Ground
encodings record the application instead and its contract is instantiated
once for the whole function.
"""
from __future__ import annotations

import logging
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Optional, Union

from caplet.encoder import smt
from caplet.encoder.snapshots import VERSION, SnapshotEncoder
from caplet.errors import EncodingError
from caplet.lang import ast
from caplet.lang.typecheck import BUILTIN_DEREF, FunctionInstance, TypedProgram

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PlaceBinding:
    """A variable stored in memory at ``address``."""
    address: str


@dataclass(frozen=True)
class RefBinding:
    """A reference-typed variable whose target lives at ``address``."""
    address: str


@dataclass(frozen=True)
class TermBinding:
    """A variable standing for a fixed snapshot (a value snapshot when ``value``)."""
    term: str
    value: bool = False


Binding = Union[PlaceBinding, RefBinding, TermBinding]


@dataclass
class Frame:
    env: dict[str, Binding]
    version: Optional[str]
    old_version: Optional[str] = None
    facts: Optional[list[str]] = None
    values: bool = False

    def bind(self, name: str, binding: Binding) -> "Frame":
        return replace(self, env={**self.env, name: binding})

    def add_fact(self, fact: str) -> None:
        if self.facts is not None and fact != smt.TRUE and fact not in self.facts:
            self.facts.append(fact)


@dataclass(frozen=True)
class PureApplication:
    callee: FunctionInstance
    args: tuple[str, ...]
    term: str
    depth: int


@dataclass
class PureFunctions:
    """Symbols of the pure functions met so far, and those still waiting for their axioms."""
    declared: dict[str, FunctionInstance] = field(default_factory=dict)
    pending: list[FunctionInstance] = field(default_factory=list)
    applications: dict[str, PureApplication] = field(default_factory=dict)
    queue: list[PureApplication] = field(default_factory=list)

    def record(self, application: PureApplication) -> None:
        known = self.applications.get(application.term)
        if known is None or application.depth < known.depth:
            self.applications[application.term] = application
            self.queue.append(application)


class ExpressionEncoder:

    def __init__(self, program: TypedProgram, snapshots: SnapshotEncoder, max_call_depth: int = 2):
        self.program = program
        self.snapshots = snapshots
        self.script = snapshots.script
        self.functions = PureFunctions()
        self.max_call_depth = max_call_depth
        self._depth = 0

    # --- helpers ---

    @staticmethod
    def _version(frame: Frame, e: ast.Expr) -> str:
        if frame.version is None:
            raise EncodingError("memory is read where no program state is available", e.span)
        return frame.version

    def _binding(self, frame: Frame, var: ast.Var) -> Binding:
        binding = frame.env.get(var.name)
        if binding is None:
            raise EncodingError(f"`{var.name}` has no live root here", var.span)
        return binding

    # --- modes ---

    def memsnap(self, e: ast.Expr, frame: Frame) -> str:
        snap = self.snapshots
        if isinstance(e, ast.IntLit):
            return smt.int_lit(e.value)
        if isinstance(e, ast.BoolLit):
            return smt.bool_lit(e.value)
        if isinstance(e, ast.UnitLit):
            return snap.unit(ast.UNIT)
        if isinstance(e, ast.Var):
            return self._var(e, frame)
        if isinstance(e, ast.Unary):
            operand = self.memsnap(e.operand, frame)
            return f"(- {operand})" if e.op == "-" else smt.not_(operand)
        if isinstance(e, ast.DerefExpr):
            return self._deref(e, frame)
        if isinstance(e, ast.Borrow):
            if frame.values:
                return self.memsnap(e.operand, frame)
            return snap.reference(e.ty, self.address(e.operand, frame), self.memsnap(e.operand, frame))
        if isinstance(e, ast.FieldAccess):
            return snap.field(e.base.ty, e.name, self.memsnap(e.base, frame), value=frame.values)
        if isinstance(e, ast.Binary):
            return self._binary(e, frame)
        if isinstance(e, ast.Cast):
            operand = self.memsnap(e.operand, frame)
            if ast.is_reference(e.operand.ty) and not frame.values:
                return snap.addr_of(e.operand.ty, operand)
            return operand
        if isinstance(e, ast.Old):
            if frame.old_version is None:
                raise EncodingError("`old` has no pre-state here", e.span)
            return self.memsnap(e.operand, replace(frame, version=frame.old_version))
        if isinstance(e, ast.Conditional):
            return smt.ite(self.memsnap(e.cond, frame), self.memsnap(e.then, frame),
                           self.memsnap(e.otherwise, frame))
        if isinstance(e, ast.IfLet):
            return self._if_let(e, frame)
        if isinstance(e, ast.TupleExpr):
            return snap.construct(e.ty, [self.memsnap(x, frame) for x in e.elements], value=frame.values)
        if isinstance(e, ast.Call):
            return self._call(e, frame)
        raise EncodingError(f"cannot encode {type(e).__name__}", e.span)

    def value(self, e: ast.Expr, frame: Frame) -> str:
        if frame.values:
            return self.memsnap(e, frame)
        if isinstance(e, (ast.Borrow, ast.DerefExpr)):
            return self.value(e.operand, frame)
        if isinstance(e, ast.Var):
            binding = self._binding(frame, e)
            if isinstance(binding, RefBinding):
                inner = e.ty.inner
                return self.snapshots.value_of(inner, self.snapshots.mem(inner, binding.address,
                                                                         self._version(frame, e)))
            if isinstance(binding, TermBinding) and binding.value:
                return binding.term
        return self.snapshots.value_of(e.ty, self.memsnap(e, frame))

    def address(self, e: ast.Expr, frame: Frame) -> str:
        if isinstance(e, ast.Var):
            binding = self._binding(frame, e)
            if isinstance(binding, PlaceBinding):
                return binding.address
            raise EncodingError(f"`{e.name}` does not denote a memory place", e.span)
        if isinstance(e, ast.DerefExpr):
            op = e.operand
            if isinstance(op, ast.Var):
                binding = self._binding(frame, op)
                if isinstance(binding, RefBinding):
                    return binding.address
            return self.snapshots.addr_of(op.ty, self.memsnap(op, frame))
        if isinstance(e, ast.FieldAccess):
            return self.snapshots.offset(e.base.ty, e.name, self.address(e.base, frame))
        raise EncodingError(f"{type(e).__name__} does not denote a memory place", e.span)

    # --- cases ---

    def _var(self, e: ast.Var, frame: Frame) -> str:
        snap = self.snapshots
        binding = self._binding(frame, e)
        if isinstance(binding, TermBinding):
            return binding.term
        version = self._version(frame, e)
        if isinstance(binding, RefBinding):
            return snap.reference(e.ty, binding.address, snap.mem(e.ty.inner, binding.address, version))
        if ast.is_reference(e.ty):
            target = snap.addr_of(e.ty, snap.mem(e.ty, binding.address, version))
            return snap.reference(e.ty, target, snap.mem(e.ty.inner, target, version))
        return snap.mem(e.ty, binding.address, version)

    def _deref(self, e: ast.DerefExpr, frame: Frame) -> str:
        op = e.operand
        if isinstance(op, ast.Var):
            binding = self._binding(frame, op)
            if isinstance(binding, RefBinding):
                return self.snapshots.mem(e.ty, binding.address, self._version(frame, e))
            if isinstance(binding, TermBinding) and binding.value:
                return binding.term
        if frame.values:
            return self.memsnap(op, frame)
        reference = self.memsnap(op, frame)
        if frame.version is not None:
            return self.snapshots.mem(e.ty, self.snapshots.addr_of(op.ty, reference), frame.version)
        return self.snapshots.target_of(op.ty, reference)

    def _binary(self, e: ast.Binary, frame: Frame) -> str:
        op = e.op
        if op in ("==", "!="):
            equal = smt.eq(self.value(e.left, frame), self.value(e.right, frame))
            return equal if op == "==" else smt.not_(equal)
        if op == "====":
            return smt.eq(self.memsnap(e.left, frame), self.memsnap(e.right, frame))
        left, right = self.memsnap(e.left, frame), self.memsnap(e.right, frame)
        if op == "&&":
            return smt.and_(left, right)
        if op == "||":
            return smt.or_(left, right)
        if op == "==>":
            return smt.implies(left, right)
        return f"({op} {left} {right})"

    def _if_let(self, e: ast.IfLet, frame: Frame) -> str:
        ty = e.scrutinee.ty
        scrutinee = self.memsnap(e.scrutinee, frame)
        cond = self.snapshots.tester(ty, e.variant_index, scrutinee, value=frame.values)
        inner = frame
        if e.binder is not None:
            payload = self.snapshots.payload(ty, e.variant_index, scrutinee, value=frame.values)
            inner = frame.bind(e.binder, TermBinding(payload, frame.values))
        return smt.ite(cond, self.memsnap(e.then, inner), self.memsnap(e.otherwise, frame))

    def _call(self, e: ast.Call, frame: Frame) -> str:
        if e.variant is not None:
            args = [self.memsnap(a, frame) for a in e.args]
            return self.snapshots.construct(e.ty, args, e.variant, value=frame.values)
        if e.target == BUILTIN_DEREF:
            pointer = self.memsnap(e.args[0], frame)
            return self.snapshots.mem(e.ty, pointer, self._version(frame, e))
        callee = self.program.instances[e.target]
        if not callee.is_pure:
            raise EncodingError(f"call to impure function `{callee.key}` inside an expression", e.span)
        by_value = callee.purity is ast.Purity.VALUE
        args = [self.value(a, frame) if by_value else self.memsnap(a, frame) for a in e.args]
        if callee.purity is ast.Purity.UNSTABLE:
            args.append(self._version(frame, e))
        term = smt.app(self.pure_symbol(callee), *args)
        if self.snapshots.ground:
            self.functions.record(PureApplication(callee, tuple(args), term, self._depth))
        else:
            self._call_site_facts(callee, args, term, frame)
        return term

    # --- pure functions ---

    def pure_symbol(self, callee: FunctionInstance) -> str:
        symbol = callee.symbol
        if symbol not in self.functions.declared:
            by_value = callee.purity is ast.Purity.VALUE
            sorts = [self.snapshots.value_sort(p.ty) if by_value else self.snapshots.sort(p.ty)
                     for p in callee.params]
            if callee.purity is ast.Purity.UNSTABLE:
                sorts.append(VERSION)
            self.script.declare_fun(symbol, sorts, self.snapshots.sort(callee.ret))
            self.functions.declared[symbol] = callee
            self.functions.pending.append(callee)
            logger.debug(f"Declared pure function {callee.key}")
        return symbol

    def callee_frame(self, callee: FunctionInstance, args: list[str], result: str,
                     facts: Optional[list[str]]) -> Frame:
        """The frame a pure function's contract is read in, with parameters bound to ``args``."""
        by_value = callee.purity is ast.Purity.VALUE
        env: dict[str, Binding] = {p.name: TermBinding(a, by_value) for p, a in zip(callee.params, args)}
        env["result"] = TermBinding(result, by_value)
        version = args[-1] if callee.purity is ast.Purity.UNSTABLE else None
        return Frame(env, version, version, facts, by_value)

    def contract(self, callee: FunctionInstance, frame: Frame) -> str:
        requires = [self.memsnap(r, frame) for r in callee.decl.requires]
        ensures = [self.memsnap(x, frame) for x in callee.decl.ensures]
        return smt.implies(smt.and_(*requires), smt.and_(*ensures))

    def _call_site_facts(self, callee: FunctionInstance, args: list[str], term: str, frame: Frame) -> None:
        if frame.facts is None or not callee.decl.ensures or self._depth >= self.max_call_depth:
            return
        self._depth += 1
        try:
            inner = self.callee_frame(callee, args, term, frame.facts)
            frame.add_fact(self.contract(callee, inner))
        finally:
            self._depth -= 1

    @contextmanager
    def nested(self, depth: int) -> Iterator[None]:
        """Encode at call nesting ``depth``; applications met meanwhile are recorded at that depth."""
        saved = self._depth
        self._depth = depth
        try:
            yield
        finally:
            self._depth = saved

    def evaluator(self, env: dict[str, Binding]) -> Callable[[ast.Expr, str], str]:
        """Encode annotation expressions: pointers become addresses, everything else a snapshot."""
        def evaluate(e: ast.Expr, version: str) -> str:
            term = self.memsnap(e, Frame(env, version))
            if ast.is_reference(e.ty):
                return self.snapshots.addr_of(e.ty, term)
            return term
        return evaluate
