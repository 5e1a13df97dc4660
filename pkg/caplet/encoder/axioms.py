"""Global axioms: pure function contracts and the capability rules of every type in use.

Quantified encodings state each rule once per type with a trigger. Ground
encodings keep every capability atom the function builds and emit the rules
instantiated for those atoms, until no new atom or term appears.
"""
from __future__ import annotations

import logging
from collections import defaultdict

from caplet.capabilities.algebra import CapKind, base_edges, deny_exclusions, structural_children
from caplet.capabilities.annotations import (CapAtom, GuardedAtom, cap_symbol, instantiate_annotations,
                                             trigger_kind)
from caplet.encoder import smt
from caplet.encoder.expressions import ExpressionEncoder, Frame, PureApplication, RefBinding
from caplet.encoder.snapshots import ADDRESS, VERSION
from caplet.lang import ast
from caplet.lang.typecheck import FunctionInstance

logger = logging.getLogger(__name__)

ROOT = "Int"


class AxiomBuilder:

    def __init__(self, exprs: ExpressionEncoder):
        self.exprs = exprs
        self.program = exprs.program
        self.snapshots = exprs.snapshots
        self.script = exprs.script
        self.ground = self.snapshots.ground
        self.universe: dict[str, ast.TypeExpr] = {}
        self._done: set[str] = set()
        self.atoms: list[CapAtom] = []
        self._atom_terms: set[str] = set()
        self._atom_cursor = 0
        self._applied: set[str] = set()
        self._application_cursor = 0
        # Filled in by the function encoder before the first saturation
        self.condition_versions: dict[str, str] = {}
        self.version_classes: dict[str, str] = {}
        self.distinct_addresses: set[str] = set()
        if not self.ground:
            # gv maps a transition version back to the point version it started from
            self.script.declare_fun("gv", [VERSION], VERSION)

    def add_type(self, ty: ast.TypeExpr) -> None:
        m = ty.mangle()
        if m not in self.universe:
            self.universe[m] = ty

    def cap(self, kind: CapKind, ty: ast.TypeExpr, root: str, address: str, version: str) -> str:
        self.add_type(ty)
        self._declare_predicates(ty)
        atom = CapAtom(kind, ty, root, address, version)
        term = atom.term()
        if self.ground and term not in self._atom_terms:
            self._atom_terms.add(term)
            self.atoms.append(atom)
        return term

    def _declare_predicates(self, ty: ast.TypeExpr) -> None:
        for kind in CapKind:
            self.script.declare_fun(cap_symbol(kind, ty), [ROOT, ADDRESS, VERSION], "Bool")

    def saturate(self) -> None:
        """Emit axioms until every pure function and every reachable type is covered."""
        if self.ground:
            self._saturate_ground()
            return
        while True:
            progressed = False
            while self.exprs.functions.pending:
                self.pure_function(self.exprs.functions.pending.pop(0))
                progressed = True
            for ty in list(self.snapshots.memory_types.values()):
                self.add_type(ty)
            for m in [m for m in self.universe if m not in self._done]:
                self._done.add(m)
                self.capability_rules(self.universe[m])
                progressed = True
            if not progressed:
                return

    def _saturate_ground(self) -> None:
        queue = self.exprs.functions.queue
        while True:
            progressed = False
            while self._application_cursor < len(queue):
                self._apply(queue[self._application_cursor])
                self._application_cursor += 1
                progressed = True
            while self._atom_cursor < len(self.atoms):
                self._close(self.atoms[self._atom_cursor])
                self._atom_cursor += 1
                progressed = True
            if self.snapshots.instantiate():
                progressed = True
            if not progressed:
                return

    # --- pure functions ---

    def pure_function(self, callee: FunctionInstance) -> None:
        by_value = callee.purity is ast.Purity.VALUE
        bound = [(f"q${i}", self.snapshots.value_sort(p.ty) if by_value else self.snapshots.sort(p.ty))
                 for i, p in enumerate(callee.params)]
        if callee.purity is ast.Purity.UNSTABLE:
            bound.append(("w", VERSION))
        args = [name for name, _ in bound]
        app = smt.app(callee.symbol, *args)
        frame = self.exprs.callee_frame(callee, args, app, None)
        for axiom, comment in self._function_axioms(callee, frame, app):
            self.script.axiom(smt.forall(bound, axiom, [[app]]), comment)
        logger.debug(f"Emitted axioms for pure function {callee.key}")

    def _function_axioms(self, callee: FunctionInstance, frame: Frame, app: str) -> list[tuple[str, str]]:
        axioms = []
        if callee.decl.ensures:
            axioms.append((self.exprs.contract(callee, frame), f"postcondition of {callee.key}"))
        body = callee.defining_expr()
        if body is not None:
            requires = smt.and_(*(self.exprs.memsnap(r, frame) for r in callee.decl.requires))
            definition = smt.implies(requires, smt.eq(app, self.exprs.memsnap(body, frame)))
            axioms.append((definition, f"definition of {callee.key}"))
        return axioms

    def _apply(self, application: PureApplication) -> None:
        if application.depth >= self.exprs.max_call_depth or application.term in self._applied:
            return
        self._applied.add(application.term)
        callee = application.callee
        with self.exprs.nested(application.depth + 1):
            frame = self.exprs.callee_frame(callee, list(application.args), application.term, None)
            for axiom, _ in self._function_axioms(callee, frame, application.term):
                self.script.axiom(axiom)

    # --- capabilities ---

    def capability_rules(self, ty: ast.TypeExpr) -> None:
        self._declare_predicates(ty)
        self._implications(ty)
        self._structural(ty)
        self._non_aliasing(ty)
        if isinstance(ty, ast.StructType) and self.program.annotations_of(ty):
            self._annotations(ty)

    def _implications(self, ty: ast.TypeExpr) -> None:
        r, a, w = "r", "a", "w"
        bound = [(r, ROOT), (a, ADDRESS), (w, VERSION)]
        for edge in sorted(base_edges().implications, key=lambda e: (e.source.value, e.target.value)):
            source = self.cap(edge.source, ty, r, a, w)
            target = self.cap(edge.target, ty, r, a, w)
            self.script.axiom(smt.forall(bound, smt.implies(source, target), [[source]]),
                              f"{edge.source.value} implies {edge.target.value} on {ty}")

    def _children(self, kind: CapKind, ty: ast.TypeExpr, root: str, address: str, version: str) -> list[str]:
        """Atoms a holder of ``kind`` on the ``ty`` location at ``address`` has on its sub-locations."""
        fields = self.program.fields_of(ty) if isinstance(ty, (ast.StructType, ast.TupleType)) else None
        field_types = dict(fields or [])
        implied = []
        for projection, child_kind in structural_children(kind, ty, fields):
            if isinstance(projection, ast.Deref):
                child_ty = ty.inner
                child = self.snapshots.addr_of(ty, self.snapshots.mem(ty, address, version))
            else:
                child_ty = field_types[projection.name]
                child = self.snapshots.offset(ty, projection.name, address)
            implied.append(self.cap(child_kind, child_ty, root, child, version))
        return implied

    def _structural(self, ty: ast.TypeExpr) -> None:
        r, a, w = "r", "a", "w"
        bound = [(r, ROOT), (a, ADDRESS), (w, VERSION)]
        for kind in CapKind:
            implied = self._children(kind, ty, r, a, w)
            if not implied:
                continue
            holder = self.cap(kind, ty, r, a, w)
            self.script.axiom(smt.forall(bound, smt.implies(holder, smt.and_(*implied)), [[holder]]),
                              f"{kind.value} on {ty} reaches its components")

    def _non_aliasing(self, ty: ast.TypeExpr) -> None:
        r1, r2, a, w = "r1", "r2", "a", "w"
        bound = [(r1, ROOT), (r2, ROOT), (a, ADDRESS), (w, VERSION)]
        for first, second in [*base_edges().pairs(), *deny_exclusions()]:
            left = self.cap(first, ty, r1, a, w)
            right = self.cap(second, ty, r2, a, w)
            self.script.axiom(smt.forall(bound, smt.implies(smt.and_(left, right), smt.eq(r1, r2)),
                                         [[left, right]]),
                              f"{first.value} and {second.value} on {ty} have one holder")

    def _granted(self, ty: ast.StructType, receiver: ast.Receiver, root: str, address: str, version: str,
                 condition_version: str) -> list[GuardedAtom]:
        evaluate = self.exprs.evaluator({"self": RefBinding(address)})
        granted = []
        for guarded in instantiate_annotations(self.program, ty, receiver, evaluate, root, version,
                                               condition_version):
            if guarded.annotation.receiver is not receiver:
                continue
            self.cap(guarded.atom.kind, guarded.atom.pointee, root, guarded.atom.address, version)
            granted.append(guarded)
        return granted

    def _annotations(self, ty: ast.StructType) -> None:
        r, a, w = "r", "a", "w"
        bound = [(r, ROOT), (a, ADDRESS), (w, VERSION)]
        for receiver in (ast.Receiver.SHARED, ast.Receiver.MUT):
            trigger = self.cap(trigger_kind(receiver), ty, r, a, w)
            for guarded in self._granted(ty, receiver, r, a, w, f"(gv {w})"):
                self.script.axiom(smt.forall(bound, guarded.implication(trigger), [[trigger]]),
                                  f"{guarded.annotation.kind} granted by {ty}")

    # --- ground instances ---

    def _close(self, atom: CapAtom) -> None:
        """Emit what ``atom`` implies: weaker kinds, component atoms and annotation grants."""
        term = atom.term()
        ty, root, address, version = atom.pointee, atom.root, atom.address, atom.version
        for edge in sorted(base_edges().implications, key=lambda e: e.target.value):
            if edge.source is atom.kind:
                self.script.axiom(smt.implies(term, self.cap(edge.target, ty, root, address, version)))
        implied = self._children(atom.kind, ty, root, address, version)
        if implied:
            self.script.axiom(smt.implies(term, smt.and_(*implied)))
        if not isinstance(ty, ast.StructType) or not self.program.annotations_of(ty):
            return
        for receiver in (ast.Receiver.SHARED, ast.Receiver.MUT):
            if atom.kind is not trigger_kind(receiver):
                continue
            condition_version = self.condition_versions.get(version, version)
            for guarded in self._granted(ty, receiver, root, address, version, condition_version):
                self.script.axiom(guarded.implication(term))

    def exclusions(self) -> None:
        """Emit non-aliasing for every incompatible pair of atoms held by different roots."""
        by_kind: dict[tuple[CapKind, str], list[CapAtom]] = defaultdict(list)
        for atom in self.atoms:
            by_kind[(atom.kind, atom.pointee.mangle())].append(atom)
        count = 0
        for first, second in [*base_edges().pairs(), *deny_exclusions()]:
            for m in self.universe:
                for left in by_kind.get((first, m), []):
                    for right in by_kind.get((second, m), []):
                        if left.root == right.root or not self._may_meet(left, right):
                            continue
                        self.script.axiom(smt.not_(smt.and_(left.term(), right.term(),
                                                            smt.eq(left.address, right.address),
                                                            smt.eq(left.version, right.version))))
                        count += 1
        logger.debug(f"Emitted {count} non-aliasing instances over {len(self.atoms)} atoms")

    def _may_meet(self, left: CapAtom, right: CapAtom) -> bool:
        classes = self.version_classes
        if classes.get(left.version, left.version) != classes.get(right.version, right.version):
            return False
        distinct = self.distinct_addresses
        return left.address == right.address or not (left.address in distinct and right.address in distinct)
