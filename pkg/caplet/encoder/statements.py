"""Encoding of one analyzed function: versions, seeded capabilities, edge semantics and framing.

Every program point ``p`` owns the memory version ``v$p`` and every edge
``e`` the transition version ``t$e``. Facts produced for an edge hold when
the edge is taken, so they are guarded by the edge condition when a query is
printed; point facts are guarded by the point's reachability.
"""
from __future__ import annotations

import logging
from collections import defaultdict
from typing import Optional

from caplet.capabilities.algebra import CapKind
from caplet.capabilities.annotations import CapAtom
from caplet.encoder import smt
from caplet.encoder.axioms import AxiomBuilder
from caplet.encoder.expressions import (Binding, ExpressionEncoder, Frame, PlaceBinding, RefBinding,
                                        TermBinding)
from caplet.encoder.obligations import EncodedFunction, EncoderOptions, Obligation, ObligationKind, number
from caplet.encoder.snapshots import ADDRESS, VERSION, SnapshotEncoder
from caplet.errors import EncodingError
from caplet.flow.cfg import Edge, EdgeKind, ProgramGraph
from caplet.flow.normalize import is_impure_call
from caplet.flow.roots import RootTable, variable_address
from caplet.lang import ast
from caplet.lang.typecheck import TypedProgram

logger = logging.getLogger(__name__)


class FunctionEncoder:

    def __init__(self, program: TypedProgram, graph: ProgramGraph, roots: RootTable,
                 options: Optional[EncoderOptions] = None):
        self.program = program
        self.graph = graph
        self.roots = roots
        self.options = options or EncoderOptions()
        self.instance = graph.instance
        self.script = smt.Script()
        self.snapshots = SnapshotEncoder(program, self.script, ground=not self.options.quantified_axioms)
        self.exprs = ExpressionEncoder(program, self.snapshots, self.options.max_call_depth)
        self.axioms = AxiomBuilder(self.exprs)
        self.env: dict[str, Binding] = {
            name: PlaceBinding(variable_address(roots.index[name], name)) for name in self.instance.variables}
        self.global_facts: list[str] = []
        self.edge_conds: dict[int, str] = {}
        self.edge_facts: dict[int, list[str]] = defaultdict(list)
        self.point_facts: dict[int, list[str]] = defaultdict(list)
        self.obligations: list[Obligation] = []
        self._framed: set[tuple[int, str]] = set()
        self._framed_atoms = 0
        self._by_transition = {edge.transition: edge for edge in graph.edges
                               if edge.kind in (EdgeKind.STATEMENT, EdgeKind.INTERFERENCE)}
        self._frame_sets: dict[int, set[str]] = {}

    # --- driver ---

    def encode(self) -> EncodedFunction:
        self._declare()
        self._entry()
        for point in self.graph.points:
            self._seed_point(point.id)
        for edge in self.graph.edges:
            self._edge(edge)
        if self.graph.final is not None:
            self._postconditions(self.graph.final, None, self.instance.decl.span)
        self.axioms.saturate()
        if self.snapshots.ground:
            while self._frame_atoms():
                self.axioms.saturate()
            self.axioms.exclusions()
        else:
            while self._frame_all():
                self.axioms.saturate()
        obligations = number(self.obligations)
        logger.info(f"Encoded {self.instance.key}: {len(obligations)} obligations, "
                    f"{len(self.axioms.universe)} types")
        return EncodedFunction(self.instance.key, self.graph, self.script.prelude(), self.global_facts,
                               self.edge_conds, dict(self.edge_facts), dict(self.point_facts), obligations)

    def _frame(self, version: str, facts: Optional[list[str]] = None, old: Optional[str] = None,
               env: Optional[dict[str, Binding]] = None) -> Frame:
        return Frame(self.env if env is None else env, version, old, facts)

    def _declare(self) -> None:
        addresses = [variable_address(self.roots.index[name], name) for name in self.instance.variables]
        for address in addresses:
            self.script.declare_const(address, ADDRESS)
        self.global_facts.append(smt.distinct(addresses))
        for point in self.graph.points:
            self.script.declare_const(point.version, VERSION)
        for edge in self.graph.edges:
            self.script.declare_const(edge.transition, VERSION)
        if self.snapshots.ground:
            self.axioms.distinct_addresses = set(addresses)
            self.axioms.version_classes = _version_classes(self.graph)
            self.axioms.condition_versions = {point.version: point.version for point in self.graph.points}
            self.axioms.condition_versions.update(
                (edge.transition, self.graph.point(edge.source).version) for edge in self.graph.edges)
        else:
            self._gv_facts()
        self.global_facts[:] = [f for f in self.global_facts if f != smt.TRUE]

    def _gv_facts(self) -> None:
        for point in self.graph.points:
            self.global_facts.append(smt.eq(f"(gv {point.version})", point.version))
        for edge in self.graph.edges:
            self.global_facts.append(smt.eq(f"(gv {edge.transition})", self.graph.point(edge.source).version))

    def _entry(self) -> None:
        entry = self.graph.entry
        facts = self.point_facts[entry.id]
        frame = self._frame(entry.version, facts)
        for requires in self.instance.decl.requires:
            frame.add_fact(self.exprs.memsnap(requires, frame))

    def _seed_point(self, pid: int) -> None:
        point = self.graph.point(pid)
        for root in self.roots.roots_at(pid):
            atom = self.axioms.cap(root.kind, root.ty, str(root.id), root.address, point.version)
            self.point_facts[pid].append(smt.implies(point.reach, atom))

    # --- edges ---

    def _edge(self, edge: Edge) -> None:
        source = self.graph.point(edge.source)
        target = self.graph.point(edge.target)
        facts = self.edge_facts[edge.id]
        self.edge_conds[edge.id] = source.reach
        if edge.kind is EdgeKind.ASSUME:
            self._assume(edge, facts)
        elif edge.kind is EdgeKind.JOIN:
            facts.append(smt.eq(target.version, source.version))
        elif edge.kind is EdgeKind.RETURN:
            self._return(edge)
        else:
            self._seed_transition(edge)
            if edge.kind is EdgeKind.STATEMENT:
                self._statement(edge, facts)

    def _seed_transition(self, edge: Edge) -> None:
        for root, kind in self.roots.transition_roots(edge):
            self.edge_facts[edge.id].append(
                self.axioms.cap(kind, root.ty, str(root.id), root.address, edge.transition))

    def _assume(self, edge: Edge, facts: list[str]) -> None:
        source = self.graph.point(edge.source)
        target = self.graph.point(edge.target)
        guard = edge.guard
        frame = self._frame(source.version, facts)
        if guard.cond is not None:
            test = self.exprs.memsnap(guard.cond, frame)
            test = smt.not_(test) if guard.negated else test
        else:
            ty = guard.scrutinee.ty
            scrutinee = self.exprs.memsnap(guard.scrutinee, frame)
            test = self.snapshots.tester(ty, guard.arm.variant_index, scrutinee)
            if guard.binder is not None:
                binder = self.env[guard.binder]
                payload = self.snapshots.payload(ty, guard.arm.variant_index, scrutinee)
                facts.append(smt.eq(self.snapshots.mem(guard.arm.binder_type, binder.address, target.version),
                                    payload))
        self.edge_conds[edge.id] = smt.and_(source.reach, test)
        facts.insert(0, smt.eq(target.version, source.version))

    def _statement(self, edge: Edge, facts: list[str]) -> None:
        stmt = edge.stmt
        pre = self.graph.point(edge.source).version
        post = self.graph.point(edge.target).version
        frame = self._frame(pre, facts)
        if isinstance(stmt, ast.Let):
            address = self.env[stmt.name].address
            if is_impure_call(self.program, stmt.rhs):
                self._call(edge, stmt.rhs, facts, PlaceBinding(address))
            else:
                rhs = self.exprs.memsnap(stmt.rhs, frame)
                facts.append(smt.eq(self.snapshots.mem(stmt.var_type, address, post), rhs))
        elif isinstance(stmt, ast.Assign):
            target = self.exprs.address(stmt.target, frame)
            rhs = self.exprs.memsnap(stmt.rhs, frame)
            facts.append(smt.eq(self.snapshots.mem(stmt.target.ty, target, post), rhs))
            holder = _dereferenced_variable(stmt.target)
            if holder is not None:
                # writing through a reference leaves the reference itself in place
                slot = self.env[holder.name].address
                facts.append(smt.eq(self.snapshots.mem(holder.ty, slot, post),
                                    self.snapshots.mem(holder.ty, slot, pre)))
        elif isinstance(stmt, ast.CallStmt):
            if is_impure_call(self.program, stmt.call):
                self._call(edge, stmt.call, facts, None)
            else:
                self.exprs.memsnap(stmt.call, frame)
        elif isinstance(stmt, ast.Drop) and stmt.glue is not None:
            self._call(edge, stmt.glue, facts, None)
        elif isinstance(stmt, ast.Assert):
            self._check_roots(stmt.cond, edge.source)
            hypotheses: list[str] = []
            goal = self.exprs.memsnap(stmt.cond, self._frame(pre, hypotheses))
            self._oblige(ObligationKind.ASSERT, goal, edge.source, stmt.span, hypotheses, "assertion")

    def _call(self, edge: Edge, call: ast.Call, facts: list[str], result: Optional[Binding]) -> None:
        callee = self.program.instances[call.target]
        pre = self.graph.point(edge.source).version
        post = self.graph.point(edge.target).version
        caller = self._frame(pre, facts)
        env: dict[str, Binding] = {}
        for param, arg in zip(callee.params, call.args):
            if ast.is_reference(param.ty):
                if isinstance(arg, ast.Borrow):
                    address = self.exprs.address(arg.operand, caller)
                else:
                    address = self.snapshots.addr_of(arg.ty, self.exprs.memsnap(arg, caller))
                env[param.name] = RefBinding(address)
            else:
                env[param.name] = TermBinding(self.exprs.memsnap(arg, caller))
        for requires in callee.decl.requires:
            hypotheses: list[str] = []
            goal = self.exprs.memsnap(requires, self._frame(pre, hypotheses, env=env))
            self._oblige(ObligationKind.PRECONDITION, goal, edge.source, edge.span, hypotheses,
                         f"precondition of {callee.key}")
        if result is not None:
            env["result"] = result
        after = self._frame(post, facts, old=pre, env=env)
        for ensures in callee.decl.ensures:
            after.add_fact(self.exprs.memsnap(ensures, after))

    def _return(self, edge: Edge) -> None:
        stmt = edge.stmt
        result = None
        if stmt is not None and stmt.value is not None:
            pre = self.graph.point(edge.source).version
            result = TermBinding(self.exprs.memsnap(stmt.value, self._frame(pre, self.edge_facts[edge.id])))
        self._postconditions(edge.source, result, edge.span)

    def _postconditions(self, pid: int, result: Optional[Binding], span: ast.Span) -> None:
        version = self.graph.point(pid).version
        env = dict(self.env)
        if result is not None:
            env["result"] = result
        for ensures in self.instance.decl.ensures:
            self._check_roots(ensures, pid)
            hypotheses: list[str] = []
            goal = self.exprs.memsnap(ensures, Frame(env, version, self.graph.entry.version, hypotheses))
            self._oblige(ObligationKind.POSTCONDITION, goal, pid, span, hypotheses, "postcondition")

    def _oblige(self, kind: ObligationKind, goal: str, pid: int, span: ast.Span, hypotheses: list[str],
                description: str) -> None:
        self.obligations.append(Obligation(kind, goal, pid, span, self.instance.key, self.instance.decl.origin,
                                           hypotheses, description, len(self.obligations)))

    def _check_roots(self, spec: ast.Expr, pid: int) -> None:
        binders = {node.binder for node in ast.walk_expr(spec) if isinstance(node, ast.IfLet)}
        for node in ast.walk_expr(spec):
            if not isinstance(node, ast.Var) or node.name in binders or node.name == "result":
                continue
            if self.roots.root_of(node.name, pid) is None:
                raise EncodingError(f"`{node.name}` has no live root here", node.span, self.instance.decl.origin)

    # --- framing ---

    def _impure(self, stmt: ast.Stmt) -> bool:
        if isinstance(stmt, ast.Let):
            return is_impure_call(self.program, stmt.rhs)
        if isinstance(stmt, ast.CallStmt):
            return is_impure_call(self.program, stmt.call)
        return isinstance(stmt, ast.Drop)

    def _frame_all(self) -> bool:
        """Frame every statement and interference edge for every type met so far."""
        added = False
        for edge in self.graph.edges:
            if edge.kind not in (EdgeKind.STATEMENT, EdgeKind.INTERFERENCE):
                continue
            for m, ty in list(self.axioms.universe.items()):
                if (edge.id, m) in self._framed:
                    continue
                self._framed.add((edge.id, m))
                self._frame_type(edge, ty)
                added = True
        return added

    def _unchanged(self, edge: Edge, ty: ast.TypeExpr, address: str) -> str:
        pre = self.graph.point(edge.source).version
        post = self.graph.point(edge.target).version
        before, during, after = (self.snapshots.mem(ty, address, v) for v in (pre, edge.transition, post))
        return smt.and_(smt.eq(before, during), smt.eq(during, after))

    def _frame_type(self, edge: Edge, ty: ast.TypeExpr) -> None:
        t = edge.transition
        facts = self.edge_facts[edge.id]
        r, a = "r", "a"
        unchanged = self._unchanged(edge, ty, a)
        interference = edge.kind is EdgeKind.INTERFERENCE
        frame_set = [] if interference else self.roots.frame_set(edge)

        def each_root(kinds: list[CapKind]) -> None:
            atoms = [self.axioms.cap(k, ty, r, a, t) for k in kinds]
            facts.append(smt.forall([(r, "Int"), (a, ADDRESS)], smt.implies(smt.and_(*atoms), unchanged),
                                    [atoms]))

        def frame_roots(kinds: list[CapKind]) -> None:
            for root in frame_set:
                atoms = [self.axioms.cap(k, ty, str(root.id), a, t) for k in kinds]
                facts.append(smt.forall([(a, ADDRESS)], smt.implies(smt.and_(*atoms), unchanged), [atoms]))

        if self.options.framing("immutable"):
            each_root([CapKind.IMMUTABLE])
        if self.options.framing("unique"):
            if interference:
                each_root([CapKind.UNIQUE])
            else:
                frame_roots([CapKind.UNIQUE])
        if self.options.framing("local"):
            if interference:
                each_root([CapKind.LOCAL])
            elif self._impure(edge.stmt):
                frame_roots([CapKind.LOCAL, CapKind.NO_WRITE_REF])
            else:
                each_root([CapKind.LOCAL, CapKind.NO_WRITE_REF])

    def _frame_atoms(self) -> bool:
        """Frame the location of every atom held at a transition version; True when there were new atoms."""
        atoms = self.axioms.atoms
        added = self._framed_atoms < len(atoms)
        while self._framed_atoms < len(atoms):
            atom = atoms[self._framed_atoms]
            self._framed_atoms += 1
            edge = self._by_transition.get(atom.version)
            if edge is not None:
                self._frame_atom(edge, atom)
        return added

    def _frame_atom(self, edge: Edge, atom: CapAtom) -> None:
        interference = edge.kind is EdgeKind.INTERFERENCE
        listed = not interference and atom.root in self._frame_set_ids(edge)
        premise = atom.term()
        if atom.kind is CapKind.IMMUTABLE:
            framed = self.options.framing("immutable")
        elif atom.kind is CapKind.UNIQUE:
            framed = self.options.framing("unique") and (interference or listed)
        elif atom.kind is CapKind.LOCAL:
            framed = self.options.framing("local") and (interference or listed or not self._impure(edge.stmt))
            if framed and not interference:
                partner = self.axioms.cap(CapKind.NO_WRITE_REF, atom.pointee, atom.root, atom.address,
                                          atom.version)
                premise = smt.and_(premise, partner)
        else:
            framed = False
        if framed:
            self.edge_facts[edge.id].append(
                smt.implies(premise, self._unchanged(edge, atom.pointee, atom.address)))

    def _frame_set_ids(self, edge: Edge) -> set[str]:
        if edge.id not in self._frame_sets:
            self._frame_sets[edge.id] = {str(root.id) for root in self.roots.frame_set(edge)}
        return self._frame_sets[edge.id]


def _version_classes(graph: ProgramGraph) -> dict[str, str]:
    """Point versions that assume and join edges may equate, each mapped to one representative."""
    parent: dict[str, str] = {}

    def find(version: str) -> str:
        while parent.get(version, version) != version:
            version = parent[version]
        return version

    for edge in graph.edges:
        if edge.kind in (EdgeKind.ASSUME, EdgeKind.JOIN):
            source, target = find(graph.point(edge.source).version), find(graph.point(edge.target).version)
            if source != target:
                parent[max(source, target)] = min(source, target)
    return {point.version: find(point.version) for point in graph.points}


def _dereferenced_variable(place: ast.Expr) -> Optional[ast.Var]:
    while isinstance(place, ast.FieldAccess):
        place = place.base
    if isinstance(place, ast.DerefExpr) and isinstance(place.operand, ast.Var):
        return place.operand
    return None


def encode_function(program: TypedProgram, graph: ProgramGraph, roots: RootTable,
                    options: Optional[EncoderOptions] = None) -> EncodedFunction:
    return FunctionEncoder(program, graph, roots, options).encode()


def lower_obligations(encoded: EncodedFunction) -> list[tuple[Obligation, str]]:
    """Each obligation with its complete solver query, in source order."""
    return encoded.scripts()
