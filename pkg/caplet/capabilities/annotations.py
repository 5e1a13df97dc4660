"""Capability annotations attached to struct types and their instantiation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Optional

from caplet.capabilities.algebra import KIND_BY_NAME, CapKind
from caplet.lang import ast

if TYPE_CHECKING:
    from caplet.lang.typecheck import TypedProgram


def cap_symbol(kind: CapKind, ty: ast.TypeExpr) -> str:
    return f"cap${kind.value}${ty.mangle()}"


@dataclass(frozen=True)
class CapAtom:
    """``kind`` held by ``root`` on the ``pointee``-typed location at ``address``."""
    kind: CapKind
    pointee: ast.TypeExpr
    root: str
    address: str
    version: str

    def term(self) -> str:
        return f"({cap_symbol(self.kind, self.pointee)} {self.root} {self.address} {self.version})"


@dataclass(frozen=True)
class GuardedAtom:
    condition: Optional[str]
    atom: CapAtom
    annotation: ast.CapabilityAnnotation

    def implication(self, trigger: str) -> str:
        premise = trigger if self.condition is None else f"(and {trigger} {self.condition})"
        return f"(=> {premise} {self.atom.term()})"


def trigger_kind(receiver: ast.Receiver) -> CapKind:
    """The capability a holder needs on the struct itself for an annotation to fire."""
    return CapKind.WRITE_REF if receiver is ast.Receiver.MUT else CapKind.READ_REF


def matching_annotations(program: "TypedProgram", ty: ast.TypeExpr,
                         receiver: ast.Receiver) -> list[ast.CapabilityAnnotation]:
    """Annotations active for a holder of ``receiver`` kind; a mutable holder also gets the shared ones."""
    found = program.annotations_of(ty)
    if receiver is ast.Receiver.MUT:
        return list(found)
    return [a for a in found if a.receiver is receiver]


def instantiate_annotations(program: "TypedProgram", ty: ast.TypeExpr, receiver: ast.Receiver,
                            evaluate: Callable[[ast.Expr, str], str], root: str,
                            version: str, condition_version: Optional[str] = None) -> list[GuardedAtom]:
    """Evaluate every matching annotation for one holder.

    ``evaluate(expr, version)`` encodes an annotation expression with ``self``
    bound to the holder. Conditions are read at ``condition_version`` (the
    version the holder was last observed at), targets at ``version``.
    """
    atoms: list[GuardedAtom] = []
    for annotation in matching_annotations(program, ty, receiver):
        condition = None
        if annotation.condition is not None:
            condition = evaluate(annotation.condition, condition_version or version)
        target = evaluate(annotation.target, version)
        pointee = annotation.target.ty.inner
        kind = KIND_BY_NAME[annotation.kind]
        atoms.append(GuardedAtom(condition, CapAtom(kind, pointee, root, target, version), annotation))
    return atoms
