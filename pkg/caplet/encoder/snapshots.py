"""Snapshot sorts, versioned memory functions and their coherence axioms.

A memory snapshot of a type is a datatype value: integers and booleans are
themselves, raw pointers are addresses, references pair the target address
with the target's snapshot, unsafe cells are empty and structs, tuples and
enums are built from their components. Value snapshots only differ for types
holding references, where the address is dropped.

With ``ground`` set, coherence, offset and value-snapshot axioms are not
quantified: every memory, offset and conversion term is recorded when built
and ``instantiate`` emits the instances it needs.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

from caplet.encoder import smt
from caplet.errors import EncodingError
from caplet.lang import ast
from caplet.lang.typecheck import TypedProgram

logger = logging.getLogger(__name__)

ADDRESS = "Address"
VERSION = "Version"


@dataclass(frozen=True)
class Parts:
    """How a term was built: constructor of ``type_key``, optional variant and arguments."""
    type_key: str
    variant: Optional[int]
    args: tuple[str, ...]
    value: bool = False


class SnapshotEncoder:

    def __init__(self, program: TypedProgram, script: smt.Script, ground: bool = False):
        self.program = program
        self.script = script
        self.ground = ground
        self.parts: dict[str, Parts] = {}
        self.memory_types: dict[str, ast.TypeExpr] = {}
        self._sorts: set[str] = set()
        self._value_sorts: set[str] = set()
        self._in_progress: set[str] = set()
        self._offsets: set[str] = set()
        # Ground terms awaiting their instances, in creation order
        self._mem_terms: dict[str, tuple[ast.TypeExpr, str, str]] = {}
        self._offset_terms: dict[str, tuple[ast.TypeExpr, str, str]] = {}
        self._value_terms: dict[str, tuple[ast.TypeExpr, str]] = {}
        self._pending: list[tuple[str, str]] = []
        self._cursor = 0
        script.declare_sort(ADDRESS)
        script.declare_sort(VERSION)

    # --- sorts ---

    def sort(self, ty: ast.TypeExpr) -> str:
        if isinstance(ty, ast.IntType):
            return "Int"
        if isinstance(ty, ast.BoolType):
            return "Bool"
        if isinstance(ty, ast.RawPtr):
            return ADDRESS
        if not ty.is_concrete():
            raise EncodingError(f"type `{ty}` is not concrete")
        name = f"MemSnap${ty.mangle()}$"
        if ty.mangle() not in self._sorts:
            self._declare_snapshot(ty, name)
        return name

    def value_sort(self, ty: ast.TypeExpr) -> str:
        if not self.program.contains_reference(ty):
            return self.sort(ty)
        if ast.is_reference(ty):
            return self.value_sort(ty.inner)
        name = f"ValSnap${ty.mangle()}$"
        if ty.mangle() not in self._value_sorts:
            self._declare_value_snapshot(ty, name)
        return name

    def _guard_recursion(self, key: str, ty: ast.TypeExpr) -> None:
        if key in self._in_progress:
            raise EncodingError(f"recursive type `{ty}` has no finite snapshot")
        self._in_progress.add(key)

    def _declare_snapshot(self, ty: ast.TypeExpr, name: str) -> None:
        m = ty.mangle()
        self._guard_recursion(m, ty)
        if ast.is_reference(ty):
            ctors = [f"(mk${m}$ (raddr${m} {ADDRESS}) (rtarget${m} {self.sort(ty.inner)}))"]
        elif isinstance(ty, ast.EnumType):
            ctors = []
            for variant, payload in self.program.variants_of(ty):
                if payload is None:
                    ctors.append(f"(mk${m}${variant})")
                else:
                    ctors.append(f"(mk${m}${variant} (pay${m}${variant} {self.sort(payload)}))")
        elif isinstance(ty, (ast.StructType, ast.TupleType)):
            fields = " ".join(f"(fld${m}${f} {self.sort(t)})" for f, t in self.program.fields_of(ty))
            ctors = [f"(mk${m}$ {fields})" if fields else f"(mk${m}$)"]
        elif isinstance(ty, ast.UnsafeCellOf):
            ctors = [f"(mk${m}$)"]
        else:
            raise EncodingError(f"type `{ty}` has no snapshot")
        self._in_progress.discard(m)
        self._sorts.add(m)
        self.script.declare_datatype(name, ctors)

    def _declare_value_snapshot(self, ty: ast.TypeExpr, name: str) -> None:
        m = ty.mangle()
        self._guard_recursion("v" + m, ty)
        mem_sort = self.sort(ty)
        if isinstance(ty, ast.EnumType):
            ctors = []
            for variant, payload in self.program.variants_of(ty):
                if payload is None:
                    ctors.append(f"(vmk${m}${variant})")
                else:
                    ctors.append(f"(vmk${m}${variant} (vpay${m}${variant} {self.value_sort(payload)}))")
        else:
            fields = " ".join(f"(vfld${m}${f} {self.value_sort(t)})" for f, t in self.program.fields_of(ty))
            ctors = [f"(vmk${m}$ {fields})"]
        self._in_progress.discard("v" + m)
        self._value_sorts.add(m)
        self.script.declare_datatype(name, ctors)
        self.script.declare_fun(f"m2v${m}", [mem_sort], name)
        if self.ground:
            return
        s = "s"
        body = self._structural_value(ty, s)
        self.script.axiom(smt.forall([(s, mem_sort)], smt.eq(f"(m2v${m} {s})", body), [[f"(m2v${m} {s})"]]),
                          f"value snapshot of {ty}")

    def _structural_value(self, ty: ast.TypeExpr, s: str) -> str:
        if isinstance(ty, ast.EnumType):
            variants = self.program.variants_of(ty)
            result = None
            for index in reversed(range(len(variants))):
                built = self._value_variant(ty, index, s)
                result = built if result is None else smt.ite(self.tester(ty, index, s), built, result)
            return result
        args = [self.value_of(t, self.field(ty, f, s)) for f, t in self.program.fields_of(ty)]
        return smt.app(f"vmk${ty.mangle()}$", *args)

    def _value_variant(self, ty: ast.EnumType, index: int, s: str) -> str:
        variant, payload = self.program.variants_of(ty)[index]
        symbol = f"vmk${ty.mangle()}${variant}"
        if payload is None:
            return symbol
        return smt.app(symbol, self.value_of(payload, self.payload(ty, index, s)))

    # --- constructors and accessors ---

    def _has_value_form(self, ty: ast.TypeExpr, value: bool) -> bool:
        return value and self.program.contains_reference(ty) and not ast.is_reference(ty)

    def construct(self, ty: ast.TypeExpr, args: list[str], variant: Optional[int] = None,
                  value: bool = False) -> str:
        """Build a snapshot (or a value snapshot when ``value``) of ``ty`` from its components."""
        m = ty.mangle()
        if self._has_value_form(ty, value):
            self.value_sort(ty)
            prefix = "vmk"
        else:
            self.sort(ty)
            prefix = "mk"
            value = False
        if isinstance(ty, ast.EnumType):
            symbol = f"{prefix}${m}${self.program.variants_of(ty)[variant][0]}"
        else:
            symbol = f"{prefix}${m}$"
        term = smt.app(symbol, *args)
        self.parts[term] = Parts(m, variant, tuple(args), value)
        return term

    def reference(self, ty: ast.TypeExpr, address: str, target: str) -> str:
        return self.construct(ty, [address, target])

    def _known(self, ty: ast.TypeExpr, term: str, value: bool) -> Optional[Parts]:
        parts = self.parts.get(term)
        if parts is None or parts.type_key != ty.mangle() or parts.value != self._has_value_form(ty, value):
            return None
        return parts

    def addr_of(self, ty: ast.TypeExpr, term: str) -> str:
        parts = self._known(ty, term, False)
        if parts is not None:
            return parts.args[0]
        self.sort(ty)
        return f"(raddr${ty.mangle()} {term})"

    def target_of(self, ty: ast.TypeExpr, term: str) -> str:
        parts = self._known(ty, term, False)
        if parts is not None:
            return parts.args[1]
        self.sort(ty)
        return f"(rtarget${ty.mangle()} {term})"

    def field(self, ty: ast.TypeExpr, name: str, term: str, value: bool = False) -> str:
        names = [f for f, _ in self.program.fields_of(ty)]
        if name not in names:
            raise EncodingError(f"type `{ty}` has no field `{name}`")
        parts = self._known(ty, term, value)
        if parts is not None:
            return parts.args[names.index(name)]
        if self._has_value_form(ty, value):
            self.value_sort(ty)
            return f"(vfld${ty.mangle()}${name} {term})"
        self.sort(ty)
        return f"(fld${ty.mangle()}${name} {term})"

    def tester(self, ty: ast.EnumType, index: int, term: str, value: bool = False) -> str:
        parts = self._known(ty, term, value)
        if parts is not None:
            return smt.bool_lit(parts.variant == index)
        variant = self.program.variants_of(ty)[index][0]
        prefix = "vmk" if self._has_value_form(ty, value) else "mk"
        if prefix == "vmk":
            self.value_sort(ty)
        else:
            self.sort(ty)
        return f"((_ is {prefix}${ty.mangle()}${variant}) {term})"

    def payload(self, ty: ast.EnumType, index: int, term: str, value: bool = False) -> str:
        parts = self._known(ty, term, value)
        if parts is not None and parts.variant == index:
            return parts.args[0]
        variant = self.program.variants_of(ty)[index][0]
        if self._has_value_form(ty, value):
            self.value_sort(ty)
            return f"(vpay${ty.mangle()}${variant} {term})"
        self.sort(ty)
        return f"(pay${ty.mangle()}${variant} {term})"

    def unit(self, ty: ast.TypeExpr) -> str:
        """The only snapshot of a unit-like type."""
        return self.construct(ty, [])

    def value_of(self, ty: ast.TypeExpr, term: str) -> str:
        """Convert a memory snapshot of ``ty`` into its value snapshot."""
        if not self.program.contains_reference(ty):
            return term
        if ast.is_reference(ty):
            return self.value_of(ty.inner, self.target_of(ty, term))
        parts = self._known(ty, term, False)
        if parts is not None:
            if isinstance(ty, ast.EnumType):
                payload = self.program.variants_of(ty)[parts.variant][1]
                args = [] if payload is None else [self.value_of(payload, parts.args[0])]
                return self.construct(ty, args, parts.variant, value=True)
            components = [t for _, t in self.program.fields_of(ty)]
            return self.construct(ty, [self.value_of(t, a) for t, a in zip(components, parts.args)], value=True)
        self.value_sort(ty)
        converted = f"(m2v${ty.mangle()} {term})"
        if self.ground and converted not in self._value_terms:
            self._value_terms[converted] = (ty, term)
            self._pending.append(("value", converted))
        return converted

    # --- memory ---

    def mem(self, ty: ast.TypeExpr, address: str, version: str) -> str:
        m = ty.mangle()
        if m not in self.memory_types:
            self._declare_memory(ty)
        term = f"(mem${m} {address} {version})"
        if self.ground and term not in self._mem_terms:
            self._mem_terms[term] = (ty, address, version)
            self._pending.append(("mem", term))
        return term

    def _declare_memory(self, ty: ast.TypeExpr) -> None:
        m = ty.mangle()
        self.memory_types[m] = ty
        self.script.declare_fun(f"mem${m}", [ADDRESS, VERSION], self.sort(ty))
        logger.debug(f"Declared memory function for {ty}")
        if self.ground:
            return
        a, w = "a", "w"
        here = self.mem(ty, a, w)
        coherence = self._coherence(ty, here, a, w)
        if coherence is not None:
            equation, children = coherence
            self.script.axiom(smt.forall([(a, ADDRESS), (w, VERSION)], equation,
                                         [[here], *([c] for c in children)]), f"coherence of {ty}")

    def _coherence(self, ty: ast.TypeExpr, here: str, a: str, w: str) -> Optional[tuple[str, list[str]]]:
        """The equation tying the memory of ``ty`` at ``a`` to the memory of its parts, with those parts."""
        m = ty.mangle()
        if ast.is_reference(ty):
            target = self.mem(ty.inner, f"(raddr${m} {here})", w)
            return smt.eq(f"(rtarget${m} {here})", target), []
        if not isinstance(ty, (ast.StructType, ast.TupleType)):
            return None
        args = []
        children = []
        for name, field_ty in self.program.fields_of(ty):
            if isinstance(field_ty, ast.UnsafeCellOf):
                args.append(self.unit(field_ty))
                continue
            child = self.mem(field_ty, self.offset(ty, name, a), w)
            args.append(child)
            children.append(child)
        return smt.eq(here, smt.app(f"mk${m}$", *args)), children

    def offset(self, ty: ast.TypeExpr, name: str, address: str) -> str:
        m = ty.mangle()
        if m not in self._offsets:
            self._declare_offsets(ty)
        term = f"(off${m}${name} {address})"
        if self.ground and term not in self._offset_terms:
            self._offset_terms[term] = (ty, name, address)
            self._pending.append(("offset", term))
        return term

    def _field_names(self, ty: ast.TypeExpr) -> list[str]:
        return [f for f, t in self.program.fields_of(ty) if not isinstance(t, ast.UnsafeCellOf)]

    def _declare_offsets(self, ty: ast.TypeExpr) -> None:
        m = ty.mangle()
        self._offsets.add(m)
        names = self._field_names(ty)
        for name in names:
            self.script.declare_fun(f"off${m}${name}", [ADDRESS], ADDRESS)
            self.script.declare_fun(f"off_inv${m}${name}", [ADDRESS], ADDRESS)
        if self.ground:
            return
        a = "a"
        for name in names:
            applied = f"(off${m}${name} {a})"
            self.script.axiom(smt.forall([(a, ADDRESS)], smt.eq(f"(off_inv${m}${name} {applied})", a),
                                         [[applied]]), f"offset of {ty}.{name} is injective")
        if names:
            applied = [f"(off${m}${name} {a})" for name in names]
            self.script.axiom(smt.forall([(a, ADDRESS)], smt.distinct([a, *applied]), [[t] for t in applied]),
                              f"fields of {ty} are disjoint")

    # --- ground instances ---

    def instantiate(self) -> bool:
        """Emit the instances owed to terms built since the last call; True when there were any."""
        progressed = False
        while self._cursor < len(self._pending):
            kind, term = self._pending[self._cursor]
            self._cursor += 1
            progressed = True
            if kind == "mem":
                self._cohere(term)
            elif kind == "offset":
                self._separate(term)
            else:
                ty, snapshot = self._value_terms[term]
                self.script.axiom(smt.eq(term, self._structural_value(ty, snapshot)))
        return progressed

    def _cohere(self, term: str) -> None:
        ty, address, version = self._mem_terms[term]
        # Memory at a field offset brings in the memory of the enclosing value
        owner = self._offset_terms.get(address)
        if owner is not None:
            self.mem(owner[0], owner[2], version)
        coherence = self._coherence(ty, term, address, version)
        if coherence is not None:
            self.script.axiom(coherence[0])

    def _separate(self, term: str) -> None:
        ty, name, base = self._offset_terms[term]
        m = ty.mangle()
        self.script.axiom(smt.eq(f"(off_inv${m}${name} {term})", base))
        self.script.axiom(smt.distinct([base, *(self.offset(ty, n, base) for n in self._field_names(ty))]))
