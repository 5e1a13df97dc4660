"""SMT-LIB 2 terms as plain strings, plus an ordered script of declarations and axioms."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

TRUE = "true"
FALSE = "false"


def app(symbol: str, *args: str) -> str:
    if not args:
        return symbol
    return f"({symbol} {' '.join(args)})"


def int_lit(value: int) -> str:
    return str(value) if value >= 0 else f"(- {-value})"


def bool_lit(value: bool) -> str:
    return TRUE if value else FALSE


def and_(*terms: str) -> str:
    parts = [t for t in terms if t != TRUE]
    if FALSE in parts:
        return FALSE
    if not parts:
        return TRUE
    if len(parts) == 1:
        return parts[0]
    return f"(and {' '.join(parts)})"


def or_(*terms: str) -> str:
    parts = [t for t in terms if t != FALSE]
    if TRUE in parts:
        return TRUE
    if not parts:
        return FALSE
    if len(parts) == 1:
        return parts[0]
    return f"(or {' '.join(parts)})"


def not_(term: str) -> str:
    if term == TRUE:
        return FALSE
    if term == FALSE:
        return TRUE
    return f"(not {term})"


def implies(premise: str, conclusion: str) -> str:
    if premise == TRUE:
        return conclusion
    if conclusion == TRUE:
        return TRUE
    return f"(=> {premise} {conclusion})"


def eq(left: str, right: str) -> str:
    if left == right:
        return TRUE
    return f"(= {left} {right})"


def ite(cond: str, then: str, otherwise: str) -> str:
    if cond == TRUE or then == otherwise:
        return then
    if cond == FALSE:
        return otherwise
    return f"(ite {cond} {then} {otherwise})"


def distinct(terms: Sequence[str]) -> str:
    if len(terms) < 2:
        return TRUE
    return f"(distinct {' '.join(terms)})"


def forall(bound: Sequence[tuple[str, str]], body: str, patterns: Iterable[Sequence[str]] = ()) -> str:
    """Universally quantify ``body``; each entry of ``patterns`` is one (multi-)trigger."""
    if not bound:
        return body
    if body == TRUE:
        return TRUE
    triggers = [f":pattern ({' '.join(p)})" for p in patterns if p]
    if triggers:
        body = f"(! {body} {' '.join(triggers)})"
    variables = " ".join(f"({name} {sort})" for name, sort in bound)
    return f"(forall ({variables}) {body})"


@dataclass
class Script:
    """Declarations and axioms in first-use order, each emitted once."""
    sorts: list[str] = field(default_factory=list)
    datatypes: list[str] = field(default_factory=list)
    functions: dict[str, str] = field(default_factory=dict)
    axioms: list[str] = field(default_factory=list)
    _seen_axioms: set[str] = field(default_factory=set)

    def declare_sort(self, name: str) -> None:
        line = f"(declare-sort {name} 0)"
        if line not in self.sorts:
            self.sorts.append(line)

    def declare_datatype(self, name: str, constructors: Sequence[str]) -> None:
        self.datatypes.append(f"(declare-datatypes (({name} 0)) (({' '.join(constructors)})))")

    def declare_fun(self, name: str, args: Sequence[str], result: str) -> None:
        if name not in self.functions:
            self.functions[name] = f"(declare-fun {name} ({' '.join(args)}) {result})"

    def declare_const(self, name: str, sort: str) -> None:
        self.declare_fun(name, (), sort)

    def axiom(self, term: str, comment: str | None = None) -> None:
        if term == TRUE or term in self._seen_axioms:
            return
        self._seen_axioms.add(term)
        if comment:
            self.axioms.append(f"; {comment}")
        self.axioms.append(f"(assert {term})")

    def declarations(self) -> list[str]:
        return [*self.sorts, *self.datatypes, *self.functions.values()]

    def prelude(self) -> list[str]:
        return ["(set-logic ALL)", *self.declarations(), *self.axioms]
