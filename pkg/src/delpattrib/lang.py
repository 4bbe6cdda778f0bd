"""DeLP language: terms, literals, rules, programs and the textual format.

Concrete syntax::

    % comment
    attack(exploit1, bluelotus).                       fact
    ~culprit(E, Y) <- first_attack(E, Y), decep(E, X). strict rule
    replay_attack(E) -< attack(E, X), last_attack(E, Y). defeasible rule

Identifiers starting with an uppercase letter or ``_`` are variables,
everything else is a constant.  ``h <- .`` is accepted as a fact.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Mapping, Union


class DeLPError(Exception):
    """Base class for language-level errors."""


class DeLPSyntaxError(DeLPError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class ProgramError(DeLPError):
    """A syntactically valid program that violates a well-formedness rule."""


class GroundingLimitError(DeLPError):
    pass


@dataclass(frozen=True, slots=True)
class Constant:
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True, slots=True)
class Variable:
    name: str

    def __str__(self) -> str:
        return self.name


Term = Union[Constant, Variable]


def make_term(name: str) -> Term:
    if not name or not all(c.isalnum() or c == "_" for c in name) or not name.isascii():
        raise ValueError(f"invalid term name: {name!r}")
    if name[0].isupper() or name[0] == "_":
        return Variable(name)
    return Constant(name)


@dataclass(frozen=True, slots=True)
class Atom:
    predicate: str
    args: tuple[Term, ...] = ()
    _hash: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_hash", hash((self.predicate, self.args)))

    def __hash__(self) -> int:
        return self._hash

    @property
    def arity(self) -> int:
        return len(self.args)

    def is_ground(self) -> bool:
        return all(isinstance(a, Constant) for a in self.args)

    def __str__(self) -> str:
        if not self.args:
            return self.predicate
        return f"{self.predicate}({', '.join(a.name for a in self.args)})"


@dataclass(frozen=True, slots=True)
class Literal:
    atom: Atom
    negated: bool = False
    _hash: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_hash", hash((self.atom._hash, self.negated)))

    def __hash__(self) -> int:
        return self._hash

    def complement(self) -> Literal:
        return Literal(self.atom, not self.negated)

    def is_ground(self) -> bool:
        return self.atom.is_ground()

    def variables(self) -> set[Variable]:
        return {a for a in self.atom.args if isinstance(a, Variable)}

    def constants(self) -> set[Constant]:
        return {a for a in self.atom.args if isinstance(a, Constant)}

    def substitute(self, subst: Mapping[Variable, Constant]) -> Literal:
        args = tuple(subst.get(a, a) if isinstance(a, Variable) else a for a in self.atom.args)
        return Literal(Atom(self.atom.predicate, args), self.negated)

    def __str__(self) -> str:
        return ("~" if self.negated else "") + str(self.atom)


def complement(lit: Literal) -> Literal:
    return lit.complement()


@dataclass(frozen=True, slots=True)
class Rule:
    head: Literal
    body: tuple[Literal, ...] = ()
    defeasible: bool = False
    _hash: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_hash", hash((self.head, self.body, self.defeasible)))

    def __hash__(self) -> int:
        return self._hash

    @property
    def is_fact(self) -> bool:
        return not self.defeasible and not self.body

    def variables(self) -> set[Variable]:
        out = self.head.variables()
        for b in self.body:
            out |= b.variables()
        return out

    def is_ground(self) -> bool:
        return self.head.is_ground() and all(b.is_ground() for b in self.body)

    def substitute(self, subst: Mapping[Variable, Constant]) -> Rule:
        return Rule(
            self.head.substitute(subst),
            tuple(b.substitute(subst) for b in self.body),
            self.defeasible,
        )

    def __str__(self) -> str:
        if self.is_fact:
            return f"{self.head}."
        arrow = "-<" if self.defeasible else "<-"
        return f"{self.head} {arrow} {', '.join(str(b) for b in self.body)}."


def _literal_sort_key(lit: Literal):
    return (lit.atom.predicate, tuple(a.name for a in lit.atom.args), lit.negated)


def rule_sort_key(rule: Rule):
    return (_literal_sort_key(rule.head), tuple(_literal_sort_key(b) for b in rule.body))


@dataclass(frozen=True)
class Program:
    """A knowledge base (facts, strict rules, defeasible rules).

    Instances are treated as immutable; use :func:`make_program` to build a
    validated one.
    """

    facts: frozenset[Literal] = frozenset()
    strict: frozenset[Rule] = frozenset()
    defeasible: frozenset[Rule] = frozenset()

    @cached_property
    def sorted_facts(self) -> tuple[Literal, ...]:
        return tuple(sorted(self.facts, key=_literal_sort_key))

    @cached_property
    def sorted_strict(self) -> tuple[Rule, ...]:
        return tuple(sorted(self.strict, key=rule_sort_key))

    @cached_property
    def sorted_defeasible(self) -> tuple[Rule, ...]:
        return tuple(sorted(self.defeasible, key=rule_sort_key))

    def clauses(self) -> Iterator[Rule]:
        for f in self.sorted_facts:
            yield Rule(f)
        yield from self.sorted_strict
        yield from self.sorted_defeasible

    @cached_property
    def predicates(self) -> dict[str, int]:
        """Predicate symbol -> arity."""
        out: dict[str, int] = {}
        for rule in self.clauses():
            for lit in (rule.head, *rule.body):
                out.setdefault(lit.atom.predicate, lit.atom.arity)
        return out

    @cached_property
    def constants(self) -> frozenset[Constant]:
        out: set[Constant] = set()
        for rule in self.clauses():
            for lit in (rule.head, *rule.body):
                out |= lit.constants()
        return frozenset(out)

    def is_ground(self) -> bool:
        return all(r.is_ground() for r in self.strict) and all(r.is_ground() for r in self.defeasible)

    def in_signature(self, lit: Literal) -> bool:
        arity = self.predicates.get(lit.atom.predicate)
        if arity is None or arity != lit.atom.arity:
            return False
        return lit.constants() <= self.constants

    def rule_ids(self) -> dict[Rule, str]:
        """Stable names ``w1..`` / ``d1..`` following serialization order."""
        ids = {r: f"w{i}" for i, r in enumerate(self.sorted_strict, 1)}
        ids.update({r: f"d{i}" for i, r in enumerate(self.sorted_defeasible, 1)})
        return ids

    def merge(self, other: Program) -> Program:
        return make_program(
            self.facts | other.facts, self.strict | other.strict, self.defeasible | other.defeasible
        )

    def __len__(self) -> int:
        return len(self.facts) + len(self.strict) + len(self.defeasible)


# ---------------------------------------------------------------------------
# validation


def _check_arities(rules: Iterable[Rule]) -> None:
    seen: dict[str, int] = {}
    for rule in rules:
        for lit in (rule.head, *rule.body):
            p, n = lit.atom.predicate, lit.atom.arity
            if seen.setdefault(p, n) != n:
                raise ProgramError(f"arity conflict for predicate {p!r}: {seen[p]} vs {n}")


def _match(pattern: Literal, fact: Literal, subst: dict) -> dict | None:
    if pattern.negated != fact.negated or pattern.atom.predicate != fact.atom.predicate:
        return None
    if pattern.atom.arity != fact.atom.arity:
        return None
    out = subst
    for p, f in zip(pattern.atom.args, fact.atom.args):
        if isinstance(p, Variable):
            bound = out.get(p)
            if bound is None:
                if out is subst:
                    out = dict(subst)
                out[p] = f
            elif bound != f:
                return None
        elif p != f:
            return None
    return out


def _solutions(body: tuple[Literal, ...], index: Mapping[tuple, set[Literal]], subst: dict) -> Iterator[dict]:
    if not body:
        yield subst
        return
    first, rest = body[0], body[1:]
    key = (first.atom.predicate, first.negated)
    for fact in tuple(index.get(key, ())):
        s = _match(first, fact, subst)
        if s is not None:
            yield from _solutions(rest, index, s)


def strict_consequences(facts: Iterable[Literal], rules: Iterable[Rule]) -> set[Literal]:
    """Bottom-up closure of ``facts`` under (possibly non-ground) range-restricted rules."""
    derived = set(facts)
    index: dict[tuple, set[Literal]] = {}
    for f in derived:
        index.setdefault((f.atom.predicate, f.negated), set()).add(f)
    rules = list(rules)
    changed = True
    while changed:
        changed = False
        for rule in rules:
            for s in list(_solutions(rule.body, index, {})):
                head = rule.head.substitute(s)
                if head not in derived:
                    derived.add(head)
                    index.setdefault((head.atom.predicate, head.negated), set()).add(head)
                    changed = True
    return derived


def find_contradiction(literals: Iterable[Literal]) -> Literal | None:
    lits = set(literals)
    for lit in sorted(lits, key=_literal_sort_key):
        if not lit.negated and lit.complement() in lits:
            return lit
    return None


def make_program(
    facts: Iterable[Literal] = (),
    strict: Iterable[Rule] = (),
    defeasible: Iterable[Rule] = (),
) -> Program:
    """Build and validate a :class:`Program`."""
    facts = frozenset(facts)
    strict_rules: set[Rule] = set()
    for r in strict:
        if r.defeasible:
            raise ProgramError(f"defeasible rule in strict part: {r}")
        if r.is_fact:
            facts = facts | {r.head}
        else:
            strict_rules.add(r)
    defeasible = frozenset(defeasible)
    for f in facts:
        if not f.is_ground():
            raise ProgramError(f"non-ground fact: {f}")
    for r in strict_rules | defeasible:
        if r in defeasible and not r.defeasible:
            raise ProgramError(f"strict rule in defeasible part: {r}")
        if not r.body:
            raise ProgramError(f"defeasible rule with empty body (presumptions unsupported): {r}")
        body_vars: set[Variable] = set()
        for b in r.body:
            body_vars |= b.variables()
        missing = r.head.variables() - body_vars
        if missing:
            names = ", ".join(sorted(v.name for v in missing))
            raise ProgramError(f"head variables {names} do not occur in the body of: {r}")
    _check_arities([Rule(f) for f in facts] + list(strict_rules) + list(defeasible))
    clash = find_contradiction(strict_consequences(facts, strict_rules))
    if clash is not None:
        raise ProgramError(f"contradictory strict part: both {clash} and {clash.complement()} are derivable")
    return Program(facts, frozenset(strict_rules), defeasible)


# ---------------------------------------------------------------------------
# parsing


_PUNCT = ("<-", "-<", "(", ")", ",", ".", "~")


@dataclass(slots=True)
class _Token:
    kind: str  # "id", a punctuation string, or "eof"
    text: str
    line: int
    column: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    i, line, col = 0, 1, 1
    n = len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            i, line, col = i + 1, line + 1, 1
            continue
        if c in " \t\r﻿":
            i, col = i + 1, col + 1
            continue
        if c == "%":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if c.isascii() and (c.isalnum() or c == "_"):
            j = i
            while j < n and text[j].isascii() and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(_Token("id", text[i:j], line, col))
            col += j - i
            i = j
            continue
        for p in _PUNCT:
            if text.startswith(p, i):
                tokens.append(_Token(p, p, line, col))
                i += len(p)
                col += len(p)
                break
        else:
            raise DeLPSyntaxError(f"unexpected character {c!r}", line, col)
    tokens.append(_Token("eof", "", line, col))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.pos]

    def expect(self, kind: str) -> _Token:
        tok = self.tok
        if tok.kind != kind:
            found = tok.text or "end of input"
            raise DeLPSyntaxError(f"expected {kind!r}, found {found!r}", tok.line, tok.column)
        self.pos += 1
        return tok

    def accept(self, kind: str) -> bool:
        if self.tok.kind == kind:
            self.pos += 1
            return True
        return False

    def literal(self) -> Literal:
        negated = self.accept("~")
        tok = self.expect("id")
        if not tok.text[0].islower():
            raise DeLPSyntaxError(
                f"predicate must start with a lowercase letter: {tok.text!r}", tok.line, tok.column
            )
        args: list[Term] = []
        if self.accept("("):
            args.append(make_term(self.expect("id").text))
            while self.accept(","):
                args.append(make_term(self.expect("id").text))
            self.expect(")")
        return Literal(Atom(tok.text, tuple(args)), negated)

    def clause(self) -> tuple[Rule, _Token]:
        start = self.tok
        head = self.literal()
        if self.accept("."):
            return Rule(head), start
        if self.tok.kind in ("<-", "-<"):
            defeasible = self.tok.kind == "-<"
            self.pos += 1
            body: list[Literal] = []
            if self.tok.kind != ".":
                body.append(self.literal())
                while self.accept(","):
                    body.append(self.literal())
            self.expect(".")
            return Rule(head, tuple(body), defeasible), start
        raise DeLPSyntaxError(
            f"expected '.', '<-' or '-<', found {self.tok.text or 'end of input'!r}",
            self.tok.line,
            self.tok.column,
        )

    def program(self) -> list[tuple[Rule, _Token]]:
        out = []
        while self.tok.kind != "eof":
            out.append(self.clause())
        return out


def parse_program(text: str) -> Program:
    """Parse DeLP source text into a validated :class:`Program`."""
    clauses = _Parser(text).program()
    facts, strict, defeasible = set(), set(), set()
    for rule, tok in clauses:
        if rule.is_fact:
            if not rule.head.is_ground():
                raise DeLPSyntaxError(f"non-ground fact: {rule.head}", tok.line, tok.column)
            facts.add(rule.head)
        elif rule.defeasible:
            defeasible.add(rule)
        else:
            strict.add(rule)
    return make_program(facts, strict, defeasible)


def parse_literal(text: str) -> Literal:
    p = _Parser(text)
    lit = p.literal()
    p.accept(".")
    p.expect("eof")
    return lit


def parse_rule(text: str) -> Rule:
    p = _Parser(text)
    rule, _ = p.clause()
    p.expect("eof")
    return rule


def serialize_program(p: Program) -> str:
    return "".join(f"{clause}\n" for clause in p.clauses())


# ---------------------------------------------------------------------------
# grounding


def count_ground_instances(p: Program) -> int:
    n = len(p.constants)
    return sum(n ** len(r.variables()) for r in itertools.chain(p.strict, p.defeasible))


def ground_instances(p: Program, cap: int = 100_000) -> Program:
    """Replace every rule by all of its instances over the program's constants."""
    total = count_ground_instances(p)
    if total > cap:
        raise GroundingLimitError(f"grounding would produce {total} rule instances (cap {cap})")
    consts = sorted(p.constants, key=lambda c: c.name)

    def expand(rules: Iterable[Rule]) -> set[Rule]:
        out: set[Rule] = set()
        for r in rules:
            vs = sorted(r.variables(), key=lambda v: v.name)
            if not vs:
                out.add(r)
                continue
            for combo in itertools.product(consts, repeat=len(vs)):
                out.add(r.substitute(dict(zip(vs, combo))))
        return out

    return make_program(p.facts, expand(p.strict), expand(p.defeasible))
