"""Argument construction, defeat, dialectical trees and warrant.

All operations work on ground programs.  :class:`Engine` wraps one program
and memoizes arguments, comparisons and defeaters; the module-level
functions are thin conveniences over it.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

from delpattrib.lang import Literal, Program, Rule, _literal_sort_key


class EngineCapError(Exception):
    """A configured search limit was exceeded."""


class UniverseCapError(EngineCapError):
    pass


class EnumerationCapError(EngineCapError):
    pass


class DepthCapError(EngineCapError):
    pass


class Comparator(str, enum.Enum):
    GEN_SPECIFICITY = "gen-specificity"
    SUPPORT_SUBSET = "support-subset"


class Outcome(enum.Enum):
    BETTER = "strictly-better"
    WORSE = "strictly-worse"
    INCOMPARABLE = "incomparable"
    EQUIVALENT = "equivalent"


class DefeatKind(enum.Enum):
    ROOT = "root"
    PROPER = "proper"
    BLOCKING = "blocking"


class Mark(enum.Enum):
    UNMARKED = "unmarked"
    U = "U"
    D = "D"


class Answer(enum.Enum):
    YES = "yes"
    NO = "no"
    UNDECIDED = "undecided"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class Caps:
    depth: int = 32
    arguments: int = 10_000
    universe: int = 64


@dataclass(frozen=True)
class Argument:
    support: frozenset[Rule]
    conclusion: Literal
    derivation: tuple[Rule, ...] = field(default=(), compare=False, repr=False)

    def is_subargument_of(self, other: Argument) -> bool:
        return self.support <= other.support

    def __str__(self) -> str:
        rules = "; ".join(sorted(str(r) for r in self.support))
        return f"<{{{rules}}}, {self.conclusion}>"


@dataclass
class DialecticalNode:
    argument: Argument
    children: list[DialecticalNode] = field(default_factory=list)
    kind: DefeatKind = DefeatKind.ROOT
    mark: Mark = Mark.UNMARKED

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()

    def depth(self) -> int:
        return 1 + max((c.depth() for c in self.children), default=0)


@dataclass
class QueryAnswer:
    value: Answer
    witness: DialecticalNode | None = None
    trees: tuple[DialecticalNode, ...] = ()


def closure(base: Iterable[Literal], rules: Sequence[Rule]) -> set[Literal]:
    """Forward closure of ground ``base`` under ground ``rules``."""
    derived = set(base)
    pending: dict[int, int] = {}
    watch: dict[Literal, list[int]] = {}
    agenda = list(derived)
    for i, r in enumerate(rules):
        missing = {b for b in r.body if b not in derived}
        if not missing:
            if r.head not in derived:
                derived.add(r.head)
                agenda.append(r.head)
            continue
        pending[i] = len(missing)
        for b in missing:
            watch.setdefault(b, []).append(i)
    while agenda:
        lit = agenda.pop()
        for i in watch.pop(lit, ()):
            pending[i] -= 1
            if pending[i] == 0:
                head = rules[i].head
                if head not in derived:
                    derived.add(head)
                    agenda.append(head)
    return derived


def is_contradictory(literals: Iterable[Literal]) -> bool:
    lits = literals if isinstance(literals, (set, frozenset)) else set(literals)
    return any(not l.negated and l.complement() in lits for l in lits)


def _minimize(sets: Iterable[frozenset]) -> list[frozenset]:
    uniq = sorted(set(sets), key=len)
    out: list[frozenset] = []
    for s in uniq:
        if not any(k <= s for k in out):
            out.append(s)
    return out


def argument_key(arg: Argument, ids: dict[Rule, str] | None = None):
    names = sorted(ids[r] if ids else str(r) for r in arg.support)
    return (str(arg.conclusion), len(names), names)


class Engine:
    """Warrant machinery for one ground program under one comparator."""

    def __init__(
        self,
        program: Program,
        comparator: Comparator | str = Comparator.GEN_SPECIFICITY,
        caps: Caps | None = None,
    ):
        if not program.is_ground():
            raise ValueError("engine requires a ground program (see lang.ground_instances)")
        self.program = program
        self.comparator = Comparator(comparator)
        self.caps = caps or Caps()
        self.strict = program.sorted_strict
        self.defeasible = program.sorted_defeasible
        self.rule_ids = program.rule_ids()
        self._by_head: dict[Literal, list[Rule]] = {}
        for r in (*self.strict, *self.defeasible):
            self._by_head.setdefault(r.head, []).append(r)
        self._supports_cache: dict = {}
        self._args_cache: dict[Literal, list[Argument]] = {}
        self._cmp_cache: dict = {}
        self._defeaters_cache: dict[Argument, list[tuple[Argument, DefeatKind]]] = {}
        self._disagree_cache: dict[Literal, list[Literal]] = {}
        self._activation_cache: dict[Argument, list[frozenset]] = {}
        self._n_arguments = 0

    # -- derivability ------------------------------------------------------

    @cached_property
    def strict_base(self) -> frozenset[Literal]:
        """Literals strictly derivable from facts and strict rules."""
        return frozenset(closure(self.program.facts, self.strict))

    @cached_property
    def universe(self) -> frozenset[Literal]:
        """Literals with some defeasible derivation from the whole program."""
        return frozenset(closure(self.program.facts, (*self.strict, *self.defeasible)))

    def derives(self, support: Iterable[Rule]) -> set[Literal]:
        return closure(self.strict_base, (*self.strict, *sorted(support, key=self._rule_order)))

    def consistent(self, support: Iterable[Rule]) -> bool:
        return not is_contradictory(self.derives(support))

    def _rule_order(self, r: Rule) -> str:
        return self.rule_ids.get(r, str(r))

    # -- arguments ---------------------------------------------------------

    def _supports(self, q: Literal, path: frozenset, allowed: frozenset | None) -> list[frozenset]:
        if q in self.strict_base:
            return [frozenset()]
        if q in path:
            return []
        key = (q, path, allowed)
        hit = self._supports_cache.get(key)
        if hit is not None:
            return hit
        inner = path | {q}
        results: list[frozenset] = []
        for r in self._by_head.get(q, ()):
            if r.defeasible and allowed is not None and r not in allowed:
                continue
            combos = [frozenset((r,)) if r.defeasible else frozenset()]
            for b in r.body:
                sub = self._supports(b, inner, allowed)
                if not sub:
                    combos = []
                    break
                combos = _minimize(c | s for c in combos for s in sub)
                if len(combos) > self.caps.arguments:
                    raise EnumerationCapError(f"more than {self.caps.arguments} partial supports for {q}")
            results.extend(combos)
        out = _minimize(results)
        self._supports_cache[key] = out
        return out

    def _derivation(self, support: frozenset, goal: Literal) -> tuple[Rule, ...]:
        # first rule deriving each literal, then the proof of ``goal`` in application order
        rules = (*self.strict, *sorted(support, key=self._rule_order))
        known = set(self.program.facts)
        how: dict[Literal, Rule] = {}
        changed = True
        while changed:
            changed = False
            for r in rules:
                if r.head not in known and all(b in known for b in r.body):
                    known.add(r.head)
                    how[r.head] = r
                    changed = True
        order: list[Rule] = []
        seen: set[Literal] = set()

        def visit(lit: Literal) -> None:
            if lit in seen or lit not in how:
                return
            seen.add(lit)
            rule = how[lit]
            for b in rule.body:
                visit(b)
            order.append(rule)

        visit(goal)
        return tuple(order)

    def arguments(self, lit: Literal) -> list[Argument]:
        """All arguments for ``lit``, ordered deterministically."""
        hit = self._args_cache.get(lit)
        if hit is not None:
            return hit
        out = []
        for s in self._supports(lit, frozenset(), None):
            if s and not self.consistent(s):
                continue
            out.append(Argument(s, lit, self._derivation(s, lit)))
        out.sort(key=lambda a: argument_key(a, self.rule_ids))
        self._n_arguments += len(out)
        if self._n_arguments > self.caps.arguments:
            raise EnumerationCapError(f"more than {self.caps.arguments} arguments built")
        self._args_cache[lit] = out
        return out

    def subarguments(self, arg: Argument) -> list[Argument]:
        """Arguments whose support is contained in ``arg``'s (including ``arg``)."""
        if not arg.support:
            return [arg]
        out: set[Argument] = set()
        for q in self.derives(arg.support) - self.strict_base:
            for s in self._supports(q, frozenset(), arg.support):
                out.add(Argument(s, q, self._derivation(s, q)))
        return sorted(out, key=lambda a: argument_key(a, self.rule_ids))

    # -- conflict ----------------------------------------------------------

    def disagree(self, a: Literal, b: Literal) -> bool:
        return is_contradictory(closure(self.strict_base | {a, b}, self.strict))

    @cached_property
    def _strict_body_literals(self) -> frozenset[Literal]:
        return frozenset(b for r in self.strict for b in r.body)

    def disagreeing(self, q: Literal) -> list[Literal]:
        hit = self._disagree_cache.get(q)
        if hit is None:
            with_q = closure(self.strict_base | {q}, self.strict)
            if is_contradictory(with_q):
                hit = sorted(self.universe, key=_literal_sort_key)
            else:
                # a literal outside every strict body adds nothing to the closure
                # beyond itself, so it clashes only with what q already yields
                triggers = self._strict_body_literals
                hit = [
                    x
                    for x in sorted(self.universe, key=_literal_sort_key)
                    if x.complement() in with_q
                    or (x in triggers and x not in with_q and is_contradictory(closure(with_q | {x}, self.strict)))
                ]
            self._disagree_cache[q] = hit
        return hit

    def counter_argues(self, attacker: Argument, target: Argument) -> Argument | None:
        """The sub-argument of ``target`` whose conclusion disagrees with ``attacker``'s."""
        for sub in self.subarguments(target):
            if sub.support and self.disagree(attacker.conclusion, sub.conclusion):
                return sub
        return None

    # -- comparison --------------------------------------------------------

    def compare(self, a1: Argument, a2: Argument) -> Outcome:
        if a1 == a2:
            return Outcome.EQUIVALENT
        key = (a1, a2)
        hit = self._cmp_cache.get(key)
        if hit is not None:
            return hit
        if self.comparator is Comparator.SUPPORT_SUBSET:
            ge12 = a1.support <= a2.support
            ge21 = a2.support <= a1.support
        else:
            self._check_universe(a1, a2)
            ge12 = self._at_least_as_specific(a1, a2)
            ge21 = self._at_least_as_specific(a2, a1)
        if ge12 and ge21:
            out = Outcome.EQUIVALENT
        elif ge12:
            out = Outcome.BETTER
        elif ge21:
            out = Outcome.WORSE
        else:
            out = Outcome.INCOMPARABLE
        self._cmp_cache[key] = out
        self._cmp_cache[(a2, a1)] = _FLIP[out]
        return out

    def relevant_universe(self, a1: Argument, a2: Argument) -> frozenset[Literal]:
        """Literals of the defeasible universe that can influence either activation."""
        rules = (*self.strict, *a1.support, *a2.support)
        by_head: dict[Literal, list[Rule]] = {}
        for r in rules:
            by_head.setdefault(r.head, []).append(r)
        seen = {a1.conclusion, a2.conclusion}
        todo = list(seen)
        while todo:
            q = todo.pop()
            for r in by_head.get(q, ()):
                for b in r.body:
                    if b not in seen:
                        seen.add(b)
                        todo.append(b)
        return frozenset(seen) & self.universe

    def _check_universe(self, a1: Argument, a2: Argument) -> None:
        n = len(self.relevant_universe(a1, a2))
        if n > self.caps.universe:
            raise UniverseCapError(
                f"specificity universe of {n} literals exceeds cap {self.caps.universe}"
            )

    def activation_sets(self, arg: Argument) -> list[frozenset[Literal]]:
        """Minimal literal sets that, with the strict rules and ``arg``'s support,
        derive ``arg``'s conclusion.  Facts are not used."""
        hit = self._activation_cache.get(arg)
        if hit is not None:
            return hit
        by_head: dict[Literal, list[Rule]] = {}
        for r in (*self.strict, *arg.support):
            by_head.setdefault(r.head, []).append(r)
        universe = self.universe
        memo: dict = {}

        def rec(q: Literal, path: frozenset) -> list[frozenset]:
            if q in path:
                return []
            key = (q, path)
            if key in memo:
                return memo[key]
            res = [frozenset((q,))] if q in universe else []
            inner = path | {q}
            for r in by_head.get(q, ()):
                combos = [frozenset()]
                for b in r.body:
                    sub = rec(b, inner)
                    if not sub:
                        combos = []
                        break
                    combos = _minimize(c | s for c in combos for s in sub)
                res.extend(combos)
            res = _minimize(res)
            memo[key] = res
            return res

        out = rec(arg.conclusion, frozenset())
        self._activation_cache[arg] = out
        return out

    def _activates(self, arg: Argument, h: frozenset[Literal]) -> bool:
        return arg.conclusion in closure(h, (*self.strict, *arg.support))

    def _strictly_activated(self, lit: Literal, h: frozenset[Literal]) -> bool:
        return lit in closure(h, self.strict)

    def _at_least_as_specific(self, a1: Argument, a2: Argument) -> bool:
        # a counterexample set can always be shrunk to a minimal activation set of a1
        for h in self.activation_sets(a1):
            if self._strictly_activated(a1.conclusion, h):
                continue
            if not self._activates(a2, h):
                return False
        return True

    # -- defeat and trees --------------------------------------------------

    def defeaters(self, target: Argument) -> list[tuple[Argument, DefeatKind]]:
        hit = self._defeaters_cache.get(target)
        if hit is not None:
            return hit
        found: dict[Argument, DefeatKind] = {}
        for sub in self.subarguments(target):
            if not sub.support:
                continue
            for x in self.disagreeing(sub.conclusion):
                for att in self.arguments(x):
                    outcome = self.compare(att, sub)
                    if outcome is Outcome.WORSE:
                        continue
                    kind = DefeatKind.PROPER if outcome is Outcome.BETTER else DefeatKind.BLOCKING
                    if found.get(att) is not DefeatKind.PROPER:
                        found[att] = kind
        out = sorted(found.items(), key=lambda kv: argument_key(kv[0], self.rule_ids))
        self._defeaters_cache[target] = out
        return out

    def _acceptable_extension(
        self, line: list[Argument], kinds: list[DefeatKind], cand: Argument, kind: DefeatKind
    ) -> bool:
        if kinds[-1] is DefeatKind.BLOCKING and kind is not DefeatKind.PROPER:
            return False
        if any(cand.is_subargument_of(a) for a in line):
            return False
        pos = len(line)
        same_side = set(cand.support)
        for a in line[pos % 2 :: 2]:
            same_side |= a.support
        return self.consistent(same_side)

    def dialectical_tree(self, root: Argument) -> DialecticalNode:
        def expand(arg, kind, line, kinds) -> DialecticalNode:
            if len(line) > self.caps.depth:
                raise DepthCapError(f"argumentation line longer than {self.caps.depth}")
            node = DialecticalNode(arg, kind=kind)
            for d, dkind in self.defeaters(arg):
                if self._acceptable_extension(line, kinds, d, dkind):
                    node.children.append(expand(d, dkind, line + [d], kinds + [dkind]))
            return node

        return expand(root, DefeatKind.ROOT, [root], [DefeatKind.ROOT])

    def marked_tree(self, root: Argument) -> DialecticalNode:
        return mark_tree(self.dialectical_tree(root))

    def warranted(self, arg: Argument) -> bool:
        return self.marked_tree(arg).mark is Mark.U

    def query(self, lit: Literal) -> QueryAnswer:
        if not self.program.in_signature(lit):
            return QueryAnswer(Answer.UNKNOWN)
        trees = tuple(self.marked_tree(a) for a in self.arguments(lit))
        for t in trees:
            if t.mark is Mark.U:
                return QueryAnswer(Answer.YES, t, trees)
        for a in self.arguments(lit.complement()):
            t = self.marked_tree(a)
            if t.mark is Mark.U:
                return QueryAnswer(Answer.NO, t, trees)
        return QueryAnswer(Answer.UNDECIDED, None, trees)

    # -- oracle ------------------------------------------------------------

    def all_arguments(self) -> list[Argument]:
        out = []
        for lit in sorted(self.universe, key=_literal_sort_key):
            out.extend(self.arguments(lit))
        return out

    def grounded_extension(self) -> set[Argument]:
        args = self.all_arguments()
        attackers = {a: [d for d, _ in self.defeaters(a)] for a in args}
        ext: set[Argument] = set()
        while True:
            defeated = {a for a in args if any(b in ext for b in attackers[a])}
            nxt = {a for a in args if all(b in defeated for b in attackers[a])}
            if nxt == ext:
                return ext
            ext = nxt


_FLIP = {
    Outcome.BETTER: Outcome.WORSE,
    Outcome.WORSE: Outcome.BETTER,
    Outcome.EQUIVALENT: Outcome.EQUIVALENT,
    Outcome.INCOMPARABLE: Outcome.INCOMPARABLE,
}


def mark_tree(t: DialecticalNode) -> DialecticalNode:
    """Mark leaves U; an inner node is U iff all of its children are D."""
    for c in t.children:
        mark_tree(c)
    t.mark = Mark.D if any(c.mark is Mark.U for c in t.children) else Mark.U
    return t


# -- functional API ----------------------------------------------------------


def build_arguments(p: Program, lit: Literal, caps: Caps | None = None) -> list[Argument]:
    return Engine(p, caps=caps).arguments(lit)


def counter_argues(attacker: Argument, target: Argument, p: Program) -> Argument | None:
    return Engine(p).counter_argues(attacker, target)


def compare(
    a1: Argument, a2: Argument, p: Program, comparator=Comparator.GEN_SPECIFICITY, caps: Caps | None = None
) -> Outcome:
    return Engine(p, comparator, caps).compare(a1, a2)


def defeaters(target: Argument, p: Program, comparator=Comparator.GEN_SPECIFICITY, caps: Caps | None = None):
    return Engine(p, comparator, caps).defeaters(target)


def build_dialectical_tree(
    root: Argument, p: Program, comparator=Comparator.GEN_SPECIFICITY, caps: Caps | None = None
) -> DialecticalNode:
    return Engine(p, comparator, caps).dialectical_tree(root)


def answer_query(
    p: Program, lit: Literal, comparator=Comparator.GEN_SPECIFICITY, caps: Caps | None = None
) -> QueryAnswer:
    return Engine(p, comparator, caps).query(lit)


def grounded_extension_oracle(
    p: Program, comparator=Comparator.GEN_SPECIFICITY, caps: Caps | None = None
) -> set[Argument]:
    return Engine(p, comparator, caps).grounded_extension()


# -- DOT export --------------------------------------------------------------


def tree_to_dot(t: DialecticalNode, p: Program, name: str = "dialectical_tree") -> str:
    ids = p.rule_ids()
    lines = [f"digraph {name} {{", "  node [shape=box, style=filled];"]
    counter = itertools.count()

    def emit(node: DialecticalNode) -> str:
        nid = f"n{next(counter)}"
        support = ",".join(sorted(ids.get(r, "?") for r in node.argument.support))
        label = f"{node.argument.conclusion}\\n{{{support}}}\\n{node.mark.value}"
        color = {Mark.U: "palegreen", Mark.D: "lightcoral"}.get(node.mark, "white")
        lines.append(f'  {nid} [label="{label}", fillcolor={color}];')
        kids = sorted(node.children, key=lambda c: argument_key(c.argument, ids))
        for child in kids:
            cid = emit(child)
            lines.append(f'  {cid} -> {nid} [label="{child.kind.value}"];')
        return nid

    emit(t)
    lines.append("}")
    return "\n".join(lines) + "\n"
