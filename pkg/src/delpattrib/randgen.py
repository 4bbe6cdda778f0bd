"""Seeded random ground programs and dialectical trees for property checks."""

from __future__ import annotations

import random
from dataclasses import dataclass

from .engine import Argument, DialecticalNode
from .lang import Atom, Constant, Literal, Program, ProgramError, Rule, make_program


@dataclass
class ProgramShape:
    max_predicates: int = 8
    max_rules: int = 12
    max_facts: int = 4
    max_body: int = 3
    p_defeasible: float = 0.8
    # chance that a body literal reuses a fact or an earlier head
    p_reuse: float = 0.8
    constants: tuple[str, ...] = ("a", "b")


def random_program(rng: random.Random, shape: ProgramShape | None = None) -> Program:
    """A consistent ground program; bodies mostly reuse derivable literals so
    that arguments, conflicts and defeats actually occur."""
    shape = shape or ProgramShape()
    npred = rng.randint(3, shape.max_predicates)
    preds = [(f"p{i}", rng.choice((0, 0, 0, 1))) for i in range(npred)]
    consts = [Constant(c) for c in shape.constants]

    def lit() -> Literal:
        name, arity = rng.choice(preds)
        return Literal(Atom(name, tuple(rng.choice(consts) for _ in range(arity))), rng.random() < 0.5)

    while True:
        facts = {lit() for _ in range(rng.randint(1, shape.max_facts))}
        avail = sorted(facts, key=str)
        strict, defeasible = set(), set()
        for _ in range(rng.randint(2, shape.max_rules)):
            body = tuple(
                rng.choice(avail) if rng.random() < shape.p_reuse else lit()
                for _ in range(rng.randint(1, shape.max_body))
            )
            rule = Rule(lit(), body, rng.random() < shape.p_defeasible)
            (defeasible if rule.defeasible else strict).add(rule)
            avail.append(rule.head)
        try:
            return make_program(facts, strict, defeasible)
        except ProgramError:
            continue


def random_tree(rng: random.Random, max_depth: int = 6, max_branching: int = 4) -> DialecticalNode:
    """A tree of placeholder arguments with random shape (marks unset)."""
    counter = iter(range(1 << 30))

    def node(depth: int) -> DialecticalNode:
        arg = Argument(frozenset(), Literal(Atom(f"n{next(counter)}", ())))
        n = DialecticalNode(arg)
        if depth < max_depth:
            n.children = [node(depth + 1) for _ in range(rng.randint(0, max_branching))]
        return n

    return node(1)
