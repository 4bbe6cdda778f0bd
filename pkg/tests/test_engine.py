import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delpattrib.engine import (
    Answer,
    Argument,
    Caps,
    Comparator,
    DefeatKind,
    Engine,
    Mark,
    Outcome,
    UniverseCapError,
    closure,
    mark_tree,
    tree_to_dot,
)
from delpattrib.lang import parse_literal as L
from delpattrib.lang import parse_program
from delpattrib.randgen import ProgramShape, random_program, random_tree


@pytest.fixture
def eng(running_example):
    return Engine(running_example)


def rules_of(p, *heads):
    return {r for r in p.defeasible if str(r.head) in heads}


def only(args):
    assert len(args) == 1, args
    return args[0]


def test_fixture_arguments(running_example, eng):
    a1 = only(eng.arguments(L("replay_attack(exploit1)")))
    a2 = only(eng.arguments(L("deception(exploit1, apt8)")))
    a3 = only(eng.arguments(L("culprit(exploit1, apt8)")))
    a4 = only(eng.arguments(L("~culprit(exploit1, apt8)")))
    assert a1.support == rules_of(running_example, "replay_attack(exploit1)")
    assert a2.support == a1.support | rules_of(running_example, "deception(exploit1, apt8)")
    assert a3.support == rules_of(
        running_example, "replay_attack(exploit1)", "deception(exploit1, apt8)", "culprit(exploit1, apt8)"
    )
    # the time fact is a fact, so the minimal support is the single rule
    assert a4.support == rules_of(running_example, "~culprit(exploit1, apt8)")


def test_fixture_attack_point(eng):
    a3 = only(eng.arguments(L("culprit(exploit1, apt8)")))
    a4 = only(eng.arguments(L("~culprit(exploit1, apt8)")))
    assert eng.counter_argues(a4, a3) == a3
    assert eng.counter_argues(a3, a4) == a4
    a1 = only(eng.arguments(L("replay_attack(exploit1)")))
    assert eng.counter_argues(a4, a1) is None


def test_fixture_defeat(eng):
    a3 = only(eng.arguments(L("culprit(exploit1, apt8)")))
    a4 = only(eng.arguments(L("~culprit(exploit1, apt8)")))
    assert (a4, DefeatKind.BLOCKING) in eng.defeaters(a3) or (a4, DefeatKind.PROPER) in eng.defeaters(a3)
    t = eng.marked_tree(a3)
    assert t.mark is Mark.D
    assert eng.query(L("culprit(exploit1, apt8)")).value is not Answer.YES


def test_fixture_strict_answers(eng):
    assert eng.query(L("culprit(exploit1, pwnies)")).value is Answer.YES
    assert eng.query(L("~culprit(exploit1, robotmafia)")).value is Answer.YES
    assert eng.query(L("replay_attack(exploit1)")).value is Answer.YES
    assert eng.query(L("nothing(here)")).value is Answer.UNKNOWN


def test_empty_support_for_facts(eng):
    a = only(eng.arguments(L("attack(exploit1, bluelotus)")))
    assert a.support == frozenset()
    assert eng.arguments(L("~attack(exploit1, bluelotus)")) == []


def test_more_specific_argument_wins():
    p = parse_program("b. c. a -< b. ~a -< b, c.")
    e = Engine(p)
    pos = only(e.arguments(L("a")))
    neg = only(e.arguments(L("~a")))
    assert e.compare(neg, pos) is Outcome.BETTER
    assert e.defeaters(pos) == [(neg, DefeatKind.PROPER)]
    assert e.defeaters(neg) == []
    assert e.query(L("~a")).value is Answer.YES
    assert e.query(L("a")).value is Answer.NO


def test_blocking_gives_undecided():
    e = Engine(parse_program("b. a -< b. ~a -< b."))
    assert e.query(L("a")).value is Answer.UNDECIDED
    pos = only(e.arguments(L("a")))
    assert e.defeaters(pos)[0][1] is DefeatKind.BLOCKING


def test_support_subset_comparator():
    p = parse_program("b. c. x -< b. a -< x. ~a -< b, c.")
    e = Engine(p, Comparator.SUPPORT_SUBSET)
    pos = only(e.arguments(L("a")))
    neg = only(e.arguments(L("~a")))
    assert e.compare(pos, neg) is Outcome.INCOMPARABLE


def test_reciprocal_blocking_not_repeated():
    # the line must not contain blocking defeater of blocking defeater
    e = Engine(parse_program("b. a -< b. ~a -< b."))
    t = e.dialectical_tree(only(e.arguments(L("a"))))
    assert t.depth() == 2


def test_universe_cap():
    facts = " ".join(f"f{i}." for i in range(6))
    rules = " ".join(f"g{i} -< f{i}." for i in range(6))
    p = parse_program(f"{facts} {rules} a -< g0, g1, g2. ~a -< g3, g4, g5.")
    e = Engine(p, caps=Caps(universe=4))
    with pytest.raises(UniverseCapError):
        e.compare(only(e.arguments(L("a"))), only(e.arguments(L("~a"))))


def test_case1_tree_is_deterministic(running_example):
    dots = {tree_to_dot(Engine(running_example).marked_tree(only(Engine(running_example).arguments(L("culprit(exploit1, apt8)")))), running_example) for _ in range(3)}
    assert len(dots) == 1


def test_dot_export(eng, running_example):
    t = eng.marked_tree(only(eng.arguments(L("culprit(exploit1, apt8)"))))
    dot = tree_to_dot(t, running_example)
    assert dot.startswith("digraph") and "lightcoral" in dot and "palegreen" in dot


# -- marking -----------------------------------------------------------------


def reference_mark(node):
    kids = [reference_mark(c) for c in node.children]
    return "U" if all(k == "D" for k in kids) else "D"


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_marking_matches_recursive_definition(seed):
    t = mark_tree(random_tree(random.Random(seed)))
    for node in t.walk():
        assert node.mark.value == reference_mark(node)


# -- specificity oracle --------------------------------------------------------


def brute_at_least(e, a1, a2):
    strict = e.strict
    u = sorted(e.universe, key=str)
    for r in range(len(u) + 1):
        for h in itertools.combinations(u, r):
            h = frozenset(h)
            if a1.conclusion not in closure(h, (*strict, *a1.support)):
                continue
            if a1.conclusion in closure(h, strict):
                continue
            if a2.conclusion not in closure(h, (*strict, *a2.support)):
                return False
    return True


def small_programs(n, seed=7):
    rng = random.Random(seed)
    shape = ProgramShape(max_predicates=6, max_rules=8, max_facts=3)
    out = []
    while len(out) < n:
        p = random_program(rng, shape)
        e = Engine(p)
        if len(e.universe) <= 10 and len(e.all_arguments()) >= 2:
            out.append(p)
    return out


@pytest.mark.parametrize("p", small_programs(25), ids=lambda p: f"{len(p.defeasible)}r")
def test_specificity_matches_exhaustive_oracle(p):
    e = Engine(p)
    args = e.all_arguments()
    for a1, a2 in itertools.permutations(args, 2):
        got = e.compare(a1, a2)
        ge12, ge21 = brute_at_least(e, a1, a2), brute_at_least(e, a2, a1)
        want = {
            (True, True): Outcome.EQUIVALENT,
            (True, False): Outcome.BETTER,
            (False, True): Outcome.WORSE,
            (False, False): Outcome.INCOMPARABLE,
        }[(ge12, ge21)]
        assert got is want, (str(a1), str(a2))


# -- argument well-formedness on random programs --------------------------------


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_arguments_are_minimal_and_consistent(seed):
    e = Engine(random_program(random.Random(seed)))
    for a in e.all_arguments():
        assert a.conclusion in e.derives(a.support)
        assert e.consistent(a.support)
        for r in a.support:
            assert a.conclusion not in e.derives(a.support - {r})


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_comparison_is_antisymmetric(seed):
    e = Engine(random_program(random.Random(seed)))
    args = e.all_arguments()[:8]
    flip = {Outcome.BETTER: Outcome.WORSE, Outcome.WORSE: Outcome.BETTER}
    for a1, a2 in itertools.permutations(args, 2):
        o = e.compare(a1, a2)
        assert e.compare(a2, a1) is flip.get(o, o)


def test_query_answers_are_consistent():
    rng = random.Random(3)
    for _ in range(40):
        e = Engine(random_program(rng))
        for lit in e.universe:
            a, b = e.query(lit).value, e.query(lit.complement()).value
            if a is Answer.YES:
                assert b is Answer.NO


def test_engine_rejects_non_ground():
    with pytest.raises(ValueError):
        Engine(parse_program("a(x). b(X) -< a(X)."))


def test_argument_str():
    a = Argument(frozenset(), L("p"))
    assert str(a) == "<{}, p>"
