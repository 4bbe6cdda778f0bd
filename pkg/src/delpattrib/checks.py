"""Whole-system checks shared by the acceptance tests and the experiment scripts."""

from __future__ import annotations

import itertools
import random
import time
from dataclasses import dataclass, field

import numpy as np

from .dataset import SynthConfig
from .engine import Answer, Argument, Engine, Mark, Outcome, closure, mark_tree
from .harness import ExperimentConfig, run_experiment
from .lang import Literal, Program, serialize_program
from .randgen import ProgramShape, random_program, random_tree


@dataclass
class Divergence:
    program: str
    literal: str
    warranted: bool
    in_grounded: bool


@dataclass
class ConformanceResult:
    n_programs: int
    n_queries: int
    n_with_defeat: int
    divergences: list[Divergence]
    seconds: float

    @property
    def n_bad_programs(self) -> int:
        return len({d.program for d in self.divergences})


def _queried(e: Engine) -> list[Literal]:
    lits = set(e.universe) | {l.complement() for l in e.universe}
    return sorted(lits, key=str)


def conformance(n: int = 500, seed: int = 0, shape: ProgramShape | None = None) -> ConformanceResult:
    """Compare warrant against grounded-extension membership on random programs."""
    rng = random.Random(seed)
    t0 = time.perf_counter()
    bad: list[Divergence] = []
    queries = with_defeat = 0
    for _ in range(n):
        p = random_program(rng, shape)
        e = Engine(p)
        ext = e.grounded_extension()
        if any(e.defeaters(a) for a in e.all_arguments()):
            with_defeat += 1
        in_ext = {a.conclusion for a in ext}
        for lit in _queried(e):
            queries += 1
            yes = e.query(lit).value is Answer.YES
            if yes != (lit in in_ext):
                bad.append(Divergence(serialize_program(p), str(lit), yes, lit in in_ext))
    return ConformanceResult(n, queries, with_defeat, bad, time.perf_counter() - t0)


# -- marking --------------------------------------------------------------------


def _independent_mark(node) -> Mark:
    # U iff every child is D (vacuously true at leaves)
    kids = [_independent_mark(c) for c in node.children]
    return Mark.U if all(k is Mark.D for k in kids) else Mark.D


def marking(n: int = 1000, seed: int = 0, max_depth: int = 6, max_branching: int = 4) -> int:
    """Number of nodes whose mark disagrees with the recursive definition."""
    rng = random.Random(seed)
    wrong = 0
    for _ in range(n):
        t = mark_tree(random_tree(rng, max_depth, max_branching))
        for node in t.walk():
            if node.mark is not _independent_mark(node):
                wrong += 1
            if not node.children and node.mark is not Mark.U:
                wrong += 1
    return wrong


# -- specificity ----------------------------------------------------------------


def brute_force_at_least(e: Engine, a1: Argument, a2: Argument) -> bool:
    """a1 is at least as specific as a2, by enumerating every subset of the literal universe."""
    u = sorted(e.universe, key=str)
    for r in range(len(u) + 1):
        for h in itertools.combinations(u, r):
            h = frozenset(h)
            if a1.conclusion not in closure(h, (*e.strict, *a1.support)):
                continue
            if a1.conclusion in closure(h, e.strict):
                continue
            if a2.conclusion not in closure(h, (*e.strict, *a2.support)):
                return False
    return True


def brute_force_compare(e: Engine, a1: Argument, a2: Argument) -> Outcome:
    ge12, ge21 = brute_force_at_least(e, a1, a2), brute_force_at_least(e, a2, a1)
    if ge12 and ge21:
        return Outcome.EQUIVALENT
    if ge12:
        return Outcome.BETTER
    return Outcome.WORSE if ge21 else Outcome.INCOMPARABLE


def toy_programs(n: int, seed: int = 0, max_universe: int = 10) -> list[Program]:
    rng = random.Random(seed)
    shape = ProgramShape(max_predicates=6, max_rules=8, max_facts=3)
    out = []
    while len(out) < n:
        p = random_program(rng, shape)
        e = Engine(p)
        if len(e.universe) <= max_universe and len(e.all_arguments()) >= 2:
            out.append(p)
    return out


@dataclass
class SpecificityResult:
    n_programs: int
    n_pairs: int
    outcomes: dict[str, int]
    mismatches: list[tuple[str, str, str, str]]


def specificity(n: int = 50, seed: int = 0) -> SpecificityResult:
    pairs = 0
    counts: dict[str, int] = {}
    bad = []
    for p in toy_programs(n, seed):
        e = Engine(p)
        for a1, a2 in itertools.permutations(e.all_arguments(), 2):
            got, want = e.compare(a1, a2), brute_force_compare(e, a1, a2)
            pairs += 1
            counts[want.value] = counts.get(want.value, 0) + 1
            if got is not want:
                bad.append((str(a1), str(a2), got.value, want.value))
    return SpecificityResult(n, pairs, dict(sorted(counts.items())), bad)


# -- directional experiment -----------------------------------------------------


@dataclass
class SeedRun:
    seed: int
    seconds: float
    macro: dict[str, dict[str, float]]
    strata: dict[str, dict[str, dict[str, float]]]


@dataclass
class DirectionalResult:
    runs: list[SeedRun] = field(default_factory=list)

    def mean(self, variant: str, metric: str) -> float:
        return float(np.mean([r.macro[variant][metric] for r in self.runs]))

    def stratum_mean(self, variant: str, stratum: str, metric: str) -> float:
        return float(np.mean([r.strata[variant][stratum][metric] for r in self.runs]))

    def ordered(self, run: SeedRun) -> bool:
        acc = [run.macro[v]["accuracy"] for v in ("ML", "BM", "EB1", "EB2")]
        return all(a <= b for a, b in zip(acc, acc[1:]))


def directional(seeds=(0, 1, 2), synth: SynthConfig | None = None, workers: int = 1) -> DirectionalResult:
    out = DirectionalResult()
    for seed in seeds:
        t0 = time.perf_counter()
        res = run_experiment(ExperimentConfig(seed=seed, synth=synth or SynthConfig(), workers=workers))
        s = res.summary
        out.runs.append(
            SeedRun(
                seed,
                time.perf_counter() - t0,
                {v: s[v]["macro"] for v in ("ML", "BM", "EB1", "EB2")},
                {v: s[v]["strata"] for v in ("ML", "BM", "EB1", "EB2")},
            )
        )
    return out
