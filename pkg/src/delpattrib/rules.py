"""Training statistics and per-attack DeLP programs for culprit reduction."""

from __future__ import annotations

import bisect
import enum
import hashlib
import json
import re
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import AttackRecord, TargetSubset
from .engine import Answer, Caps, Comparator, Engine
from .lang import Atom, Constant, Literal, Program, Rule, make_program, serialize_program
from .learner import Vocab, build_vocab, featurize, featurize_many, nearest_neighbors


class RuleModel(str, enum.Enum):
    BM = "BM"
    EB1 = "EB1"
    EB2 = "EB2"


# ---------------------------------------------------------------------------
# naming


def slug(name: str) -> str:
    s = re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_")
    if not s or not s[0].isalpha():
        s = "t" + ("_" + s if s else "")
    return s


class TeamMap:
    """Injective mapping between team names and DeLP constants."""

    def __init__(self, teams: Iterable[str]):
        self.to_const: dict[str, str] = {}
        self.to_team: dict[str, str] = {}
        for team in sorted(set(teams)):
            base = c = slug(team)
            i = 2
            while c in self.to_team:
                c = f"{base}_{i}"
                i += 1
            self.to_const[team] = c
            self.to_team[c] = team

    @property
    def teams(self) -> list[str]:
        return sorted(self.to_const)

    def __getitem__(self, team: str) -> str:
        return self.to_const[team]


def exploit_constant(key: str) -> str:
    return "e_" + hashlib.sha1(key.encode()).hexdigest()[:10]


# ---------------------------------------------------------------------------
# statistics


@dataclass
class ExploitStats:
    key: str
    first_attacker: str
    first_time: datetime
    last_attacker: str
    last_time: datetime
    counts: dict[str, int]
    vector_index: int = -1

    @property
    def teams(self) -> list[str]:
        """The team set D of the exploit (initiator included)."""
        return sorted(self.counts)

    @property
    def deceptive(self) -> bool:
        return len(self.counts) > 1

    @property
    def most_frequent(self) -> str:
        return min(self.counts, key=lambda t: (-self.counts[t], t))

    @property
    def most_frequent_deceptive(self) -> str | None:
        """Most frequent team other than the initiator."""
        others = [t for t in self.counts if t != self.first_attacker]
        if not others:
            return None
        return min(others, key=lambda t: (-self.counts[t], t))


@dataclass
class DelayBins:
    """Quantile bins over per-team average deception delays."""

    edges: tuple[float, ...]
    team_delay: dict[str, float]

    def bin_of(self, seconds: float) -> int:
        return bisect.bisect_right(self.edges, seconds)

    def team_bin(self, team: str) -> int | None:
        d = self.team_delay.get(team)
        return None if d is None else self.bin_of(d)

    @property
    def intervals(self) -> list[tuple[float, float]]:
        bounds = (0.0, *self.edges, float("inf"))
        return list(zip(bounds[:-1], bounds[1:]))

    def teams_in(self, b: int) -> list[str]:
        return sorted(t for t in self.team_delay if self.team_bin(t) == b)

    @classmethod
    def from_delays(cls, samples: Mapping[str, Sequence[float]], n_bins: int = 4) -> DelayBins:
        """Edges at the quantiles of all observed delays; teams placed by their average."""
        team_delay = _mean(samples)
        vals = [v for t in sorted(samples) for v in samples[t]]
        if len(vals) < 2 or n_bins < 2:
            return cls((), team_delay)
        qs = np.quantile(vals, [i / n_bins for i in range(1, n_bins)])
        edges = tuple(sorted({float(q) for q in qs if q > 0}))
        return cls(edges, team_delay)


def deception_delays(records: Sequence[AttackRecord]) -> dict[str, list[float]]:
    """Per team: seconds from another team's use of a payload to the team's next (copied) use of it."""
    init: dict[tuple[str, str], str] = {}
    prev: dict[tuple[str, str], AttackRecord] = {}
    out: dict[str, list[float]] = {}
    for r in records:
        k = (r.exploit_key, r.to_team)
        owner = init.setdefault(k, r.from_team)
        p = prev.get(k)
        if r.from_team != owner and p is not None and p.from_team != r.from_team:
            out.setdefault(r.from_team, []).append((r.time - p.time).total_seconds())
        prev[k] = r
    return out


def replay_delays(records: Sequence[AttackRecord]) -> dict[str, list[float]]:
    """Per team: gaps between consecutive uses of payloads the team initiated."""
    init: dict[tuple[str, str], str] = {}
    prev: dict[tuple[str, str], datetime] = {}
    out: dict[str, list[float]] = {}
    for r in records:
        k = (r.exploit_key, r.to_team)
        owner = init.setdefault(k, r.from_team)
        if r.from_team != owner:
            continue
        if k in prev:
            out.setdefault(owner, []).append((r.time - prev[k]).total_seconds())
        prev[k] = r.time
    return out


def _mean(d: Mapping[str, Sequence[float]]) -> dict[str, float]:
    return {t: float(np.mean(v)) for t, v in sorted(d.items()) if len(v)}


def deception_profile(subsets: Iterable[TargetSubset]) -> dict[str, list[float]]:
    """Deception delays per team pooled over the training parts of all targets."""
    pooled: dict[str, list[float]] = {}
    for s in subsets:
        for team, v in deception_delays(s.train).items():
            pooled.setdefault(team, []).extend(v)
    return dict(sorted(pooled.items()))


@dataclass
class TrainStats:
    target: str
    teams: list[str]
    exploits: dict[str, ExploitStats]
    unique_counts: dict[str, int]
    replay_delay: dict[str, float]
    deception_delay: dict[str, float]
    top_unique: tuple[str, ...]
    bins: DelayBins
    global_bins: DelayBins
    threshold: float
    vocab: Vocab
    exploit_keys: list[str]
    exploit_matrix: np.ndarray = field(repr=False)
    k: int = 3

    def summary(self) -> dict:
        return {
            "target": self.target,
            "n_exploits": len(self.exploits),
            "n_deceptive_exploits": sum(e.deceptive for e in self.exploits.values()),
            "unique_counts": dict(sorted(self.unique_counts.items())),
            "replay_delay": self.replay_delay,
            "deception_delay": self.deception_delay,
            "top_unique": list(self.top_unique),
            "intervals": [[lo, hi if hi != float("inf") else None] for lo, hi in self.bins.intervals],
            "global_intervals": [
                [lo, hi if hi != float("inf") else None] for lo, hi in self.global_bins.intervals
            ],
            "threshold": self.threshold,
        }


def _nn_threshold(M: np.ndarray) -> float:
    if len(M) < 2:
        return float("inf")
    sq = (M**2).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * M @ M.T, 0.0)
    np.fill_diagonal(d2, np.inf)
    return float(np.median(np.sqrt(d2.min(axis=1))))


def compute_train_stats(
    subset: TargetSubset,
    teams: Iterable[str] | None = None,
    global_profile: Mapping[str, Sequence[float]] | None = None,
    n_bins: int = 4,
    threshold: float | None = None,
    vocab: Vocab | None = None,
    k: int = 3,
) -> TrainStats:
    train = subset.train
    vocab = vocab or build_vocab(train)
    exploits: dict[str, ExploitStats] = {}
    rows: list[AttackRecord] = []
    for r in train:
        es = exploits.get(r.exploit_key)
        if es is None:
            es = exploits[r.exploit_key] = ExploitStats(
                r.exploit_key, r.from_team, r.time, r.from_team, r.time, {}, len(rows)
            )
            rows.append(r)
        es.last_attacker, es.last_time = r.from_team, r.time
        es.counts[r.from_team] = es.counts.get(r.from_team, 0) + 1
    unique: dict[str, int] = {}
    for es in exploits.values():
        unique[es.first_attacker] = unique.get(es.first_attacker, 0) + 1
    top = tuple(sorted(unique, key=lambda t: (-unique[t], t))[:3])
    local = deception_delays(train)
    all_teams = sorted(set(teams) if teams is not None else {r.from_team for r in subset.records} | {subset.target})
    matrix = featurize_many(rows, vocab)
    return TrainStats(
        target=subset.target,
        teams=all_teams,
        exploits=exploits,
        unique_counts=unique,
        replay_delay=_mean(replay_delays(train)),
        deception_delay=_mean(local),
        top_unique=top,
        bins=DelayBins.from_delays(local, n_bins),
        global_bins=DelayBins.from_delays(global_profile if global_profile is not None else local, n_bins),
        threshold=_nn_threshold(matrix) if threshold is None else float(threshold),
        vocab=vocab,
        exploit_keys=[r.exploit_key for r in rows],
        exploit_matrix=matrix,
        k=k,
    )


# ---------------------------------------------------------------------------
# program instantiation


def _lit(pred: str, *args: str, neg: bool = False) -> Literal:
    return Literal(Atom(pred, tuple(Constant(a) for a in args)), neg)


def _strict(head: Literal, *body: Literal) -> Rule:
    return Rule(head, tuple(body), False)


def _defeasible(head: Literal, *body: Literal) -> Rule:
    return Rule(head, tuple(body), True)


@dataclass
class Neighbor:
    key: str
    distance: float
    passed: bool


@dataclass
class AttributionProgram:
    model: RuleModel
    program: Program
    test_exploit: str
    exploits: dict[str, str]  # constant -> exploit key
    neighbors: list[Neighbor]
    delta_t: dict[str, float]  # constant -> seconds since last training use
    unseen: bool
    team_map: TeamMap = field(repr=False)

    def text(self) -> str:
        return serialize_program(self.program)

    def culprit_literals(self) -> list[Literal]:
        """Positive culprit literals that some rule can conclude."""
        heads = {r.head for r in (*self.program.strict, *self.program.defeasible)}
        heads |= set(self.program.facts)
        out = [h for h in heads if h.atom.predicate == "culprit" and not h.negated]
        return sorted(out, key=str)


class _Builder:
    def __init__(self):
        self.facts: set[Literal] = set()
        self.strict: set[Rule] = set()
        self.defeasible: set[Rule] = set()

    def program(self) -> Program:
        return make_program(self.facts, self.strict, self.defeasible)


def _case_rules(
    b: _Builder,
    es: ExploitStats,
    e: str,
    stats: TrainStats,
    tm: TeamMap,
    test_time: datetime,
    model: RuleModel,
    delta_t: dict[str, float],
) -> None:
    x, y, last = tm[stats.target], tm[es.first_attacker], tm[es.last_attacker]
    attack, first, last_lit = _lit("attack", e, x), _lit("first_attack", e, y), _lit("last_attack", e, last)
    replay = _lit("replay_attack", e)
    b.facts |= {attack, first, last_lit}
    b.defeasible.add(_defeasible(replay, attack, last_lit))
    if not es.deceptive:
        b.strict.add(_strict(_lit("culprit", e, last), last_lit, replay))
        return
    _deceptive_rules(b, es, e, x, y, tm)
    _time_rules(b, es, e, x, stats, tm, test_time, model, delta_t)


def _deceptive_rules(b: _Builder, es: ExploitStats, e: str, x: str, y: str, tm: TeamMap) -> None:
    first, replay = _lit("first_attack", e, y), _lit("replay_attack", e)
    f_team = es.most_frequent_deceptive
    decep, frequent = _lit("decep", e, x), _lit("frequent", e, tm[f_team])
    b.facts |= {decep, frequent}
    b.strict.add(_strict(_lit("culprit", e, y, neg=True), first, decep))
    for team in es.teams:
        d = tm[team]
        deception = _lit("deception", e, d)
        b.strict.add(_strict(_lit("culprit", e, tm[f_team]), frequent, deception))
        b.defeasible.add(_defeasible(deception, replay, first))
        b.defeasible.add(_defeasible(_lit("culprit", e, d), deception, first))


def _time_rules(
    b: _Builder,
    es: ExploitStats,
    e: str,
    x: str,
    stats: TrainStats,
    tm: TeamMap,
    test_time: datetime,
    model: RuleModel,
    delta_t: dict[str, float],
) -> None:
    dt = max(0.0, (test_time - es.last_time).total_seconds())
    delta_t[e] = dt
    td = _lit("timedifference", e, x)
    b.facts.add(td)
    gb = stats.global_bins
    here = gb.bin_of(dt)
    for team in sorted(gb.team_delay):
        if team != stats.target and team in tm.to_const and gb.team_bin(team) != here:
            b.defeasible.add(_defeasible(_lit("culprit", e, tm[team], neg=True), td))
    if model is RuleModel.EB2:
        lb = stats.bins
        here = lb.bin_of(dt)
        for team in lb.teams_in(here):
            if team != stats.target and team in tm.to_const:
                b.defeasible.add(_defeasible(_lit("culprit", e, tm[team]), td))


def instantiate(model: RuleModel | str, test: AttackRecord, stats: TrainStats) -> AttributionProgram:
    model = RuleModel(model)
    tm = TeamMap(stats.teams)
    b = _Builder()
    delta_t: dict[str, float] = {}
    exploits: dict[str, str] = {}
    e_test = exploit_constant(test.exploit_key)
    exploits[e_test] = test.exploit_key
    neighbors: list[Neighbor] = []
    es = stats.exploits.get(test.exploit_key)
    if es is not None:
        _case_rules(b, es, e_test, stats, tm, test.time, model, delta_t)
    else:
        x = featurize(test, stats.vocab)
        for idx, dist in nearest_neighbors(x, stats.exploit_matrix, stats.k):
            neighbors.append(Neighbor(stats.exploit_keys[idx], dist, dist < stats.threshold))
        for nb in neighbors:
            n_es = stats.exploits[nb.key]
            e_n = exploit_constant(nb.key)
            exploits[e_n] = nb.key
            _case_rules(b, n_es, e_n, stats, tm, test.time, model, delta_t)
            if model is not RuleModel.BM and nb.passed:
                th = _lit("threshold", e_test, tm[n_es.first_attacker])
                b.facts.add(th)
                b.defeasible.add(_defeasible(_lit("culprit", e_test, tm[n_es.first_attacker]), th))
        if model is not RuleModel.BM:
            for u in stats.top_unique:
                if u == stats.target:
                    continue
                uq = _lit("unique", e_test, tm[u])
                b.facts.add(uq)
                b.defeasible.add(_defeasible(_lit("culprit", e_test, tm[u]), uq))
    return AttributionProgram(model, b.program(), e_test, exploits, neighbors, delta_t, es is None, tm)


def instantiate_bm(test: AttackRecord, stats: TrainStats) -> AttributionProgram:
    return instantiate(RuleModel.BM, test, stats)


def instantiate_eb1(test: AttackRecord, stats: TrainStats) -> AttributionProgram:
    return instantiate(RuleModel.EB1, test, stats)


def instantiate_eb2(test: AttackRecord, stats: TrainStats) -> AttributionProgram:
    return instantiate(RuleModel.EB2, test, stats)


# ---------------------------------------------------------------------------
# reduction


@dataclass
class Witness:
    literal: str
    support: tuple[str, ...]


@dataclass
class CulpritSet:
    attack: AttackRecord
    candidates: frozenset[str]
    warranted: frozenset[str]
    fallback_used: bool
    provenance: dict[str, list[Witness]]
    ground_truth_contained: bool | None = None

    def to_json(self) -> dict:
        return {
            "time": self.attack.time.isoformat(timespec="seconds"),
            "exploit": self.attack.exploit_key,
            "target": self.attack.to_team,
            "candidates": sorted(self.candidates),
            "warranted": sorted(self.warranted),
            "fallback_used": self.fallback_used,
            "ground_truth_contained": self.ground_truth_contained,
            "provenance": {
                t: [{"literal": w.literal, "support": list(w.support)} for w in ws]
                for t, ws in sorted(self.provenance.items())
            },
        }


def warranted_culprits(
    ap: AttributionProgram, comparator: Comparator | str = Comparator.GEN_SPECIFICITY, caps: Caps | None = None
) -> dict[str, list[Witness]]:
    """Team -> witnesses for every warranted ``culprit(_, team)`` literal."""
    engine = Engine(ap.program, comparator, caps)
    ids = ap.program.rule_ids()
    out: dict[str, list[Witness]] = {}
    for lit in ap.culprit_literals():
        ans = engine.query(lit)
        if ans.value is Answer.YES:
            team = ap.team_map.to_team[lit.atom.args[1].name]
            support = tuple(sorted(ids[r] for r in ans.witness.argument.support))
            out.setdefault(team, []).append(Witness(str(lit), support))
    return out


def reduce_culprits(
    ap: AttributionProgram,
    test: AttackRecord,
    all_teams: Iterable[str],
    comparator: Comparator | str = Comparator.GEN_SPECIFICITY,
    caps: Caps | None = None,
    _cache: dict | None = None,
) -> CulpritSet:
    pool = frozenset(t for t in all_teams if t != test.to_team)
    key = (ap.program, Comparator(comparator))
    if _cache is not None and key in _cache:
        prov = _cache[key]
    else:
        prov = warranted_culprits(ap, comparator, caps)
        if _cache is not None:
            _cache[key] = prov
    prov = {t: w for t, w in prov.items() if t in pool}
    warranted = frozenset(prov)
    fallback = not warranted
    return CulpritSet(
        attack=test,
        candidates=pool if fallback else warranted,
        warranted=warranted,
        fallback_used=fallback,
        provenance=prov,
        ground_truth_contained=test.from_team in warranted,
    )


def provenance_json(cs: CulpritSet, ap: AttributionProgram) -> str:
    doc = cs.to_json()
    doc["model"] = ap.model.value
    doc["unseen"] = ap.unseen
    doc["neighbors"] = [
        {"exploit": n.key, "distance": round(n.distance, 6), "passed": n.passed} for n in ap.neighbors
    ]
    doc["delta_t"] = {c: ap.delta_t[c] for c in sorted(ap.delta_t)}
    doc["program"] = ap.text()
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
