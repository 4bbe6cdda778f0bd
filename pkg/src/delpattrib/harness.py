"""End-to-end attribution experiments, metrics and exports."""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import (
    AttackLabel,
    AttackRecord,
    SynthConfig,
    TargetSubset,
    label_attacks,
    load_records,
    partition_by_target,
    synth_generate,
)
from .engine import Caps, Comparator, Engine, EngineCapError, tree_to_dot
from .learner import EnsembleConfig, featurize_many, restrict_scores, train_ensemble
from .rules import (
    AttributionProgram,
    CulpritSet,
    RuleModel,
    TrainStats,
    compute_train_stats,
    deception_profile,
    instantiate,
    provenance_json,
    reduce_culprits,
)

log = logging.getLogger(__name__)

VARIANTS = ("ML", "BM", "EB1", "EB2")


@dataclass
class ExperimentConfig:
    seed: int
    input: str | None = None
    synth: SynthConfig | None = None
    variants: tuple[str, ...] = VARIANTS
    comparator: Comparator = Comparator.GEN_SPECIFICITY
    caps: Caps = field(default_factory=Caps)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    train_fraction: float = 0.9
    n_bins: int = 4
    k: int = 3
    threshold: float | None = None
    output_dir: str | None = None
    keep_provenance: bool = False
    workers: int = 1

    def validate(self) -> None:
        from .dataset import ConfigError

        if self.seed is None:
            raise ConfigError("seed is mandatory")
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad:
            raise ConfigError(f"unknown variant(s): {', '.join(bad)}")
        if not self.variants:
            raise ConfigError("no variants selected")
        if self.input is None and self.synth is None:
            raise ConfigError("need an input corpus or a synthetic config")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.k < 1 or self.n_bins < 1:
            raise ConfigError("k and n_bins must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")


@dataclass
class VariantMetrics:
    accuracy: float = 0.0
    avg_candidates: float = 0.0
    # truth among the warranted culprits (an empty warrant set contains nobody)
    containment: float = 0.0
    # truth among the teams the classifier could choose from (fallback included)
    containment_effective: float = 0.0
    fallback_rate: float = 0.0
    outside_class_rate: float = 0.0


@dataclass
class TeamReport:
    target: str
    n_test: int
    metrics: dict[str, VariantMetrics]
    unseen_fraction: float
    deceptive_fraction: float
    unseen_team_fraction: float
    error: str | None = None

    def accuracy(self, variant: str) -> float:
        return self.metrics[variant].accuracy


@dataclass
class AttackOutcome:
    target: str
    index: int
    time: str
    exploit: str
    true_team: str
    stratum: str
    predictions: dict[str, str]
    n_candidates: dict[str, int]
    contained: dict[str, bool]
    fallback: dict[str, bool]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    reports: list[TeamReport]
    outcomes: list[AttackOutcome]
    summary: dict
    stats: dict[str, TrainStats] = field(default_factory=dict, repr=False)
    programs: dict[tuple[str, int, str], AttributionProgram] = field(default_factory=dict, repr=False)
    culprits: dict[tuple[str, int, str], CulpritSet] = field(default_factory=dict, repr=False)
    subsets: dict[str, TargetSubset] = field(default_factory=dict, repr=False)


def stratum(label: AttackLabel) -> str:
    if label.unseen_in_train:
        return "unseen-exploit"
    if label.unseen_team:
        return "unseen-team"
    return "deceptive" if label.deceptive else "non-deceptive"


def _fraction(xs: Sequence[bool]) -> float:
    return float(np.mean(xs)) if len(xs) else 0.0


def run_target(
    subset: TargetSubset,
    cfg: ExperimentConfig,
    teams: Sequence[str],
    global_profile: Mapping[str, Sequence[float]],
    result: ExperimentResult | None = None,
) -> tuple[TeamReport, list[AttackOutcome]]:
    labels = label_attacks(subset)[subset.n_train :]
    stats = compute_train_stats(
        subset, teams, global_profile, n_bins=cfg.n_bins, threshold=cfg.threshold, k=cfg.k
    )
    if result is not None:
        result.stats[subset.target] = stats
    test = subset.test
    scores: list[dict[str, float]] | None = None
    if subset.train:
        X = featurize_many(subset.train, stats.vocab)
        model = train_ensemble(X, [r.from_team for r in subset.train], cfg.ensemble, cfg.seed)
        if test:
            P = model.predict_proba(featurize_many(test, stats.vocab))
            scores = [dict(zip(model.classes, map(float, row))) for row in P]
    pool = [t for t in teams if t != subset.target]
    cache: dict = {}
    outcomes = [
        AttackOutcome(
            subset.target,
            i,
            r.time.isoformat(timespec="seconds"),
            r.exploit_key,
            r.from_team,
            stratum(l),
            {},
            {},
            {},
            {},
        )
        for i, (r, l) in enumerate(zip(test, labels))
    ]
    outside: dict[str, list[bool]] = {v: [] for v in cfg.variants}
    for v in cfg.variants:
        for i, r in enumerate(test):
            if v == "ML":
                allowed, contained, fallback = frozenset(pool), r.from_team in pool, False
            else:
                ap = instantiate(RuleModel(v), r, stats)
                cs = reduce_culprits(ap, r, teams, cfg.comparator, cfg.caps, cache)
                allowed, contained, fallback = cs.candidates, bool(cs.ground_truth_contained), cs.fallback_used
                if result is not None and cfg.keep_provenance:
                    result.programs[(subset.target, i, v)] = ap
                    result.culprits[(subset.target, i, v)] = cs
            if scores is not None:
                pred = restrict_scores(scores[i], allowed)
                team, out = pred.predicted_team, pred.outside_classes
            else:
                team, out = min(allowed), True
            o = outcomes[i]
            o.predictions[v] = team
            o.n_candidates[v] = len(allowed)
            o.contained[v] = contained
            o.fallback[v] = fallback
            outside[v].append(out)
    metrics = {}
    for v in cfg.variants:
        metrics[v] = VariantMetrics(
            accuracy=_fraction([o.predictions[v] == o.true_team for o in outcomes]),
            avg_candidates=float(np.mean([o.n_candidates[v] for o in outcomes])) if outcomes else 0.0,
            containment=_fraction([o.contained[v] for o in outcomes]),
            containment_effective=_fraction(
                [o.contained[v] or (o.fallback[v] and o.true_team != subset.target) for o in outcomes]
            ),
            fallback_rate=_fraction([o.fallback[v] for o in outcomes]),
            outside_class_rate=_fraction(outside[v]),
        )
    report = TeamReport(
        target=subset.target,
        n_test=len(test),
        metrics=metrics,
        unseen_fraction=_fraction([l.unseen_in_train for l in labels]),
        deceptive_fraction=_fraction([l.deceptive for l in labels]),
        unseen_team_fraction=_fraction([l.unseen_team for l in labels]),
    )
    return report, outcomes


def load_corpus(cfg: ExperimentConfig) -> tuple[list[AttackRecord], dict | None]:
    if cfg.input is not None:
        return load_records(cfg.input), None
    return synth_generate(cfg.synth, cfg.seed)


def _target_job(args) -> tuple[TeamReport, list[AttackOutcome], ExperimentResult]:
    subset, cfg, teams, profile = args
    part = ExperimentResult(cfg, [], [], {})
    try:
        report, outcomes = run_target(subset, cfg, teams, profile, part)
    except EngineCapError as exc:
        log.warning("target %s aborted: %s", subset.target, exc)
        report = TeamReport(subset.target, len(subset.test), {}, 0.0, 0.0, 0.0, error=f"{type(exc).__name__}: {exc}")
        outcomes = []
    return report, outcomes, part


def run_experiment(cfg: ExperimentConfig, records: Sequence[AttackRecord] | None = None) -> ExperimentResult:
    """Run every variant on every target.  Targets are independent, so ``cfg.workers > 1``
    spreads them over processes; the result does not depend on the worker count."""
    cfg.validate()
    if records is None:
        records, _ = load_corpus(cfg)
    subsets = partition_by_target(records, cfg.train_fraction)
    teams = sorted({r.from_team for r in records} | {r.to_team for r in records})
    profile = deception_profile(subsets)
    jobs = [(s, cfg, teams, profile) for s in subsets]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            parts = list(pool.map(_target_job, jobs))
    else:
        parts = [_target_job(j) for j in jobs]
    result = ExperimentResult(cfg, [], [], {})
    for s, (report, outcomes, part) in zip(subsets, parts):
        result.subsets[s.target] = s
        result.reports.append(report)
        result.outcomes.extend(outcomes)
        result.stats.update(part.stats)
        result.programs.update(part.programs)
        result.culprits.update(part.culprits)
    result.summary = summarize(result.reports, result.outcomes, cfg.variants)
    return result


def summarize(reports: Sequence[TeamReport], outcomes: Sequence[AttackOutcome], variants: Sequence[str]) -> dict:
    ok = [r for r in reports if r.error is None]
    out: dict = {"n_targets": len(reports), "n_failed": len(reports) - len(ok), "n_test": len(outcomes)}
    for v in variants:
        fields = asdict(VariantMetrics()).keys()
        macro = {f: float(np.mean([getattr(r.metrics[v], f) for r in ok])) if ok else 0.0 for f in fields}
        micro = {
            "accuracy": _fraction([o.predictions[v] == o.true_team for o in outcomes]),
            "avg_candidates": float(np.mean([o.n_candidates[v] for o in outcomes])) if outcomes else 0.0,
            "containment": _fraction([o.contained[v] for o in outcomes]),
            "fallback_rate": _fraction([o.fallback[v] for o in outcomes]),
        }
        strata = {}
        for s in ("non-deceptive", "deceptive", "unseen-team", "unseen-exploit"):
            sel = [o for o in outcomes if o.stratum == s]
            strata[s] = {
                "n": len(sel),
                "accuracy": _fraction([o.predictions[v] == o.true_team for o in sel]),
                "containment": _fraction([o.contained[v] for o in sel]),
                "avg_candidates": float(np.mean([o.n_candidates[v] for o in sel])) if sel else 0.0,
            }
        out[v] = {"macro": macro, "micro": micro, "strata": strata}
    return out


def attribute_record(
    cfg: ExperimentConfig,
    records: Sequence[AttackRecord],
    target: str,
    index: int,
    variant: str = "EB2",
) -> tuple[dict, AttributionProgram | None]:
    """Culprit set and restricted prediction for test attack ``index`` of ``target``."""
    if variant not in VARIANTS:
        raise KeyError(f"unknown variant {variant!r}")
    subsets = {s.target: s for s in partition_by_target(records, cfg.train_fraction)}
    if target not in subsets:
        raise KeyError(f"unknown target {target!r}")
    subset = subsets[target]
    if not 0 <= index < len(subset.test):
        raise KeyError(f"test index {index} out of range for {target} ({len(subset.test)} test attacks)")
    teams = sorted({r.from_team for r in records} | {r.to_team for r in records})
    stats = compute_train_stats(
        subset,
        teams,
        deception_profile(subsets.values()),
        n_bins=cfg.n_bins,
        threshold=cfg.threshold,
        k=cfg.k,
    )
    record = subset.test[index]
    pool = frozenset(t for t in teams if t != target)
    ap = None
    if variant == "ML":
        doc = {"candidates": sorted(pool), "fallback_used": False}
    else:
        ap = instantiate(RuleModel(variant), record, stats)
        cs = reduce_culprits(ap, record, teams, cfg.comparator, cfg.caps)
        doc = json.loads(provenance_json(cs, ap))
    X = featurize_many(subset.train, stats.vocab)
    model = train_ensemble(X, [r.from_team for r in subset.train], cfg.ensemble, cfg.seed)
    scores = model.scores(featurize_many([record], stats.vocab))
    pred = restrict_scores(scores, doc["candidates"])
    doc.update(
        variant=variant,
        target=target,
        index=index,
        true_team=record.from_team,
        predicted_team=pred.predicted_team,
        scores={t: _r(v) for t, v in sorted(scores.items())},
    )
    return doc, ap


# ---------------------------------------------------------------------------
# exports


def _r(x: float) -> float:
    return round(float(x), 6)


REPORT_COLUMNS = ("target", "n_test", "variant", *asdict(VariantMetrics()).keys())


def reports_to_rows(reports: Iterable[TeamReport]) -> list[dict]:
    rows = []
    for r in reports:
        for v, m in r.metrics.items():
            row = {"target": r.target, "n_test": r.n_test, "variant": v}
            row.update({k: _r(x) for k, x in asdict(m).items()})
            rows.append(row)
    return rows


def report_csv(reports: Sequence[TeamReport]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in reports_to_rows(reports):
        w.writerow(row)
    return buf.getvalue()


def reports_from_csv(text: str) -> list[TeamReport]:
    by_target: dict[str, TeamReport] = {}
    for row in csv.DictReader(io.StringIO(text)):
        rep = by_target.setdefault(
            row["target"], TeamReport(row["target"], int(row["n_test"]), {}, 0.0, 0.0, 0.0)
        )
        rep.metrics[row["variant"]] = VariantMetrics(
            **{k: float(row[k]) for k in asdict(VariantMetrics()).keys()}
        )
    return list(by_target.values())


def report_tables(
    reports: Sequence[TeamReport], metric: str = "accuracy", variants: Sequence[str] | None = None
) -> tuple[str, str]:
    """Team-by-variant table of one metric with a mean row, as (csv, aligned text)."""
    if not reports:
        raise ValueError("no reports")
    variants = list(variants or [v for v in VARIANTS if v in reports[0].metrics])
    rows = []
    for r in reports:
        rows.append([r.target] + [_r(getattr(r.metrics[v], metric)) if v in r.metrics else None for v in variants])
    ok = [r for r in reports if r.error is None]
    means = [_r(np.mean([getattr(r.metrics[v], metric) for r in ok])) if ok else None for v in variants]
    rows.append(["Average"] + means)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["team"] + variants)
    for row in rows:
        w.writerow(["" if c is None else c for c in row])
    fmt_rows = [["Team"] + variants] + [
        [row[0]] + ["-" if c is None else f"{c:.2f}" for c in row[1:]] for row in rows
    ]
    widths = [max(len(r[i]) for r in fmt_rows) for i in range(len(fmt_rows[0]))]
    lines = []
    for j, row in enumerate(fmt_rows):
        lines.append("  ".join(c.ljust(widths[0]) if i == 0 else c.rjust(widths[i]) for i, c in enumerate(row)))
        if j == 0 or j == len(fmt_rows) - 2:
            lines.append("  ".join("-" * w_ for w_ in widths))
    return buf.getvalue(), "\n".join(lines) + "\n"


OUTCOME_COLUMNS = ("target", "index", "time", "exploit", "true_team", "stratum")


def outcomes_csv(outcomes: Sequence[AttackOutcome], variants: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = list(OUTCOME_COLUMNS)
    for v in variants:
        head += [f"{v}_pred", f"{v}_candidates", f"{v}_contained", f"{v}_fallback"]
    w.writerow(head)
    for o in outcomes:
        row = [o.target, o.index, o.time, o.exploit, o.true_team, o.stratum]
        for v in variants:
            row += [o.predictions[v], o.n_candidates[v], int(o.contained[v]), int(o.fallback[v])]
        w.writerow(row)
    return buf.getvalue()


def _jsonable(x):
    if isinstance(x, float):
        return _r(x)
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def write_outputs(result: ExperimentResult, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    variants = list(result.config.variants)
    acc_csv, acc_txt = report_tables(result.reports, "accuracy", variants)
    files = {
        "report.csv": report_csv(result.reports),
        "accuracy.csv": acc_csv,
        "accuracy.txt": acc_txt,
        "attacks.csv": outcomes_csv(result.outcomes, variants),
        "summary.json": json.dumps(_jsonable(result.summary), indent=2, sort_keys=True) + "\n",
        "stats.json": json.dumps(
            _jsonable({t: s.summary() for t, s in sorted(result.stats.items())}), indent=2, sort_keys=True
        )
        + "\n",
    }
    written = []
    for name, text in files.items():
        p = out / name
        p.write_text(text, encoding="utf-8", newline="\n")
        written.append(p)
    return written


def export_tree(
    result: ExperimentResult,
    target: str,
    index: int,
    team: str,
    variant: str = "BM",
    comparator: Comparator | None = None,
) -> str:
    """DOT rendering of the marked dialectical tree(s) for ``culprit(e, team)`` on one test attack."""
    stats = result.stats.get(target)
    subset = result.subsets.get(target)
    if stats is None or subset is None:
        raise KeyError(f"unknown target {target!r}")
    if not 0 <= index < len(subset.test):
        raise KeyError(f"test index {index} out of range for {target}")
    ap = instantiate(RuleModel(variant), subset.test[index], stats)
    return program_tree_dot(ap, team, comparator or result.config.comparator, result.config.caps)


def program_tree_dot(
    ap: AttributionProgram, team: str, comparator: Comparator | str = Comparator.GEN_SPECIFICITY, caps: Caps | None = None
) -> str:
    if team not in ap.team_map.to_const:
        raise KeyError(f"unknown team {team!r}")
    const = ap.team_map[team]
    engine = Engine(ap.program, comparator, caps)
    lits = [l for l in ap.culprit_literals() if l.atom.args[1].name == const]
    parts = []
    for n, lit in enumerate(lits):
        ans = engine.query(lit)
        for m, t in enumerate(ans.trees):
            parts.append(tree_to_dot(t, ap.program, name=f"t{n}_{m}"))
    if not parts:
        return f"// no argument for culprit(_, {const})\ndigraph empty {{\n}}\n"
    return "".join(parts)
