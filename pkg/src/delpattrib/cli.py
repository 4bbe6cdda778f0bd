"""Command line interface.

Settings are resolved in increasing priority: built-in defaults, command line
flags, the ``--config`` file (flat ``key = value``), then environment
variables ``DELPATTRIB_<KEY>``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Mapping, Sequence

from . import __version__
from .dataset import (
    _SYNTH_TYPES,
    _coerce,
    ConfigError,
    DataError,
    SynthConfig,
    deceptive_unique_fraction,
    label_attacks,
    load_records,
    parse_flat_config,
    partition_by_target,
    synth_config_from_mapping,
    synth_generate,
    write_records,
    write_side_table,
)
from .engine import Caps, Comparator, EngineCapError
from .harness import (
    VARIANTS,
    ExperimentConfig,
    attribute_record,
    program_tree_dot,
    report_tables,
    reports_from_csv,
    run_experiment,
    write_outputs,
)
from .learner import EnsembleConfig
from .rules import compute_train_stats, deception_profile

log = logging.getLogger("delpattrib")

ENV_PREFIX = "DELPATTRIB_"

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CAP = 0, 1, 2, 3

# experiment keys; every synthetic-corpus key is accepted as well
EXPERIMENT_TYPES = {
    "seed": int,
    "input": str,
    "variants": str,
    "comparator": str,
    "cap_depth": int,
    "cap_arguments": int,
    "cap_universe": int,
    "n_trees": int,
    "max_depth": int,
    "max_features": int,
    "min_samples_split": int,
    "bootstrap": bool,
    "train_fraction": float,
    "n_bins": int,
    "k": int,
    "threshold": float,
    "output_dir": str,
    "keep_provenance": bool,
    "workers": int,
}
ALL_KEYS = {**_SYNTH_TYPES, **EXPERIMENT_TYPES}


def _key(name: str) -> str:
    return name.strip().lower().replace("-", "_")


def resolve_settings(
    flags: Mapping[str, object],
    config_path: str | None = None,
    environ: Mapping[str, str] | None = None,
) -> dict[str, str]:
    """Merge flags < config file < environment into one flat string mapping."""
    environ = os.environ if environ is None else environ
    out: dict[str, str] = {}
    for k, v in flags.items():
        if v is not None:
            out[_key(k)] = str(v)
    if config_path:
        try:
            text = Path(config_path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from None
        try:
            out.update({_key(k): v for k, v in parse_flat_config(text).items()})
        except Exception as exc:  # configparser raises several types
            raise ConfigError(f"{config_path}: {exc}") from None
    for name, v in environ.items():
        if name.startswith(ENV_PREFIX) and name != ENV_PREFIX + "CONFIG":
            out[_key(name[len(ENV_PREFIX) :])] = v
    unknown = sorted(set(out) - set(ALL_KEYS))
    if unknown:
        raise ConfigError(f"unknown setting(s): {', '.join(unknown)}")
    return out


def _typed(settings: Mapping[str, str], key: str):
    try:
        return _coerce(settings[key], ALL_KEYS[key])
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def synth_from_settings(settings: Mapping[str, str]) -> SynthConfig:
    return synth_config_from_mapping({k: v for k, v in settings.items() if k in _SYNTH_TYPES})


def experiment_from_settings(settings: Mapping[str, str]) -> ExperimentConfig:
    get = {k: _typed(settings, k) for k in settings if k in EXPERIMENT_TYPES}
    if "seed" not in get:
        raise ConfigError("seed is mandatory")
    try:
        comparator = Comparator(get.get("comparator", Comparator.GEN_SPECIFICITY.value))
    except ValueError:
        raise ConfigError(f"unknown comparator {get['comparator']!r}") from None
    variants = tuple(v.strip().upper() for v in get.get("variants", ",".join(VARIANTS)).split(",") if v.strip())
    caps = Caps(
        **{f: get[f"cap_{f}"] for f in ("depth", "arguments", "universe") if f"cap_{f}" in get}
    )
    ens = EnsembleConfig(
        **{f: get[f] for f in ("n_trees", "max_depth", "max_features", "min_samples_split", "bootstrap") if f in get}
    )
    cfg = ExperimentConfig(
        seed=get["seed"],
        input=get.get("input"),
        synth=None if get.get("input") else synth_from_settings(settings),
        variants=variants,
        comparator=comparator,
        caps=caps,
        ensemble=ens,
        train_fraction=get.get("train_fraction", 0.9),
        n_bins=get.get("n_bins", 4),
        k=get.get("k", 3),
        threshold=get.get("threshold"),
        output_dir=get.get("output_dir"),
        keep_provenance=get.get("keep_provenance", False),
        workers=get.get("workers", 1),
    )
    cfg.validate()
    return cfg


def _corpus(cfg: ExperimentConfig):
    if cfg.input:
        return load_records(cfg.input)
    return synth_generate(cfg.synth, cfg.seed)[0]


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(text)


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args, settings) -> int:
    records = load_records(args.input)
    tf = float(settings.get("train_fraction", 0.9))
    subsets = partition_by_target(records, tf)
    doc = {"n_records": len(records), "teams": sorted({r.from_team for r in records} | {r.to_team for r in records})}
    per = {}
    for s in subsets:
        labels = label_attacks(s)[s.n_train :]
        per[s.target] = {
            "n": len(s.records),
            "n_train": s.n_train,
            "n_test": len(s.test),
            "unique_exploits": len({r.exploit_key for r in s.records}),
            "deceptive_unique_fraction": round(deceptive_unique_fraction(s), 6),
            "unseen_test_fraction": round(sum(l.unseen_in_train for l in labels) / max(len(labels), 1), 6),
        }
    doc["targets"] = per
    if args.normalized:
        write_records(records, args.normalized)
    _emit(_dump(doc), args.out)
    return EXIT_OK


def cmd_synth(args, settings) -> int:
    if "seed" not in settings:
        raise ConfigError("seed is mandatory")
    cfg = synth_from_settings(settings)
    records, side = synth_generate(cfg, int(settings["seed"]))
    write_records(records, args.out)
    if args.side:
        write_side_table(side, args.side)
    log.info("wrote %d records to %s", len(records), args.out)
    return EXIT_OK


def cmd_stats(args, settings) -> int:
    cfg = experiment_from_settings(settings)
    records = _corpus(cfg)
    subsets = partition_by_target(records, cfg.train_fraction)
    teams = sorted({r.from_team for r in records} | {r.to_team for r in records})
    profile = deception_profile(subsets)
    doc = {}
    for s in subsets:
        if args.target and s.target != args.target:
            continue
        st = compute_train_stats(s, teams, profile, n_bins=cfg.n_bins, threshold=cfg.threshold, k=cfg.k)
        doc[s.target] = st.summary()
    if args.target and not doc:
        raise DataError([(None, f"unknown target {args.target!r}")])
    _emit(_dump(doc), args.out)
    return EXIT_OK


def cmd_attribute(args, settings) -> int:
    cfg = experiment_from_settings(settings)
    doc, ap = attribute_record(cfg, _corpus(cfg), args.target, args.index, args.variant)
    if args.dot:
        if ap is None:
            raise ConfigError("tree export needs a rule variant (BM, EB1 or EB2)")
        Path(args.dot).write_text(
            program_tree_dot(ap, args.team or doc["predicted_team"], cfg.comparator, cfg.caps), encoding="utf-8"
        )
    _emit(_dump(doc), args.out)
    return EXIT_OK


def cmd_export_tree(args, settings) -> int:
    cfg = experiment_from_settings(settings)
    if args.variant == "ML":
        raise ConfigError("tree export needs a rule variant (BM, EB1 or EB2)")
    _, ap = attribute_record(cfg, _corpus(cfg), args.target, args.index, args.variant)
    _emit(program_tree_dot(ap, args.team, cfg.comparator, cfg.caps), args.out)
    return EXIT_OK


def cmd_evaluate(args, settings) -> int:
    cfg = experiment_from_settings(settings)
    if not cfg.output_dir:
        raise ConfigError("evaluate needs an output directory (--out)")
    result = run_experiment(cfg)
    write_outputs(result, cfg.output_dir)
    sys.stdout.write(Path(cfg.output_dir, "accuracy.txt").read_text(encoding="utf-8"))
    failed = [r for r in result.reports if r.error]
    for r in failed:
        log.error("target %s: %s", r.target, r.error)
    return EXIT_CAP if failed else EXIT_OK


def cmd_report(args, settings) -> int:
    try:
        reports = reports_from_csv(Path(args.report).read_text(encoding="utf-8"))
    except (OSError, KeyError, ValueError) as exc:
        raise DataError([(None, str(exc))], args.report) from None
    if not reports:
        raise DataError([(None, "report has no rows")], args.report)
    csv_text, txt = report_tables(reports, args.metric)
    _emit(csv_text if args.format == "csv" else txt, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser, corpus: bool = True) -> None:
    p.add_argument("--config", help="flat key = value file; overrides flags")
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="any setting")
    if corpus:
        p.add_argument("--input", help="attack records (JSON Lines); synthetic corpus when omitted")
        p.add_argument("--comparator", choices=[c.value for c in Comparator])
        p.add_argument("--train-fraction", type=float)
        p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="delpattrib", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate records and summarise per target")
    p.add_argument("input")
    p.add_argument("--normalized", help="write the validated records back as JSON Lines")
    p.add_argument("--out")
    p.add_argument("--config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    _common(p, corpus=False)
    p.add_argument("--out", required=True)
    p.add_argument("--side", help="ground-truth side table (JSON)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="training statistics per target")
    _common(p)
    p.add_argument("--target")
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    for name, func, help_ in (
        ("attribute", cmd_attribute, "culprit set and prediction for one test attack"),
        ("export-tree", cmd_export_tree, "dialectical tree(s) for culprit(e, team) as DOT"),
    ):
        p = sub.add_parser(name, help=help_)
        _common(p)
        p.add_argument("--target", required=True)
        p.add_argument("--index", type=int, required=True, help="position in the target's test part")
        p.add_argument("--variant", default="EB2", choices=VARIANTS if name == "attribute" else VARIANTS[1:])
        p.add_argument("--team", required=name == "export-tree")
        p.add_argument("--out")
        if name == "attribute":
            p.add_argument("--dot", help="also write the tree for --team (default: the prediction)")
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", help="full experiment over all targets")
    _common(p)
    p.add_argument("--variants", help="comma separated, default ML,BM,EB1,EB2")
    p.add_argument("--out", dest="output_dir")
    p.add_argument("--keep-provenance", action="store_const", const="true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="render a report.csv as a team-by-variant table")
    p.add_argument("report")
    p.add_argument("--metric", default="accuracy")
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return ap


_NOT_SETTINGS = {"command", "func", "config", "set", "verbose", "out", "side", "normalized", "target", "index",
                 "variant", "team", "dot", "report", "metric", "format"}


def _flag_settings(args: argparse.Namespace) -> dict[str, object]:
    flags = {k: v for k, v in vars(args).items() if k not in _NOT_SETTINGS and v is not None}
    if args.command == "ingest":
        flags.pop("input", None)
    for item in getattr(args, "set", []) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        flags[k] = v
    return flags


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config_path = getattr(args, "config", None) or os.environ.get(ENV_PREFIX + "CONFIG")
        settings = resolve_settings(_flag_settings(args), config_path)
        return args.func(args, settings)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (KeyError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EngineCapError as exc:
        print(f"engine cap exceeded: {exc}", file=sys.stderr)
        return EXIT_CAP


if __name__ == "__main__":
    sys.exit(main())
