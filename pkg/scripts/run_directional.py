"""Three-seed synthetic experiment: macro accuracy, candidate counts and per-stratum containment."""

import argparse
import json
import time

from delpattrib.checks import directional
from delpattrib.dataset import SynthConfig

VARIANTS = ("ML", "BM", "EB1", "EB2")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--teams", type=int, default=10)
    ap.add_argument("--attacks", type=int, default=20_000)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--json", help="write the raw per-seed numbers here")
    args = ap.parse_args()

    t0 = time.perf_counter()
    res = directional(args.seeds, SynthConfig(n_teams=args.teams, n_attacks=args.attacks), args.workers)
    for r in res.runs:
        print(f"seed {r.seed} ({r.seconds:.0f}s)")
        for v in VARIANTS:
            m = r.macro[v]
            strata = "  ".join(
                f"{s} {x['accuracy']:.2f}/{x['containment']:.2f}" for s, x in r.strata[v].items() if x["n"]
            )
            print(
                f"  {v:<4} acc {m['accuracy']:.3f}  cand {m['avg_candidates']:.2f}  "
                f"cont {m['containment']:.3f}  fallback {m['fallback_rate']:.3f}  | {strata}"
            )
    print("mean accuracy  " + "  ".join(f"{v} {res.mean(v, 'accuracy'):.3f}" for v in VARIANTS))
    print(f"mean EB2 - ML  {res.mean('EB2', 'accuracy') - res.mean('ML', 'accuracy'):.3f}")
    print(f"BM candidates  {res.mean('BM', 'avg_candidates'):.2f}")
    print(
        "unseen-team containment  "
        + "  ".join(f"{v} {res.stratum_mean(v, 'unseen-team', 'containment'):.3f}" for v in VARIANTS[1:])
    )
    print(f"total {time.perf_counter() - t0:.0f}s")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump([r.__dict__ for r in res.runs], fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
