"""Warrant versus grounded-extension membership on seeded random programs."""

import argparse

from delpattrib.checks import conformance, specificity


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-n", type=int, default=5000, help="number of random programs")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--show", type=int, default=3, help="print this many diverging programs")
    ap.add_argument("--specificity", type=int, default=50, help="toy programs for the specificity oracle")
    args = ap.parse_args()

    r = conformance(args.n, args.seed)
    print(
        f"{r.n_programs} programs, {r.n_with_defeat} with a defeat, {r.n_queries} queries, "
        f"{len(r.divergences)} divergences in {r.n_bad_programs} programs ({r.seconds:.1f}s)"
    )
    for d in r.divergences[: args.show]:
        print(f"\n% {d.literal}: warranted={d.warranted} grounded={d.in_grounded}")
        print(d.program, end="")
    if args.specificity:
        s = specificity(args.specificity, args.seed)
        print(f"\nspecificity: {s.n_pairs} pairs over {s.n_programs} programs {s.outcomes}, {len(s.mismatches)} mismatches")


if __name__ == "__main__":
    main()
