#!/usr/bin/env python3
"""Run the acceptance criteria and write one JSON report per criterion.

Reports go to ``<out>/<criterion>.json``; wall-clock seconds go to
``<out>/timing.json`` so the reports stay byte-reproducible.  Exit status
is 0 when every criterion passes and 2 otherwise.

    python3 scripts/run_acceptance.py --out acceptance-out
    python3 scripts/run_acceptance.py --only main_identity shift_function
"""

import argparse
import json
import os
import sys

from msre.acceptance import NAMES, SEED, Suite
from msre.cli import dumps


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="acceptance-out", help="output directory")
    p.add_argument("--seed", type=int, default=SEED, help="master seed")
    p.add_argument("--only", nargs="+", choices=NAMES, help="subset of criteria")
    args = p.parse_args(argv)
    os.makedirs(args.out, exist_ok=True)
    suite = Suite(args.seed)
    timing = {}
    ok = True
    for name in args.only or NAMES:
        out = suite.run(name)
        with open(os.path.join(args.out, f"{name}.json"), "w") as fh:
            fh.write(dumps(out.report))
        timing[name] = {"seconds": out.seconds, "limit": out.runtime_limit}
        print(out.line(), flush=True)
        ok = ok and out.passed
    with open(os.path.join(args.out, "timing.json"), "w") as fh:
        json.dump(timing, fh, indent=2, sort_keys=True)
    return 0 if ok else 2


if __name__ == "__main__":
    sys.exit(main())
