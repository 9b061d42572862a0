#!/usr/bin/env python3
"""Run every JSON run file in a directory through the ``msre`` CLI.

Each file ``name.json`` writes into ``<out>/name/``.  The subcommand is
taken from the file's ``kind``.

    python3 scripts/run_configs.py scripts/configs --out runs
    python3 scripts/run_configs.py scripts/configs/shiftpi_d3.json
"""

import argparse
import glob
import json
import os
import sys

from msre.cli import main as msre_main


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("paths", nargs="+", help="run files or directories of run files")
    p.add_argument("--out", default="runs", help="parent output directory")
    p.add_argument("--threads", type=int, default=1)
    args = p.parse_args(argv)
    files = []
    for path in args.paths:
        files += sorted(glob.glob(os.path.join(path, "*.json"))) if os.path.isdir(path) else [path]
    worst = 0
    for f in files:
        with open(f) as fh:
            kind = json.load(fh)["kind"]
        name = os.path.splitext(os.path.basename(f))[0]
        print(f"== {name} ({kind})", flush=True)
        code = msre_main([kind, "--config", f, "--out-dir", os.path.join(args.out, name),
                          "--threads", str(args.threads)])
        print(f"== {name}: exit {code}", flush=True)
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
