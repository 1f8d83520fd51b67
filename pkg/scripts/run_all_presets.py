#!/usr/bin/env python3
"""Run every shipped preset and print one summary line per comparison.

The two sweep presets dominate the runtime; everything else finishes in
seconds. Expect a couple of minutes total.
"""

import argparse
import sys
import time

from noisychain.harness import config_from_dict, run_experiment
from noisychain.presets import preset_config, preset_names


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="noisychain-out", help="output root")
    ap.add_argument("--jobs", type=int, default=2, help="parallel engines per run")
    ap.add_argument("--only", nargs="*", default=None, help="subset of preset names")
    args = ap.parse_args()

    names = args.only or preset_names()
    failed = []
    for name in names:
        cfg = config_from_dict(preset_config(name))
        t0 = time.time()
        res = run_experiment(cfg, out_root=args.out, jobs=args.jobs)
        wall = time.time() - t0
        status = "ok" if res.ok else "FAILED"
        print(f"{name:14s} {wall:6.1f}s  {status}  -> {res.run_dir}")
        for rep in res.reports:
            for line in rep.summary_lines():
                print(f"    {line}")
        for label, msg in res.engine_errors.items():
            print(f"    engine {label} failed: {msg}")
        if not res.ok:
            failed.append(name)
    if failed:
        print(f"failed presets: {', '.join(failed)}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
