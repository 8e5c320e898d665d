#!/usr/bin/env python3
"""Full-length seed trials for the two diffusive moving-frame cases."""

import dataclasses
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

from acceptance_defs import EXPERIMENTS  # noqa: E402
from lpinn.cli import run_experiment, validate_config  # noqa: E402

TRIALS = [
    ("convdiff_c30_lpinn", 2),
    ("burgers_c30_lpinn", 1),
    ("convdiff_c30_lpinn", 3),
    ("burgers_c30_lpinn", 2),
]


def main():
    for name, seed in TRIALS:
        cfg = validate_config(dataclasses.replace(
            EXPERIMENTS[name], seed=seed, out_dir=f"/tmp/trial_{name}_seed{seed}",
        ))
        t0 = time.perf_counter()
        result = run_experiment(cfg)
        print(f"[{name} seed {seed}] {result['status']} rel_error={result['rel_error']} "
              f"({time.perf_counter() - t0:.0f}s)", flush=True)


if __name__ == "__main__":
    main()
