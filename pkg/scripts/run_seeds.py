"""Run a bundled preset over several seeds and print per-seed and median metrics.

    python3 scripts/run_seeds.py E4 --seeds 0,1,2 --out runs/e4
"""
import argparse
import statistics
import time
from pathlib import Path

from lspin.experiment import run_experiment
from lspin.presets import preset


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("preset")
    parser.add_argument("--seeds", default="0,1,2")
    parser.add_argument("--out", help="write one result bundle per seed under this directory")
    args = parser.parse_args()

    per_seed = []
    for seed in (int(s) for s in args.seeds.split(",")):
        out = Path(args.out) / f"seed{seed}" if args.out else None
        start = time.perf_counter()
        metrics = run_experiment(preset(args.preset, seed), out).metrics.values
        shown = {k: round(v, 4) for k, v in metrics.items() if isinstance(v, float)}
        print(f"seed {seed} ({time.perf_counter() - start:.0f}s): {shown}", flush=True)
        per_seed.append(metrics)

    keys = [k for k, v in per_seed[0].items() if isinstance(v, float)]
    print("median:", {k: round(statistics.median(m[k] for m in per_seed), 4) for k in keys})


if __name__ == "__main__":
    main()
