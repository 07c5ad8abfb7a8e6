"""Compare the Lipschitz stability of E4 gates trained with and without the kernel stability term."""
import argparse
import statistics
from dataclasses import replace

from lspin.experiment import run_experiment
from lspin.presets import preset


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--seeds", default="0,1,2,3,4")
    parser.add_argument("--lambda2", type=float, default=0.1)
    args = parser.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]
    for lambda2 in (0.0, args.lambda2):
        scores = []
        for seed in seeds:
            cfg = preset("E4", seed)
            cfg = replace(cfg, gates=replace(cfg.gates, lambda2=lambda2))
            scores.append(run_experiment(cfg).metrics.values["stability_lipschitz"])
        print(f"lambda2={lambda2:g}: mean {statistics.fmean(scores):.4f}  per seed {[round(s, 4) for s in scores]}")


if __name__ == "__main__":
    main()
