"""Sweep the training-set size on the two-group linear data and write study.csv."""
import argparse
from pathlib import Path

from lspin.experiment import varying_train_size_study
from lspin.presets import preset


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--sizes", default="60,30,18,12,10,6")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="runs/train_size")
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]
    for report in varying_train_size_study(preset("linear", args.seed), sizes, out_dir=Path(args.out)):
        v = report.values
        print(f"n={v['train_size']:>3}  mse={v['mse']:.4f}  r2={v['r2']:.4f}  f1={v['f1']:.3f}")


if __name__ == "__main__":
    main()
