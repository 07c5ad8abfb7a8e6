"""Share of test gates at exactly 0, exactly 1 and strictly between, for LSPIN and LLSPIN on E4."""
import argparse

from lspin.experiment import run_experiment
from lspin.presets import preset


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    print(f"{'model':<10}{'% at 0':>10}{'% at 1':>10}{'% between':>12}")
    for name in ("E4", "E4_llspin"):
        m = run_experiment(preset(name, args.seed)).metrics.values
        print(f"{name:<10}{m['pct_gates_0']:>10.2f}{m['pct_gates_1']:>10.2f}{m['pct_gates_between']:>12.2f}")


if __name__ == "__main__":
    main()
