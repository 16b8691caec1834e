"""Full model vs. single-branch ablations and the lambda=0 variant, same seeds.

    python3 scripts/run_ablations.py [--seed 0]
"""

import argparse
from dataclasses import replace

from wslln.data import SynthConfig
from wslln.experiments import SYNTH_TRAIN, ablation_suite


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    results = ablation_suite(SynthConfig(seed=args.seed), replace(SYNTH_TRAIN, seed=args.seed))
    print(f"{'variant':<16} {'R@1,0.5':>8} {'R@5,0.5':>8} {'mIoU':>6} {'time':>6}")
    for name, r in results.items():
        print(f"{name:<16} {r.r1:8.1f} {r.report.recall(5, 0.5):8.1f} {r.miou:6.3f} {r.seconds:5.0f}s")


if __name__ == "__main__":
    main()
