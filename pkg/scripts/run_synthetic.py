"""Train the full model on the planted-event corpus and report test metrics.

    python3 scripts/run_synthetic.py [--lambda 0.3] [--epochs 26] [--log out.jsonl]
"""

import argparse
import time
from dataclasses import replace

import numpy as np

from wslln.data import SynthConfig, generate_corpus
from wslln.experiments import SYNTH_TRAIN, random_baseline
from wslln.metrics import chance_recall, evaluate
from wslln.training import train


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--lambda", dest="lam", type=float, default=SYNTH_TRAIN.lam)
    parser.add_argument("--epochs", type=int, default=SYNTH_TRAIN.epochs)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--log", help="JSON-lines training log with per-epoch test metrics")
    args = parser.parse_args()

    train_ds, test_ds = generate_corpus(SynthConfig(seed=args.seed))
    config = replace(SYNTH_TRAIN, lam=args.lam, epochs=args.epochs, seed=args.seed)
    start = time.perf_counter()
    params, _ = train(train_ds, config, eval_dataset=test_ds if args.log else None, log_path=args.log)
    seconds = time.perf_counter() - start
    report = evaluate(params, test_ds, ks=(1, 5), ths=(0.1, 0.3, 0.5, 0.7))
    print(report.table())
    base = random_baseline(test_ds, config.d, config.h)
    print(f"\ntrain time {seconds:.0f} s, lambda={config.lam}, d={config.d}, h={config.h}")
    print(f"random-parameter R@1,IoU=0.5: mean {np.mean(base):.1f} over {len(base)} inits ({min(base):.0f}..{max(base):.0f})")
    print(f"chance oracle R@1,IoU=0.5: {chance_recall(5, 0.5):.1f}")


if __name__ == "__main__":
    main()
