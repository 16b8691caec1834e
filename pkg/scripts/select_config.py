"""Hyperparameter sweep on a validation split that shares the corpus map.

Prints R@1,IoU=0.5 and mIoU every third epoch for each candidate. The test
split is never touched.

    python3 scripts/select_config.py
"""

import argparse
import json

from wslln.data import SynthConfig, generate_corpus
from wslln.experiments import validation_split
from wslln.training import TrainConfig, train

CANDIDATES = [
    {"d": 64, "h": 32, "lr": 0.001, "epochs": 30},
    {"d": 128, "h": 64, "lr": 0.001, "epochs": 48},
    {"d": 256, "h": 64, "lr": 0.001, "epochs": 50},
    {"d": 256, "h": 64, "lr": 0.001, "epochs": 12, "lam": 0.3},
    {"d": 64, "h": 32, "lr": 0.002, "epochs": 24},
]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--candidates", help="JSON list of TrainConfig overrides")
    args = parser.parse_args()
    candidates = json.loads(args.candidates) if args.candidates else CANDIDATES
    train_ds, _ = generate_corpus(SynthConfig())
    val = validation_split()
    for overrides in candidates:
        overrides = {"lam": 0.0, **overrides}
        _, log = train(train_ds, TrainConfig(**overrides), eval_dataset=val)
        trace = [
            (r["epoch"] + 1, r["metrics"]["R@1,IoU=0.5"], round(r["metrics"]["mIoU"], 3))
            for r in log
            if r["epoch"] % 3 == 2
        ]
        print(json.dumps(overrides), trace, flush=True)


if __name__ == "__main__":
    main()
