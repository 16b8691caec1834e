"""The planted-event experiment shared by the scripts and the acceptance suite."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset, SynthConfig, generate_corpus
from .metrics import EvalReport, chance_recall, evaluate
from .model import ModelParams, init_params
from .training import TrainConfig, train

# Reduced widths keep a run under the single-core time budget; chosen on a
# held-out validation split drawn from the same cross-modal map.
SYNTH_TRAIN = TrainConfig(d=256, h=64, lr=0.001, epochs=26)

VARIANTS = {
    "full": {},
    "full-lambda0": {"lam": 0.0},
    "align-only": {"mode": "align-only"},
    "detect-only": {"mode": "detect-only"},
}


@dataclass
class RunResult:
    name: str
    config: TrainConfig
    params: ModelParams
    report: EvalReport
    seconds: float

    @property
    def r1(self) -> float:
        return self.report.recall(1, 0.5)

    @property
    def miou(self) -> float:
        return self.report.miou


def run(name: str, train_ds: Dataset, test_ds: Dataset, config: TrainConfig) -> RunResult:
    start = time.perf_counter()
    params, _ = train(train_ds, config)
    seconds = time.perf_counter() - start
    report = evaluate(params, test_ds, ks=(1, 5), ths=(0.1, 0.3, 0.5, 0.7), k=config.k, mode=config.mode)
    return RunResult(name, config, params, report, seconds)


def ablation_suite(
    synth: SynthConfig = SynthConfig(),
    base: TrainConfig = SYNTH_TRAIN,
    variants: dict[str, dict] = VARIANTS,
) -> dict[str, RunResult]:
    """Train every variant on one corpus with identical seeds."""
    train_ds, test_ds = generate_corpus(synth)
    return {name: run(name, train_ds, test_ds, replace(base, **kw)) for name, kw in variants.items()}


def random_baseline(test_ds: Dataset, d: int, h: int, seeds=range(8)) -> list[float]:
    """R@1,IoU=0.5 of untrained models, one per initialisation seed."""
    return [
        evaluate(init_params(s, test_ds.Dv, test_ds.Dq, d, h), test_ds, ks=(1,), ths=(0.5,)).recall(1, 0.5)
        for s in seeds
    ]


def chance_r1(k: int = 5, th: float = 0.5) -> float:
    return chance_recall(k, th)


def baseline_summary(values: list[float]) -> tuple[float, float]:
    return float(np.mean(values)), float(np.std(values))


def validation_split(synth: SynthConfig = SynthConfig(), size: int = 200) -> Dataset:
    """Fresh videos from the same cross-modal map, disjoint from train and test.

    The map is the first draw of the corpus seed, so enlarging the training
    split yields new videos that share it.
    """
    big, _ = generate_corpus(replace(synth, num_train=synth.num_train + size, num_test=1))
    return Dataset("val", big.videos[synth.num_train :], synth.k)
