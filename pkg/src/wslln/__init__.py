"""Weakly supervised temporal language localization on numpy.

Modules: ``autodiff`` (tape-based reverse mode), ``proposals``, ``model``,
``training``, ``metrics``, ``data`` (feature files, manifests, synthetic
corpus) and ``cli``.
"""

from .data import SynthConfig, gen_synthetic, generate_corpus, load_dataset
from .metrics import EvalReport, evaluate, temporal_iou
from .model import ModelParams, forward, init_params, load_checkpoint, rank, save_checkpoint
from .proposals import TemporalSpan, generate_spans
from .training import TrainConfig, train

__all__ = [
    "EvalReport",
    "ModelParams",
    "SynthConfig",
    "TemporalSpan",
    "TrainConfig",
    "evaluate",
    "forward",
    "gen_synthetic",
    "generate_corpus",
    "generate_spans",
    "init_params",
    "load_checkpoint",
    "load_dataset",
    "rank",
    "save_checkpoint",
    "temporal_iou",
    "train",
]
