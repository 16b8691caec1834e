"""Weakly supervised training from video-sentence match labels only."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .data import Dataset
from .model import MATCH, MODES, ForwardResult, ModelParams, forward_features, init_params
from .proposals import generate_spans, proposal_features

logger = logging.getLogger(__name__)

VIDEO_EPS = 1e-8
REFINE_EPS = 1e-12


class ConfigurationError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainingPair:
    video_id: str
    query_id: str
    label: int


@dataclass
class TrainConfig:
    lam: float = 0.3
    lr: float = 0.01
    momentum: float = 0.9
    epochs: int = 50
    seed: int = 0
    neg_ratio: int = 1
    d: int = 1000
    h: int = 256
    k: int = 5
    mode: str = "full"

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigurationError(f"lambda must be >= 0, got {self.lam}")
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.neg_ratio < 0:
            raise ConfigurationError("neg_ratio must be >= 0")


# --------------------------------------------------------------------------
# negative sampling


def sample_negatives(
    positives: Sequence[tuple[str, str]],
    seed: int,
    epoch: int = 0,
    ratio: int = 1,
) -> list[TrainingPair]:
    """Pair each positive's video with ``ratio`` random non-matching sentences.

    Sentences are drawn from every query in ``positives``; no sampled pair is a
    positive pair. The draw depends only on ``(seed, epoch)``.
    """
    queries = sorted({q for _, q in positives})
    if len(queries) < 2:
        raise ConfigurationError("negative sampling needs at least two distinct queries")
    positive_set = set(positives)
    by_video: dict[str, set[str]] = {}
    for v, q in positives:
        by_video.setdefault(v, set()).add(q)
    rng = np.random.default_rng([seed, epoch])
    out = []
    for v, _ in positives:
        for _ in range(ratio):
            if len(by_video[v]) >= len(queries):
                raise ConfigurationError(f"video {v} matches every query; no negative exists")
            for _attempt in range(64):
                q = queries[rng.integers(len(queries))]
                if (v, q) not in positive_set:
                    break
            else:
                allowed = [c for c in queries if (v, c) not in positive_set]
                q = allowed[rng.integers(len(allowed))]
            out.append(TrainingPair(v, q, 0))
    return out


# --------------------------------------------------------------------------
# losses


def _as_var(x) -> ad.Var:
    return x if isinstance(x, ad.Var) else ad.Tape().leaf(x)


def video_loss(vq, label: int) -> ad.Var:
    """Cross-entropy of the label on ``(vq + eps) / (vq[0] + vq[1] + 2 eps)``."""
    return ad.normalized_nll(_as_var(vq), int(label), VIDEO_EPS)


def pseudo_label(s, match: int = MATCH) -> int:
    """Index of the best-matching proposal; ties go to the lowest index."""
    s = s.value if isinstance(s, ad.Var) else np.asarray(s)
    return int(np.argmax(s[:, match]))


def refine_loss(s, target: int, match: int = MATCH) -> ad.Var:
    """Cross-entropy over proposals of the renormalised match column."""
    return ad.normalized_nll(ad.column(_as_var(s), match), int(target), REFINE_EPS)


def total_loss(vq, label: int, s, lam: float, match: int = MATCH) -> ad.Var:
    """Video loss plus ``lam`` times the refinement loss on positive pairs.

    ``match`` selects which score column means "match"; a label equal to it is
    a positive pair.
    """
    vq, s = _as_var(vq), _as_var(s)
    if vq.tape is not s.tape:
        # loose arrays: put both on one tape
        tape = ad.Tape()
        vq, s = tape.leaf(vq.value), tape.leaf(s.value)
    lv = video_loss(vq, label)
    if lam == 0 or label != match:
        return lv
    lr = refine_loss(s, pseudo_label(s, match), match)
    return ad.add(lv, ad.scale(lr, lam))


def align_only_loss(sa, label: int) -> ad.Var:
    """Every proposal takes the video label; mean per-proposal cross-entropy."""
    return ad.nll_rows(_as_var(sa), int(label))


def detect_only_loss(sd, label: int) -> ad.Var:
    """Two-class cross-entropy on ``[1 - m, m]`` with ``m`` the top match score."""
    m = ad.max_entry(ad.column(_as_var(sd), MATCH))
    return ad.binary_nll(m, int(label))


def ablation_mode(mode: str) -> Callable[[ForwardResult, int, float], tuple[ad.Var, float, float]]:
    """Loss builder for a training mode.

    The returned callable maps ``(forward result, label, lam)`` to
    ``(loss, video-level term, refinement term)``.
    """
    if mode == "full":

        def full(r: ForwardResult, label: int, lam: float):
            lv = video_loss(r.vq, label)
            if lam == 0 or label != MATCH:
                return lv, float(lv.value), 0.0
            lr = refine_loss(r.s, pseudo_label(r.s))
            return ad.add(lv, ad.scale(lr, lam)), float(lv.value), float(lr.value)

        return full
    if mode == "align-only":
        return lambda r, label, lam: _plain(align_only_loss(r.sa, label))
    if mode == "detect-only":
        return lambda r, label, lam: _plain(detect_only_loss(r.sd, label))
    raise ConfigurationError(f"unknown mode {mode!r}; expected one of {MODES}")


def _plain(loss: ad.Var):
    return loss, float(loss.value), 0.0


# --------------------------------------------------------------------------
# optimisation


class SGD:
    """SGD with classical momentum: ``v = mu * v + g``, ``p -= lr * v``."""

    def __init__(self, params: ModelParams, lr: float, momentum: float):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(v) for k, v in params.arrays.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            v = self.velocity[name]
            v *= self.momentum
            v += g
            self.params.arrays[name] -= self.lr * v


def loss_and_grads(
    params: ModelParams,
    feats: np.ndarray,
    query: np.ndarray,
    label: int,
    config: TrainConfig,
    loss_fn=None,
    lam: float | None = None,
) -> tuple[float, float, float, dict[str, np.ndarray]]:
    loss_fn = loss_fn or ablation_mode(config.mode)
    r = forward_features(feats, query, params, config.mode)
    loss, lv, lr = loss_fn(r, label, config.lam if lam is None else lam)
    ad.backward(loss)
    grads = {name: var.grad for name, var in r.params.items()}
    return float(loss.value), lv, lr, grads


def train(
    dataset: Dataset,
    config: TrainConfig,
    eval_dataset: Dataset | None = None,
    log_path: str | Path | None = None,
    params: ModelParams | None = None,
) -> tuple[ModelParams, list[dict]]:
    """Train on positive pairs plus freshly sampled negatives each epoch.

    One pair per update. The epoch log holds ``mean_Lv`` (over all pairs),
    ``mean_Lr`` (over positive pairs), ``mean_loss`` and, with an eval set,
    the evaluation metrics.
    """
    from .metrics import evaluate

    spans = generate_spans(config.k)
    feats = {v.video_id: proposal_features(v.features, spans, config.k) for v in dataset.videos}
    queries = {q.query_id: q.feature for _, q in dataset.queries()}
    positives = [(v.video_id, q.query_id) for v, q in dataset.queries()]
    if params is None:
        params = init_params(config.seed, dataset.Dv, dataset.Dq, config.d, config.h)
    opt = SGD(params, config.lr, config.momentum)
    loss_fn = ablation_mode(config.mode)
    log = []
    log_fh = open(log_path, "w") if log_path else None
    try:
        for epoch in range(config.epochs):
            pairs = [TrainingPair(v, q, 1) for v, q in positives]
            if config.neg_ratio:
                pairs += sample_negatives(positives, config.seed, epoch, config.neg_ratio)
            order = np.random.default_rng([config.seed, epoch, 1]).permutation(len(pairs))
            lv_sum = lr_sum = loss_sum = 0.0
            n_pos = 0
            for idx in order:
                pair = pairs[idx]
                loss, lv, lr, grads = loss_and_grads(
                    params, feats[pair.video_id], queries[pair.query_id], pair.label, config, loss_fn
                )
                if not math.isfinite(loss):
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch} for pair "
                        f"({pair.video_id}, {pair.query_id}, label={pair.label})"
                    )
                opt.step(grads)
                lv_sum += lv
                lr_sum += lr
                loss_sum += loss
                n_pos += pair.label
            record = {
                "epoch": epoch,
                "mean_Lv": lv_sum / len(pairs),
                "mean_Lr": lr_sum / max(n_pos, 1),
                "mean_loss": loss_sum / len(pairs),
            }
            if eval_dataset is not None:
                report = evaluate(params, eval_dataset, k=config.k, mode=config.mode)
                record["metrics"] = report.summary()
            logger.info("epoch %d: %s", epoch, record)
            log.append(record)
            if log_fh:
                log_fh.write(json.dumps(record, sort_keys=True) + "\n")
                log_fh.flush()
    finally:
        if log_fh:
            log_fh.close()
    return params, log


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
