"""Temporal IoU, R@k at IoU thresholds, and mean IoU."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import Dataset
from .model import ModelParams, forward_features, rank
from .proposals import TemporalSpan, generate_spans, proposal_features

DEFAULT_KS = (1, 5)
DEFAULT_THS = (0.1, 0.3, 0.5)

Span = tuple[float, float]


class MissingPredictionError(KeyError):
    pass


def _pair(span) -> Span:
    if isinstance(span, TemporalSpan):
        return span.start, span.end
    a, b = span
    return a, b


def temporal_iou(a, b) -> float:
    """Intersection over union of two half-open time spans."""
    a0, a1 = _pair(a)
    b0, b1 = _pair(b)
    if not a0 < a1 or not b0 < b1:
        raise ValueError(f"degenerate span in IoU: {(a0, a1)}, {(b0, b1)}")
    inter = max(0.0, min(a1, b1) - max(a0, b0))
    union = max(a1, b1) - min(a0, b0) if inter > 0 else (a1 - a0) + (b1 - b0)
    return inter / union


def _best_ious(predictions: Mapping[str, Sequence], gts: Mapping[str, Span], k: int) -> dict[str, float]:
    out = {}
    for qid, gt in gts.items():
        ranked = predictions.get(qid)
        if not ranked:
            raise MissingPredictionError(f"no prediction for query {qid!r}")
        out[qid] = max(temporal_iou(p, gt) for p in ranked[:k])
    return out


def recall_at_k(predictions: Mapping[str, Sequence], gts: Mapping[str, Span], k: int, th: float) -> float:
    """Percentage of queries with some top-``k`` span at IoU >= ``th``."""
    best = _best_ious(predictions, gts, k)
    hits = sum(1 for v in best.values() if v >= th)
    return 100.0 * hits / len(best)


def mean_iou(predictions: Mapping[str, Sequence], gts: Mapping[str, Span]) -> float:
    best = _best_ious(predictions, gts, 1)
    return float(np.mean(list(best.values())))


@dataclass
class EvalReport:
    recalls: dict[tuple[int, float], float]
    miou: float
    per_query_iou: list[float] = field(default_factory=list)
    query_ids: list[str] = field(default_factory=list)

    @property
    def ks(self) -> list[int]:
        return sorted({k for k, _ in self.recalls})

    @property
    def ths(self) -> list[float]:
        return sorted({t for _, t in self.recalls})

    def recall(self, k: int, th: float) -> float:
        return self.recalls[(k, th)]

    def summary(self) -> dict:
        out = {f"R@{k},IoU={th:g}": v for (k, th), v in sorted(self.recalls.items())}
        out["mIoU"] = self.miou
        return out

    def to_json(self) -> dict:
        return {
            "recall": {f"R@{k},IoU={th:g}": v for (k, th), v in sorted(self.recalls.items())},
            "mIoU": self.miou,
            "ks": self.ks,
            "ths": self.ths,
            "num_queries": len(self.per_query_iou),
            "per_query": [
                {"query_id": q, "top1_iou": v} for q, v in zip(self.query_ids, self.per_query_iou)
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True)

    def table(self) -> str:
        """Rows per k; columns per IoU threshold, then mIoU (percent) on the R@1 row."""
        ths = self.ths
        header = f"{'':6}" + "".join(f"{'IoU=' + format(t, 'g'):>10}" for t in ths) + f"{'mIoU':>10}"
        lines = [header]
        for k in self.ks:
            row = f"{'R@' + str(k):6}" + "".join(f"{self.recalls[(k, t)]:>10.2f}" for t in ths)
            row += f"{100 * self.miou:>10.2f}" if k == self.ks[0] else f"{'':>10}"
            lines.append(row)
        return "\n".join(lines)


def report_from_predictions(
    predictions: Mapping[str, Sequence],
    gts: Mapping[str, Span],
    ks: Sequence[int] = DEFAULT_KS,
    ths: Sequence[float] = DEFAULT_THS,
) -> EvalReport:
    recalls = {(k, th): recall_at_k(predictions, gts, k, th) for k in ks for th in ths}
    top1 = _best_ious(predictions, gts, 1)
    qids = list(gts)
    return EvalReport(recalls, float(np.mean([top1[q] for q in qids])), [top1[q] for q in qids], qids)


def _gt_in_segments(q, k: int, duration: float) -> Span:
    if q.gt_segments is not None:
        return q.gt_segments
    # snap to base-segment boundaries when the seconds sit on them
    a, b = (x * k / duration for x in q.gt)
    ra, rb = round(a), round(b)
    if abs(a - ra) < 1e-9 and abs(b - rb) < 1e-9 and ra < rb:
        return ra, rb
    return a, b


def predict_rankings(
    params: ModelParams, dataset: Dataset, k: int, mode: str = "full"
) -> dict[str, list[TemporalSpan]]:
    spans = generate_spans(k)
    out = {}
    for v in dataset.videos:
        feats = proposal_features(v.features, spans, k)
        for q in v.queries:
            r = forward_features(feats, q.feature, params, mode)
            out[q.query_id] = [spans[i] for i in rank(r)]
    return out


def evaluate(
    params: ModelParams,
    dataset: Dataset,
    ks: Sequence[int] = DEFAULT_KS,
    ths: Sequence[float] = DEFAULT_THS,
    k: int | None = None,
    mode: str = "full",
) -> EvalReport:
    """Rank proposals for every query and score them against ground truth.

    IoUs are computed in base-segment units, so ``th=1.0`` means an exact
    segment match.
    """
    k = k or dataset.k
    if k is None:
        raise ValueError("segment count k is not set on the dataset; pass k explicitly")
    rankings = predict_rankings(params, dataset, k, mode)
    gts = {q.query_id: _gt_in_segments(q, k, v.duration) for v, q in dataset.queries()}
    return report_from_predictions(rankings, gts, ks, ths)


def chance_recall(k_segments: int, th: float, top: int = 1) -> float:
    """R@top,IoU=th (percent) of a uniformly random ranking, by enumeration.

    Ground truth is uniform over the proposal set; for ``top > 1`` the hit
    probability is computed over all ``top``-subsets of proposals.
    """
    from math import comb

    spans = generate_spans(k_segments)
    n = len(spans)
    total = 0.0
    for gt in spans:
        good = sum(1 for p in spans if temporal_iou(p, gt) >= th)
        if top == 1:
            total += good / n
        else:
            total += 1.0 - comb(n - good, top) / comb(n, top)
    return 100.0 * total / n


def chance_miou(k_segments: int) -> float:
    spans = generate_spans(k_segments)
    return float(np.mean([[temporal_iou(p, g) for p in spans] for g in spans]))
