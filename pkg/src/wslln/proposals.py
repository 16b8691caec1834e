"""Multi-scale temporal proposals over uniform base segments."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import RangeError


@dataclass(frozen=True, order=True)
class TemporalSpan:
    """Half-open span ``[start, end)`` in base-segment units."""

    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"invalid span ({self.start}, {self.end})")

    def seconds(self, k: int, duration: float) -> tuple[float, float]:
        return self.start * duration / k, self.end * duration / k

    def frames(self, k: int, T: int) -> tuple[int, int]:
        return frame_range(self, k, T)


def generate_spans(k: int) -> list[TemporalSpan]:
    """All contiguous spans over ``k`` segments, by length then start.

    >>> [(s.start, s.end) for s in generate_spans(2)]
    [(0, 1), (1, 2), (0, 2)]
    """
    if k < 1:
        raise ValueError(f"need at least one base segment, got k={k}")
    return [
        TemporalSpan(start, start + length)
        for length in range(1, k + 1)
        for start in range(0, k - length + 1)
    ]


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def frame_range(span: TemporalSpan, k: int, T: int) -> tuple[int, int]:
    if span.end > k:
        raise ValueError(f"span {span} exceeds k={k}")
    t1 = _round_half_up(span.start * T / k)
    t2 = max(_round_half_up(span.end * T / k), t1 + 1)
    if t2 > T:
        raise RangeError(f"span {span} maps to an empty frame range for T={T}, k={k}")
    return t1, t2


def proposal_feature(fv: np.ndarray, span: TemporalSpan, k: int) -> np.ndarray:
    """``[span mean | video mean | start/k | end/k]``, length ``2*Dv + 2``."""
    fv = np.asarray(fv, dtype=np.float64)
    T = fv.shape[0]
    t1, t2 = frame_range(span, k, T)
    return np.concatenate(
        [fv[t1:t2].mean(axis=0), fv.mean(axis=0), [span.start / k, span.end / k]]
    )


def proposal_features(fv: np.ndarray, spans: list[TemporalSpan], k: int) -> np.ndarray:
    """Stacked :func:`proposal_feature` rows for ``spans``."""
    return np.stack([proposal_feature(fv, s, k) for s in spans])
