"""Two-branch proposal scoring network.

Proposal features and the query vector are projected to a common width ``d``,
fused into ``[fp + fq | fp * fq | FC(fp || fq)]`` and scored by two heads:

* the alignment head applies a softmax over ``{no-match, match}`` per proposal;
* the detection head applies a softmax over proposals, per column.

The merged score is their elementwise product and the video-level score is its
column sum. Column 1 is always the "match" class.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .proposals import TemporalSpan, proposal_features

MATCH = 1
MODES = ("full", "align-only", "detect-only")


def param_layout(Dv: int, Dq: int, d: int, h: int) -> list[tuple[str, tuple[int, ...]]]:
    """Parameter names and shapes in checkpoint order."""
    p = 2 * Dv + 2
    return [
        ("visual_W", (d, p)),
        ("visual_b", (d,)),
        ("text_W", (d, Dq)),
        ("text_b", (d,)),
        ("fuse_W", (d, 2 * d)),
        ("fuse_b", (d,)),
        ("align_W1", (h, 3 * d)),
        ("align_b1", (h,)),
        ("align_W2", (2, h)),
        ("align_b2", (2,)),
        ("detect_W1", (h, 3 * d)),
        ("detect_b1", (h,)),
        ("detect_W2", (2, h)),
        ("detect_b2", (2,)),
    ]


@dataclass
class ModelParams:
    arrays: dict[str, np.ndarray]

    @property
    def d(self) -> int:
        return self.arrays["visual_W"].shape[0]

    @property
    def h(self) -> int:
        return self.arrays["align_W1"].shape[0]

    @property
    def Dv(self) -> int:
        return (self.arrays["visual_W"].shape[1] - 2) // 2

    @property
    def Dq(self) -> int:
        return self.arrays["text_W"].shape[1]

    def layout(self):
        return param_layout(self.Dv, self.Dq, self.d, self.h)

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.arrays.items()})

    def bind(self, tape: ad.Tape) -> dict[str, ad.Var]:
        return {name: tape.leaf(self.arrays[name], name=name) for name, _ in self.layout()}

    def __eq__(self, other) -> bool:
        if not isinstance(other, ModelParams) or self.arrays.keys() != other.arrays.keys():
            return False
        return all(np.array_equal(v, other.arrays[k]) for k, v in self.arrays.items())


def init_params(seed: int, Dv: int, Dq: int, d: int = 1000, h: int = 256) -> ModelParams:
    """Glorot-uniform weights, zero biases, deterministic per seed."""
    if min(Dv, Dq, d, h) < 1:
        raise ValueError("all dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in param_layout(Dv, Dq, d, h):
        if len(shape) == 1:
            arrays[name] = np.zeros(shape)
        else:
            fan_out, fan_in = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            arrays[name] = rng.uniform(-limit, limit, size=shape)
    return ModelParams(arrays)


@dataclass
class ForwardResult:
    """Tape values of one forward pass.

    ``sa`` is ``None`` in detect-only mode and ``sd`` in align-only mode.
    Note that ``vq[0] + vq[1]`` is generally not 1.
    """

    tape: ad.Tape
    fm: ad.Var
    sa: ad.Var | None
    sd: ad.Var | None
    s: ad.Var
    vq: ad.Var
    mode: str = "full"
    params: dict[str, ad.Var] | None = None

    @property
    def scores(self) -> np.ndarray:
        return self.s.value


def fuse(fp: ad.Var, fq: ad.Var, P: dict[str, ad.Var]) -> ad.Var:
    """``[fp + fq | fp * fq | FC(fp || fq)]``."""
    return ad.concat(
        [ad.add(fp, fq), ad.mul(fp, fq), ad.linear(P["fuse_W"], P["fuse_b"], ad.concat([fp, fq]))]
    )


def _head(fm: ad.Var, P: dict[str, ad.Var], prefix: str) -> ad.Var:
    hidden = ad.relu(ad.linear(P[f"{prefix}_W1"], P[f"{prefix}_b1"], fm))
    return ad.linear(P[f"{prefix}_W2"], P[f"{prefix}_b2"], hidden)


def align_scores(fm: ad.Var, P: dict[str, ad.Var]) -> ad.Var:
    return ad.softmax(_head(fm, P, "align"), axis=-1)


def detect_scores(fm: ad.Var, P: dict[str, ad.Var]) -> ad.Var:
    return ad.softmax(_head(fm, P, "detect"), axis=0)


def forward_features(
    feats: np.ndarray,
    query: np.ndarray,
    params: ModelParams,
    mode: str = "full",
    tape: ad.Tape | None = None,
) -> ForwardResult:
    """Forward pass from precomputed proposal features (n x (2Dv+2))."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    feats = np.asarray(feats, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != 2 * params.Dv + 2:
        raise ad.DimensionError(
            f"proposal features {feats.shape} do not match Dv={params.Dv}"
        )
    if query.shape != (params.Dq,):
        raise ad.DimensionError(f"query {query.shape} does not match Dq={params.Dq}")
    tape = tape or ad.Tape()
    P = params.bind(tape)
    n = feats.shape[0]
    fp = ad.linear(P["visual_W"], P["visual_b"], tape.leaf(feats, name="proposals"))
    fq = ad.linear(P["text_W"], P["text_b"], tape.leaf(query, name="query"))
    fm = fuse(fp, ad.repeat_rows(fq, n), P)
    sa = align_scores(fm, P) if mode != "detect-only" else None
    sd = detect_scores(fm, P) if mode != "align-only" else None
    if mode == "full":
        s = ad.mul(sa, sd)
    else:
        s = sa if sa is not None else sd
    # each column of s sums to at most 1; the clamp only absorbs rounding
    vq = ad.clamp(ad.reduce_sum(s), 0.0, 1.0)
    return ForwardResult(tape, fm, sa, sd, s, vq, mode, P)


def forward(
    fv: np.ndarray,
    query: np.ndarray,
    spans: Sequence[TemporalSpan],
    params: ModelParams,
    k: int,
    mode: str = "full",
) -> ForwardResult:
    return forward_features(proposal_features(fv, list(spans), k), query, params, mode)


def rank(result: ForwardResult | np.ndarray) -> np.ndarray:
    """Proposal indices by descending match score; ties keep lower index first."""
    s = result.scores if isinstance(result, ForwardResult) else np.asarray(result)
    match = s[:, MATCH] if s.ndim == 2 else s
    return np.argsort(-match, kind="stable")


# --------------------------------------------------------------------------
# checkpoint I/O
#
# Layout (all integers little-endian u32):
#   b"WSLC" | version=1 | meta_len | meta (UTF-8 JSON, sorted keys)
#   | count | count x (name_len | name | rows | cols)
#   | payload: each matrix in header order, row-major little-endian float64
# Vectors are stored with cols=1.

CKPT_MAGIC = b"WSLC"
CKPT_VERSION = 1


def save_checkpoint(path: str | Path, params: ModelParams, meta: dict | None = None) -> None:
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    layout = params.layout()
    out = bytearray(CKPT_MAGIC)
    out += struct.pack("<II", CKPT_VERSION, len(meta_bytes)) + meta_bytes
    out += struct.pack("<I", len(layout))
    for name, shape in layout:
        rows, cols = shape if len(shape) == 2 else (shape[0], 1)
        encoded = name.encode()
        out += struct.pack("<I", len(encoded)) + encoded + struct.pack("<II", rows, cols)
    for name, _ in layout:
        out += params.arrays[name].astype("<f8").tobytes()
    Path(path).write_bytes(bytes(out))


class CheckpointError(ValueError):
    pass


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict]:
    buf = Path(path).read_bytes()
    if buf[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}")
    try:
        version, meta_len = struct.unpack_from("<II", buf, 4)
        if version != CKPT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        pos = 12
        meta = json.loads(buf[pos : pos + meta_len].decode())
        pos += meta_len
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        header = []
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", buf, pos)
            name = buf[pos + 4 : pos + 4 + nlen].decode()
            rows, cols = struct.unpack_from("<II", buf, pos + 4 + nlen)
            pos += 12 + nlen
            header.append((name, rows, cols))
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated header") from exc
    arrays = {}
    for name, rows, cols in header:
        nbytes = 8 * rows * cols
        if pos + nbytes > len(buf):
            raise CheckpointError(f"{path}: truncated payload at {name}")
        arr = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=pos).astype(np.float64)
        is_bias = name.rsplit("_", 1)[-1].startswith("b")
        arrays[name] = arr if is_bias else arr.reshape(rows, cols)
        pos += nbytes
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    params = ModelParams(arrays)
    expected = params.layout()
    if [n for n, _ in expected] != [n for n, *_ in header] or any(
        arrays[n].shape != s for n, s in expected
    ):
        raise CheckpointError(f"{path}: parameter set does not match the model layout")
    return params, meta
