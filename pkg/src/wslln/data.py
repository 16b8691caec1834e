"""Feature files, dataset manifests and the planted-event synthetic corpus.

Feature file (``.wslf``)::

    offset 0   4 bytes  magic b"WSLF"
    offset 4   u32      version (1)
    offset 8   u32      T  (rows)
    offset 12  u32      Dv (cols)
    offset 16  T*Dv little-endian float32, row-major

Manifest (JSON, paths relative to the manifest file)::

    {"split": "train", "k": 5,
     "videos": [{"video_id": "v0000", "features": "features/v0000.wslf",
                 "T": 50, "Dv": 32, "duration": 50.0,
                 "queries": [{"query_id": "q0000", "feature": [...],
                              "gt": [10.0, 30.0], "gt_segments": [1, 3]}]}]}

A query carries either an inline ``feature`` list or a ``feature_path`` to a
WSLF file with T=1. ``gt`` is in seconds; ``gt_segments`` is optional.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .proposals import TemporalSpan, frame_range, generate_spans

MAGIC = b"WSLF"
VERSION = 1
HEADER = struct.Struct("<4sIII")
EVAL_SPLITS = ("test", "val", "eval")


class FeatureFileError(ValueError):
    pass


class ManifestError(ValueError):
    pass


# --------------------------------------------------------------------------
# WSLF feature files


def save_features(path: str | Path, fv: np.ndarray) -> None:
    fv = np.asarray(fv)
    if fv.ndim == 1:
        fv = fv[None, :]
    T, Dv = fv.shape
    Path(path).write_bytes(HEADER.pack(MAGIC, VERSION, T, Dv) + fv.astype("<f4").tobytes())


def read_header(path: str | Path) -> tuple[int, int]:
    with open(path, "rb") as fh:
        head = fh.read(HEADER.size)
    return _parse_header(head, path)


def _parse_header(head: bytes, path) -> tuple[int, int]:
    if len(head) < HEADER.size:
        raise FeatureFileError(f"{path}: truncated header ({len(head)} bytes)")
    magic, version, T, Dv = HEADER.unpack(head[: HEADER.size])
    if magic != MAGIC:
        raise FeatureFileError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FeatureFileError(f"{path}: unsupported version {version}")
    return T, Dv


def load_features(path: str | Path) -> np.ndarray:
    """Read a WSLF file as a float64 ``T x Dv`` matrix."""
    buf = Path(path).read_bytes()
    T, Dv = _parse_header(buf, path)
    expected = HEADER.size + 4 * T * Dv
    if len(buf) != expected:
        raise FeatureFileError(
            f"{path}: truncated or oversized payload ({len(buf)} bytes, expected {expected})"
        )
    return np.frombuffer(buf, dtype="<f4", offset=HEADER.size).reshape(T, Dv).astype(np.float64)


# --------------------------------------------------------------------------
# manifests


@dataclass
class QueryRecord:
    query_id: str
    feature: list[float] | None = None
    feature_path: str | None = None
    gt: tuple[float, float] | None = None
    gt_segments: tuple[int, int] | None = None


@dataclass
class VideoRecord:
    video_id: str
    features: str
    T: int
    Dv: int
    duration: float
    queries: list[QueryRecord] = field(default_factory=list)


@dataclass
class Manifest:
    split: str
    videos: list[VideoRecord]
    k: int | None = None
    root: Path = Path(".")

    @property
    def is_eval(self) -> bool:
        return self.split in EVAL_SPLITS

    def pairs(self) -> list[tuple[str, str]]:
        return [(v.video_id, q.query_id) for v in self.videos for q in v.queries]


def _query_to_json(q: QueryRecord) -> dict:
    out = {"query_id": q.query_id}
    if q.feature is not None:
        out["feature"] = list(q.feature)
    if q.feature_path is not None:
        out["feature_path"] = q.feature_path
    if q.gt is not None:
        out["gt"] = list(q.gt)
    if q.gt_segments is not None:
        out["gt_segments"] = list(q.gt_segments)
    return out


def manifest_to_json(m: Manifest) -> dict:
    out: dict = {"split": m.split}
    if m.k is not None:
        out["k"] = m.k
    out["videos"] = [
        {
            "video_id": v.video_id,
            "features": v.features,
            "T": v.T,
            "Dv": v.Dv,
            "duration": v.duration,
            "queries": [_query_to_json(q) for q in v.queries],
        }
        for v in m.videos
    ]
    return out


def save_manifest(path: str | Path, m: Manifest) -> None:
    Path(path).write_text(json.dumps(manifest_to_json(m), indent=1) + "\n")


def load_manifest(path: str | Path, check_files: bool = True) -> Manifest:
    """Parse and validate a manifest.

    Raises :class:`ManifestError` on malformed JSON (with line number), duplicate
    ids, missing ground truth in an eval split, or header/dimension mismatches.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: parse error at line {exc.lineno}: {exc.msg}") from exc
    try:
        videos = [
            VideoRecord(
                video_id=str(v["video_id"]),
                features=v["features"],
                T=int(v["T"]),
                Dv=int(v["Dv"]),
                duration=float(v.get("duration", v["T"])),
                queries=[
                    QueryRecord(
                        query_id=str(q["query_id"]),
                        feature=[float(x) for x in q["feature"]] if "feature" in q else None,
                        feature_path=q.get("feature_path"),
                        gt=tuple(float(x) for x in q["gt"]) if q.get("gt") is not None else None,
                        gt_segments=(
                            tuple(int(x) for x in q["gt_segments"])
                            if q.get("gt_segments") is not None
                            else None
                        ),
                    )
                    for q in v["queries"]
                ],
            )
            for v in raw["videos"]
        ]
        m = Manifest(split=raw.get("split", "train"), videos=videos, k=raw.get("k"), root=path.parent)
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"{path}: malformed manifest: {exc!r}") from exc
    _validate(m, path, check_files)
    return m


def _validate(m: Manifest, path: Path, check_files: bool) -> None:
    vids = [v.video_id for v in m.videos]
    if len(set(vids)) != len(vids):
        raise ManifestError(f"{path}: duplicate video ids")
    qids = [q.query_id for v in m.videos for q in v.queries]
    if len(set(qids)) != len(qids):
        raise ManifestError(f"{path}: duplicate query ids")
    Dq = None
    for v in m.videos:
        if check_files:
            fpath = m.root / v.features
            if not fpath.exists():
                raise ManifestError(f"{path}: missing feature file {fpath}")
            T, Dv = read_header(fpath)
            if (T, Dv) != (v.T, v.Dv):
                raise ManifestError(
                    f"{fpath}: header dims T={T}, Dv={Dv} disagree with manifest T={v.T}, Dv={v.Dv}"
                )
        for q in v.queries:
            if q.feature is None and q.feature_path is None:
                raise ManifestError(f"{path}: query {q.query_id} has no feature")
            if q.feature is not None:
                dim = len(q.feature)
            elif check_files:
                T, dim = read_header(m.root / q.feature_path)
                if T != 1:
                    raise ManifestError(f"{q.feature_path}: query feature file must have T=1")
            else:
                dim = None
            if dim is not None:
                if Dq is not None and dim != Dq:
                    raise ManifestError(f"{path}: query {q.query_id} has dim {dim}, expected {Dq}")
                Dq = dim
            if q.gt is not None and not q.gt[0] < q.gt[1]:
                raise ManifestError(f"{path}: query {q.query_id} has degenerate gt {q.gt}")
            if m.is_eval and q.gt is None:
                raise ManifestError(f"{path}: eval split query {q.query_id} has no gt span")


# --------------------------------------------------------------------------
# in-memory dataset


@dataclass
class Query:
    query_id: str
    feature: np.ndarray
    gt: tuple[float, float] | None = None
    gt_segments: tuple[int, int] | None = None


@dataclass
class Video:
    video_id: str
    features: np.ndarray
    duration: float
    queries: list[Query]


@dataclass
class Dataset:
    split: str
    videos: list[Video]
    k: int | None = None

    @property
    def Dv(self) -> int:
        return self.videos[0].features.shape[1]

    @property
    def Dq(self) -> int:
        return self.videos[0].queries[0].feature.shape[0]

    def queries(self):
        for v in self.videos:
            for q in v.queries:
                yield v, q


def load_dataset(path: str | Path) -> Dataset:
    m = load_manifest(path)
    videos = []
    for v in m.videos:
        queries = []
        for q in v.queries:
            if q.feature is not None:
                feat = np.array(q.feature, dtype=np.float64)
            else:
                feat = load_features(m.root / q.feature_path)[0]
            queries.append(Query(q.query_id, feat, q.gt, q.gt_segments))
        videos.append(Video(v.video_id, load_features(m.root / v.features), v.duration, queries))
    return Dataset(m.split, videos, m.k)


# --------------------------------------------------------------------------
# planted-event synthetic corpus


@dataclass
class SynthConfig:
    num_train: int = 500
    num_test: int = 100
    T: int = 50
    Dv: int = 32
    Dq: int = 32
    k: int = 5
    beta: float = 0.7
    sigma: float = 1.0
    distractors: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.T < self.k:
            raise ValueError(f"T={self.T} must be at least k={self.k}")


def cross_modal_map(config: SynthConfig) -> np.ndarray:
    """The shared ``Dv x Dq`` query-to-visual map of a corpus."""
    rng = np.random.default_rng(config.seed)
    return rng.normal(0.0, 1.0 / np.sqrt(config.Dq), size=(config.Dv, config.Dq))


def _unit_queries(rng, count: int, Dq: int) -> np.ndarray:
    q = rng.normal(size=(count, Dq))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def _make_split(rng, M, config: SynthConfig, split: str, count: int, id_offset: int) -> Dataset:
    spans = generate_spans(config.k)
    queries = _unit_queries(rng, count, config.Dq)
    videos = []
    for i in range(count):
        span = spans[rng.integers(len(spans))]
        noise = rng.normal(0.0, config.sigma / np.sqrt(config.Dv), size=(config.T, config.Dv))
        fv = noise.copy()
        t1, t2 = frame_range(span, config.k, config.T)
        fv[t1:t2] = config.beta * (M @ queries[i]) + (1 - config.beta) * noise[t1:t2]
        outside = [s for s in range(config.k) if not span.start <= s < span.end]
        n_distract = min(config.distractors, len(outside))
        if n_distract and count > 1:
            segs = rng.choice(outside, size=n_distract, replace=False)
            for seg in sorted(int(s) for s in segs):
                other = int(rng.integers(count - 1))
                other += other >= i
                a, b = frame_range(TemporalSpan(seg, seg + 1), config.k, config.T)
                fv[a:b] = config.beta * (M @ queries[other]) + (1 - config.beta) * noise[a:b]
        duration = float(config.T)
        vid = f"{split}_v{id_offset + i:05d}"
        q = Query(
            f"{split}_q{id_offset + i:05d}",
            queries[i],
            span.seconds(config.k, duration),
            (span.start, span.end),
        )
        videos.append(Video(vid, fv.astype(np.float32).astype(np.float64), duration, [q]))
    return Dataset(split, videos, config.k)


def generate_corpus(config: SynthConfig) -> tuple[Dataset, Dataset]:
    """Train and test splits sharing one cross-modal map; deterministic per seed.

    Each video plants its query's signal ``beta * M q + (1 - beta) * noise`` over
    one span drawn uniformly from ``generate_spans(k)``. Up to ``distractors``
    outside segments carry another video's query signal; the rest is noise.
    """
    rng = np.random.default_rng(config.seed)
    M = rng.normal(0.0, 1.0 / np.sqrt(config.Dq), size=(config.Dv, config.Dq))
    train = _make_split(rng, M, config, "train", config.num_train, 0)
    test = _make_split(rng, M, config, "test", config.num_test, 0)
    return train, test


def write_dataset(ds: Dataset, out_dir: str | Path, name: str) -> Path:
    out_dir = Path(out_dir)
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for v in ds.videos:
        rel = f"features/{v.video_id}.wslf"
        save_features(out_dir / rel, v.features)
        records.append(
            VideoRecord(
                v.video_id,
                rel,
                v.features.shape[0],
                v.features.shape[1],
                v.duration,
                [
                    QueryRecord(q.query_id, [float(x) for x in q.feature], None, q.gt, q.gt_segments)
                    for q in v.queries
                ],
            )
        )
    path = out_dir / f"{name}.json"
    save_manifest(path, Manifest(ds.split, records, ds.k))
    return path


def gen_synthetic(config: SynthConfig, out_dir: str | Path) -> tuple[Path, Path]:
    """Write the synthetic corpus; returns (train manifest, test manifest)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train, test = generate_corpus(config)
    (out_dir / "synth_config.json").write_text(json.dumps(asdict(config), indent=1) + "\n")
    return write_dataset(train, out_dir, "train"), write_dataset(test, out_dir, "test")
