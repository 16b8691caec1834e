"""Command-line entry point: ``wslln {synth,train,ablate,eval,predict}``.

Settings come from three layers, highest first: command-line flags, a flat
JSON ``--config`` file whose keys are :class:`RunConfig` field names, and the
defaults below.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import FeatureFileError, ManifestError, SynthConfig, gen_synthetic, load_dataset, load_features
from .metrics import DEFAULT_KS, DEFAULT_THS, evaluate
from .model import CheckpointError, forward, load_checkpoint, rank, save_checkpoint
from .proposals import generate_spans
from .training import ConfigurationError, TrainConfig, TrainingError, train

logger = logging.getLogger("wslln")

EXPECTED_ERRORS = (
    OSError,
    ManifestError,
    FeatureFileError,
    CheckpointError,
    ConfigurationError,
    TrainingError,
    ValueError,
)


@dataclass
class RunConfig:
    # training
    seed: int = 0
    lam: float = 0.3
    lr: float = 0.01
    momentum: float = 0.9
    epochs: int = 50
    neg_ratio: int = 1
    d: int = 1000
    h: int = 256
    k: int = 5
    mode: str = "full"
    # synthetic corpus
    num_train: int = 500
    num_test: int = 100
    T: int = 50
    Dv: int = 32
    Dq: int = 32
    beta: float = 0.7
    sigma: float = 1.0
    distractors: int = 1
    # evaluation grid
    ks: list[int] = field(default_factory=lambda: list(DEFAULT_KS))
    ths: list[float] = field(default_factory=lambda: list(DEFAULT_THS))
    # paths
    out: str | None = None
    manifest: str | None = None
    eval_manifest: str | None = None
    checkpoint: str | None = None
    features: str | None = None
    query: str | None = None

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def synth_config(self) -> SynthConfig:
        names = {f.name for f in fields(SynthConfig)}
        return SynthConfig(**{k: v for k, v in asdict(self).items() if k in names})


ALIASES = {"lambda": "lam"}


def read_config_file(path: str | Path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: parse error at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: config must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    out = {}
    for key, value in raw.items():
        key = ALIASES.get(key, key)
        if key not in known:
            raise ConfigurationError(f"{path}: unknown config key {key!r}")
        out[key] = value
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, the config file and explicit flags (flags win)."""
    values = asdict(RunConfig())
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for f in fields(RunConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = flag
    return RunConfig(**values)


# --------------------------------------------------------------------------
# commands


def _require(config: RunConfig, name: str) -> str:
    value = getattr(config, name)
    if value is None:
        raise ConfigurationError(f"missing required setting {name!r} (flag --{name.replace('_', '-')})")
    return value


def cmd_synth(config: RunConfig) -> int:
    out = Path(_require(config, "out"))
    synth = config.synth_config()
    train_path, test_path = gen_synthetic(synth, out)
    spans = len(generate_spans(synth.k))
    print(
        f"wrote {synth.num_train} train + {synth.num_test} test videos to {out} "
        f"(T={synth.T}, Dv={synth.Dv}, Dq={synth.Dq}, k={synth.k}, {spans} proposals)"
    )
    print(f"train manifest: {train_path}")
    print(f"test manifest:  {test_path}")
    return 0


def cmd_train(config: RunConfig) -> int:
    out = Path(_require(config, "out"))
    dataset = load_dataset(_require(config, "manifest"))
    if dataset.k is not None and dataset.k != config.k:
        logger.warning("manifest k=%d differs from k=%d; using %d", dataset.k, config.k, config.k)
    eval_ds = load_dataset(config.eval_manifest) if config.eval_manifest else None
    tc = config.train_config()
    out.mkdir(parents=True, exist_ok=True)
    params, log = train(dataset, tc, eval_dataset=eval_ds, log_path=out / "train_log.jsonl")
    meta = {"config": asdict(tc), "k": tc.k, "mode": tc.mode}
    save_checkpoint(out / "model.ckpt", params, meta)
    last = log[-1] if log else {}
    print(f"trained {tc.epochs} epochs ({tc.mode}, lambda={tc.lam}); final mean loss {last.get('mean_loss', float('nan')):.4f}")
    print(f"checkpoint: {out / 'model.ckpt'}")
    return 0


def cmd_eval(config: RunConfig) -> int:
    params, meta = load_checkpoint(_require(config, "checkpoint"))
    dataset = load_dataset(_require(config, "manifest"))
    if (dataset.Dv, dataset.Dq) != (params.Dv, params.Dq):
        raise ConfigurationError(
            f"checkpoint expects Dv={params.Dv}, Dq={params.Dq}; manifest has Dv={dataset.Dv}, Dq={dataset.Dq}"
        )
    k = int(meta.get("k", config.k))
    mode = meta.get("mode", config.mode)
    report = evaluate(params, dataset, ks=config.ks, ths=config.ths, k=k, mode=mode)
    print(report.table())
    if config.out:
        out = Path(config.out)
        if out.suffix != ".json":
            out.mkdir(parents=True, exist_ok=True)
            out = out / "report.json"
        out.write_text(report.dumps() + "\n")
        print(f"report: {out}")
    return 0


def _load_query(path: str) -> np.ndarray:
    if path.endswith(".json"):
        return np.array(json.loads(Path(path).read_text()), dtype=np.float64)
    feat = load_features(path)
    if feat.shape[0] != 1:
        raise ConfigurationError(f"{path}: query feature file must hold one row, got {feat.shape[0]}")
    return feat[0]


def cmd_predict(config: RunConfig) -> int:
    params, meta = load_checkpoint(_require(config, "checkpoint"))
    fv = load_features(_require(config, "features"))
    query = _load_query(_require(config, "query"))
    k = int(meta.get("k", config.k))
    spans = generate_spans(k)
    result = forward(fv, query, spans, params, k, meta.get("mode", config.mode))
    duration = float(fv.shape[0])
    scores = result.scores[:, 1]
    rows = []
    for j in rank(result):
        start, end = spans[j].seconds(k, duration)
        rows.append({"start": start, "end": end, "score": float(scores[j])})
        print(f"{start:8.2f} {end:8.2f} {scores[j]:.6f}")
    if config.out:
        Path(config.out).write_text(json.dumps(rows, indent=1) + "\n")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "ablate": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wslln", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory (or .json file for eval/predict)")
    common.add_argument("--k", type=int, help="segments per video")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--lambda", dest="lam", type=float, help="refinement weight (0 disables)")
    model.add_argument("--mode", choices=["full", "align-only", "detect-only"])
    model.add_argument("--lr", type=float)
    model.add_argument("--momentum", type=float)
    model.add_argument("--epochs", type=int)
    model.add_argument("--neg-ratio", dest="neg_ratio", type=int)
    model.add_argument("--d", type=int, help="projection width")
    model.add_argument("--h", type=int, help="branch hidden units")

    p = sub.add_parser("synth", parents=[common], help="write a planted-event corpus")
    p.add_argument("--num-train", dest="num_train", type=int)
    p.add_argument("--num-test", dest="num_test", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--Dv", type=int)
    p.add_argument("--Dq", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--distractors", type=int)

    for name, text in (("train", "train a model"), ("ablate", "train one branch (alias of train)")):
        p = sub.add_parser(name, parents=[common, model], help=text)
        p.add_argument("--manifest", help="training manifest")
        p.add_argument("--eval-manifest", dest="eval_manifest", help="optional per-epoch eval manifest")

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on a manifest")
    p.add_argument("--checkpoint")
    p.add_argument("--manifest")
    p.add_argument("--ks", type=int, nargs="+")
    p.add_argument("--ths", type=float, nargs="+")

    p = sub.add_parser("predict", parents=[common], help="rank proposals for one video and query")
    p.add_argument("--checkpoint")
    p.add_argument("--features", help="WSLF frame features")
    p.add_argument("--query", help="query vector: WSLF file with one row, or JSON list")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        config = resolve_config(args)
        if args.command == "ablate" and args.mode is None and config.mode == "full":
            raise ConfigurationError("ablate needs --mode align-only or --mode detect-only")
        return COMMANDS[args.command](config)
    except EXPECTED_ERRORS as exc:
        print(f"wslln {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
