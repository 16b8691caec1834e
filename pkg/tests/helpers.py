from dataclasses import dataclass

import numpy as np

from wslln.model import ModelParams, init_params
from wslln.proposals import TemporalSpan, generate_spans


@dataclass
class Case:
    fv: np.ndarray
    query: np.ndarray
    spans: list[TemporalSpan]
    params: ModelParams
    k: int


def random_params(rng, Dv, Dq, d, h, scale=1.0) -> ModelParams:
    """Glorot weights with random (nonzero) biases, scaled by ``scale``."""
    p = init_params(int(rng.integers(2**31)), Dv, Dq, d, h)
    for name, arr in p.arrays.items():
        if arr.ndim == 1:
            p.arrays[name] = rng.normal(0, 0.1, size=arr.shape)
        else:
            p.arrays[name] = arr * scale
    return p


def random_case(rng, n_segments=3, Dv=8, Dq=8, d=16, h=8, T=12, scale=1.0) -> Case:
    return Case(
        fv=rng.normal(size=(T, Dv)),
        query=rng.normal(size=Dq),
        spans=generate_spans(n_segments),
        params=random_params(rng, Dv, Dq, d, h, scale),
        k=n_segments,
    )


def is_smooth(case: Case, margin=1e-3, gap=1e-4) -> bool:
    """False near a ReLU kink or an argmax tie, where finite differences lie."""
    from wslln.model import forward

    r = forward(case.fv, case.query, case.spans, case.params, case.k)
    fm = r.fm.value
    for prefix in ("align", "detect"):
        W, b = case.params.arrays[f"{prefix}_W1"], case.params.arrays[f"{prefix}_b1"]
        if (np.abs(fm @ W.T + b) < margin).any():
            return False
    top = np.sort(r.s.value[:, 1])[::-1]
    return len(top) < 2 or top[0] - top[1] > gap


def model_grad_error(case: Case, label: int, lam: float, mode: str = "full", h=1e-5) -> float:
    """Max relative error of tape gradients against central differences."""
    from wslln.proposals import proposal_features
    from wslln.training import TrainConfig, loss_and_grads

    feats = proposal_features(case.fv, case.spans, case.k)
    config = TrainConfig(lam=lam, mode=mode, d=case.params.d, h=case.params.h, k=case.k)
    _, _, _, grads = loss_and_grads(case.params, feats, case.query, label, config)
    worst = 0.0
    for name, arr in case.params.arrays.items():
        flat = arr.reshape(-1)
        g = grads[name].reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = loss_and_grads(case.params, feats, case.query, label, config)[0]
            flat[i] = old - h
            fm = loss_and_grads(case.params, feats, case.query, label, config)[0]
            flat[i] = old
            numeric = (fp - fm) / (2 * h)
            worst = max(worst, abs(g[i] - numeric) / max(1.0, abs(g[i])))
    return worst


def smooth_cases(seed: int, count: int, **kw) -> list[Case]:
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        case = random_case(rng, **kw)
        if is_smooth(case):
            out.append(case)
    return out


def _softmax(x, axis):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def batched_total_loss(P: dict, feats: np.ndarray, query: np.ndarray, label: int, lam: float):
    """Plain numpy total loss for a batch of parameter sets (leading axis B)."""
    fp = np.einsum("bdi,ni->bnd", P["visual_W"], feats) + P["visual_b"][:, None]
    fq = np.einsum("bdi,i->bd", P["text_W"], query) + P["text_b"]
    fq = np.broadcast_to(fq[:, None], fp.shape)
    fc = np.einsum("bdi,bni->bnd", P["fuse_W"], np.concatenate([fp, fq], -1)) + P["fuse_b"][:, None]
    fm = np.concatenate([fp + fq, fp * fq, fc], -1)

    def head(prefix):
        z = np.einsum("bhi,bni->bnh", P[f"{prefix}_W1"], fm) + P[f"{prefix}_b1"][:, None]
        z = np.maximum(z, 0.0)
        return np.einsum("bch,bnh->bnc", P[f"{prefix}_W2"], z) + P[f"{prefix}_b2"][:, None]

    s = _softmax(head("align"), 2) * _softmax(head("detect"), 1)
    vq = s.sum(axis=1)
    loss = -np.log((vq[:, label] + 1e-8) / (vq.sum(-1) + 2e-8))
    if label == 1 and lam > 0:
        col = s[:, :, 1]
        y = col.argmax(axis=1)
        picked = col[np.arange(len(col)), y]
        loss = loss + lam * -np.log((picked + 1e-12) / (col.sum(1) + col.shape[1] * 1e-12))
    return loss


def batched_grad_error(case: Case, label: int, lam: float, h=1e-5) -> float:
    """Tape gradients against central differences of :func:`batched_total_loss`."""
    from wslln.proposals import proposal_features
    from wslln.training import TrainConfig, loss_and_grads

    feats = proposal_features(case.fv, case.spans, case.k)
    config = TrainConfig(lam=lam, d=case.params.d, h=case.params.h, k=case.k)
    _, _, _, grads = loss_and_grads(case.params, feats, case.query, label, config)
    worst = 0.0
    arrays = case.params.arrays
    for name, arr in arrays.items():
        n = arr.size
        eye = np.eye(n).reshape((n,) + arr.shape) * h
        batch = {k: np.broadcast_to(v, (2 * n,) + v.shape).copy() for k, v in arrays.items()}
        batch[name][:n] += eye
        batch[name][n:] -= eye
        out = batched_total_loss(batch, feats, case.query, label, lam)
        numeric = (out[:n] - out[n:]) / (2 * h)
        g = grads[name].reshape(-1)
        worst = max(worst, float(np.max(np.abs(g - numeric) / np.maximum(1.0, np.abs(g)))))
    return worst
