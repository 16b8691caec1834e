import numpy as np
import pytest

from wslln import autodiff as ad
from wslln.model import (
    CheckpointError,
    ModelParams,
    align_scores,
    detect_scores,
    forward,
    forward_features,
    fuse,
    init_params,
    load_checkpoint,
    param_layout,
    rank,
    save_checkpoint,
)
from wslln.proposals import generate_spans

from .helpers import random_case


def test_init_params_deterministic_and_bounded():
    a = init_params(3, 4, 5, d=6, h=7)
    b = init_params(3, 4, 5, d=6, h=7)
    assert a == b
    assert a != init_params(4, 4, 5, d=6, h=7)
    for name, arr in a.arrays.items():
        if arr.ndim == 1:
            assert not arr.any(), name
        else:
            fan_out, fan_in = arr.shape
            assert np.abs(arr).max() <= np.sqrt(6 / (fan_in + fan_out))


def test_init_params_layout():
    p = init_params(0, 8, 6, d=16, h=4)
    assert [n for n, _ in p.layout()] == list(p.arrays)
    assert (p.Dv, p.Dq, p.d, p.h) == (8, 6, 16, 4)


def _bound(arrays):
    t = ad.Tape()
    return t, {k: t.leaf(v, name=k) for k, v in arrays.items()}


def test_fuse_default_width():
    d = 1000
    t, P = _bound({"fuse_W": np.zeros((d, 2 * d)), "fuse_b": np.zeros(d)})
    out = fuse(t.leaf(np.ones(d)), t.leaf(np.ones(d)), P)
    assert out.shape == (3000,)


def test_fuse_zero_query():
    d = 3
    t, P = _bound({"fuse_W": np.zeros((d, 2 * d)), "fuse_b": np.zeros(d)})
    fp = np.array([1.0, -2.0, 0.5])
    out = fuse(t.leaf(fp), t.leaf(np.zeros(d)), P).value
    np.testing.assert_array_equal(out, np.concatenate([fp, np.zeros(2 * d)]))


def test_fuse_hand_example():
    t, P = _bound({"fuse_W": np.array([[1.0, 1.0]]), "fuse_b": np.zeros(1)})
    out = fuse(t.leaf([2.0]), t.leaf([3.0]), P).value
    np.testing.assert_array_equal(out, [5.0, 6.0, 5.0])


def _heads(d, h, rng=None, zero=False):
    arrays = {}
    for prefix in ("align", "detect"):
        for name, shape in [("W1", (h, 3 * d)), ("b1", (h,)), ("W2", (2, h)), ("b2", (2,))]:
            arrays[f"{prefix}_{name}"] = np.zeros(shape) if zero else rng.normal(size=shape)
    return arrays


def test_align_rows_sum_to_one_and_are_independent():
    rng = np.random.default_rng(0)
    t, P = _bound(_heads(2, 3, rng))
    fm = rng.normal(size=(4, 6))
    fm[2] = fm[0]
    sa = align_scores(t.leaf(fm), P).value
    np.testing.assert_allclose(sa.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(sa[0], sa[2])
    perm = [3, 1, 0, 2]
    np.testing.assert_array_equal(align_scores(t.leaf(fm[perm]), P).value, sa[perm])


def test_align_zero_weights_uniform():
    t, P = _bound(_heads(2, 3, zero=True))
    sa = align_scores(t.leaf(np.ones((5, 6))), P).value
    np.testing.assert_array_equal(sa, np.full((5, 2), 0.5))


def test_detect_columns_sum_to_one():
    rng = np.random.default_rng(1)
    t, P = _bound(_heads(2, 3, rng))
    sd = detect_scores(t.leaf(rng.normal(size=(5, 6))), P).value
    np.testing.assert_allclose(sd.sum(axis=0), 1.0, atol=1e-12)
    assert np.array_equal(detect_scores(t.leaf(rng.normal(size=(1, 6))), P).value, [[1.0, 1.0]])
    same = np.tile(rng.normal(size=6), (4, 1))
    np.testing.assert_allclose(detect_scores(t.leaf(same), P).value, 0.25, rtol=1e-14)


def test_forward_single_proposal():
    rng = np.random.default_rng(2)
    params = init_params(0, 3, 4, d=5, h=6)
    r = forward_features(rng.normal(size=(1, 8)), rng.normal(size=4), params)
    np.testing.assert_array_equal(r.sd.value, [[1.0, 1.0]])
    np.testing.assert_array_equal(r.s.value, r.sa.value)
    np.testing.assert_array_equal(r.vq.value, r.sa.value[0])


def test_forward_structure():
    case = random_case(np.random.default_rng(5), n_segments=4)
    r = forward(case.fv, case.query, case.spans, case.params, case.k)
    np.testing.assert_allclose(r.sa.value.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(r.sd.value.sum(axis=0), 1.0, atol=1e-12)
    np.testing.assert_array_equal(r.s.value, r.sa.value * r.sd.value)
    assert r.fm.shape == (len(case.spans), 3 * case.params.d)
    assert ((0 <= r.vq.value) & (r.vq.value <= 1)).all()


def test_forward_rejects_bad_dims():
    params = init_params(0, 3, 4, d=5, h=6)
    with pytest.raises(ad.DimensionError):
        forward_features(np.zeros((2, 7)), np.zeros(4), params)
    with pytest.raises(ad.DimensionError):
        forward_features(np.zeros((2, 8)), np.zeros(3), params)
    with pytest.raises(ValueError):
        forward_features(np.zeros((2, 8)), np.zeros(4), params, mode="both")


def test_ablation_modes_use_one_branch():
    rng = np.random.default_rng(4)
    params = init_params(0, 3, 4, d=5, h=6)
    feats, q = rng.normal(size=(6, 8)), rng.normal(size=4)
    full = forward_features(feats, q, params)
    a = forward_features(feats, q, params, mode="align-only")
    d = forward_features(feats, q, params, mode="detect-only")
    np.testing.assert_array_equal(a.s.value, full.sa.value)
    np.testing.assert_array_equal(d.s.value, full.sd.value)
    assert a.sd is None and d.sa is None


def test_rank():
    s = np.array([[0.0, 0.1], [0.0, 0.5], [0.0, 0.2]])
    assert list(rank(s)) == [1, 2, 0]
    assert list(rank(np.zeros((4, 2)))) == [0, 1, 2, 3]
    assert list(rank(s * 7.5)) == list(rank(s))


def test_checkpoint_roundtrip(tmp_path):
    params = init_params(9, 3, 4, d=5, h=6)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params, {"k": 5, "mode": "full"})
    loaded, meta = load_checkpoint(path)
    assert loaded == params
    assert meta == {"k": 5, "mode": "full"}
    path2 = tmp_path / "again.ckpt"
    save_checkpoint(path2, loaded, meta)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_header_layout(tmp_path):
    import struct

    params = init_params(0, 2, 3, d=4, h=5)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, params)
    buf = path.read_bytes()
    assert buf[:4] == b"WSLC"
    version, meta_len = struct.unpack_from("<II", buf, 4)
    (count,) = struct.unpack_from("<I", buf, 12 + meta_len)
    assert version == 1 and count == len(param_layout(2, 3, 4, 5))
    n_floats = sum(int(np.prod(s)) for _, s in param_layout(2, 3, 4, 5))
    assert buf.endswith(params.arrays["detect_b2"].astype("<f8").tobytes())
    assert len(buf) > 8 * n_floats


def test_checkpoint_rejects_corruption(tmp_path):
    params = init_params(0, 2, 3, d=4, h=5)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, params)
    buf = path.read_bytes()
    (tmp_path / "bad.ckpt").write_bytes(b"XXXX" + buf[4:])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.ckpt")
    (tmp_path / "short.ckpt").write_bytes(buf[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "short.ckpt")
