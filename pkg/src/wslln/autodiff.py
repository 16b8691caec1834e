"""Tape-based reverse-mode differentiation over numpy float64 arrays.

Only the handful of operations the grounding model needs are provided. Each
operation evaluates eagerly, appends an entry to the tape of its inputs and
stores a vector-Jacobian product closure; :func:`backward` walks the tape in
reverse.

Reductions that run across proposals (column softmax, column sums) add the
terms in sorted order so that permuting proposals gives bit-identical results,
and :func:`linear` multiplies row by row for the same reason.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

PROB_FLOOR = 1e-12


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class RangeError(ValueError):
    """A pooling range is empty or out of bounds."""


@dataclass
class Entry:
    op: str
    inputs: tuple[int, ...]
    output: int
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered computation record plus one gradient buffer per value."""

    values: list["Var"] = field(default_factory=list)
    entries: list[Entry] = field(default_factory=list)
    grads: list[np.ndarray] | None = None

    def leaf(self, value, name: str | None = None) -> "Var":
        arr = np.array(value, dtype=np.float64)
        return self._new(arr, name)

    def _new(self, value: np.ndarray, name: str | None = None) -> "Var":
        var = Var(value, self, len(self.values), name)
        self.values.append(var)
        return var

    def record(self, op, inputs, value, vjp) -> "Var":
        out = self._new(value)
        self.entries.append(Entry(op, tuple(v.index for v in inputs), out.index, vjp))
        return out


class Var:
    __slots__ = ("value", "tape", "index", "name")

    def __init__(self, value: np.ndarray, tape: Tape, index: int, name: str | None):
        self.value = value
        self.tape = tape
        self.index = index
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def grad(self) -> np.ndarray:
        if self.tape.grads is None:
            raise RuntimeError("backward has not been run on this tape")
        return self.tape.grads[self.index]

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}(shape={self.shape})"


def _same_tape(*vs: Var) -> Tape:
    tape = vs[0].tape
    for v in vs[1:]:
        if v.tape is not tape:
            raise ValueError("operands live on different tapes")
    return tape


def _label(v: Var, default: str) -> str:
    return v.name or default


def _sorted_colsum(x: np.ndarray) -> np.ndarray:
    # order-independent column sum: permuting rows cannot change the bits
    return np.sort(x, axis=0).sum(axis=0)


# --------------------------------------------------------------------------
# operations


def linear(W: Var, b: Var, x: Var) -> Var:
    """``y = W x + b`` applied to a vector or to every row of a matrix."""
    tape = _same_tape(W, b, x)
    if W.value.ndim != 2 or b.value.ndim != 1:
        raise DimensionError(
            f"linear expects a matrix and a vector, got {_label(W, 'W')}{W.shape} "
            f"and {_label(b, 'b')}{b.shape}"
        )
    m, n = W.shape
    if b.shape[0] != m or x.value.ndim not in (1, 2) or x.shape[-1] != n:
        raise DimensionError(
            f"linear shape mismatch: {_label(W, 'W')}{W.shape}, "
            f"{_label(b, 'b')}{b.shape}, {_label(x, 'x')}{x.shape}"
        )
    xv, Wv = x.value, W.value
    if xv.ndim == 1:
        y = Wv @ xv + b.value
    else:
        y = (xv[:, None, :] @ Wv.T)[:, 0, :] + b.value

    def vjp(g):
        if xv.ndim == 1:
            return np.outer(g, xv), g, Wv.T @ g
        return g.T @ xv, g.sum(axis=0), g @ Wv

    return tape.record("linear", (W, b, x), y, vjp)


def relu(x: Var) -> Var:
    mask = x.value > 0

    def vjp(g):
        return (g * mask,)

    return x.tape.record("relu", (x,), np.where(mask, x.value, 0.0), vjp)


def softmax(x: Var, axis: int = -1) -> Var:
    """Softmax along the last dim (``axis=-1``) or down the columns (``axis=0``)."""
    if axis not in (-1, 0):
        raise ValueError(f"unsupported softmax axis {axis}")
    xv = x.value
    shifted = xv - xv.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    if axis == 0:
        y = e / _sorted_colsum(e)
    else:
        y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return x.tape.record(f"softmax[{axis}]", (x,), y, vjp)


def _check_same(a: Var, b: Var, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(
            f"{op}: shape mismatch {_label(a, 'a')}{a.shape} vs {_label(b, 'b')}{b.shape}"
        )


def add(a: Var, b: Var) -> Var:
    tape = _same_tape(a, b)
    _check_same(a, b, "add")
    return tape.record("add", (a, b), a.value + b.value, lambda g: (g, g))


def mul(a: Var, b: Var) -> Var:
    tape = _same_tape(a, b)
    _check_same(a, b, "mul")
    av, bv = a.value, b.value
    return tape.record("mul", (a, b), av * bv, lambda g: (g * bv, g * av))


def scale(x: Var, c: float) -> Var:
    return x.tape.record("scale", (x,), x.value * c, lambda g: (g * c,))


def elementwise(op: str, a: Var, b: Var) -> Var:
    if op == "add":
        return add(a, b)
    if op == "mul":
        return mul(a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


def concat(parts: Sequence[Var]) -> Var:
    """Concatenate along the last axis."""
    if not parts:
        raise DimensionError("concat needs at least one part")
    tape = _same_tape(*parts)
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise DimensionError(
                f"concat: incompatible shapes {[q.shape for q in parts]}"
            )
    sizes = [p.shape[-1] for p in parts]
    bounds = np.cumsum([0] + sizes)
    y = np.concatenate([p.value for p in parts], axis=-1)

    def vjp(g):
        return [g[..., bounds[i] : bounds[i + 1]] for i in range(len(parts))]

    return tape.record("concat", tuple(parts), y, vjp)


def mean_pool(x: Var, t1: int, t2: int) -> Var:
    """Mean of rows ``t1 .. t2-1`` of a T x D matrix."""
    T = x.shape[0]
    if not 0 <= t1 < t2 <= T:
        raise RangeError(f"empty or out-of-bounds pooling range [{t1}, {t2}) for T={T}")
    y = x.value[t1:t2].mean(axis=0)
    count = t2 - t1

    def vjp(g):
        out = np.zeros_like(x.value)
        out[t1:t2] = g / count
        return (out,)

    return x.tape.record("mean_pool", (x,), y, vjp)


def reduce_sum(x: Var) -> Var:
    """Column sums of an n x c matrix."""
    if x.value.ndim != 2:
        raise DimensionError(f"reduce_sum expects a matrix, got {x.shape}")
    n = x.shape[0]
    return x.tape.record(
        "reduce_sum", (x,), _sorted_colsum(x.value), lambda g: (np.tile(g, (n, 1)),)
    )


def clamp(x: Var, lo: float, hi: float) -> Var:
    """Clip to ``[lo, hi]`` with the gradient passed through unchanged.

    Meant only for absorbing last-bit rounding past a bound that holds exactly
    in real arithmetic.
    """
    return x.tape.record("clamp", (x,), np.clip(x.value, lo, hi), lambda g: (g,))


def sum_all(x: Var) -> Var:
    shape = x.shape
    return x.tape.record(
        "sum_all", (x,), np.array(x.value.sum()), lambda g: (np.full(shape, float(g)),)
    )


def repeat_rows(x: Var, n: int) -> Var:
    """Stack a vector ``n`` times into an n x d matrix."""
    if x.value.ndim != 1:
        raise DimensionError(f"repeat_rows expects a vector, got {x.shape}")
    return x.tape.record(
        "repeat_rows", (x,), np.tile(x.value, (n, 1)), lambda g: (g.sum(axis=0),)
    )


def column(x: Var, j: int) -> Var:
    shape = x.shape

    def vjp(g):
        out = np.zeros(shape)
        out[:, j] = g
        return (out,)

    return x.tape.record("column", (x,), x.value[:, j].copy(), vjp)


def max_entry(x: Var) -> Var:
    """Largest entry of a vector; the gradient goes to the first maximiser."""
    i = int(np.argmax(x.value))
    shape = x.shape

    def vjp(g):
        out = np.zeros(shape)
        out[i] = g
        return (out,)

    return x.tape.record("max_entry", (x,), np.array(x.value[i]), vjp)


def normalized_nll(x: Var, target: int, eps: float) -> Var:
    """``-ln((x[t] + eps) / (sum(x) + len(x) * eps))`` for a nonnegative vector."""
    xv = x.value
    if xv.ndim != 1:
        raise DimensionError(f"normalized_nll expects a vector, got {x.shape}")
    total = xv.sum() + xv.size * eps
    num = xv[target] + eps
    loss = -np.log(num / total)

    def vjp(g):
        out = np.full(xv.shape, 1.0 / total)
        out[target] -= 1.0 / num
        return (g * out,)

    return x.tape.record("normalized_nll", (x,), np.array(loss), vjp)


def nll_rows(p: Var, target: int) -> Var:
    """Mean over rows of ``-ln p[j, target]``, probabilities floored at 1e-12."""
    pv = p.value
    n = pv.shape[0]
    col = pv[:, target]
    clamped = np.maximum(col, PROB_FLOOR)
    loss = -np.log(clamped).mean()

    def vjp(g):
        out = np.zeros_like(pv)
        out[:, target] = np.where(col > PROB_FLOOR, -1.0 / (n * clamped), 0.0) * g
        return (out,)

    return p.tape.record("nll_rows", (p,), np.array(loss), vjp)


def binary_nll(m: Var, label: int) -> Var:
    """Two-class cross-entropy with score ``[1 - m, m]``."""
    mv = float(m.value)
    p = mv if label == 1 else 1.0 - mv
    clamped = max(p, PROB_FLOOR)
    sign = 1.0 if label == 1 else -1.0

    def vjp(g):
        d = -sign / clamped if p > PROB_FLOOR else 0.0
        return (np.array(g * d),)

    return m.tape.record("binary_nll", (m,), np.array(-np.log(clamped)), vjp)


# --------------------------------------------------------------------------
# differentiation


def backward(loss: Var) -> list[np.ndarray]:
    """Gradients of a scalar ``loss`` w.r.t. every value on its tape.

    The returned list is indexed like ``tape.values`` and is also stored on the
    tape so ``var.grad`` works afterwards. Values that do not feed the loss get
    zero gradients.
    """
    if loss.value.size != 1 or loss.value.ndim > 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss.tape
    grads = [np.zeros_like(v.value) for v in tape.values]
    grads[loss.index] = np.ones_like(loss.value)
    for entry in reversed(tape.entries):
        if entry.output > loss.index:
            continue
        g = grads[entry.output]
        if not g.any():
            continue
        for i, gi in zip(entry.inputs, entry.vjp(g)):
            if gi is not None:
                grads[i] = grads[i] + gi
    tape.grads = grads
    return grads


def grad_check(
    fn: Callable[[Tape, dict[str, Var]], Var],
    point: Mapping[str, np.ndarray] | np.ndarray,
    h: float = 1e-5,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``fn`` builds a scalar from leaves created at ``point`` (an array, or a
    mapping of named arrays). The error per coordinate is
    ``|analytic - numeric| / max(1, |analytic|)``.
    """
    single = isinstance(point, np.ndarray)
    base = {"x": point} if single else dict(point)
    base = {k: np.array(v, dtype=np.float64) for k, v in base.items()}

    def evaluate(arrays):
        tape = Tape()
        leaves = {k: tape.leaf(v, name=k) for k, v in arrays.items()}
        out = fn(tape, leaves["x"] if single else leaves)
        return out, leaves

    out, leaves = evaluate(base)
    backward(out)
    worst = 0.0
    for name, arr in base.items():
        analytic = leaves[name].grad
        flat = arr.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = float(evaluate(base)[0].value)
            flat[i] = old - h
            fm = float(evaluate(base)[0].value)
            flat[i] = old
            numeric = (fp - fm) / (2 * h)
            a = analytic.reshape(-1)[i]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
