"""Reverse-mode automatic differentiation over dense float32 matrices.

Every value is a 2-D float32 array. A :class:`Tape` records operations in
creation order, which is by construction a topological order, so the backward
sweep is a single reverse walk over the tape. Gradients are accumulated into
per-node buffers and returned as a name -> array map for the tape's named
parameters.

Nodes that no parameter feeds into carry ``needs_grad=False`` and are skipped
during the backward sweep, so constant inputs (frame embeddings, positional
encodings, labels) cost nothing beyond their forward value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "ShapeError",
    "matrix",
    "Node",
    "Tape",
    "matmul",
    "transpose",
    "add",
    "sub",
    "mul",
    "scale",
    "affine",
    "relu",
    "sigmoid",
    "log",
    "clamp",
    "softmax_rows",
    "layer_norm",
    "dropout",
    "concat_cols",
    "slice_cols",
    "take_rows",
    "reshape",
    "sum_all",
    "mean_all",
    "GradCheckReport",
    "grad_check",
]

_F32 = np.float32


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested operation."""


def matrix(data) -> np.ndarray:
    """Coerce ``data`` to a finite 2-D float32 row-major array.

    Rejects anything that is not two-dimensional with positive extents, and
    any NaN/Inf entry; this is the single choke point where non-finite values
    are refused.
    """
    a = np.ascontiguousarray(data, dtype=_F32)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got array of shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f"matrix extents must be positive, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains NaN or Inf")
    return a


class Node:
    """One tape entry: a cached forward value plus a backward rule.

    ``bwd`` takes the gradient w.r.t. this node's value and pushes
    contributions into the parents' accumulators. ``needs_grad`` marks whether
    any parameter is reachable through this node.
    """

    __slots__ = ("value", "grad", "parents", "bwd", "needs_grad", "tape", "name")

    def __init__(self, value, parents, bwd, needs_grad, tape, name=None):
        self.value = value
        self.grad = None
        self.parents = parents
        self.bwd = bwd
        self.needs_grad = needs_grad
        self.tape = tape
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ShapeError(f"item() on non-scalar node of shape {self.shape}")
        return float(self.value[0, 0])

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"<Node{tag} shape={self.shape} needs_grad={self.needs_grad}>"


class Tape:
    """Creation-ordered operation record for one forward pass.

    A tape owns all nodes created against it. Mixing nodes from different
    tapes in one operation is an error. Named parameters are registered via
    :meth:`param` and receive gradients from :meth:`backward`.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}

    def leaf(self, value, name: str | None = None, needs_grad: bool = False) -> Node:
        node = Node(matrix(value), (), None, needs_grad, self, name)
        self.nodes.append(node)
        return node

    def constant(self, value) -> Node:
        return self.leaf(value)

    def param(self, name: str, value) -> Node:
        """Register (or fetch) the unique leaf for a named parameter.

        Arrays that are already 2-D float32 and contiguous skip re-validation:
        parameters are checked where they are created (initialization,
        checkpoint load), and one tape per training sample would otherwise
        re-scan every weight on every step.
        """
        node = self.params.get(name)
        if node is None:
            if not (isinstance(value, np.ndarray) and value.dtype == _F32
                    and value.ndim == 2 and value.flags.c_contiguous):
                value = matrix(value)
            node = Node(value, (), None, True, self, name)
            self.nodes.append(node)
            self.params[name] = node
        return node

    def backward(self, loss: Node) -> dict[str, np.ndarray]:
        """Run the reverse sweep from a scalar loss node.

        Gradient accumulators are zeroed on entry, so calling backward twice
        recomputes the same gradients rather than doubling them. Returns
        d(loss)/d(param) for every registered parameter; parameters that the
        loss does not reach get zero gradients.
        """
        if loss.tape is not self:
            raise ValueError("loss node belongs to a different tape")
        if loss.value.shape != (1, 1):
            raise ShapeError(f"backward needs a 1x1 loss node, got shape {loss.shape}")
        for node in self.nodes:
            node.grad = None
        loss.grad = np.ones((1, 1), dtype=_F32)
        for node in reversed(self.nodes):
            if node.bwd is not None and node.grad is not None:
                node.bwd(node.grad)
        out = {}
        for name, p in self.params.items():
            out[name] = p.grad if p.grad is not None else np.zeros_like(p.value)
        return out


def _accum(node: Node, g: np.ndarray) -> None:
    if not node.needs_grad:
        return
    if node.grad is None:
        node.grad = g.astype(_F32, copy=True)
    else:
        node.grad += g


def _op(value: np.ndarray, parents: tuple[Node, ...], bwd) -> Node:
    tape = parents[0].tape
    for p in parents[1:]:
        if p.tape is not tape:
            raise ValueError("operands belong to different tapes")
    needs = any(p.needs_grad for p in parents)
    node = Node(value, parents, bwd if needs else None, needs, tape)
    tape.nodes.append(node)
    return node


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Node, b: Node) -> Node:
    """Matrix product; backward is dA = g Bᵀ, dB = Aᵀ g."""
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    out = a.value @ b.value

    def bwd(g):
        if a.needs_grad:
            _accum(a, g @ b.value.T)
        if b.needs_grad:
            _accum(b, a.value.T @ g)

    return _op(out, (a, b), bwd)


def transpose(a: Node) -> Node:
    def bwd(g):
        _accum(a, np.ascontiguousarray(g.T))

    return _op(np.ascontiguousarray(a.value.T), (a,), bwd)


def add(a: Node, b: Node) -> Node:
    """Elementwise sum; ``b`` may be a 1-row bias broadcast over a's rows."""
    if a.shape == b.shape:
        def bwd(g):
            _accum(a, g)
            _accum(b, g)
    elif b.shape == (1, a.shape[1]):
        def bwd(g):
            _accum(a, g)
            if b.needs_grad:
                _accum(b, g.sum(axis=0, keepdims=True))
    else:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")
    return _op(a.value + b.value, (a, b), bwd)


def sub(a: Node, b: Node) -> Node:
    if a.shape != b.shape:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")

    def bwd(g):
        _accum(a, g)
        if b.needs_grad:
            _accum(b, -g)

    return _op(a.value - b.value, (a, b), bwd)


def mul(a: Node, b: Node) -> Node:
    """Hadamard product of equal-shaped operands."""
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")

    def bwd(g):
        if a.needs_grad:
            _accum(a, g * b.value)
        if b.needs_grad:
            _accum(b, g * a.value)

    return _op(a.value * b.value, (a, b), bwd)


def scale(a: Node, c: float) -> Node:
    c = _F32(c)

    def bwd(g):
        _accum(a, g * c)

    return _op(a.value * c, (a,), bwd)


def affine(a: Node, alpha: float, beta: float) -> Node:
    """Elementwise alpha*a + beta."""
    alpha = _F32(alpha)

    def bwd(g):
        _accum(a, g * alpha)

    return _op(a.value * alpha + _F32(beta), (a,), bwd)


# ---------------------------------------------------------------------------
# nonlinearities


def relu(a: Node) -> Node:
    # Subgradient at exactly 0 is taken as 0.
    def bwd(g):
        _accum(a, g * (a.value > 0))

    return _op(np.maximum(a.value, 0), (a,), bwd)


def sigmoid(a: Node) -> Node:
    x = a.value
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        _accum(a, g * (out * (1.0 - out)))

    return _op(out, (a,), bwd)


def log(a: Node) -> Node:
    if np.any(a.value <= 0):
        raise ValueError("log requires strictly positive input")
    out = np.log(a.value)

    def bwd(g):
        _accum(a, g / a.value)

    return _op(out, (a,), bwd)


def clamp(a: Node, lo: float, hi: float) -> Node:
    """Clip into [lo, hi]; gradient passes only where no clipping happened."""
    if not lo < hi:
        raise ValueError(f"clamp needs lo < hi, got [{lo}, {hi}]")
    out = np.clip(a.value, _F32(lo), _F32(hi))

    def bwd(g):
        _accum(a, g * ((a.value >= lo) & (a.value <= hi)))

    return _op(out, (a,), bwd)


def softmax_rows(a: Node) -> Node:
    """Row-wise softmax with max-subtraction; each output row sums to 1.

    Normalizing by the sum of the already-rounded exponentials keeps row sums
    within a few float32 ulps of 1 regardless of row length: the division
    errors are weighted by values that themselves sum to 1.
    """
    e = np.exp(a.value - a.value.max(axis=1, keepdims=True))
    norm = e.sum(axis=1, keepdims=True, dtype=np.float64).astype(_F32)
    out = e / norm

    def bwd(g):
        inner = (g * out).sum(axis=1, keepdims=True)
        _accum(a, (g - inner) * out)

    return _op(out, (a,), bwd)


def layer_norm(a: Node, gain: Node, bias: Node, eps: float = 1e-5) -> Node:
    """Per-row standardization followed by a learnable affine transform."""
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    cols = a.shape[1]
    if gain.shape != (1, cols) or bias.shape != (1, cols):
        raise ShapeError(
            f"layer_norm: gain/bias must be 1x{cols}, got {gain.shape} and {bias.shape}"
        )
    x = a.value
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _F32(eps))
    xhat = xc * inv
    out = xhat * gain.value + bias.value

    def bwd(g):
        if gain.needs_grad:
            _accum(gain, (g * xhat).sum(axis=0, keepdims=True))
        if bias.needs_grad:
            _accum(bias, g.sum(axis=0, keepdims=True))
        if a.needs_grad:
            dxhat = g * gain.value
            m1 = dxhat.mean(axis=1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
            _accum(a, inv * (dxhat - m1 - xhat * m2))

    return _op(out, (a, gain, bias), bwd)


def dropout(a: Node, rate: float, rng: np.random.Generator | None = None,
            training: bool = False) -> Node:
    """Inverted dropout: zero with probability ``rate``, scale survivors.

    In inference mode (or at rate 0) this is the identity and returns ``a``
    itself without consuming randomness, so evaluation never depends on an
    RNG stream.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    if rng is None:
        raise ValueError("training-mode dropout needs an RNG stream")
    keep = (rng.random(a.shape) >= rate)
    m = keep.astype(_F32) * _F32(1.0 / (1.0 - rate))
    out = a.value * m

    def bwd(g):
        _accum(a, g * m)

    return _op(out, (a,), bwd)


# ---------------------------------------------------------------------------
# shape surgery


def concat_cols(parts: list[Node]) -> Node:
    """Concatenate along columns; all parts must share the row count."""
    if not parts:
        raise ValueError("concat_cols of an empty list")
    rows = parts[0].shape[0]
    for p in parts[1:]:
        if p.shape[0] != rows:
            raise ShapeError(
                f"concat_cols: row counts differ, {parts[0].shape} vs {p.shape}"
            )
    out = np.concatenate([p.value for p in parts], axis=1)
    offsets = np.cumsum([0] + [p.shape[1] for p in parts])

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.needs_grad:
                _accum(p, np.ascontiguousarray(g[:, lo:hi]))

    return _op(out, tuple(parts), bwd)


def slice_cols(a: Node, start: int, stop: int) -> Node:
    if not 0 <= start < stop <= a.shape[1]:
        raise ShapeError(f"slice_cols [{start}:{stop}] outside matrix of shape {a.shape}")
    out = np.ascontiguousarray(a.value[:, start:stop])

    def bwd(g):
        full = np.zeros_like(a.value)
        full[:, start:stop] = g
        _accum(a, full)

    return _op(out, (a,), bwd)


def take_rows(a: Node, indices: list[int]) -> Node:
    """Gather rows (repetition allowed); backward scatter-adds."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size == 0 or idx.min() < 0 or idx.max() >= a.shape[0]:
        raise ShapeError(f"take_rows indices {indices} outside matrix of shape {a.shape}")
    out = np.ascontiguousarray(a.value[idx])

    def bwd(g):
        full = np.zeros_like(a.value)
        np.add.at(full, idx, g)
        _accum(a, full)

    return _op(out, (a,), bwd)


def reshape(a: Node, rows: int, cols: int) -> Node:
    if rows * cols != a.shape[0] * a.shape[1]:
        raise ShapeError(f"cannot reshape {a.shape} to ({rows}, {cols})")
    out = a.value.reshape(rows, cols)

    def bwd(g):
        _accum(a, g.reshape(a.shape))

    return _op(out, (a,), bwd)


# ---------------------------------------------------------------------------
# reductions


def sum_all(a: Node) -> Node:
    out = np.array([[a.value.sum(dtype=np.float64)]], dtype=_F32)

    def bwd(g):
        _accum(a, np.full_like(a.value, g[0, 0]))

    return _op(out, (a,), bwd)


def mean_all(a: Node) -> Node:
    n = a.value.size
    out = np.array([[a.value.sum(dtype=np.float64) / n]], dtype=_F32)

    def bwd(g):
        _accum(a, np.full_like(a.value, g[0, 0] / _F32(n)))

    return _op(out, (a,), bwd)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    """Per-parameter worst relative error between analytic and numeric gradients."""

    errors: dict[str, float]
    tol: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol

    def summary(self) -> str:
        state = "PASS" if self.passed else "FAIL"
        return f"grad_check {state}: max relative error {self.max_error:.3e} (tol {self.tol:.1e})"


def grad_check(
    f: Callable[[dict[str, np.ndarray]], Node],
    params: dict[str, np.ndarray],
    eps: float = 1e-3,
    tol: float = 1e-3,
) -> GradCheckReport:
    """Compare analytic gradients of ``f`` against central finite differences.

    ``f`` must build a fresh tape, register every array in ``params`` via
    ``tape.param`` under the same name, and return the scalar loss node. It is
    evaluated twice up front; any disagreement means ``f`` is not
    deterministic (e.g. live dropout) and is rejected.

    The relative error for one gradient entry is |a - n| / max(1, |a|, |n|),
    i.e. it degrades to an absolute tolerance where both gradients are small,
    which is the honest resolution limit of float32 forward passes.
    """
    if not 1e-5 <= eps <= 1e-2:
        raise ValueError(f"eps must be in [1e-5, 1e-2], got {eps}")

    loss = f(params)
    loss_again = f(params)
    if loss.value[0, 0] != loss_again.value[0, 0]:
        raise ValueError(
            "f is not deterministic: two forward passes disagree "
            f"({loss.item()} vs {loss_again.item()}); freeze dropout masks first"
        )
    analytic = loss.tape.backward(loss)

    errors: dict[str, float] = {}
    for name, theta in params.items():
        ana = analytic[name].astype(np.float64)
        num = np.zeros(theta.shape, dtype=np.float64)
        flat = theta.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + _F32(eps)
            hi = float(f(params).value[0, 0])
            hi_theta = float(flat[i])
            flat[i] = orig - _F32(eps)
            lo = float(f(params).value[0, 0])
            lo_theta = float(flat[i])
            flat[i] = orig
            # use the actually-representable step, not the nominal eps
            num.reshape(-1)[i] = (hi - lo) / (hi_theta - lo_theta)
        denom = np.maximum(1.0, np.maximum(np.abs(ana), np.abs(num)))
        errors[name] = float(np.max(np.abs(ana - num) / denom))
    return GradCheckReport(errors=errors, tol=tol)
