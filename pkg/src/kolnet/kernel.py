"""Dense float64 tensors with a reverse-mode differentiation tape.

Every operation takes and returns :class:`Tensor` values backed by row-major
numpy arrays. When an input carries a tape node, the op appends a node holding
the local vector-Jacobian rule, so each forward pass rebuilds the graph from
scratch (define-by-run). :func:`backprop` walks the graph once in reverse
topological order and accumulates adjoints; :func:`finite_diff_grad` is the
independent gradient oracle used to cross-check it.

Tensors are treated as immutable once produced. A tape belongs to a single
forward/backward pass on one thread; batch-norm train mode additionally
mutates the running statistics passed in, so training steps need exclusive
access to the network state.
"""

from __future__ import annotations

import ctypes
import ctypes.util
from dataclasses import dataclass
from typing import Callable

import numpy as np

Array = np.ndarray


def _tune_allocator() -> None:
    """Keep large recurring tensor buffers on the heap for reuse.

    A training step allocates the same set of multi-megabyte arrays every
    iteration while the tape holds the previous ones alive. With glibc's
    default mmap threshold each of those becomes a fresh mmap that has to be
    page-faulted in and unmapped again, which dominates the step time on some
    kernels. Raising the thresholds lets freed blocks be handed straight back
    on the next step. Best effort: silently skipped on non-glibc platforms.
    """
    try:
        name = ctypes.util.find_library("c")
        libc = ctypes.CDLL(name) if name else ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        pass


_tune_allocator()


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class DegenerateBatchError(ValueError):
    """Batch statistics requested on a batch of fewer than two rows."""


class TapeNode:
    """One recorded operation: value, parents, op id and adjoint accumulator.

    ``parents`` is aligned with the op's inputs; entries are ``None`` for
    inputs that were not recorded (constants). ``adjoint`` stays ``None``
    until :func:`backprop` reaches the node.
    """

    __slots__ = ("op", "value", "parents", "vjp", "adjoint")

    def __init__(self, op, value, parents=(), vjp=None):
        self.op = op
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.adjoint = None


class Tensor:
    """Dense row-major float64 array, optionally recorded on the tape."""

    __slots__ = ("array", "node")

    def __init__(self, array, node=None):
        self.array = np.ascontiguousarray(array, dtype=np.float64)
        self.node = node

    @property
    def shape(self):
        return self.array.shape

    @property
    def size(self):
        return self.array.size

    def item(self):
        return float(self.array.reshape(-1)[0])

    def __repr__(self):
        tag = self.node.op if self.node is not None else "const"
        return f"Tensor(shape={self.array.shape}, {tag})"


def leaf(array) -> Tensor:
    """Wrap an array as a recorded leaf (parameter or input of interest)."""
    t = Tensor(array)
    t.node = TapeNode("leaf", t.array)
    return t


def constant(array) -> Tensor:
    """Wrap an array without recording it."""
    return Tensor(array)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op: str, out: Array, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    result = Tensor(out)
    if any(t.node is not None for t in inputs):
        parents = tuple(t.node for t in inputs)
        result.node = TapeNode(op, result.array, parents, vjp)
    return result


def _unbroadcast(g: Array, shape: tuple) -> Array:
    """Sum a gradient down to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def matmul(a, b) -> Tensor:
    """Matrix product C[i,j] = sum_r A[i,r] B[r,j]."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.array.ndim != 2 or b.array.ndim != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out = a.array @ b.array
    aa, ba = a.array, b.array
    need_a, need_b = a.node is not None, b.node is not None

    def vjp(g):
        return (g @ ba.T if need_a else None,
                aa.T @ g if need_b else None)

    return _make("matmul", out, (a, b), vjp)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.array + b.array
    sa, sb = a.array.shape, b.array.shape

    def vjp(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make("add", out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.array - b.array
    sa, sb = a.array.shape, b.array.shape

    def vjp(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _make("sub", out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.array * b.array
    aa, ba = a.array, b.array

    def vjp(g):
        return _unbroadcast(g * ba, aa.shape), _unbroadcast(g * aa, ba.shape)

    return _make("mul", out, (a, b), vjp)


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)

    def vjp(g):
        return (g * c,)

    return _make("scale", a.array * c, (a,), vjp)


def square(a) -> Tensor:
    a = _as_tensor(a)
    aa = a.array

    def vjp(g):
        return (2.0 * aa * g,)

    return _make("square", aa * aa, (a,), vjp)


def relu(a) -> Tensor:
    """Elementwise max(x, 0); the subgradient at exactly 0 is taken as 0."""
    a = _as_tensor(a)
    aa = a.array
    out = np.maximum(aa, 0.0)

    def vjp(g):
        return (np.where(aa > 0, g, 0.0),)

    return _make("relu", out, (a,), vjp)


def _scalar(g) -> float:
    return float(np.asarray(g).reshape(-1)[0])


def mean(a) -> Tensor:
    a = _as_tensor(a)
    n = a.array.size
    out = np.asarray(a.array.mean())
    shape = a.array.shape

    def vjp(g):
        return (np.full(shape, _scalar(g) / n),)

    return _make("mean", out, (a,), vjp)


def total(a) -> Tensor:
    a = _as_tensor(a)
    shape = a.array.shape

    def vjp(g):
        return (np.full(shape, _scalar(g)),)

    return _make("sum", np.asarray(a.array.sum()), (a,), vjp)


@dataclass
class RunningStats:
    """Exponentially averaged feature statistics used by eval-mode batch norm."""

    mean: Array
    var: Array


def batch_norm(x, scale_t, shift_t, state: RunningStats, mode: str = "train",
               eps: float = 1e-5, momentum: float = 0.1) -> Tensor:
    """Per-feature standardization of a (batch, features) tensor.

    Train mode uses biased batch variance for normalization and updates the
    running statistics in place (unbiased variance in the running update).
    Eval mode standardizes with the running statistics and is pure.
    """
    x, scale_t, shift_t = _as_tensor(x), _as_tensor(scale_t), _as_tensor(shift_t)
    xa = x.array
    if xa.ndim != 2:
        raise ShapeError(f"batch_norm expects a 2-d batch, got {xa.shape}")
    if eps < 0 or (mode == "train" and eps == 0):
        raise ValueError("batch_norm eps must be positive in train mode")
    sa, ba = scale_t.array, shift_t.array

    if mode == "train":
        b = xa.shape[0]
        if b < 2:
            raise DegenerateBatchError(f"batch_norm train mode needs >= 2 rows, got {b}")
        mu = xa.mean(axis=0)
        var = np.einsum("ij,ij->j", xa, xa) / b - mu * mu
        np.maximum(var, 0.0, out=var)  # guard rounding on constant features
        state.mean *= 1.0 - momentum
        state.mean += momentum * mu
        state.var *= 1.0 - momentum
        state.var += momentum * (var * (b / (b - 1.0)))
        inv = 1.0 / np.sqrt(var + eps)
        # out = (x - mu) * inv * scale + shift, fused into one buffer
        scomb = sa * inv
        out = xa * scomb
        out += ba - mu * scomb

        def vjp(g):
            gshift = g.sum(axis=0)
            xhat = xa * inv       # rebuild the standardized batch in one buffer
            xhat -= mu * inv
            gscale = np.einsum("ij,ij->j", g, xhat)
            # gradient through the batch mean and biased variance
            xhat *= gscale / b
            np.subtract(g, xhat, out=xhat)
            xhat -= g.mean(axis=0)
            xhat *= sa * inv
            return xhat, gscale, gshift

        return _make("batch_norm", out, (x, scale_t, shift_t), vjp)

    if mode == "eval":
        inv = 1.0 / np.sqrt(state.var + eps)
        mu = state.mean.copy()
        scomb = sa * inv
        out = xa * scomb
        out += ba - mu * scomb

        def vjp(g):
            gshift = g.sum(axis=0)
            xhat = xa * inv
            xhat -= mu * inv
            gscale = np.einsum("ij,ij->j", g, xhat)
            gx = g * (sa * inv)
            return gx, gscale, gshift

        return _make("batch_norm", out, (x, scale_t, shift_t), vjp)

    raise ValueError(f"unknown batch_norm mode {mode!r}")


def layer_norm(x, scale_t, shift_t, eps: float = 1e-5) -> Tensor:
    """Per-row standardization across features, then scale and shift."""
    x, scale_t, shift_t = _as_tensor(x), _as_tensor(scale_t), _as_tensor(shift_t)
    xa = x.array
    if xa.ndim != 2 or xa.shape[1] < 1:
        raise ShapeError(f"layer_norm expects a (batch, features>=1) tensor, got {xa.shape}")
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    sa, ba = scale_t.array, shift_t.array
    f = xa.shape[1]
    mu = xa.mean(axis=1, keepdims=True)
    var = (np.einsum("ij,ij->i", xa, xa)[:, None] / f) - mu * mu
    np.maximum(var, 0.0, out=var)
    inv = 1.0 / np.sqrt(var + eps)
    out = xa * inv
    out -= mu * inv
    xhat = out.copy()
    out *= sa
    out += ba

    def vjp(g):
        gshift = g.sum(axis=0)
        gscale = np.einsum("ij,ij->j", g, xhat)
        u = g * sa
        gx = inv * (u - u.mean(axis=1, keepdims=True)
                    - xhat * (np.einsum("ij,ij->i", u, xhat)[:, None] / f))
        return gx, gscale, gshift

    return _make("layer_norm", out, (x, scale_t, shift_t), vjp)


def backprop(loss: Tensor) -> dict[TapeNode, Array]:
    """Reverse-mode sweep from a scalar loss.

    Returns a map from every recorded leaf node reachable from the loss to
    its gradient array. Adjoints accumulate by summation over fan-out; each
    node is visited exactly once in reverse topological order.
    """
    if loss.node is None:
        raise ValueError("loss is not recorded on a tape")
    if loss.size != 1:
        raise ShapeError(f"backprop needs a scalar loss, got shape {loss.shape}")

    order: list[TapeNode] = []
    seen: set[int] = set()
    stack: list[tuple[TapeNode, bool]] = [(loss.node, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p is not None and id(p) not in seen:
                stack.append((p, False))

    loss.node.adjoint = np.ones_like(loss.node.value)
    grads: dict[TapeNode, Array] = {}
    for node in reversed(order):
        adj = node.adjoint
        if adj is None:
            continue
        if node.op == "leaf":
            grads[node] = adj
            continue
        contribs = node.vjp(adj)
        for parent, g in zip(node.parents, contribs):
            if parent is None or g is None:
                continue
            if parent.adjoint is None:
                parent.adjoint = g
            else:
                parent.adjoint = parent.adjoint + g
        node.adjoint = None  # free early; large batches dominate memory
    return grads


def finite_diff_grad(f: Callable[[Array], float], theta: Array, h: float) -> Array:
    """Central-difference gradient oracle: (f(t+h e_i) - f(t-h e_i)) / 2h."""
    if h <= 0:
        raise ValueError("finite_diff_grad step must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        bump = theta.copy()
        bump[i] = theta[i] + h
        up = f(bump)
        bump[i] = theta[i] - h
        down = f(bump)
        grad[i] = (up - down) / (2.0 * h)
    return grad


@dataclass
class GradCheckReport:
    """Outcome of a backprop vs finite-difference comparison."""

    max_rel_error: float
    n_params: int
    step: float


def grad_check(f: Callable[[Array], float], theta: Array, analytic: Array,
               h: float = 1e-5) -> GradCheckReport:
    """Compare an analytic gradient against central differences of ``f``.

    The error is relative to the largest gradient entry of either side, which
    keeps near-zero coordinates from being swamped by finite-difference noise.
    """
    fd = finite_diff_grad(f, theta, h)
    denom = max(np.abs(fd).max(initial=0.0), np.abs(analytic).max(initial=0.0), 1e-12)
    err = float(np.abs(analytic - fd).max(initial=0.0) / denom)
    return GradCheckReport(max_rel_error=err, n_params=int(theta.size), step=h)


def min_op_count(output: Tensor, source: Tensor, op: str = "matmul") -> int:
    """Minimum number of ``op`` nodes on any tape path from ``source`` to ``output``.

    Used to verify gradient-path lengths (e.g. the level-0 branch of the
    multilevel net crosses exactly two affine maps). Returns -1 if ``source``
    is unreachable from ``output``.
    """
    if output.node is None or source.node is None:
        raise ValueError("both tensors must be recorded")
    target = source.node
    memo: dict[int, int] = {}

    def visit(node: TapeNode) -> int:
        if node is target:
            return 0
        key = id(node)
        if key in memo:
            return memo[key]
        memo[key] = 10 ** 9  # cycle guard; the tape is a DAG
        best = 10 ** 9
        for p in node.parents:
            if p is None:
                continue
            sub = visit(p)
            if sub < best:
                best = sub
        if best < 10 ** 9 and node.op == op:
            best += 1
        memo[key] = best
        return best

    result = visit(output.node)
    return -1 if result >= 10 ** 9 else result
