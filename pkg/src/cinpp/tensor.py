"""A small dense reverse-mode autodiff core on top of numpy (float64 only).

Every operation returns a new :class:`Tensor`.  When at least one input
requires a gradient, the output remembers its parents and a closure that
pushes the output gradient back to them; :func:`backward` walks that graph
in reverse topological order.
"""

from __future__ import annotations

import contextlib
import math
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy import sparse

from .exceptions import NonFinite, NotScalar, ShapeMismatch

_GRAD_ENABLED = True
_DTYPE = np.float64


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def compute_dtype(dtype):
    """Create new tensors with ``dtype`` inside the block (parameters keep theirs)."""
    global _DTYPE
    prev, _DTYPE = _DTYPE, dtype
    try:
        yield
    finally:
        _DTYPE = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        extra = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{extra})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A leaf tensor that requires a gradient and carries a unique path name."""

    __slots__ = ()

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


_ONES = np.ones(0)


def _finite(arr: np.ndarray, op: str) -> np.ndarray:
    # a NaN/Inf anywhere makes the (BLAS) sum non-finite; only then pay for the
    # elementwise scan, which also clears sums that merely overflowed
    global _ONES
    if arr.dtype == np.float64 and arr.size:
        flat = arr.reshape(-1)
        if _ONES.size < flat.size:
            _ONES = np.ones(max(flat.size, 2 * _ONES.size))
        with np.errstate(over="ignore", invalid="ignore"):
            total = flat @ _ONES[: flat.size]
    else:
        with np.errstate(over="ignore", invalid="ignore"):
            total = arr.sum()
    if not math.isfinite(total) and not np.all(np.isfinite(arr)):
        raise NonFinite(f"{op} produced non-finite values")
    return arr


def _make(data, parents: Sequence[Tensor], backward: Callable, op: str, check: bool = True) -> Tensor:
    # ``check=False`` is for ops that only select, reorder or clamp entries of
    # already-checked inputs, so they cannot introduce NaN/Inf
    out = Tensor(_finite(data, op) if check else data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    # accumulation is never in place, so the first gradient can be stored without a copy
    if t.grad is None:
        t.grad = np.asarray(g, dtype=np.float64).reshape(t.shape)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}") from exc

    def back(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), back, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError as exc:
        raise ShapeMismatch(f"sub: {a.shape} vs {b.shape}") from exc

    def back(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(data, (a, b), back, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeMismatch(f"mul: {a.shape} vs {b.shape}") from exc

    def back(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), back, "mul")


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)

    def back(g):
        _accumulate(x, g * (x.data > 0))

    return _make(out, (x,), back, "relu", check=False)


def absolute(x: Tensor) -> Tensor:
    sign = np.sign(x.data)

    def back(g):
        _accumulate(x, g * sign)

    return _make(np.abs(x.data), (x,), back, "abs")


def sigmoid(x: Tensor) -> Tensor:
    s = _stable_sigmoid(x.data)

    def back(g):
        _accumulate(x, g * s * (1.0 - s))

    return _make(s, (x,), back, "sigmoid")


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy of ``sigmoid(logits)`` against 0/1 targets."""
    y = np.asarray(targets, dtype=np.float64)
    z = logits.data
    if y.shape != z.shape:
        raise ShapeMismatch(f"bce: logits {z.shape} vs targets {y.shape}")
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = max(z.size, 1)

    def back(g):
        _accumulate(logits, g * (_stable_sigmoid(z) - y) / n)

    return _make(np.asarray(loss.sum() / n), (logits,), back, "bce")


# -- reductions ----------------------------------------------------------------

def scale_add(x: Tensor, eps: Tensor, y: Tensor) -> Tensor:
    """``(1 + eps) * x + y`` for a scalar (shape ``(1,)``) parameter ``eps``."""
    x, eps, y = as_tensor(x), as_tensor(eps), as_tensor(y)
    if x.shape != y.shape or eps.size != 1:
        raise ShapeMismatch(f"scale_add: {x.shape}, eps {eps.shape}, {y.shape}")
    factor = 1.0 + eps.data.reshape(())

    def back(g):
        if x.requires_grad:
            _accumulate(x, g * factor)
        if eps.requires_grad:
            _accumulate(eps, np.reshape(np.vdot(g, x.data), eps.shape))
        if y.requires_grad:
            _accumulate(y, g)

    out = x.data * factor
    out += y.data
    return _make(out, (x, eps, y), back, "scale_add")


def sum_all(x: Tensor) -> Tensor:
    def back(g):
        _accumulate(x, np.broadcast_to(g, x.shape))

    return _make(np.asarray(x.data.sum()), (x,), back, "sum")


def mean_all(x: Tensor) -> Tensor:
    n = max(x.size, 1)

    def back(g):
        _accumulate(x, np.broadcast_to(g / n, x.shape))

    return _make(np.asarray(x.data.sum() / n), (x,), back, "mean")


# -- linear algebra and indexing ----------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")

    def back(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), back, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, rows: Optional[slice] = None) -> Tensor:
    """``x @ weight[rows] + bias`` as a single recorded operation.

    ``rows`` applies only a block of the weight rows, which lets a layer on
    concatenated inputs be evaluated one block at a time.
    """
    w = weight.data if rows is None else weight.data[rows]
    if x.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeMismatch(f"linear: {x.shape} @ {w.shape}")
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        if x.requires_grad:
            _accumulate(x, g @ w.T)
        if weight.requires_grad:
            gw = x.data.T @ g
            if rows is not None:
                full = np.zeros_like(weight.data)
                full[rows] = gw
                gw = full
            _accumulate(weight, gw)
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=0))

    out = x.data @ w
    if bias is not None:
        out += bias.data
    return _make(out, parents, back, "linear")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def back(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                _accumulate(t, g[tuple(sl)])

    return _make(data, tensors, back, "concat", check=False)


def segment_matrix(index: np.ndarray, num_segments: int) -> sparse.csr_matrix:
    """Sparse ``(num_segments, len(index))`` 0/1 matrix that sums rows per segment.

    CSR rows keep column indices sorted, so each segment is summed in
    ascending source-row order regardless of how ``index`` is arranged.
    """
    index = np.asarray(index, dtype=np.int64)
    n = len(index)
    if n and (index.min() < 0 or index.max() >= num_segments):
        raise ShapeMismatch(f"segment index out of range [0, {num_segments})")
    mat = sparse.csr_matrix(
        (np.ones(n), (index, np.arange(n))), shape=(num_segments, n)
    )
    mat.sort_indices()
    return mat


def scatter_sum(rows: Tensor, index, num_segments: int, matrix=None) -> Tensor:
    """``out[s] = sum of rows[i] with index[i] == s``; empty segments are zero."""
    rows = as_tensor(rows)
    index = np.asarray(index, dtype=np.int64)
    if rows.data.ndim != 2 or rows.shape[0] != len(index):
        raise ShapeMismatch(f"scatter_sum: rows {rows.shape} vs index {index.shape}")
    mat = segment_matrix(index, num_segments) if matrix is None else matrix

    def back(g):
        _accumulate(rows, mat.T @ g)

    return _make(np.asarray(mat @ rows.data), (rows,), back, "scatter_sum")


def gather(x: Tensor, index, matrix=None) -> Tensor:
    """Row selection ``x[index]``; repeated indices accumulate in backward.

    ``matrix`` may supply a cached ``segment_matrix(index, len(x))``.
    """
    index = np.asarray(index, dtype=np.int64)
    if x.data.ndim != 2:
        raise ShapeMismatch(f"gather expects a matrix, got {x.shape}")
    n = x.shape[0]

    def back(g):
        mat = segment_matrix(index, n) if matrix is None else matrix
        _accumulate(x, mat @ g)

    return _make(x.data[index], (x,), back, "gather", check=False)


def scale_rows(x: Tensor, factors) -> Tensor:
    """Multiply row ``i`` by the constant ``factors[i]``."""
    f = np.asarray(factors, dtype=np.float64).reshape(-1, 1)

    def back(g):
        _accumulate(x, g * f)

    return _make(x.data * f, (x,), back, "scale_rows")


# -- stochastic and normalisation layers --------------------------------------

def dropout(x: Tensor, p: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    mask = (rng.random(x.shape) >= p) / (1.0 - p)

    def back(g):
        _accumulate(x, g * mask)

    return _make(x.data * mask, (x,), back, "dropout", check=False)


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    eps: float = 1e-5,
    momentum: float = 0.1,
) -> Tensor:
    """Normalise each column of a ``(rows, d)`` matrix.

    Training mode uses the biased batch variance for normalisation and
    updates the running statistics in place (unbiased variance, like most
    frameworks).  Eval mode uses the running statistics only.
    """
    if x.data.ndim != 2 or x.shape[1] != gamma.shape[-1]:
        raise ShapeMismatch(f"batchnorm: input {x.shape} vs gamma {gamma.shape}")
    n = x.shape[0]
    if training and n > 0:
        ones = np.ones(n, dtype=x.data.dtype)
        mu = (ones @ x.data) / n
        centred = x.data - mu
        var = (ones @ (centred * centred)) / n
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        unbiased = var * n / (n - 1) if n > 1 else var
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
        inv = 1.0 / np.sqrt(var + eps)
        xhat = centred
        xhat *= inv

        def back(g):
            g_sum = ones @ g
            gx_sum = ones @ (g * xhat)
            if gamma.requires_grad:
                _accumulate(gamma, gx_sum.reshape(gamma.shape))
            if beta.requires_grad:
                _accumulate(beta, g_sum.reshape(beta.shape))
            if x.requires_grad:
                scale = gamma.data.reshape(-1) * inv
                # d/dx of gamma * xhat for batch statistics, per column
                dx = g - g_sum / n
                dx -= xhat * (gx_sum / n)
                dx *= scale
                _accumulate(x, dx)
    else:
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean) * inv

        def back(g):
            if gamma.requires_grad:
                _accumulate(gamma, (g * xhat).sum(axis=0).reshape(gamma.shape))
            if beta.requires_grad:
                _accumulate(beta, g.sum(axis=0).reshape(beta.shape))
            if x.requires_grad:
                _accumulate(x, g * (gamma.data.reshape(1, -1) * inv))

    out = xhat * gamma.data.reshape(1, -1) + beta.data.reshape(1, -1)
    return _make(out, (x, gamma, beta), back, "batchnorm")


# -- differentiation -----------------------------------------------------------

def _topological(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor):
    """Accumulate ``d loss / d leaf`` into ``leaf.grad`` for every reachable leaf."""
    if loss.size != 1:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological(loss)
    interior = [n for n in order if n._backward is not None]
    for n in interior:
        n.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for n in interior:
        if n is not loss:
            n.grad = None


# -- randomness ----------------------------------------------------------------

def make_rng(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, purpose, index)``."""
    tag = zlib.crc32(purpose.encode("utf-8"))
    ss = np.random.SeedSequence(int(seed), spawn_key=(tag, int(index)))
    return np.random.Generator(np.random.Philox(ss))


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


# -- finite differences ---------------------------------------------------------

@dataclass
class ParamCheck:
    name: str
    checked: int
    skipped: int
    max_rel_error: float


@dataclass
class GradCheckReport:
    tol: float
    params: list = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((p.max_rel_error for p in self.params), default=0.0)

    @property
    def checked(self) -> int:
        return sum(p.checked for p in self.params)

    @property
    def skipped(self) -> int:
        return sum(p.skipped for p in self.params)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def finite_difference_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    h: float = 1e-6,
    tol: float = 1e-6,
    floor: float = 1e-8,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    extended: bool = True,
) -> GradCheckReport:
    """Compare :func:`backward` gradients with central differences.

    The error of one entry is ``|analytic - numeric| / max(|analytic|,
    |numeric|, floor)``.  With ``extended`` the perturbed losses are
    evaluated in ``np.longdouble`` so that cancellation in ``f(x+h) -
    f(x-h)`` does not swamp small gradients; parameters and the analytic
    pass stay float64.  An entry whose one-sided slopes disagree by more
    than the analytic/central discrepancy sits on a kink (e.g. relu at 0)
    and is reported as skipped rather than failed.  ``f`` must be
    deterministic.
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss = f()
    backward(loss)
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]
    dtype = np.longdouble if extended else np.float64

    def value():
        with no_grad(), compute_dtype(dtype):
            return np.longdouble(f().data)

    f0 = value()
    report = GradCheckReport(tol=tol)
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            gen = rng if rng is not None else np.random.default_rng(0)
            idx = np.sort(gen.choice(flat.size, size=max_entries, replace=False))
        worst, skipped = 0.0, 0
        for i in idx:
            orig = flat[i]
            up, down = orig + h, orig - h
            flat[i] = up
            fp = value()
            flat[i] = down
            fm = value()
            flat[i] = orig
            # actual float64 steps, not the nominal h
            num = float((fp - fm) / (np.longdouble(up) - np.longdouble(down)))
            a = float(ga.reshape(-1)[i])
            err = abs(a - num) / max(abs(a), abs(num), floor)
            if err >= tol:
                right = float((fp - f0) / (np.longdouble(up) - np.longdouble(orig)))
                left = float((f0 - fm) / (np.longdouble(orig) - np.longdouble(down)))
                if abs(right - left) > abs(a - num):
                    skipped += 1
                    continue
            worst = max(worst, err)
        report.params.append(
            ParamCheck(p.name or f"param{len(report.params)}", len(idx) - skipped, skipped, worst)
        )
    return report
