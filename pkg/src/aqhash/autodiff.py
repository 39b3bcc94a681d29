"""Reverse-mode automatic differentiation over dense float64 matrices.

The engine is deliberately small.  Every value is a 2-D matrix (scalars
are 1x1), every op computes its forward result with numpy and, when a
parent participates in gradient tracking, registers a closure that
propagates the output gradient to its parents.  Calling ``backward()`` on
a scalar root walks the graph once in reverse topological order and
accumulates gradients additively, so a parameter feeding several branches
receives the sum over all paths.

``grad_check`` re-evaluates a graph under central finite differences and
is the verification harness used throughout the test suite.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction inside the ``with`` block."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


class Tensor:
    """A 2-D float64 matrix node in a computation graph.

    Leaf tensors wrap raw values; op results carry a backward closure.
    ``data`` is always C-contiguous float64.  Scalars and 1-D inputs are
    promoted to (1, 1) and (1, n).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backprop")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backprop=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError("tensor", arr.shape, reason="expected at most 2 dimensions, got")
        self.data = np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backprop = _backprop

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", self.shape, reason="not a scalar, shape")
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Backpropagate from this node; only valid on a (1, 1) scalar."""
        if self.shape != (1, 1):
            raise ShapeError("backward", self.shape, reason="root must be scalar, got shape")
        order = _toposort(self)
        self.grad = np.ones((1, 1))
        for node in reversed(order):
            if node._backprop is not None and node.grad is not None:
                node._backprop(node.grad)

    # Convenience operators used by model code; all defer to kernel ops.
    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, c: float) -> "Tensor":
        return scale(self, c)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _toposort(root: Tensor) -> list[Tensor]:
    """Iterative DFS topological order (parents before consumers)."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g)  # copy: g may alias a consumer's grad buffer
    else:
        t.grad += g


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backprop) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backprop=backprop)
    return Tensor(data)


# ---------------------------------------------------------------------------
# Kernel ops.  Each checks shapes, computes the forward value exactly at
# 64-bit precision, and registers a backward rule.
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    out = a.data @ b.data

    def backprop(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _node(out, (a, b), backprop)


def transpose(a: Tensor) -> Tensor:
    out = np.ascontiguousarray(a.data.T)

    def backprop(g):
        _accum(a, g.T)

    return _node(out, (a,), backprop)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError("add", a.shape, b.shape)
    out = a.data + b.data

    def backprop(g):
        _accum(a, g)
        _accum(b, g)

    return _node(out, (a, b), backprop)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = a.data * c

    def backprop(g):
        _accum(a, g * c)

    return _node(out, (a,), backprop)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backprop(g):
        _accum(a, g * (1.0 - out * out))

    return _node(out, (a,), backprop)


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax with max-subtraction for stability."""
    if a.shape[1] == 0:
        raise ShapeError("softmax_rows", a.shape, reason="empty rows, shape")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def backprop(g):
        inner = (g * out).sum(axis=1, keepdims=True)
        _accum(a, out * (g - inner))

    return _node(out, (a,), backprop)


def normalize_rows(a: Tensor) -> Tensor:
    """Row-wise L2 normalization.

    An exactly-zero row maps to the zero row and contributes zero
    gradient; this avoids the division singularity.
    """
    if a.shape[1] == 0:
        raise ShapeError("normalize_rows", a.shape, reason="empty rows, shape")
    norms = np.linalg.norm(a.data, axis=1, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)
    # rows whose norm evaluates to 0 (including underflow) map to the zero row
    out = np.where(norms > 0.0, a.data / safe, 0.0)

    def backprop(g):
        inner = (g * out).sum(axis=1, keepdims=True)
        grad = (g - out * inner) / safe
        grad[np.squeeze(norms, axis=1) == 0.0] = 0.0
        _accum(a, grad)

    return _node(out, (a,), backprop)


def concat(parts: list[Tensor], axis: int) -> Tensor:
    if axis not in (0, 1):
        raise ShapeError("concat", *(p.shape for p in parts), reason=f"axis must be 0 or 1, got {axis}; shapes")
    if not parts:
        raise ShapeError("concat", reason="no inputs")
    other = 1 - axis
    ref = parts[0].shape[other]
    for p in parts[1:]:
        if p.shape[other] != ref:
            raise ShapeError("concat", *(q.shape for q in parts))
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backprop(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            piece = g[lo:hi, :] if axis == 0 else g[:, lo:hi]
            _accum(p, piece)

    return _node(out, tuple(parts), backprop)


def _check_slice(op, shape, axis, start, stop):
    if not (0 <= start < stop <= shape[axis]):
        raise ShapeError(op, shape, reason=f"slice [{start}:{stop}] out of range for shape")


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    _check_slice("slice_rows", a.shape, 0, start, stop)
    out = a.data[start:stop, :].copy()

    def backprop(g):
        full = np.zeros_like(a.data)
        full[start:stop, :] = g
        _accum(a, full)

    return _node(out, (a,), backprop)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    _check_slice("slice_cols", a.shape, 1, start, stop)
    out = a.data[:, start:stop].copy()

    def backprop(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        _accum(a, full)

    return _node(out, (a,), backprop)


def gather_rows(a: Tensor, indices: np.ndarray) -> Tensor:
    """Select rows by index (duplicates allowed); backward scatter-adds."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("gather_rows", idx.shape, reason="index array must be 1-D, got shape")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError("gather_rows", a.shape, reason=f"index out of range [{idx.min()}, {idx.max()}] for shape")
    out = a.data[idx, :]

    def backprop(g):
        if not a.requires_grad:
            return
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        np.add.at(a.grad, idx, g)

    return _node(out, (a,), backprop)


def sum_sq(a: Tensor) -> Tensor:
    """Sum of squared entries, returned as a (1, 1) scalar."""
    out = np.array([[float(np.sum(a.data * a.data))]])

    def backprop(g):
        _accum(a, 2.0 * a.data * g[0, 0])

    return _node(out, (a,), backprop)


# ---------------------------------------------------------------------------
# Finite-difference verification harness.
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    """Per-parameter max relative error of analytic vs central-difference gradients.

    The error for a parameter is ``max|analytic - fd| / max(|analytic|_inf,
    |fd|_inf, 1e-8)``; if both gradients are numerically zero (inf-norms
    below 1e-8) the error is reported as 0.
    """

    step: float
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def summary(self) -> str:
        lines = [f"{name}: rel_err={err:.3e}" for name, err in sorted(self.errors.items())]
        lines.append(f"max rel_err={self.max_error:.3e} tolerance={self.tolerance:.1e} "
                     f"-> {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def grad_check(build, params: dict[str, np.ndarray], step: float = 1e-6,
               tolerance: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients of a scalar graph against central differences.

    ``build`` maps a dict of parameter Tensors to a scalar Tensor and must
    be deterministic; it is re-invoked at perturbed parameter values, so
    the finite-difference answer never touches the backward rules it
    checks.
    """
    if step <= 0:
        raise ValueError(f"grad_check: step must be positive, got {step}")
    tensors = {name: Tensor(np.array(v, dtype=np.float64), requires_grad=True)
               for name, v in params.items()}
    root = build(tensors)
    root.backward()
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in tensors.items()}

    def evaluate() -> float:
        with no_grad():
            return build(tensors).item()

    report = GradCheckReport(step=step, tolerance=tolerance)
    for name, t in tensors.items():
        fd = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        fd_flat = fd.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            f_plus = evaluate()
            flat[i] = saved - step
            f_minus = evaluate()
            flat[i] = saved
            fd_flat[i] = (f_plus - f_minus) / (2.0 * step)
        a = analytic[name]
        denom = max(float(np.abs(a).max(initial=0.0)), float(np.abs(fd).max(initial=0.0)))
        if denom < 1e-8:
            report.errors[name] = 0.0
        else:
            report.errors[name] = float(np.abs(a - fd).max() / denom)
    return report


def finite(t: Tensor) -> bool:
    return bool(np.isfinite(t.data).all())


def uniform_init(rng: np.random.Generator, rows: int, cols: int, bound: float | None = None) -> np.ndarray:
    """Uniform [-bound, bound] init; default bound is 1/sqrt(fan_in)."""
    if bound is None:
        bound = 1.0 / math.sqrt(rows)
    return rng.uniform(-bound, bound, size=(rows, cols))
