"""Dense 2-D matrix algebra with reverse-mode differentiation.

Every value is a 2-D float array wrapped in a :class:`Node`. Operations
build a graph on the fly; calling :func:`backward` on a 1x1 node fills in
``grad`` on every node that (transitively) depends on a trainable
:class:`Parameter`. Gradients are checked against central finite
differences by :func:`grad_check`; those checks assume 64-bit arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolationError, DimensionError, ParameterError

DEFAULT_DTYPE = np.float64


def _as_array(value, dtype=None) -> np.ndarray:
    a = np.asarray(value, dtype=dtype if dtype is not None else None)
    if a.dtype.kind != "f":
        a = a.astype(DEFAULT_DTYPE)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


class Node:
    """A matrix value plus the bookkeeping needed for backpropagation."""

    __slots__ = ("value", "grad", "_parents", "_vjp", "requires_grad")

    def __init__(self, value, parents=(), vjp=None, requires_grad=False):
        self.value = _as_array(value)
        self.grad = None
        self._parents = parents
        self._vjp = vjp
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.value.shape

    @property
    def rows(self):
        return self.value.shape[0]

    @property
    def cols(self):
        return self.value.shape[1]

    def __repr__(self):
        return f"Node(shape={self.value.shape}, requires_grad={self.requires_grad})"


class Parameter(Node):
    """A named trainable matrix with a persistent gradient buffer."""

    __slots__ = ("name",)

    def __init__(self, value, name: str):
        super().__init__(value, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def constant(value) -> Node:
    """Wrap an array as a graph leaf that never receives gradients."""
    return Node(value)


def _wrap(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _require_same_shape(a: Node, b: Node, op: str):
    if a.value.shape != b.value.shape:
        raise DimensionError(f"{op}: shapes {a.value.shape} and {b.value.shape} differ")


def backward(root: Node):
    """Accumulate d(root)/d(node) into ``grad`` for every contributing node.

    ``root`` must be 1x1. Traversal is a depth-first topological order over
    the sub-graph that requires gradients; nodes outside it are skipped.
    """
    if root.value.shape != (1, 1):
        raise DimensionError(f"backward root must be 1x1, got {root.value.shape}")
    topo: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    for node in topo:
        if not isinstance(node, Parameter):
            node.grad = None
    root.grad = np.ones((1, 1), dtype=root.value.dtype)
    for node in reversed(topo):
        if node._vjp is None or node.grad is None:
            continue
        for parent, contrib in zip(node._parents, node._vjp(node.grad)):
            if not parent.requires_grad or contrib is None:
                continue
            if parent.grad is None:
                parent.grad = contrib.copy() if isinstance(parent, Parameter) else contrib
            else:
                parent.grad = parent.grad + contrib


def zero_grads(params):
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------

def matmul(a, b) -> Node:
    """Matrix product a @ b."""
    a, b = _wrap(a), _wrap(b)
    if a.cols != b.rows:
        raise DimensionError(f"matmul: inner dims of {a.value.shape} and {b.value.shape} differ")
    av, bv = a.value, b.value

    def vjp(g):
        return g @ bv.T, av.T @ g

    return Node(av @ bv, (a, b), vjp)


def add(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    _require_same_shape(a, b, "add")

    def vjp(g):
        return g, g

    return Node(a.value + b.value, (a, b), vjp)


def sub(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    _require_same_shape(a, b, "sub")

    def vjp(g):
        return g, -g

    return Node(a.value - b.value, (a, b), vjp)


def scale(a, s: float) -> Node:
    a = _wrap(a)
    s = float(s)

    def vjp(g):
        return (g * s,)

    return Node(a.value * s, (a,), vjp)


def elementwise_mul(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    _require_same_shape(a, b, "elementwise_mul")
    av, bv = a.value, b.value

    def vjp(g):
        return g * bv, g * av

    return Node(av * bv, (a, b), vjp)


def elementwise_div(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    _require_same_shape(a, b, "elementwise_div")
    av, bv = a.value, b.value
    out = av / bv

    def vjp(g):
        return g / bv, -g * out / bv

    return Node(out, (a, b), vjp)


def sigmoid(a) -> Node:
    a = _wrap(a)
    v = a.value
    out = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))), np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))

    def vjp(g):
        return (g * out * (1.0 - out),)

    return Node(out, (a,), vjp)


def tanh_ew(a) -> Node:
    a = _wrap(a)
    out = np.tanh(a.value)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return Node(out, (a,), vjp)


def relu(a) -> Node:
    a = _wrap(a)
    mask = a.value > 0

    def vjp(g):
        return (g * mask,)

    return Node(a.value * mask, (a,), vjp)


def exp_ew(a) -> Node:
    a = _wrap(a)
    out = np.exp(a.value)

    def vjp(g):
        return (g * out,)

    return Node(out, (a,), vjp)


def log_ew(a) -> Node:
    a = _wrap(a)
    v = a.value

    def vjp(g):
        return (g / v,)

    return Node(np.log(v), (a,), vjp)


def softmax_rows(a) -> Node:
    """Row-wise softmax, stabilized by subtracting each row's max."""
    a = _wrap(a)
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - dot),)

    return Node(out, (a,), vjp)


def transpose(a) -> Node:
    a = _wrap(a)

    def vjp(g):
        return (g.T,)

    return Node(a.value.T.copy(), (a,), vjp)


def concat_cols(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    if a.rows != b.rows:
        raise DimensionError(f"concat_cols: row counts {a.rows} and {b.rows} differ")
    na = a.cols

    def vjp(g):
        return g[:, :na], g[:, na:]

    return Node(np.concatenate([a.value, b.value], axis=1), (a, b), vjp)


def concat_rows(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    if a.cols != b.cols:
        raise DimensionError(f"concat_rows: column counts {a.cols} and {b.cols} differ")
    na = a.rows

    def vjp(g):
        return g[:na, :], g[na:, :]

    return Node(np.concatenate([a.value, b.value], axis=0), (a, b), vjp)


def slice_cols(a, start: int, stop: int) -> Node:
    a = _wrap(a)
    if not (0 <= start < stop <= a.cols):
        raise DimensionError(f"slice_cols: [{start}:{stop}) out of range for {a.cols} columns")

    def vjp(g):
        full = np.zeros_like(a.value)
        full[:, start:stop] = g
        return (full,)

    return Node(a.value[:, start:stop].copy(), (a,), vjp)


def mean_rows(a) -> Node:
    """Average over rows: n x d -> 1 x d."""
    a = _wrap(a)
    n = a.rows

    def vjp(g):
        return (np.repeat(g / n, n, axis=0),)

    return Node(a.value.mean(axis=0, keepdims=True), (a,), vjp)


def sum_rows(a) -> Node:
    a = _wrap(a)
    n = a.rows

    def vjp(g):
        return (np.repeat(g, n, axis=0),)

    return Node(a.value.sum(axis=0, keepdims=True), (a,), vjp)


def sum_cols(a) -> Node:
    a = _wrap(a)
    d = a.cols

    def vjp(g):
        return (np.repeat(g, d, axis=1),)

    return Node(a.value.sum(axis=1, keepdims=True), (a,), vjp)


def sum_all(a) -> Node:
    a = _wrap(a)

    def vjp(g):
        return (np.full_like(a.value, g[0, 0]),)

    return Node(a.value.sum().reshape(1, 1), (a,), vjp)


def tile_rows(a, n: int) -> Node:
    """Repeat a 1 x d row n times -> n x d."""
    a = _wrap(a)
    if a.rows != 1:
        raise DimensionError(f"tile_rows expects a single row, got {a.value.shape}")

    def vjp(g):
        return (g.sum(axis=0, keepdims=True),)

    return Node(np.repeat(a.value, n, axis=0), (a,), vjp)


def tile_cols(a, d: int) -> Node:
    """Repeat an n x 1 column d times -> n x d."""
    a = _wrap(a)
    if a.cols != 1:
        raise DimensionError(f"tile_cols expects a single column, got {a.value.shape}")

    def vjp(g):
        return (g.sum(axis=1, keepdims=True),)

    return Node(np.repeat(a.value, d, axis=1), (a,), vjp)


def clamp_min(a, floor: float) -> Node:
    """Elementwise max(a, floor); gradient is zero where the floor is active."""
    a = _wrap(a)
    mask = a.value > floor

    def vjp(g):
        return (g * mask,)

    return Node(np.maximum(a.value, floor), (a,), vjp)


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Node:
    """Per-row normalization to zero mean / unit variance, then affine gain/bias."""
    a, gain, bias = _wrap(a), _wrap(gain), _wrap(bias)
    if gain.value.shape != (1, a.cols) or bias.value.shape != (1, a.cols):
        raise DimensionError(
            f"layer_norm: gain/bias must be 1x{a.cols}, got {gain.value.shape} and {bias.value.shape}"
        )
    v = a.value
    mu = v.mean(axis=1, keepdims=True)
    var = v.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (v - mu) * inv
    gv = gain.value

    def vjp(g):
        d = v.shape[1]
        gx = g * gv
        dxhat_term = gx - gx.mean(axis=1, keepdims=True) - xhat * (gx * xhat).mean(axis=1, keepdims=True)
        da = dxhat_term * inv
        dgain = (g * xhat).sum(axis=0, keepdims=True)
        dbias = g.sum(axis=0, keepdims=True)
        return da, dgain, dbias

    return Node(xhat * gv + bias.value, (a, gain, bias), vjp)


def dropout(a, rate: float, training: bool, rng: np.random.Generator | None = None) -> Node:
    """Inverted dropout: train-time zeroing with 1/(1-rate) rescale, eval identity."""
    a = _wrap(a)
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        def vjp_id(g):
            return (g,)

        return Node(a.value.copy(), (a,), vjp_id)
    if rng is None:
        raise ParameterError("dropout in training mode needs an rng")
    keep = (rng.random(a.value.shape) >= rate) / (1.0 - rate)

    def vjp(g):
        return (g * keep,)

    return Node(a.value * keep, (a,), vjp)


def xavier_uniform(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Uniform init in +-sqrt(6 / (fan_in + fan_out))."""
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    """Finite-difference agreement for one parameter."""

    name: str
    max_rel_error: float
    entry_errors: np.ndarray = field(repr=False)
    passed: bool = False


def grad_check(loss_fn, params, eps: float = 1e-5, tol: float = 1e-4) -> list[GradCheckReport]:
    """Compare reverse-mode gradients of ``loss_fn`` against central differences.

    ``loss_fn`` takes no arguments, rebuilds the graph from ``params`` and
    returns a 1x1 Node. It must be deterministic; two baseline evaluations
    that disagree raise :class:`ContractViolationError`. Relative error per
    entry is ``|g_ad - g_fd| / max(1, |g_ad|, |g_fd|)``.
    """
    if eps <= 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    base = loss_fn()
    if base.value.shape != (1, 1):
        raise ContractViolationError(f"loss_fn must return a 1x1 node, got {base.value.shape}")
    if loss_fn().value[0, 0] != base.value[0, 0]:
        raise ContractViolationError("loss_fn is not deterministic under repeated evaluation")
    zero_grads(params)
    backward(base)
    analytic = {id(p): p.grad.copy() for p in params}

    reports = []
    for p in params:
        g_ad = analytic[id(p)]
        g_fd = np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        fd_flat = g_fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = loss_fn().value[0, 0]
            flat[i] = orig - eps
            lo = loss_fn().value[0, 0]
            flat[i] = orig
            fd_flat[i] = (hi - lo) / (2.0 * eps)
        denom = np.maximum(1.0, np.maximum(np.abs(g_ad), np.abs(g_fd)))
        errors = np.abs(g_ad - g_fd) / denom
        max_err = float(errors.max()) if errors.size else 0.0
        reports.append(GradCheckReport(p.name, max_err, errors, max_err < tol))
    return reports
