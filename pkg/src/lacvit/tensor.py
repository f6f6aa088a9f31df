"""Dense float64 tensors with define-by-run reverse-mode differentiation.

A :class:`Tensor` wraps a C-contiguous ``float64`` ndarray plus the graph
edges needed to backpropagate through it.  The graph is rebuilt on every
forward pass; :func:`backward` tops-sorts it from a scalar loss and
accumulates gradients into every reachable :class:`Parameter`.

Only the operations this artifact needs exist: matrix products (plain and
stacked), the elementwise suite, row softmax / normalization / layer norm,
and a few structural ops (reshape, transpose, concat, token selection) the
transformer forward is built from.  Rank <= 4 everywhere; no broadcasting
beyond row-vector addition.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

from .errors import ContractError, DegenerateInputError, ShapeError

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation-only forwards)."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def record_relu_inputs(sink: list):
    """Collect every relu input array seen inside the block.

    Finite-difference gradient checks are only valid when no relu
    pre-activation sits within the probe step of its kink; this lets tests
    verify that precondition on their chosen inputs.
    """
    prev = getattr(_state, "relu_sink", None)
    _state.relu_sink = sink
    try:
        yield
    finally:
        _state.relu_sink = prev


class Tensor:
    """A node in the computation graph; immutable once created."""

    __slots__ = ("data", "grad", "_parents", "_bwd", "needs_grad")

    def __init__(self, data, _parents=(), _bwd=None):
        # Strided views are allowed internally; serialization boundaries
        # (checkpoints, digests) normalize to row-major bytes explicitly.
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = _parents
        self._bwd = _bwd
        self.needs_grad = any(p.needs_grad for p in _parents)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A graph-free view of the same values."""
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


class Parameter(Tensor):
    """A named, trainable leaf. ``grad`` persists across steps until zeroed."""

    __slots__ = ("name", "frozen")

    def __init__(self, value, name: str):
        super().__init__(value)
        self.name = name
        self.frozen = False
        self.grad = np.zeros_like(self.data)
        self.needs_grad = True


def make_node(data, parents, bwd) -> Tensor:
    """Create a graph node; records edges only while gradients are enabled.

    ``bwd(g)`` must add this node's contribution into each parent's ``grad``
    via :func:`accumulate`.  Fused operations (the losses) use this hook.
    Constant subgraphs (no parameter upstream) record no edges at all.
    """
    parents = tuple(parents)
    if _grad_enabled() and any(p.needs_grad for p in parents):
        return Tensor(data, _parents=parents, _bwd=bwd)
    return Tensor(data)


def accumulate(t: Tensor, g: np.ndarray) -> None:
    """Add ``g`` into ``t.grad``; the first touch copies instead of zero-fill.

    Skips tensors with no parameter upstream: their gradients feed nothing.
    """
    if not t.needs_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def accumulate_owned(t: Tensor, g: np.ndarray) -> None:
    """Like :func:`accumulate` for a freshly-allocated ``g`` the caller will
    never touch again; the first accumulation adopts it without copying."""
    if not t.needs_grad:
        return
    if t.grad is None:
        t.grad = g
    else:
        t.grad += g


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss node.

    Populates ``grad`` on every reachable node; parameters not on the path
    keep whatever is already in their buffer (zeros after an optimizer step).
    """
    if loss.data.shape != ():
        raise ContractError(
            f"backward requires a scalar loss, got shape {loss.data.shape}"
        )
    # Iterative topological sort; graphs are rebuilt per step and small,
    # but recursion limits are not worth tripping over.
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    accumulate(loss, np.ones((), dtype=np.float64))
    for node in reversed(topo):
        if node._bwd is not None:
            node._bwd(node.grad)


# ---------------------------------------------------------------------------
# matrix products


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for 2-D operands, or stacked products for equal leading dims."""
    if a.ndim == 2 and b.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: inner dims disagree for {a.shape} @ {b.shape}")
    elif a.ndim == b.ndim and a.ndim in (3, 4):
        if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul: incompatible stacked shapes {a.shape} @ {b.shape}")
    else:
        raise ShapeError(f"matmul: unsupported ranks for {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bwd(g):
        if a.needs_grad:
            accumulate_owned(a, np.matmul(g, b.data.swapaxes(-1, -2)))
        if b.needs_grad:
            accumulate_owned(b, np.matmul(a.data.swapaxes(-1, -2), g))

    return make_node(out, (a, b), bwd)


# ---------------------------------------------------------------------------
# elementwise suite


def _suffix_axes(big, small):
    """Leading axes of `big` to sum over so a gradient collapses to `small`."""
    if big == small:
        return ()
    if len(small) < len(big) and big[len(big) - len(small):] == small:
        return tuple(range(len(big) - len(small)))
    raise ShapeError(f"shapes {big} and {small} are not addable")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a trailing-shape of ``a`` (bias rows)."""
    axes = _suffix_axes(a.shape, b.shape)
    out = a.data + b.data

    def bwd(g):
        accumulate(a, g)
        if axes:
            accumulate_owned(b, g.sum(axis=axes))
        else:
            accumulate(b, g)

    return make_node(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    axes = _suffix_axes(a.shape, b.shape)
    out = a.data - b.data

    def bwd(g):
        accumulate(a, g)
        if b.needs_grad:
            accumulate_owned(b, -(g.sum(axis=axes) if axes else g))

    return make_node(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product of same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    out = a.data * b.data

    def bwd(g):
        if a.needs_grad:
            accumulate_owned(a, g * b.data)
        if b.needs_grad:
            accumulate_owned(b, g * a.data)

    return make_node(out, (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = a.data * s

    def bwd(g):
        accumulate_owned(a, g * s)

    return make_node(out, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    sink = getattr(_state, "relu_sink", None)
    if sink is not None:
        sink.append(a.data)
    out = np.maximum(a.data, 0.0)

    def bwd(g):
        accumulate_owned(a, g * (a.data > 0.0))

    return make_node(out, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def bwd(g):
        accumulate_owned(a, g * out)

    return make_node(out, (a,), bwd)


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)

    def bwd(g):
        accumulate_owned(a, g / a.data)

    return make_node(out, (a,), bwd)


def softmax_rows(a: Tensor) -> Tensor:
    """Stable softmax along the last axis (max-subtracted)."""
    out = a.data - a.data.max(axis=-1, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=-1, keepdims=True)

    def bwd(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        dx = g - inner
        dx *= out
        accumulate_owned(a, dx)

    return make_node(out, (a,), bwd)


def l2_normalize_rows(a: Tensor) -> Tensor:
    """Scale each last-axis row to unit Euclidean norm."""
    norms = np.sqrt((a.data ** 2).sum(axis=-1, keepdims=True))
    if (norms < 1e-300).any():
        raise DegenerateInputError("l2_normalize_rows: zero row cannot be normalized")
    out = a.data / norms

    def bwd(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        accumulate_owned(a, (g - out * inner) / norms)

    return make_node(out, (a,), bwd)


def layer_norm_rows(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each last-axis row to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ContractError("layer_norm_rows: eps must be positive")
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm_rows: gain/bias must have shape ({d},)")
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    var = (centered ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gain.data + bias.data

    def bwd(g):
        lead = tuple(range(g.ndim - 1))
        accumulate_owned(gain, (g * xhat).sum(axis=lead))
        accumulate_owned(bias, g.sum(axis=lead))
        if a.needs_grad:
            gx = g * gain.data
            dx = gx - gx.mean(axis=-1, keepdims=True)
            dx -= xhat * (gx * xhat).mean(axis=-1, keepdims=True)
            dx *= inv
            accumulate_owned(a, dx)

    return make_node(out, (a, gain, bias), bwd)


# ---------------------------------------------------------------------------
# structural ops


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    out = a.data.reshape(shape)

    def bwd(g):
        # A reshaped view of g is safe to adopt: g's buffer is dead once this
        # backward has run, and only parameters hold long-lived grads.
        accumulate_owned(a, g.reshape(a.shape))

    return make_node(out, (a,), bwd)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(int(x) for x in axes)
    inv = tuple(np.argsort(axes))
    out = a.data.transpose(axes)  # view; consumers copy only if they must

    def bwd(g):
        accumulate_owned(a, g.transpose(inv))

    return make_node(out, (a,), bwd)


def concat(parts, axis: int) -> Tensor:
    parts = list(parts)
    out = np.concatenate([p.data for p in parts], axis=axis)
    offsets = np.cumsum([p.data.shape[axis] for p in parts])[:-1]

    def bwd(g):
        for part, piece in zip(parts, np.split(g, offsets, axis=axis)):
            accumulate_owned(part, piece)  # disjoint slices of a dead buffer

    return make_node(out, tuple(parts), bwd)


def repeat0(a: Tensor, n: int) -> Tensor:
    """Tile a leading axis of size 1 up to ``n`` (class-token expansion)."""
    if a.shape[0] != 1:
        raise ShapeError(f"repeat0 expects leading axis 1, got {a.shape}")
    out = np.broadcast_to(a.data, (n,) + a.shape[1:]).copy()

    def bwd(g):
        accumulate_owned(a, g.sum(axis=0, keepdims=True))

    return make_node(out, (a,), bwd)


def select_token(a: Tensor, t: int) -> Tensor:
    """Pick token ``t`` from a B x T x d sequence batch."""
    out = a.data[:, t, :]

    def bwd(g):
        full = np.zeros_like(a.data)
        full[:, t, :] = g
        accumulate_owned(a, full)

    return make_node(out, (a,), bwd)


def mean_axis(a: Tensor, axis: int) -> Tensor:
    out = a.data.mean(axis=axis)
    n = a.shape[axis]

    def bwd(g):
        expanded = np.expand_dims(g / n, axis)
        accumulate(a, np.broadcast_to(expanded, a.shape))

    return make_node(out, (a,), bwd)


def sum_all(a: Tensor) -> Tensor:
    """Reduce every element to one scalar node."""
    out = np.asarray(a.data.sum())

    def bwd(g):
        accumulate(a, np.full_like(a.data, float(g)))

    return make_node(out, (a,), bwd)
