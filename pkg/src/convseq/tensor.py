"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array and records the operations applied to it on an
implicit tape (parent links plus backward closures). Calling ``backward`` on a
scalar loss walks the tape in reverse topological order and accumulates
gradients into every ``requires_grad`` leaf that contributed to the loss.

Double precision is the default dtype; correctness tests rely on it. Single
precision is only intended for throughput benchmarking.

Broadcasting is deliberately limited to the vector-over-matrix case used by
bias additions; everything else requires exact shape agreement.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


class Tensor:
    """A dense n-dimensional array that participates in a computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, values, requires_grad=False, name=None, dtype=np.float64):
        data = np.asarray(values, dtype=dtype)
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def accumulate_grad(self, delta):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += delta

    def detach(self):
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self, parameters=None):
        """Populate gradients of everything reachable from this scalar loss.

        ``parameters``, when given, is an iterable of leaf tensors that must
        end up with a gradient even if they did not contribute to the loss
        (they receive zeros).
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in order:
            if node._backward is not None:
                node._backward(node.grad)
        if parameters is not None:
            for p in parameters:
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)


def _topo_order(root):
    """Reverse topological order of the graph rooted at ``root`` (iterative)."""
    order = []
    visited = set()
    stack = [(root, iter(root._parents))]
    visited.add(id(root))
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if id(p) not in visited:
                visited.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            stack.pop()
            order.append(node)
    order.reverse()
    return order


def _make(data, parents, backward_fn):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out.name = None
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def constant(values, dtype=np.float64):
    return Tensor(values, dtype=dtype)


# -- primitive operations ---------------------------------------------------


def matmul(a, b, transpose_b=False):
    """Matrix product ``a @ b`` (or ``a @ b.T`` when ``transpose_b``)."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects matrices, got {a.shape} and {b.shape}")
    inner_a = a.shape[1]
    inner_b = b.shape[1] if transpose_b else b.shape[0]
    if inner_a != inner_b:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    if transpose_b:
        data = a.data @ b.data.T
    else:
        data = a.data @ b.data

    def backward(grad):
        if transpose_b:
            if a.requires_grad:
                a.accumulate_grad(grad @ b.data)
            if b.requires_grad:
                b.accumulate_grad(grad.T @ a.data)
        else:
            if a.requires_grad:
                a.accumulate_grad(grad @ b.data.T)
            if b.requires_grad:
                b.accumulate_grad(a.data.T @ grad)

    return _make(data, (a, b), backward)


def add(a, b):
    """Elementwise sum; also supports matrix + trailing-axis vector (bias)."""
    if a.shape == b.shape:
        data = a.data + b.data

        def backward(grad):
            if a.requires_grad:
                a.accumulate_grad(grad)
            if b.requires_grad:
                b.accumulate_grad(grad)

    elif b.data.ndim == 1 and a.data.ndim == 2 and a.shape[1] == b.shape[0]:
        data = a.data + b.data

        def backward(grad):
            if a.requires_grad:
                a.accumulate_grad(grad)
            if b.requires_grad:
                b.accumulate_grad(grad.sum(axis=0))

    else:
        raise ShapeError(f"add shapes incompatible: {a.shape} vs {b.shape}")
    return _make(data, (a, b), backward)


def add_const(a, values):
    """Add a non-differentiable constant array (masks, positional signals)."""
    values = np.asarray(values, dtype=a.data.dtype)
    if values.shape != a.shape:
        raise ShapeError(f"add_const shapes differ: {a.shape} vs {values.shape}")
    data = a.data + values

    def backward(grad):
        if a.requires_grad:
            a.accumulate_grad(grad)

    return _make(data, (a,), backward)


def mul(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes differ: {a.shape} vs {b.shape}")
    data = a.data * b.data

    def backward(grad):
        if a.requires_grad:
            a.accumulate_grad(grad * b.data)
        if b.requires_grad:
            b.accumulate_grad(grad * a.data)

    return _make(data, (a, b), backward)


def scale(a, s):
    s = float(s)
    data = a.data * s

    def backward(grad):
        if a.requires_grad:
            a.accumulate_grad(grad * s)

    return _make(data, (a,), backward)


def sigmoid(a):
    data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(grad):
        if a.requires_grad:
            a.accumulate_grad(grad * data * (1.0 - data))

    return _make(data, (a,), backward)


def relu(a):
    data = np.maximum(a.data, 0.0)

    def backward(grad):
        if a.requires_grad:
            a.accumulate_grad(grad * (a.data > 0))

    return _make(data, (a,), backward)


def softmax(a, axis):
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"softmax axis {axis} out of bounds for rank {a.data.ndim}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(grad):
        if a.requires_grad:
            inner = (grad * data).sum(axis=axis, keepdims=True)
            a.accumulate_grad((grad - inner) * data)

    return _make(data, (a,), backward)


def layer_norm(x, gamma, beta, eps=1e-6):
    """Normalize over the last axis to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ValueError("layer_norm requires eps > 0 to guard the division")
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm affine params must have shape ({d},), "
            f"got {gamma.shape} and {beta.shape}"
        )
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    data = gamma.data * xhat + beta.data

    def backward(grad):
        if gamma.requires_grad:
            gamma.accumulate_grad((grad * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            beta.accumulate_grad(grad.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            dxhat = grad * gamma.data
            term = dxhat - dxhat.mean(axis=-1, keepdims=True)
            term -= xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            x.accumulate_grad(inv * term)

    return _make(data, (x, gamma, beta), backward)


def tensor_sum(a):
    """Sum all entries into a scalar tensor."""
    data = np.asarray(a.data.sum())

    def backward(grad):
        if a.requires_grad:
            a.accumulate_grad(np.broadcast_to(grad, a.shape).astype(a.data.dtype))

    return _make(data, (a,), backward)


def reshape(a, shape):
    data = a.data.reshape(shape)

    def backward(grad):
        if a.requires_grad:
            a.accumulate_grad(grad.reshape(a.shape))

    return _make(data, (a,), backward)


def concat(tensors, axis):
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(grad):
        pieces = np.split(grad, splits, axis=axis)
        for t, g in zip(tensors, pieces):
            if t.requires_grad:
                t.accumulate_grad(g)

    return _make(data, tuple(tensors), backward)


def embed(table, ids):
    """Gather rows of ``table`` by integer ids; backward scatter-adds."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeError(f"embed expects a 1-d id sequence, got shape {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError(
            f"token id out of range [0, {table.shape[0]}): "
            f"min={ids.min()} max={ids.max()}"
        )
    data = table.data[ids]

    def backward(grad):
        if table.requires_grad:
            delta = np.zeros_like(table.data)
            np.add.at(delta, ids, grad)
            table.accumulate_grad(delta)

    return _make(data, (table,), backward)


# -- gradient checking ------------------------------------------------------


def finite_difference_gradients(f, tensors, eps=1e-5):
    """Central-difference gradient of scalar ``f()`` w.r.t. each tensor.

    ``f`` must recompute the loss from the current contents of ``tensors``.
    Every coordinate is perturbed, so keep the inputs small.
    """
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f().data)
            flat[i] = orig - eps
            lo = float(f().data)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * eps)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-8):
    """max |a - n| / max(|a|, |n|, floor) over all coordinates."""
    err = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        err = max(err, float(np.max(np.abs(a - n) / denom)))
    return err


def check_gradients(f, tensors, eps=1e-5):
    """Run ``f`` forward+backward, compare to finite differences.

    Returns the max relative error across all checked tensors.
    """
    for t in tensors:
        t.grad = None
    loss = f()
    loss.backward(parameters=tensors)
    analytic = [t.grad.copy() for t in tensors]
    numeric = finite_difference_gradients(f, tensors, eps=eps)
    return max_relative_error(analytic, numeric)


def directional_gradient_check(f, tensors, rng, eps=1e-6):
    """Directional-derivative check for large parameter sets.

    For each tensor draws a random unit direction v and compares
    (f(p + eps v) - f(p - eps v)) / (2 eps) against <grad, v>. Returns the
    max relative error over tensors. Much cheaper than a full coordinate
    sweep, and still an independent oracle for the analytic gradients.
    """
    for t in tensors:
        t.grad = None
    loss = f()
    loss.backward(parameters=tensors)
    worst = 0.0
    for t in tensors:
        v = rng.standard_normal(t.data.shape)
        norm = np.linalg.norm(v)
        if norm == 0:
            continue
        v /= norm
        analytic = float((t.grad * v).sum())
        orig = t.data.copy()
        t.data = orig + eps * v
        hi = float(f().data)
        t.data = orig - eps * v
        lo = float(f().data)
        t.data = orig
        numeric = (hi - lo) / (2.0 * eps)
        denom = max(abs(analytic), abs(numeric), 1e-6)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst
