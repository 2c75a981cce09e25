"""Dense float64 tensors with reverse-mode gradients.

Every value flowing through the network is a ``Tensor``: a row-major
float64 array plus an optional gradient buffer.  Operations build a graph
of parent links and per-op backward closures; ``Tensor.backward`` walks it
in reverse topological order.  Correctness of every backward rule is
defined by ``gradcheck`` (central finite differences), not by the rule's
derivation.

Broadcasting is deliberately disabled for tensor-tensor elementwise ops
(equal shapes required); only tensor-scalar mixing is allowed.  Explicit
shape-changing ops (``expand``, ``reshape``, ``concat``) cover the rest.
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import DimensionError, DomainError, NumericError


class _State(threading.local):
    def __init__(self):
        self.grad_enabled = True


_STATE = _State()


def grad_enabled() -> bool:
    return _STATE.grad_enabled


class no_grad:
    """Context manager disabling graph construction (evaluation passes).

    The switch is thread-local, so concurrent evaluation on other threads
    does not observe it.
    """

    def __enter__(self):
        self._prev = _STATE.grad_enabled
        _STATE.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _STATE.grad_enabled = self._prev
        return False


def _validate_shape(shape):
    for d in shape:
        if d <= 0:
            raise DimensionError(f"tensor dimensions must be positive, got shape {tuple(shape)}")


def _check_finite(arr):
    if not np.all(np.isfinite(arr)):
        raise NumericError("non-finite value (NaN/Inf) produced")


class Tensor:
    """Dense float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        _validate_shape(arr.shape)
        _check_finite(arr)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        """Copy of the value with no graph links."""
        return Tensor(self.data.copy())

    # -- gradient plumbing ---------------------------------------------------

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)  # copy: g may be shared
        else:
            self.grad += g

    def backward(self):
        """Reverse-mode sweep from this (scalar) tensor."""
        if self.data.size != 1:
            raise DimensionError("backward() requires a scalar output")
        order = []
        seen = set()
        stack = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward_fn is None or node.grad is None:
                continue
            grads = node._backward_fn(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is not None and parent.requires_grad:
                    parent._accumulate(g)

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _op(data, parents, backward_fn):
    """Build a graph node; drops the graph when recording is off.

    Fast path for op outputs: shapes are inherited from validated inputs,
    and finiteness is screened via the sum (NaN/Inf propagate through it;
    a full scan confirms before raising).
    """
    data = np.asarray(data, dtype=np.float64)
    if not np.isfinite(data.sum()) and not np.all(np.isfinite(data)):
        raise NumericError("non-finite value (NaN/Inf) produced")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _STATE.grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward_fn = None
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _coerce_pair(a, b, opname):
    """Apply the scalar-only broadcasting rule for binary elementwise ops."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape and a.data.size != 1 and b.data.size != 1:
        raise DimensionError(f"{opname}: shapes {a.shape} and {b.shape} differ (only scalar broadcasting allowed)")
    return a, b


def _unbroadcast(g, shape):
    """Reduce a gradient back to `shape` (scalar or identical shapes only)."""
    if g.shape == tuple(shape):
        return g
    return np.sum(g).reshape(shape) if np.prod(shape, dtype=int) == 1 else g.reshape(shape)


# -- elementwise ops -----------------------------------------------------------


def add(a, b):
    a, b = _coerce_pair(a, b, "add")
    return _op(a.data + b.data, (a, b),
               lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = _coerce_pair(a, b, "sub")
    return _op(a.data - b.data, (a, b),
               lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = _coerce_pair(a, b, "mul")
    return _op(a.data * b.data, (a, b),
               lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def neg(a):
    a = as_tensor(a)
    return _op(-a.data, (a,), lambda g: (-g,))


def sigmoid(a):
    a = as_tensor(a)
    # Stable two-branch logistic.
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _op(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _op(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _op(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log requires strictly positive input")
    return _op(np.log(a.data), (a,), lambda g: (g / a.data,))


# -- reductions and structure ---------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            return (np.full_like(a.data, float(g) if np.ndim(g) == 0 else g.reshape(-1)[0]),)
        ge = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(ge, a.data.shape).copy(),)

    return _op(out, (a,), back)


def mean(a, axis=None):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis), 1.0 / n)


def softmax(a, axis=-1):
    """Max-subtracted softmax along `axis`; rows sum to one."""
    a = as_tensor(a)
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def back(g):
        dot = np.sum(g * out, axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return _op(out, (a,), back)


def reshape(a, shape):
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.data.size:
        raise DimensionError(f"cannot reshape {a.shape} to {shape}")
    _validate_shape(shape)
    return _op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a):
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")
    return _op(a.data.T.copy(), (a,), lambda g: (g.T,))


def concat(parts, axis=0):
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise DomainError("concat of zero tensors")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=axis))

    return _op(out, tuple(parts), back)


def expand(a, shape):
    """Explicit broadcast of `a` to `shape`; backward sums over the new axes."""
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    _validate_shape(shape)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError as e:
        raise DimensionError(f"cannot expand {a.shape} to {shape}: {e}") from None

    def back(g):
        src = a.data.shape
        nd_extra = len(shape) - len(src)
        g2 = g.sum(axis=tuple(range(nd_extra))) if nd_extra else g
        axes = tuple(i for i, (gs, ss) in enumerate(zip(g2.shape, src)) if ss == 1 and gs != 1)
        if axes:
            g2 = g2.sum(axis=axes, keepdims=True)
        return (g2.reshape(src),)

    return _op(out, (a,), back)


def take_row(a, index):
    """Row `index` of a matrix (embedding lookup); backward scatters."""
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError(f"take_row expects a matrix, got shape {a.shape}")
    i = int(index)
    if not 0 <= i < a.data.shape[0]:
        raise DomainError(f"row {i} out of range for {a.shape}")

    def back(g):
        full = np.zeros_like(a.data)
        full[i] = g
        return (full,)

    return _op(a.data[i].copy(), (a,), back)


def matmul(a, b):
    """Matrix product: (M,K)@(K,N), (M,K)@(K,), or (K,)@(K,N)."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise DimensionError(f"matmul supports rank 1 or 2, got {a.shape} @ {b.shape}")
    ka = a.data.shape[-1]
    kb = b.data.shape[0]
    if ka != kb:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def back(g):
        ad, bd = a.data, b.data
        if ad.ndim == 2 and bd.ndim == 2:
            return (g @ bd.T, ad.T @ g)
        if ad.ndim == 2 and bd.ndim == 1:
            return (np.outer(g, bd), ad.T @ g)
        if ad.ndim == 1 and bd.ndim == 2:
            return (g @ bd.T, np.outer(ad, g))
        return (g * bd, g * ad)  # vector dot -> scalar

    return _op(out, (a, b), back)


def dot(a, b):
    """Inner product of two equal-length vectors."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.data.ndim != 1 or b.data.ndim != 1 or a.shape != b.shape:
        raise DimensionError(f"dot expects equal-length vectors, got {a.shape}, {b.shape}")
    return _op(np.dot(a.data, b.data), (a, b), lambda g: (g * b.data, g * a.data))


# -- parameters -----------------------------------------------------------------


class Parameter:
    """Named trainable tensor; the tensor's grad buffer is the accumulator."""

    def __init__(self, value, name: str):
        self.value = as_tensor(value)
        self.value.requires_grad = True
        self.value.zero_grad()
        self.name = name

    @property
    def data(self):
        return self.value.data

    @property
    def grad(self):
        return self.value.grad

    def zero_grad(self):
        self.value.zero_grad()

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.value.shape})"


# -- finite-difference gradient checking -----------------------------------------


def gradcheck(f, params, step=1e-5):
    """Max relative error between analytic and central-difference gradients.

    `f` is a deterministic closure over `params` (Parameters or Tensors
    with requires_grad) returning a scalar Tensor.  Relative error per
    entry is |g_a - g_n| / max(|g_a|, |g_n|, 1e-8).
    """
    tensors = [p.value if isinstance(p, Parameter) else p for p in params]
    for t in tensors:
        t.zero_grad()
    out = f()
    out.backward()
    analytic = [t.grad.copy() for t in tensors]

    worst = 0.0
    with no_grad():
        for t, ga in zip(tensors, analytic):
            flat = t.data.reshape(-1)
            gflat = ga.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                f_plus = f().item()
                flat[i] = orig - step
                f_minus = f().item()
                flat[i] = orig
                gn = (f_plus - f_minus) / (2.0 * step)
                denom = max(abs(gflat[i]), abs(gn), 1e-8)
                worst = max(worst, abs(gflat[i] - gn) / denom)
    return worst
