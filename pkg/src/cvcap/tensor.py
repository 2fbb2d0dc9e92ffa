"""Dense float64 arrays with reverse-mode automatic differentiation.

Every array lives in a numpy buffer; the graph is recorded eagerly while
grad mode is on and replayed backwards by :meth:`Tensor.backward`.
"""

from __future__ import annotations

import contextlib
import struct
import threading

import numpy as np

_MODE = threading.local()


class DimensionError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


class UsageError(RuntimeError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    prev = grad_enabled()
    _MODE.enabled = False
    try:
        yield
    finally:
        _MODE.enabled = prev


def grad_enabled():
    return getattr(_MODE, "enabled", True)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def values(self):
        return self.data.ravel()

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise UsageError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topological_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar; broadcasting follows numpy and is undone in backward
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, -_as_tensor(other))

    def __rsub__(self, other):
        return add(_as_tensor(other), -self)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, (int, float)):
            raise TypeError("only division by a scalar is supported")
        return scale(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """A trainable leaf with a model-unique name."""

    __slots__ = ("name",)

    def __init__(self, data, name, requires_grad=True):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=requires_grad)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _topological_order(root):
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if g.shape != t.data.shape:
        g = np.broadcast_to(g, t.data.shape)
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _node(data, parents, backward):
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _norm_axes(axes, ndim):
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(sorted(set(a % ndim if -ndim <= a < ndim else _bad_axis(a, ndim) for a in axes)))
    return axes


def _bad_axis(a, ndim):
    raise DimensionError(f"axis {a} out of range for rank {ndim}")


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}") from None

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _node(out, (a, b), backward)


def mul(a, b):
    """Broadcasting elementwise product."""
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}") from None

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _node(out, (a, b), backward)


def hadamard(a, b):
    """Elementwise product of two tensors of identical shape."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"hadamard needs identical shapes, got {a.shape} and {b.shape}")
    return mul(a, b)


def scale(x, c):
    c = float(c)

    def backward(g):
        _accumulate(x, g * c)

    return _node(x.data * c, (x,), backward)


def tanh(x):
    y = np.tanh(x.data)

    def backward(g):
        _accumulate(x, g * (1.0 - y * y))

    return _node(y, (x,), backward)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x):
    y = _sigmoid(x.data)

    def backward(g):
        _accumulate(x, g * y * (1.0 - y))

    return _node(y, (x,), backward)


def relu(x):
    mask = x.data > 0

    def backward(g):
        _accumulate(x, g * mask)

    return _node(np.where(mask, x.data, 0.0), (x,), backward)


_POINTWISE = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu}


def pointwise(x, fn):
    try:
        return _POINTWISE[fn](x)
    except KeyError:
        raise ConfigurationError(f"unknown pointwise function {fn!r}") from None


def dropout(x, rate, training, rng):
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time."""
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def backward(g):
        _accumulate(x, g * keep)

    return _node(x.data * keep, (x,), backward)


# ---------------------------------------------------------------- shape ops


def reshape(x, shape):
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}") from None

    def backward(g):
        _accumulate(x, g.reshape(x.shape))

    return _node(out, (x,), backward)


def transpose(x, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        _accumulate(x, g.transpose(inv))

    return _node(x.data.transpose(axes), (x,), backward)


def concat(tensors, axis=-1):
    tensors = [_as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise DimensionError(f"cannot concatenate shapes {shapes}") from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accumulate(t, g[tuple(idx)])

    return _node(out, tensors, backward)


def take_rows(table, ids):
    """Gather rows of a 2-D table (embedding lookup)."""
    ids = np.asarray(ids, dtype=np.int64)
    out = table.data[ids]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        _accumulate(table, full)

    return _node(out, (table,), backward)


def select(x, index):
    """Basic numpy indexing (ints, slices, integer arrays on one axis)."""
    out = x.data[index]
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (int, slice)) or i is Ellipsis for i in parts)

    def backward(g):
        full = np.zeros_like(x.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        _accumulate(x, full)

    return _node(out, (x,), backward)


def _expand_layout(src, target, new_axes):
    target = tuple(target)
    if new_axes is not None:
        new_axes = tuple(a % len(target) for a in new_axes)
        kept = [i for i in range(len(target)) if i not in new_axes]
        if len(kept) != len(src):
            return None
        layout = [1] * len(target)
        for pos, n in zip(kept, src):
            layout[pos] = n
        return layout
    # numpy-style trailing alignment first, then leading alignment
    for lead in (len(target) - len(src), 0):
        if lead < 0:
            break
        layout = [1] * lead + list(src) + [1] * (len(target) - len(src) - lead)
        if all(s == t or s == 1 for s, t in zip(layout, target)):
            return layout
    return None


def expand(x, target_shape, new_axes=None):
    """Replicate ``x`` along inserted (or singleton) axes up to ``target_shape``.

    ``new_axes`` names the output positions that are new; when omitted the
    source dims are aligned to the trailing end of the target, falling back
    to the leading end.
    """
    target_shape = tuple(int(n) for n in target_shape)
    layout = _expand_layout(x.shape, target_shape, new_axes)
    if layout is None or not all(s == t or s == 1 for s, t in zip(layout, target_shape)):
        raise DimensionError(f"cannot expand {x.shape} to {target_shape}")
    layout = tuple(layout)
    out = np.broadcast_to(x.data.reshape(layout), target_shape)
    summed = tuple(i for i, (s, t) in enumerate(zip(layout, target_shape)) if s != t)

    def backward(g):
        if summed:
            g = g.sum(axis=summed, keepdims=True)
        _accumulate(x, g.reshape(x.shape))

    return _node(out, (x,), backward)


# ---------------------------------------------------------------- reductions


def reduce_sum(x, axes):
    axes = _norm_axes(axes, x.ndim)
    out = x.data.sum(axis=axes)

    def backward(g):
        _accumulate(x, np.broadcast_to(np.expand_dims(g, axes), x.shape))

    return _node(out, (x,), backward)


def reduce_mean(x, axes):
    axes = _norm_axes(axes, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = x.data.mean(axis=axes) if axes else x.data

    def backward(g):
        _accumulate(x, np.broadcast_to(np.expand_dims(g, axes), x.shape) / count)

    return _node(out, (x,), backward)


def sum_all(x):
    def backward(g):
        _accumulate(x, np.broadcast_to(g, x.shape))

    return _node(x.data.sum(), (x,), backward)


def softmax_over_axes(x, axes):
    if axes is None or (not isinstance(axes, int) and len(axes) == 0):
        raise ConfigurationError("softmax needs at least one axis")
    axes = _norm_axes(axes, x.ndim)
    z = x.data - x.data.max(axis=axes, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axes, keepdims=True)

    def backward(g):
        _accumulate(x, s * (g - (g * s).sum(axis=axes, keepdims=True)))

    return _node(s, (x,), backward)


def log_softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def backward(g):
        _accumulate(x, g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return _node(out, (x,), backward)


def cross_entropy(logits, targets, weights=None):
    """Weighted sum of token negative log-likelihoods.

    logits (M, V); targets (M,) int; weights (M,) or None for all ones.
    """
    targets = np.asarray(targets, dtype=np.int64)
    m = logits.shape[0]
    w = np.ones(m) if weights is None else np.asarray(weights, dtype=np.float64)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    nll = lse - z[np.arange(m), targets]

    def backward(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(m), targets] -= 1.0
        _accumulate(logits, g * p * w[:, None])

    return _node(np.dot(w, nll), (logits,), backward)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b):
    """Matrix product; ``a`` may carry leading batch dims, ``b`` is 2-D."""
    a, b = _as_tensor(a), _as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            a2 = a.data.reshape(-1, a.shape[-1])
            _accumulate(b, a2.T @ g.reshape(-1, b.shape[1]))

    return _node(out, (a, b), backward)


def linear(x, weight, bias=None):
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


def conv_output_size(size, kernel, stride, padding):
    span = size + 2 * padding - kernel
    if span < 0 or span % stride:
        raise ConfigurationError(
            f"non-integral conv output: size={size} kernel={kernel} "
            f"stride={stride} padding={padding}"
        )
    return span // stride + 1


def conv2d(x, kernels, stride=1, padding=0):
    """Cross-correlation of NHWC input with (kh, kw, Cin, Cout) kernels."""
    if x.ndim != 4 or kernels.ndim != 4 or x.shape[3] != kernels.shape[2]:
        raise DimensionError(f"conv2d shape mismatch: input {x.shape}, kernels {kernels.shape}")
    kh, kw, cin, cout = kernels.shape
    if kh < 1 or kw < 1 or stride < 1 or padding < 0:
        raise ConfigurationError("conv2d needs kernel >= 1, stride >= 1, padding >= 0")
    n, h, w, _ = x.shape
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    # (n, ho, wo, cin, kh, kw) -> (n, ho, wo, kh, kw, cin)
    patches = win[:, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
    patches = np.ascontiguousarray(patches.transpose(0, 1, 2, 4, 5, 3))
    cols = patches.reshape(n * ho * wo, kh * kw * cin)
    kmat = kernels.data.reshape(kh * kw * cin, cout)
    out = (cols @ kmat).reshape(n, ho, wo, cout)

    def backward(g):
        g2 = g.reshape(n * ho * wo, cout)
        if kernels.requires_grad:
            _accumulate(kernels, (cols.T @ g2).reshape(kh, kw, cin, cout))
        if x.requires_grad:
            dcols = (g2 @ kmat.T).reshape(n, ho, wo, kh, kw, cin)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, :, :, i, j]
            if padding:
                dxp = dxp[:, padding:-padding, padding:-padding]
            _accumulate(x, dxp)

    return _node(out, (x, kernels), backward)


# ---------------------------------------------------------------- optimizer


class Adam:
    """Adam with bias correction; state is kept per parameter name."""

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = {}

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step(self.params, self.lr, self.betas, self.eps, self.state)


def adam_step(params, lr, betas, eps, state):
    b1, b2 = betas
    for p in params:
        if not p.requires_grad:
            continue
        if p.grad is None:
            raise UsageError(f"parameter {getattr(p, 'name', p)!r} has no gradient")
        m, v, t = state.get(p.name, (np.zeros_like(p.data), np.zeros_like(p.data), 0))
        t += 1
        m = b1 * m + (1 - b1) * p.grad
        v = b2 * v + (1 - b2) * p.grad * p.grad
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
        state[p.name] = (m, v, t)


# ---------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = b"RAEC"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def dump_parameters(params):
    """Serialize named parameters to the RAEC checkpoint layout."""
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(params))]
    for p in params:
        name = p.name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name)))
        chunks.append(name)
        chunks.append(struct.pack("<I", p.ndim))
        chunks.append(struct.pack(f"<{p.ndim}Q", *p.shape))
        chunks.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return b"".join(chunks)


def load_parameters(blob):
    """Parse a RAEC checkpoint into an ordered ``{name: ndarray}`` dict."""
    view = memoryview(blob)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("checkpoint truncated")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, count = struct.unpack("<II", take(8))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = bytes(take(nlen)).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank))
        size = int(np.prod(dims)) if rank else 1
        vals = np.frombuffer(take(8 * size), dtype="<f8").astype(np.float64)
        out[name] = vals.reshape(dims)
    if pos != len(view):
        raise CheckpointError("trailing bytes after checkpoint")
    return out
