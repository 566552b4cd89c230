"""Dense tensors with reverse-mode automatic differentiation.

Only the operations the generator/critic networks and their losses need are
provided.  Every op records its inputs and a closure that pushes the output
cotangent back to them; :meth:`Tensor.backward` walks the graph once in
reverse topological order.
"""
import contextlib

import numpy as np

from . import kernels

DEFAULT_DTYPE = np.float64

_grad_enabled = True


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block (forward-only evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled():
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"
        self.name = name

    # -- bookkeeping -------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                g = np.zeros_like(node.data)
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- arithmetic sugar --------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self):
        return sum_(self)

    def mean(self):
        return mean(self)

    def abs(self):
        return abs_(self)


def _topo_order(root):
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


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out.op = op
    return out


def graph_nodes(root):
    """Topologically ordered (op, input ids) records of the graph under ``root``."""
    order = _topo_order(root)
    index = {id(n): i for i, n in enumerate(order)}
    return [(n.op, tuple(index[id(p)] for p in n._parents if id(p) in index)) for n in order]


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and b.size != 1 and a.size != 1:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and b.size != 1 and a.size != 1:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} differ")

    def backward(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    if not isinstance(b, Tensor):
        c = float(b)
        a = as_tensor(a)
        return _make(a.data * c, (a,), lambda g: (g * c,), "scale")
    a = as_tensor(a)
    if a.shape != b.shape and b.size != 1 and a.size != 1:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward, "mul")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    return np.full(shape, g.sum(), dtype=g.dtype) if int(np.prod(shape)) == 1 else g.reshape(shape)


def abs_(x):
    sign = np.sign(x.data)
    return _make(np.abs(x.data), (x,), lambda g: (g * sign,), "abs")


def tanh(x):
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def leaky_relu(x, slope=0.2):
    mask = x.data >= 0
    factor = np.where(mask, 1.0, slope).astype(x.dtype)
    return _make(x.data * factor, (x,), lambda g: (g * factor,), "leaky_relu")


def relu(x):
    return leaky_relu(x, 0.0)


def dropout(x, rate, rng, training=True):
    """Inverted dropout; identity when ``training`` is false or ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs a random generator")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return _make(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# ---------------------------------------------------------------------------
# reductions


def sum_(x):
    shape = x.shape
    return _make(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def mean(x):
    shape, n = x.shape, x.size
    return _make(np.asarray(x.data.mean()), (x,),
                 lambda g: (np.full(shape, g.reshape(()) / n, dtype=x.dtype),), "mean")


def l1_mean(a, b):
    """Mean absolute difference, the reconstruction norm used by the losses."""
    return mean(abs_(sub(a, b)))


# ---------------------------------------------------------------------------
# structure


def concat(tensors, axis=1):
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(np.take(g, range(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors)))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward, "concat")


def reshape(x, shape):
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def upsample2(x):
    """Nearest-neighbour 2x spatial upsampling of an NCHW tensor."""
    y = x.data.repeat(2, axis=2).repeat(2, axis=3)
    n, c, h, w = x.shape

    def backward(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _make(y, (x,), backward, "upsample2")


def maxpool2(x):
    """2x2 non-overlapping max pool.  Odd extents are zero-padded right/bottom.

    Gradient goes to the first maximal element of each window in row-major
    order, so ties resolve to the top-left.
    """
    n, c, h, w = x.shape
    ph, pw = h % 2, w % 2
    xd = np.pad(x.data, ((0, 0), (0, 0), (0, ph), (0, pw))) if (ph or pw) else x.data
    H, W = xd.shape[2] // 2, xd.shape[3] // 2
    win = xd.reshape(n, c, H, 2, W, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, H, W, 4)
    arg = win.argmax(axis=-1)
    y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gw = np.zeros((n, c, H, W, 4), dtype=g.dtype)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        gx = gw.reshape(n, c, H, W, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * H, 2 * W)
        return (gx[:, :, :h, :w],)

    return _make(y, (x,), backward, "maxpool2")


# ---------------------------------------------------------------------------
# convolution


def _check_conv(x, w, stride, padding, transposed=False):
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv expects 4-d input and kernels, got {x.shape} and {w.shape}")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    cin = w.shape[0] if transposed else w.shape[1]
    if x.shape[1] != cin:
        raise ShapeError(f"input has {x.shape[1]} channels but kernels expect {cin}")
    if not transposed:
        kh, kw = w.shape[2:]
        H, W = x.shape[2] + 2 * padding, x.shape[3] + 2 * padding
        if kh > H or kw > W:
            raise ShapeError(f"kernel {kh}x{kw} exceeds padded input {H}x{W}")


def _add_bias(y, b):
    if b is None:
        return y
    return y + b.data.reshape(1, -1, 1, 1)


def conv2d(x, w, b=None, stride=1, padding=0):
    """Cross-correlation of an (N, C_in, H, W) input with (C_out, C_in, kh, kw) kernels."""
    _check_conv(x, w, stride, padding)
    y = _add_bias(kernels.conv2d_forward(x.data, w.data, stride, padding), b)
    xs, ws = x.shape, w.shape

    def backward(g):
        gx = kernels.conv2d_backward_input(g, w.data, xs, stride, padding) if x.requires_grad else None
        gw = kernels.conv2d_backward_weight(x.data, g, ws, stride, padding) if w.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if b is not None and b.requires_grad else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _make(y, parents, backward, "conv2d")


def conv_transpose2d(x, w, b=None, stride=1, padding=0, output_padding=0):
    """Adjoint of :func:`conv2d`; kernels are laid out (C_in, C_out, kh, kw).

    Output extent is ``(H - 1) * stride - 2 * padding + kh + output_padding``;
    ``output_padding`` recovers rows that a strided conv2d floored away.
    """
    if not 0 <= output_padding < stride:
        raise ShapeError(f"output_padding must lie in [0, stride), got {output_padding}")
    _check_conv(x, w, stride, padding, transposed=True)
    n, _, h, wd = x.shape
    cin, cout, kh, kw = w.shape
    ho = (h - 1) * stride - 2 * padding + kh + output_padding
    wo = (wd - 1) * stride - 2 * padding + kw + output_padding
    if ho < 1 or wo < 1:
        raise ShapeError(f"transposed conv output would be {ho}x{wo}")
    out_shape = (n, cout, ho, wo)
    y = _add_bias(kernels.conv2d_backward_input(x.data, w.data, out_shape, stride, padding), b)
    ws = w.shape

    def backward(g):
        gx = kernels.conv2d_forward(g, w.data, stride, padding) if x.requires_grad else None
        gw = kernels.conv2d_backward_weight(g, x.data, ws, stride, padding) if w.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if b is not None and b.requires_grad else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _make(y, parents, backward, "conv_transpose2d")
