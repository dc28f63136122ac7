"""Dense tensors with tape-recorded reverse-mode differentiation.

Arrays are numpy, channels-last (N, H, W, C) for image ops. Ops record onto
the innermost active :class:`Tape` of the current thread; with no tape
active they run as plain inference and record nothing.
"""
from __future__ import annotations

import contextlib
import threading

import numpy as np

_local = threading.local()


class NonFiniteError(ValueError):
    pass


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


def _dtype():
    return getattr(_local, "dtype", np.float32)


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily change the dtype new tensors are cast to (float64 for grad checks)."""
    prev = _dtype()
    _local.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _local.dtype = prev


def _tape_stack():
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{what}: non-finite values")


class Tensor:
    __slots__ = ("data", "requires_grad", "parents", "backward_fn", "name", "__weakref__")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        if _backward is None:
            data = np.array(data, dtype=_dtype(), copy=True)
            _check_finite(data, name or "tensor")
        self.data = data
        self.requires_grad = requires_grad
        self.parents = _parents
        self.backward_fn = _backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def __repr__(self):
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, c):
        return scale(self, c)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    """Wrap an op result; record it if any parent needs grad and a tape is live."""
    needs = any(p.requires_grad for p in parents)
    stack = _tape_stack()
    if needs and stack:
        out = Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)
        stack[-1].nodes.append(out)
        return out
    return Tensor(data, _parents=(), _backward=_NO_GRAD)


def _NO_GRAD(g):  # placeholder so _make's outputs skip the leaf copy/finite check
    raise TapeError("tensor was produced outside a tape")


class Tape:
    """Records ops in execution order; ``backward`` replays them in reverse.

    Gradients live on the tape, keyed by node id, so parameters shared between
    tapes on different threads never race.
    """

    def __init__(self):
        self.nodes = []
        self.grads = {}
        self._done = False

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def backward(self, loss):
        if not self.nodes:
            raise TapeError("backward called without a recorded tape")
        if self._done:
            raise TapeError("tape already consumed; record a new one")
        if loss.data.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
        if loss.backward_fn is None or loss.backward_fn is _NO_GRAD:
            raise TapeError("loss is not reachable from the recorded tape")
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.get(id(node))
            if g is None:
                continue
            if node is not loss:
                # intermediate grads are not kept once propagated
                del grads[id(node)]
            parent_grads = node.backward_fn(g)
            for p, pg in zip(node.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                k = id(p)
                if k in grads:
                    grads[k] = grads[k] + pg
                else:
                    grads[k] = pg
        self.grads = grads
        self._done = True
        return grads

    def grad(self, t):
        g = self.grads.get(id(t))
        return np.zeros_like(t.data) if g is None else g


def _shape_eq(a, b, what):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


# --------------------------------------------------------------------------
# elementwise & structural ops


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _shape_eq(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _shape_eq(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def scale(a, c):
    c = float(c)
    return _make(a.data * a.data.dtype.type(c), (a,), lambda g: (g * c,))


def relu(x):
    mask = x.data > 0
    return _make(np.maximum(x.data, 0), (x,), lambda g: (g * mask,))


def hinge(x, margin):
    """``max(x + margin, 0)`` elementwise; zero subgradient at the kink."""
    z = x.data + x.data.dtype.type(margin)
    mask = z > 0
    return _make(np.where(mask, z, 0).astype(x.data.dtype), (x,), lambda g: (g * mask,))


def sqrt(x):
    if np.any(x.data < 0):
        raise ValueError("sqrt of negative values")
    y = np.sqrt(x.data)

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(y > 0, g / (2 * y), 0)
        return (d.astype(x.data.dtype),)

    return _make(y, (x,), backward)


def reshape(x, shape):
    old = x.data.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def sum_all(x):
    shape = x.data.shape
    return _make(np.asarray(x.data.sum(), dtype=x.data.dtype), (x,),
                 lambda g: (np.full(shape, g, dtype=x.data.dtype),))


def mean_all(x):
    n = x.data.size
    if n == 0:
        raise ShapeError("mean of empty tensor")
    return scale(sum_all(x), 1.0 / n)


def take(x, index):
    """Gather ``x.ravel()[index]``."""
    index = np.asarray(index, dtype=np.int64)
    shape = x.data.shape
    flat = x.data.reshape(-1)

    def backward(g):
        d = np.zeros(flat.shape, dtype=x.data.dtype)
        np.add.at(d, index.reshape(-1), g.reshape(-1))
        return (d.reshape(shape),)

    return _make(flat[index], (x,), backward)


def concat(xs, axis=0):
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ShapeError("concat of nothing")
    nd = xs[0].ndim
    axis = axis % nd
    for x in xs[1:]:
        if x.ndim != nd or any(x.shape[d] != xs[0].shape[d] for d in range(nd) if d != axis):
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in xs]}")
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([x.data for x in xs], axis=axis), tuple(xs),
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


def stack(xs, axis=0):
    xs = [as_tensor(x) for x in xs]
    expanded = [reshape(x, x.shape[:axis] + (1,) + x.shape[axis:]) for x in xs]
    return concat(expanded, axis=axis)


def max_over_axis(x, axis):
    """Max along ``axis``; gradient goes to the first (lowest-index) maximum."""
    axis = axis % x.ndim
    if x.shape[axis] == 0:
        raise ShapeError("max over empty axis")
    idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, idx, axis=axis)

    def backward(g):
        d = np.zeros_like(x.data)
        np.put_along_axis(d, idx, np.expand_dims(g, axis), axis=axis)
        return (d,)

    return _make(np.squeeze(out, axis), (x,), backward)


# --------------------------------------------------------------------------
# layers


def affine(x, w, b=None):
    """``x @ w + b`` for x (N, D), w (D, O), b (O,)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"affine: x {x.shape} incompatible with w {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"affine: bias {b.shape} does not match {w.shape[1]} outputs")
    out = x.data @ w.data
    if b is not None:
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gx = g @ w.data.T if x.requires_grad else None
        gw = x.data.T @ g if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return _make(out, parents, backward)


def _pair(v):
    return (v, v) if np.isscalar(v) else tuple(v)


def conv2d(x, k, stride=1, pad=0, bias=None):
    """2-D cross-correlation.

    x: (N, H, W, Cin); k: (kh, kw, Cin, Cout); bias: (Cout,).
    ``pad`` is zero padding on every side (``pad=1`` with a 3x3 kernel is 'same').
    """
    if x.ndim != 4 or k.ndim != 4 or x.shape[3] != k.shape[2]:
        raise ShapeError(f"conv2d: x {x.shape} incompatible with kernel {k.shape}")
    if bias is not None and bias.shape != (k.shape[3],):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match {k.shape[3]} channels")
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    n, h, w, cin = x.shape
    kh, kw, _, cout = k.shape
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{w}")
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if (ph or pw) else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, : (ho - 1) * sh + 1 : sh, : (wo - 1) * sw + 1 : sw]
    # (N, Ho, Wo, Cin, kh, kw) -> rows of (kh, kw, Cin) to match the kernel layout
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * cin)
    kmat = k.data.reshape(kh * kw * cin, cout)
    out = cols @ kmat
    if bias is not None:
        out += bias.data
    out = out.reshape(n, ho, wo, cout)
    parents = (x, k) if bias is None else (x, k, bias)

    def backward(g):
        g2 = g.reshape(n * ho * wo, cout)
        gk = (cols.T @ g2).reshape(k.shape) if k.requires_grad else None
        gx = None
        if x.requires_grad:
            dxp = np.zeros(xp.shape, dtype=x.data.dtype)
            kd = k.data
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i : i + (ho - 1) * sh + 1 : sh, j : j + (wo - 1) * sw + 1 : sw] += (
                        g2 @ kd[i, j].T
                    ).reshape(n, ho, wo, cin)
            gx = dxp[:, ph : ph + h, pw : pw + w]
        if bias is None:
            return gx, gk
        return gx, gk, g2.sum(axis=0)

    return _make(out, parents, backward)


def maxpool2d(x, k):
    """Non-overlapping max pooling with window ``k`` (int or (kh, kw)).

    Trailing rows/columns that do not fill a window are dropped. Ties resolve
    to the lowest row-major index inside the window.
    """
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d expects (N, H, W, C), got {x.shape}")
    kh, kw = _pair(k)
    n, h, w, c = x.shape
    ho, wo = h // kh, w // kw
    if ho == 0 or wo == 0:
        raise ShapeError(f"maxpool2d: window {kh}x{kw} larger than input {h}x{w}")
    offsets = [(i, j) for i in range(kh) for j in range(kw)]

    def view(arr, i, j):
        return arr[:, i : ho * kh : kh, j : wo * kw : kw]

    out = view(x.data, 0, 0).copy()
    for i, j in offsets[1:]:
        np.maximum(out, view(x.data, i, j), out=out)

    def backward(g):
        d = np.zeros(x.shape, dtype=x.data.dtype)
        taken = np.zeros(out.shape, dtype=bool)
        for i, j in offsets:
            # first offset (row-major) holding the max takes the gradient
            hit = view(x.data, i, j) == out
            hit &= ~taken
            taken |= hit
            np.multiply(g, hit, out=view(d, i, j))
        return (d,)

    return _make(out, (x,), backward)


def pairwise_sq_dist(a, b):
    """``D[i, j] = sum_d (a[i, d] - b[j, d])**2`` computed by direct differences."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"pairwise_sq_dist: {a.shape} vs {b.shape}")
    diff = a.data[:, None, :] - b.data[None, :, :]
    out = np.einsum("ijd,ijd->ij", diff, diff)

    def backward(g):
        gd = 2 * g[:, :, None] * diff
        return gd.sum(axis=1), -gd.sum(axis=0)

    return _make(out, (a, b), backward)
