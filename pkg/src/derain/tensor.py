"""Minimal reverse-mode autodiff on numpy arrays.

Only the operations the deraining network needs are provided. Tensors are
rank-4 (N, C, H, W) except for scalar losses. float32 is the working
precision; build everything in float64 when running finite-difference
gradient checks.
"""

import numpy as np

__all__ = [
    "Tensor", "ConvKernel", "ShapeError", "no_grad", "is_grad_enabled",
    "conv2d", "leaky_relu", "sigmoid", "tanh", "add", "sub", "mul",
    "scale", "one_minus", "narrow", "global_avg_pool", "mse_loss", "tsum",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


_grad_enabled = True


class no_grad:
    """Context manager that disables graph construction (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def is_grad_enabled():
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward_fn = None

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = g.copy() if g.base is not None or not g.flags.owndata else g
        else:
            self.grad += g

    # -- backward pass ------------------------------------------------------

    def backward(self):
        """Reverse-mode sweep from a scalar root.

        Gradients accumulate into .grad; call zero_grad between steps.
        """
        if self.data.size != 1:
            raise ShapeError(
                f"backward root must be scalar, got shape {self.data.shape}")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other, self))

    def __radd__(self, other):
        return add(_wrap(other, self), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self))

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)


def _wrap(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.broadcast_to(np.asarray(x, dtype=like.dtype), like.shape).copy())


def _make(data, parents, backward_fn):
    out = Tensor(data)
    if _grad_enabled and any(_tracked(p) for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if isinstance(p, Tensor))
        out._backward_fn = backward_fn
    return out


def _tracked(t):
    return isinstance(t, Tensor) and (t.requires_grad or t._parents)


# -- elementwise arithmetic -------------------------------------------------

def add(a, b):
    _check_same_shape("add", a, b)

    def backward(g):
        if _tracked(a):
            a._accumulate(g)
        if _tracked(b):
            # copy when both operands take the same array, so the two
            # .grad buffers never alias
            b._accumulate(g.copy() if _tracked(a) else g)

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b):
    _check_same_shape("sub", a, b)

    def backward(g):
        if _tracked(a):
            a._accumulate(g)
        if _tracked(b):
            b._accumulate(-g)

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b):
    """Elementwise product; b may be per-channel (N-or-1, C, 1, 1)."""
    if a.shape != b.shape:
        _check_channel_broadcast(a, b)

    def backward(g):
        if _tracked(a):
            a._accumulate(g * b.data)
        if _tracked(b):
            gb = g * a.data
            if b.shape != a.shape:
                axes = tuple(i for i in range(4)
                             if b.shape[i] == 1 and a.shape[i] != 1)
                gb = gb.sum(axis=axes, keepdims=True)
            b._accumulate(gb)

    return _make(a.data * b.data, (a, b), backward)


def scale(a, s):
    s = float(s)

    def backward(g):
        if _tracked(a):
            a._accumulate(g * s)

    return _make(a.data * s, (a,), backward)


def one_minus(a):
    def backward(g):
        if _tracked(a):
            a._accumulate(-g)

    return _make(1.0 - a.data, (a,), backward)


def _check_same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _check_channel_broadcast(a, b):
    ok = (len(a.shape) == 4 and len(b.shape) == 4
          and b.shape[2] == b.shape[3] == 1
          and b.shape[1] == a.shape[1]
          and b.shape[0] in (1, a.shape[0]))
    if not ok:
        raise ShapeError(
            f"mul: shape {b.shape} cannot channel-broadcast against {a.shape}")


# -- activations ------------------------------------------------------------

def leaky_relu(a, slope=0.2):
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must be in (0, 1), got {slope}")
    mask = a.data > 0

    def backward(g):
        if _tracked(a):
            a._accumulate(np.where(mask, g, g * slope))

    return _make(np.where(mask, a.data, a.data * slope), (a,), backward)


def sigmoid(a):
    x = a.data
    # exp only of non-positive arguments so large |x| cannot overflow
    z = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))

    def backward(g):
        if _tracked(a):
            a._accumulate(g * out * (1.0 - out))

    return _make(out, (a,), backward)


def tanh(a):
    out = np.tanh(a.data)

    def backward(g):
        if _tracked(a):
            a._accumulate(g * (1.0 - out * out))

    return _make(out, (a,), backward)


# -- reductions -------------------------------------------------------------

def global_avg_pool(a):
    """(N, C, H, W) -> (N, C, 1, 1) spatial mean."""
    n, c, h, w = a.shape
    out = a.data.mean(axis=(2, 3), keepdims=True)

    def backward(g):
        if _tracked(a):
            a._accumulate(np.broadcast_to(g / (h * w), a.shape).copy())

    return _make(out, (a,), backward)


def tsum(a):
    out = np.asarray(a.data.sum(), dtype=a.dtype)

    def backward(g):
        if _tracked(a):
            a._accumulate(np.broadcast_to(g, a.shape).copy())

    return _make(out, (a,), backward)


def narrow(a, start, stop):
    """Channel slice [:, start:stop] as a graph op (gates share one conv)."""
    if not 0 <= start < stop <= a.shape[1]:
        raise ShapeError(
            f"narrow [{start}:{stop}] out of range for shape {a.shape}")

    def backward(g):
        if _tracked(a):
            ga = np.zeros(a.shape, dtype=g.dtype)
            ga[:, start:stop] = g
            a._accumulate(ga)

    return _make(a.data[:, start:stop], (a,), backward)


def mse_loss(pred, target):
    """Mean of squared differences over every element."""
    _check_same_shape("mse_loss", pred, target)
    diff = pred.data - target.data
    n = diff.size
    out = np.asarray((diff * diff).sum() / n, dtype=pred.dtype)

    def backward(g):
        coef = 2.0 * g / n
        if _tracked(pred):
            pred._accumulate(coef * diff)
        if _tracked(target):
            target._accumulate(-coef * diff)

    return _make(out, (pred, target), backward)


# -- convolution ------------------------------------------------------------

class ConvKernel:
    """Dilated 2-D convolution weights.

    weights: (out_channels, in_channels, k, k); bias: (out_channels,) or None.
    Padding is fixed to dilation*(k-1)//2 so spatial size is preserved.
    """

    def __init__(self, weights, bias=None, dilation=1):
        w = weights if isinstance(weights, Tensor) else Tensor(weights)
        if w.data.ndim != 4 or w.shape[2] != w.shape[3]:
            raise ShapeError(f"kernel must be (O, I, k, k), got {w.shape}")
        k = w.shape[2]
        if k % 2 == 0:
            raise ShapeError(f"even kernel size {k} is not supported")
        if dilation < 1:
            raise ValueError(f"dilation must be >= 1, got {dilation}")
        self.weights = w
        self.bias = None
        if bias is not None:
            self.bias = bias if isinstance(bias, Tensor) else Tensor(bias)
            if self.bias.shape != (w.shape[0],):
                raise ShapeError(
                    f"bias shape {self.bias.shape} does not match "
                    f"{w.shape[0]} output channels")
        self.dilation = dilation
        self.padding = dilation * (k - 1) // 2

    @property
    def out_channels(self):
        return self.weights.shape[0]

    @property
    def in_channels(self):
        return self.weights.shape[1]

    @property
    def kernel_size(self):
        return self.weights.shape[2]


def _im2col(x, k, dilation, padding):
    """(N, C, H, W) -> (N, C*k*k, H*W) patch matrix for same-size output."""
    n, c, h, w = x.shape
    if padding:
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x
    cols = np.empty((n, c, k, k, h, w), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i * dilation:i * dilation + h,
                                  j * dilation:j * dilation + w]
    return cols.reshape(n, c * k * k, h * w)


def _col2im(gcols, shape, k, dilation, padding):
    """Adjoint of _im2col: scatter-add patch gradients back to the image."""
    n, c, h, w = shape
    g = gcols.reshape(n, c, k, k, h, w)
    gxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=gcols.dtype)
    for i in range(k):
        for j in range(k):
            gxp[:, :, i * dilation:i * dilation + h,
                j * dilation:j * dilation + w] += g[:, :, i, j]
    if padding:
        return gxp[:, :, padding:padding + h, padding:padding + w]
    return np.ascontiguousarray(gxp)


def conv2d(x, kernel):
    """Same-padding dilated cross-correlation plus bias.

    im2col + one matmul; the naive loop oracle lives in the test tree.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d input must be rank 4, got shape {x.shape}")
    if x.shape[1] != kernel.in_channels:
        raise ShapeError(
            f"conv2d: input has {x.shape[1]} channels (shape {x.shape}) but "
            f"kernel expects {kernel.in_channels} "
            f"(weights {kernel.weights.shape})")
    n, c, h, w = x.shape
    k, d, p = kernel.kernel_size, kernel.dilation, kernel.padding
    wt, bias = kernel.weights, kernel.bias

    cols = _im2col(x.data, k, d, p)
    w2 = wt.data.reshape(kernel.out_channels, c * k * k)
    out = np.matmul(w2[None], cols)             # (N, O, H*W)
    if bias is not None:
        out += bias.data[None, :, None]
    out = out.reshape(n, kernel.out_channels, h, w)

    # keep the patch matrix for the weight gradient; freed with the node
    saved_cols = cols if _grad_enabled and _tracked(wt) else None

    def backward(g):
        g2 = g.reshape(n, kernel.out_channels, h * w)
        if _tracked(wt):
            gw = np.matmul(g2, saved_cols.transpose(0, 2, 1)).sum(axis=0)
            wt._accumulate(gw.reshape(wt.shape))
        if bias is not None and _tracked(bias):
            bias._accumulate(g2.sum(axis=(0, 2)))
        if _tracked(x):
            gcols = np.matmul(w2.T[None], g2)
            x._accumulate(_col2im(gcols, x.shape, k, d, p))

    parents = (x, wt) if bias is None else (x, wt, bias)
    return _make(out, parents, backward)
