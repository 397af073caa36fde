"""Composite layers: SE channel reweighting, conv+activation+SE, and the
three convolutional recurrent cells (ConvRNN / ConvGRU / ConvLSTM).

Gate kernels that share the same input are stacked along the output-channel
axis so each cell runs a minimum of convolutions per step. State-to-state
(U) kernels are ordinary 3x3 convolutions without bias; the gate bias lives
on the input-to-state (W) side, which also carries the layer's dilation.
"""

import numpy as np

from .tensor import (
    Tensor, ConvKernel, ShapeError, conv2d, leaky_relu, sigmoid, tanh,
    mul, add, narrow, one_minus, global_avg_pool,
)

__all__ = [
    "Conv2d", "SEBlock", "ConvSELayer",
    "ConvRNNCell", "ConvGRUCell", "ConvLSTMCell", "make_cell",
    "weight_param_count",
]


def he_std(fan_in, slope):
    # fan-in scaled Gaussian adjusted for the leaky ReLU negative slope
    return np.sqrt(2.0 / ((1.0 + slope * slope) * fan_in))


class Conv2d:
    def __init__(self, in_channels, out_channels, kernel_size, dilation=1,
                 bias=True, rng=None, dtype=np.float32, slope=0.2):
        rng = rng or np.random.default_rng(0)
        fan_in = in_channels * kernel_size * kernel_size
        w = rng.normal(0.0, he_std(fan_in, slope),
                       (out_channels, in_channels, kernel_size, kernel_size))
        wt = Tensor(w, requires_grad=True, dtype=dtype)
        bt = None
        if bias:
            bt = Tensor(np.zeros(out_channels), requires_grad=True, dtype=dtype)
        self.kernel = ConvKernel(wt, bt, dilation)

    def __call__(self, x):
        return conv2d(x, self.kernel)

    def named_parameters(self, prefix=""):
        out = [(prefix + "weight", self.kernel.weights)]
        if self.kernel.bias is not None:
            out.append((prefix + "bias", self.kernel.bias))
        return out

    def weight_count(self):
        return self.kernel.weights.data.size


class SEBlock:
    """Squeeze-and-excitation: global pool -> bottleneck -> sigmoid weights.

    The resulting per-channel weights act as learned, per-image brightness
    coefficients for the streak-layer embeddings they rescale.
    """

    def __init__(self, channels, ratio=4, slope=0.2, rng=None,
                 dtype=np.float32):
        if channels % ratio != 0:
            raise ShapeError(
                f"SE ratio {ratio} must divide channel count {channels}")
        self.channels = channels
        self.ratio = ratio
        self.slope = slope
        self.reduce = Conv2d(channels, channels // ratio, 1, rng=rng,
                             dtype=dtype, slope=slope)
        self.expand = Conv2d(channels // ratio, channels, 1, rng=rng,
                             dtype=dtype, slope=slope)

    def channel_weights(self, x):
        s = global_avg_pool(x)
        s = leaky_relu(self.reduce(s), self.slope)
        return sigmoid(self.expand(s))

    def __call__(self, x):
        if x.shape[1] != self.channels:
            raise ShapeError(
                f"SE block built for {self.channels} channels, "
                f"input has {x.shape[1]}")
        return mul(x, self.channel_weights(x))

    def named_parameters(self, prefix=""):
        return (self.reduce.named_parameters(prefix + "reduce.")
                + self.expand.named_parameters(prefix + "expand."))

    def weight_count(self):
        return self.reduce.weight_count() + self.expand.weight_count()


class ConvSELayer:
    """conv -> leaky ReLU -> SE, with the activation and SE both optional
    (the final 1x1 decoder layer uses neither)."""

    def __init__(self, in_channels, out_channels, kernel_size, dilation=1,
                 use_se=True, activate=True, slope=0.2, se_ratio=4,
                 rng=None, dtype=np.float32):
        self.conv = Conv2d(in_channels, out_channels, kernel_size, dilation,
                           rng=rng, dtype=dtype, slope=slope)
        self.slope = slope
        self.activate = activate
        self.se = None
        if use_se:
            self.se = SEBlock(out_channels, se_ratio, slope, rng, dtype)

    def __call__(self, x):
        y = self.conv(x)
        if self.activate:
            y = leaky_relu(y, self.slope)
        if self.se is not None:
            y = self.se(y)
        return y

    def named_parameters(self, prefix=""):
        out = self.conv.named_parameters(prefix + "conv.")
        if self.se is not None:
            out += self.se.named_parameters(prefix + "se.")
        return out

    def weight_count(self):
        return self.conv.weight_count()


class _CellBase:
    def init_state(self, n, h, w, dtype=np.float32):
        shape = (n, self.channels, h, w)
        return Tensor(np.zeros(shape, dtype=dtype))

    def weight_count(self):
        return sum(c.weight_count() for c in self._convs())

    def named_parameters(self, prefix=""):
        out = []
        for name, c in zip(self._conv_names(), self._convs()):
            out += c.named_parameters(f"{prefix}{name}.")
        return out


class ConvRNNCell(_CellBase):
    """h' = tanh(W * x + U * h + b); twice the weights of a plain conv."""

    kind = "rnn"

    def __init__(self, in_channels, channels, dilation=1, rng=None,
                 dtype=np.float32):
        self.channels = channels
        self.w = Conv2d(in_channels, channels, 3, dilation, bias=True,
                        rng=rng, dtype=dtype)
        self.u = Conv2d(channels, channels, 3, 1, bias=False, rng=rng,
                        dtype=dtype)

    def _convs(self):
        return [self.w, self.u]

    def _conv_names(self):
        return ["w", "u"]

    def step(self, x_in, h_prev):
        return tanh(add(self.w(x_in), self.u(h_prev)))


class ConvGRUCell(_CellBase):
    """Gated recurrent cell; z and r gate kernels are stacked with the
    candidate kernel on the W side, and with each other on the U side."""

    kind = "gru"

    def __init__(self, in_channels, channels, dilation=1, rng=None,
                 dtype=np.float32):
        self.channels = channels
        self.w_zrn = Conv2d(in_channels, 3 * channels, 3, dilation, bias=True,
                            rng=rng, dtype=dtype)
        self.u_zr = Conv2d(channels, 2 * channels, 3, 1, bias=False, rng=rng,
                           dtype=dtype)
        self.u_n = Conv2d(channels, channels, 3, 1, bias=False, rng=rng,
                          dtype=dtype)

    def _convs(self):
        return [self.w_zrn, self.u_zr, self.u_n]

    def _conv_names(self):
        return ["w_zrn", "u_zr", "u_n"]

    def step(self, x_in, h_prev):
        c = self.channels
        wx = self.w_zrn(x_in)
        uh = self.u_zr(h_prev)
        z = sigmoid(add(narrow(wx, 0, c), narrow(uh, 0, c)))
        r = sigmoid(add(narrow(wx, c, 2 * c), narrow(uh, c, 2 * c)))
        n = tanh(add(narrow(wx, 2 * c, 3 * c), self.u_n(mul(r, h_prev))))
        return add(mul(one_minus(z), h_prev), mul(z, n))


class ConvLSTMCell(_CellBase):
    """Four-gate convolutional LSTM (standard form):
    i, f, o sigmoid gates, tanh candidate g; c' = f.c + i.g; h' = o.tanh(c').
    """

    kind = "lstm"

    def __init__(self, in_channels, channels, dilation=1, rng=None,
                 dtype=np.float32):
        self.channels = channels
        self.w_ifgo = Conv2d(in_channels, 4 * channels, 3, dilation, bias=True,
                             rng=rng, dtype=dtype)
        self.u_ifgo = Conv2d(channels, 4 * channels, 3, 1, bias=False,
                             rng=rng, dtype=dtype)

    def _convs(self):
        return [self.w_ifgo, self.u_ifgo]

    def _conv_names(self):
        return ["w_ifgo", "u_ifgo"]

    def step(self, x_in, h_prev, c_prev):
        c = self.channels
        pre = add(self.w_ifgo(x_in), self.u_ifgo(h_prev))
        i = sigmoid(narrow(pre, 0, c))
        f = sigmoid(narrow(pre, c, 2 * c))
        g = tanh(narrow(pre, 2 * c, 3 * c))
        o = sigmoid(narrow(pre, 3 * c, 4 * c))
        c_new = add(mul(f, c_prev), mul(i, g))
        h_new = mul(o, tanh(c_new))
        return h_new, c_new

    def init_state(self, n, h, w, dtype=np.float32):
        z = np.zeros((n, self.channels, h, w), dtype=dtype)
        return Tensor(z), Tensor(z.copy())


_CELLS = {"rnn": ConvRNNCell, "gru": ConvGRUCell, "lstm": ConvLSTMCell}


def make_cell(kind, in_channels, channels, dilation=1, rng=None,
              dtype=np.float32):
    try:
        cls = _CELLS[kind]
    except KeyError:
        raise ValueError(f"unknown recurrent unit {kind!r}, "
                         f"expected one of {sorted(_CELLS)}") from None
    return cls(in_channels, channels, dilation, rng, dtype)


def weight_param_count(block):
    """Weight-tensor element count, biases excluded."""
    return block.weight_count()
