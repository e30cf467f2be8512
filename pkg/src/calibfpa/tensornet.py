"""Small float64 layer kernel for the calibration network.

Every layer caches what it needs during ``forward(x, train=True)`` and
returns the input gradient from ``backward(dy)``, accumulating parameter
gradients into ``layer.grads``. There is no autodiff graph: a model calls
``backward`` on its layers in reverse order.

Weights use Kaiming-uniform fan-in initialization with the leaky-ReLU gain;
batch norm keeps the biased batch variance as its running statistic.
"""

from __future__ import annotations

import math
from typing import Dict, List, Tuple

import numpy as np

LEAKY_SLOPE = 0.01
BN_MOMENTUM = 0.1
BN_EPS = 1e-5


class Layer:
    params: Dict[str, np.ndarray]
    grads: Dict[str, np.ndarray]
    buffers: Dict[str, np.ndarray]

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.buffers = {}
        self._cache = None

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)

    def _need_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called without a recorded forward pass")
        return self._cache


def _kaiming_uniform(rng, shape, fan_in):
    gain = math.sqrt(2.0 / (1.0 + LEAKY_SLOPE**2))
    bound = gain * math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Layer):
    """2-D cross-correlation with zero padding, NCHW layout."""

    def __init__(self, cin, cout, kernel=3, stride=1, padding=1, bias=True, rng=None):
        super().__init__()
        rng = np.random.default_rng(rng)
        self.kernel, self.stride, self.padding = kernel, stride, padding
        self.params["weight"] = _kaiming_uniform(rng, (cout, cin, kernel, kernel), cin * kernel * kernel)
        if bias:
            self.params["bias"] = np.zeros(cout)
        self.zero_grad()

    def _out_size(self, n):
        return (n + 2 * self.padding - self.kernel) // self.stride + 1

    def _columns(self, xp, ho, wo):
        k, st = self.kernel, self.stride
        cols = [
            xp[:, :, u : u + st * (ho - 1) + 1 : st, v : v + st * (wo - 1) + 1 : st]
            for u in range(k)
            for v in range(k)
        ]
        # (B, C, k*k, Ho, Wo) -> (B*Ho*Wo, C*k*k)
        col = np.stack(cols, axis=2)
        b, c = xp.shape[:2]
        return col.transpose(0, 3, 4, 1, 2).reshape(b * ho * wo, c * k * k)

    def forward(self, x, train=False):
        W = self.params["weight"]
        if x.ndim != 4 or x.shape[1] != W.shape[1]:
            raise ValueError(f"conv expects (B, {W.shape[1]}, H, W) input, got {x.shape}")
        b, _, h, w = x.shape
        ho, wo = self._out_size(h), self._out_size(w)
        p = self.padding
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        col = self._columns(xp, ho, wo)
        out = col @ W.reshape(W.shape[0], -1).T
        if "bias" in self.params:
            out += self.params["bias"]
        if train:
            self._cache = (x.shape, col, ho, wo)
        return out.reshape(b, ho, wo, -1).transpose(0, 3, 1, 2)

    def backward(self, dy):
        xshape, col, ho, wo = self._need_cache()
        W = self.params["weight"]
        cout, cin, k, _ = W.shape
        b, _, h, w = xshape
        dy2 = dy.transpose(0, 2, 3, 1).reshape(-1, cout)
        self.grads["weight"] += (dy2.T @ col).reshape(W.shape)
        if "bias" in self.params:
            self.grads["bias"] += dy2.sum(axis=0)
        dcol = (dy2 @ W.reshape(cout, -1)).reshape(b, ho, wo, cin, k, k)
        p, st = self.padding, self.stride
        dxp = np.zeros((b, cin, h + 2 * p, w + 2 * p))
        for u in range(k):
            for v in range(k):
                dxp[:, :, u : u + st * (ho - 1) + 1 : st, v : v + st * (wo - 1) + 1 : st] += dcol[
                    :, :, :, :, u, v
                ].transpose(0, 3, 1, 2)
        return dxp[:, :, p : p + h, p : p + w] if p else dxp


class BatchNorm2d(Layer):
    def __init__(self, channels, momentum=BN_MOMENTUM, eps=BN_EPS):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)
        self.zero_grad()

    def forward(self, x, train=False):
        g = self.params["gamma"][None, :, None, None]
        bta = self.params["beta"][None, :, None, None]
        if not train:
            mean = self.buffers["running_mean"][None, :, None, None]
            var = self.buffers["running_var"][None, :, None, None]
            return (x - mean) / np.sqrt(var + self.eps) * g + bta
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
        rm *= 1.0 - self.momentum
        rm += self.momentum * mean
        rv *= 1.0 - self.momentum
        rv += self.momentum * var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        self._cache = (xhat, inv_std)
        return xhat * g + bta

    def backward(self, dy):
        xhat, inv_std = self._need_cache()
        self.grads["gamma"] += (dy * xhat).sum(axis=(0, 2, 3))
        self.grads["beta"] += dy.sum(axis=(0, 2, 3))
        dxhat = dy * self.params["gamma"][None, :, None, None]
        mean_d = dxhat.mean(axis=(0, 2, 3), keepdims=True)
        mean_dx = (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
        return (dxhat - mean_d - xhat * mean_dx) * inv_std[None, :, None, None]


class LeakyReLU(Layer):
    def __init__(self, slope=LEAKY_SLOPE):
        super().__init__()
        self.slope = slope

    def forward(self, x, train=False):
        pos = x > 0
        if train:
            self._cache = pos
        return np.where(pos, x, self.slope * x)

    def backward(self, dy):
        pos = self._need_cache()
        return np.where(pos, dy, self.slope * dy)


class Linear(Layer):
    def __init__(self, nin, nout, rng=None):
        super().__init__()
        rng = np.random.default_rng(rng)
        self.params["weight"] = _kaiming_uniform(rng, (nout, nin), nin)
        self.params["bias"] = np.zeros(nout)
        self.zero_grad()

    def forward(self, x, train=False):
        if train:
            self._cache = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, dy):
        x = self._need_cache()
        self.grads["weight"] += dy.T @ x
        self.grads["bias"] += dy.sum(axis=0)
        return dy @ self.params["weight"]


class Softplus(Layer):
    """``log(1 + e^x) + floor``; the floor keeps the output away from zero."""

    def __init__(self, floor=0.0):
        super().__init__()
        self.floor = floor

    def forward(self, x, train=False):
        if train:
            self._cache = x
        return np.logaddexp(0.0, x) + self.floor

    def backward(self, dy):
        x = self._need_cache()
        return dy / (1.0 + np.exp(-x))


def pixel_unshuffle(x: np.ndarray, s1: int, s2: int) -> np.ndarray:
    """``(B, C, H, W) -> (B, C*s1*s2, H/s1, W/s2)``.

    Output channel ``c*s1*s2 + i*s2 + j`` holds input pixels
    ``(h*s1 + i, w*s2 + j)`` of channel ``c``.
    """
    b, c, h, w = x.shape
    if h % s1 or w % s2:
        raise ValueError(f"spatial dims {(h, w)} not divisible by {(s1, s2)}")
    return (
        x.reshape(b, c, h // s1, s1, w // s2, s2)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(b, c * s1 * s2, h // s1, w // s2)
    )


def pixel_shuffle(x: np.ndarray, s1: int, s2: int) -> np.ndarray:
    """Inverse of :func:`pixel_unshuffle`."""
    b, cs, h, w = x.shape
    if cs % (s1 * s2):
        raise ValueError(f"channel count {cs} not divisible by {s1 * s2}")
    c = cs // (s1 * s2)
    return x.reshape(b, c, s1, s2, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(b, c, h * s1, w * s2)


class PixelUnshuffle(Layer):
    def __init__(self, s1, s2):
        super().__init__()
        self.s1, self.s2 = s1, s2

    def forward(self, x, train=False):
        if train:
            self._cache = True
        return pixel_unshuffle(x, self.s1, self.s2)

    def backward(self, dy):
        self._need_cache()
        return pixel_shuffle(dy, self.s1, self.s2)


class Sequential(Layer):
    def __init__(self, *layers):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def named_layers(self, prefix=""):
        for i, layer in enumerate(self.layers):
            name = f"{prefix}{i}"
            if isinstance(layer, Sequential):
                yield from layer.named_layers(name + ".")
            else:
                yield name, layer


def conv_bn_lrelu(cin, cout, rng=None) -> Sequential:
    """3x3 same-size convolution, batch norm, leaky ReLU."""
    return Sequential(Conv2d(cin, cout, 3, 1, 1, bias=False, rng=rng), BatchNorm2d(cout), LeakyReLU())


def l1_loss(pred: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean absolute error and its (sub)gradient; ``sign(0)`` is taken as 0."""
    diff = pred - target
    return float(np.abs(diff).mean()), np.sign(diff) / diff.size


class Adam:
    """Adam with bias correction and multiplicative per-epoch decay."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, decay=0.999):
        self.lr, self.beta1, self.beta2, self.eps, self.decay = lr, beta1, beta2, eps, decay
        self.step_count = 0
        self.m: Dict[int, np.ndarray] = {}
        self.v: Dict[int, np.ndarray] = {}

    def step(self, params: List[np.ndarray], grads: List[np.ndarray]):
        """Update ``params`` in place."""
        if len(params) != len(grads):
            raise ValueError("params and grads differ in length")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for i, (p, g) in enumerate(zip(params, grads)):
            if p.shape != g.shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
            m = self.m.setdefault(i, np.zeros_like(p))
            v = self.v.setdefault(i, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def epoch_end(self):
        self.lr *= self.decay
