"""
Dense numpy layers with hand-written backward passes.

Every layer keeps a stack of forward caches: a training step may push several
passes (anchor, positive, negatives) through the same instance, and `backward`
consumes them last-in first-out while parameter gradients accumulate in `grads`
until `zero_grad`.
"""
import math
from typing import Dict, List

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, StateError

LAYER_KINDS = ("conv2d", "batchnorm2d", "relu", "maxpool2x2", "adaptiveavgpool", "dense")


def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype=np.float64) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    kind = ""

    def __init__(self, name: str):
        self.name = name
        self.params: Dict[str, np.ndarray] = {}
        self.buffers: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self._caches: List = []

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def pending(self) -> int:
        return len(self._caches)

    def zero_grad(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def clear_cache(self):
        self._caches.clear()

    def _push(self, cache):
        self._caches.append(cache)

    def _pop(self):
        if not self._caches:
            raise StateError(f"backward through '{self.name}' without a training forward pass")
        return self._caches.pop()

    def _accumulate(self, key: str, g: np.ndarray):
        if key in self.grads:
            self.grads[key] += g
        else:
            self.grads[key] = g.copy()

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


class Conv2d(Layer):
    """Stride-1 convolution, kernel k×k, zero padding p (p ≤ k-1)."""
    kind = "conv2d"

    def __init__(self, name, in_channels, out_channels, rng, kernel=3, padding=1,
                 dtype=np.float64):
        super().__init__(name)
        if padding > kernel - 1:
            raise ConfigError(f"padding {padding} exceeds kernel-1 for {kernel}x{kernel}", key=name)
        self.kernel = kernel
        self.padding = padding
        fan_in = in_channels * kernel * kernel
        self.params["weight"] = he_uniform(
            rng, (out_channels, in_channels, kernel, kernel), fan_in, dtype)
        self.params["bias"] = np.zeros(out_channels, dtype=dtype)
        self.zero_grad()

    def _pad(self, x, p):
        return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))

    def forward(self, x, training):
        w = self.params["weight"]
        if x.ndim != 4 or x.shape[1] != w.shape[1]:
            raise ConfigError(f"expected [B,{w.shape[1]},H,W], got {list(x.shape)}", key=self.name)
        k = self.kernel
        xp = self._pad(x, self.padding)
        win = sliding_window_view(xp, (k, k), axis=(2, 3))
        out = np.einsum("bchwij,ocij->bohw", win, w, optimize=True)
        out += self.params["bias"][None, :, None, None]
        if training:
            self._push(xp)
        return out

    def backward(self, dout):
        xp = self._pop()
        w = self.params["weight"]
        k = self.kernel
        win = sliding_window_view(xp, (k, k), axis=(2, 3))
        self._accumulate("weight", np.einsum("bchwij,bohw->ocij", win, dout, optimize=True))
        self._accumulate("bias", dout.sum(axis=(0, 2, 3)))
        # input gradient = full correlation of dout with the flipped kernel
        dp = self._pad(dout, k - 1 - self.padding)
        dwin = sliding_window_view(dp, (k, k), axis=(2, 3))
        return np.einsum("bohwij,ocij->bchw", dwin, w[:, :, ::-1, ::-1], optimize=True)


class BatchNorm2d(Layer):
    kind = "batchnorm2d"

    def __init__(self, name, channels, momentum=0.1, eps=1e-5, dtype=np.float64):
        super().__init__(name)
        self.momentum = momentum
        self.eps = eps
        self.track_running_stats = True
        self.params["weight"] = np.ones(channels, dtype=dtype)
        self.params["bias"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)
        self.zero_grad()

    def forward(self, x, training):
        gamma = self.params["weight"][None, :, None, None]
        beta = self.params["bias"][None, :, None, None]
        if x.ndim != 4 or x.shape[1] != gamma.shape[1]:
            raise ConfigError(f"expected [B,{gamma.shape[1]},H,W], got {list(x.shape)}",
                              key=self.name)
        if not training:
            rm = self.buffers["running_mean"][None, :, None, None]
            rv = self.buffers["running_var"][None, :, None, None]
            return gamma * (x - rm) / np.sqrt(rv + self.eps) + beta

        m = x.shape[0] * x.shape[2] * x.shape[3]
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        invstd = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * invstd[None, :, None, None]
        if self.track_running_stats:
            unbiased = var * m / (m - 1) if m > 1 else var
            mom = self.momentum
            self.buffers["running_mean"] = (1 - mom) * self.buffers["running_mean"] + mom * mean
            self.buffers["running_var"] = (1 - mom) * self.buffers["running_var"] + mom * unbiased
        self._push((xhat, invstd))
        return gamma * xhat + beta

    def backward(self, dout):
        xhat, invstd = self._pop()
        axes = (0, 2, 3)
        m = dout.shape[0] * dout.shape[2] * dout.shape[3]
        self._accumulate("weight", (dout * xhat).sum(axis=axes))
        self._accumulate("bias", dout.sum(axis=axes))
        dxhat = dout * self.params["weight"][None, :, None, None]
        s1 = dxhat.sum(axis=axes)[None, :, None, None]
        s2 = (dxhat * xhat).sum(axis=axes)[None, :, None, None]
        return invstd[None, :, None, None] / m * (m * dxhat - s1 - xhat * s2)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training):
        mask = x > 0
        if training:
            self._push(mask)
        return np.where(mask, x, 0.0).astype(x.dtype, copy=False)

    def backward(self, dout):
        return np.where(self._pop(), dout, 0.0).astype(dout.dtype, copy=False)


class MaxPool2x2(Layer):
    """2×2 window, stride 2. Ties go to the first maximum in the window."""
    kind = "maxpool2x2"

    def forward(self, x, training):
        b, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ConfigError(f"2x2 pooling needs even spatial extents, got {h}x{w}", key=self.name)
        win = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        win = win.reshape(b, c, h // 2, w // 2, 4)
        arg = win.argmax(axis=-1)
        if training:
            self._push((arg, x.shape))
        return np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        arg, shape = self._pop()
        b, c, h, w = shape
        dwin = np.zeros(dout.shape + (4,), dtype=dout.dtype)
        np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
        dwin = dwin.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return dwin.reshape(b, c, h, w)


class AdaptiveAvgPool(Layer):
    """Average to 1×1 and flatten: [B,C,H,W] -> [B,C]."""
    kind = "adaptiveavgpool"

    def forward(self, x, training):
        if training:
            self._push(x.shape)
        return x.mean(axis=(2, 3))

    def backward(self, dout):
        b, c, h, w = self._pop()
        return np.broadcast_to(dout[:, :, None, None] / (h * w), (b, c, h, w)).copy()


class Dense(Layer):
    """y = x Wᵀ + b with W of shape [out, in]."""
    kind = "dense"

    def __init__(self, name, in_features, out_features, rng, dtype=np.float64):
        super().__init__(name)
        self.params["weight"] = he_uniform(rng, (out_features, in_features), in_features, dtype)
        self.params["bias"] = np.zeros(out_features, dtype=dtype)
        self.zero_grad()

    def forward(self, x, training):
        w = self.params["weight"]
        if x.ndim != 2 or x.shape[1] != w.shape[1]:
            raise ConfigError(f"expected [B,{w.shape[1]}], got {list(x.shape)}", key=self.name)
        if training:
            self._push(x)
        return x @ w.T + self.params["bias"]

    def backward(self, dout):
        x = self._pop()
        self._accumulate("weight", dout.T @ x)
        self._accumulate("bias", dout.sum(axis=0))
        return dout @ self.params["weight"]
