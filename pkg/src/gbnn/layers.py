"""Layer kernels with explicit forward/backward passes.

Every layer follows the same protocol::

    out, cache = layer.forward(x, mode="train", rng=rng)
    grad_x = layer.backward(grad_out, cache)

``backward`` accumulates parameter gradients into ``layer.grads`` unless the
layer is frozen, in which case parameter gradients are skipped but the input
gradient is still returned so that layers below keep learning.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DimensionError, UsageError

TRAIN = "train"
EVAL = "eval"
_MODES = (TRAIN, EVAL)


def _check_mode(mode):
    if mode not in _MODES:
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")


def he_uniform(rng, shape, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    """Base class; parameter-free layers only override the passes."""

    kind = "layer"

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.frozen = False

    @property
    def trainable(self):
        return bool(self.params) and not self.frozen

    def zero_grad(self):
        for name, p in self.params.items():
            self.grads[name] = np.zeros_like(p)

    def config(self):
        """Constructor arguments needed to rebuild the layer."""
        return {}

    def forward(self, x, mode=TRAIN, rng=None):
        raise NotImplementedError

    def backward(self, grad_out, cache):
        raise NotImplementedError

    def _accumulate(self, name, g):
        if self.frozen:
            return
        if name in self.grads:
            self.grads[name] += g
        else:
            self.grads[name] = g.copy()

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.config().items())
        flag = ", frozen" if self.frozen else ""
        return f"{type(self).__name__}({args}{flag})"


def _need_cache(cache):
    if cache is None:
        raise UsageError("backward called without a forward cache")


class Dense(Layer):
    """Affine map ``x @ W + b`` on N x in inputs."""

    kind = "dense"

    def __init__(self, in_features, out_features, rng=None):
        super().__init__()
        if in_features < 1 or out_features < 1:
            raise ConfigError("dense layer sizes must be >= 1")
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        rng = np.random.default_rng() if rng is None else rng
        self.params["W"] = he_uniform(rng, (self.in_features, self.out_features), self.in_features)
        self.params["b"] = np.zeros(self.out_features)
        self.zero_grad()

    def config(self):
        return {"in_features": self.in_features, "out_features": self.out_features}

    def forward(self, x, mode=TRAIN, rng=None):
        _check_mode(mode)
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise DimensionError(
                f"Dense expects (N, {self.in_features}) input, got {x.shape}")
        return x @ self.params["W"] + self.params["b"], x

    def backward(self, grad_out, cache):
        _need_cache(cache)
        x = cache
        if not self.frozen:
            self._accumulate("W", x.T @ grad_out)
            self._accumulate("b", grad_out.sum(axis=0))
        return grad_out @ self.params["W"].T


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, mode=TRAIN, rng=None):
        _check_mode(mode)
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, grad_out, cache):
        _need_cache(cache)
        return np.where(cache, grad_out, 0.0)


def _same_pads(k):
    lo = (k - 1) // 2
    return lo, k - 1 - lo


class Conv2D(Layer):
    """Stride-1 2-D convolution on NHWC tensors (im2col + one matmul).

    ``padding`` is ``"same"`` (output spatial size equals input) or
    ``"valid"``.  Filters have shape (kh, kw, in_channels, out_channels).
    """

    kind = "conv2d"

    def __init__(self, in_channels, out_channels, kernel_size=3, padding="same", rng=None):
        super().__init__()
        if isinstance(kernel_size, int):
            kernel_size = (kernel_size, kernel_size)
        kh, kw = (int(k) for k in kernel_size)
        if kh < 1 or kw < 1 or in_channels < 1 or out_channels < 1:
            raise ConfigError("conv kernel and channel counts must be >= 1")
        if padding not in ("same", "valid"):
            raise ConfigError(f"unknown padding mode {padding!r}")
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel_size = (kh, kw)
        self.padding = padding
        rng = np.random.default_rng() if rng is None else rng
        fan_in = kh * kw * self.in_channels
        self.params["W"] = he_uniform(rng, (kh, kw, self.in_channels, self.out_channels), fan_in)
        self.params["b"] = np.zeros(self.out_channels)
        self.zero_grad()

    def config(self):
        return {"in_channels": self.in_channels, "out_channels": self.out_channels,
                "kernel_size": list(self.kernel_size), "padding": self.padding}

    def _pad(self, x):
        if self.padding == "valid":
            return x
        (t, b), (l, r) = _same_pads(self.kernel_size[0]), _same_pads(self.kernel_size[1])
        if t == b == l == r == 0:
            return x
        return np.pad(x, ((0, 0), (t, b), (l, r), (0, 0)))

    def forward(self, x, mode=TRAIN, rng=None):
        _check_mode(mode)
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise DimensionError(
                f"Conv2D expects (N, H, W, {self.in_channels}) input, got {x.shape}")
        kh, kw = self.kernel_size
        xp = self._pad(x)
        n, hp, wp, c = xp.shape
        ho, wo = hp - kh + 1, wp - kw + 1
        if ho < 1 or wo < 1:
            raise DimensionError(f"input {x.shape} smaller than kernel {self.kernel_size}")
        # (N, Ho, Wo, C, kh, kw) -> rows ordered (kh, kw, C) to match W's layout
        win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * c)
        wmat = self.params["W"].reshape(kh * kw * c, self.out_channels)
        out = (cols @ wmat + self.params["b"]).reshape(n, ho, wo, self.out_channels)
        return out, (cols, x.shape, xp.shape)

    def backward(self, grad_out, cache):
        _need_cache(cache)
        cols, x_shape, xp_shape = cache
        kh, kw = self.kernel_size
        n, hp, wp, c = xp_shape
        ho, wo = hp - kh + 1, wp - kw + 1
        g = grad_out.reshape(n * ho * wo, self.out_channels)
        if not self.frozen:
            self._accumulate("W", (cols.T @ g).reshape(self.params["W"].shape))
            self._accumulate("b", g.sum(axis=0))
        # col2im: one matmul per kernel offset keeps every add contiguous
        g4 = g.reshape(n, ho, wo, self.out_channels)
        w = self.params["W"]
        dxp = np.zeros(xp_shape)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i:i + ho, j:j + wo, :] += g4 @ w[i, j].T
        if self.padding == "same":
            (t, _), (l, _) = _same_pads(kh), _same_pads(kw)
            dxp = dxp[:, t:t + x_shape[1], l:l + x_shape[2], :]
        return dxp


class MaxPool2D(Layer):
    """Non-overlapping max pooling; trailing rows/columns that do not fill a
    window are dropped (floor mode)."""

    kind = "maxpool2d"

    def __init__(self, pool_size=2):
        super().__init__()
        if isinstance(pool_size, int):
            pool_size = (pool_size, pool_size)
        self.pool_size = tuple(int(p) for p in pool_size)
        if min(self.pool_size) < 1:
            raise ConfigError("pool size must be >= 1")

    def config(self):
        return {"pool_size": list(self.pool_size)}

    def forward(self, x, mode=TRAIN, rng=None):
        _check_mode(mode)
        if x.ndim != 4:
            raise DimensionError(f"MaxPool2D expects NHWC input, got {x.shape}")
        ph, pw = self.pool_size
        n, h, w, c = x.shape
        ho, wo = h // ph, w // pw
        if ho < 1 or wo < 1:
            raise DimensionError(f"input {x.shape} smaller than pool {self.pool_size}")
        blocks = (x[:, :ho * ph, :wo * pw, :]
                  .reshape(n, ho, ph, wo, pw, c)
                  .transpose(0, 1, 3, 5, 2, 4)
                  .reshape(n, ho, wo, c, ph * pw))
        idx = blocks.argmax(axis=-1)
        out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
        return out, (idx, x.shape)

    def backward(self, grad_out, cache):
        _need_cache(cache)
        idx, x_shape = cache
        ph, pw = self.pool_size
        n, h, w, c = x_shape
        ho, wo = h // ph, w // pw
        blocks = np.zeros((n, ho, wo, c, ph * pw))
        np.put_along_axis(blocks, idx[..., None], grad_out[..., None], axis=-1)
        dx = np.zeros(x_shape)
        dx[:, :ho * ph, :wo * pw, :] = (blocks.reshape(n, ho, wo, c, ph, pw)
                                        .transpose(0, 1, 4, 2, 5, 3)
                                        .reshape(n, ho * ph, wo * pw, c))
        return dx


class BatchNorm(Layer):
    """Per-channel batch normalisation over every axis except the last.

    Running statistics follow ``running = momentum * running + (1 - momentum) * batch``
    and are the only statistics used in eval mode.
    """

    kind = "batchnorm"

    def __init__(self, channels, momentum=0.99, epsilon=1e-5):
        super().__init__()
        if channels < 1:
            raise ConfigError("batchnorm channel count must be >= 1")
        if not 0.0 <= momentum < 1.0 or epsilon <= 0:
            raise ConfigError("batchnorm needs momentum in [0, 1) and epsilon > 0")
        self.channels = int(channels)
        self.momentum = float(momentum)
        self.epsilon = float(epsilon)
        self.params["gamma"] = np.ones(self.channels)
        self.params["beta"] = np.zeros(self.channels)
        self.running_mean = np.zeros(self.channels)
        self.running_var = np.ones(self.channels)
        self.zero_grad()

    def config(self):
        return {"channels": self.channels, "momentum": self.momentum, "epsilon": self.epsilon}

    def forward(self, x, mode=TRAIN, rng=None):
        _check_mode(mode)
        if x.shape[-1] != self.channels:
            raise DimensionError(
                f"BatchNorm expects {self.channels} channels, got shape {x.shape}")
        gamma, beta = self.params["gamma"], self.params["beta"]
        if mode == EVAL:
            inv_std = 1.0 / np.sqrt(self.running_var + self.epsilon)
            return (x - self.running_mean) * (inv_std * gamma) + beta, None
        axes = tuple(range(x.ndim - 1))
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        inv_std = 1.0 / np.sqrt(var + self.epsilon)
        xhat = (x - mean) * inv_std
        m = self.momentum
        self.running_mean = m * self.running_mean + (1.0 - m) * mean
        self.running_var = m * self.running_var + (1.0 - m) * var
        return xhat * gamma + beta, (xhat, inv_std)

    def backward(self, grad_out, cache):
        if cache is None:
            raise UsageError("BatchNorm backward needs a train-mode forward cache")
        xhat, inv_std = cache
        axes = tuple(range(grad_out.ndim - 1))
        m = grad_out.size // self.channels
        dbeta = grad_out.sum(axis=axes)
        dgamma = (grad_out * xhat).sum(axis=axes)
        if not self.frozen:
            self._accumulate("gamma", dgamma)
            self._accumulate("beta", dbeta)
        dxhat = grad_out * self.params["gamma"]
        return (inv_std / m) * (m * dxhat - dxhat.sum(axis=axes)
                                - xhat * (dxhat * xhat).sum(axis=axes))


class Dropout(Layer):
    """Inverted dropout: surviving units are scaled by 1/(1-rate) at train time."""

    kind = "dropout"

    def __init__(self, rate):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = float(rate)

    def config(self):
        return {"rate": self.rate}

    def forward(self, x, mode=TRAIN, rng=None):
        _check_mode(mode)
        if mode == EVAL or self.rate == 0.0:
            return x, None
        if rng is None:
            raise UsageError("Dropout in train mode needs an rng")
        mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * mask, mask

    def backward(self, grad_out, cache):
        if cache is None:
            return grad_out
        return grad_out * cache


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, mode=TRAIN, rng=None):
        _check_mode(mode)
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad_out, cache):
        _need_cache(cache)
        return grad_out.reshape(cache)


LAYER_TYPES = {cls.kind: cls for cls in (Dense, ReLU, Conv2D, MaxPool2D, BatchNorm, Dropout, Flatten)}
