"""Minimal feed-forward/convolutional network framework trained by Rprop.

Shared by the temperature forecaster (dense sigmoid net) and the Gamma
parameter estimator (conv/batch-norm/dropout stack).  Everything is plain
numpy; training is full-batch and deterministic given a seed.  The update
rule is iRprop- (sign-based step adaptation with gradient zeroing on sign
flips).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError

__all__ = [
    "RpropConfig",
    "Dense",
    "Conv2D",
    "Pool2D",
    "BatchNorm",
    "Dropout",
    "Flatten",
    "Network",
    "Rprop",
    "ACTIVATIONS",
]


@dataclass(frozen=True)
class RpropConfig:
    """Riedmiller's standard constants; see the invariants in __post_init__."""

    eta_plus: float = 1.2
    eta_minus: float = 0.5
    delta_init: float = 0.1
    delta_max: float = 50.0
    delta_min: float = 1e-6
    max_epochs: int = 1000
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.eta_minus < 1.0 < self.eta_plus:
            raise ValueError("need 0 < eta_minus < 1 < eta_plus")
        if not self.delta_min < self.delta_init < self.delta_max:
            raise ValueError("need delta_min < delta_init < delta_max")


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


ACTIVATIONS = {
    "sigmoid": (_sigmoid, lambda a: a * (1.0 - a)),
    "relu": (lambda z: np.maximum(z, 0.0), lambda a: (a > 0.0).astype(a.dtype)),
    "identity": (lambda z: z, lambda a: np.ones_like(a)),
}


class Layer:
    """Base layer; params/grads are parallel lists of arrays."""

    def params(self) -> list[np.ndarray]:
        return []

    def grads(self) -> list[np.ndarray]:
        return []

    def forward(self, x: np.ndarray, training: bool, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, activation: str = "sigmoid",
                 rng: np.random.Generator | None = None, init: str = "uniform"):
        rng = rng or np.random.default_rng(0)
        if init == "uniform":
            self.W = rng.uniform(-0.5, 0.5, (n_in, n_out))
            self.b = rng.uniform(-0.5, 0.5, n_out)
        else:  # he
            self.W = rng.normal(0.0, math.sqrt(2.0 / n_in), (n_in, n_out))
            self.b = np.zeros(n_out)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self.activation = activation
        self._act, self._dact = ACTIVATIONS[activation]

    def params(self):
        return [self.W, self.b]

    def grads(self):
        return [self.dW, self.db]

    def forward(self, x, training, rng):
        self._x = x
        self._a = self._act(x @ self.W + self.b)
        return self._a

    def backward(self, dout):
        dz = dout * self._dact(self._a)
        self.dW += self._x.T @ dz
        self.db += dz.sum(axis=0)
        return dz @ self.W.T


class Conv2D(Layer):
    """Valid-padding 2D convolution on (N, C, H, W) input, stride 1."""

    def __init__(self, in_ch: int, out_ch: int, ksize: int = 3, activation: str = "relu",
                 rng: np.random.Generator | None = None, init: str = "he"):
        rng = rng or np.random.default_rng(0)
        fan_in = in_ch * ksize * ksize
        if init == "uniform":
            self.W = rng.uniform(-0.5, 0.5, (out_ch, fan_in))
        else:
            self.W = rng.normal(0.0, math.sqrt(2.0 / fan_in), (out_ch, fan_in))
        self.b = np.zeros(out_ch)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self.ksize = ksize
        self.in_ch = in_ch
        self.out_ch = out_ch
        self._act, self._dact = ACTIVATIONS[activation]

    def params(self):
        return [self.W, self.b]

    def grads(self):
        return [self.dW, self.db]

    def _im2col(self, x):
        k = self.ksize
        win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
        # (N, C, H', W', k, k) -> (N, H', W', C*k*k)
        win = win.transpose(0, 2, 3, 1, 4, 5)
        n, ho, wo = win.shape[:3]
        return win.reshape(n, ho, wo, -1), ho, wo

    def forward(self, x, training, rng):
        self._xshape = x.shape
        cols, ho, wo = self._im2col(x)
        self._cols = cols
        z = cols @ self.W.T + self.b
        a = self._act(z)
        self._a = a
        return a.transpose(0, 3, 1, 2)  # (N, out_ch, H', W')

    def backward(self, dout):
        dout = dout.transpose(0, 2, 3, 1)  # (N, H', W', out_ch)
        dz = dout * self._dact(self._a)
        n, ho, wo, _ = dz.shape
        dz2 = dz.reshape(-1, self.out_ch)
        cols2 = self._cols.reshape(-1, self.W.shape[1])
        self.dW += dz2.T @ cols2
        self.db += dz2.sum(axis=0)
        dcols = dz2 @ self.W  # (N*H'*W', C*k*k)
        k = self.ksize
        dcols = dcols.reshape(n, ho, wo, self.in_ch, k, k)
        dx = np.zeros(self._xshape, dtype=dout.dtype)
        for di in range(k):
            for dj in range(k):
                dx[:, :, di : di + ho, dj : dj + wo] += dcols[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
        return dx


class Pool2D(Layer):
    """Non-overlapping pooling on (N, C, H, W); trailing rows/cols dropped."""

    def __init__(self, size: int = 2, mode: str = "avg"):
        if mode not in ("avg", "max"):
            raise ValueError(f"unknown pool mode {mode}")
        self.size = size
        self.mode = mode

    def forward(self, x, training, rng):
        s = self.size
        n, c, h, w = x.shape
        ho, wo = h // s, w // s
        x = x[:, :, : ho * s, : wo * s]
        self._xshape_in = (n, c, h, w)
        blocks = x.reshape(n, c, ho, s, wo, s)
        if self.mode == "avg":
            return blocks.mean(axis=(3, 5))
        flat = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, s * s)
        idx = flat.argmax(axis=-1)
        self._argmax = idx
        return np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        s = self.size
        n, c, h, w = self._xshape_in
        ho, wo = h // s, w // s
        dx = np.zeros((n, c, h, w), dtype=dout.dtype)
        if self.mode == "avg":
            spread = np.repeat(np.repeat(dout, s, axis=2), s, axis=3) / (s * s)
            dx[:, :, : ho * s, : wo * s] = spread
            return dx
        flat = np.zeros((n, c, ho, wo, s * s), dtype=dout.dtype)
        np.put_along_axis(flat, self._argmax[..., None], dout[..., None], axis=-1)
        blocks = flat.reshape(n, c, ho, wo, s, s).transpose(0, 1, 2, 4, 3, 5)
        dx[:, :, : ho * s, : wo * s] = blocks.reshape(n, c, ho * s, wo * s)
        return dx


class BatchNorm(Layer):
    """Per-feature (dense) or per-channel (conv) batch normalization."""

    def __init__(self, num_features: int, conv: bool = False,
                 momentum: float = 0.9, eps: float = 1e-5):
        self.gamma = np.ones(num_features)
        self.beta = np.zeros(num_features)
        self.dgamma = np.zeros_like(self.gamma)
        self.dbeta = np.zeros_like(self.beta)
        self.conv = conv
        self.momentum = momentum
        self.eps = eps
        self.run_mean = np.zeros(num_features)
        self.run_var = np.ones(num_features)

    def params(self):
        return [self.gamma, self.beta]

    def grads(self):
        return [self.dgamma, self.dbeta]

    def _axes(self):
        return (0, 2, 3) if self.conv else (0,)

    def _shape(self, v):
        return v.reshape(1, -1, 1, 1) if self.conv else v.reshape(1, -1)

    def forward(self, x, training, rng):
        axes = self._axes()
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.run_mean = self.momentum * self.run_mean + (1 - self.momentum) * mean
            self.run_var = self.momentum * self.run_var + (1 - self.momentum) * var
        else:
            mean, var = self.run_mean, self.run_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._shape(mean)) * self._shape(inv_std)
        self._xhat = xhat
        self._inv_std = inv_std
        self._training = training
        self._m = x.size // x.shape[1] if self.conv else x.shape[0]
        return self._shape(self.gamma) * xhat + self._shape(self.beta)

    def backward(self, dout):
        axes = self._axes()
        xhat = self._xhat
        m = self._m
        self.dgamma += (dout * xhat).sum(axis=axes)
        self.dbeta += dout.sum(axis=axes)
        g = self._shape(self.gamma) * self._shape(self._inv_std)
        if not self._training:
            # running statistics are constants; no batch-coupling terms
            return g * dout
        term = dout - dout.mean(axis=axes, keepdims=True) \
            - xhat * (dout * xhat).mean(axis=axes, keepdims=True)
        return g * term


class Dropout(Layer):
    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate out of [0,1): {rate}")
        self.rate = rate

    def forward(self, x, training, rng):
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (rng.random(x.shape) < keep) / keep
        return x * self._mask

    def backward(self, dout):
        return dout if self._mask is None else dout * self._mask


class Flatten(Layer):
    def forward(self, x, training, rng):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Network:
    """Layer stack with MSE loss and full-batch backprop."""

    def __init__(self, layers: list[Layer]):
        self.layers = layers

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def grads(self) -> list[np.ndarray]:
        return [g for layer in self.layers for g in layer.grads()]

    def zero_grads(self) -> None:
        for g in self.grads():
            g[...] = 0.0

    def forward(self, x: np.ndarray, training: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        rng = rng or np.random.default_rng(0)
        for layer in self.layers:
            x = layer.forward(x, training, rng)
        return x

    def backward_mse(self, pred: np.ndarray, target: np.ndarray, scale: float = 1.0) -> float:
        """Accumulate gradients of mean-squared error; returns the loss.

        ``scale`` rescales the gradient so chunked passes can sum to the
        full-batch gradient.
        """
        n = pred.shape[0]
        diff = pred - target
        loss = float(np.mean(diff**2))
        dout = (2.0 / diff.size) * diff * scale
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return loss

    def mse_and_grad(self, x: np.ndarray, y: np.ndarray,
                     rng: np.random.Generator | None = None,
                     training: bool = True) -> float:
        self.zero_grads()
        pred = self.forward(x, training=training, rng=rng)
        return self.backward_mse(pred, y)


class Rprop:
    """iRprop-: per-parameter step sizes adapted from gradient sign changes."""

    def __init__(self, params: list[np.ndarray], config: RpropConfig):
        self.params = params
        self.cfg = config
        self.delta = [np.full(p.shape, config.delta_init) for p in params]
        self.prev_grad = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        cfg = self.cfg
        for p, g, d, pg in zip(self.params, grads, self.delta, self.prev_grad):
            if not np.all(np.isfinite(g)):
                raise NumericalError("non-finite gradient")
            sign_change = pg * g
            grow = sign_change > 0
            shrink = sign_change < 0
            d[grow] = np.minimum(d[grow] * cfg.eta_plus, cfg.delta_max)
            d[shrink] = np.maximum(d[shrink] * cfg.eta_minus, cfg.delta_min)
            g = g.copy()
            g[shrink] = 0.0  # iRprop-: skip update after a sign flip
            p -= np.sign(g) * d
            pg[...] = g

    def step_bounds_ok(self) -> bool:
        cfg = self.cfg
        return all(
            bool(np.all((d >= cfg.delta_min) & (d <= cfg.delta_max)))
            for d in self.delta
        )
