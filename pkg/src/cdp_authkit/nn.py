"""Minimal float64 neural-network layers with exact backpropagation.

Just enough machinery for the desk-scale models in this package: dense and
im2col convolution layers, ReLU/sigmoid, nearest-neighbor upsampling, stable
logistic losses, and a deterministic Adam. Layers cache what their backward
pass needs; gradients accumulate on the layer (`gw`, `gb`) so a finite
difference check can perturb `w`/`b` in place and re-run the forward pass.
"""

from __future__ import annotations

import numpy as np


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softplus(z: np.ndarray) -> np.ndarray:
    """log(1 + e^z) without overflow."""
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def im2col(x: np.ndarray, k: int, stride: int, pad: int):
    """(B, C, H, W) -> (B, oh*ow, C*k*k) patch matrix plus (oh, ow)."""
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :oh, :ow]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b, oh * ow, c * k * k)
    return np.ascontiguousarray(cols), (oh, ow)


def col2im(dcols: np.ndarray, x_shape, k: int, stride: int, pad: int, oh: int, ow: int):
    """Adjoint of im2col: scatter patch gradients back onto the input grid."""
    b, c, h, w = x_shape
    dxp = np.zeros((b, c, h + 2 * pad, w + 2 * pad))
    d6 = dcols.reshape(b, oh, ow, c, k, k).transpose(0, 3, 1, 2, 4, 5)
    for ki in range(k):
        for kj in range(k):
            dxp[:, :, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride] += d6[
                :, :, :, :, ki, kj
            ]
    return dxp[:, :, pad : pad + h, pad : pad + w].copy()


class Conv2d:
    """2-D convolution (cross-correlation) over (B, C, H, W) tensors."""

    def __init__(self, rng: np.random.Generator, in_ch: int, out_ch: int, k: int,
                 stride: int = 1, pad: int = 1):
        fan_in = in_ch * k * k
        self.w = rng.standard_normal((out_ch, fan_in)) * np.sqrt(2.0 / fan_in)
        self.b = np.zeros(out_ch)
        self.k, self.stride, self.pad = k, stride, pad
        self.in_ch, self.out_ch = in_ch, out_ch
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        cols, (oh, ow) = im2col(x, self.k, self.stride, self.pad)
        out = cols @ self.w.T + self.b
        self._cache = (cols, x.shape, oh, ow)
        return out.transpose(0, 2, 1).reshape(x.shape[0], self.out_ch, oh, ow)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        cols, x_shape, oh, ow = self._cache
        b = x_shape[0]
        dmat = dout.reshape(b, self.out_ch, oh * ow).transpose(0, 2, 1)
        self.gw += np.einsum("bpo,bpk->ok", dmat, cols)
        self.gb += dmat.sum(axis=(0, 1))
        dcols = dmat @ self.w
        return col2im(dcols, x_shape, self.k, self.stride, self.pad, oh, ow)


class Dense:
    """Affine layer over (B, D) matrices."""

    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int,
                 zero_init: bool = False):
        if zero_init:
            self.w = np.zeros((d_in, d_out))
        else:
            self.w = rng.standard_normal((d_in, d_out)) * np.sqrt(2.0 / d_in)
        self.b = np.zeros(d_out)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._cache = x
        return x @ self.w + self.b

    def backward(self, dout: np.ndarray) -> np.ndarray:
        x = self._cache
        self.gw += x.T @ dout
        self.gb += dout.sum(axis=0)
        return dout @ self.w.T


class Relu:
    """max(x, 0), with mask record/replay for finite-difference checks.

    In "record" mode every forward appends its active mask to a log; in
    "replay" mode forwards consume the logged masks in call order instead of
    recomputing them, so a finite-difference probe stays on the smooth branch
    chosen at the base point even for units sitting exactly at the kink (the
    case at initialization, where biases are zero). A layer may run several
    times per loss evaluation (e.g. a discriminator on real then fake), hence
    the per-call log; reset `replay_idx` before each evaluation.
    """

    def __init__(self):
        self._mask = None
        self.mask_mode = "normal"
        self.mask_log: list = []
        self.replay_idx = 0

    def forward(self, x: np.ndarray) -> np.ndarray:
        if self.mask_mode == "replay":
            mask = self.mask_log[self.replay_idx]
            self.replay_idx += 1
        else:
            mask = x > 0
            if self.mask_mode == "record":
                self.mask_log.append(mask)
        self._mask = mask
        return np.where(mask, x, 0.0)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return np.where(self._mask, dout, 0.0)


class Sigmoid:
    def __init__(self):
        self._out = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._out = sigmoid(x)
        return self._out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return dout * self._out * (1.0 - self._out)


class UpsampleNearest:
    """Repeat each pixel factor x factor times; backward sums the block."""

    def __init__(self, factor: int):
        self.factor = factor

    def forward(self, x: np.ndarray) -> np.ndarray:
        f = self.factor
        return np.repeat(np.repeat(x, f, axis=2), f, axis=3)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        f = self.factor
        b, c, h, w = dout.shape
        return dout.reshape(b, c, h // f, f, w // f, f).sum(axis=(3, 5))


def chain_forward(layers, x: np.ndarray) -> np.ndarray:
    for layer in layers:
        x = layer.forward(x)
    return x


def chain_backward(layers, dout: np.ndarray) -> np.ndarray:
    for layer in reversed(layers):
        dout = layer.backward(dout)
    return dout


def weighted_layers(layers):
    return [layer for layer in layers if hasattr(layer, "w")]


def zero_grads(layers) -> None:
    for layer in weighted_layers(layers):
        layer.gw[:] = 0.0
        layer.gb[:] = 0.0


class Adam:
    """Adam over a fixed, ordered list of weighted layers. Deterministic."""

    def __init__(self, layers, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.layers = weighted_layers(layers)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.state = [
            (np.zeros_like(l.w), np.zeros_like(l.w), np.zeros_like(l.b), np.zeros_like(l.b))
            for l in self.layers
        ]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for layer, (mw, vw, mb, vb) in zip(self.layers, self.state):
            for p, g, m, v in ((layer.w, layer.gw, mw, vw), (layer.b, layer.gb, mb, vb)):
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
