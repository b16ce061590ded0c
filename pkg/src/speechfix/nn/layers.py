"""Layers and the compact UNet mask estimator."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor

LEAKY_SLOPE = 0.01
BN_MOMENTUM = 0.99


class Module:
    training = True

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def buffers(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield from value.buffers(f"{prefix}{name}.")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.buffers(f"{prefix}{name}.{i}.")
        for name in getattr(self, "_buffer_names", ()):
            yield prefix + name, self, name

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, list):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args):
        return self.forward(*args)


def _param(data, name=None):
    return Tensor(data, requires_grad=True, name=name)


class Conv2d(Module):
    def __init__(self, cin, cout, k, rng):
        fan_in = cin * k * k
        self.weight = _param(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(cout, cin, k, k)))
        self.bias = _param(np.zeros(cout))

    def forward(self, x):
        return ag.conv2d(x, self.weight, self.bias)


class UpFreq(Module):
    """Transposed convolution doubling the mel axis."""

    def __init__(self, cin, cout, rng):
        self.weight = _param(rng.normal(0.0, np.sqrt(1.0 / cin), size=(cin, cout, 1, 2)))
        self.bias = _param(np.zeros(cout))

    def forward(self, x):
        return ag.conv_transpose_freq2(x, self.weight, self.bias)


class BatchNorm2d(Module):
    _buffer_names = ("running_mean", "running_var")

    def __init__(self, channels, momentum=BN_MOMENTUM, eps=1e-5):
        self.gamma = _param(np.ones(channels))
        self.beta = _param(np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        if self.training:
            out, mu, var = ag.batch_norm(x, self.gamma, self.beta, eps=self.eps)
            self.running_mean = self.momentum * self.running_mean + (1 - self.momentum) * mu
            self.running_var = self.momentum * self.running_var + (1 - self.momentum) * var
            return out
        out, _, _ = ag.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var, self.eps)
        return out


class ResBlock(Module):
    """Two pre-activation convolutions (BN, leaky ReLU, 3x3 conv) plus a shortcut."""

    def __init__(self, cin, cout, rng):
        self.bn1 = BatchNorm2d(cin)
        self.conv1 = Conv2d(cin, cout, 3, rng)
        self.bn2 = BatchNorm2d(cout)
        self.conv2 = Conv2d(cout, cout, 3, rng)
        self.shortcut = Conv2d(cin, cout, 1, rng) if cin != cout else None

    def forward(self, x):
        h = self.conv1(ag.leaky_relu(self.bn1(x), LEAKY_SLOPE))
        h = self.conv2(ag.leaky_relu(self.bn2(h), LEAKY_SLOPE))
        skip = self.shortcut(x) if self.shortcut is not None else x
        return h + skip


class MaskNet(Module):
    """UNet over (time, mel) producing a non-negative mask.

    The time axis is never pooled, so any number of frames is accepted; the mel
    axis is halved by each of the ``depth`` encoder blocks.
    """

    def __init__(self, num_mels=128, depth=3, base_channels=16, seed=0):
        if depth < 1:
            raise ValueError("depth must be >= 1")
        if num_mels % (2**depth):
            raise ValueError(f"num_mels {num_mels} must be divisible by 2**depth = {2**depth}")
        rng = np.random.default_rng(seed)
        self.num_mels = num_mels
        self.depth = depth
        self.base_channels = base_channels
        widths = [base_channels * 2**i for i in range(depth)]
        self.encoders = []
        cin = 1
        for c in widths:
            self.encoders.append(ResBlock(cin, c, rng))
            cin = c
        self.bottleneck = ResBlock(cin, cin, rng)
        self.ups, self.decoders = [], []
        for c in reversed(widths):
            self.ups.append(UpFreq(cin, c, rng))
            self.decoders.append(ResBlock(2 * c, c, rng))
            cin = c
        self.head_bn = BatchNorm2d(cin)
        self.head = Conv2d(cin, 1, 1, rng)

    @property
    def config(self) -> dict:
        return {"num_mels": self.num_mels, "depth": self.depth, "base_channels": self.base_channels}

    def forward(self, features: Tensor) -> Tensor:
        """``features``: (N, T, M) compressed mel input; returns an (N, T, M) mask."""
        if features.shape[-1] != self.num_mels:
            raise ValueError(f"input has {features.shape[-1]} mel bands, net expects {self.num_mels}")
        n, t, m = features.shape
        x = ag.reshape(features, (n, 1, t, m))
        skips = []
        for enc in self.encoders:
            x = enc(x)
            skips.append(x)
            x = ag.avg_pool_freq2(x)
        x = self.bottleneck(x)
        for up, dec, skip in zip(self.ups, self.decoders, reversed(skips)):
            x = dec(ag.concat([up(x), skip], axis=1))
        x = self.head(ag.leaky_relu(self.head_bn(x), LEAKY_SLOPE))
        return ag.reshape(ag.softplus(x), (n, t, m))

    def state_dict(self) -> dict:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        for name, module, attr in self.buffers():
            state[name] = getattr(module, attr).copy()
        return state

    def load_state_dict(self, state: dict):
        params = dict(self.named_parameters())
        buffers = {name: (module, attr) for name, module, attr in self.buffers()}
        missing = (set(params) | set(buffers)) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks {sorted(missing)[:5]}")
        for name, p in params.items():
            if state[name].shape != p.data.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.data.shape}")
            p.data = np.array(state[name], dtype=np.float64)
        for name, (module, attr) in buffers.items():
            setattr(module, attr, np.array(state[name], dtype=np.float64))
