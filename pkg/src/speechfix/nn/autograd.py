"""Reverse-mode automatic differentiation over numpy arrays.

Only the operations the mask estimator needs are provided. Image tensors use
NCHW layout with H = time frames and W = mel bands.
"""

from __future__ import annotations

import numpy as np

_grad_enabled = True
_kink_tape: dict | None = None  # see freeze_kinks()


class no_grad:
    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if self._backward is None and not self.requires_grad:
            raise RuntimeError("backward() called on a tensor with no recorded graph")
        if grad is None:
            if self.data.size != 1:
                raise RuntimeError("grad must be given for non-scalar outputs")
            grad = np.ones_like(self.data)

        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            if node.requires_grad and not node._parents:
                node._accumulate(g)
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    if not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values produced in forward pass")
    parents = tuple(parents)
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, parents=parents, backward=backward)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# elementwise ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


class freeze_kinks:
    """Record leaky-ReLU branch choices, then replay them.

    Inside ``with freeze_kinks() as tape:`` the first forward pass records which
    side of zero each activation input falls on; after ``tape.replay()`` later
    passes reuse those choices. The replayed function is smooth and agrees with
    the network near the recorded point, which is what finite differencing of a
    piecewise-linear network needs.
    """

    def __enter__(self):
        global _kink_tape
        self._prev = _kink_tape
        self.masks: list[np.ndarray] = []
        self.cursor = None
        _kink_tape = self
        return self

    def replay(self):
        self.cursor = 0

    def _branch(self, data):
        if self.cursor is None:
            pos = data > 0
            self.masks.append(pos)
            return pos
        pos = self.masks[self.cursor]
        self.cursor = (self.cursor + 1) % len(self.masks)
        return pos

    def __exit__(self, *exc):
        global _kink_tape
        _kink_tape = self._prev


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    pos = x.data > 0 if _kink_tape is None else _kink_tape._branch(x.data)
    return _make(np.where(pos, x.data, slope * x.data), (x,), lambda g: (np.where(pos, g, slope * g),))


def softplus(x: Tensor) -> Tensor:
    d = x.data
    out = np.maximum(d, 0.0) + np.log1p(np.exp(-np.abs(d)))
    sig = 0.5 * (1.0 + np.tanh(0.5 * d))
    return _make(out, (x,), lambda g: (g * sig,))


def log1p(x: Tensor) -> Tensor:
    return _make(np.log1p(x.data), (x,), lambda g: (g / (1.0 + x.data),))


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    return _make(np.mean(x.data), (x,), lambda g: (np.full(x.shape, g / n),))


def mae(pred: Tensor, target) -> Tensor:
    """Mean absolute error; the subgradient at ties is 0."""
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    sign = np.sign(diff)
    return _make(np.mean(np.abs(diff)), (pred, target), lambda g: (g * sign / n, -g * sign / n))


def concat(tensors, axis=1) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def reshape(x: Tensor, shape) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


# convolution ---------------------------------------------------------------


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Rows of flattened (C, kh, kw) patches for a stride-1 'same' layout."""
    n, c, h, wd = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))  # n c h w kh kw
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * wd, c * kh * kw)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Stride-1 'same' convolution (cross-correlation) with odd kernels."""
    n, c, h, wd = x.shape
    o, c2, kh, kw = w.shape
    if c != c2:
        raise ValueError(f"conv2d: input has {c} channels, kernel expects {c2}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("conv2d: kernel sizes must be odd")
    cols = _im2col(x.data, kh, kw)
    wmat = w.data.reshape(o, -1)
    out = (cols @ wmat.T).reshape(n, h, wd, o).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data[None, :, None, None]

    def backward(g):
        gflat = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (gflat.T @ cols).reshape(w.shape) if w.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if b is not None and b.requires_grad else None
        gx = None
        if x.requires_grad:
            # the adjoint of a 'same' correlation is a 'same' correlation with the
            # spatially flipped, channel-transposed kernel
            wflip = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c, -1)
            gx = (_im2col(g, kh, kw) @ wflip.T).reshape(n, h, wd, c).transpose(0, 3, 1, 2)
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _make(out, parents, backward)


def conv_transpose_freq2(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Transposed convolution with kernel (1, 2) and stride (1, 2): doubles W.

    ``w`` has shape (in_channels, out_channels, 1, 2).
    """
    n, c, h, wd = x.shape
    c2, o, _, kw = w.shape
    if c != c2 or kw != 2:
        raise ValueError("conv_transpose_freq2: weight must be (in, out, 1, 2)")
    kmat = w.data[:, :, 0, :].reshape(c, o * 2)
    xflat = x.data.transpose(0, 2, 3, 1).reshape(-1, c)  # rows: n h w
    out = (xflat @ kmat).reshape(n, h, wd, o, 2).transpose(0, 3, 1, 2, 4).reshape(n, o, h, 2 * wd)
    if b is not None:
        out = out + b.data[None, :, None, None]

    def backward(g):
        gflat = g.reshape(n, o, h, wd, 2).transpose(0, 2, 3, 1, 4).reshape(-1, o * 2)
        gx = (gflat @ kmat.T).reshape(n, h, wd, c).transpose(0, 3, 1, 2) if x.requires_grad else None
        gw = (xflat.T @ gflat).reshape(c, o, 1, 2) if w.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if b is not None and b.requires_grad else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _make(out, parents, backward)


def avg_pool_freq2(x: Tensor) -> Tensor:
    """Average pooling over pairs of adjacent mel bands (W halves)."""
    n, c, h, wd = x.shape
    if wd % 2:
        raise ValueError(f"avg_pool_freq2 needs an even width, got {wd}")
    out = x.data.reshape(n, c, h, wd // 2, 2).mean(axis=-1)
    return _make(out, (x,), lambda g: (np.repeat(g, 2, axis=-1) * 0.5,))


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, mean_=None, var_=None, eps=1e-5):
    """Per-channel normalisation. With ``mean_``/``var_`` given (eval mode) the
    statistics are constants; otherwise batch statistics are used and
    differentiated through. Returns (output, batch_mean, batch_var)."""
    axes = (0, 2, 3)
    m = x.shape[0] * x.shape[2] * x.shape[3]
    if mean_ is None:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
    else:
        mu, var = mean_, var_
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * inv[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    training = mean_ is None

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gamma.data[None, :, None, None]
        if training:
            gx = (
                inv[None, :, None, None]
                / m
                * (
                    m * gxhat
                    - gxhat.sum(axis=axes)[None, :, None, None]
                    - xhat * (gxhat * xhat).sum(axis=axes)[None, :, None, None]
                )
            )
        else:
            gx = gxhat * inv[None, :, None, None]
        return gx, ggamma, gbeta

    return _make(out, (x, gamma, beta), backward), mu, var
