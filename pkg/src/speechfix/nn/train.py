"""Mask application, the MAE objective, the training loop and checkpoints."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .layers import MaskNet
from .optim import AdamState, adam_step, decay_interval

EPS = 1e-8
CHECKPOINT_VERSION = 1


def compress(mel: np.ndarray) -> np.ndarray:
    """Dynamic-range compression applied to mel features before the network."""
    return np.log1p(mel)


def _batched(mel) -> tuple[np.ndarray, bool]:
    arr = np.asarray(mel, dtype=np.float64)
    if arr.ndim == 2:
        return arr[None], True
    if arr.ndim == 3:
        return arr, False
    raise ValueError(f"mel input must be (T, M) or (N, T, M), got shape {arr.shape}")


def forward_mask(net: MaskNet, x_mel) -> np.ndarray:
    """Non-negative mask for a (T, M) or (N, T, M) mel array, in eval mode."""
    arr, single = _batched(x_mel)
    was_training = net.training
    net.eval()
    try:
        with ag.no_grad():
            mask = net(Tensor(compress(arr))).data
    finally:
        net.train(was_training)
    return mask[0] if single else mask


def restore_mel(net: MaskNet, x_mel, eps: float = EPS) -> np.ndarray:
    """Mask times (X_mel + eps)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    arr = np.asarray(x_mel, dtype=np.float64)
    return forward_mask(net, arr) * (arr + eps)


def mae_loss(pred, target) -> Tensor:
    return ag.mae(ag.as_tensor(pred), target)


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 1
    lr: float = 3e-4
    beta1: float = 0.5
    beta2: float = 0.999
    warmup_steps: int = 1000
    segment_seconds: float = 3.0
    sample_rate: int = 44100
    eps: float = EPS
    target_ratio: float | None = None  # stop once loss < target_ratio * first loss
    seed: int = 0

    def decay_every(self) -> int:
        return decay_interval(self.batch_size, int(round(self.segment_seconds * self.sample_rate)),
                              self.sample_rate)

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class TrainResult:
    losses: list[float]
    lrs: list[float]
    optimizer: AdamState


def training_step(net: MaskNet, x_mel: np.ndarray, s_mel: np.ndarray, eps: float) -> Tensor:
    """Forward pass and loss on one (N, T, M) batch, with gradients populated."""
    net.zero_grad()
    mask = net(Tensor(compress(x_mel)))
    est = mask * (x_mel + eps)
    loss = ag.mae(est, s_mel)
    loss.backward()
    return loss


def train(net: MaskNet, batches: Iterable[tuple[np.ndarray, np.ndarray]], cfg: TrainConfig,
          on_step: Callable[[int, float, float], None] | None = None) -> TrainResult:
    """Train ``net`` in place on a stream of (X_mel, S_mel) batches.

    Each batch element is (N, T, M) or (T, M). The stream is consumed for at most
    ``cfg.steps`` updates; ``on_step(step, loss, lr)`` runs after each update.
    Raises FloatingPointError if the loss stops being finite.
    """
    opt = AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                    warmup_steps=cfg.warmup_steps, decay_every=cfg.decay_every())
    net.train()
    params = net.parameters()
    losses, lrs = [], []
    it: Iterator = iter(batches)
    for _ in range(cfg.steps):
        try:
            x, s = next(it)
        except StopIteration:
            break
        x, _ = _batched(x)
        s, _ = _batched(s)
        if x.shape != s.shape:
            raise ValueError(f"degraded/clean mel shapes differ: {x.shape} vs {s.shape}")
        loss = training_step(net, x, s, cfg.eps)
        value = float(loss.data)
        if not np.isfinite(value):
            raise FloatingPointError(f"loss diverged at step {opt.step + 1}")
        lrs.append(adam_step(opt, params))
        losses.append(value)
        if on_step is not None:
            on_step(opt.step, value, lrs[-1])
        if cfg.target_ratio is not None and value < cfg.target_ratio * losses[0]:
            break
    net.eval()
    return TrainResult(losses, lrs, opt)


def repeat_pair(x_mel: np.ndarray, s_mel: np.ndarray):
    """Infinite stream yielding the same pair; used for overfitting checks."""
    while True:
        yield x_mel, s_mel


def save_checkpoint(path, net: MaskNet, meta: dict | None = None) -> None:
    header = {
        "version": CHECKPOINT_VERSION,
        "architecture": net.config,
        "meta": meta or {},
    }
    arrays = {f"p:{k}": v for k, v in net.state_dict().items()}
    arrays["__header__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path) -> tuple[MaskNet, dict]:
    with np.load(path, allow_pickle=False) as z:
        if "__header__" not in z.files:
            raise ValueError(f"{path}: not a mask-network checkpoint")
        header = json.loads(bytes(z["__header__"]).decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
        state = {k[2:]: z[k] for k in z.files if k.startswith("p:")}
    net = MaskNet(**header["architecture"])
    net.load_state_dict(state)
    net.eval()
    return net, header["meta"]
