"""Adam with linear warmup and stepwise exponential decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor

HOURS_PER_DECAY = 400.0


def decay_interval(batch_size: int, segment_samples: int, sample_rate: int = 44100,
                   hours: float = HOURS_PER_DECAY) -> int:
    """Steps corresponding to ``hours`` of training audio at the given batch shape."""
    return max(1, int(round(hours * 3600 * sample_rate / (batch_size * segment_samples))))


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    warmup_steps: int = 1000
    decay_every: int = 20_000
    decay_factor: float = 0.9
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def effective_lr(self, step: int | None = None) -> float:
        """Learning rate used for update number ``step`` (1-based)."""
        t = self.step if step is None else step
        warm = min(1.0, t / self.warmup_steps) if self.warmup_steps > 0 else 1.0
        return self.lr * warm * self.decay_factor ** (t // self.decay_every)


def adam_step(state: AdamState, params: list[Tensor]) -> float:
    """Apply one bias-corrected Adam update in place; returns the lr used."""
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ValueError("optimizer state does not match the parameter list")
    state.step += 1
    t = state.step
    lr = state.effective_lr(t)
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, m, v in zip(params, state.m, state.v):
        if m.shape != p.data.shape:
            raise ValueError(f"moment shape {m.shape} != parameter shape {p.data.shape}")
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        if lr != 0.0:
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return lr
