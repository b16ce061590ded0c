"""Analysis (mel restoration) and synthesis (mel inversion plus Griffin-Lim)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .dsp import AudioSegment, MelFilterbank

ESTIMATORS = ("identity", "oracle", "trained")
INVERSIONS = ("pinv", "nnls")


@dataclass
class AnalysisConfig:
    fft_size: int = dsp.FFT_SIZE
    hop: int = dsp.HOP
    num_mels: int = dsp.NUM_MELS
    eps: float = 1e-8
    estimator: str = "oracle"
    checkpoint: str | None = None

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}; choose from {ESTIMATORS}")


@dataclass
class SynthesisConfig:
    griffin_lim_iters: int = 32
    inversion: str = "nnls"
    momentum: float = 0.99
    nnls_iters: int = 200
    nnls_tol: float = 1e-8

    def __post_init__(self):
        if self.griffin_lim_iters < 0:
            raise ValueError("griffin_lim_iters must be >= 0")
        if self.inversion not in INVERSIONS:
            raise ValueError(f"unknown inversion {self.inversion!r}; choose from {INVERSIONS}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")


# ---------------------------------------------------------------------------
# analysis


def oracle_mask(x_mel: np.ndarray, s_mel: np.ndarray, eps: float) -> np.ndarray:
    return s_mel / (x_mel + eps)


def analyze(x: AudioSegment, cfg: AnalysisConfig, target: AudioSegment | None = None,
            net=None) -> np.ndarray:
    """Restored mel spectrogram (frames x mels) for ``x``.

    ``net`` may be passed to avoid reloading the checkpoint for every utterance.
    """
    fb = dsp.build_mel_filterbank(x.sample_rate, cfg.fft_size, cfg.num_mels)
    x_mel = dsp.mel_spectrogram(x, fb, cfg.hop).frames
    if cfg.estimator == "identity":
        return x_mel
    if cfg.estimator == "oracle":
        if target is None:
            raise ValueError("oracle analysis needs the aligned clean target")
        if len(target) != len(x):
            raise ValueError(f"target has {len(target)} samples, input has {len(x)}")
        s_mel = dsp.mel_spectrogram(target, fb, cfg.hop).frames
        return oracle_mask(x_mel, s_mel, cfg.eps) * (x_mel + cfg.eps)
    from .nn.train import load_checkpoint, restore_mel

    if net is None:
        if not cfg.checkpoint:
            raise ValueError("trained analysis needs a checkpoint path or a loaded network")
        net, _ = load_checkpoint(cfg.checkpoint)
    return restore_mel(net, x_mel, cfg.eps)


# ---------------------------------------------------------------------------
# mel inversion


def _colour_groups(weights: np.ndarray) -> list[np.ndarray]:
    """Partition bins so that no two bins in a group share a mel filter."""
    support = weights > 0
    active = np.flatnonzero(support.any(axis=1))  # bins outside every filter stay zero
    used = np.zeros((0, weights.shape[1]), dtype=bool)
    groups: list[list[int]] = []
    for j in active:
        for g, mask in enumerate(used):
            if not np.any(mask & support[j]):
                groups[g].append(j)
                used[g] |= support[j]
                break
        else:
            groups.append([j])
            used = np.vstack([used, support[j]])
    return [np.asarray(g) for g in groups]


def nnls_frames(mel: np.ndarray, weights: np.ndarray, iters: int = 200, tol: float = 1e-8,
                groups: list[np.ndarray] | None = None, init: np.ndarray | None = None) -> np.ndarray:
    """Solve min ||x W - m|| subject to x >= 0 for every row m of ``mel``.

    Projected coordinate descent, started from zero unless ``init`` is given.
    Bins with disjoint filter support are updated together, which gives the same
    iterates as a one-at-a-time sweep. Stops after ``iters`` sweeps or when the
    largest update falls below ``tol`` times the largest magnitude.
    """
    if groups is None:
        groups = _colour_groups(weights)
    mel = np.asarray(mel, dtype=np.float64)
    if init is None:
        x = np.zeros((mel.shape[0], weights.shape[0]))
    else:
        x = np.maximum(np.array(init, dtype=np.float64), 0.0)
    resid = x @ weights - mel
    norms = np.einsum("jk,jk->j", weights, weights)
    rows = [(g, weights[g], norms[g]) for g in groups]
    for _ in range(iters):
        biggest = 0.0
        for g, wg, ng in rows:
            old = x[:, g]
            new = np.maximum(0.0, old - (resid @ wg.T) / ng)
            delta = new - old
            x[:, g] = new
            resid += delta @ wg
            biggest = max(biggest, float(np.abs(delta).max(initial=0.0)))
        if biggest <= tol * max(float(x.max(initial=0.0)), 1e-300):
            break
    return x


def _pinv_clamped(mel: np.ndarray, fb: MelFilterbank) -> np.ndarray:
    assert np.linalg.matrix_rank(fb.weights) == fb.weights.shape[1], "rank-deficient filterbank"
    return np.maximum(mel @ np.linalg.pinv(fb.weights), 0.0)


def mel_to_linear(mel: np.ndarray, fb: MelFilterbank, method: str = "nnls", iters: int = 200,
                  tol: float = 1e-8) -> np.ndarray:
    """Non-negative magnitude spectrogram (frames x bins) whose mel projection approximates ``mel``.

    For ``nnls``, frames where the capped descent from zero ends with a larger
    residual than the clamped pseudo-inverse are re-solved starting from that
    pseudo-inverse, so the result is never worse than it.
    """
    mel = np.asarray(mel, dtype=np.float64)
    if mel.shape[-1] != fb.weights.shape[1]:
        raise ValueError(f"mel has {mel.shape[-1]} bands, filterbank has {fb.weights.shape[1]}")
    if method == "pinv":
        return _pinv_clamped(mel, fb)
    if method != "nnls":
        raise ValueError(f"unknown inversion {method!r}")
    groups = _colour_groups(fb.weights)
    x = nnls_frames(mel, fb.weights, iters, tol, groups)
    base = _pinv_clamped(mel, fb)
    worse = mel_residual(x, mel, fb) > mel_residual(base, mel, fb)
    if np.any(worse):
        x[worse] = nnls_frames(mel[worse], fb.weights, iters, tol, groups, init=base[worse])
    return x


def mel_residual(mag: np.ndarray, mel: np.ndarray, fb: MelFilterbank) -> np.ndarray:
    """Per-frame L2 error of the mel projection of ``mag`` against ``mel``."""
    return np.linalg.norm(mag @ fb.weights - mel, axis=-1)


# ---------------------------------------------------------------------------
# Griffin-Lim
#
# Iterations run on the whole overlap-add buffer without the centring pad, so
# that ISTFT followed by STFT is an exact least-squares projection. Only the
# final waveform is cropped to the requested length.


def _frames_fft(buf: np.ndarray, n_fft: int, hop: int, count: int, window: np.ndarray) -> np.ndarray:
    frames = np.lib.stride_tricks.sliding_window_view(buf, n_fft)[::hop][:count]
    return np.fft.rfft(frames * window, axis=1)


def _overlap_add(spec: np.ndarray, n_fft: int, hop: int, window: np.ndarray,
                 inv_env: np.ndarray) -> np.ndarray:
    count = spec.shape[0]
    frames = np.fft.irfft(spec, n=n_fft, axis=1) * window
    out = np.zeros(n_fft + hop * (count - 1))
    for t in range(count):
        out[t * hop : t * hop + n_fft] += frames[t]
    return out * inv_env


@dataclass
class GriffinLimResult:
    audio: AudioSegment
    residuals: list[float] = field(default_factory=list)


def griffin_lim(magnitude: np.ndarray, out_len: int, iters: int = 32, momentum: float = 0.99,
                fft_size: int = dsp.FFT_SIZE, hop: int = dsp.HOP,
                sample_rate: int = dsp.SAMPLE_RATE) -> GriffinLimResult:
    """Phase recovery from zero initial phase with optional momentum.

    ``residuals[i]`` is the spectral convergence ||  |STFT(x_i)| - A || / ||A||
    of the signal after ``i`` iterations, measured on the full overlap-add buffer.
    """
    mag = np.asarray(magnitude, dtype=np.float64)
    if np.any(mag < 0):
        raise ValueError("magnitude must be non-negative")
    if iters < 0:
        raise ValueError("iters must be >= 0")
    count = mag.shape[0]
    window = dsp.periodic_hann(fft_size)
    total = fft_size + hop * (count - 1)
    env = np.zeros(total)
    for t in range(count):
        env[t * hop : t * hop + fft_size] += window**2
    inv_env = np.where(env > 1e-8, 1.0 / np.maximum(env, 1e-8), 0.0)
    norm = float(np.linalg.norm(mag))

    def residual(rebuilt):
        return float(np.linalg.norm(np.abs(rebuilt) - mag) / norm) if norm > 0 else 0.0

    angles = np.ones_like(mag, dtype=np.complex128)
    buf = _overlap_add(mag * angles, fft_size, hop, window, inv_env)
    residuals = []
    rebuilt = np.zeros_like(angles)
    for _ in range(iters):
        prev = rebuilt
        rebuilt = _frames_fft(buf, fft_size, hop, count, window)
        residuals.append(residual(rebuilt))
        angles = rebuilt - (momentum / (1.0 + momentum)) * prev
        angles /= np.abs(angles) + 1e-16
        angles[np.abs(angles) == 0] = 1.0
        buf = _overlap_add(mag * angles, fft_size, hop, window, inv_env)
    residuals.append(residual(_frames_fft(buf, fft_size, hop, count, window)))

    pad = fft_size // 2
    if pad + out_len > total:
        raise ValueError(f"spectrogram with {count} frames cannot cover {out_len} samples")
    return GriffinLimResult(AudioSegment(buf[pad : pad + out_len], sample_rate), residuals)


# ---------------------------------------------------------------------------
# pipeline


def synthesize(mel: np.ndarray, out_len: int, cfg: SynthesisConfig, fb: MelFilterbank,
               hop: int = dsp.HOP) -> AudioSegment:
    mag = mel_to_linear(mel, fb, cfg.inversion, cfg.nnls_iters, cfg.nnls_tol)
    return griffin_lim(mag, out_len, cfg.griffin_lim_iters, cfg.momentum, fb.fft_size, hop,
                       fb.sample_rate).audio


def restore_pipeline(x: AudioSegment, analysis: AnalysisConfig | None = None,
                     synthesis: SynthesisConfig | None = None,
                     target: AudioSegment | None = None, net=None) -> AudioSegment:
    """Degraded waveform in, restored waveform of the same length and rate out."""
    analysis = analysis or AnalysisConfig()
    synthesis = synthesis or SynthesisConfig()
    if x.sample_rate != dsp.SAMPLE_RATE:
        raise ValueError(f"input must be at {dsp.SAMPLE_RATE} Hz, got {x.sample_rate}")
    mel = analyze(x, analysis, target, net)
    fb = dsp.build_mel_filterbank(x.sample_rate, analysis.fft_size, analysis.num_mels)
    return synthesize(mel, len(x), synthesis, fb, analysis.hop)
