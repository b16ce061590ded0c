"""Signal-processing primitives: STFT/ISTFT, mel filterbanks, filtering, resampling."""

from __future__ import annotations

from dataclasses import dataclass, field
from math import gcd

import numpy as np
from scipy import signal as sps

SAMPLE_RATE = 44100
FFT_SIZE = 2048
HOP = 441
NUM_MELS = 128

FILTER_KINDS = ("windowed-sinc-hann", "windowed-sinc-kaiser", "butterworth", "chebyshev1")


@dataclass
class AudioSegment:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("AudioSegment must be mono (1-D samples)")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ValueError(f"invalid sample rate {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples contain NaN or Inf")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass
class Spectrogram:
    frames: np.ndarray  # (num_frames, fft_size // 2 + 1), complex
    fft_size: int
    hop: int
    window: str = "hann"

    def __post_init__(self):
        if self.frames.ndim != 2 or self.frames.shape[1] != self.fft_size // 2 + 1:
            raise ValueError(
                f"frames shape {self.frames.shape} inconsistent with fft_size {self.fft_size}"
            )
        if not 0 < self.hop <= self.fft_size:
            raise ValueError(f"hop must be in (0, fft_size], got {self.hop}")

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.frames)


@dataclass
class MelFilterbank:
    weights: np.ndarray  # (num_bins, num_mels)
    sample_rate: int
    num_mels: int

    @property
    def fft_size(self) -> int:
        return 2 * (self.weights.shape[0] - 1)


@dataclass
class MelSpectrogram:
    frames: np.ndarray  # (num_frames, num_mels)
    fft_size: int = FFT_SIZE
    hop: int = HOP
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if np.any(self.frames < 0):
            raise ValueError("mel spectrogram entries must be non-negative")


@dataclass
class FirFilter:
    """Lowpass filter. ``taps`` is the FIR prototype; IIR kinds also carry ``sos``
    and are applied forward-backward so the result has zero phase."""

    taps: np.ndarray
    nominal_cutoff: float
    sample_rate: int
    kind: str = "windowed-sinc-kaiser"
    sos: np.ndarray | None = field(default=None, repr=False)

    def apply(self, samples: np.ndarray) -> np.ndarray:
        samples = np.asarray(samples, dtype=np.float64)
        if self.sos is not None:
            padlen = min(3 * (2 * self.sos.shape[0] + 1), len(samples) - 1)
            return sps.sosfiltfilt(self.sos, samples, padlen=max(padlen, 0))
        # odd-length linear-phase FIR: centred slice of the full convolution
        delay = (len(self.taps) - 1) // 2
        full = convolve_arrays(samples, self.taps)
        return full[delay : delay + len(samples)]


def periodic_hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _as_samples(audio) -> tuple[np.ndarray, int | None]:
    if isinstance(audio, AudioSegment):
        return audio.samples, audio.sample_rate
    return np.asarray(audio, dtype=np.float64), None


# ---------------------------------------------------------------------------
# STFT


def num_frames(length: int, hop: int = HOP) -> int:
    return 1 + length // hop


def stft(audio, fft_size: int = FFT_SIZE, hop: int = HOP) -> Spectrogram:
    """Centred STFT with a periodic Hann window.

    The signal is reflect-padded by ``fft_size // 2`` on both sides, so frame
    ``t`` is centred on sample ``t * hop`` and there are ``1 + L // hop`` frames.
    """
    x, _ = _as_samples(audio)
    if x.size == 0:
        raise ValueError("empty signal")
    if x.size < fft_size:
        raise ValueError(f"signal of {x.size} samples is shorter than fft_size {fft_size}")
    pad = fft_size // 2
    padded = np.pad(x, pad, mode="reflect")
    n = num_frames(x.size, hop)
    frames = np.lib.stride_tricks.sliding_window_view(padded, fft_size)[::hop][:n]
    return Spectrogram(np.fft.rfft(frames * periodic_hann(fft_size), axis=1), fft_size, hop)


def istft(spec: Spectrogram, out_len: int, sample_rate: int = SAMPLE_RATE) -> AudioSegment:
    """Weighted overlap-add inverse of :func:`stft` (squared-window normalisation)."""
    n_fft, hop = spec.fft_size, spec.hop
    window = periodic_hann(n_fft)
    count = spec.frames.shape[0]
    total = n_fft + hop * (count - 1)
    frames = np.fft.irfft(spec.frames, n=n_fft, axis=1) * window

    out = np.zeros(total)
    envelope = np.zeros(total)
    win_sq = window**2
    for t in range(count):
        out[t * hop : t * hop + n_fft] += frames[t]
        envelope[t * hop : t * hop + n_fft] += win_sq

    pad = n_fft // 2
    if pad + out_len > total:
        raise ValueError(f"spectrogram with {count} frames cannot cover {out_len} samples")
    out = out[pad : pad + out_len]
    envelope = envelope[pad : pad + out_len]
    if envelope.size and envelope.min() < 1e-8:
        raise ValueError("overlap-add envelope vanishes; hop too large for the window")
    return AudioSegment(out / envelope, sample_rate)


# ---------------------------------------------------------------------------
# Mel


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def build_mel_filterbank(
    sample_rate: int = SAMPLE_RATE, fft_size: int = FFT_SIZE, num_mels: int = NUM_MELS
) -> MelFilterbank:
    """Triangular HTK-mel filters spanning 0 Hz to Nyquist.

    Each column is scaled so its largest sampled entry is exactly 1.0. Columns
    are deliberately not normalised by their bandwidth.
    """
    if num_mels < 1:
        raise ValueError("num_mels must be >= 1")
    if fft_size % 2:
        raise ValueError("fft_size must be even")
    num_bins = fft_size // 2 + 1
    bin_freqs = np.arange(num_bins) * sample_rate / fft_size
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), num_mels + 2))
    edges[0], edges[-1] = 0.0, sample_rate / 2.0  # exact outer edges despite round-off

    lower, centre, upper = edges[:-2], edges[1:-1], edges[2:]
    f = bin_freqs[:, None]
    rising = (f - lower) / (centre - lower)
    falling = (upper - f) / (upper - centre)
    weights = np.maximum(0.0, np.minimum(rising, falling))

    peaks = weights.max(axis=0)
    if np.any(peaks <= 0.0):
        raise ValueError(
            f"degenerate filterbank: {int(np.sum(peaks <= 0))} of {num_mels} bands "
            "contain no FFT bin"
        )
    return MelFilterbank(weights / peaks, sample_rate, num_mels)


def apply_mel(magnitude, fb: MelFilterbank) -> MelSpectrogram:
    mag = magnitude.magnitude if isinstance(magnitude, Spectrogram) else np.asarray(magnitude)
    if mag.shape[-1] != fb.weights.shape[0]:
        raise ValueError(
            f"magnitude has {mag.shape[-1]} bins but filterbank expects {fb.weights.shape[0]}"
        )
    return MelSpectrogram(
        mag @ fb.weights, fft_size=fb.fft_size, hop=HOP, sample_rate=fb.sample_rate
    )


def mel_spectrogram(audio, fb: MelFilterbank, hop: int = HOP) -> MelSpectrogram:
    spec = stft(audio, fb.fft_size, hop)
    mel = apply_mel(spec.magnitude, fb)
    mel.hop = hop
    return mel


# ---------------------------------------------------------------------------
# Filtering


def _kaiser_beta(atten_db: float) -> float:
    if atten_db > 50:
        return 0.1102 * (atten_db - 8.7)
    if atten_db >= 21:
        return 0.5842 * (atten_db - 21) ** 0.4 + 0.07886 * (atten_db - 21)
    return 0.0


def windowed_sinc(cutoff: float, sample_rate: float, num_taps: int, window: np.ndarray) -> np.ndarray:
    """Odd-length lowpass prototype normalised to unit DC gain."""
    if num_taps % 2 == 0:
        raise ValueError("num_taps must be odd")
    fc = cutoff / sample_rate
    n = np.arange(num_taps) - (num_taps - 1) / 2
    h = 2.0 * fc * np.sinc(2.0 * fc * n) * window
    return h / h.sum()


def design_lowpass(
    cutoff: float,
    sample_rate: int = SAMPLE_RATE,
    kind: str = "windowed-sinc-kaiser",
    *,
    beta: float | None = None,
    order: int = 8,
    ripple_db: float = 0.5,
    atten_db: float = 70.0,
    transition: float = 0.15,
) -> FirFilter:
    """Lowpass with its -6 dB point at ``cutoff``.

    Sinc designs place the transition band at ``cutoff * (1 +- transition)``;
    the Kaiser default reaches ``atten_db`` at the stopband edge.
    """
    nyquist = sample_rate / 2.0
    if not 0 < cutoff < nyquist:
        raise ValueError(f"cutoff {cutoff} Hz outside (0, {nyquist}) Hz")
    if kind not in FILTER_KINDS:
        raise ValueError(f"unknown filter kind {kind!r}; expected one of {FILTER_KINDS}")

    if kind in ("butterworth", "chebyshev1"):
        wn = cutoff / nyquist
        if kind == "butterworth":
            sos = sps.butter(order, wn, output="sos")
        else:
            sos = sps.cheby1(order, ripple_db, wn, output="sos")
        taps = sps.sosfilt(sos, np.r_[1.0, np.zeros(255)])
        return FirFilter(taps, cutoff, sample_rate, kind, sos)

    # keep the transition band below Nyquist
    width = min(transition * cutoff, nyquist - cutoff)
    width = max(width, 1e-3 * nyquist)
    delta_omega = 2.0 * np.pi * 2.0 * width / sample_rate
    if kind == "windowed-sinc-kaiser":
        beta = _kaiser_beta(atten_db) if beta is None else beta
        num_taps = int(np.ceil((atten_db - 7.95) / (2.285 * delta_omega))) + 1
    else:
        num_taps = int(np.ceil(6.2 * np.pi / delta_omega)) + 1
    num_taps = min(num_taps, 16 * sample_rate // 100 + 1)
    num_taps += 1 - num_taps % 2
    if kind == "windowed-sinc-kaiser":
        window = np.kaiser(num_taps, beta)
    else:
        window = np.hanning(num_taps + 2)[1:-1]
    return FirFilter(windowed_sinc(cutoff, sample_rate, num_taps, window), cutoff, sample_rate, kind)


# ---------------------------------------------------------------------------
# Resampling and convolution


def resample_ratio(source_rate: int, target_rate: int) -> tuple[int, int]:
    g = gcd(int(source_rate), int(target_rate))
    return int(target_rate) // g, int(source_rate) // g


def _resampling_filter(up: int, down: int, atten_db: float = 80.0) -> np.ndarray:
    # prototype runs at up * source rate; pass band edge 0.9 of the lower Nyquist
    band = 1.0 / max(up, down)  # lower Nyquist relative to the upsampled Nyquist
    f_pass, f_stop = 0.9 * band, band
    delta_omega = np.pi * (f_stop - f_pass)
    num_taps = int(np.ceil((atten_db - 7.95) / (2.285 * delta_omega))) + 1
    num_taps += 1 - num_taps % 2
    cutoff = 0.5 * (f_pass + f_stop) / 2.0  # in cycles per upsampled sample
    return windowed_sinc(cutoff, 1.0, num_taps, np.kaiser(num_taps, _kaiser_beta(atten_db)))


def resample(audio: AudioSegment, target_rate: int) -> AudioSegment:
    """Rational-ratio polyphase resampling to ``round(L * target / source)`` samples."""
    if target_rate <= 0 or int(target_rate) != target_rate:
        raise ValueError(f"invalid target rate {target_rate}")
    target_rate = int(target_rate)
    if target_rate == audio.sample_rate:
        return AudioSegment(audio.samples.copy(), target_rate)
    up, down = resample_ratio(audio.sample_rate, target_rate)
    taps = _resampling_filter(up, down)
    out = sps.resample_poly(audio.samples, up, down, window=taps)
    n_out = int(round(len(audio) * target_rate / audio.sample_rate))
    if out.size < n_out:
        out = np.pad(out, (0, n_out - out.size))
    return AudioSegment(out[:n_out], target_rate)


def convolve_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if min(len(a), len(b)) <= 64:
        return np.convolve(a, b)
    return sps.oaconvolve(a, b)


def convolve(audio, kernel, mode: str = "full"):
    """Linear convolution. ``same-length`` keeps the first ``len(audio)`` samples."""
    x, rate = _as_samples(audio)
    k = np.asarray(kernel, dtype=np.float64)
    if k.size == 0:
        raise ValueError("kernel must be non-empty")
    if mode not in ("full", "same-length"):
        raise ValueError(f"unknown convolution mode {mode!r}")
    y = convolve_arrays(x, k)
    if mode == "same-length":
        y = y[: x.size]
    return AudioSegment(y, rate) if rate is not None else y
