"""Objective speech-quality metrics and corpus-level reports."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .dsp import AudioSegment

LSD_FLOOR = 1e-12
SI_SDR_CAP_DB = 100.0

# STOI constants (Taal et al., 2011)
STOI_RATE = 10000
STOI_FRAME = 256
STOI_NFFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ = 150.0
STOI_SEGMENT = 30  # frames, 384 ms
STOI_BETA_DB = -15.0
STOI_DYN_RANGE_DB = 40.0
_EPS = np.finfo(float).eps


def _pair(ref, est):
    r, rate_r = dsp._as_samples(ref)
    e, rate_e = dsp._as_samples(est)
    if r.shape != e.shape:
        raise ValueError(f"length mismatch: reference {r.shape} vs estimate {e.shape}")
    if rate_r and rate_e and rate_r != rate_e:
        raise ValueError(f"sample rate mismatch: {rate_r} vs {rate_e}")
    return r, e, rate_r or rate_e or dsp.SAMPLE_RATE


def lsd(ref, est, fft_size: int = dsp.FFT_SIZE, hop: int = dsp.HOP) -> float:
    """Log-spectral distance on power spectra (log10 units), frame-averaged.

    ``ref`` is the reference; the direction matters only through the floor.
    """
    r, e, _ = _pair(ref, est)
    pr = np.abs(dsp.stft(r, fft_size, hop).frames) ** 2
    pe = np.abs(dsp.stft(e, fft_size, hop).frames) ** 2
    return lsd_from_power(pr, pe)


def lsd_from_power(ref_power: np.ndarray, est_power: np.ndarray) -> float:
    diff = np.log10(ref_power + LSD_FLOOR) - np.log10(est_power + LSD_FLOOR)
    return float(np.mean(np.sqrt(np.mean(diff**2, axis=1))))


# ---------------------------------------------------------------------------
# SSIM


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    g = np.exp(-0.5 * ((np.arange(size) - (size - 1) / 2) / sigma) ** 2)
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(img: np.ndarray, g1: np.ndarray) -> np.ndarray:
    # separable valid-mode correlation with a symmetric kernel
    rows = np.apply_along_axis(lambda v: np.convolve(v, g1, mode="valid"), 0, img)
    return np.apply_along_axis(lambda v: np.convolve(v, g1, mode="valid"), 1, rows)


def ssim_image(ref: np.ndarray, est: np.ndarray, k1=0.01, k2=0.03, size=11, sigma=1.5) -> float:
    """Mean SSIM over all fully-covered window positions.

    The dynamic range is the maximum of ``ref``; statistics are Gaussian-weighted
    population moments.
    """
    ref = np.asarray(ref, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if ref.shape != est.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {est.shape}")
    if min(ref.shape) < size:
        raise ValueError(f"images must be at least {size}x{size}, got {ref.shape}")
    data_range = float(ref.max())
    if data_range <= 0:
        data_range = 1.0
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    g = np.exp(-0.5 * ((np.arange(size) - (size - 1) / 2) / sigma) ** 2)
    g /= g.sum()

    mu_r = _filter_valid(ref, g)
    mu_e = _filter_valid(est, g)
    var_r = _filter_valid(ref * ref, g) - mu_r * mu_r
    var_e = _filter_valid(est * est, g) - mu_e * mu_e
    cov = _filter_valid(ref * est, g) - mu_r * mu_e
    num = (2 * mu_r * mu_e + c1) * (2 * cov + c2)
    den = (mu_r * mu_r + mu_e * mu_e + c1) * (var_r + var_e + c2)
    return float(np.mean(num / den))


def ssim_spec(ref, est, fft_size: int = dsp.FFT_SIZE, hop: int = dsp.HOP) -> float:
    """SSIM between magnitude spectrograms treated as grayscale images."""
    r, e, _ = _pair(ref, est)
    return ssim_image(dsp.stft(r, fft_size, hop).magnitude, dsp.stft(e, fft_size, hop).magnitude)


# ---------------------------------------------------------------------------
# STOI


def _stoi_window() -> np.ndarray:
    # symmetric Hann without the zero end points (MATLAB ``hanning``)
    return np.hanning(STOI_FRAME + 2)[1:-1]


def _frame_starts(length: int, hop: int) -> range:
    return range(0, length - STOI_FRAME, hop)


def third_octave_matrix(rate=STOI_RATE, nfft=STOI_NFFT, num_bands=STOI_BANDS, min_freq=STOI_MIN_FREQ):
    freqs = np.arange(nfft // 2 + 1) * rate / nfft
    k = np.arange(num_bands)
    lows = min_freq * 2.0 ** ((2 * k - 1) / 6)
    highs = min_freq * 2.0 ** ((2 * k + 1) / 6)
    obm = np.zeros((num_bands, freqs.size))
    for i in range(num_bands):
        lo = int(np.argmin(np.abs(freqs - lows[i])))
        hi = int(np.argmin(np.abs(freqs - highs[i])))
        obm[i, lo:hi] = 1.0
    return obm


def _remove_silent_frames(x: np.ndarray, y: np.ndarray):
    hop = STOI_FRAME // 2
    w = _stoi_window()
    starts = list(_frame_starts(x.size, hop))
    if not starts:
        raise ValueError("signal too short for STOI")
    xf = np.stack([w * x[i : i + STOI_FRAME] for i in starts])
    yf = np.stack([w * y[i : i + STOI_FRAME] for i in starts])
    energy = 20.0 * np.log10(np.linalg.norm(xf, axis=1) + _EPS)
    keep = energy > energy.max() - STOI_DYN_RANGE_DB
    xf, yf = xf[keep], yf[keep]
    n = (xf.shape[0] - 1) * hop + STOI_FRAME
    x_out, y_out = np.zeros(n), np.zeros(n)
    for j in range(xf.shape[0]):
        x_out[j * hop : j * hop + STOI_FRAME] += xf[j]
        y_out[j * hop : j * hop + STOI_FRAME] += yf[j]
    return x_out, y_out


def _stoi_bands(x: np.ndarray, obm: np.ndarray) -> np.ndarray:
    hop = STOI_FRAME // 2
    w = _stoi_window()
    frames = np.stack([w * x[i : i + STOI_FRAME] for i in _frame_starts(x.size, hop)])
    spec = np.fft.rfft(frames, n=STOI_NFFT, axis=1)
    return np.sqrt(obm @ (np.abs(spec) ** 2).T)  # (bands, frames)


def stoi(ref, est, sample_rate: int | None = None) -> float:
    """Short-time objective intelligibility of ``est`` against clean ``ref``."""
    r, e, rate = _pair(ref, est)
    rate = sample_rate or rate
    if rate != STOI_RATE:
        r = dsp.resample(AudioSegment(r, rate), STOI_RATE).samples
        e = dsp.resample(AudioSegment(e, rate), STOI_RATE).samples
    if r.size <= STOI_FRAME:
        raise ValueError("signal too short for STOI")
    r, e = _remove_silent_frames(r, e)
    obm = third_octave_matrix()
    if r.size <= STOI_FRAME:
        raise ValueError("signal too short for STOI after silence removal")
    xb = _stoi_bands(r, obm)
    yb = _stoi_bands(e, obm)
    if xb.shape[1] < STOI_SEGMENT:
        raise ValueError(
            f"too short for STOI: {xb.shape[1]} active frames, need {STOI_SEGMENT} (384 ms)"
        )

    clip = 10.0 ** (-STOI_BETA_DB / 20.0)
    total, count = 0.0, 0
    for m in range(STOI_SEGMENT, xb.shape[1] + 1):
        xs = xb[:, m - STOI_SEGMENT : m]
        ys = yb[:, m - STOI_SEGMENT : m]
        alpha = np.linalg.norm(xs, axis=1, keepdims=True) / (np.linalg.norm(ys, axis=1, keepdims=True) + _EPS)
        yp = np.minimum(ys * alpha, xs * (1.0 + clip))
        yp = yp - yp.mean(axis=1, keepdims=True)
        xc = xs - xs.mean(axis=1, keepdims=True)
        corr = np.sum(yp * xc, axis=1) / (
            (np.linalg.norm(yp, axis=1) + _EPS) * (np.linalg.norm(xc, axis=1) + _EPS)
        )
        total += corr.sum()
        count += corr.size
    return float(total / count)


# ---------------------------------------------------------------------------
# SI-SDR


def si_sdr(ref, est) -> float:
    """Scale-invariant SDR in dB, capped at +100 dB for exact matches."""
    r, e, _ = _pair(ref, est)
    energy = np.dot(r, r)
    if energy == 0.0:
        raise ValueError("reference signal is all zeros")
    target = (np.dot(e, r) / energy) * r
    noise = e - target
    t_energy, n_energy = np.dot(target, target), np.dot(noise, noise)
    if n_energy <= t_energy * 10.0 ** (-SI_SDR_CAP_DB / 10.0):
        return SI_SDR_CAP_DB
    if t_energy == 0.0:
        return -SI_SDR_CAP_DB
    return float(10.0 * np.log10(t_energy / n_energy))


# ---------------------------------------------------------------------------
# Reports

METRICS = {"lsd": lsd, "ssim": ssim_spec, "stoi": stoi, "si_sdr": si_sdr}
REPORT_COLUMNS = ("lsd", "ssim", "stoi", "si_sdr", "pesq_wb")


@dataclass
class MetricsReport:
    per_utterance: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    failures: list[dict] = field(default_factory=list)

    @property
    def metric_names(self) -> list[str]:
        return [c for c in REPORT_COLUMNS if any(c in row for row in self.per_utterance)]

    @property
    def aggregate(self) -> dict:
        agg = {"count": len(self.per_utterance)}
        for name in self.metric_names:
            vals = np.array([row[name] for row in self.per_utterance if row.get(name) is not None], float)
            agg[name] = {
                "mean": float(np.mean(vals)) if vals.size else None,
                "std": float(np.std(vals)) if vals.size else None,
            }
        return agg

    def to_dict(self) -> dict:
        body = {
            "meta": self.meta,
            "direction": "metric(reference=clean, estimate=evaluated)",
            "per_utterance": self.per_utterance,
            "aggregate": self.aggregate,
            "failures": self.failures,
        }
        if not self.per_utterance:
            body["note"] = "0 utterances"
        return body

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        cols = ["id", *self.metric_names]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols)
        for row in self.per_utterance:
            writer.writerow([_fmt(row.get(c)) for c in cols])
        agg = self.aggregate
        for stat in ("mean", "std"):
            writer.writerow([f"__{stat}__", *[_fmt(agg[c][stat]) for c in cols[1:]]])
        writer.writerow(["__count__", len(self.per_utterance), *[""] * (len(cols) - 2)])
        return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def score_pair(ref, est, metrics=("lsd", "ssim", "stoi", "si_sdr")) -> dict:
    row = {name: METRICS[name](ref, est) for name in metrics}
    row["pesq_wb"] = None
    return row


def evaluate_pairs(pairs, metrics=("lsd", "ssim", "stoi", "si_sdr"), meta=None) -> MetricsReport:
    """Score an iterable of ``(item_id, load_ref, load_est)``.

    Items whose files cannot be loaded or scored are recorded in ``failures``
    and the run continues. PESQ-wb is not computed; its column is reserved as null.
    """
    report = MetricsReport(meta=dict(meta or {}))
    for item_id, load_ref, load_est in pairs:
        try:
            row = {"id": item_id, **score_pair(load_ref(), load_est(), metrics)}
        except (OSError, ValueError) as exc:
            report.failures.append({"id": item_id, "error": str(exc)})
            continue
        report.per_utterance.append(row)
    return report
