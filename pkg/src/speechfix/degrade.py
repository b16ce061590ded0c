"""Distortion models and their seeded composition into degradation chains."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp, rir as rirlib
from .dsp import AudioSegment

DISTORTION_KINDS = ("noise", "reverb", "clip", "low_bandwidth")
DEFAULT_ORDER = ("reverb", "noise", "clip", "low_bandwidth")
NOISE_COLOURS = ("white", "pink", "brown")
CHAIN_SCHEMA_VERSION = 1


def rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def fit_length(n: np.ndarray, length: int) -> np.ndarray:
    """Loop or crop ``n`` to exactly ``length`` samples."""
    if n.size == 0:
        raise ValueError("empty noise signal")
    reps = -(-length // n.size)
    return np.tile(n, reps)[:length]


def noise_gain(s: np.ndarray, n: np.ndarray, snr_db: float) -> float:
    s_rms, n_rms = rms(s), rms(n)
    if s_rms == 0.0 or n_rms == 0.0:
        raise ValueError("undefined SNR: speech or noise is silent")
    return s_rms / (n_rms * 10.0 ** (snr_db / 20.0))


def apply_noise(s: AudioSegment, n: AudioSegment, snr_db: float) -> AudioSegment:
    """Additive noise scaled so that speech-to-noise RMS ratio is ``snr_db``."""
    if s.sample_rate != n.sample_rate:
        raise ValueError(f"sample rates differ: {s.sample_rate} vs {n.sample_rate}")
    noise = fit_length(n.samples, len(s))
    g = noise_gain(s.samples, noise, snr_db)
    return AudioSegment(s.samples + g * noise, s.sample_rate)


def align_rir(rir: np.ndarray) -> np.ndarray:
    """Peak-normalise and drop everything before the direct-path peak."""
    rir = np.asarray(rir, dtype=np.float64)
    if rir.size == 0 or not np.any(rir):
        raise ValueError("room impulse response is all zeros")
    peak = int(np.argmax(np.abs(rir)))
    return rir[peak:] / rir[peak]


def apply_reverb(s: AudioSegment, rir: np.ndarray, wet: float = 1.0) -> AudioSegment:
    """Convolve with an aligned RIR, truncated to the input length.

    ``wet`` < 1 mixes the dry signal back in.
    """
    h = align_rir(rir)
    y = dsp.convolve(s.samples, h, mode="same-length")
    if wet != 1.0:
        y = (1.0 - wet) * s.samples + wet * y
    return AudioSegment(y, s.sample_rate)


def apply_clip(s: AudioSegment, eta: float) -> AudioSegment:
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"clipping level {eta} outside [0, 1]")
    return AudioSegment(np.maximum(np.minimum(s.samples, eta), -eta), s.sample_rate)


def apply_low_bandwidth(
    s: AudioSegment,
    cutoff: float,
    kind: str = "windowed-sinc-kaiser",
    restore_rate: bool = True,
) -> AudioSegment:
    """Lowpass at ``cutoff`` then resample to ``2 * cutoff``.

    With ``restore_rate`` the result is resampled back to the input rate so it
    stays sample-aligned with the clean signal.
    """
    if not 1000.0 <= 2.0 * cutoff <= s.sample_rate:
        raise ValueError(f"cutoff {cutoff} Hz outside [500, {s.sample_rate / 2}] Hz")
    low_rate = int(round(2.0 * cutoff))
    if low_rate >= s.sample_rate:
        return AudioSegment(s.samples.copy(), s.sample_rate)
    h = dsp.design_lowpass(cutoff, s.sample_rate, kind)
    filtered = AudioSegment(h.apply(s.samples), s.sample_rate)
    low = dsp.resample(filtered, low_rate)
    if not restore_rate:
        return low
    back = dsp.resample(low, s.sample_rate)
    return AudioSegment(fit_length_pad(back.samples, len(s)), s.sample_rate)


def fit_length_pad(x: np.ndarray, length: int) -> np.ndarray:
    if x.size >= length:
        return x[:length]
    return np.pad(x, (0, length - x.size))


def coloured_noise(colour: str, length: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-RMS white, pink (1/f) or brown (1/f^2) noise."""
    if colour not in NOISE_COLOURS:
        raise ValueError(f"unknown noise colour {colour!r}")
    white = rng.standard_normal(length)
    if colour != "white":
        spec = np.fft.rfft(white)
        f = np.arange(spec.size, dtype=float)
        f[0] = 1.0
        spec /= f ** (0.5 if colour == "pink" else 1.0)
        spec[0] = 0.0
        white = np.fft.irfft(spec, n=length)
    return white / rms(white)


# ---------------------------------------------------------------------------
# Chains


@dataclass
class DistortionSpec:
    """One distortion and the ranges its parameters are drawn from.

    params per kind:
      noise:          snr_db [lo, hi]; source "white"|"pink"|"brown"|"any"|"bank"
      reverb:         rir "simulate"|"bank"; rt60 [lo, hi]; wet [lo, hi]
      clip:           eta [lo, hi]
      low_bandwidth:  cutoff_hz [lo, hi] (log-uniform); filters [...]; restore_rate
    Every kind also accepts ``prob``, the chance the distortion is applied.
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in DISTORTION_KINDS:
            raise ValueError(f"unknown distortion kind {self.kind!r}")
        unknown = set(self.params) - set(DEFAULT_PARAMS[self.kind])
        if unknown:
            raise ValueError(f"{self.kind}: unknown parameters {sorted(unknown)}")
        self.params = {**DEFAULT_PARAMS[self.kind], **self.params}
        p = self.params
        for key in ("snr_db", "rt60", "wet", "eta", "cutoff_hz"):
            if key in p:
                lo, hi = p[key]
                if lo > hi:
                    raise ValueError(f"{self.kind}.{key}: empty range [{lo}, {hi}]")
        if self.kind == "clip" and not 0.0 <= p["eta"][0] <= p["eta"][1] <= 1.0:
            raise ValueError(f"clip.eta range {p['eta']} must lie in [0, 1]")
        if self.kind == "low_bandwidth":
            lo, hi = p["cutoff_hz"]
            if lo < 1000.0 or hi > 22050.0:
                raise ValueError("low_bandwidth.cutoff_hz must lie in [1000, 22050] Hz")
            for k in p["filters"]:
                if k not in dsp.FILTER_KINDS:
                    raise ValueError(f"unknown filter kind {k!r}")
        if self.kind == "reverb" and p["rir"] not in ("simulate", "bank"):
            raise ValueError(f"reverb.rir must be 'simulate' or 'bank', got {p['rir']!r}")
        if not 0.0 <= p["prob"] <= 1.0:
            raise ValueError("prob must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}

    @classmethod
    def from_dict(cls, d: dict) -> "DistortionSpec":
        d = dict(d)
        kind = d.pop("kind")
        return cls(kind, d)


DEFAULT_PARAMS = {
    "noise": {"snr_db": [-5.0, 40.0], "source": "any", "prob": 1.0},
    "reverb": {"rir": "simulate", "rt60": [0.05, 1.0], "wet": [1.0, 1.0], "prob": 1.0},
    "clip": {"eta": [0.1, 1.0], "prob": 1.0},
    "low_bandwidth": {
        "cutoff_hz": [1000.0, 22050.0],
        "filters": list(dsp.FILTER_KINDS),
        "restore_rate": True,
        "prob": 1.0,
    },
}


@dataclass
class DistortionChain:
    specs: list[DistortionSpec] = field(default_factory=list)
    master_seed: int = 0

    @classmethod
    def default(cls, master_seed: int = 0) -> "DistortionChain":
        return cls([DistortionSpec(k) for k in DEFAULT_ORDER], master_seed)

    def to_dict(self) -> dict:
        return {
            "version": CHAIN_SCHEMA_VERSION,
            "master_seed": self.master_seed,
            "specs": [s.to_dict() for s in self.specs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DistortionChain":
        version = d.get("version", CHAIN_SCHEMA_VERSION)
        if version != CHAIN_SCHEMA_VERSION:
            raise ValueError(f"unsupported chain schema version {version}")
        return cls([DistortionSpec.from_dict(s) for s in d.get("specs", [])], int(d.get("master_seed", 0)))

    @classmethod
    def from_json(cls, path) -> "DistortionChain":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class Resources:
    """Optional external material: noise recordings and an RIR bank."""

    noises: list[AudioSegment] = field(default_factory=list)
    rirs: list[np.ndarray] = field(default_factory=list)
    rir_ids: list[str] = field(default_factory=list)


def item_rng(master_seed: int, item_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(master_seed) & (2**64 - 1), int(item_index)]))


def _uniform(rng, bounds) -> float:
    lo, hi = bounds
    return float(lo) if lo == hi else float(rng.uniform(lo, hi))


def _log_uniform(rng, bounds) -> float:
    lo, hi = bounds
    return float(lo) if lo == hi else float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def _apply_one(spec, s, rng, resources, applied):
    p = spec.params
    if spec.kind == "noise":
        snr = _uniform(rng, p["snr_db"])
        source = p["source"]
        if source == "bank":
            if not resources.noises:
                raise ValueError("noise source 'bank' requested but no noise files loaded")
            idx = int(rng.integers(len(resources.noises)))
            raw = resources.noises[idx].samples
            offset = int(rng.integers(raw.size))
            noise = np.roll(raw, -offset)
            applied.update(noise=f"bank:{idx}", noise_offset=offset)
        else:
            colour = NOISE_COLOURS[int(rng.integers(3))] if source == "any" else source
            noise = coloured_noise(colour, len(s), rng)
            applied.update(noise=colour)
        applied["snr_db"] = snr
        return apply_noise(s, AudioSegment(noise, s.sample_rate), snr)

    if spec.kind == "reverb":
        wet = _uniform(rng, p["wet"])
        if p["rir"] == "bank":
            if not resources.rirs:
                raise ValueError("reverb source 'bank' requested but no RIRs loaded")
            idx = int(rng.integers(len(resources.rirs)))
            h = resources.rirs[idx]
            applied["rir_id"] = resources.rir_ids[idx] if resources.rir_ids else str(idx)
        else:
            room_seed = int(rng.integers(2**63))
            room = rirlib.sample_room(room_seed, rt60_range=tuple(p["rt60"]))
            h = rirlib.simulate_rir(room, s.sample_rate, seed=room_seed)
            applied.update(rir_id=f"sim:{room_seed}", room=room.to_dict())
        applied["wet"] = wet
        return apply_reverb(s, h, wet)

    if spec.kind == "clip":
        eta = _uniform(rng, p["eta"])
        applied["eta"] = eta
        return apply_clip(s, eta)

    # low_bandwidth: cutoff on a 50 Hz grid keeps the resampling ratio small
    cutoff = _log_uniform(rng, p["cutoff_hz"])
    cutoff = min(max(50.0 * round(cutoff / 50.0), 500.0), s.sample_rate / 2.0)
    kind = p["filters"][int(rng.integers(len(p["filters"])))]
    applied.update(cutoff_hz=cutoff, filter=kind, restore_rate=bool(p["restore_rate"]))
    return apply_low_bandwidth(s, cutoff, kind, restore_rate=bool(p["restore_rate"]))


def compose(
    chain: DistortionChain,
    s: AudioSegment,
    item_index: int,
    resources: Resources | None = None,
) -> tuple[AudioSegment, list[dict]]:
    """Apply the chain in order with parameters drawn from a per-item stream.

    Returns the degraded audio and the parameters actually drawn.
    """
    resources = resources or Resources()
    rng = item_rng(chain.master_seed, item_index)
    applied_all = []
    x = AudioSegment(s.samples.copy(), s.sample_rate)
    for spec in chain.specs:
        applied = {"kind": spec.kind}
        if spec.params["prob"] < 1.0 and rng.uniform() >= spec.params["prob"]:
            applied["skipped"] = True
            applied_all.append(applied)
            continue
        x = _apply_one(spec, x, rng, resources, applied)
        applied_all.append(applied)
    return x, applied_all
