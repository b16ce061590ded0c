"""Formant-synthesised speech-like utterances for desk-scale corpora.

Real clean-speech corpora are not bundled. This generator produces signals
with the properties the pipeline and metrics care about: voiced harmonics with
moving formants, fricative and plosive noise, syllabic amplitude modulation,
pauses, and a low recording-noise floor.
"""

from __future__ import annotations

import numpy as np
from scipy import signal as sps

from .dsp import AudioSegment

SAMPLE_RATE = 44100
BLOCK = 220  # samples between formant updates (5 ms)

# (F1, F2, F3) in Hz, adult averages
VOWELS = {
    "i": (270, 2290, 3010),
    "I": (390, 1990, 2550),
    "e": (530, 1840, 2480),
    "ae": (660, 1720, 2410),
    "a": (730, 1090, 2440),
    "o": (570, 840, 2410),
    "U": (440, 1020, 2240),
    "u": (300, 870, 2240),
    "V": (640, 1190, 2390),
    "3": (490, 1350, 1690),
}
FORMANT_BANDWIDTHS = (80.0, 100.0, 140.0, 200.0, 260.0)
UPPER_FORMANTS = (3500.0, 4500.0)

# fricative noise bands (low, high) in Hz and RMS level in dB re vowel level
FRICATIVES = {
    "s": (4000.0, 10000.0, -10.0),
    "sh": (2000.0, 7000.0, -8.0),
    "f": (1200.0, 12000.0, -20.0),
    "th": (1500.0, 11000.0, -22.0),
    "h": (400.0, 6000.0, -18.0),
}
BURST_LEVEL_DB = -6.0
PLOSIVE_BURSTS = {"p": (500.0, 4000.0), "t": (2500.0, 9000.0), "k": (1500.0, 5000.0)}
NASAL_FORMANTS = (250.0, 1100.0, 2300.0)
HF_BRANCH_GAIN = 0.05
_HF_SOS = sps.butter(2, 4000.0, "highpass", fs=SAMPLE_RATE, output="sos")


def _resonator(freq, bw, fs):
    r = np.exp(-np.pi * bw / fs)
    c = -r * r
    b = 2.0 * r * np.cos(2.0 * np.pi * freq / fs)
    a0 = 1.0 - b - c
    return np.array([a0]), np.array([1.0, -b, -c])


def _cascade_formants(excitation, tracks, fs):
    """Filter ``excitation`` through resonators following per-block formant tracks."""
    out = excitation.copy()
    n_blocks = tracks.shape[0]
    for k in range(tracks.shape[1]):
        zi = np.zeros(2)
        y = np.empty_like(out)
        bw = FORMANT_BANDWIDTHS[k]
        for j in range(n_blocks):
            lo, hi = j * BLOCK, min((j + 1) * BLOCK, out.size)
            if lo >= hi:
                break
            b, a = _resonator(tracks[j, k], bw, fs)
            y[lo:hi], zi = sps.lfilter(b, a, out[lo:hi], zi=zi)
        out = y
    return out


def _glottal_source(f0, fs, rng):
    """Differentiated Rosenberg pulses following an F0 contour (Hz per sample)."""
    phase = np.cumsum(f0 / fs)
    frac = phase - np.floor(phase)
    open_q, close_q = 0.4, 0.25
    flow = np.where(
        frac < open_q,
        0.5 * (1.0 - np.cos(np.pi * frac / open_q)),
        np.where(
            frac < open_q + close_q,
            np.cos(0.5 * np.pi * (frac - open_q) / close_q),
            0.0,
        ),
    )
    shimmer = 1.0 + 0.05 * rng.standard_normal(int(np.floor(phase[-1])) + 2)
    flow *= shimmer[np.floor(phase).astype(int)]
    source = np.diff(flow, prepend=0.0)
    aspiration = 0.02 * rng.standard_normal(f0.size) * flow
    return source + aspiration


def _bandpass_noise(length, lo, hi, fs, rng):
    hi = min(hi, 0.45 * fs)
    sos = sps.butter(4, [lo, hi], btype="bandpass", fs=fs, output="sos")
    n = sps.sosfilt(sos, rng.standard_normal(length + 2048))[2048:]
    return n / (np.sqrt(np.mean(n**2)) + 1e-12)


def _envelope(length, attack, release, fs):
    env = np.ones(length)
    a = min(int(attack * fs), length // 2)
    r = min(int(release * fs), length // 2)
    if a:
        env[:a] = 0.5 - 0.5 * np.cos(np.pi * np.arange(a) / a)
    if r:
        env[-r:] = 0.5 + 0.5 * np.cos(np.pi * np.arange(r) / r)
    return env


def _plan(duration, rng):
    """Sequence of (kind, length_s, payload) segments filling ``duration``."""
    segments = []
    t = 0.0
    lead = rng.uniform(0.05, 0.3)
    segments.append(("pause", lead, None))
    t += lead
    vowels = list(VOWELS)
    while t < duration:
        for _ in range(int(rng.integers(2, 7))):  # words in a phrase
            for _ in range(int(rng.integers(1, 4))):  # syllables in a word
                stress = rng.uniform(-6.0, 2.0)
                onset = rng.choice(["none", "fric", "plosive", "nasal"], p=[0.25, 0.3, 0.3, 0.15])
                if onset == "fric":
                    name = rng.choice(list(FRICATIVES))
                    seg = ("fric", rng.uniform(0.06, 0.14), (name, stress))
                    segments.append(seg)
                    t += seg[1]
                elif onset == "plosive":
                    name = rng.choice(list(PLOSIVE_BURSTS))
                    closure = rng.uniform(0.03, 0.07)
                    segments.append(("pause", closure, None))
                    segments.append(("burst", rng.uniform(0.015, 0.035), (name, stress)))
                    t += closure + segments[-1][1]
                elif onset == "nasal":
                    seg = ("nasal", rng.uniform(0.05, 0.1), stress)
                    segments.append(seg)
                    t += seg[1]
                v = ("vowel", rng.uniform(0.08, 0.26), (rng.choice(vowels), rng.choice(vowels), stress))
                segments.append(v)
                t += v[1]
            gap = rng.uniform(0.01, 0.12)
            segments.append(("pause", gap, None))
            t += gap
            if t >= duration:
                break
        pause = rng.uniform(0.15, 0.5)
        segments.append(("pause", pause, None))
        t += pause
    return segments


def synth_utterance(
    duration: float = 3.0,
    seed: int = 0,
    sample_rate: int = SAMPLE_RATE,
    floor_db: float = -60.0,
) -> AudioSegment:
    """One speech-like utterance of exactly ``duration`` seconds.

    The level is set so the peak lies in [0.3, 0.9]; ``floor_db`` is the RMS of
    the background noise floor relative to the active-speech RMS.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5350454543]))
    fs = sample_rate
    length = int(round(duration * fs))
    segments = _plan(duration, rng)

    speaker_f0 = rng.uniform(90.0, 230.0)
    scale = rng.uniform(0.9, 1.12)  # vocal-tract length scaling of formants

    voiced = np.zeros(length + fs)
    unvoiced = np.zeros(length + fs)
    n_blocks = (voiced.size + BLOCK - 1) // BLOCK
    tracks = np.zeros((n_blocks, 5))
    tracks[:, 3], tracks[:, 4] = UPPER_FORMANTS
    tracks[:, :3] = np.array(VOWELS["3"]) * scale
    gain = np.zeros(voiced.size)

    pos = 0
    for kind, seg_len, payload in segments:
        n = int(seg_len * fs)
        if pos + n > voiced.size:
            n = voiced.size - pos
        if n <= 0:
            break
        b0, b1 = pos // BLOCK, (pos + n) // BLOCK + 1
        if kind == "vowel":
            v_start, v_end, stress = payload
            f_a = np.array(VOWELS[v_start]) * scale
            f_b = np.array(VOWELS[v_end]) * scale
            w = np.linspace(0.0, 1.0, b1 - b0)[:, None]
            w = 0.5 - 0.5 * np.cos(np.pi * w)
            tracks[b0:b1, :3] = (1 - w) * f_a + w * f_b
            gain[pos : pos + n] = 10 ** (stress / 20.0) * _envelope(n, 0.02, 0.04, fs)
        elif kind == "nasal":
            tracks[b0:b1, :3] = np.array(NASAL_FORMANTS) * scale
            gain[pos : pos + n] = 0.3 * 10 ** (payload / 20.0) * _envelope(n, 0.01, 0.01, fs)
        elif kind == "fric":
            name, stress = payload
            lo, hi, level = FRICATIVES[name]
            amp = 10 ** ((stress + level) / 20.0)
            unvoiced[pos : pos + n] += amp * _bandpass_noise(n, lo, hi, fs, rng) * _envelope(n, 0.02, 0.02, fs)
        elif kind == "burst":
            name, stress = payload
            lo, hi = PLOSIVE_BURSTS[name]
            amp = 10 ** ((stress + BURST_LEVEL_DB) / 20.0)
            decay = np.exp(-np.arange(n) / (0.3 * n))
            unvoiced[pos : pos + n] += amp * _bandpass_noise(n, lo, hi, fs, rng) * decay
        pos += n

    # F0: declining phrase contour with slow random wander and jitter
    t = np.arange(voiced.size) / fs
    wander = np.interp(t, np.arange(0, t[-1] + 0.25, 0.25), rng.normal(0.0, 0.06, int(t[-1] / 0.25) + 2))
    f0 = speaker_f0 * (1.0 + wander) * (1.1 - 0.2 * (t / max(duration, 1e-3)))
    f0 *= 1.0 + 0.005 * rng.standard_normal(voiced.size)
    f0 = np.clip(f0, 60.0, 400.0)

    excitation = _glottal_source(f0, fs, rng) * np.convolve(gain, np.ones(64) / 64, mode="same")
    voiced = _cascade_formants(excitation, tracks, fs)
    # parallel branch for the region above the cascade's formants
    voiced += HF_BRANCH_GAIN * sps.sosfilt(_HF_SOS, excitation)
    # radiation at the lips: first difference
    voiced = np.diff(voiced, prepend=0.0) * 8.0

    # unvoiced levels are relative to the vowel level at 0 dB stress
    voiced_level = np.sqrt(np.sum(voiced**2) / max(np.sum(gain**2), 1e-12))
    speech = (voiced / max(voiced_level, 1e-12) + unvoiced)[:length]
    active = speech[np.abs(speech) > 1e-4 * np.abs(speech).max()]
    speech_rms = np.sqrt(np.mean(active**2)) if active.size else 1.0

    floor = rng.standard_normal(length + 4096)
    floor = sps.lfilter([1.0], [1.0, -0.5], floor)[4096:]  # gently tilted floor
    floor *= speech_rms * 10 ** (floor_db / 20.0) / np.sqrt(np.mean(floor**2))
    out = speech + floor
    out *= rng.uniform(0.3, 0.9) / np.abs(out).max()
    return AudioSegment(out, fs)


def synth_corpus(count: int, duration: float = 3.0, seed: int = 0, sample_rate: int = SAMPLE_RATE):
    """``count`` utterances with per-item seeds derived from ``seed``."""
    return [synth_utterance(duration, seed * 1_000_003 + i, sample_rate) for i in range(count)]
