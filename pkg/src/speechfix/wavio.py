"""RIFF/WAVE reading and writing for PCM16 and IEEE float32."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .dsp import AudioSegment

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class WavError(ValueError):
    pass


def _chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8 : pos + 8 + size]
        yield cid, size, body
        pos += 8 + size + (size & 1)


def wav_read(path) -> AudioSegment:
    """Read a mono or stereo WAV; stereo is averaged to mono."""
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise WavError(f"{path}: truncated file, missing RIFF header")
    riff, _, wave = struct.unpack_from("<4sI4s", data, 0)
    if riff != b"RIFF" or wave != b"WAVE":
        raise WavError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    samples = None
    for cid, size, body in _chunks(data):
        if cid == b"fmt ":
            if len(body) < 16:
                raise WavError(f"{path}: truncated 'fmt ' chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
            if fmt[0] == WAVE_FORMAT_EXTENSIBLE:
                if len(body) < 26:
                    raise WavError(f"{path}: truncated extensible 'fmt ' chunk")
                fmt = (struct.unpack_from("<H", body, 24)[0],) + fmt[1:]
        elif cid == b"data":
            if fmt is None:
                raise WavError(f"{path}: 'data' chunk before 'fmt ' chunk")
            if len(body) < size:
                raise WavError(
                    f"{path}: truncated 'data' chunk ({len(body)} of {size} bytes present)"
                )
            samples = body
            break
    if fmt is None:
        raise WavError(f"{path}: missing 'fmt ' chunk")
    if samples is None:
        raise WavError(f"{path}: missing 'data' chunk")

    tag, channels, rate, _, _, bits = fmt
    if tag == WAVE_FORMAT_PCM and bits == 16:
        x = np.frombuffer(samples[: len(samples) // 2 * 2], dtype="<i2").astype(np.float64) / 32768.0
    elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        x = np.frombuffer(samples[: len(samples) // 4 * 4], dtype="<f4").astype(np.float64)
    else:
        raise WavError(f"{path}: unsupported codec (format tag {tag:#06x}, {bits} bits)")
    if channels < 1:
        raise WavError(f"{path}: invalid channel count {channels}")
    if channels > 1:  # averaging a single channel would turn -0.0 into +0.0
        x = x[: x.size // channels * channels].reshape(-1, channels).mean(axis=1)
    return AudioSegment(x, rate)


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    """Clamp to [-1, 1], scale by 32768 and round half away from zero."""
    scaled = np.clip(samples, -1.0, 1.0) * 32768.0
    rounded = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    return np.clip(rounded, -32768, 32767).astype("<i2")


def wav_write(path, audio: AudioSegment, fmt: str = "float32") -> None:
    if fmt == "pcm16":
        payload = to_pcm16(audio.samples).tobytes()
        tag, bits = WAVE_FORMAT_PCM, 16
    elif fmt == "float32":
        payload = audio.samples.astype("<f4").tobytes()
        tag, bits = WAVE_FORMAT_IEEE_FLOAT, 32
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
    block = bits // 8
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, tag, 1, audio.sample_rate, audio.sample_rate * block, block, bits,
        b"data", len(payload),
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(header + payload)
        if len(payload) & 1:
            f.write(b"\0")
