import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from speechfix.dsp import AudioSegment
from speechfix.wavio import WavError, to_pcm16, wav_read, wav_write


def raw_wav(tag, channels, rate, bits, payload, extra_chunks=b""):
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, rate, rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + extra_chunks
    body += b"data" + struct.pack("<I", len(payload)) + payload
    return b"RIFF" + struct.pack("<I", len(body)) + body


def test_pcm16_min_value_reads_as_minus_one(tmp_path):
    p = tmp_path / "a.wav"
    p.write_bytes(raw_wav(1, 1, 16000, 16, np.array([-32768, 0, 16384], "<i2").tobytes()))
    a = wav_read(p)
    assert a.sample_rate == 16000
    assert np.array_equal(a.samples, [-1.0, 0.0, 0.5])


@given(arrays(np.float32, st.integers(0, 300), elements=st.floats(-4, 4, width=32)))
def test_float32_roundtrip_bit_exact(tmp_path_factory, x):
    p = tmp_path_factory.mktemp("w") / "f.wav"
    wav_write(p, AudioSegment(x.astype(float), 44100), "float32")
    back = wav_read(p)
    assert back.samples.astype(np.float32).tobytes() == x.tobytes()
    assert back.sample_rate == 44100


def test_pcm16_values():
    assert to_pcm16(np.array([0.5]))[0] == 16384
    assert to_pcm16(np.array([1.7]))[0] == 32767
    assert to_pcm16(np.array([-1.7]))[0] == -32768


def test_pcm16_rounds_half_away_from_zero():
    half = 0.5 / 32768
    assert list(to_pcm16(np.array([half, -half, 1.5 / 32768, -1.5 / 32768]))) == [1, -1, 2, -2]


def test_pcm16_write_read(tmp_path):
    x = np.array([0.5, -0.25, 1.7, -2.0])
    wav_write(tmp_path / "p.wav", AudioSegment(x, 22050), "pcm16")
    back = wav_read(tmp_path / "p.wav")
    assert np.array_equal(back.samples, [0.5, -0.25, 32767 / 32768, -1.0])


def test_odd_payload_is_padded(tmp_path):
    wav_write(tmp_path / "o.wav", AudioSegment(np.array([0.1]), 8000), "pcm16")
    data = (tmp_path / "o.wav").read_bytes()
    assert len(data) % 2 == 0


def test_stereo_is_averaged(tmp_path):
    frames = np.array([[0.5, -0.5], [1.0, 0.0]], "<f4")
    (tmp_path / "s.wav").write_bytes(raw_wav(3, 2, 44100, 32, frames.tobytes()))
    assert np.array_equal(wav_read(tmp_path / "s.wav").samples, [0.0, 0.5])


def test_skips_unknown_chunks(tmp_path):
    junk = b"LIST" + struct.pack("<I", 3) + b"abc\0"
    p = tmp_path / "j.wav"
    p.write_bytes(raw_wav(1, 1, 8000, 16, np.array([100], "<i2").tobytes(), junk))
    assert wav_read(p).samples[0] == 100 / 32768


def test_extensible_float(tmp_path):
    fmt = struct.pack("<HHIIHH", 0xFFFE, 1, 8000, 32000, 4, 32)
    fmt += struct.pack("<HHI", 22, 32, 4) + struct.pack("<H", 3) + b"\0" * 14
    payload = np.array([0.25], "<f4").tobytes()
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", 4) + payload
    p = tmp_path / "e.wav"
    p.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    assert wav_read(p).samples[0] == 0.25


def test_truncated_header(tmp_path):
    p = tmp_path / "t.wav"
    p.write_bytes(b"RIFF")
    with pytest.raises(WavError, match="RIFF"):
        wav_read(p)


def test_truncated_data_chunk(tmp_path):
    full = raw_wav(1, 1, 8000, 16, np.zeros(100, "<i2").tobytes())
    p = tmp_path / "t.wav"
    p.write_bytes(full[:-50])
    with pytest.raises(WavError, match="'data'"):
        wav_read(p)


def test_missing_data_chunk(tmp_path):
    full = raw_wav(1, 1, 8000, 16, b"")
    p = tmp_path / "t.wav"
    p.write_bytes(full[: full.index(b"data")])
    with pytest.raises(WavError, match="missing 'data'"):
        wav_read(p)


def test_missing_fmt_chunk(tmp_path):
    body = b"WAVE" + b"data" + struct.pack("<I", 2) + b"\0\0"
    p = tmp_path / "t.wav"
    p.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    with pytest.raises(WavError, match="'fmt '"):
        wav_read(p)


def test_not_riff(tmp_path):
    p = tmp_path / "x.wav"
    p.write_bytes(b"OggS" + b"\0" * 40)
    with pytest.raises(WavError, match="not a RIFF"):
        wav_read(p)


@pytest.mark.parametrize("tag,bits", [(1, 24), (1, 8), (3, 64), (2, 16)])
def test_unsupported_codec(tmp_path, tag, bits):
    p = tmp_path / "c.wav"
    p.write_bytes(raw_wav(tag, 1, 8000, bits, b"\0" * 24))
    with pytest.raises(WavError, match="unsupported codec"):
        wav_read(p)


def test_unknown_write_format(tmp_path):
    with pytest.raises(ValueError):
        wav_write(tmp_path / "a.wav", AudioSegment(np.zeros(3), 8000), "mp3")


def test_unwritable_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        wav_write(blocker / "sub" / "a.wav", AudioSegment(np.zeros(3), 8000))
