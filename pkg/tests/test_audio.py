import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hencall.audio import (
    AudioClip,
    BadSampleRate,
    ClipTooShort,
    NotWav,
    UnsupportedFormat,
    frame,
    load_wav,
    num_frames,
    window_weights,
    write_wav,
)


def write_pcm16(path, samples, sample_rate=16000, channels=1):
    payload = np.asarray(samples, dtype="<i2").tobytes()
    fmt = struct.pack("<HHIIHH", 1, channels, sample_rate, sample_rate * 2 * channels, 2 * channels, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


class TestLoadWav:
    def test_pcm16_scaling(self, tmp_path):
        path = tmp_path / "a.wav"
        write_pcm16(path, [0, 16384, -32768])
        clip = load_wav(path)
        assert clip.samples.tolist() == [0.0, 0.5, -1.0]

    def test_55s_clip_sample_count(self, tmp_path):
        path = tmp_path / "long.wav"
        write_pcm16(path, np.zeros(880000, dtype=np.int16))
        clip = load_wav(path)
        assert clip.samples.size == 880000
        assert clip.duration_s == pytest.approx(55.0)

    def test_stereo_rejected(self, tmp_path):
        path = tmp_path / "stereo.wav"
        write_pcm16(path, [0, 0, 0, 0], channels=2)
        with pytest.raises(UnsupportedFormat):
            load_wav(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"OGGS" + b"\x00" * 64)
        with pytest.raises(NotWav):
            load_wav(path)

    def test_wrong_sample_rate_rejected(self, tmp_path):
        path = tmp_path / "sr.wav"
        write_pcm16(path, [0, 1, 2], sample_rate=44100)
        with pytest.raises(BadSampleRate):
            load_wav(path)

    def test_unsupported_encoding(self, tmp_path):
        path = tmp_path / "u8.wav"
        payload = b"\x00\x01"
        fmt = struct.pack("<HHIIHH", 1, 1, 16000, 16000, 1, 8)
        body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
        body += b"data" + struct.pack("<I", len(payload)) + payload
        path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
        with pytest.raises(UnsupportedFormat):
            load_wav(path)

    def test_float_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        samples = rng.uniform(-1, 1, size=4096).astype(np.float32).astype(np.float64)
        clip = AudioClip(samples=samples, sample_rate=16000, source_id="x")
        path = tmp_path / "f.wav"
        write_wav(path, clip)
        back = load_wav(path)
        assert np.array_equal(back.samples, clip.samples)


class TestAudioClip:
    def test_rejects_empty(self):
        with pytest.raises(Exception):
            AudioClip(samples=np.array([]), sample_rate=16000)

    def test_rejects_nan(self):
        with pytest.raises(Exception):
            AudioClip(samples=np.array([0.0, np.nan]), sample_rate=16000)


class TestFrame:
    def test_count_for_55s_clip(self):
        clip = AudioClip(samples=np.zeros(880000), sample_rate=16000)
        frames = frame(clip, frame_ms=20, hop_ms=10, window="rectangular")
        assert frames.num_frames == 5499  # floor((880000-320)/160)+1
        assert frames.frame_len == 320

    def test_constant_signal_rectangular(self):
        clip = AudioClip(samples=np.ones(1000), sample_rate=16000)
        frames = frame(clip, frame_ms=20, hop_ms=10, window="rectangular")
        assert np.all(frames.frames == 1.0)

    def test_hamming_weights_length_4(self):
        w = window_weights("hamming", 4)
        assert np.round(w, 2).tolist() == [0.08, 0.77, 0.77, 0.08]

    def test_too_short_clip(self):
        clip = AudioClip(samples=np.zeros(100), sample_rate=16000)
        with pytest.raises(ClipTooShort):
            frame(clip, frame_ms=20, hop_ms=10)

    def test_fractional_frame_rejected(self):
        clip = AudioClip(samples=np.zeros(1000), sample_rate=16000)
        with pytest.raises(ValueError):
            frame(clip, frame_ms=0.03, hop_ms=10)

    def test_overlap_discard_reconstruction(self):
        # rectangular window, hop == frame: concatenating frames returns the
        # exact prefix of num_frames * frame_len samples
        rng = np.random.default_rng(1)
        samples = rng.normal(size=5000)
        clip = AudioClip(samples=samples, sample_rate=16000)
        frames = frame(clip, frame_ms=20, hop_ms=20, window="rectangular")
        rebuilt = frames.frames.reshape(-1)
        assert np.array_equal(rebuilt, samples[: rebuilt.size])

    @settings(max_examples=200, deadline=None)
    @given(
        n=st.integers(min_value=2, max_value=5000),
        frame_len=st.integers(min_value=2, max_value=400),
        hop_len=st.integers(min_value=1, max_value=400),
    )
    def test_num_frames_formula(self, n, frame_len, hop_len):
        count = num_frames(n, frame_len, hop_len)
        if n < frame_len:
            assert count == 0
            return
        assert count == (n - frame_len) // hop_len + 1
        # last frame fits, the next would not
        assert (count - 1) * hop_len + frame_len <= n
        assert count * hop_len + frame_len > n
