"""WAV ingestion and frame slicing for 16 kHz mono recordings.

The reader accepts the two encodings that occur in the recording corpus:
16-bit integer PCM (format code 1) and 32-bit float (format code 3). Files
with any other layout are rejected rather than converted; in particular a
wrong sample rate raises instead of being silently resampled, because
resampling would change every downstream feature.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TARGET_SAMPLE_RATE = 16000

_INT16_SCALE = 32768.0  # 2**15; maps -32768 -> -1.0 exactly


class AudioError(Exception):
    """Base class for ingestion failures."""


class NotWav(AudioError):
    """File is not a RIFF/WAVE container."""


class UnsupportedFormat(AudioError):
    """Channel count or sample encoding outside the accepted set."""


class BadSampleRate(AudioError):
    """Sample rate differs from 16 kHz; no silent resampling."""


class ClipTooShort(AudioError):
    """Clip shorter than one analysis frame."""


@dataclass(frozen=True)
class AudioClip:
    """Mono sampled waveform, amplitudes nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int
    source_id: str = ""

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise AudioError("samples must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(samples)):
            raise AudioError("samples must be finite")
        if int(self.sample_rate) <= 0:
            raise AudioError("sample_rate must be a positive integer")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class FrameSequence:
    """Windowed analysis frames: matrix of shape (num_frames, frame_len)."""

    frames: np.ndarray
    frame_ms: float
    hop_ms: float
    sample_rate: int

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def frame_len(self) -> int:
        return self.frames.shape[1]

    @property
    def hop_len(self) -> int:
        return int(round(self.hop_ms * self.sample_rate / 1000.0))


def _read_chunks(data: bytes) -> dict[bytes, bytes]:
    """Walk the RIFF chunk list and return {chunk id: payload}."""
    chunks: dict[bytes, bytes] = {}
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + size]
        if cid not in chunks:  # first occurrence wins
            chunks[cid] = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned
    return chunks


def load_wav(path: str | Path) -> AudioClip:
    """Load a mono 16 kHz WAV file as an AudioClip.

    Integer PCM samples are scaled by 2**15 so that -32768 maps to -1.0;
    float samples pass through unchanged.
    """
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise NotWav(f"{path}: missing RIFF/WAVE header")
    chunks = _read_chunks(data)
    if b"fmt " not in chunks or b"data" not in chunks:
        raise NotWav(f"{path}: missing fmt/data chunk")
    fmt = chunks[b"fmt "]
    if len(fmt) < 16:
        raise NotWav(f"{path}: truncated fmt chunk")
    audio_format, channels, sample_rate, _, _, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if channels != 1:
        raise UnsupportedFormat(f"{path}: expected mono, got {channels} channels")
    if sample_rate != TARGET_SAMPLE_RATE:
        raise BadSampleRate(f"{path}: sample rate {sample_rate} != {TARGET_SAMPLE_RATE}")
    raw = chunks[b"data"]
    if audio_format == 1 and bits == 16:
        ints = np.frombuffer(raw, dtype="<i2")
        samples = ints.astype(np.float64) / _INT16_SCALE
    elif audio_format == 3 and bits == 32:
        samples = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedFormat(f"{path}: format code {audio_format} / {bits}-bit not supported")
    return AudioClip(samples=samples, sample_rate=sample_rate, source_id=str(path))


def write_wav(path: str | Path, clip: AudioClip) -> None:
    """Write a clip as 32-bit float mono WAV (format code 3)."""
    if clip.sample_rate != TARGET_SAMPLE_RATE:
        raise BadSampleRate(f"refusing to write sample rate {clip.sample_rate}")
    payload = clip.samples.astype("<f4").tobytes()
    byte_rate = clip.sample_rate * 4
    fmt = struct.pack("<HHIIHH", 3, 1, clip.sample_rate, byte_rate, 4, 32)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


def num_frames(n_samples: int, frame_len: int, hop_len: int) -> int:
    """Frame count with trailing-remainder discard: floor((N - L) / H) + 1."""
    if n_samples < frame_len:
        return 0
    return (n_samples - frame_len) // hop_len + 1


def window_weights(kind: str, length: int) -> np.ndarray:
    if kind == "rectangular":
        return np.ones(length)
    if kind == "hamming":
        return np.hamming(length)
    raise ValueError(f"unknown window {kind!r}")


def frame(
    clip: AudioClip,
    frame_ms: float = 20.0,
    hop_ms: float = 10.0,
    window: str = "hamming",
) -> FrameSequence:
    """Slice a clip into overlapping windowed frames.

    The trailing remainder shorter than one frame is discarded. Frame and
    hop lengths must come out to whole samples.
    """
    sr = clip.sample_rate
    frame_len_f = frame_ms * sr / 1000.0
    hop_len_f = hop_ms * sr / 1000.0
    frame_len = int(round(frame_len_f))
    hop_len = int(round(hop_len_f))
    if abs(frame_len_f - frame_len) > 1e-9 or frame_len < 2:
        raise ValueError(f"frame_ms {frame_ms} is not a whole number of samples >= 2 at {sr} Hz")
    if abs(hop_len_f - hop_len) > 1e-9 or hop_len < 1:
        raise ValueError(f"hop_ms {hop_ms} is not a whole number of samples >= 1 at {sr} Hz")
    n = clip.samples.size
    count = num_frames(n, frame_len, hop_len)
    if count == 0:
        raise ClipTooShort(f"clip of {n} samples shorter than one {frame_len}-sample frame")
    idx = np.arange(count)[:, None] * hop_len + np.arange(frame_len)[None, :]
    frames = clip.samples[idx] * window_weights(window, frame_len)[None, :]
    return FrameSequence(frames=frames, frame_ms=frame_ms, hop_ms=hop_ms, sample_rate=sr)
