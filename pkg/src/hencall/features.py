"""Acoustic features: time-domain, formants + spectral energy, and cepstra.

Three parallel channels are produced per clip. Time-domain and formant
features are computed per syllable; cepstral matrices come from framing
the whole raw signal. MFCC and LFCC share one pipeline and differ only in
the filterbank spacing and the cosine-transform normalization: MFCC uses
an orthonormal DCT-II, LFCC the unnormalized sum
L_j = sum_i X_i cos(j (i - 1/2) pi / B) over the B log filter energies.

The Hz-to-mel map here is mel = 2595 log10(f / divisor + 1) with divisor
100 by default (the conventional 700 is available via the config).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.fft import dct

from .audio import AudioClip, FrameSequence, frame
from .labels import LabelVector
from .vad import SyllableSegment, VadConfig, segment_syllables

LOG_FLOOR = 1e-10
SPECTRAL_EPS = 1e-12
INTENSITY_REF = 1e-10  # dB reference power

TIME_FEATURE_NAMES = ("tempo", "energy", "intensity", "power", "pitch")
SPECTRAL_FEATURE_NAMES = ("f1", "f2", "f3", "f4", "log_spectral_energy")

CACHE_MAGIC = b"HVFC1"
CACHE_VERSION = 1


class FeatureError(Exception):
    pass


class NegativeFrequency(FeatureError):
    pass


class FrameCountMismatch(FeatureError):
    pass


class SegmentTooShort(FeatureError):
    pass


class UnstableLPC(FeatureError):
    pass


class CacheFormatError(FeatureError):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    mel_divisor: float = 100.0
    num_filters: int = 40
    nfft: int = 512
    frame_ms: float = 20.0
    hop_ms: float = 10.0
    pitch_min_hz: float = 80.0
    pitch_max_hz: float = 4000.0
    lpc_order: int = 18
    preemphasis: float = 0.97
    max_formant_bandwidth_hz: float = 400.0


@dataclass(frozen=True)
class CepstralMatrix:
    """(num_frames, num_coeffs) cepstral coefficients; kind mfcc/lfcc/fused."""

    values: np.ndarray
    kind: str

    def __post_init__(self) -> None:
        if self.kind not in ("mfcc", "lfcc", "fused"):
            raise FeatureError(f"unknown cepstral kind {self.kind!r}")
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise FeatureError("cepstral values must be 2-D")
        if not np.all(np.isfinite(values)):
            raise FeatureError("cepstral values must be finite")
        object.__setattr__(self, "values", values)

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def num_coeffs(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class TimeFeatureSequence:
    """Per-syllable rows of (tempo, energy, intensity, power, pitch)."""

    values: np.ndarray  # (num_syllables, 5)

    def __post_init__(self) -> None:
        values = np.asarray(self.values)
        if values.ndim != 2 or values.shape[1] != len(TIME_FEATURE_NAMES):
            raise FeatureError(f"time features must be (n, {len(TIME_FEATURE_NAMES)})")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class SpectralFeatureSequence:
    """Per-syllable rows of (F1, F2, F3, F4, log spectral energy)."""

    values: np.ndarray  # (num_syllables, 5)

    def __post_init__(self) -> None:
        values = np.asarray(self.values)
        if values.ndim != 2 or values.shape[1] != len(SPECTRAL_FEATURE_NAMES):
            raise FeatureError(f"spectral features must be (n, {len(SPECTRAL_FEATURE_NAMES)})")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class MultiChannelFeatures:
    """The three parallel feature sequences of one clip."""

    clip_id: str
    channel_time: TimeFeatureSequence
    channel_spectral: SpectralFeatureSequence
    channel_cepstral: CepstralMatrix
    label: LabelVector | None = None

    def __post_init__(self) -> None:
        if self.channel_time.values.shape[0] != self.channel_spectral.values.shape[0]:
            raise FeatureError("time and spectral channels must have one row per syllable")
        if self.channel_cepstral.kind != "fused":
            raise FeatureError("cepstral channel must be the fused matrix")


def mel_scale(f, divisor: float = 100.0):
    """Hertz to mel: 2595 log10(f / divisor + 1)."""
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise NegativeFrequency("frequency must be >= 0")
    out = 2595.0 * np.log10(f / divisor + 1.0)
    return float(out) if out.ndim == 0 else out


def _mel_to_hz(m: np.ndarray, divisor: float) -> np.ndarray:
    return divisor * (10.0 ** (m / 2595.0) - 1.0)


def triangular_filterbank(
    num_filters: int,
    nfft: int,
    sample_rate: int,
    scale: str = "mel",
    mel_divisor: float = 100.0,
) -> np.ndarray:
    """Bank of triangular filters over rfft bins, (num_filters, nfft/2+1).

    Centers are equally spaced on the chosen scale between 0 and the
    Nyquist frequency; each row rises linearly (in bins) to 1.0 at its
    center bin and falls to zero at its neighbors' centers. Center bins
    are forced strictly increasing so every row has a unique unit peak.
    """
    if num_filters < 1:
        raise ValueError("num_filters must be >= 1")
    if nfft < 64 or nfft & (nfft - 1):
        raise ValueError("nfft must be a power of two >= 64")
    n_bins = nfft // 2 + 1
    if num_filters + 2 > n_bins:
        raise ValueError(f"{num_filters} filters do not fit in {n_bins} bins")
    nyquist = sample_rate / 2.0
    if scale == "linear":
        centers_hz = np.linspace(0.0, nyquist, num_filters + 2)
    elif scale == "mel":
        mels = np.linspace(0.0, mel_scale(nyquist, mel_divisor), num_filters + 2)
        centers_hz = _mel_to_hz(mels, mel_divisor)
    else:
        raise ValueError(f"unknown scale {scale!r}")

    bins = np.floor((nfft + 1) * centers_hz / sample_rate).astype(int)
    bins = np.minimum(bins, nfft // 2)
    for j in range(1, len(bins)):  # de-collide: compressive scales can map
        bins[j] = max(bins[j], bins[j - 1] + 1)  # several centers to one bin
    for j in range(len(bins) - 2, -1, -1):
        bins[j] = min(bins[j], bins[j + 1] - 1)
    if bins[0] < 0:
        raise ValueError("too many filters for this resolution")

    bank = np.zeros((num_filters, n_bins))
    for j in range(num_filters):
        lo, mid, hi = bins[j], bins[j + 1], bins[j + 2]
        bank[j, lo:mid] = (np.arange(lo, mid) - lo) / (mid - lo)
        bank[j, mid:hi] = (hi - np.arange(mid, hi)) / (hi - mid)
    return bank


def _power_spectrum(frames: FrameSequence, nfft: int) -> np.ndarray:
    return np.abs(np.fft.rfft(frames.frames, n=nfft, axis=1)) ** 2


def _log_filter_energies(frames: FrameSequence, bank: np.ndarray, nfft: int) -> np.ndarray:
    energies = _power_spectrum(frames, nfft) @ bank.T
    return np.log(np.maximum(energies, LOG_FLOOR))


def mfcc(frames: FrameSequence, cfg: FeatureConfig | None = None) -> CepstralMatrix:
    """Mel-filterbank cepstra: power spectrum -> 40 triangular mel filters
    -> log -> orthonormal DCT-II, keeping all 40 coefficients."""
    cfg = cfg or FeatureConfig()
    bank = triangular_filterbank(
        cfg.num_filters, cfg.nfft, frames.sample_rate, scale="mel", mel_divisor=cfg.mel_divisor
    )
    logs = _log_filter_energies(frames, bank, cfg.nfft)
    coeffs = dct(logs, type=2, norm="ortho", axis=1)
    return CepstralMatrix(values=coeffs, kind="mfcc")


def lfcc(frames: FrameSequence, cfg: FeatureConfig | None = None) -> CepstralMatrix:
    """Linear-filterbank cepstra with the plain cosine-sum transform."""
    cfg = cfg or FeatureConfig()
    bank = triangular_filterbank(cfg.num_filters, cfg.nfft, frames.sample_rate, scale="linear")
    logs = _log_filter_energies(frames, bank, cfg.nfft)
    b = cfg.num_filters
    j = np.arange(b)[:, None]
    i = np.arange(b)[None, :]
    cosine = np.cos(j * (i + 0.5) * np.pi / b)  # row j: cos(j (i - 1/2) pi / B), i 1-based
    return CepstralMatrix(values=logs @ cosine.T, kind="lfcc")


def fuse_cepstral(m: CepstralMatrix, l: CepstralMatrix) -> CepstralMatrix:
    """Row-wise concatenation, MFCC columns first."""
    if m.kind != "mfcc" or l.kind != "lfcc":
        raise FeatureError(f"expected (mfcc, lfcc), got ({m.kind}, {l.kind})")
    if m.num_frames != l.num_frames:
        raise FrameCountMismatch(f"{m.num_frames} != {l.num_frames} frames")
    return CepstralMatrix(values=np.hstack([m.values, l.values]), kind="fused")


def spectral_energy(segment: SyllableSegment) -> tuple[np.ndarray, float]:
    """Per-bin energy |X(f)|^2 of the segment (full DFT, zero-padded to the
    next power of two) and the scalar log of the total."""
    x = np.asarray(segment.samples, dtype=np.float64)
    if x.size < 2:
        raise SegmentTooShort("spectral energy needs at least 2 samples")
    nfft = 1 << (x.size - 1).bit_length()
    per_bin = np.abs(np.fft.fft(x, n=nfft)) ** 2
    return per_bin, float(np.log(np.sum(per_bin) + SPECTRAL_EPS))


def pitch(
    segment: SyllableSegment,
    sample_rate: int = 16000,
    f_min: float = 80.0,
    f_max: float = 4000.0,
) -> float:
    """Fundamental frequency by the normalized-autocorrelation peak.

    Returns 0.0 (unvoiced sentinel) when the best peak is below 0.3.
    """
    if not 0 < f_min < f_max < sample_rate / 2:
        raise ValueError("need 0 < f_min < f_max < Nyquist")
    x = np.asarray(segment.samples, dtype=np.float64)
    min_len = int(np.ceil(2 * sample_rate / f_min))
    if x.size < min_len:
        raise SegmentTooShort(f"pitch needs >= {min_len} samples, got {x.size}")
    x = x - np.mean(x)
    nfft = 1 << (2 * x.size - 1).bit_length()
    spectrum = np.fft.rfft(x, n=nfft)
    autocorr = np.fft.irfft(spectrum * np.conj(spectrum), n=nfft)[: x.size]
    if autocorr[0] <= 0.0:
        return 0.0
    autocorr = autocorr / autocorr[0]
    lag_min = max(1, int(sample_rate / f_max))
    lag_max = min(x.size - 1, int(sample_rate / f_min))
    window = autocorr[lag_min : lag_max + 1]
    best = int(np.argmax(window))
    if window[best] < 0.3:
        return 0.0
    return sample_rate / (lag_min + best)


def _levinson_durbin(r: np.ndarray, order: int) -> np.ndarray:
    """Solve the autocorrelation normal equations; returns the prediction
    polynomial [1, a_1, ..., a_order]."""
    a = np.zeros(order + 1)
    a[0] = 1.0
    error = r[0]
    for i in range(1, order + 1):
        acc = r[i] + np.dot(a[1:i], r[i - 1 : 0 : -1])
        k = -acc / error
        if not np.isfinite(k):
            raise UnstableLPC("non-finite reflection coefficient")
        a[1 : i + 1] = a[1 : i + 1] + k * a[i - 1 :: -1]  # a_j += k a_{i-j}, a_i = k
        error *= 1.0 - k * k
        if not np.isfinite(error) or error <= 0.0:
            raise UnstableLPC("prediction error collapsed")
    return a


def formants(
    segment: SyllableSegment,
    sample_rate: int = 16000,
    cfg: FeatureConfig | None = None,
) -> np.ndarray:
    """First four resonance frequencies [F1..F4] in Hz via all-pole modeling.

    Pre-emphasis, autocorrelation LPC, then the angles of polynomial roots
    in the upper half plane whose bandwidth stays under the cutoff, sorted
    ascending. Missing slots are zero.
    """
    cfg = cfg or FeatureConfig()
    x = np.asarray(segment.samples, dtype=np.float64)
    if x.size < 2 * cfg.lpc_order:
        raise SegmentTooShort(f"formants need >= {2 * cfg.lpc_order} samples, got {x.size}")
    x = np.concatenate([[x[0]], x[1:] - cfg.preemphasis * x[:-1]])
    r = np.correlate(x, x, mode="full")[x.size - 1 : x.size + cfg.lpc_order]
    if r[0] <= SPECTRAL_EPS:
        return np.zeros(4)
    a = _levinson_durbin(r, cfg.lpc_order)
    roots = np.roots(a)
    roots = roots[np.imag(roots) > 0]
    freqs = np.angle(roots) * sample_rate / (2 * np.pi)
    bandwidths = -np.log(np.maximum(np.abs(roots), 1e-12)) * sample_rate / np.pi
    keep = np.sort(freqs[(bandwidths < cfg.max_formant_bandwidth_hz) & (freqs > 0)])
    out = np.zeros(4)
    out[: min(4, keep.size)] = keep[:4]
    return out


def time_features(
    clip: AudioClip,
    syllables: list[SyllableSegment],
    cfg: FeatureConfig | None = None,
) -> TimeFeatureSequence:
    """Per-syllable (tempo, energy, intensity, power, pitch); tempo is the
    clip-wide syllable rate repeated on every row."""
    cfg = cfg or FeatureConfig()
    if not syllables:
        return TimeFeatureSequence(values=np.zeros((0, 5)))
    tempo = len(syllables) / clip.duration_s
    rows = []
    for seg in syllables:
        energy = float(np.sum(seg.samples**2))
        power = energy / seg.samples.size
        intensity = 10.0 * np.log10(max(power, INTENSITY_REF) / INTENSITY_REF)
        try:
            f0 = pitch(seg, clip.sample_rate, cfg.pitch_min_hz, cfg.pitch_max_hz)
        except SegmentTooShort:
            f0 = 0.0
        rows.append([tempo, energy, intensity, power, f0])
    return TimeFeatureSequence(values=np.array(rows))


def spectral_features(
    clip: AudioClip,
    syllables: list[SyllableSegment],
    cfg: FeatureConfig | None = None,
) -> SpectralFeatureSequence:
    """Per-syllable (F1..F4, log spectral energy)."""
    cfg = cfg or FeatureConfig()
    if not syllables:
        return SpectralFeatureSequence(values=np.zeros((0, 5)))
    rows = []
    for seg in syllables:
        try:
            f = formants(seg, clip.sample_rate, cfg)
        except (SegmentTooShort, UnstableLPC):
            f = np.zeros(4)
        _, log_energy = spectral_energy(seg)
        rows.append([f[0], f[1], f[2], f[3], log_energy])
    return SpectralFeatureSequence(values=np.array(rows))


def extract_features(
    clip: AudioClip,
    vad_cfg: VadConfig | None = None,
    feat_cfg: FeatureConfig | None = None,
    label: LabelVector | None = None,
) -> MultiChannelFeatures | None:
    """Run the full per-clip pipeline; None when no syllables are found
    (such clips are excluded from training).

    Channel arrays are stored as float32, matching the cache encoding, so
    a cache round trip is bit-exact.
    """
    vad_cfg = vad_cfg or VadConfig()
    feat_cfg = feat_cfg or FeatureConfig()
    syllables = segment_syllables(clip, vad_cfg)
    if not syllables:
        return None
    t = time_features(clip, syllables, feat_cfg).values.astype(np.float32)
    s = spectral_features(clip, syllables, feat_cfg).values.astype(np.float32)
    frames = frame(clip, frame_ms=feat_cfg.frame_ms, hop_ms=feat_cfg.hop_ms, window="hamming")
    fused = fuse_cepstral(mfcc(frames, feat_cfg), lfcc(frames, feat_cfg))
    return MultiChannelFeatures(
        clip_id=clip.source_id,
        channel_time=TimeFeatureSequence(values=t),
        channel_spectral=SpectralFeatureSequence(values=s),
        channel_cepstral=CepstralMatrix(values=fused.values.astype(np.float32), kind="fused"),
        label=label,
    )


def _write_block(out: list[bytes], arr: np.ndarray) -> None:
    rows, cols = arr.shape
    out.append(struct.pack("<II", rows, cols))
    out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_block(data: bytes, pos: int) -> tuple[np.ndarray, int]:
    rows, cols = struct.unpack_from("<II", data, pos)
    pos += 8
    n = rows * cols * 4
    arr = np.frombuffer(data[pos : pos + n], dtype="<f4").reshape(rows, cols)
    return arr, pos + n


def write_feature_cache(path: str | Path, records: list[MultiChannelFeatures]) -> None:
    """Serialize per-clip feature records to the binary cache format."""
    out: list[bytes] = [CACHE_MAGIC, bytes([CACHE_VERSION])]
    for rec in records:
        cid = rec.clip_id.encode("utf-8")
        out.append(struct.pack("<I", len(cid)))
        out.append(cid)
        _write_block(out, rec.channel_time.values)
        _write_block(out, rec.channel_spectral.values)
        _write_block(out, rec.channel_cepstral.values)
        out.append(bytes([rec.label.to_bitmask() if rec.label else 0]))
    Path(path).write_bytes(b"".join(out))


def read_feature_cache(path: str | Path) -> list[MultiChannelFeatures]:
    data = Path(path).read_bytes()
    if data[:5] != CACHE_MAGIC:
        raise CacheFormatError(f"{path}: bad magic")
    if data[5] != CACHE_VERSION:
        raise CacheFormatError(f"{path}: unsupported version {data[5]}")
    pos = 6
    records = []
    while pos < len(data):
        (id_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        clip_id = data[pos : pos + id_len].decode("utf-8")
        pos += id_len
        t, pos = _read_block(data, pos)
        s, pos = _read_block(data, pos)
        c, pos = _read_block(data, pos)
        mask = data[pos]
        pos += 1
        records.append(
            MultiChannelFeatures(
                clip_id=clip_id,
                channel_time=TimeFeatureSequence(values=t),
                channel_spectral=SpectralFeatureSequence(values=s),
                channel_cepstral=CepstralMatrix(values=c, kind="fused"),
                label=LabelVector.from_bitmask(mask) if mask else None,
            )
        )
    return records
