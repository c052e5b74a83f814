"""Syllable extraction: voiced-interval detection inside a raw clip.

A frame is voiced when three criteria hold at once: its short-time energy
clears a threshold relative to the clip's loudest frame, its spectral
flatness (Wiener entropy) is low enough to look tonal, and it lies under a
sufficiently prominent peak of the smoothed energy envelope. Voiced runs
separated by short gaps are merged, and runs too short to be a syllable
are dropped.

All thresholds are relative, so rescaling a clip's amplitude leaves the
detected boundaries unchanged (recordings from different farms have
unknown gain).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import find_peaks, peak_prominences

from .audio import AudioClip, ClipTooShort, FrameSequence, frame

_FLATNESS_FLOOR = 1e-12
_ENVELOPE_SMOOTH_FRAMES = 5


@dataclass(frozen=True)
class VadConfig:
    energy_threshold_ratio: float = 0.1
    entropy_threshold: float = 0.5
    prominence_threshold: float = 0.1
    min_syllable_ms: float = 30.0
    merge_gap_ms: float = 50.0
    frame_ms: float = 20.0
    hop_ms: float = 10.0

    def __post_init__(self) -> None:
        for name in ("energy_threshold_ratio", "entropy_threshold", "prominence_threshold"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must be in (0, 1), got {v}")
        if self.min_syllable_ms <= 0:
            raise ValueError("min_syllable_ms must be positive")
        if self.merge_gap_ms < 0:
            raise ValueError("merge_gap_ms must be non-negative")


@dataclass(frozen=True)
class SyllableSegment:
    """One detected vocal-activity interval of a clip."""

    start_s: float
    end_s: float
    samples: np.ndarray

    def __post_init__(self) -> None:
        if not 0.0 <= self.start_s < self.end_s:
            raise ValueError(f"bad segment bounds [{self.start_s}, {self.end_s}]")

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


def short_time_energy(frames: FrameSequence) -> np.ndarray:
    """Per-frame energy: sum of squared windowed amplitudes."""
    return np.sum(frames.frames**2, axis=1)


def wiener_entropy(frames: FrameSequence) -> np.ndarray:
    """Per-frame spectral flatness: geometric over arithmetic mean of the
    power spectrum, in [0, 1]. Near 1 for noise, near 0 for tones."""
    power = np.abs(np.fft.rfft(frames.frames, axis=1)) ** 2
    power = np.maximum(power, _FLATNESS_FLOOR)
    geometric = np.exp(np.mean(np.log(power), axis=1))
    arithmetic = np.mean(power, axis=1)
    return geometric / arithmetic


def peak_prominence(envelope: np.ndarray) -> list[tuple[int, float]]:
    """Interior peaks of a sequence with their topographic prominence."""
    envelope = np.asarray(envelope, dtype=np.float64)
    peaks, _ = find_peaks(envelope)
    if peaks.size == 0:
        return []
    proms = peak_prominences(envelope, peaks)[0]
    return list(zip(peaks.tolist(), proms.tolist()))


def _smooth(x: np.ndarray, width: int = _ENVELOPE_SMOOTH_FRAMES) -> np.ndarray:
    if x.size < 2:
        return x.copy()
    kernel = np.ones(min(width, x.size)) / min(width, x.size)
    return np.convolve(x, kernel, mode="same")


def _voiced_runs(voiced: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of True as (first_frame, last_frame) inclusive."""
    runs = []
    start = None
    for i, flag in enumerate(voiced):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(voiced) - 1))
    return runs


def segment_syllables(clip: AudioClip, cfg: VadConfig | None = None) -> list[SyllableSegment]:
    """Detect the vocal syllables of a clip.

    Returns disjoint segments sorted by start time; silence yields an
    empty list.
    """
    cfg = cfg or VadConfig()
    try:
        frames = frame(clip, frame_ms=cfg.frame_ms, hop_ms=cfg.hop_ms, window="rectangular")
    except ClipTooShort:
        return []
    energy = short_time_energy(frames)
    max_energy = float(np.max(energy))
    if max_energy <= 0.0:
        return []
    flatness = wiener_entropy(frames)
    envelope = _smooth(energy)

    # frames lying under a prominent envelope peak
    env_range = float(np.max(envelope) - np.min(envelope))
    under_peak = np.zeros(len(energy), dtype=bool)
    if env_range > 0.0:
        peaks, _ = find_peaks(envelope)
        if peaks.size:
            proms, left_bases, right_bases = peak_prominences(envelope, peaks)
            for p, prom, lb, rb in zip(peaks, proms, left_bases, right_bases):
                if prom > cfg.prominence_threshold * env_range:
                    under_peak[lb : rb + 1] = True

    voiced = (
        (energy > cfg.energy_threshold_ratio * max_energy)
        & (flatness < cfg.entropy_threshold)
        & under_peak
    )

    sr = clip.sample_rate
    hop = frames.hop_len
    frame_len = frames.frame_len
    duration = clip.duration_s

    def bounds(first: int, last: int) -> tuple[float, float]:
        return first * hop / sr, min((last * hop + frame_len) / sr, duration)

    merged: list[tuple[int, int]] = []
    for first, last in _voiced_runs(voiced):
        if merged:
            prev_first, prev_last = merged[-1]
            gap_s = bounds(first, last)[0] - bounds(prev_first, prev_last)[1]
            if gap_s < cfg.merge_gap_ms / 1000.0:
                merged[-1] = (prev_first, last)
                continue
        merged.append((first, last))

    segments = []
    for first, last in merged:
        start_s, end_s = bounds(first, last)
        if (end_s - start_s) * 1000.0 < cfg.min_syllable_ms:
            continue
        lo = int(round(start_s * sr))
        hi = int(round(end_s * sr))
        segments.append(SyllableSegment(start_s=start_s, end_s=end_s, samples=clip.samples[lo:hi]))
    return segments
