"""Parametric generator of labeled synthetic hen-call clips.

Each call type is a recipe of harmonic tone bursts: a fundamental plus two
harmonics, amplitude-modulated at a per-class repetition rate, placed with
per-class burst lengths and gaps over a per-class total duration, over a
gaussian noise floor. The recipes encode only the documented per-class
constraints (duration bounds, gap bounds, which classes sit in the high
vs mid pitch band, distinct repetition rates); everything else is chosen
so the classes are separable at desk scale.

About one in ten clips of a multi-member master class receives a second
label from the same master class; such clips interleave bursts drawn from
both recipes, so the second label is acoustically real.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import TARGET_SAMPLE_RATE, AudioClip, write_wav
from .labels import MASTER_GROUPS, SUBCLASS_NAMES, SUBCLASS_TO_MASTER, LabelVector

MULTI_LABEL_RATE = 0.1
EDGE_TAPER_S = 0.005
HARMONIC_GAINS = (1.0, 0.5, 0.25)


class SynthError(Exception):
    pass


class IoFailure(SynthError):
    pass


PITCH_TRENDS = ("independent", "steady", "rising", "falling", "glide")


@dataclass(frozen=True)
class CallRecipe:
    name: str
    subclass: int
    burst_s: tuple[float, float]
    gap_s: tuple[float, float]
    fundamental_hz: tuple[float, float]
    repetition_hz: tuple[float, float]
    total_s: tuple[float, float]
    pitch_trend: str = "independent"
    amplitude: tuple[float, float] = (0.3, 0.9)
    noise_floor_db: float = -40.0

    def __post_init__(self) -> None:
        for name in ("burst_s", "gap_s", "fundamental_hz", "repetition_hz", "total_s", "amplitude"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                raise SynthError(f"{self.name}: bad range {name}=({lo}, {hi})")
        if self.pitch_trend not in PITCH_TRENDS:
            raise SynthError(f"{self.name}: unknown pitch_trend {self.pitch_trend!r}")


# Class design: fear/distress/panic high-pitched (1.2-2.0 kHz) and
# food/alarm/gakel mid (0.4-1.0 kHz); repetition rates and durations are
# class-specific. Alarm stays under 6 s total with every gap under 0.5 s;
# lonely calls stay at/below ~2 s and every panic clip outlasts every
# lonely clip. Distress and panic share the same fundamental range and
# differ in how the pitch moves across bursts (rising ladder vs falling)
# and in persistence, so telling them apart takes the burst sequence, not
# just pooled statistics. Gakel wanders in pitch burst to burst.
RECIPES: dict[str, CallRecipe] = {
    "food_calls": CallRecipe("food_calls", 0, (0.15, 0.30), (0.15, 0.30), (450, 650), (4, 6), (2.5, 3.5), "steady"),
    "distress": CallRecipe("distress", 1, (0.25, 0.45), (0.08, 0.25), (1300, 1900), (8, 12), (2.5, 4.0), "rising"),
    "panic": CallRecipe("panic", 2, (0.25, 0.45), (0.08, 0.25), (1300, 1900), (10, 14), (4.5, 6.0), "falling"),
    "egg_laying": CallRecipe("egg_laying", 3, (0.20, 0.35), (0.30, 0.50), (500, 900), (2, 4), (1.8, 2.8)),
    "fear": CallRecipe("fear", 4, (0.12, 0.25), (0.05, 0.15), (1200, 1500), (14, 18), (2.0, 3.5)),
    "alarm": CallRecipe("alarm", 5, (0.50, 1.00), (0.10, 0.40), (600, 1000), (5, 8), (4.0, 5.5), "steady"),
    "gakel_calls": CallRecipe("gakel_calls", 6, (0.35, 0.70), (0.20, 0.45), (600, 950), (2, 5), (2.5, 4.0), "glide"),
    "lonely_calls": CallRecipe("lonely_calls", 7, (0.30, 0.50), (0.15, 0.30), (1200, 1800), (6, 9), (1.5, 2.4)),
}


def _draw(rng: np.random.Generator, bounds: tuple[float, float]) -> float:
    lo, hi = bounds
    return float(rng.uniform(lo, hi))


def _burst(rng: np.random.Generator, recipe: CallRecipe, duration_s: float, sr: int, f0: float) -> np.ndarray:
    n = int(round(duration_s * sr))
    t = np.arange(n) / sr
    rep = _draw(rng, recipe.repetition_hz)
    if recipe.pitch_trend == "glide":  # within-burst sweep around f0
        f1 = f0 * float(rng.uniform(0.85, 1.15))
        phase_base = f0 * t + (f1 - f0) * t**2 / (2.0 * duration_s)
    else:
        phase_base = f0 * t
    wave = np.zeros(n)
    for h, gain in enumerate(HARMONIC_GAINS, start=1):
        wave += gain * np.sin(2.0 * np.pi * h * phase_base + rng.uniform(0, 2 * np.pi))
    # shallow modulation: the envelope never dips below the voicing
    # threshold, so one burst stays one syllable
    wave *= 0.75 + 0.25 * np.sin(2.0 * np.pi * rep * t + rng.uniform(0, 2 * np.pi))
    taper = int(EDGE_TAPER_S * sr)
    if taper and n > 2 * taper:
        ramp = 0.5 * (1.0 - np.cos(np.pi * np.arange(taper) / taper))
        wave[:taper] *= ramp
        wave[-taper:] *= ramp[::-1]
    return wave / np.max(np.abs(wave))


def _fundamental(rng: np.random.Generator, recipe: CallRecipe, frac: float, steady: dict[str, float]) -> float:
    """Burst fundamental under the recipe's pitch trend; frac is the burst's
    position inside the clip in [0, 1)."""
    lo, hi = recipe.fundamental_hz
    if recipe.pitch_trend in ("steady", "glide"):
        # one center per clip; glide moves within the burst, not across bursts
        return steady[recipe.name] * float(rng.uniform(0.99, 1.01))
    if recipe.pitch_trend == "rising":
        base = lo + (hi - lo) * frac
    elif recipe.pitch_trend == "falling":
        base = hi - (hi - lo) * frac
    else:
        return _draw(rng, recipe.fundamental_hz)
    jitter = 0.03 * (hi - lo)
    return float(np.clip(base + rng.uniform(-jitter, jitter), lo, hi))


def generate_clip(
    recipe: CallRecipe,
    seed: int,
    secondary: CallRecipe | None = None,
    source_id: str = "",
) -> tuple[AudioClip, LabelVector]:
    """Synthesize one labeled clip; bit-identical for a given seed.

    With a secondary recipe the bursts alternate between the two classes'
    tonal parameters while timing follows the primary recipe.
    """
    sr = TARGET_SAMPLE_RATE
    rng = np.random.default_rng(seed)
    total_s = _draw(rng, recipe.total_s)
    n = int(round(total_s * sr))
    gain = _draw(rng, recipe.amplitude)
    noise_amp = 10.0 ** (recipe.noise_floor_db / 20.0)
    x = rng.normal(0.0, noise_amp, size=n)

    cursor = _draw(rng, (0.05, 0.15))
    sources = [recipe] if secondary is None else [recipe, secondary]
    steady = {src.name: _draw(rng, src.fundamental_hz) for src in sources}
    k = 0
    while True:
        burst_s = _draw(rng, recipe.burst_s)
        if cursor + burst_s > total_s - 0.05:
            break
        source = sources[k % len(sources)]
        f0 = _fundamental(rng, source, cursor / total_s, steady)
        burst = _burst(rng, source, burst_s, sr, f0)
        start = int(round(cursor * sr))
        x[start : start + burst.size] += gain * rng.uniform(0.85, 1.0) * burst
        cursor += burst_s + _draw(rng, recipe.gap_s)
        k += 1

    peak = np.max(np.abs(x))
    if peak > 0.99:
        x *= 0.99 / peak
    samples = x.astype(np.float32).astype(np.float64)  # float WAV round trips exactly
    names = [recipe.name] + ([secondary.name] if secondary else [])
    return AudioClip(samples=samples, sample_rate=sr, source_id=source_id), LabelVector.from_names(names)


def generate_dataset(
    out_dir: str | Path,
    per_class: int = 20,
    seed: int = 0,
) -> Path:
    """Write per_class clips for each of the 8 call types plus a manifest.

    Returns the manifest path; rows are path, comma-separated label names,
    tab-separated.
    """
    if per_class < 1:
        raise SynthError("per_class must be >= 1")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out_dir}: {exc}") from exc
    master_rng = np.random.default_rng(seed)
    clip_seeds = master_rng.integers(0, 2**63 - 1, size=8 * per_class)
    rows = []
    idx = 0
    for name in SUBCLASS_NAMES:
        recipe = RECIPES[name]
        siblings = [
            SUBCLASS_NAMES[s]
            for s in MASTER_GROUPS[SUBCLASS_TO_MASTER[recipe.subclass]]
            if s != recipe.subclass
        ]
        for i in range(per_class):
            secondary = None
            if siblings and master_rng.random() < MULTI_LABEL_RATE:
                secondary = RECIPES[siblings[int(master_rng.integers(len(siblings)))]]
            fname = f"clip_{name}_{i:03d}.wav"
            clip, label = generate_clip(
                recipe, seed=int(clip_seeds[idx]), secondary=secondary, source_id=fname
            )
            try:
                write_wav(out_dir / fname, clip)
            except OSError as exc:
                raise IoFailure(f"cannot write {out_dir / fname}: {exc}") from exc
            rows.append(f"{fname}\t{','.join(label.names())}")
            idx += 1
    manifest = out_dir / "manifest.tsv"
    try:
        manifest.write_text("\n".join(rows) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {manifest}: {exc}") from exc
    return manifest


def load_manifest(path: str | Path) -> list[tuple[Path, LabelVector]]:
    """Read manifest rows as (wav path, label); paths resolve relative to
    the manifest location."""
    path = Path(path)
    entries = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        fields = line.split("\t")
        wav = Path(fields[0])
        if not wav.is_absolute():
            wav = path.parent / wav
        entries.append((wav, LabelVector.from_names(fields[1].split(","))))
    return entries
