import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import lfilter

from hencall.audio import AudioClip, frame
from hencall.features import (
    CepstralMatrix,
    FeatureConfig,
    FrameCountMismatch,
    NegativeFrequency,
    SegmentTooShort,
    extract_features,
    formants,
    fuse_cepstral,
    lfcc,
    mel_scale,
    mfcc,
    pitch,
    read_feature_cache,
    spectral_energy,
    time_features,
    triangular_filterbank,
    write_feature_cache,
)
from hencall.labels import LabelVector
from hencall.synth import RECIPES, generate_clip
from hencall.vad import SyllableSegment

SR = 16000


def segment(samples):
    samples = np.asarray(samples, dtype=np.float64)
    return SyllableSegment(start_s=0.0, end_s=samples.size / SR, samples=samples)


class TestMelScale:
    def test_zero(self):
        assert mel_scale(0.0) == 0.0

    def test_100_with_divisor_100(self):
        assert mel_scale(100.0, divisor=100.0) == pytest.approx(2595 * np.log10(2), abs=1e-9)
        assert mel_scale(100.0, divisor=100.0) == pytest.approx(781.18, abs=0.01)

    def test_700_with_divisor_700(self):
        assert mel_scale(700.0, divisor=700.0) == pytest.approx(781.18, abs=0.01)

    def test_negative_rejected(self):
        with pytest.raises(NegativeFrequency):
            mel_scale(-1.0)

    def test_monotone(self):
        f = np.linspace(0, 8000, 100)
        m = mel_scale(f)
        assert np.all(np.diff(m) > 0)


class TestTriangularFilterbank:
    def test_shape_40_filters(self):
        bank = triangular_filterbank(40, 512, SR, scale="mel")
        assert bank.shape == (40, 257)

    @pytest.mark.parametrize("scale", ["linear", "mel"])
    def test_unit_peak_per_row(self, scale):
        bank = triangular_filterbank(40, 512, SR, scale=scale)
        for row in bank:
            assert row.max() == pytest.approx(1.0)
            assert np.count_nonzero(row == row.max()) == 1

    def test_interior_coverage(self):
        bank = triangular_filterbank(40, 512, SR, scale="linear")
        peaks = [int(np.argmax(row)) for row in bank]
        cols = bank.sum(axis=0)
        for b in range(peaks[0], peaks[-1] + 1):
            assert cols[b] > 0

    def test_bad_nfft(self):
        with pytest.raises(ValueError):
            triangular_filterbank(40, 500, SR)
        with pytest.raises(ValueError):
            triangular_filterbank(40, 32, SR)


class TestMfcc:
    def make_frames(self, samples):
        return frame(AudioClip(samples=samples, sample_rate=SR), window="hamming")

    def test_silence_is_dct_of_log_floor(self):
        frames = self.make_frames(np.zeros(1000))
        coeffs = mfcc(frames).values
        expected0 = np.sqrt(40) * np.log(1e-10)  # orthonormal DCT of a constant
        assert np.allclose(coeffs[:, 0], expected0, atol=1e-9)
        assert np.allclose(coeffs[:, 1:], 0.0, atol=1e-9)

    def test_output_shape(self):
        frames = self.make_frames(np.random.default_rng(0).normal(size=880000))
        out = mfcc(frames)
        assert out.values.shape == (5499, 40)
        assert out.kind == "mfcc"

    def test_amplitude_scaling_shifts_only_c0(self):
        rng = np.random.default_rng(1)
        samples = rng.normal(size=4000)
        a = mfcc(self.make_frames(samples)).values
        b = mfcc(self.make_frames(4.0 * samples)).values
        assert np.allclose(a[:, 1:], b[:, 1:], atol=1e-8)
        shift = b[:, 0] - a[:, 0]
        assert np.allclose(shift, shift[0], atol=1e-8)
        assert shift[0] == pytest.approx(np.sqrt(40) * np.log(16.0), abs=1e-6)


class TestLfcc:
    def test_constant_energies_give_sum_form(self):
        # with every log filter energy equal to c: L_0 = 40 c, L_j = 0 for j >= 1
        cfg = FeatureConfig()
        c = 2.5
        frames = frame(AudioClip(samples=np.zeros(1000), sample_rate=SR), window="rectangular")
        out = lfcc(frames, cfg).values
        # silence pushes every filter to the log floor, a constant vector
        floor = np.log(1e-10)
        assert np.allclose(out[:, 0], 40 * floor, atol=1e-8)
        assert np.allclose(out[:, 1:], 0.0, atol=1e-8)

    def test_cosine_basis_b4(self):
        # B=4, X=[1,0,0,0]: L_1 = cos(pi/8)
        x = np.array([1.0, 0.0, 0.0, 0.0])
        j = np.arange(4)[:, None]
        i = np.arange(4)[None, :]
        basis = np.cos(j * (i + 0.5) * np.pi / 4)
        coeffs = basis @ x
        assert coeffs[1] == pytest.approx(np.cos(np.pi / 8), abs=1e-12)
        assert coeffs[1] == pytest.approx(0.9239, abs=1e-4)

    def test_shape(self):
        frames = frame(AudioClip(samples=np.random.default_rng(2).normal(size=8000), sample_rate=SR))
        out = lfcc(frames)
        assert out.values.shape[1] == 40
        assert out.kind == "lfcc"


class TestFuseCepstral:
    def test_width_80(self):
        m = CepstralMatrix(values=np.random.default_rng(0).normal(size=(100, 40)), kind="mfcc")
        l = CepstralMatrix(values=np.random.default_rng(1).normal(size=(100, 40)), kind="lfcc")
        fused = fuse_cepstral(m, l)
        assert fused.values.shape == (100, 80)
        assert fused.kind == "fused"

    def test_mfcc_columns_first(self):
        m = CepstralMatrix(values=np.random.default_rng(0).normal(size=(10, 40)), kind="mfcc")
        l = CepstralMatrix(values=np.random.default_rng(1).normal(size=(10, 40)), kind="lfcc")
        fused = fuse_cepstral(m, l)
        assert np.array_equal(fused.values[:, :40], m.values)
        assert np.array_equal(fused.values[:, 0], m.values[:, 0])

    def test_mismatch_rejected(self):
        m = CepstralMatrix(values=np.zeros((99, 40)), kind="mfcc")
        l = CepstralMatrix(values=np.zeros((100, 40)), kind="lfcc")
        with pytest.raises(FrameCountMismatch):
            fuse_cepstral(m, l)


class TestSpectralEnergy:
    def test_parseval(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=512)  # power of two: no padding
        per_bin, _ = spectral_energy(segment(x))
        assert per_bin.size == 512
        lhs = per_bin.sum() / 512
        rhs = np.sum(x**2)
        assert abs(lhs - rhs) / rhs < 1e-9

    def test_sine_peak_bin(self):
        t = np.arange(2048) / SR
        x = np.sin(2 * np.pi * 1000 * t)
        per_bin, _ = spectral_energy(segment(x))
        nfft = per_bin.size
        peak_hz = np.argmax(per_bin[: nfft // 2]) * SR / nfft
        assert abs(peak_hz - 1000.0) <= SR / nfft

    def test_zero_segment(self):
        per_bin, scalar = spectral_energy(segment(np.zeros(256)))
        assert np.all(per_bin == 0.0)
        assert scalar == pytest.approx(np.log(1e-12))


class TestPitch:
    def test_200hz_sine(self):
        t = np.arange(3200) / SR
        x = np.sin(2 * np.pi * 200 * t)
        assert pitch(segment(x), SR, 50, 2000) == pytest.approx(200.0, abs=2.0)

    def test_white_noise_unvoiced(self):
        rng = np.random.default_rng(5)
        assert pitch(segment(rng.normal(size=3200)), SR, 50, 2000) == 0.0

    def test_scale_invariance(self):
        t = np.arange(3200) / SR
        x = np.sin(2 * np.pi * 400 * t)
        a = pitch(segment(x), SR, 50, 2000)
        b = pitch(segment(0.1 * x), SR, 50, 2000)
        assert a == b
        assert a == pytest.approx(400.0, abs=2.0)

    def test_too_short(self):
        with pytest.raises(SegmentTooShort):
            pitch(segment(np.zeros(100)), SR, 50, 2000)


class TestFormants:
    def make_resonant(self, freqs, radius=0.98, n=8000, seed=1):
        poles = []
        for f in freqs:
            w = 2 * np.pi * f / SR
            poles += [radius * np.exp(1j * w), radius * np.exp(-1j * w)]
        a = np.real(np.poly(poles))
        return lfilter([1.0], a, np.random.default_rng(seed).normal(size=n))

    def test_two_resonances(self):
        x = self.make_resonant([800.0, 2400.0])
        f = formants(segment(x), SR)
        assert abs(f[0] - 800) / 800 < 0.10
        assert abs(f[1] - 2400) / 2400 < 0.10

    def test_sorted_when_nonzero(self):
        x = self.make_resonant([700.0, 1800.0, 3300.0])
        f = formants(segment(x), SR)
        nz = f[f > 0]
        assert np.all(np.diff(nz) > 0)

    def test_white_noise_fills_zeros(self):
        rng = np.random.default_rng(9)
        f = formants(segment(rng.normal(size=4000)), SR)
        assert f.shape == (4,)
        assert np.all(f >= 0.0)

    def test_scale_invariance(self):
        x = self.make_resonant([900.0, 2600.0])
        a = formants(segment(x), SR)
        b = formants(segment(7.0 * x), SR)
        assert np.allclose(a, b, rtol=1e-6)

    def test_too_short(self):
        with pytest.raises(SegmentTooShort):
            formants(segment(np.zeros(10)), SR)


class TestTimeFeatures:
    def test_tempo(self):
        clip = AudioClip(samples=np.zeros(int(2.5 * SR)), sample_rate=SR)
        sylls = [segment(np.full(800, 0.5)) for _ in range(5)]
        feats = time_features(clip, sylls).values
        assert np.allclose(feats[:, 0], 2.0)

    def test_energy_power_intensity(self):
        clip = AudioClip(samples=np.zeros(SR), sample_rate=SR)
        feats = time_features(clip, [segment(np.full(160, 0.5))]).values
        tempo, energy, intensity, power, f0 = feats[0]
        assert energy == pytest.approx(40.0)
        assert power == pytest.approx(0.25)
        assert intensity == pytest.approx(10 * np.log10(0.25 / 1e-10), abs=1e-6)
        assert intensity == pytest.approx(93.98, abs=0.01)

    def test_zero_amplitude_floor(self):
        clip = AudioClip(samples=np.zeros(SR), sample_rate=SR)
        feats = time_features(clip, [segment(np.zeros(800))]).values
        assert feats[0, 1] == 0.0
        assert feats[0, 3] == 0.0
        assert feats[0, 2] == 0.0  # 10 log10(floor / ref) with floor == ref

    def test_empty_list(self):
        clip = AudioClip(samples=np.zeros(SR), sample_rate=SR)
        assert time_features(clip, []).values.shape == (0, 5)

    def test_energy_additivity(self):
        rng = np.random.default_rng(3)
        s1, s2 = rng.normal(size=900), rng.normal(size=1100)
        clip = AudioClip(samples=np.zeros(SR), sample_rate=SR)
        vals = time_features(clip, [segment(s1), segment(s2), segment(np.concatenate([s1, s2]))]).values
        assert vals[2, 1] == pytest.approx(vals[0, 1] + vals[1, 1], rel=1e-9)


class TestDeterminism:
    def test_feature_functions_bit_identical(self):
        clip, label = generate_clip(RECIPES["fear"], seed=11, source_id="det")
        a = extract_features(clip, label=label)
        b = extract_features(clip, label=label)
        assert np.array_equal(a.channel_time.values, b.channel_time.values)
        assert np.array_equal(a.channel_spectral.values, b.channel_spectral.values)
        assert np.array_equal(a.channel_cepstral.values, b.channel_cepstral.values)


class TestPipelineAgreement:
    def test_mfcc_equals_lfcc_pipeline_on_linear_scale(self):
        # force both pipelines onto the same linear filterbank: the only
        # remaining difference is the cosine-transform normalization, so
        # rescaling columns must reconcile them exactly
        from scipy.fft import dct

        rng = np.random.default_rng(4)
        frames = frame(AudioClip(samples=rng.normal(size=4000), sample_rate=SR))
        cfg = FeatureConfig()
        bank = triangular_filterbank(cfg.num_filters, cfg.nfft, SR, scale="linear")
        power = np.abs(np.fft.rfft(frames.frames, n=cfg.nfft, axis=1)) ** 2
        logs = np.log(np.maximum(power @ bank.T, 1e-10))
        ortho = dct(logs, type=2, norm="ortho", axis=1)
        # orthonormal DCT-II column k equals s_k times the plain cosine sum,
        # s_0 = sqrt(1/B), s_k = sqrt(2/B)
        s = np.full(40, np.sqrt(2.0 / 40.0))
        s[0] = np.sqrt(1.0 / 40.0)
        np.testing.assert_allclose(lfcc(frames, cfg).values, ortho / s, rtol=1e-9, atol=1e-9)


class TestFeatureCache:
    def test_round_trip_bit_exact(self, tmp_path):
        records = []
        for name, seed in (("fear", 1), ("alarm", 2)):
            clip, label = generate_clip(RECIPES[name], seed=seed, source_id=f"{name}-{seed}")
            records.append(extract_features(clip, label=label))
        path = tmp_path / "cache.hvfc"
        write_feature_cache(path, records)
        back = read_feature_cache(path)
        assert len(back) == len(records)
        for a, b in zip(records, back):
            assert a.clip_id == b.clip_id
            assert np.array_equal(a.channel_time.values, b.channel_time.values)
            assert np.array_equal(a.channel_spectral.values, b.channel_spectral.values)
            assert np.array_equal(a.channel_cepstral.values, b.channel_cepstral.values)
            assert a.label == b.label

    def test_magic_checked(self, tmp_path):
        path = tmp_path / "bad.hvfc"
        path.write_bytes(b"WRONG" + b"\x01")
        with pytest.raises(Exception):
            read_feature_cache(path)
