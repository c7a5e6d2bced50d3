import numpy as np
import pytest

from mnn.audio import (AudioError, MagnitudeSpectrogram, Spectrogram, Waveform,
                       apply_mask, concat_context, istft, magnitude, read_wav,
                       stft, write_wav)


def rand_wave(rng, n=16000, sr=16000, scale=0.1):
    return Waveform(rng.standard_normal(n) * scale, sr)


class TestWaveform:
    def test_rejects_nan(self):
        with pytest.raises(AudioError):
            Waveform(np.array([0.0, np.nan]), 16000)

    def test_rejects_empty(self):
        with pytest.raises(AudioError):
            Waveform(np.array([]), 16000)

    def test_rejects_stereo(self):
        with pytest.raises(AudioError):
            Waveform(np.zeros((100, 2)), 16000)


class TestStft:
    def test_zero_in_zero_out(self):
        spec = stft(Waveform(np.zeros(16000), 16000), 1024)
        assert np.all(spec.frames == 0)

    def test_bin_count_1024(self):
        spec = stft(Waveform(np.zeros(16000), 16000), 1024)
        assert spec.num_bins == 513

    def test_rejects_non_power_of_two(self):
        with pytest.raises(AudioError):
            stft(Waveform(np.zeros(1000), 16000), 1000)

    def test_rejects_hop_above_frame(self):
        with pytest.raises(AudioError):
            stft(Waveform(np.zeros(4096), 16000), 1024, hop=2048)

    def test_linearity(self):
        rng = np.random.default_rng(0)
        w1, w2 = rand_wave(rng), rand_wave(rng)
        lhs = stft(Waveform(2.0 * w1.samples - 0.5 * w2.samples, 16000), 512)
        rhs = 2.0 * stft(w1, 512).frames - 0.5 * stft(w2, 512).frames
        assert np.allclose(lhs.frames, rhs, atol=1e-12)

    def test_roundtrip_interior(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            w = rand_wave(rng, n=int(rng.integers(8000, 32000)))
            rec = istft(stft(w, 1024))
            assert len(rec) == len(w)
            err = np.max(np.abs(rec.samples[1024:-1024] - w.samples[1024:-1024]))
            assert err / np.max(np.abs(w.samples)) < 1e-6

    def test_roundtrip_sine(self):
        t = np.arange(16000) / 16000
        w = Waveform(0.5 * np.sin(2 * np.pi * 440 * t), 16000)
        rec = istft(stft(w, 1024))
        assert np.max(np.abs(rec.samples[1024:-1024] - w.samples[1024:-1024])) < 1e-6

    def test_istft_zero(self):
        spec = stft(Waveform(np.zeros(8000), 16000), 512)
        assert np.all(istft(spec).samples == 0)

    def test_istft_rejects_bad_geometry(self):
        with pytest.raises(AudioError):
            Spectrogram(np.zeros((10, 100), dtype=complex), 512, 128, 16000)


class TestMagnitude:
    def test_pythagorean(self):
        spec = Spectrogram(np.full((2, 257), 3 + 4j), 512, 128, 16000)
        assert np.allclose(magnitude(spec).frames, 5.0)

    def test_matches_elementwise_oracle(self):
        rng = np.random.default_rng(2)
        frames = rng.standard_normal((7, 257)) + 1j * rng.standard_normal((7, 257))
        spec = Spectrogram(frames, 512, 128, 16000)
        oracle = np.sqrt(frames.real**2 + frames.imag**2)
        assert np.allclose(magnitude(spec).frames, oracle)


class TestConcatContext:
    def test_c1_identity(self):
        rng = np.random.default_rng(3)
        m = np.abs(rng.standard_normal((9, 257)))
        assert np.array_equal(concat_context(m, 1), m)

    def test_width_c3(self):
        out = concat_context(np.zeros((5, 513)), 3)
        assert out.shape == (5, 1539)

    def test_interior_row_layout(self):
        rng = np.random.default_rng(4)
        m = np.abs(rng.standard_normal((6, 8)))
        out = concat_context(m, 3)
        for t in range(1, 5):
            assert np.array_equal(out[t], np.concatenate([m[t - 1], m[t], m[t + 1]]))

    def test_edges_zero_padded(self):
        m = np.ones((4, 3))
        out = concat_context(m, 3)
        assert np.array_equal(out[0, :3], np.zeros(3))
        assert np.array_equal(out[-1, -3:], np.zeros(3))

    def test_rejects_even_context(self):
        with pytest.raises(AudioError):
            concat_context(np.zeros((4, 3)), 2)


class TestApplyMask:
    def _spec(self, rng):
        frames = rng.standard_normal((6, 257)) + 1j * rng.standard_normal((6, 257))
        return Spectrogram(frames, 512, 128, 16000)

    def test_ones_mask_is_identity(self):
        spec = self._spec(np.random.default_rng(5))
        out = apply_mask(spec, np.ones((6, 257)))
        assert np.array_equal(out.frames, spec.frames)

    def test_zero_mask_silences(self):
        spec = self._spec(np.random.default_rng(6))
        assert np.all(apply_mask(spec, np.zeros((6, 257))).frames == 0)

    def test_mask_never_amplifies(self):
        rng = np.random.default_rng(7)
        spec = self._spec(rng)
        mask = rng.random((6, 257))
        out = magnitude(apply_mask(spec, mask)).frames
        assert np.all(out <= magnitude(spec).frames + 1e-12)

    def test_shape_mismatch(self):
        spec = self._spec(np.random.default_rng(8))
        with pytest.raises(AudioError):
            apply_mask(spec, np.ones((5, 257)))


class TestWavIO:
    def test_float32_roundtrip(self, tmp_path):
        rng = np.random.default_rng(9)
        w = rand_wave(rng, 4000)
        write_wav(tmp_path / "a.wav", w)
        back = read_wav(tmp_path / "a.wav")
        assert back.sample_rate == 16000
        assert np.allclose(back.samples, w.samples, atol=1e-7)

    def test_pcm16_roundtrip(self, tmp_path):
        rng = np.random.default_rng(10)
        w = Waveform(rng.uniform(-0.9, 0.9, 4000), 16000)
        write_wav(tmp_path / "a.wav", w, encoding="pcm16")
        back = read_wav(tmp_path / "a.wav")
        assert np.max(np.abs(back.samples - w.samples)) < 1.0 / 32768

    def test_rejects_multichannel(self, tmp_path):
        from scipy.io import wavfile
        wavfile.write(tmp_path / "st.wav", 16000,
                      np.zeros((100, 2), dtype=np.int16))
        with pytest.raises(AudioError):
            read_wav(tmp_path / "st.wav")
