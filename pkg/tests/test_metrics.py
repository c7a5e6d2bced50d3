import numpy as np
import pytest

from mnn.audio import Waveform
from mnn.data import mix_at_snr, synth_utterance
from mnn.metrics import MetricError, sdr, snr, stoi

SR = 16000


def speech(seed, dur=2.0):
    return synth_utterance(np.random.default_rng(seed), "low", dur, SR)


class TestSnr:
    def test_equal_energy_zero_db(self):
        rng = np.random.default_rng(0)
        s = Waveform(rng.standard_normal(1000), SR)
        n = Waveform(rng.permutation(s.samples), SR)
        assert snr(s, n) == pytest.approx(0.0, abs=1e-12)

    def test_ten_db(self):
        s = Waveform(np.ones(100), SR)
        n = Waveform(np.ones(100) / np.sqrt(10), SR)
        assert snr(s, n) == pytest.approx(10.0, abs=1e-10)

    def test_zero_noise_caps(self):
        s = Waveform(np.ones(100), SR)
        n = Waveform(np.zeros(100), SR)
        assert snr(s, n) == 100.0

    def test_zero_signal_caps(self):
        s = Waveform(np.zeros(100), SR)
        n = Waveform(np.ones(100), SR)
        assert snr(s, n) == -100.0


class TestSdr:
    def test_identical_caps(self):
        s = speech(1)
        assert sdr(s, s) == 100.0

    def test_scaled_estimate_caps(self):
        s = speech(2)
        assert sdr(Waveform(2 * s.samples, SR), s) == 100.0

    def test_orthogonal_noise_ten_db(self):
        rng = np.random.default_rng(3)
        ref = rng.standard_normal(4000)
        noise = rng.standard_normal(4000)
        noise -= (noise @ ref / (ref @ ref)) * ref  # orthogonalize
        noise *= np.linalg.norm(ref) / np.linalg.norm(noise) / np.sqrt(10)
        value = sdr(Waveform(ref + noise, SR), Waveform(ref, SR))
        assert value == pytest.approx(10.0, abs=1e-9)

    def test_scale_invariance(self):
        rng = np.random.default_rng(4)
        ref = speech(5)
        est = Waveform(ref.samples + 0.1 * rng.standard_normal(len(ref)), SR)
        base = sdr(est, ref)
        for a in (0.5, 2.0, 10.0):
            scaled = Waveform(a * est.samples, SR)
            assert sdr(scaled, ref) == pytest.approx(base, abs=1e-9)

    def test_zero_reference_rejected(self):
        with pytest.raises(MetricError):
            sdr(speech(6), Waveform(np.zeros(len(speech(6))), SR))


class TestStoi:
    def test_self_scores_near_one(self):
        s = speech(7)
        assert stoi(s, s) > 0.99

    def test_white_noise_floor(self):
        rng = np.random.default_rng(1)
        s = synth_utterance(rng, "low", 3.0, SR)
        n = Waveform(rng.standard_normal(len(s)), SR)
        assert stoi(n, s) < 0.3

    def test_monotone_in_noise_level(self):
        rng = np.random.default_rng(8)
        s = speech(9)
        n = Waveform(rng.standard_normal(len(s)), SR)
        light, _ = mix_at_snr(s, n, 20.0)
        heavy, _ = mix_at_snr(s, n, 0.0)
        assert stoi(light, s) > stoi(heavy, s)

    def test_output_in_unit_interval(self):
        rng = np.random.default_rng(10)
        s = speech(11)
        for snr_db in (-10, 0, 30):
            mix, _ = mix_at_snr(s, Waveform(rng.standard_normal(len(s)), SR),
                                snr_db)
            assert 0.0 <= stoi(mix, s) <= 1.0

    def test_rejects_low_sample_rate(self):
        s = Waveform(np.random.default_rng(12).standard_normal(8000), 8000)
        with pytest.raises(MetricError):
            stoi(s, s)

    def test_rejects_too_short(self):
        s = Waveform(np.random.default_rng(13).standard_normal(1600), SR)
        with pytest.raises(MetricError):
            stoi(s, s)

    def test_deterministic(self):
        s = speech(14)
        n = Waveform(np.random.default_rng(15).standard_normal(len(s)), SR)
        mix, _ = mix_at_snr(s, n, 5.0)
        assert stoi(mix, s) == stoi(mix, s)
