"""Evaluation measures: SNR, scale-invariant SDR, and STOI.

All log-ratio metrics are capped at +/-100 dB so degenerate inputs give
finite, testable values. Everything here is pure and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import resample_poly

from .audio import Waveform

DB_CAP = 100.0
_EPS = 1e-20


class MetricError(ValueError):
    """Raised for inputs a metric cannot be computed on."""


@dataclass
class EvalResult:
    sdr_db: float
    stoi: float
    snr_db: float


def _capped_ratio_db(num: float, den: float) -> float:
    if num < _EPS:
        return -DB_CAP
    if den < _EPS:
        return DB_CAP
    return float(np.clip(10.0 * np.log10(num / den), -DB_CAP, DB_CAP))


def snr(s: Waveform, n: Waveform) -> float:
    """10 log10 of the speech-to-noise energy ratio."""
    if len(s) == 0 or len(n) == 0:
        raise MetricError("zero-length input")
    if len(s) != len(n):
        raise MetricError("signal and noise lengths differ")
    return _capped_ratio_db(float(np.sum(s.samples**2)), float(np.sum(n.samples**2)))


def sdr(estimate: Waveform, reference: Waveform) -> float:
    """Scale-invariant signal-to-distortion ratio.

    The estimate is projected onto the reference; distortion is whatever
    is left. Invariant to any positive gain on the estimate.
    """
    if len(estimate) != len(reference):
        raise MetricError("estimate and reference lengths differ")
    ref = reference.samples
    est = estimate.samples
    ref_energy = float(np.sum(ref**2))
    if ref_energy < _EPS:
        raise MetricError("zero reference")
    target = (float(np.dot(est, ref)) / ref_energy) * ref
    return _capped_ratio_db(float(np.sum(target**2)),
                            float(np.sum((est - target) ** 2)))


# ---------------------------------------------------------------------------
# STOI
# ---------------------------------------------------------------------------

_STOI_FS = 10000
_STOI_FRAME = 256
_STOI_HOP = 128
_STOI_NFFT = 512
_STOI_BANDS = 15
_STOI_BAND_LO = 150.0
_STOI_SEG = 30  # frames per 384 ms segment
_STOI_BETA_DB = -15.0
_STOI_DYN_RANGE_DB = 40.0


def _third_octave_matrix() -> np.ndarray:
    """Boolean (bands, bins) membership matrix at the 10 kHz analysis rate."""
    freqs = np.fft.rfftfreq(_STOI_NFFT, 1.0 / _STOI_FS)
    centers = _STOI_BAND_LO * 2.0 ** (np.arange(_STOI_BANDS) / 3.0)
    lo = centers * 2.0 ** (-1.0 / 6.0)
    hi = centers * 2.0 ** (1.0 / 6.0)
    return (freqs[None, :] >= lo[:, None]) & (freqs[None, :] < hi[:, None])


def _frame_signal(x: np.ndarray) -> np.ndarray:
    num = (len(x) - _STOI_FRAME) // _STOI_HOP + 1
    idx = np.arange(_STOI_FRAME)[None, :] + _STOI_HOP * np.arange(num)[:, None]
    return x[idx]


def _remove_silent_frames(ref: np.ndarray, est: np.ndarray):
    """Drop frames more than 40 dB below the loudest reference frame."""
    window = np.hanning(_STOI_FRAME + 2)[1:-1]
    rf = _frame_signal(ref) * window
    ef = _frame_signal(est) * window
    energy_db = 20.0 * np.log10(np.linalg.norm(rf, axis=1) + 1e-12)
    keep = energy_db > energy_db.max() - _STOI_DYN_RANGE_DB
    rf, ef = rf[keep], ef[keep]

    def overlap_add(frames):
        out = np.zeros((len(frames) - 1) * _STOI_HOP + _STOI_FRAME)
        for i, fr in enumerate(frames):
            out[i * _STOI_HOP : i * _STOI_HOP + _STOI_FRAME] += fr
        return out

    return overlap_add(rf), overlap_add(ef)


def stoi(estimate: Waveform, reference: Waveform, fs: int | None = None) -> float:
    """Short-time objective intelligibility of the estimate.

    Mean correlation of normalized, clipped one-third-octave temporal
    envelopes over 384 ms segments, after resampling to 10 kHz and
    removing silent reference frames.
    """
    fs = fs or reference.sample_rate
    if fs < _STOI_FS:
        raise MetricError(f"STOI needs fs >= {_STOI_FS} Hz, got {fs}")
    if len(estimate) != len(reference):
        raise MetricError("estimate and reference lengths differ")

    ref = reference.samples
    est = estimate.samples
    if fs != _STOI_FS:
        g = np.gcd(fs, _STOI_FS)
        ref = resample_poly(ref, _STOI_FS // g, fs // g)
        est = resample_poly(est, _STOI_FS // g, fs // g)

    ref, est = _remove_silent_frames(ref, est)
    min_len = (_STOI_SEG - 1) * _STOI_HOP + _STOI_FRAME
    if len(ref) < min_len:
        raise MetricError("input too short after silent-frame removal "
                          "(need >= 384 ms of active signal)")

    window = np.hanning(_STOI_FRAME + 2)[1:-1]
    rf = np.fft.rfft(_frame_signal(ref) * window, n=_STOI_NFFT, axis=1)
    ef = np.fft.rfft(_frame_signal(est) * window, n=_STOI_NFFT, axis=1)
    bands = _third_octave_matrix()
    # (frames, bands) band envelopes
    X = np.sqrt((np.abs(rf) ** 2) @ bands.T)
    Y = np.sqrt((np.abs(ef) ** 2) @ bands.T)

    clip_gain = 10.0 ** (-_STOI_BETA_DB / 20.0)
    scores = []
    for m in range(_STOI_SEG, X.shape[0] + 1):
        xs = X[m - _STOI_SEG : m]  # (seg, bands)
        ys = Y[m - _STOI_SEG : m]
        alpha = np.linalg.norm(xs, axis=0) / (np.linalg.norm(ys, axis=0) + 1e-12)
        ys = np.minimum(ys * alpha[None, :], xs * (1.0 + clip_gain))
        xc = xs - xs.mean(axis=0, keepdims=True)
        yc = ys - ys.mean(axis=0, keepdims=True)
        denom = np.linalg.norm(xc, axis=0) * np.linalg.norm(yc, axis=0) + 1e-12
        scores.append(np.sum(xc * yc, axis=0) / denom)
    value = float(np.mean(scores))
    return float(np.clip(value, 0.0, 1.0))


def evaluate(estimate: Waveform, reference: Waveform,
             noise: Waveform | None = None) -> EvalResult:
    """Bundle SDR, STOI, and SNR (reference vs residual) for reporting."""
    resid = noise.samples if noise is not None \
        else estimate.samples - reference.samples
    snr_db = _capped_ratio_db(float(np.sum(reference.samples**2)),
                              float(np.sum(resid**2)))
    return EvalResult(
        sdr_db=sdr(estimate, reference),
        stoi=stoi(estimate, reference),
        snr_db=snr_db,
    )
