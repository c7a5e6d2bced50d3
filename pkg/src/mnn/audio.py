"""Time-frequency conversion, feature assembly, mask application, and WAV I/O.

All spectra are one-sided: a frame of N samples yields D = N/2 + 1 bins.
Analysis uses a periodic Hann window; synthesis is normalized weighted
overlap-add with the same window, which satisfies COLA at the default
75% overlap (hop = frame_size / 4).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile


class AudioError(ValueError):
    """Raised for malformed audio data or geometry mismatches."""


@dataclass
class Waveform:
    """Mono time-domain signal, amplitude nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise AudioError("waveform must be mono (1-D)")
        if self.samples.size < 1:
            raise AudioError("waveform must contain at least one sample")
        if not np.all(np.isfinite(self.samples)):
            raise AudioError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise AudioError("sample rate must be positive")

    def __len__(self):
        return self.samples.size


@dataclass
class Spectrogram:
    """Complex one-sided STFT, frames laid out as a (T, D) matrix.

    `length` records the pre-padding sample count so istft can trim.
    """

    frames: np.ndarray
    frame_size: int
    hop: int
    sample_rate: int
    length: int | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.complex128)
        if self.frames.ndim != 2:
            raise AudioError("spectrogram frames must be a 2-D matrix")
        if self.frames.shape[1] != self.frame_size // 2 + 1:
            raise AudioError(
                f"bin count {self.frames.shape[1]} inconsistent with "
                f"frame_size {self.frame_size}"
            )
        if self.hop > self.frame_size:
            raise AudioError("hop must not exceed frame_size")
        if not np.all(np.isfinite(self.frames)):
            raise AudioError("spectrogram contains non-finite entries")

    @property
    def num_frames(self):
        return self.frames.shape[0]

    @property
    def num_bins(self):
        return self.frames.shape[1]


@dataclass
class MagnitudeSpectrogram:
    """Nonnegative magnitude counterpart of a Spectrogram."""

    frames: np.ndarray
    frame_size: int
    hop: int
    sample_rate: int

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if np.any(self.frames < 0) or not np.all(np.isfinite(self.frames)):
            raise AudioError("magnitudes must be finite and nonnegative")


def _hann_periodic(n: int) -> np.ndarray:
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))


def stft(w: Waveform, frame_size: int = 1024, hop: int | None = None) -> Spectrogram:
    """Analyze a waveform into overlapping windowed frames.

    The tail is zero-padded so every sample is covered by a frame; the
    original length is kept on the result for exact-length inversion.
    """
    if hop is None:
        hop = frame_size // 4
    if frame_size <= 0 or frame_size & (frame_size - 1):
        raise AudioError("frame_size must be a power of two")
    if hop > frame_size or hop <= 0:
        raise AudioError("hop must be in [1, frame_size]")

    x = w.samples
    n = x.size
    num_frames = int(np.ceil(max(n - frame_size, 0) / hop)) + 1
    padded = np.zeros((num_frames - 1) * hop + frame_size)
    padded[:n] = x

    window = _hann_periodic(frame_size)
    idx = np.arange(frame_size)[None, :] + hop * np.arange(num_frames)[:, None]
    frames = np.fft.rfft(padded[idx] * window, axis=1)
    return Spectrogram(frames, frame_size, hop, w.sample_rate, length=n)


def istft(spec: Spectrogram) -> Waveform:
    """Resynthesize a waveform by normalized weighted overlap-add."""
    frame_size, hop = spec.frame_size, spec.hop
    window = _hann_periodic(frame_size)
    frames = np.fft.irfft(spec.frames, n=frame_size, axis=1) * window

    total = (spec.num_frames - 1) * hop + frame_size
    out = np.zeros(total)
    norm = np.zeros(total)
    wsq = window * window
    for t in range(spec.num_frames):
        start = t * hop
        out[start : start + frame_size] += frames[t]
        norm[start : start + frame_size] += wsq
    # floor the normalization so inconsistent spectrograms (e.g. after
    # masking) cannot blow up at the window ramp edges
    out /= np.maximum(norm, 0.1 * norm.max())

    if spec.length is not None:
        out = out[: spec.length]
    return Waveform(out, spec.sample_rate)


def magnitude(spec: Spectrogram) -> MagnitudeSpectrogram:
    """Entrywise modulus of the complex spectra."""
    return MagnitudeSpectrogram(
        np.abs(spec.frames), spec.frame_size, spec.hop, spec.sample_rate
    )


def concat_context(frames: np.ndarray, context: int) -> np.ndarray:
    """Concatenate `context` consecutive frames around each center frame.

    Row t of the result is [frames[t-c] ... frames[t] ... frames[t+c]]
    with c = (context - 1) / 2; out-of-range neighbors are zero frames.
    Accepts a MagnitudeSpectrogram or a plain (T, D) matrix.
    """
    if hasattr(frames, "frames"):
        frames = frames.frames
    frames = np.asarray(frames, dtype=np.float64)
    if context % 2 == 0 or context < 1:
        raise AudioError("context frame count must be odd and >= 1")
    if context == 1:
        return frames.copy()

    T, D = frames.shape
    half = (context - 1) // 2
    padded = np.zeros((T + 2 * half, D))
    padded[half : half + T] = frames
    cols = [padded[k : k + T] for k in range(context)]
    return np.concatenate(cols, axis=1)


def apply_mask(spec: Spectrogram, mask: np.ndarray) -> Spectrogram:
    """Elementwise product of a soft mask with the complex mixture.

    Mixture phase is preserved because the mask is real.
    """
    if hasattr(mask, "frames"):
        mask = mask.frames
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != spec.frames.shape:
        raise AudioError(
            f"mask shape {mask.shape} != spectrogram shape {spec.frames.shape}"
        )
    return Spectrogram(
        spec.frames * mask, spec.frame_size, spec.hop, spec.sample_rate, spec.length
    )


def read_wav(path) -> Waveform:
    """Read a mono PCM-16 or float-32 WAV; PCM is normalized to [-1, 1]."""
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise AudioError(f"{path}: multichannel WAV not supported")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise AudioError(f"{path}: unsupported sample format {data.dtype}")
    return Waveform(samples, int(rate))


def write_wav(path, w: Waveform, encoding: str = "float32") -> None:
    """Write a mono WAV as IEEE float-32 (default) or PCM-16."""
    if encoding == "float32":
        wavfile.write(path, w.sample_rate, w.samples.astype(np.float32))
    elif encoding == "pcm16":
        clipped = np.clip(w.samples, -1.0, 32767.0 / 32768.0)
        wavfile.write(path, w.sample_rate, np.round(clipped * 32768.0).astype(np.int16))
    else:
        raise AudioError(f"unknown WAV encoding {encoding!r}")
