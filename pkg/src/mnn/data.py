"""Corpus handling: SNR-controlled mixing, manifests, and a hermetic
substitute corpus generator.

Real speech/noise corpora are licensed, so the generator synthesizes
vowel-like harmonic "speech" (two disjoint formant-range speaker groups)
and three distinguishable noise textures: high-band chirps, impulsive
clicks, and a low-frequency rumble.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import Waveform, read_wav, write_wav

NOISE_KINDS = ("chirps", "clicks", "rumble")


class DataError(ValueError):
    """Raised for invalid mixtures or manifest violations."""


def mix_at_snr(s: Waveform, n: Waveform, target_db: float):
    """Scale the noise so the mixture hits the target SNR exactly.

    Returns (mixture, scaled_noise). The noise must cover the speech;
    any excess tail is dropped.
    """
    if len(n) < len(s):
        raise DataError("noise shorter than clean signal")
    noise = n.samples[: len(s)]
    es = float(np.sum(s.samples**2))
    en = float(np.sum(noise**2))
    if es <= 0.0 or en <= 0.0:
        raise DataError("zero-energy clean or noise signal")
    gain = np.sqrt(es / en / 10.0 ** (target_db / 10.0))
    scaled = noise * gain
    return (
        Waveform(s.samples + scaled, s.sample_rate),
        Waveform(scaled, s.sample_rate),
    )


@dataclass
class MixtureRecord:
    clean_path: str
    noise_path: str
    snr_db: float
    noise_offset: int = 0
    seed: int = 0
    label: str | None = None  # axis value for experiment bookkeeping

    def key(self):
        return (self.clean_path, self.noise_path, self.noise_offset)


@dataclass
class DatasetManifest:
    records: list
    split: str = "train"
    sample_rate: int = 16000
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.key() in seen:
                raise DataError(
                    f"duplicate (clean, noise, offset) triple in split "
                    f"{self.split!r}: {r.key()}"
                )
            seen.add(r.key())


def _record_to_dict(r: MixtureRecord) -> dict:
    d = {
        "clean_path": r.clean_path,
        "noise_path": r.noise_path,
        "snr_db": r.snr_db,
        "noise_offset": r.noise_offset,
        "seed": r.seed,
    }
    if r.label is not None:
        d["label"] = r.label
    return d


def _record_from_dict(d: dict) -> MixtureRecord:
    return MixtureRecord(
        clean_path=d["clean_path"],
        noise_path=d["noise_path"],
        snr_db=float(d["snr_db"]),
        noise_offset=int(d.get("noise_offset", 0)),
        seed=int(d.get("seed", 0)),
        label=d.get("label"),
    )


def save_manifest(manifest: DatasetManifest, path) -> None:
    doc = {
        "split": manifest.split,
        "sample_rate": manifest.sample_rate,
        "metadata": manifest.metadata,
        "records": [_record_to_dict(r) for r in manifest.records],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def load_manifest(path) -> DatasetManifest:
    with open(path) as f:
        doc = json.load(f)
    return DatasetManifest(
        records=[_record_from_dict(d) for d in doc["records"]],
        split=doc.get("split", "train"),
        sample_rate=int(doc.get("sample_rate", 16000)),
        metadata=doc.get("metadata", {}),
    )


def realize(record: MixtureRecord, base_dir=None):
    """Materialize (clean, scaled_noise, mixture) waveforms for a record.

    The noise segment starts at `noise_offset`; realization is fully
    deterministic, so the same record always yields the same mixture.
    """
    base = Path(base_dir) if base_dir else Path(".")
    clean = read_wav(base / record.clean_path)
    noise_full = read_wav(base / record.noise_path)
    start = record.noise_offset
    if start + len(clean) > len(noise_full):
        raise DataError(
            f"noise segment [{start}, {start + len(clean)}) exceeds noise file "
            f"{record.noise_path} ({len(noise_full)} samples)"
        )
    segment = Waveform(noise_full.samples[start : start + len(clean)],
                       noise_full.sample_rate)
    mixture, scaled = mix_at_snr(clean, segment, record.snr_db)
    return clean, scaled, mixture


def _clean_lengths(manifest, base_dir):
    base = Path(base_dir) if base_dir else Path(".")
    cache = {}
    for r in manifest.records:
        if r.clean_path not in cache:
            cache[r.clean_path] = len(read_wav(base / r.clean_path))
    return cache


def validate_noise_disjoint(train: DatasetManifest, test: DatasetManifest,
                            base_dir=None) -> None:
    """Reject train/test manifests whose noise segments overlap."""
    spans = {}
    for manifest in (train, test):
        lengths = _clean_lengths(manifest, base_dir)
        for r in manifest.records:
            spans.setdefault(r.noise_path, []).append(
                (r.noise_offset, r.noise_offset + lengths[r.clean_path],
                 manifest.split)
            )
    for noise_path, intervals in spans.items():
        intervals.sort()
        for (s0, e0, sp0), (s1, e1, sp1) in zip(intervals, intervals[1:]):
            if sp0 != sp1 and s1 < e0:
                raise DataError(
                    f"noise segments overlap across splits in {noise_path}: "
                    f"[{s0}, {e0}) vs [{s1}, {e1})"
                )


# ---------------------------------------------------------------------------
# Substitute corpus synthesis
# ---------------------------------------------------------------------------

# formant-range speaker groups standing in for the paper's M/F split
SPEAKER_GROUPS = {
    "low": {"f0": (95.0, 135.0), "formant_shift": 0.88},
    "high": {"f0": (175.0, 235.0), "formant_shift": 1.12},
}

_VOWELS = [  # (F1, F2, F3) center frequencies in Hz
    (730.0, 1090.0, 2440.0),
    (270.0, 2290.0, 3010.0),
    (530.0, 1840.0, 2480.0),
    (570.0, 840.0, 2410.0),
    (440.0, 1020.0, 2240.0),
]


def _formant_envelope(freqs, formants, bandwidths=(90.0, 110.0, 170.0)):
    env = np.zeros_like(freqs)
    for fc, bw in zip(formants, bandwidths):
        env += 1.0 / (1.0 + ((freqs - fc) / bw) ** 2)
    return env + 0.01


def synth_utterance(rng: np.random.Generator, group: str, duration: float,
                    sample_rate: int) -> Waveform:
    """Vowel-like harmonic utterance: a run of pitched, formant-shaped
    syllables with smooth amplitude envelopes and short gaps."""
    spec = SPEAKER_GROUPS[group]
    f0_base = rng.uniform(*spec["f0"])
    n = int(duration * sample_rate)
    out = np.zeros(n)
    t_cursor = int(0.02 * sample_rate)
    while t_cursor < n - int(0.1 * sample_rate):
        syl_len = int(rng.uniform(0.12, 0.25) * sample_rate)
        syl_len = min(syl_len, n - t_cursor)
        tt = np.arange(syl_len) / sample_rate
        f0 = f0_base * (1.0 + rng.uniform(-0.08, 0.08)
                        + 0.05 * np.sin(2 * np.pi * rng.uniform(1.5, 4.0) * tt))
        phase = 2 * np.pi * np.cumsum(f0) / sample_rate
        formants = np.array(_VOWELS[rng.integers(len(_VOWELS))])
        formants = formants * spec["formant_shift"]
        syl = np.zeros(syl_len)
        h = 1
        while h * f0_base < 0.45 * sample_rate and h <= 40:
            amp = _formant_envelope(np.array([h * f0_base]), formants)[0]
            syl += amp * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
            h += 1
        ramp = int(0.015 * sample_rate)
        env = np.ones(syl_len)
        env[:ramp] = np.linspace(0, 1, ramp)
        env[-ramp:] = np.linspace(1, 0, ramp)
        out[t_cursor : t_cursor + syl_len] += syl * env
        t_cursor += syl_len + int(rng.uniform(0.01, 0.06) * sample_rate)
    peak = np.max(np.abs(out))
    if peak > 0:
        out *= 0.5 / peak
    return Waveform(out, sample_rate)


def synth_noise(kind: str, duration: float, sample_rate: int,
                rng: np.random.Generator) -> Waveform:
    """One of three synthetic noise textures, seeded and reproducible."""
    n = int(duration * sample_rate)
    t = np.arange(n) / sample_rate
    if kind == "chirps":
        out = np.zeros(n)
        pos = 0
        while pos < n:
            length = int(rng.uniform(0.04, 0.12) * sample_rate)
            length = min(length, n - pos)
            tt = np.arange(length) / sample_rate
            f_lo = rng.uniform(2000.0, 3000.0)
            f_hi = f_lo + rng.uniform(500.0, 1500.0)
            sweep = f_lo + (f_hi - f_lo) * tt / tt[-1] if length > 1 else f_lo
            phase = 2 * np.pi * np.cumsum(np.atleast_1d(sweep)) / sample_rate
            env = np.sin(np.pi * np.arange(length) / max(length, 1)) ** 2
            out[pos : pos + length] += np.sin(phase) * env
            pos += length + int(rng.uniform(0.02, 0.15) * sample_rate)
    elif kind == "clicks":
        out = 0.02 * rng.standard_normal(n)
        n_clicks = max(1, int(duration * 12))
        for _ in range(n_clicks):
            start = rng.integers(0, max(n - 200, 1))
            length = int(rng.uniform(0.004, 0.015) * sample_rate)
            burst = rng.standard_normal(length)
            burst *= np.exp(-np.arange(length) / (0.002 * sample_rate))
            out[start : start + length] += 3.0 * burst[: max(n - start, 0)][:length]
    elif kind == "rumble":
        from scipy.signal import lfilter

        white = rng.standard_normal(n)
        # one-pole lowpass around ~250 Hz
        alpha = np.exp(-2 * np.pi * 250.0 / sample_rate)
        out = lfilter([1.0 - alpha], [1.0, -alpha], white)
        out = out / (np.std(out) + 1e-12)
        mod = 1.0 + 0.4 * np.sin(2 * np.pi * 7.0 * t + rng.uniform(0, 2 * np.pi))
        firing = np.sin(2 * np.pi * 85.0 * t) + 0.5 * np.sin(2 * np.pi * 170.0 * t)
        out = (out + 0.8 * firing) * mod
    else:
        raise DataError(f"unknown noise kind {kind!r}")
    peak = np.max(np.abs(out))
    if peak > 0:
        out = out * (0.5 / peak)
    return Waveform(out, sample_rate)


def generate_corpus(out_dir, speakers: int = 6, utterances: int = 4,
                    seed: int = 0, sample_rate: int = 16000,
                    utterance_seconds: float = 1.2,
                    noise_seconds: float = 40.0) -> dict:
    """Write the substitute corpus: clean WAVs per speaker plus one long
    WAV per noise texture, and return the file layout.

    Speakers alternate between the two formant groups. Noise files are
    long enough that train and test mixtures can draw disjoint segments
    (train from the first half, test from the second).
    """
    out = Path(out_dir)
    (out / "clean").mkdir(parents=True, exist_ok=True)
    (out / "noise").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    layout = {"sample_rate": sample_rate, "clean": [], "noise": {},
              "noise_samples": int(noise_seconds * sample_rate),
              "utterance_samples": int(utterance_seconds * sample_rate)}
    group_names = list(SPEAKER_GROUPS)
    for spk in range(speakers):
        group = group_names[spk % len(group_names)]
        for utt in range(utterances):
            w = synth_utterance(rng, group, utterance_seconds, sample_rate)
            rel = f"clean/spk{spk:02d}_{group}_utt{utt:02d}.wav"
            write_wav(out / rel, w)
            layout["clean"].append({"path": rel, "speaker": spk, "group": group})
    for kind in NOISE_KINDS:
        w = synth_noise(kind, noise_seconds, sample_rate, rng)
        rel = f"noise/{kind}.wav"
        write_wav(out / rel, w)
        layout["noise"][kind] = rel

    with open(out / "corpus.json", "w") as f:
        json.dump(layout, f, indent=2)
        f.write("\n")
    return layout
