"""Run-time arbitration: enhance with every module, score each result with
the speech autoencoder, keep the winner.

The autoencoder error is low when a module's output looks like clean
speech, so the module with the lowest reconstruction error (or highest
time-domain agreement, in `snr` mode) is selected. Oracle and chance
baselines are computed alongside for reporting.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .audio import (Spectrogram, Waveform, apply_mask, concat_context, istft,
                    magnitude)
from .metrics import sdr
from .network import DROPOUT_OFF, DropoutSpec, Network, NetworkError, feedforward


class SelectionError(ValueError):
    """Raised for geometry mismatches or empty module sets."""


@dataclass
class ModuleOutput:
    """One module's enhancement result plus its DAE reconstruction."""

    module_id: str
    enhanced_spec: Spectrogram
    enhanced_wave: Waveform
    dae_recon: np.ndarray | None = None  # (T, D) reconstructed magnitudes


@dataclass
class ModuleScore:
    module_id: str
    ae_error: float
    snr_db: float


@dataclass
class SelectionReport:
    scores: list
    chosen: str
    metric_used: str
    chance: str
    oracle: str | None = None
    seed: int = 0
    utterance: str | None = None

    def to_dict(self) -> dict:
        return {
            "utterance": self.utterance,
            "metric": self.metric_used,
            "scores": [
                {"module": s.module_id, "ae_error": s.ae_error, "snr_db": s.snr_db}
                for s in self.scores
            ],
            "chosen": self.chosen,
            "oracle": self.oracle,
            "chance": self.chance,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def enhance_with_module(net: Network, mixture: Spectrogram, context: int):
    """Mask-and-multiply enhancement of a mixture with one module.

    Feeds context-concatenated mixture magnitudes through the network,
    multiplies the predicted soft mask with the complex mixture, and
    resynthesizes the waveform.
    """
    D = mixture.num_bins
    if net.input_dim != context * D or net.output_dim != D:
        raise SelectionError(
            f"module geometry {net.input_dim}->{net.output_dim} does not match "
            f"context {context} x {D} bins"
        )
    features = concat_context(magnitude(mixture), context)
    mask, _ = feedforward(net, features)
    enhanced = apply_mask(mixture, np.clip(mask, 0.0, 1.0))
    return enhanced, istft(enhanced)


def _dae_reconstruct(dae: Network, mags: np.ndarray, context: int,
                     drop: DropoutSpec) -> np.ndarray:
    features = concat_context(mags, context)
    if dae.input_dim != features.shape[1]:
        raise SelectionError(
            f"DAE input dim {dae.input_dim} != feature width {features.shape[1]}"
        )
    recon, _ = feedforward(dae, features, drop)
    return recon


def dae_context(dae: Network, num_bins: int) -> int:
    """Infer how many frames the DAE concatenates from its input width."""
    context, rem = divmod(dae.input_dim, num_bins)
    if rem or context % 2 == 0:
        raise SelectionError(
            f"DAE input dim {dae.input_dim} is not an odd multiple of {num_bins}"
        )
    return context


def ae_score(dae: Network, output: ModuleOutput, drop: DropoutSpec = None,
             num_draws: int = 1) -> float:
    """Mean per-frame squared reconstruction error of |s^| under the DAE.

    Default `scaled` dropout is deterministic; `sampled` averages
    `num_draws` seeded corruption draws of the literal formulation.
    """
    mags = np.abs(output.enhanced_spec.frames)
    context = dae_context(dae, mags.shape[1])
    if drop is None:
        drop = DropoutSpec(keep=0.8, mode="scaled")
    draws = num_draws if drop.mode == "sampled" else 1
    total = 0.0
    recon = None
    for _ in range(draws):
        recon = _dae_reconstruct(dae, mags, context, drop)
        total += float(np.sum((mags - recon) ** 2))
    output.dae_recon = np.maximum(recon, 0.0)
    return total / (draws * mags.shape[0])


def snr_score(enhanced: Waveform, recon: Waveform) -> float:
    """Time-domain agreement between a module output and its DAE
    resynthesis: 10 log10(sum s^2 / sum (s^ - s^^)^2), capped at +100 dB."""
    n = min(len(enhanced), len(recon))
    if n == 0:
        raise SelectionError("zero-length input")
    s = enhanced.samples[:n]
    r = recon.samples[:n]
    num = float(np.sum(s**2))
    den = float(np.sum((s - r) ** 2))
    if den < 1e-20:
        return 100.0
    return min(10.0 * np.log10(max(num, 1e-20) / den), 100.0)


def recon_waveform(output: ModuleOutput) -> Waveform:
    """DAE reconstruction magnitudes resynthesized with the phase of s^."""
    spec = output.enhanced_spec
    phase = np.exp(1j * np.angle(spec.frames))
    recon_spec = Spectrogram(output.dae_recon * phase, spec.frame_size,
                             spec.hop, spec.sample_rate, spec.length)
    return istft(recon_spec)


def score_module(dae: Network, output: ModuleOutput,
                 drop: DropoutSpec = None, num_draws: int = 1) -> ModuleScore:
    ae = ae_score(dae, output, drop, num_draws)
    snr_db = snr_score(output.enhanced_wave, recon_waveform(output))
    return ModuleScore(output.module_id, ae, snr_db)


def oracle_select(outputs, reference: Waveform) -> str:
    """Module id whose output maximizes SDR against the clean reference."""
    if reference is None:
        raise SelectionError("oracle selection needs a reference")
    sdrs = [sdr(o.enhanced_wave, reference) for o in outputs]
    return outputs[int(np.argmax(sdrs))].module_id


def select(modules: dict, dae: Network, mixture: Spectrogram, context: int,
           metric: str = "ae", seed: int = 0, reference: Waveform | None = None,
           drop: DropoutSpec = None, num_draws: int = 1, threads: int = 1,
           utterance: str | None = None):
    """Full fan-out/arbitrate pass over a set of modules.

    `modules` maps module id -> Network. Returns (SelectionReport,
    outputs) with outputs keyed like `modules`. Ties break toward the
    earliest module; the chance baseline is a seeded uniform draw.
    """
    if not modules:
        raise SelectionError("no modules given")
    if metric not in ("ae", "snr"):
        raise SelectionError(f"unknown selection metric {metric!r}")

    ids = list(modules)

    def run_one(mid):
        spec, wave = enhance_with_module(modules[mid], mixture, context)
        out = ModuleOutput(mid, spec, wave)
        return out, score_module(dae, out, drop, num_draws)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_one, ids))
    else:
        results = [run_one(mid) for mid in ids]
    outputs = {mid: r[0] for mid, r in zip(ids, results)}
    scores = [r[1] for r in results]

    if metric == "ae":
        best = int(np.argmin([s.ae_error for s in scores]))
    else:
        best = int(np.argmax([s.snr_db for s in scores]))

    chance = ids[int(np.random.default_rng(seed).integers(len(ids)))]
    oracle = oracle_select(list(outputs.values()), reference) \
        if reference is not None else None
    report = SelectionReport(scores=scores, chosen=ids[best], metric_used=metric,
                             chance=chance, oracle=oracle, seed=seed,
                             utterance=utterance)
    return report, outputs
