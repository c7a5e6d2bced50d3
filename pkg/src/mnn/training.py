"""Mask targets, dataset assembly, and Rprop training.

The optimizer is the iRprop- variant: a sign flip shrinks the step and
zeroes the offending gradient component for that update, with no weight
revert. Default hyperparameters: backtracking 0.5, acceleration 1.5,
step bounds [1e-7, 1e-1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import Spectrogram, Waveform, concat_context, magnitude, stft
from .data import mix_at_snr
from .network import DROPOUT_OFF, DropoutSpec, Network, backprop

MASK_EPS = 1e-10


class TrainingError(RuntimeError):
    """Raised when optimization produces non-finite values."""


@dataclass
class RpropConfig:
    eta_minus: float = 0.5
    eta_plus: float = 1.5
    step_min: float = 1e-7
    step_max: float = 1e-1
    initial_step: float = 1e-3
    iterations: int = 5000
    batch_size: int = 1000

    def __post_init__(self):
        if not 0.0 < self.eta_minus < 1.0 < self.eta_plus:
            raise ValueError("need 0 < eta_minus < 1 < eta_plus")
        if not 0.0 < self.step_min < self.step_max:
            raise ValueError("need 0 < step_min < step_max")


@dataclass
class RpropState:
    """Per-weight step sizes and previous gradient signs."""

    steps: list
    prev_sign: list

    @classmethod
    def for_network(cls, net: Network, cfg: RpropConfig) -> "RpropState":
        steps = [np.full_like(l.weight, cfg.initial_step) for l in net.layers]
        signs = [np.zeros_like(l.weight) for l in net.layers]
        return cls(steps, signs)


@dataclass
class TrainingSet:
    """Paired input/target rows; row i is one training pair."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError("inputs and targets must pair up row-wise")

    def __len__(self):
        return self.inputs.shape[0]


def mask_targets(clean: Spectrogram, mixture: Spectrogram) -> np.ndarray:
    """Magnitude-ratio soft mask |s|/|x|, clipped to [0, 1].

    Bins where the mixture is essentially silent get mask 0.
    """
    if clean.frames.shape != mixture.frames.shape:
        raise ValueError("clean and mixture spectrogram shapes differ")
    s = np.abs(clean.frames)
    x = np.abs(mixture.frames)
    mask = np.zeros_like(s)
    live = x >= MASK_EPS
    mask[live] = np.clip(s[live] / x[live], 0.0, 1.0)
    return mask


def build_denoiser_dataset(pairs, frame_size: int, hop: int, context: int) -> TrainingSet:
    """Training pairs for a mask-estimating denoiser module.

    `pairs` is a list of (clean Waveform, noise Waveform, snr_db); each
    utterance is mixed at its SNR, inputs are context-concatenated mixture
    magnitudes and targets are center-frame soft masks.
    """
    if not pairs:
        raise ValueError("no training utterances given")
    inputs, targets = [], []
    for clean, noise, snr_db in pairs:
        if np.sum(noise.samples**2) <= 0.0:
            mixture = clean  # silent noise track: the mixture is the clean signal
        else:
            mixture, _ = mix_at_snr(clean, noise, snr_db)
        S = stft(clean, frame_size, hop)
        X = stft(mixture, frame_size, hop)
        inputs.append(concat_context(magnitude(X), context))
        targets.append(mask_targets(S, X))
    return TrainingSet(np.concatenate(inputs), np.concatenate(targets))


def build_dae_dataset(cleans, frame_size: int, hop: int, context: int) -> TrainingSet:
    """Autoencoder pairs: clean magnitudes in, clean center frame out.

    Corruption is applied at train time through dropout, not baked in here.
    """
    if not cleans:
        raise ValueError("no clean utterances given")
    inputs, targets = [], []
    for clean in cleans:
        mag = magnitude(stft(clean, frame_size, hop))
        inputs.append(concat_context(mag, context))
        targets.append(mag.frames)
    return TrainingSet(np.concatenate(inputs), np.concatenate(targets))


def rprop_step(state: RpropState, grads, net: Network, cfg: RpropConfig) -> None:
    """One iRprop- update in place on the network and optimizer state."""
    for step, prev, grad, layer in zip(state.steps, state.prev_sign, grads, net.layers):
        if not np.all(np.isfinite(grad)):
            raise TrainingError("non-finite gradient, aborting")
        sign = np.sign(grad)
        same = prev * sign > 0
        flip = prev * sign < 0
        step[same] = np.minimum(step[same] * cfg.eta_plus, cfg.step_max)
        step[flip] = np.maximum(step[flip] * cfg.eta_minus, cfg.step_min)
        sign[flip] = 0.0
        layer.weight -= sign * step
        prev[...] = sign


def train(net: Network, data: TrainingSet, cfg: RpropConfig,
          drop: DropoutSpec = DROPOUT_OFF, seed: int = 0):
    """Batch Rprop training loop.

    Each iteration consumes the next `batch_size` rows of a seeded
    per-epoch shuffle (wrapping around into a fresh shuffle), applies one
    Rprop update on the summed batch gradient, and records the mean
    per-pair loss. Fully deterministic for a fixed (seed, data, config).
    """
    if len(data) == 0:
        raise ValueError("empty training set")
    if data.inputs.shape[1] != net.input_dim or data.targets.shape[1] != net.output_dim:
        raise TrainingError(
            f"dataset dims {data.inputs.shape[1]}->{data.targets.shape[1]} do not "
            f"match network {net.input_dim}->{net.output_dim}"
        )

    rng = np.random.default_rng(seed)
    state = RpropState.for_network(net, cfg)
    order = rng.permutation(len(data))
    cursor = 0
    losses = np.empty(cfg.iterations)

    for it in range(cfg.iterations):
        take = min(cfg.batch_size, len(data))
        if cursor + take > len(order):
            order = rng.permutation(len(data))
            cursor = 0
        batch = order[cursor : cursor + take]
        cursor += take

        loss, grads = backprop(
            net, data.inputs[batch], data.targets[batch], drop, rng=rng
        )
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at iteration {it}")
        rprop_step(state, grads, net, cfg)
        losses[it] = loss / take
    return net, losses


def write_loss_curve(path, losses) -> None:
    """Emit the per-iteration mean loss as a two-column CSV."""
    with open(path, "w") as f:
        f.write("iteration,mean_loss\n")
        for i, v in enumerate(losses):
            f.write(f"{i},{v!r}\n")
