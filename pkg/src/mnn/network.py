"""Dense feedforward network engine: storage, feedforward, backprop, model files.

Weights live in float64 in memory but only hold float32-representable values
(initialization rounds through float32, and the model file stores float32),
so a save/load round trip reproduces feedforward output bitwise.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("modified-relu", "logistic", "identity")
_ACT_TAGS = {name: i for i, name in enumerate(ACTIVATIONS)}
RELU_LEAK = 0.01

MODEL_MAGIC = b"MNN1"
MODEL_FORMAT_VERSION = "MNN1"


class NetworkError(ValueError):
    """Raised for dimension mismatches and invalid network definitions."""


class ModelFormatError(ValueError):
    """Raised when a model file is malformed or fails its CRC."""


def _activate(a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "modified-relu":
        return np.where(a > 0, a, RELU_LEAK * a)
    if kind == "logistic":
        return 1.0 / (1.0 + np.exp(-a))
    if kind == "identity":
        return a
    raise NetworkError(f"unknown activation {kind!r}")


def _activate_deriv(a: np.ndarray, z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "modified-relu":
        return np.where(a > 0, 1.0, RELU_LEAK)
    if kind == "logistic":
        return z * (1.0 - z)
    if kind == "identity":
        return np.ones_like(a)
    raise NetworkError(f"unknown activation {kind!r}")


@dataclass
class Layer:
    """One weight layer: (out, in+1) matrix with the bias as last column."""

    weight: np.ndarray
    activation: str

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        if self.weight.ndim != 2:
            raise NetworkError("layer weight must be a matrix")
        if self.activation not in ACTIVATIONS:
            raise NetworkError(f"unknown activation {self.activation!r}")
        if not np.all(np.isfinite(self.weight)):
            raise NetworkError("layer weight contains non-finite values")


@dataclass
class Network:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise NetworkError("network needs at least one layer")
        for lo, hi in zip(self.layers, self.layers[1:]):
            if hi.weight.shape[1] - 1 != lo.weight.shape[0]:
                raise NetworkError(
                    f"layer dims do not chain: {lo.weight.shape} -> {hi.weight.shape}"
                )

    @property
    def input_dim(self):
        return self.layers[0].weight.shape[1] - 1

    @property
    def output_dim(self):
        return self.layers[-1].weight.shape[0]

    @property
    def dims(self):
        return [self.input_dim] + [l.weight.shape[0] for l in self.layers]


@dataclass
class DropoutSpec:
    """Per-layer Bernoulli keep probabilities and how to apply them.

    `keep` may be a scalar (shared by all weight layers) or one value per
    weight layer; the mask multiplies that layer's input. Modes: `sampled`
    draws fresh masks per call from this spec's seed stream, `scaled`
    multiplies inputs by the keep probability instead, `off` disables.
    """

    keep: float | tuple = 1.0
    mode: str = "off"
    seed: int = 0
    _rng: np.random.Generator | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.mode not in ("sampled", "scaled", "off"):
            raise NetworkError(f"unknown dropout mode {self.mode!r}")
        keeps = self.keep if isinstance(self.keep, (tuple, list)) else (self.keep,)
        for p in keeps:
            if not 0.0 < p <= 1.0:
                raise NetworkError("keep probability must be in (0, 1]")

    def keep_for_layer(self, layer_index: int) -> float:
        if isinstance(self.keep, (tuple, list)):
            return self.keep[layer_index]
        return self.keep

    def stream(self) -> np.random.Generator:
        if self._rng is None:
            self._rng = np.random.default_rng(self.seed)
        return self._rng


DROPOUT_OFF = DropoutSpec()


@dataclass
class FeedTrace:
    """Per-layer intermediates from a forward pass, reused by backprop."""

    inputs: list  # masked/scaled input of each weight layer
    pre: list  # pre-activation of each weight layer
    post: list  # post-activation of each weight layer
    masks: list  # dropout mask per layer, or None


def draw_masks(net: Network, batch_shape, drop: DropoutSpec, rng=None) -> list:
    """Sample Bernoulli keep masks for every weight-layer input."""
    if rng is None:
        rng = drop.stream()
    masks = []
    for i, layer in enumerate(net.layers):
        p = drop.keep_for_layer(i)
        dim = layer.weight.shape[1] - 1
        shape = batch_shape + (dim,) if batch_shape else (dim,)
        masks.append((rng.random(shape) < p).astype(np.float64))
    return masks


def feedforward(net: Network, x: np.ndarray, drop: DropoutSpec = DROPOUT_OFF,
                masks: list | None = None, rng=None):
    """Run the network on a vector or a (B, K) batch of rows.

    Returns (output, trace). In `sampled` mode masks are drawn per call
    unless given explicitly; in `scaled` mode layer inputs are multiplied
    by the keep probability (the deterministic expectation of sampling).
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != net.input_dim:
        raise NetworkError(f"input dim {x.shape[1]} != network dim {net.input_dim}")

    if drop.mode == "sampled" and masks is None:
        masks = draw_masks(net, (x.shape[0],), drop, rng)

    z = x
    trace = FeedTrace([], [], [], [])
    for i, layer in enumerate(net.layers):
        if drop.mode == "sampled":
            zin = z * masks[i]
            trace.masks.append(masks[i])
        elif drop.mode == "scaled":
            zin = z * drop.keep_for_layer(i)
            trace.masks.append(None)
        else:
            zin = z
            trace.masks.append(None)
        a = zin @ layer.weight[:, :-1].T + layer.weight[:, -1]
        z = _activate(a, layer.activation)
        trace.inputs.append(zin)
        trace.pre.append(a)
        trace.post.append(z)

    out = z[0] if squeeze else z
    return out, trace


def backprop(net: Network, x: np.ndarray, target: np.ndarray,
             drop: DropoutSpec = DROPOUT_OFF, masks: list | None = None, rng=None):
    """Sum-of-squared-errors loss and its exact weight gradients.

    For a batch, loss and gradients are summed over the rows. The dropout
    masks realized in the forward pass are reused on the way back.
    """
    x = np.asarray(x, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    batched = x.ndim == 2
    out, trace = feedforward(net, x, drop, masks=masks, rng=rng)
    if out.shape != target.shape:
        raise NetworkError(f"target shape {target.shape} != output shape {out.shape}")

    out2 = out if batched else out[None, :]
    tgt2 = target if batched else target[None, :]
    diff = out2 - tgt2
    loss = float(np.sum(diff * diff))

    grads = [None] * len(net.layers)
    delta = 2.0 * diff  # dE/d(output)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        da = delta * _activate_deriv(trace.pre[i], trace.post[i], layer.activation)
        zin = trace.inputs[i]
        g = np.empty_like(layer.weight)
        g[:, :-1] = da.T @ zin
        g[:, -1] = da.sum(axis=0)
        grads[i] = g
        if i > 0:
            delta = da @ layer.weight[:, :-1]
            if trace.masks[i] is not None:
                delta = delta * trace.masks[i]
            elif drop.mode == "scaled":
                delta = delta * drop.keep_for_layer(i)
    return loss, grads


def init_weights(dims, activations, seed: int) -> Network:
    """Seeded scaled-uniform initialization with variance 2/fan_in, zero biases."""
    if len(dims) < 2:
        raise NetworkError("need at least input and output dims")
    if len(activations) != len(dims) - 1:
        raise NetworkError("need one activation per weight layer")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(dims, dims[1:], activations):
        bound = np.sqrt(6.0 / fan_in)  # uniform with variance 2/fan_in
        w = np.zeros((fan_out, fan_in + 1))
        w[:, :-1] = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        # round through float32 so the model file round-trips bitwise
        layers.append(Layer(w.astype(np.float32).astype(np.float64), act))
    return Network(layers)


def save_network(net: Network, path) -> None:
    """Serialize to the MNN1 model format (little-endian, CRC-checked)."""
    parts = [struct.pack("<I", len(net.layers))]
    for layer in net.layers:
        rows, cols = layer.weight.shape
        parts.append(struct.pack("<IIB", rows, cols, _ACT_TAGS[layer.activation]))
        parts.append(layer.weight.astype("<f4").tobytes(order="C"))
    payload = b"".join(parts)
    blob = MODEL_MAGIC + payload + struct.pack("<I", zlib.crc32(payload))

    import os
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(blob)
    os.replace(tmp, path)


def load_network(path) -> Network:
    """Load an MNN1 model file, rejecting bad magic or CRC."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 12 or blob[:4] != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: not an MNN1 model file")
    payload, (crc,) = blob[4:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) != crc:
        raise ModelFormatError(f"{path}: CRC mismatch, file corrupted")

    off = 0

    def take(n):
        nonlocal off
        if off + n > len(payload):
            raise ModelFormatError(f"{path}: truncated payload")
        chunk = payload[off : off + n]
        off += n
        return chunk

    (layer_count,) = struct.unpack("<I", take(4))
    layers = []
    for _ in range(layer_count):
        rows, cols, tag = struct.unpack("<IIB", take(9))
        if tag >= len(ACTIVATIONS):
            raise ModelFormatError(f"{path}: unknown activation tag {tag}")
        w = np.frombuffer(take(rows * cols * 4), dtype="<f4").reshape(rows, cols)
        layers.append(Layer(w.astype(np.float64), ACTIVATIONS[tag]))
    if off != len(payload):
        raise ModelFormatError(f"{path}: trailing bytes in payload")
    return Network(layers)
