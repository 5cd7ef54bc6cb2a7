"""Small dense-network engine: forward/backward passes, ADAM, and a binary
container for trained weights.

Everything runs in float64 numpy. Weights are stored (out_dim, in_dim) so a
forward step is ``x @ W.T + b``. Dropout is the inverted variant: surviving
activations are scaled by 1/(1-p) at train time and inference needs no
correction.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    DivergenceError,
    FormatError,
    TruncationError,
    VersionError,
)

NETWORK_MAGIC = b"BFLOCNN\n"
NETWORK_VERSION = 1

# Predicted probabilities are clamped into [eps, 1-eps] before the logs in
# the cross-entropy value, so saturated sigmoids cannot produce inf.
BCE_CLAMP = 1e-7

ACTIVATION_CODES = {"identity": 0, "relu": 1, "sigmoid": 2}
ACTIVATION_NAMES = {v: k for k, v in ACTIVATION_CODES.items()}


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _apply_activation(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return _sigmoid(z)
    if name == "identity":
        return z
    raise ValueError(f"unknown activation {name!r}")


def _activation_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """d activation / d z, given both pre-activation z and activation a."""
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "identity":
        return np.ones_like(z)
    raise ValueError(f"unknown activation {name!r}")


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform(-limit, limit) with limit = sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


@dataclass(eq=False)
class Layer:
    weights: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)
    activation: str

    def __post_init__(self):
        if self.activation not in ACTIVATION_CODES:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ValueError("weights must be (out, in) with matching bias")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


class DenseNetwork:
    """A plain stack of dense layers."""

    def __init__(self, layers: list[Layer]):
        if not layers:
            raise ValueError("a network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.in_dim != prev.out_dim:
                raise ValueError(
                    f"layer sizes do not chain: {prev.out_dim} -> {nxt.in_dim}"
                )
        self.layers = layers

    @classmethod
    def build(
        cls,
        sizes: list[int],
        activations: list[str],
        rng: np.random.Generator,
    ) -> "DenseNetwork":
        """Glorot-uniform weights, zero biases. sizes has one more entry
        than activations (input width first)."""
        if len(sizes) != len(activations) + 1:
            raise ValueError("need len(sizes) == len(activations) + 1")
        layers = [
            Layer(
                weights=glorot_uniform(sizes[i], sizes[i + 1], rng),
                bias=np.zeros(sizes[i + 1], dtype=np.float64),
                activation=activations[i],
            )
            for i in range(len(activations))
        ]
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def sizes(self) -> list[int]:
        return [self.in_dim] + [layer.out_dim for layer in self.layers]

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Inference pass (no dropout). Accepts one sample or a batch."""
        single = x.ndim == 1
        a = np.atleast_2d(np.asarray(x, dtype=np.float64))
        for layer in self.layers:
            a = _apply_activation(layer.activation, a @ layer.weights.T + layer.bias)
        return a[0] if single else a

    def _trace(
        self, x: np.ndarray, masks: dict[int, np.ndarray] | None
    ) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Forward pass keeping pre-activations; masks are dropout masks
        (already scaled) applied to the named layers' activations."""
        activations = [np.atleast_2d(np.asarray(x, dtype=np.float64))]
        zs = []
        for i, layer in enumerate(self.layers):
            z = activations[-1] @ layer.weights.T + layer.bias
            a = _apply_activation(layer.activation, z)
            if masks and i in masks:
                a = a * masks[i]
            zs.append(z)
            activations.append(a)
        return zs, activations

    def gradients(
        self,
        x: np.ndarray,
        target: np.ndarray,
        loss: str,
        masks: dict[int, np.ndarray] | None = None,
    ) -> tuple[float, list[tuple[np.ndarray, np.ndarray]]]:
        """One backprop pass; returns (loss value, [(dW, db) per layer])."""
        target = np.atleast_2d(np.asarray(target, dtype=np.float64))
        zs, activations = self._trace(x, masks)
        pred = activations[-1]
        if pred.shape != target.shape:
            raise ValueError(f"target shape {target.shape} != output {pred.shape}")
        scale = 1.0 / pred.size
        last = self.layers[-1]
        if loss == "mse":
            value = float(np.mean((pred - target) ** 2))
            delta = (
                2.0 * scale * (pred - target)
                * _activation_grad(last.activation, zs[-1], pred)
            )
        elif loss == "bce":
            if last.activation != "sigmoid":
                raise ValueError("bce loss expects a sigmoid output layer")
            clamped = np.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
            value = float(
                -np.mean(target * np.log(clamped) + (1.0 - target) * np.log1p(-clamped))
            )
            # exact gradient of mean BCE through the sigmoid
            delta = scale * (pred - target)
        else:
            raise ValueError(f"unknown loss {loss!r}")

        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            grads[i] = (delta.T @ activations[i], delta.sum(axis=0))
            if i > 0:
                delta = delta @ self.layers[i].weights
                if masks and (i - 1) in masks:
                    delta = delta * masks[i - 1]
                delta = delta * _activation_grad(
                    self.layers[i - 1].activation, zs[i - 1], activations[i]
                )
        return value, grads

    def loss(self, x: np.ndarray, target: np.ndarray, loss: str) -> float:
        """Loss value only (no dropout)."""
        pred = np.atleast_2d(self.forward(x))
        target = np.atleast_2d(np.asarray(target, dtype=np.float64))
        if loss == "mse":
            return float(np.mean((pred - target) ** 2))
        if loss == "bce":
            clamped = np.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
            return float(
                -np.mean(target * np.log(clamped) + (1.0 - target) * np.log1p(-clamped))
            )
        raise ValueError(f"unknown loss {loss!r}")


@dataclass(frozen=True)
class AdamParams:
    alpha: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    """ADAM with bias-corrected first and second moments.

    theta <- theta - alpha * m_hat / (sqrt(v_hat) + eps), with one shared
    step counter across all tracked parameters.
    """

    def __init__(self, params: AdamParams = AdamParams()):
        self.params = params
        self.t = 0
        self._m: dict[int, np.ndarray] = {}
        self._v: dict[int, np.ndarray] = {}

    def step(self, tensors: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """Update tensors in place. Identity of each tensor keys its state."""
        p = self.params
        self.t += 1
        bc1 = 1.0 - p.beta1**self.t
        bc2 = 1.0 - p.beta2**self.t
        for tensor, grad in zip(tensors, grads):
            key = id(tensor)
            m = self._m.setdefault(key, np.zeros_like(tensor))
            v = self._v.setdefault(key, np.zeros_like(tensor))
            m *= p.beta1
            m += (1.0 - p.beta1) * grad
            v *= p.beta2
            v += (1.0 - p.beta2) * grad**2
            tensor -= p.alpha * (m / bc1) / (np.sqrt(v / bc2) + p.eps)


def train_network(
    net: DenseNetwork,
    features: np.ndarray,
    targets: np.ndarray,
    *,
    loss: str,
    epochs: int,
    batch_size: int,
    shuffle_rng: np.random.Generator,
    dropout: dict[int, float] | None = None,
    dropout_rng: np.random.Generator | None = None,
    adam: AdamParams = AdamParams(),
    trainable: list[int] | None = None,
    on_epoch: Callable[[int, float], None] | None = None,
) -> list[float]:
    """Mini-batch ADAM training; returns the mean training loss per epoch.

    dropout maps layer index -> drop probability for that layer's output.
    trainable restricts updates to the listed layer indices (gradients are
    still propagated through frozen layers). Raises DivergenceError the
    moment a batch loss stops being finite.
    """
    features = np.asarray(features, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if features.ndim != 2 or targets.ndim != 2:
        raise ValueError("features and targets must be 2-D batches")
    if features.shape[0] != targets.shape[0]:
        raise ValueError("features and targets disagree on row count")
    if features.shape[0] == 0:
        raise ValueError("cannot train on an empty batch")
    if epochs < 1 or batch_size < 1:
        raise ValueError("epochs and batch_size must be positive")
    if dropout:
        if dropout_rng is None:
            raise ValueError("dropout requires a dropout_rng")
        for i, p in dropout.items():
            if not 0.0 <= p < 1.0:
                raise ValueError(f"dropout probability {p} for layer {i} not in [0, 1)")

    updated = list(range(len(net.layers))) if trainable is None else sorted(trainable)
    optimizer = Adam(adam)
    n = features.shape[0]
    history = []
    for epoch in range(epochs):
        order = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            batch = order[start : start + batch_size]
            x = features[batch]
            masks = None
            if dropout:
                masks = {
                    i: (dropout_rng.random((len(batch), net.layers[i].out_dim)) >= p)
                    / (1.0 - p)
                    for i, p in dropout.items()
                }
            value, grads = net.gradients(x, targets[batch], loss, masks)
            if not np.isfinite(value):
                raise DivergenceError(
                    f"non-finite {loss} loss at epoch {epoch + 1}, "
                    f"batch {start // batch_size + 1}"
                )
            tensors, tensor_grads = [], []
            for i in updated:
                tensors += [net.layers[i].weights, net.layers[i].bias]
                tensor_grads += list(grads[i])
            optimizer.step(tensors, tensor_grads)
            epoch_loss += value * len(batch)
        mean_loss = epoch_loss / n
        history.append(mean_loss)
        if on_epoch is not None:
            on_epoch(epoch + 1, mean_loss)
    return history


# --- binary model container ---------------------------------------------------
#
# Layout (little-endian, see docs/formats.md): magic $NETWORK_MAGIC, u32
# version, u32 n_layers, per layer (u32 in, u32 out, u8 activation code),
# a metadata dictionary (u32 n_entries, then per entry u32 key length, key
# bytes, u64 value length, value bytes; keys unique and sorted), then per
# layer the weights row-major float64 followed by the bias. Metadata keys
# are sorted so identical models serialize to identical bytes.


def save_network(path, net: DenseNetwork, meta: dict[str, str]) -> None:
    with open(path, "wb") as fh:
        fh.write(NETWORK_MAGIC)
        fh.write(struct.pack("<II", NETWORK_VERSION, len(net.layers)))
        for layer in net.layers:
            fh.write(
                struct.pack(
                    "<IIB", layer.in_dim, layer.out_dim,
                    ACTIVATION_CODES[layer.activation],
                )
            )
        fh.write(struct.pack("<I", len(meta)))
        for key in sorted(meta):
            kb = key.encode("utf-8")
            vb = meta[key].encode("utf-8")
            fh.write(struct.pack("<I", len(kb)))
            fh.write(kb)
            fh.write(struct.pack("<Q", len(vb)))
            fh.write(vb)
        for layer in net.layers:
            fh.write(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())


def load_network(path) -> tuple[DenseNetwork, dict[str, str]]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(NETWORK_MAGIC)] != NETWORK_MAGIC:
        raise FormatError(f"{path}: not a bfloc network container (bad magic)")
    offset = len(NETWORK_MAGIC)

    def take(n: int, what: str) -> bytes:
        nonlocal offset
        if len(data) < offset + n:
            raise TruncationError(f"{path}: truncated container ({what})")
        chunk = data[offset : offset + n]
        offset += n
        return chunk

    version, n_layers = struct.unpack("<II", take(8, "header"))
    if version != NETWORK_VERSION:
        raise VersionError(
            f"{path}: container version {version} is not supported "
            f"(expected {NETWORK_VERSION})"
        )
    if n_layers == 0:
        raise FormatError(f"{path}: container declares no layers")
    specs = []
    for i in range(n_layers):
        in_dim, out_dim, code = struct.unpack("<IIB", take(9, f"layer {i} spec"))
        if code not in ACTIVATION_NAMES:
            raise FormatError(f"{path}: layer {i} has unknown activation code {code}")
        specs.append((in_dim, out_dim, ACTIVATION_NAMES[code]))
    (n_meta,) = struct.unpack("<I", take(4, "metadata count"))
    meta = {}
    for _ in range(n_meta):
        (klen,) = struct.unpack("<I", take(4, "metadata key length"))
        key = take(klen, "metadata key").decode("utf-8")
        (vlen,) = struct.unpack("<Q", take(8, "metadata value length"))
        if key in meta:
            raise FormatError(f"{path}: duplicate metadata key {key!r}")
        meta[key] = take(vlen, f"metadata value for {key!r}").decode("utf-8")
    layers = []
    for in_dim, out_dim, activation in specs:
        w = np.frombuffer(
            take(8 * in_dim * out_dim, "weight block"), dtype="<f8"
        ).reshape(out_dim, in_dim)
        b = np.frombuffer(take(8 * out_dim, "bias block"), dtype="<f8")
        layers.append(Layer(w.copy(), b.copy(), activation))
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} unexpected trailing bytes")
    return DenseNetwork(layers), meta
