"""Stacked-autoencoder pretraining for the RSS feature space.

The autoencoder is symmetric around its bottleneck (520-256-128-256-520 at
default sizes), trained to reconstruct the normalized RSS vectors with MSE.
After training, the encoder half is cut off and becomes the front of the
classifier, so the dense layers that meet the classifier head start from a
compressed representation of the radio environment rather than from noise.
"""

from __future__ import annotations

import numpy as np

from .neuralnet import AdamParams, DenseNetwork, Layer, train_network

DEFAULT_HIDDEN = (256, 128)


def build_autoencoder(
    input_dim: int,
    hidden: tuple[int, ...],
    rng: np.random.Generator,
) -> DenseNetwork:
    """Mirror the hidden sizes around the bottleneck.

    Hidden layers are ReLU; the reconstruction layer is a sigmoid, matching
    the [0, 1] range of the normalized inputs.
    """
    if input_dim < 1:
        raise ValueError("input_dim must be positive")
    if not hidden:
        raise ValueError("need at least one hidden size")
    if any(h < 1 for h in hidden):
        raise ValueError("hidden sizes must be positive")
    sizes = [input_dim, *hidden, *hidden[-2::-1], input_dim]
    activations = ["relu"] * (len(sizes) - 2) + ["sigmoid"]
    return DenseNetwork.build(sizes, activations, rng)


def train_autoencoder(
    features: np.ndarray,
    *,
    hidden: tuple[int, ...] = DEFAULT_HIDDEN,
    epochs: int = 20,
    batch_size: int = 10,
    init_rng: np.random.Generator,
    shuffle_rng: np.random.Generator,
    adam: AdamParams = AdamParams(),
) -> tuple[DenseNetwork, list[float]]:
    """Train input -> input reconstruction; returns (net, per-epoch MSE)."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError("features must be a 2-D batch")
    net = build_autoencoder(features.shape[1], hidden, init_rng)
    history = train_network(
        net,
        features,
        features,
        loss="mse",
        epochs=epochs,
        batch_size=batch_size,
        shuffle_rng=shuffle_rng,
        adam=adam,
    )
    return net, history


def encoder_layers(autoencoder: DenseNetwork, n_hidden: int) -> list[Layer]:
    """Copy the first n_hidden layers (the input -> bottleneck half)."""
    if not 1 <= n_hidden < len(autoencoder.layers):
        raise ValueError(
            f"n_hidden must be in [1, {len(autoencoder.layers) - 1}], got {n_hidden}"
        )
    return [
        Layer(layer.weights.copy(), layer.bias.copy(), layer.activation)
        for layer in autoencoder.layers[:n_hidden]
    ]


def encode(autoencoder: DenseNetwork, features: np.ndarray, n_hidden: int) -> np.ndarray:
    """Map features to their bottleneck representation."""
    return DenseNetwork(encoder_layers(autoencoder, n_hidden)).forward(
        np.asarray(features, dtype=np.float64)
    )
