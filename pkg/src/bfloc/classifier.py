"""Multi-label building/floor/location classifier built on the pretrained
encoder.

The network is the autoencoder's encoder half followed by a fresh classifier
head (64 and 128 ReLU units with dropout, then a sigmoid output as wide as
the label codec). Training minimizes binary cross-entropy against the
concatenated one-hot segments; each output unit is its own detector, which
is what lets one network answer building, floor and location at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dataset import (
    DEFAULT_CEIL_DBM,
    DEFAULT_FLOOR_DBM,
    HierarchicalLabel,
    NormalizedSample,
)
from .errors import FormatError
from .labels import LabelCodec
from .neuralnet import (
    AdamParams,
    DenseNetwork,
    Layer,
    glorot_uniform,
    load_network,
    save_network,
    train_network,
)
from .sae import DEFAULT_HIDDEN, encoder_layers, train_autoencoder

DEFAULT_HEAD = (64, 128)
DEFAULT_DROPOUT = 0.20


def build_classifier(
    encoder: list[Layer],
    output_width: int,
    head_hidden: tuple[int, ...],
    rng: np.random.Generator,
) -> DenseNetwork:
    """Stack the encoder, ReLU head layers, and a sigmoid output layer."""
    if output_width < 1:
        raise ValueError("output_width must be positive")
    if any(h < 1 for h in head_hidden):
        raise ValueError("head sizes must be positive")
    layers = [Layer(l.weights.copy(), l.bias.copy(), l.activation) for l in encoder]
    width = layers[-1].out_dim if layers else 0
    if width == 0:
        raise ValueError("encoder must contain at least one layer")
    for h in head_hidden:
        layers.append(
            Layer(glorot_uniform(width, h, rng), np.zeros(h), "relu")
        )
        width = h
    layers.append(
        Layer(glorot_uniform(width, output_width, rng), np.zeros(output_width), "sigmoid")
    )
    return DenseNetwork(layers)


@dataclass
class FitReport:
    sae_history: list[float]  # reconstruction MSE per pretraining epoch
    train_history: list[float]  # BCE per fine-tuning epoch
    holdout_history: list[float]  # BCE on the inner holdout, empty if none
    n_fit: int
    n_holdout: int
    freeze_encoder: bool


class FingerprintClassifier:
    """A trained network bundled with its label codec and feature scaling."""

    def __init__(
        self,
        net: DenseNetwork,
        codec: LabelCodec,
        floor_dbm: float = DEFAULT_FLOOR_DBM,
        ceil_dbm: float = DEFAULT_CEIL_DBM,
    ):
        if net.out_dim != codec.output_width:
            raise ValueError(
                f"network output width {net.out_dim} != codec width "
                f"{codec.output_width}"
            )
        self.net = net
        self.codec = codec
        self.floor_dbm = floor_dbm
        self.ceil_dbm = ceil_dbm

    def predict_scores(self, features: np.ndarray) -> np.ndarray:
        """Per-unit sigmoid scores, shape (n, output_width)."""
        return np.atleast_2d(self.net.forward(np.asarray(features, dtype=np.float64)))

    def predict_labels(self, features: np.ndarray) -> list[HierarchicalLabel]:
        return [self.codec.decode(row) for row in self.predict_scores(features)]

    def save(self, path, extra_meta: dict[str, str] | None = None) -> None:
        meta = {
            "role": "classifier",
            "codec": self.codec.to_text(),
            "floor_dbm": repr(self.floor_dbm),
            "ceil_dbm": repr(self.ceil_dbm),
        }
        if extra_meta:
            for key in ("role", "codec", "floor_dbm", "ceil_dbm"):
                if key in extra_meta:
                    raise ValueError(f"extra_meta may not override {key!r}")
            meta.update(extra_meta)
        save_network(path, self.net, meta)

    @classmethod
    def load(cls, path) -> tuple["FingerprintClassifier", dict[str, str]]:
        net, meta = load_network(path)
        role = meta.get("role")
        if role != "classifier":
            raise FormatError(f"{path}: container role {role!r} is not 'classifier'")
        for key in ("codec", "floor_dbm", "ceil_dbm"):
            if key not in meta:
                raise FormatError(f"{path}: metadata lacks {key!r}")
        codec = LabelCodec.from_text(meta["codec"])
        try:
            floor_dbm = float(meta["floor_dbm"])
            ceil_dbm = float(meta["ceil_dbm"])
        except ValueError:
            raise FormatError(f"{path}: non-numeric normalization bounds") from None
        return cls(net, codec, floor_dbm, ceil_dbm), meta


def fit_classifier(
    samples: list[NormalizedSample],
    codec: LabelCodec,
    *,
    seed: int,
    epochs: int = 20,
    batch_size: int = 10,
    validation_fraction: float = 0.10,
    hidden: tuple[int, ...] = DEFAULT_HIDDEN,
    head_hidden: tuple[int, ...] = DEFAULT_HEAD,
    dropout: float = DEFAULT_DROPOUT,
    freeze_encoder: bool = False,
    adam: AdamParams = AdamParams(),
    floor_dbm: float = DEFAULT_FLOOR_DBM,
    ceil_dbm: float = DEFAULT_CEIL_DBM,
    on_progress: Callable[[str, int, float], None] | None = None,
) -> tuple[FingerprintClassifier, FitReport]:
    """Pretrain the autoencoder, then fine-tune encoder plus head.

    An inner holdout of validation_fraction of the samples is split off
    first (so the weights see 1 - validation_fraction of the data) and its
    cross-entropy is recorded per fine-tuning epoch. All randomness
    (holdout split, weight init, batch shuffling, dropout) derives from
    `seed`, so identical inputs give identical weights.
    """
    if not samples:
        raise ValueError("cannot fit on no samples")
    if not 0.0 <= validation_fraction < 1.0:
        raise ValueError(
            f"validation_fraction must be in [0, 1), got {validation_fraction}"
        )
    if not 0.0 <= dropout < 1.0:
        raise ValueError(f"dropout must be in [0, 1), got {dropout}")

    streams = np.random.SeedSequence(seed).spawn(6)
    holdout_rng, sae_init, sae_shuffle, head_init, clf_shuffle, dropout_rng = (
        np.random.default_rng(s) for s in streams
    )

    features = np.stack([s.features for s in samples])
    targets = codec.encode_batch([s.label for s in samples])
    n = len(samples)
    n_fit = int(round((1.0 - validation_fraction) * n))
    if n_fit < 1:
        raise ValueError("validation_fraction leaves no samples to fit on")
    order = holdout_rng.permutation(n)
    fit_idx, holdout_idx = order[:n_fit], order[n_fit:]
    x_fit, y_fit = features[fit_idx], targets[fit_idx]
    x_hold, y_hold = features[holdout_idx], targets[holdout_idx]

    autoencoder, sae_history = train_autoencoder(
        x_fit,
        hidden=hidden,
        epochs=epochs,
        batch_size=batch_size,
        init_rng=sae_init,
        shuffle_rng=sae_shuffle,
        adam=adam,
    )
    if on_progress is not None:
        for i, value in enumerate(sae_history):
            on_progress("autoencoder", i + 1, value)

    encoder = encoder_layers(autoencoder, len(hidden))
    net = build_classifier(encoder, codec.output_width, head_hidden, head_init)
    dropout_map = (
        {len(encoder) + i: dropout for i in range(len(head_hidden))} if dropout else None
    )
    trainable = (
        list(range(len(encoder), len(net.layers))) if freeze_encoder else None
    )

    holdout_history: list[float] = []

    def track(epoch: int, train_loss: float) -> None:
        if len(holdout_idx):
            holdout_history.append(net.loss(x_hold, y_hold, "bce"))
        if on_progress is not None:
            on_progress("classifier", epoch, train_loss)

    train_history = train_network(
        net,
        x_fit,
        y_fit,
        loss="bce",
        epochs=epochs,
        batch_size=batch_size,
        shuffle_rng=clf_shuffle,
        dropout=dropout_map,
        dropout_rng=dropout_rng,
        adam=adam,
        trainable=trainable,
        on_epoch=track,
    )

    model = FingerprintClassifier(net, codec, floor_dbm, ceil_dbm)
    report = FitReport(
        sae_history=sae_history,
        train_history=train_history,
        holdout_history=holdout_history,
        n_fit=int(n_fit),
        n_holdout=int(n - n_fit),
        freeze_encoder=freeze_encoder,
    )
    return model, report
