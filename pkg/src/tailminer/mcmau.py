"""Minority-class mining autoencoder over calibrated logit vectors.

Trained on Train-split logits, which are dominated by head classes, so
head-class activation patterns reconstruct well and tail patterns do not.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from tailminer.errors import ConfigError, InvalidInputError
from tailminer.nn import Activation, DenseLayer, Loss, Network, TrainConfig, fit

log = logging.getLogger(__name__)

DEFAULT_ENCODER = (10, 9)


def default_config(seed: int = 0) -> TrainConfig:
    return TrainConfig(learning_rate=1e-3, epochs=30, batch_size=64, seed=seed)


@dataclass(frozen=True, eq=False)
class AutoencoderModel:
    """Encoder and decoder stored as one network, split after ``n_encoder`` layers."""

    network: Network
    n_encoder: int
    final_loss: float | None = None

    def __post_init__(self):
        if not 0 < self.n_encoder < self.network.n_layers:
            raise InvalidInputError("autoencoder needs at least one encoder and one decoder layer")
        if self.network.n_in != self.network.n_out:
            raise InvalidInputError("decoder output must match encoder input dimension")

    @classmethod
    def from_layers(cls, encoder: Sequence[DenseLayer], decoder: Sequence[DenseLayer]) -> "AutoencoderModel":
        return cls(Network.from_layers([*encoder, *decoder]), len(encoder))

    @property
    def num_classes(self) -> int:
        return self.network.n_in

    @property
    def latent_dim(self) -> int:
        return self.network.dims[self.n_encoder]

    @property
    def encoder(self) -> list[DenseLayer]:
        return self.network.layers[: self.n_encoder]

    @property
    def decoder(self) -> list[DenseLayer]:
        return self.network.layers[self.n_encoder:]

    def encode(self, Z) -> np.ndarray:
        return self.network.truncated(self.n_encoder)(Z)

    def reconstruct_batch(self, Z) -> np.ndarray:
        return self.network(Z)

    def digest(self) -> str:
        return self.network.digest()


def resolve_encoder_dims(num_classes: int, encoder: Sequence[int] | None) -> tuple[int, ...]:
    """Encoder hidden sizes; the last one is the latent width and must be < C."""
    if encoder is not None:
        dims = tuple(int(d) for d in encoder)
        if not dims or min(dims) < 1:
            raise ConfigError(f"invalid encoder dims {dims}")
        if dims[-1] >= num_classes:
            raise ConfigError(f"latent width {dims[-1]} must be smaller than {num_classes} classes")
        return dims
    dims = DEFAULT_ENCODER
    if dims[-1] < num_classes:
        return dims
    if num_classes < 2:
        raise ConfigError("an autoencoder bottleneck needs at least 2 classes")
    latent = num_classes - 1
    dims = (num_classes, latent)
    log.warning("C=%d too small for default encoder %s; using %s", num_classes, DEFAULT_ENCODER, dims)
    return dims


def fit_autoencoder(
    logits,
    encoder: Sequence[int] | None = None,
    cfg: TrainConfig | None = None,
) -> AutoencoderModel:
    """Fit on raw logit vectors with a sum-of-squares reconstruction objective.

    ``logits`` is an (n, C) array or a sequence of objects with a ``z`` field.
    The decoder mirrors the encoder with ReLU hidden units and an identity
    output, so reconstructions may take any sign.
    """
    cfg = cfg or default_config()
    Z = _as_matrix(logits)
    if Z.shape[0] == 0:
        raise InvalidInputError("no logits to fit")
    C = Z.shape[1]
    enc = resolve_encoder_dims(C, encoder)
    dec = tuple(reversed(enc[:-1]))
    dims = [C, *enc, *dec, C]
    acts = [Activation.RELU] * (len(dims) - 2) + [Activation.IDENTITY]
    net = Network.initialize(dims, acts, np.random.default_rng([cfg.seed, 4]))
    result = fit(net, Z, Z, Loss.mse(), cfg, rng=np.random.default_rng([cfg.seed, 5]))
    model = AutoencoderModel(result.network, len(enc))
    final = float(reconstruction_errors(model, Z).mean())
    return AutoencoderModel(result.network, len(enc), final)


def _as_matrix(logits) -> np.ndarray:
    if isinstance(logits, np.ndarray):
        Z = logits
    else:
        items = list(logits)
        if not items:
            return np.zeros((0, 0))
        Z = np.stack([getattr(item, "z", item) for item in items])
    Z = np.ascontiguousarray(Z, dtype=np.float64)
    if Z.ndim != 2:
        raise InvalidInputError("logits must form an (n, C) matrix")
    return Z


def reconstruct(model: AutoencoderModel, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != model.num_classes:
        raise InvalidInputError(f"expected logits of length {model.num_classes}, got {z.shape[-1]}")
    out = model.network(z)
    return out[0] if z.ndim == 1 else out


def reconstruction_errors(model: AutoencoderModel, Z) -> np.ndarray:
    """Per-row sum of squared reconstruction differences on raw logits."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    diff = Z - model.network(Z)
    return (diff * diff).sum(axis=1)
