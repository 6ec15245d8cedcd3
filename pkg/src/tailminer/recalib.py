"""Recalibration layer: a fresh final layer fit with focal loss on frozen features.

The backbone's own final layer is discarded. A new identity-activated layer
maps penultimate activations to calibrated logits ``z`` and is trained with
inverse-frequency-weighted focal loss plus early stopping on a stratified
holdout of Train.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from tailminer.backbone import BackboneModel, penultimate
from tailminer.data import ClassCatalog, Dataset, Example, compute_catalog
from tailminer.errors import ConfigError, InvalidInputError
from tailminer.nn import (
    Activation,
    EarlyStoppingConfig,
    FocalLossConfig,
    Loss,
    Network,
    TrainConfig,
    fit,
)

DEFAULT_GAMMA = 2.0


def default_config(seed: int = 0) -> TrainConfig:
    return TrainConfig(
        learning_rate=0.5, epochs=50, batch_size=64, seed=seed,
        early_stopping=EarlyStoppingConfig(patience=3, min_delta=1e-4, validation_fraction=0.1),
    )


@dataclass(frozen=True)
class RCReport:
    epochs_run: int
    best_epoch: int | None
    val_losses: tuple[float, ...]
    train_losses: tuple[float, ...]

    def as_dict(self) -> dict:
        return {
            "epochs_run": self.epochs_run,
            "best_epoch": self.best_epoch,
            "val_losses": list(self.val_losses),
            "train_losses": list(self.train_losses),
        }


@dataclass(frozen=True, eq=False)
class RecalibrationLayer:
    network: Network  # single identity layer, H -> C
    focal_cfg: FocalLossConfig
    report: RCReport | None = None

    def __post_init__(self):
        if self.network.n_layers != 1:
            raise InvalidInputError("the recalibration layer is a single dense layer")

    @property
    def layer(self):
        return self.network.layers[0]

    @classmethod
    def from_layer(cls, layer, focal_cfg: FocalLossConfig | None = None) -> "RecalibrationLayer":
        return cls(Network.from_layers([layer]), focal_cfg or FocalLossConfig(DEFAULT_GAMMA))


@dataclass(frozen=True, eq=False)
class CalibratedLogits:
    example_id: int
    z: np.ndarray


def inverse_frequency_alphas(catalog: ClassCatalog) -> np.ndarray:
    """alpha_k proportional to 1/count_k, scaled so the largest is 1."""
    counts = np.asarray(catalog.counts, dtype=np.float64)
    if (counts <= 0).any():
        zero = [int(k) for k in np.flatnonzero(counts <= 0)]
        raise InvalidInputError(f"classes {zero} have no examples; drop or smooth them first")
    return counts.min() / counts


def stratified_holdout(labels: np.ndarray, fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Split row indices into (fit, holdout); every class with >= 2 rows lands in both."""
    fit_idx, hold_idx = [], []
    for k in np.unique(labels):
        idx = np.flatnonzero(labels == k)
        idx = idx[rng.permutation(idx.size)]
        m = int(np.floor(fraction * idx.size + 0.5))
        if idx.size >= 2:
            m = min(max(m, 1), idx.size - 1)
        else:
            m = 0
        hold_idx.append(idx[:m])
        fit_idx.append(idx[m:])
    return np.sort(np.concatenate(fit_idx)), np.sort(np.concatenate(hold_idx))


def fit_rc_layer(
    backbone: BackboneModel,
    train: Dataset,
    cfg: TrainConfig | None = None,
    focal_cfg: FocalLossConfig | None = None,
) -> RecalibrationLayer:
    if not backbone.frozen:
        raise InvalidInputError("freeze the backbone before fitting a recalibration layer")
    cfg = cfg or default_config()
    es = cfg.early_stopping
    if es is None:
        raise ConfigError("recalibration requires an early_stopping configuration")
    if cfg.epochs < 1:
        raise ConfigError("recalibration epoch budget of 0 never reaches a validation evaluation")
    if len(train) == 0 or not train.is_labeled:
        raise InvalidInputError("recalibration needs a labelled Train split")

    C = backbone.num_classes
    if focal_cfg is None or not focal_cfg.alphas:
        alphas = inverse_frequency_alphas(compute_catalog(train))
        gamma = focal_cfg.gamma if focal_cfg is not None else DEFAULT_GAMMA
        focal_cfg = FocalLossConfig(gamma, tuple(alphas))
    focal_cfg.alpha_array(C)

    before = backbone.digest()
    H = penultimate(backbone, train.features)
    fit_idx, hold_idx = stratified_holdout(train.labels, es.validation_fraction,
                                           np.random.default_rng([cfg.seed, 2]))
    if hold_idx.size == 0:
        raise ConfigError("validation holdout is empty; increase validation_fraction")
    layer = Network.initialize([H.shape[1], C], [Activation.IDENTITY], np.random.default_rng([cfg.seed, 3]))
    result = fit(
        layer,
        H[fit_idx],
        train.labels[fit_idx],
        Loss.focal_loss(focal_cfg),
        cfg,
        validation=(H[hold_idx], train.labels[hold_idx]),
    )
    if backbone.digest() != before:  # pragma: no cover - guards the frozen contract
        raise RuntimeError("backbone parameters changed during recalibration")
    report = RCReport(result.epochs_run, result.best_epoch, tuple(result.val_losses),
                      tuple(result.train_losses))
    return RecalibrationLayer(result.network, focal_cfg, report)


def calibrated_logit_matrix(backbone: BackboneModel, rc: RecalibrationLayer, X) -> np.ndarray:
    H = penultimate(backbone, np.atleast_2d(np.asarray(X, dtype=np.float64)))
    if H.shape[1] != rc.network.n_in:
        raise InvalidInputError(
            f"recalibration layer expects {rc.network.n_in} inputs, backbone gives {H.shape[1]}"
        )
    return rc.network(H)


def calibrated_logits(
    backbone: BackboneModel,
    rc: RecalibrationLayer,
    xs: Sequence[Example] | Dataset,
) -> list[CalibratedLogits]:
    xs = list(xs)
    if not xs:
        return []
    Z = calibrated_logit_matrix(backbone, rc, np.stack([x.features for x in xs]))
    return [CalibratedLogits(x.id, z) for x, z in zip(xs, Z)]
