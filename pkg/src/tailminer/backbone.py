"""The biased base classifier and its penultimate-layer truncation."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from tailminer.data import Dataset, Example
from tailminer.errors import FrozenModelError, InvalidInputError
from tailminer.nn import Activation, Loss, Network, TrainConfig, fit

DEFAULT_ARCH = (32, 16)


def default_config(seed: int = 0) -> TrainConfig:
    return TrainConfig(learning_rate=0.5, epochs=20, batch_size=64, seed=seed)


@dataclass(frozen=True)
class TrainingReport:
    epochs_run: int
    train_losses: tuple[float, ...]
    train_accuracy: float

    def as_dict(self) -> dict:
        return {
            "epochs_run": self.epochs_run,
            "train_losses": list(self.train_losses),
            "train_accuracy": self.train_accuracy,
        }


@dataclass(frozen=True, eq=False)
class BackboneModel:
    """ReLU hidden stack followed by a C-way identity layer (logits)."""

    network: Network
    frozen: bool = False
    report: TrainingReport | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.network.n_layers < 1:
            raise InvalidInputError("backbone needs a classification layer")

    @property
    def num_classes(self) -> int:
        return self.network.n_out

    @property
    def penultimate_dim(self) -> int:
        return self.network.dims[-2]

    @property
    def input_dim(self) -> int:
        return self.network.n_in

    def logits(self, X) -> np.ndarray:
        return self.network(X)

    def predict(self, X) -> np.ndarray:
        return self.logits(X).argmax(axis=1)

    def digest(self) -> str:
        return self.network.digest()

    def replace_network(self, network: Network) -> "BackboneModel":
        """The only mutation path for parameters; refused once frozen."""
        if self.frozen:
            raise FrozenModelError("backbone parameters are frozen")
        return replace(self, network=network)


def _init(input_dim: int, arch: Sequence[int], num_classes: int, seed: int) -> Network:
    dims = [input_dim, *arch, num_classes]
    acts = [Activation.RELU] * len(arch) + [Activation.IDENTITY]
    return Network.initialize(dims, acts, np.random.default_rng([seed, 0]))


def train_backbone(train: Dataset, arch: Sequence[int] = DEFAULT_ARCH, cfg: TrainConfig | None = None) -> BackboneModel:
    """Fit with plain cross-entropy, deliberately without any re-weighting."""
    cfg = cfg or default_config()
    if len(train) == 0 or not train.is_labeled:
        raise InvalidInputError("backbone training needs a non-empty labelled dataset")
    net = _init(train.dim, arch, train.num_classes, cfg.seed)
    return _train_from(BackboneModel(net), train, cfg)


def continue_training(model: BackboneModel, train: Dataset, cfg: TrainConfig) -> BackboneModel:
    """Further SGD epochs starting from the model's current parameters."""
    if model.frozen:
        raise FrozenModelError("cannot train a frozen backbone")
    return _train_from(model, train, cfg)


def _train_from(model: BackboneModel, train: Dataset, cfg: TrainConfig) -> BackboneModel:
    result = fit(model.network, train.features, train.labels, Loss.cross_entropy(), cfg)
    trained = model.replace_network(result.network)
    acc = float((trained.predict(train.features) == train.labels).mean())
    report = TrainingReport(result.epochs_run, tuple(result.train_losses), acc)
    return replace(trained, report=report)


def freeze(model: BackboneModel) -> BackboneModel:
    return model if model.frozen else replace(model, frozen=True)


def penultimate(model: BackboneModel, x) -> np.ndarray:
    """Last hidden-layer activations; raw features if there is no hidden layer.

    Accepts an :class:`Example`, a single feature vector or a batch matrix.
    """
    feats = x.features if isinstance(x, Example) else x
    arr = np.asarray(feats, dtype=np.float64)
    single = arr.ndim == 1
    if arr.shape[-1] != model.input_dim:
        raise InvalidInputError(
            f"example has {arr.shape[-1]} features, backbone expects {model.input_dim}"
        )
    n_hidden = model.network.n_layers - 1
    if n_hidden == 0:
        out = np.atleast_2d(arr).copy()
    else:
        out = model.network.truncated(n_hidden)(arr)
    return out[0] if single else out


def per_class_accuracy(model: BackboneModel, dataset: Dataset) -> np.ndarray:
    """Accuracy per class (NaN for classes absent from ``dataset``)."""
    pred = model.predict(dataset.features)
    acc = np.full(model.num_classes, np.nan)
    for k in range(model.num_classes):
        mask = dataset.labels == k
        if mask.any():
            acc[k] = float((pred[mask] == k).mean())
    return acc
