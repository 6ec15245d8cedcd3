"""Small dense networks: layers, losses, SGD training and gradient checking.

A :class:`Network` keeps all parameters in one flat, read-only float64 vector
so the training kernels can walk it without Python overhead. Every operation
that changes parameters returns a new network.
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from tailminer import kernels
from tailminer.errors import ConfigError, InvalidInputError, TrainingDivergedError

PROB_FLOOR = 1e-12


class Activation(str, enum.Enum):
    IDENTITY = "identity"
    RELU = "relu"

    @property
    def code(self) -> int:
        return 1 if self is Activation.RELU else 0


@dataclass(frozen=True, eq=False)
class DenseLayer:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)
    activation: Activation = Activation.IDENTITY

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.biases, dtype=np.float64)
        if w.ndim != 2:
            raise InvalidInputError(f"weights must be 2-D, got shape {w.shape}")
        if b.shape != (w.shape[0],):
            raise InvalidInputError(
                f"biases shape {b.shape} does not match {w.shape[0]} outputs"
            )
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)
        object.__setattr__(self, "activation", Activation(self.activation))

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class FocalLossConfig:
    gamma: float = 2.0
    alphas: tuple[float, ...] = ()

    def __post_init__(self):
        if not (self.gamma >= 0 and math.isfinite(self.gamma)):
            raise ConfigError(f"focal gamma must be >= 0, got {self.gamma}")
        alphas = tuple(float(a) for a in self.alphas)
        if any(not 0.0 <= a <= 1.0 for a in alphas):
            raise ConfigError("focal alphas must lie in [0, 1]")
        object.__setattr__(self, "alphas", alphas)

    def alpha_array(self, num_classes: int) -> np.ndarray:
        if not self.alphas:
            return np.ones(num_classes)
        if len(self.alphas) != num_classes:
            raise ConfigError(
                f"{len(self.alphas)} focal alphas given for {num_classes} classes"
            )
        return np.array(self.alphas)


@dataclass(frozen=True)
class EarlyStoppingConfig:
    patience: int = 3
    min_delta: float = 1e-4
    validation_fraction: float = 0.1

    def __post_init__(self):
        if self.patience < 1:
            raise ConfigError("early stopping patience must be positive")
        if self.min_delta < 0:
            raise ConfigError("early stopping min_delta must be >= 0")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction must lie strictly between 0 and 1")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 20
    batch_size: int = 64
    seed: int = 0
    early_stopping: EarlyStoppingConfig | None = None

    def __post_init__(self):
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")


@dataclass(frozen=True)
class Loss:
    """Which objective a training step minimizes."""

    kind: str
    focal: FocalLossConfig | None = None

    def __post_init__(self):
        if self.kind not in _LOSS_CODES:
            raise ConfigError(f"unknown loss {self.kind!r}; expected one of {sorted(_LOSS_CODES)}")
        if self.kind == "focal" and self.focal is None:
            object.__setattr__(self, "focal", FocalLossConfig())

    @classmethod
    def cross_entropy(cls) -> "Loss":
        return cls("cross_entropy")

    @classmethod
    def focal_loss(cls, cfg: FocalLossConfig | None = None) -> "Loss":
        return cls("focal", cfg or FocalLossConfig())

    @classmethod
    def mse(cls) -> "Loss":
        return cls("mse")

    @property
    def code(self) -> int:
        return _LOSS_CODES[self.kind]


_LOSS_CODES = {"cross_entropy": kernels.CROSS_ENTROPY, "focal": kernels.FOCAL, "mse": kernels.MSE}


@dataclass(frozen=True, eq=False)
class Network:
    """A chain of dense layers stored as one flat parameter vector."""

    dims: tuple[int, ...]
    activations: tuple[Activation, ...]
    params: np.ndarray = field(repr=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        acts = tuple(Activation(a) for a in self.activations)
        if len(dims) < 1 or any(d < 1 for d in dims):
            raise InvalidInputError(f"invalid layer dims {dims}")
        if len(acts) != len(dims) - 1:
            raise InvalidInputError("need one activation per layer")
        params = np.array(self.params, dtype=np.float64, copy=True).ravel()
        if params.shape[0] != _param_count(dims):
            raise InvalidInputError(
                f"{params.shape[0]} parameters given, dims {dims} need {_param_count(dims)}"
            )
        params.flags.writeable = False
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "activations", acts)
        object.__setattr__(self, "params", params)

    @classmethod
    def from_layers(cls, layers: Sequence[DenseLayer]) -> "Network":
        if not layers:
            raise InvalidInputError("a network needs at least one layer")
        dims = [layers[0].n_in]
        for layer in layers:
            if layer.n_in != dims[-1]:
                raise InvalidInputError(
                    f"layer expects {layer.n_in} inputs but previous layer gives {dims[-1]}"
                )
            dims.append(layer.n_out)
        parts = [a for layer in layers for a in (layer.weights.ravel(), layer.biases)]
        return cls(tuple(dims), tuple(l.activation for l in layers), np.concatenate(parts))

    @classmethod
    def initialize(
        cls,
        dims: Sequence[int],
        activations: Sequence[Activation | str],
        rng: np.random.Generator,
    ) -> "Network":
        """Glorot-uniform for identity layers, He-normal for ReLU; zero biases."""
        acts = [Activation(a) for a in activations]
        parts = []
        for din, dout, act in zip(dims[:-1], dims[1:], acts):
            if act is Activation.RELU:
                w = rng.normal(0.0, math.sqrt(2.0 / din), size=(dout, din))
            else:
                bound = math.sqrt(6.0 / (din + dout))
                w = rng.uniform(-bound, bound, size=(dout, din))
            parts += [w.ravel(), np.zeros(dout)]
        params = np.concatenate(parts) if parts else np.zeros(0)
        return cls(tuple(dims), tuple(acts), params)

    @property
    def n_layers(self) -> int:
        return len(self.activations)

    @property
    def n_in(self) -> int:
        return self.dims[0]

    @property
    def n_out(self) -> int:
        return self.dims[-1]

    @property
    def layers(self) -> list[DenseLayer]:
        out, p = [], 0
        for din, dout, act in zip(self.dims[:-1], self.dims[1:], self.activations):
            w = self.params[p:p + din * dout].reshape(dout, din)
            p += din * dout
            out.append(DenseLayer(w, self.params[p:p + dout], act))
            p += dout
        return out

    def with_params(self, params: np.ndarray) -> "Network":
        return Network(self.dims, self.activations, params)

    def truncated(self, n_layers: int) -> "Network":
        """The first ``n_layers`` layers (parameters are a prefix of the flat vector)."""
        if not 0 < n_layers <= self.n_layers:
            raise InvalidInputError(f"cannot keep {n_layers} of {self.n_layers} layers")
        dims = self.dims[: n_layers + 1]
        return Network(dims, self.activations[:n_layers], self.params[: _param_count(dims)])

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = _as_batch(X, self.n_in)
        return kernels.predict(self.params, self._dims_arr, self._acts_arr, X)

    @property
    def _dims_arr(self) -> np.ndarray:
        return np.array(self.dims, dtype=np.int64)

    @property
    def _acts_arr(self) -> np.ndarray:
        return np.array([a.code for a in self.activations], dtype=np.int64)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(repr((self.dims, [a.value for a in self.activations])).encode())
        h.update(self.params.tobytes())
        return h.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.activations == other.activations
            and self.params.tobytes() == other.params.tobytes()
        )

    __hash__ = None


def _param_count(dims: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))


def _as_batch(X, width: int) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != width:
        raise InvalidInputError(f"expected inputs of width {width}, got shape {X.shape}")
    return X


# --- single-vector losses -------------------------------------------------


def _vector(v, name: str = "input") -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    if a.ndim != 1 or a.size == 0:
        raise InvalidInputError(f"{name} must be a non-empty vector")
    if not np.isfinite(a).all():
        raise InvalidInputError(f"{name} contains non-finite values")
    return a


def softmax(logits) -> np.ndarray:
    z = _vector(logits, "logits")
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax_rows(Z: np.ndarray) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    e = np.exp(Z - Z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _target_prob(probs, target: int) -> float:
    p = _vector(probs, "probs")
    if not 0 <= target < p.size:
        raise InvalidInputError(f"target {target} out of range for {p.size} classes")
    return max(float(p[target]), PROB_FLOOR)


def cross_entropy(probs, target: int) -> float:
    return -math.log(_target_prob(probs, target))


def focal_loss(probs, target: int, cfg: FocalLossConfig) -> float:
    pt = _target_prob(probs, target)
    alpha = cfg.alpha_array(len(probs))[target]
    return -alpha * (1.0 - pt) ** cfg.gamma * math.log(pt)


def mse(a, b) -> float:
    """Sum of squared differences (not divided by length)."""
    x, y = _vector(a, "a"), _vector(b, "b")
    if x.shape != y.shape:
        raise InvalidInputError(f"length mismatch: {x.size} vs {y.size}")
    d = x - y
    return float(d @ d)


# --- forward / backward ---------------------------------------------------


@dataclass(frozen=True, eq=False)
class ForwardPass:
    pre_activations: list[np.ndarray]
    activations: list[np.ndarray]
    output: np.ndarray


def forward(net: Network | Sequence[DenseLayer], x) -> ForwardPass:
    if not isinstance(net, Network):
        net = Network.from_layers(list(net))
    a = _as_batch(x, net.n_in)
    squeeze = np.asarray(x).ndim == 1
    pre, post = [], []
    for layer in net.layers:
        z = a @ layer.weights.T + layer.biases
        a = np.where(z > 0.0, z, 0.0) if layer.activation is Activation.RELU else z
        pre.append(z[0] if squeeze else z)
        post.append(a[0] if squeeze else a)
    return ForwardPass(pre, post, post[-1])


def _kernel_targets(loss: Loss, targets, n: int, n_out: int):
    if loss.kind == "mse":
        tr = np.ascontiguousarray(targets, dtype=np.float64)
        if tr.ndim == 1:
            tr = tr[None, :]
        if tr.shape != (n, n_out):
            raise InvalidInputError(f"mse targets must have shape {(n, n_out)}, got {tr.shape}")
        return np.zeros(0, dtype=np.int64), tr
    ti = np.ascontiguousarray(np.atleast_1d(targets), dtype=np.int64)
    if ti.shape != (n,):
        raise InvalidInputError(f"need {n} class targets, got shape {ti.shape}")
    if ti.size and (ti.min() < 0 or ti.max() >= n_out):
        raise InvalidInputError(f"class target out of range for {n_out} classes")
    return ti, np.zeros((0, 0))


def _loss_args(net: Network, loss: Loss):
    focal = loss.focal or FocalLossConfig(gamma=0.0)
    alphas = focal.alpha_array(net.n_out) if loss.kind == "focal" else np.ones(net.n_out)
    return loss.code, float(focal.gamma), np.ascontiguousarray(alphas), PROB_FLOOR


def loss_and_gradient(net: Network, X, targets, loss: Loss) -> tuple[float, np.ndarray, int]:
    """Mean batch loss, flat gradient and the first non-finite layer (-1 if none)."""
    X = _as_batch(X, net.n_in)
    ti, tr = _kernel_targets(loss, targets, X.shape[0], net.n_out)
    kind, gamma, alphas, floor = _loss_args(net, loss)
    loss_value, grad, bad = kernels.loss_and_grad(
        net.params, net._dims_arr, net._acts_arr, X, ti, tr, kind, gamma, alphas, floor
    )
    return float(loss_value), grad, int(bad)


def batch_loss(net: Network, X, targets, loss: Loss) -> float:
    X = _as_batch(X, net.n_in)
    ti, tr = _kernel_targets(loss, targets, X.shape[0], net.n_out)
    kind, gamma, alphas, floor = _loss_args(net, loss)
    return float(
        kernels.mean_loss(net.params, net._dims_arr, net._acts_arr, X, ti, tr, kind, gamma, alphas, floor)
    )


def backward_and_step(net: Network, X, targets, loss: Loss, learning_rate: float) -> tuple[Network, float]:
    """One plain-SGD step on a batch; the returned loss is the pre-update mean."""
    if np.asarray(X).size == 0:
        raise InvalidInputError("batch must be non-empty")
    value, grad, bad = loss_and_gradient(net, X, targets, loss)
    if bad >= 0:
        raise TrainingDivergedError(bad)
    if learning_rate == 0:
        return net, value
    return net.with_params(net.params - learning_rate * grad), value


def gradient_check(
    net: Network,
    X,
    targets,
    loss: Loss,
    epsilon: float = 1e-5,
    analytic: Callable[[Network], np.ndarray] | None = None,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``analytic`` overrides the gradient under test (used for fault injection).
    """
    if epsilon <= 0:
        raise InvalidInputError("epsilon must be positive")
    if net.params.size == 0:
        return 0.0
    grad = analytic(net) if analytic else loss_and_gradient(net, X, targets, loss)[1]
    worst = 0.0
    base = net.params.copy()
    for j in range(base.size):
        old = base[j]
        base[j] = old + epsilon
        up = batch_loss(net.with_params(base), X, targets, loss)
        base[j] = old - epsilon
        down = batch_loss(net.with_params(base), X, targets, loss)
        base[j] = old
        numeric = (up - down) / (2.0 * epsilon)
        denom = max(abs(numeric), abs(grad[j]), 1e-6)
        worst = max(worst, abs(numeric - grad[j]) / denom)
    return worst


# --- training loop --------------------------------------------------------


def early_stopping_scan(trace: Sequence[float], patience: int, min_delta: float = 0.0) -> tuple[int, int]:
    """Replay the stopping rule over a validation trace.

    Returns ``(stop_index, best_index)``: the epoch after which training halts
    (last index if it never triggers) and the epoch whose parameters are kept.
    """
    if not trace:
        raise InvalidInputError("empty validation trace")
    best, best_idx, waited = math.inf, 0, 0
    for i, v in enumerate(trace):
        if v < best - min_delta:
            best, best_idx, waited = v, i, 0
        else:
            waited += 1
            if waited >= patience:
                return i, best_idx
    return len(trace) - 1, best_idx


@dataclass(frozen=True, eq=False)
class FitResult:
    network: Network
    train_losses: list[float]
    val_losses: list[float]
    epochs_run: int
    best_epoch: int | None


def fit(
    net: Network,
    X,
    targets,
    loss: Loss,
    cfg: TrainConfig,
    validation: tuple[np.ndarray, np.ndarray] | None = None,
    rng: np.random.Generator | None = None,
) -> FitResult:
    """Minibatch SGD; with ``cfg.early_stopping`` and ``validation`` set, keep the best epoch."""
    X = _as_batch(X, net.n_in)
    n = X.shape[0]
    ti, tr = _kernel_targets(loss, targets, n, net.n_out)
    kind, gamma, alphas, floor = _loss_args(net, loss)
    dims, acts = net._dims_arr, net._acts_arr
    rng = rng if rng is not None else np.random.default_rng([cfg.seed, 1])
    params = net.params.copy()
    es = cfg.early_stopping if validation is not None else None

    train_losses: list[float] = []
    val_losses: list[float] = []
    best_val, best_epoch, best_params, waited = math.inf, None, params.copy(), 0
    for epoch in range(cfg.epochs):
        if n == 0:
            break
        order = rng.permutation(n).astype(np.int64)
        value, bad = kernels.sgd_epoch(
            params, dims, acts, X, ti, tr, order, cfg.batch_size, cfg.learning_rate,
            kind, gamma, alphas, floor,
        )
        if bad >= 0:
            raise TrainingDivergedError(int(bad), f"training diverged at epoch {epoch}: non-finite gradient in layer {bad}")
        train_losses.append(float(value))
        if es is None:
            continue
        v = batch_loss(net.with_params(params), validation[0], validation[1], loss)
        if not math.isfinite(v):
            raise TrainingDivergedError(net.n_layers - 1, f"validation loss diverged at epoch {epoch}")
        val_losses.append(v)
        if v < best_val - es.min_delta:
            best_val, best_epoch, best_params, waited = v, epoch, params.copy(), 0
        else:
            waited += 1
            if waited >= es.patience:
                break
    final = best_params if es is not None and best_epoch is not None else params
    return FitResult(net.with_params(final), train_losses, val_losses, len(train_losses), best_epoch)
