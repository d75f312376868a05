"""The trainable probe: an optional learned scalar mix over layers feeding a
one-hidden-layer ReLU MLP, trained with Adam, cross-entropy and early
stopping on the development set.

Everything runs in float64 numpy. Forward, backward and the optimizer are
written out explicitly so they can be checked against finite differences and
a reference update rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from morphprobe.store import Store, pool_subwords

DEFAULT_HIDDEN_UNITS = 50
PARAM_NAMES = ("mix_logits", "W1", "b1", "W2", "b2")


@dataclass
class TrainerConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    dropout: float = 0.2
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 5
    seed: int = 0
    hidden_units: int = DEFAULT_HIDDEN_UNITS

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1 or self.hidden_units < 1:
            raise ValueError("batch_size, max_epochs and hidden_units must be >= 1")


@dataclass
class ProbeModel:
    """Parameters of the probe. ``mode`` is either a single layer index or
    "mix"; mix_logits exist only in mix mode (weights = softmax(mix_logits))."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    mode: int | str = "mix"
    mix_logits: np.ndarray | None = None

    @property
    def num_classes(self) -> int:
        return self.W2.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    def parameters(self) -> dict[str, np.ndarray]:
        params = {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}
        if self.mix_logits is not None:
            params["mix_logits"] = self.mix_logits
        return params

    def copy(self) -> "ProbeModel":
        return ProbeModel(
            W1=self.W1.copy(),
            b1=self.b1.copy(),
            W2=self.W2.copy(),
            b2=self.b2.copy(),
            mode=self.mode,
            mix_logits=None if self.mix_logits is None else self.mix_logits.copy(),
        )

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())


def init_model(
    input_dim: int,
    num_classes: int,
    mode: int | str,
    num_layers_total: int | None = None,
    hidden_units: int = DEFAULT_HIDDEN_UNITS,
    rng: np.random.Generator | None = None,
) -> ProbeModel:
    """Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) weights, zero biases and
    zero mix logits; deterministic given the generator."""
    if rng is None:
        rng = np.random.default_rng(0)
    if mode == "mix":
        if num_layers_total is None or num_layers_total < 1:
            raise ValueError("mix mode needs num_layers_total")
        mix_logits = np.zeros(num_layers_total, dtype=np.float64)
    elif isinstance(mode, int):
        mix_logits = None
    else:
        raise ValueError(f"mode must be a layer index or 'mix', got {mode!r}")
    s1 = np.sqrt(1.0 / input_dim)
    s2 = np.sqrt(1.0 / hidden_units)
    return ProbeModel(
        W1=rng.uniform(-s1, s1, size=(hidden_units, input_dim)),
        b1=np.zeros(hidden_units, dtype=np.float64),
        W2=rng.uniform(-s2, s2, size=(num_classes, hidden_units)),
        b2=np.zeros(num_classes, dtype=np.float64),
        mode=mode,
        mix_logits=mix_logits,
    )


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def weighted_layer_sum(weights: np.ndarray, layer_vectors: np.ndarray) -> np.ndarray:
    """Plain weighted sum over the layer axis, no normalization.

    ``layer_vectors`` is [..., L, H]; ``weights`` is [L].
    """
    weights = np.asarray(weights, dtype=np.float64)
    if layer_vectors.shape[-2] != weights.shape[0]:
        raise ValueError(
            f"layer axis {layer_vectors.shape[-2]} does not match "
            f"{weights.shape[0]} weights"
        )
    return np.einsum("l,...lh->...h", weights, layer_vectors)


def scalar_mix(mix_logits: np.ndarray, layer_vectors: np.ndarray) -> np.ndarray:
    """Softmax-normalized convex combination of per-layer vectors."""
    return weighted_layer_sum(softmax(np.asarray(mix_logits, dtype=np.float64)), layer_vectors)


def _mix_input(model: ProbeModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    """Resolve the MLP input from the raw features.

    Mix mode expects [n, L, H] and returns the mixed [n, H]; single-layer
    mode accepts [n, H] directly or selects its layer from [n, L, H].
    """
    x = np.asarray(x, dtype=np.float64)
    if model.mode == "mix":
        if x.ndim != 3:
            raise ValueError(f"mix mode expects [n, layers, hidden] input, got shape {x.shape}")
        if x.shape[1] != model.mix_logits.shape[0]:
            raise ValueError(
                f"input has {x.shape[1]} layers but model mixes {model.mix_logits.shape[0]}"
            )
        return scalar_mix(model.mix_logits, x), x
    if x.ndim == 3:
        x = x[:, model.mode, :]
    if x.ndim != 2:
        raise ValueError(f"expected [n, hidden] input, got shape {x.shape}")
    return x, None


def forward(
    model: ProbeModel,
    x: np.ndarray,
    training: bool = False,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Class log-probabilities for a batch. Dropout (inverted scaling) hits
    the hidden activations only when training."""
    logp, _ = _forward_cached(model, x, training=training, dropout=dropout, rng=rng)
    return logp


def _forward_cached(model, x, training, dropout, rng):
    mixed, stack = _mix_input(model, x)
    if mixed.shape[1] != model.input_dim:
        raise ValueError(f"input dim {mixed.shape[1]} does not match model {model.input_dim}")
    z1 = mixed @ model.W1.T + model.b1
    h = np.maximum(z1, 0.0)
    if training and dropout > 0.0:
        if rng is None:
            raise ValueError("training-mode dropout needs an rng")
        mask = (rng.random(h.shape) >= dropout) / (1.0 - dropout)
        h_dropped = h * mask
    else:
        mask = None
        h_dropped = h
    z2 = h_dropped @ model.W2.T + model.b2
    logp = log_softmax(z2)
    cache = (mixed, stack, z1, mask, h_dropped, logp)
    return logp, cache


def loss_and_grads(
    model: ProbeModel,
    x: np.ndarray,
    y: np.ndarray,
    training: bool = False,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy and its gradients for every parameter (including
    the mix logits in mix mode)."""
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("empty batch")
    if y.min() < 0 or y.max() >= model.num_classes:
        raise ValueError(f"label outside [0,{model.num_classes}): {y.min()}..{y.max()}")
    logp, cache = _forward_cached(model, x, training=training, dropout=dropout, rng=rng)
    mixed, stack, z1, mask, h_dropped, _ = cache
    n = y.shape[0]
    loss = -float(logp[np.arange(n), y].mean())

    dz2 = np.exp(logp)
    dz2[np.arange(n), y] -= 1.0
    dz2 /= n
    grads = {
        "W2": dz2.T @ h_dropped,
        "b2": dz2.sum(axis=0),
    }
    dh = dz2 @ model.W2
    if mask is not None:
        dh = dh * mask
    dz1 = dh * (z1 > 0.0)
    grads["W1"] = dz1.T @ mixed
    grads["b1"] = dz1.sum(axis=0)
    if model.mode == "mix":
        dmixed = dz1 @ model.W1
        weights = softmax(model.mix_logits)
        # d(loss)/d(weight_l), then through the softmax Jacobian
        dw = np.einsum("nh,nlh->l", dmixed, stack)
        grads["mix_logits"] = weights * (dw - float(weights @ dw))
    return loss, grads


@dataclass
class TrainState:
    """Adam moments per parameter, step counter, early-stopping bookkeeping
    and the run's RNG."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    best_metric: float = -np.inf
    best_params: dict[str, np.ndarray] | None = None
    best_epoch: int = -1
    epochs_since_improvement: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    @classmethod
    def for_model(cls, model: ProbeModel, rng: np.random.Generator) -> "TrainState":
        params = model.parameters()
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            rng=rng,
        )


def adam_step(
    state: TrainState,
    model: ProbeModel,
    grads: Mapping[str, np.ndarray],
    config: TrainerConfig,
):
    """One bias-corrected Adam update, applied in place."""
    state.t += 1
    t = state.t
    params = model.parameters()
    for name, grad in grads.items():
        p = params[name]
        state.m[name] = config.beta1 * state.m[name] + (1 - config.beta1) * grad
        state.v[name] = config.beta2 * state.v[name] + (1 - config.beta2) * grad * grad
        m_hat = state.m[name] / (1 - config.beta1**t)
        v_hat = state.v[name] / (1 - config.beta2**t)
        p -= config.lr * m_hat / (np.sqrt(v_hat) + config.epsilon)


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    train_metric: float
    dev_loss: float
    dev_metric: float


@dataclass
class FitResult:
    model: ProbeModel
    history: list[EpochStats]
    best_epoch: int
    best_dev_metric: float

    @property
    def mix_weights(self) -> list[float] | None:
        if self.model.mix_logits is None:
            return None
        return softmax(self.model.mix_logits).tolist()


def accuracy(logp: np.ndarray, y: np.ndarray) -> float:
    return float((logp.argmax(axis=1) == y).mean())


def evaluate(model: ProbeModel, x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Eval-mode loss and accuracy (pure function of the parameters)."""
    logp = forward(model, x)
    n = y.shape[0]
    loss = -float(logp[np.arange(n), y].mean())
    return loss, accuracy(logp, y)


def fit(
    x_train: np.ndarray,
    y_train: np.ndarray,
    config: TrainerConfig,
    num_classes: int,
    mode: int | str,
    num_layers_total: int | None = None,
    dev_scorer: Callable[[ProbeModel], tuple[float, float]] | None = None,
    train_scorer: Callable[[ProbeModel], tuple[float, float]] | None = None,
) -> FitResult:
    """Minibatch Adam training with per-epoch dev scoring, best-snapshot
    tracking and patience-based early stopping.

    ``dev_scorer`` maps a model to (loss, metric); higher metric is better.
    Ties keep the earlier epoch's snapshot.
    """
    if num_classes < 2:
        raise ValueError("degenerate dataset: need at least 2 classes")
    if dev_scorer is None:
        raise ValueError("fit needs a dev_scorer for early stopping")
    input_dim = x_train.shape[-1]
    rng = np.random.default_rng(config.seed)
    model = init_model(
        input_dim,
        num_classes,
        mode,
        num_layers_total=num_layers_total,
        hidden_units=config.hidden_units,
        rng=rng,
    )
    state = TrainState.for_model(model, rng)
    if train_scorer is None:
        train_scorer = lambda m: evaluate(m, x_train, y_train)

    history: list[EpochStats] = []
    n = y_train.shape[0]
    for epoch in range(1, config.max_epochs + 1):
        order = state.rng.permutation(n)
        for lo in range(0, n, config.batch_size):
            batch = order[lo : lo + config.batch_size]
            _, grads = loss_and_grads(
                model,
                x_train[batch],
                y_train[batch],
                training=True,
                dropout=config.dropout,
                rng=state.rng,
            )
            adam_step(state, model, grads, config)
        train_loss, train_metric = train_scorer(model)
        dev_loss, dev_metric = dev_scorer(model)
        history.append(
            EpochStats(
                epoch=epoch,
                train_loss=train_loss,
                train_metric=train_metric,
                dev_loss=dev_loss,
                dev_metric=dev_metric,
            )
        )
        if dev_metric > state.best_metric:
            state.best_metric = dev_metric
            state.best_params = {k: p.copy() for k, p in model.parameters().items()}
            state.best_epoch = epoch
            state.epochs_since_improvement = 0
        else:
            state.epochs_since_improvement += 1
            if state.epochs_since_improvement >= config.patience:
                break

    best = model.copy()
    best_arrays = best.parameters()
    for name, value in state.best_params.items():
        best_arrays[name][...] = value
    return FitResult(
        model=best,
        history=history,
        best_epoch=state.best_epoch,
        best_dev_metric=state.best_metric,
    )


# -- probing over an embedding store ----------------------------------------


@dataclass
class ProbeRunResult:
    fit: FitResult
    test_accuracy: float
    labels: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "history": [
                {
                    "epoch": h.epoch,
                    "train_loss": h.train_loss,
                    "train_accuracy": h.train_metric,
                    "dev_loss": h.dev_loss,
                    "dev_accuracy": h.dev_metric,
                }
                for h in self.fit.history
            ],
            "chosen_epoch": self.fit.best_epoch,
            "dev_accuracy": self.fit.best_dev_metric,
            "test_accuracy": self.test_accuracy,
            "mix_weights": self.fit.mix_weights,
            "labels": list(self.labels),
        }


def instance_features(
    instances,
    store: Store,
    pooling: str,
    layer_mode: int | str,
) -> np.ndarray:
    """Pooled feature matrix for probing instances: [n, L, H] in mix mode,
    [n, H] for a single layer."""
    layers = store.header.num_layers_total
    rows = []
    for inst in instances:
        record = store.record(inst.sentence_id)
        if inst.target_index >= record.num_words:
            raise ValueError(
                f"sentence {inst.sentence_id}: target index {inst.target_index} "
                f"outside the record's {record.num_words} words"
            )
        if layer_mode == "mix":
            rows.append(
                np.stack(
                    [pool_subwords(record, inst.target_index, li, pooling) for li in range(layers)]
                )
            )
        else:
            rows.append(pool_subwords(record, inst.target_index, int(layer_mode), pooling))
    return np.asarray(rows, dtype=np.float64)


def train_probe(
    dataset,
    store: Store,
    pooling: str = "last",
    layer_mode: int | str = "mix",
    config: TrainerConfig | None = None,
) -> ProbeRunResult:
    """Train the probe on a ProbingDataset over an embedding store and report
    test accuracy of the best-dev snapshot. Deterministic given config.seed."""
    if config is None:
        config = TrainerConfig()
    labels = tuple(sorted(dataset.task.label_set))
    if len(labels) < 2:
        raise ValueError("degenerate dataset: fewer than 2 labels")
    label_index = {label: i for i, label in enumerate(labels)}

    def matrices(split):
        x = instance_features(split, store, pooling, layer_mode)
        y = np.array([label_index[inst.label] for inst in split], dtype=np.int64)
        return x, y

    x_train, y_train = matrices(dataset.train)
    x_dev, y_dev = matrices(dataset.dev)
    x_test, y_test = matrices(dataset.test)
    if len(set(y_train.tolist())) < 2:
        raise ValueError("degenerate dataset: single class in the training split")

    result = fit(
        x_train,
        y_train,
        config,
        num_classes=len(labels),
        mode=layer_mode,
        num_layers_total=store.header.num_layers_total,
        dev_scorer=lambda m: evaluate(m, x_dev, y_dev),
    )
    _, test_acc = evaluate(result.model, x_test, y_test)
    return ProbeRunResult(fit=result, test_accuracy=test_acc, labels=labels)
