"""Small fully connected regressor with batch norm, Adam training and exact input gradients.

Hidden layers are ``Linear -> BatchNorm -> activation``; the output layer is
linear. Everything is float64 numpy.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .datamodel import SensorDataset
from .errors import ConfigError, ShapeError, TrainingError

log = logging.getLogger(__name__)

ACTIVATIONS = ("leaky_relu", "relu")
LEAKY_SLOPE = 0.01
BN_EPS = 1e-5
BN_MOMENTUM = 0.9


@dataclass(frozen=True)
class MLPConfig:
    n_inputs: int = 1
    n_outputs: int = 1
    hidden_layers: tuple = (8, 8, 8)
    activation: str = "leaky_relu"
    batch_norm: bool = True
    l2_reg: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        if self.n_inputs < 1 or self.n_outputs < 1:
            raise ConfigError("n_inputs and n_outputs must be at least 1")
        if any(h < 1 for h in self.hidden_layers):
            raise ConfigError("hidden layer widths must be at least 1")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}")
        if self.l2_reg < 0:
            raise ConfigError("l2_reg must be non-negative")

    @property
    def widths(self):
        return (self.n_inputs, *self.hidden_layers, self.n_outputs)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    epochs: int = 300
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    shuffle_seed: int = 0
    validation_fraction: float = 0.1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")


@dataclass
class LossHistory:
    train: list = field(default_factory=list)
    validation: list = field(default_factory=list)

    def __len__(self):
        return len(self.train)


def _act(h, kind):
    if kind == "relu":
        return np.maximum(h, 0.0)
    return np.where(h > 0, h, LEAKY_SLOPE * h)


def _act_grad(h, kind):
    # at h == 0 the negative side is used: 0 for relu, the slope for leaky relu
    if kind == "relu":
        return (h > 0).astype(float)
    return np.where(h > 0, 1.0, LEAKY_SLOPE)


class SurrogateModel:
    """MLP parameters plus batch-norm running statistics.

    ``weights[l]`` has shape ``(fan_in, fan_out)``. ``bn[l]`` holds
    ``gamma``, ``beta``, ``mean`` and ``var`` for hidden layer ``l`` when
    batch norm is enabled.
    """

    def __init__(self, config: MLPConfig, weights, biases, bn=None, trained=False):
        self.config = config
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.bn = [] if bn is None else [{k: np.asarray(v, dtype=np.float64) for k, v in d.items()} for d in bn]
        self.trained = trained
        widths = config.widths
        if len(self.weights) != len(widths) - 1:
            raise ShapeError("layer count does not match config")
        for l, w in enumerate(self.weights):
            if w.shape != (widths[l], widths[l + 1]) or self.biases[l].shape != (widths[l + 1],):
                raise ShapeError(f"layer {l} has shape {w.shape}, expected {(widths[l], widths[l + 1])}")
        n_hidden = len(config.hidden_layers)
        if config.batch_norm and len(self.bn) != n_hidden:
            raise ShapeError("batch-norm statistics missing for some hidden layers")
        for d in self.bn:
            if np.any(d["var"] <= 0):
                raise ShapeError("batch-norm running variances must be positive")

    # ---------------------------------------------------------- inference

    def _effective_layers(self):
        """Hidden layers with batch norm folded in, plus the output layer."""
        layers = []
        n_hidden = len(self.config.hidden_layers)
        for l in range(n_hidden + 1):
            w, b = self.weights[l], self.biases[l]
            if l < n_hidden and self.config.batch_norm:
                d = self.bn[l]
                s = d["gamma"] / np.sqrt(d["var"] + BN_EPS)
                w = w * s
                b = (b - d["mean"]) * s + d["beta"]
            layers.append((w, b))
        return layers

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x2 = x[None, :] if single else x
        if x2.ndim != 2 or x2.shape[1] != self.config.n_inputs:
            raise ShapeError(f"expected input width {self.config.n_inputs}, got shape {x.shape}")
        return x2, single

    def forward(self, x):
        """Inference-mode output; shape ``(n_outputs,)`` for a vector, ``(n, n_outputs)`` for a batch."""
        x2, single = self._check_input(x)
        layers = self._effective_layers()
        a = x2
        for w, b in layers[:-1]:
            a = _act(a @ w + b, self.config.activation)
        w, b = layers[-1]
        y = a @ w + b
        return y[0] if single else y

    __call__ = forward

    def jacobian(self, x):
        """d output / d input in inference mode: ``(n_outputs, n_inputs)`` or ``(n, n_outputs, n_inputs)``."""
        x2, single = self._check_input(x)
        layers = self._effective_layers()
        kind = self.config.activation
        pre = []
        a = x2
        for w, b in layers[:-1]:
            h = a @ w + b
            pre.append(h)
            a = _act(h, kind)
        w_out = layers[-1][0]
        g = np.broadcast_to(w_out.T, (x2.shape[0],) + w_out.T.shape)
        for (w, _), h in zip(reversed(layers[:-1]), reversed(pre)):
            g = (g * _act_grad(h, kind)[:, None, :]) @ w.T
        return g[0] if single else g

    def input_gradient(self, x, output: int = 0):
        """Gradient of one output with respect to the inputs."""
        if not 0 <= output < self.config.n_outputs:
            raise ShapeError(f"output index {output} out of range")
        j = self.jacobian(x)
        return j[..., output, :]

    # ------------------------------------------------------ serialization

    def to_dict(self):
        return {
            "config": asdict(self.config),
            "trained": self.trained,
            "layers": [{"weight": w.tolist(), "bias": b.tolist()} for w, b in zip(self.weights, self.biases)],
            "batch_norm": [{k: v.tolist() for k, v in d.items()} for d in self.bn],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        cfg = dict(d["config"])
        cfg["hidden_layers"] = tuple(cfg["hidden_layers"])
        config = MLPConfig(**cfg)
        return cls(
            config,
            [np.asarray(layer["weight"], dtype=float).reshape(config.widths[i], config.widths[i + 1])
             for i, layer in enumerate(d["layers"])],
            [np.asarray(layer["bias"], dtype=float) for layer in d["layers"]],
            d.get("batch_norm") or None,
            d.get("trained", False),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def copy(self):
        return SurrogateModel(
            self.config,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            [{k: v.copy() for k, v in d.items()} for d in self.bn],
            self.trained,
        )

    def parameters(self):
        """Trainable arrays in a fixed order (weights, biases, gammas, betas)."""
        ps = list(self.weights) + list(self.biases)
        for d in self.bn:
            ps += [d["gamma"], d["beta"]]
        return ps


def init_model(cfg: MLPConfig) -> SurrogateModel:
    """Uniform fan-in/fan-out initialization, zero biases, identity batch norm."""
    rng = np.random.default_rng(cfg.seed)
    widths = cfg.widths
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    bn = None
    if cfg.batch_norm:
        bn = [
            {"gamma": np.ones(h), "beta": np.zeros(h), "mean": np.zeros(h), "var": np.ones(h)}
            for h in cfg.hidden_layers
        ]
    return SurrogateModel(cfg, weights, biases, bn)


def _train_step_grads(model: SurrogateModel, x, y):
    """Batch-statistics forward and backward pass.

    Returns ``(data_loss, grads, batch_stats)`` where ``grads`` follows
    ``model.parameters()`` order and includes the L2 term.
    """
    cfg = model.config
    kind = cfg.activation
    n_hidden = len(cfg.hidden_layers)
    caches = []
    stats = []
    a = x
    for l in range(n_hidden):
        z = a @ model.weights[l] + model.biases[l]
        if cfg.batch_norm:
            mu = z.mean(axis=0)
            var = z.var(axis=0)
            inv = 1.0 / np.sqrt(var + BN_EPS)
            zhat = (z - mu) * inv
            h = zhat * model.bn[l]["gamma"] + model.bn[l]["beta"]
            stats.append((mu, z.var(axis=0, ddof=1) if len(z) > 1 else var))
        else:
            zhat, inv, h = None, None, z
        caches.append((a, zhat, inv, h))
        a = _act(h, kind)
    yhat = a @ model.weights[-1] + model.biases[-1]
    diff = yhat - y
    loss = float(np.mean(diff * diff))

    nw = len(model.weights)
    gw = [None] * nw
    gb = [None] * nw
    ggamma, gbeta = [None] * n_hidden, [None] * n_hidden
    g = 2.0 * diff / diff.size
    gw[-1] = a.T @ g
    gb[-1] = g.sum(axis=0)
    g = g @ model.weights[-1].T
    for l in reversed(range(n_hidden)):
        a_in, zhat, inv, h = caches[l]
        g = g * _act_grad(h, kind)
        if cfg.batch_norm:
            ggamma[l] = (g * zhat).sum(axis=0)
            gbeta[l] = g.sum(axis=0)
            gz = g * model.bn[l]["gamma"]
            m = len(gz)
            g = (inv / m) * (m * gz - gz.sum(axis=0) - zhat * (gz * zhat).sum(axis=0))
        gw[l] = a_in.T @ g
        gb[l] = g.sum(axis=0)
        if l > 0:
            g = g @ model.weights[l].T
    if cfg.l2_reg:
        gw = [gwi + 2.0 * cfg.l2_reg * w for gwi, w in zip(gw, model.weights)]
    grads = gw + gb
    for l in range(n_hidden if cfg.batch_norm else 0):
        grads += [ggamma[l], gbeta[l]]
    return loss, grads, stats


def training_loss(model: SurrogateModel, x, y):
    """Training-mode objective (batch statistics) including the L2 penalty."""
    loss, _, _ = _train_step_grads(model, x, y)
    return loss + model.config.l2_reg * sum(float(np.sum(w * w)) for w in model.weights)


def split_indices(n, tc: TrainConfig):
    """Shuffled (train, validation) index arrays; validation is the tail of the shuffle."""
    rng = np.random.default_rng(tc.shuffle_seed)
    order = rng.permutation(n)
    n_val = int(round(n * tc.validation_fraction))
    if n - n_val < 1:
        raise ConfigError("validation split leaves no training data")
    return order[: n - n_val], order[n - n_val:]


def train(model: SurrogateModel, ds: SensorDataset, tc: TrainConfig) -> tuple[SurrogateModel, LossHistory]:
    """Adam on MSE + ``l2_reg * sum ||W||^2``; returns a trained copy and the loss history."""
    cfg = model.config
    if ds.n_candidates != cfg.n_inputs or ds.n_targets != cfg.n_outputs:
        raise ShapeError(
            f"dataset is {ds.n_candidates}->{ds.n_targets}, model is {cfg.n_inputs}->{cfg.n_outputs}"
        )
    model = model.copy()
    x_all, y_all = ds.values, ds.targets
    tr, va = split_indices(ds.n_snapshots, tc)
    rng = np.random.default_rng(np.random.SeedSequence(tc.shuffle_seed, spawn_key=(1,)))
    params = model.parameters()
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    b1, b2, lr, eps = tc.beta1, tc.beta2, tc.learning_rate, tc.adam_eps
    step = 0
    history = LossHistory()
    min_batch = 2 if cfg.batch_norm else 1
    for epoch in range(tc.epochs):
        order = tr[rng.permutation(len(tr))]
        total, count = 0.0, 0
        for bi, start in enumerate(range(0, len(order), tc.batch_size)):
            idx = order[start:start + tc.batch_size]
            if len(idx) < min_batch:
                continue
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads, stats = _train_step_grads(model, x_all[idx], y_all[idx])
            if not np.isfinite(loss):
                raise TrainingError("non-finite loss", epoch=epoch, batch=bi)
            step += 1
            c1 = 1.0 - b1**step
            c2 = 1.0 - b2**step
            for p, g, u, v in zip(params, grads, m1, m2):
                u *= b1
                u += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * g * g
                p -= lr * (u / c1) / (np.sqrt(v / c2) + eps)
            for d, (mu, var) in zip(model.bn, stats):
                d["mean"] *= BN_MOMENTUM
                d["mean"] += (1.0 - BN_MOMENTUM) * mu
                d["var"] *= BN_MOMENTUM
                d["var"] += (1.0 - BN_MOMENTUM) * var
            total += loss * len(idx)
            count += len(idx)
        history.train.append(total / max(count, 1))
        if len(va):
            diff = model.forward(x_all[va]) - y_all[va]
            vloss = float(np.mean(diff * diff))
            if not np.isfinite(vloss):
                raise TrainingError("non-finite validation loss", epoch=epoch)
            history.validation.append(vloss)
    for d in model.bn:
        np.maximum(d["var"], 1e-12, out=d["var"])
    model.trained = True
    return model, history


def fit(ds: SensorDataset, mlp: MLPConfig, tc: TrainConfig):
    """Initialize a model sized for ``ds`` and train it."""
    mlp = replace(mlp, n_inputs=ds.n_candidates, n_outputs=ds.n_targets)
    return train(init_model(mlp), ds, tc)
