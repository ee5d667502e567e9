"""Feed-forward regression network with analytic backprop, dropout and Adam.

Architecture::

    Dense(d -> input_units, first_activation) -> Dropout(dropout_rate)
    [Dense(-> units[i], relu) -> Dropout(dropout_rates[i])] * n_layers
    Dense(-> 1, linear)

All parameters live in one flat float64 buffer; layers hold views into it,
which keeps the optimizer update to a few vector operations.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

LINEAR = "linear"
RELU = "relu"

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    input_units: int = 64
    n_layers: int = 2
    units: tuple[int, ...] = (32, 16)
    dropout_rate: float = 0.1
    dropout_rates: tuple[float, ...] = (0.1, 0.1)
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 64
    patience: int = 20
    val_fraction: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(int(u) for u in self.units))
        object.__setattr__(self, "dropout_rates", tuple(float(r) for r in self.dropout_rates))
        for name in ("input_units", "epochs", "batch_size", "patience"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if int(self.n_layers) != self.n_layers or self.n_layers < 0:
            raise ValueError(f"n_layers must be a nonnegative integer, got {self.n_layers!r}")
        if len(self.units) != self.n_layers or len(self.dropout_rates) != self.n_layers:
            raise ValueError("units and dropout_rates must have n_layers entries")
        if any(u < 1 for u in self.units):
            raise ValueError("every hidden layer needs at least one unit")
        for r in (self.dropout_rate, *self.dropout_rates):
            if not 0.0 <= r < 1.0:
                raise ValueError(f"dropout rates must lie in [0, 1), got {r!r}")
        # zero is allowed: it freezes the parameters
        if not (self.learning_rate >= 0 and np.isfinite(self.learning_rate)):
            raise ValueError(f"learning_rate must be finite and >= 0, got {self.learning_rate!r}")
        if not 0.0 < self.val_fraction <= 0.5:
            raise ValueError(f"val_fraction must lie in (0, 0.5], got {self.val_fraction!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["units"] = list(self.units)
        d["dropout_rates"] = list(self.dropout_rates)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown hyperparameter keys: {unknown}")
        return cls(**d)

    @classmethod
    def from_json(cls, src: str | os.PathLike) -> "Hyperparams":
        """Load from a JSON file path, or from inline JSON text starting with '{'."""
        text = str(src)
        if not text.lstrip().startswith("{"):
            with open(src) as fh:
                text = fh.read()
        d = json.loads(text)
        if not isinstance(d, dict):
            raise ValueError("hyperparameter JSON must be an object")
        return cls.from_dict(d)


@dataclass
class Dense:
    weight: np.ndarray  # (in, out) view into the flat buffer
    bias: np.ndarray  # (out,) view
    activation: str


class Mlp:
    """A stack of dense layers with a dropout rate after every layer but the last."""

    def __init__(self, widths: Sequence[int], activations: Sequence[str],
                 dropout: Sequence[float], init_seed: int = 0,
                 params: np.ndarray | None = None):
        widths = tuple(int(w) for w in widths)
        if len(activations) != len(widths) - 1 or len(dropout) != len(widths) - 1:
            raise ValueError("need one activation and dropout rate per layer")
        if widths[-1] != 1 or activations[-1] != LINEAR:
            raise ValueError("final layer must be a single linear unit")
        self.widths = widths
        self.activations = tuple(activations)
        self.dropout = tuple(float(r) for r in dropout)
        self.init_seed = init_seed
        n = sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))
        self.params = np.zeros(n) if params is None else np.array(params, dtype=np.float64)
        if self.params.shape != (n,):
            raise ValueError(f"expected {n} parameters, got {self.params.shape}")
        self.layers = _bind(self.params, widths, self.activations)

    @property
    def n_params(self) -> int:
        return self.params.shape[0]

    @property
    def input_width(self) -> int:
        return self.widths[0]

    def copy(self) -> "Mlp":
        return Mlp(self.widths, self.activations, self.dropout, self.init_seed, self.params.copy())

    def with_params(self, params: np.ndarray) -> "Mlp":
        return Mlp(self.widths, self.activations, self.dropout, self.init_seed, params)

    def without_dropout(self) -> "Mlp":
        return Mlp(self.widths, self.activations, (0.0,) * len(self.dropout), self.init_seed, self.params.copy())


def _bind(flat: np.ndarray, widths, activations) -> list[Dense]:
    layers = []
    off = 0
    for (a, b), act in zip(zip(widths[:-1], widths[1:]), activations):
        w = flat[off:off + a * b].reshape(a, b)
        off += a * b
        bias = flat[off:off + b]
        off += b
        layers.append(Dense(w, bias, act))
    return layers


def build_mlp(d: int, hp: Hyperparams, seed: int = 0, *, first_activation: str = LINEAR) -> Mlp:
    """Network for ``d`` input features; He-uniform init for relu layers,
    Glorot-uniform for linear ones, zero biases."""
    if int(d) != d or d < 1:
        raise ValueError(f"input width must be a positive integer, got {d!r}")
    if first_activation not in (LINEAR, RELU):
        raise ValueError(f"first_activation must be 'linear' or 'relu', got {first_activation!r}")
    widths = (int(d), hp.input_units, *hp.units, 1)
    acts = (first_activation, *([RELU] * hp.n_layers), LINEAR)
    drop = (hp.dropout_rate, *hp.dropout_rates, 0.0)
    mlp = Mlp(widths, acts, drop, seed)
    rng = np.random.default_rng(seed)
    for layer in mlp.layers:
        fan_in, fan_out = layer.weight.shape
        if layer.activation == RELU:
            limit = np.sqrt(6.0 / fan_in)
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
        layer.weight[...] = rng.uniform(-limit, limit, size=layer.weight.shape)
    return mlp


def _as_matrix(mlp: Mlp, features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[1] != mlp.input_width:
        raise ValueError(f"network expects {mlp.input_width} features, got shape {x.shape}")
    return x


def _keep_threshold(rate: float) -> int:
    """16-bit threshold t; a unit is kept when a uniform 16-bit draw is < t."""
    return max(1, int(round((1.0 - rate) * 65536.0)))


def _dropout_mask(rng: np.random.Generator, shape, rate: float) -> tuple[np.ndarray, float]:
    # four 16-bit lanes per 64-bit word; keep probability is t / 2^16 exactly
    size = shape[0] * shape[1]
    raw = rng.bit_generator.random_raw((size + 3) // 4).view(np.uint16)[:size]
    t = _keep_threshold(rate)
    return (raw < t).reshape(shape), 65536.0 / t


def _forward(mlp: Mlp, x: np.ndarray, rng: np.random.Generator | None, cache: list | None):
    a = x
    for layer, rate in zip(mlp.layers, mlp.dropout):
        z = a @ layer.weight
        z += layer.bias
        relu = layer.activation == RELU
        mask, scale = None, 1.0
        if rng is not None and rate > 0.0:
            mask, scale = _dropout_mask(rng, z.shape, rate)
            if relu:
                mask &= z > 0.0
        elif relu:
            mask = z > 0.0
        if mask is None:
            h = z
        else:
            h = z * mask
            if scale != 1.0:
                h *= scale
        if cache is not None:
            cache.append((a, mask, scale))
        a = h
    return a[:, 0]


def _backward(mlp: Mlp, cache: list, dout: np.ndarray, grad_views: list[Dense]) -> None:
    """Write d(loss)/d(params) into ``grad_views`` given d(loss)/d(output)."""
    g = dout[:, None]
    for i in range(len(mlp.layers) - 1, -1, -1):
        a, mask, scale = cache[i]
        if mask is not None:
            g = g * mask
            if scale != 1.0:
                g *= scale
        np.matmul(a.T, g, out=grad_views[i].weight)
        grad_views[i].bias[...] = g.sum(axis=0)
        if i > 0:
            g = g @ mlp.layers[i].weight.T


def forward(mlp: Mlp, features, training: bool = False, seed: int | None = None) -> np.ndarray:
    """Network output per row.

    In training mode inverted dropout is applied with masks drawn from
    ``seed``; otherwise dropout is the identity and the output is
    deterministic.
    """
    x = _as_matrix(mlp, features)
    rng = np.random.default_rng(seed) if training else None
    return _forward(mlp, x, rng, None)


def weighted_mse(pred: np.ndarray, target: np.ndarray, w: np.ndarray) -> float:
    r = target - pred
    return float((w * r) @ r / w.sum())


def loss_and_grad(mlp: Mlp, features, target, w, rng=None) -> tuple[float, np.ndarray]:
    """Normalized weighted MSE sum_i w_i (y_i - f(x_i))^2 / sum_i w_i and its gradient."""
    x = _as_matrix(mlp, features)
    y = np.asarray(target, dtype=np.float64)
    w = np.asarray(getattr(w, "values", w), dtype=np.float64)
    cache: list = []
    pred = _forward(mlp, x, rng, cache)
    r = pred - y
    sw = w.sum()
    loss = float((w * r) @ r / sw)
    grad = np.empty_like(mlp.params)
    _backward(mlp, cache, (2.0 / sw) * w * r, _bind(grad, mlp.widths, mlp.activations))
    return loss, grad


class Adam:
    """Adam with bias correction.

    The corrected update lr * m_hat / (sqrt(v_hat) + eps) is evaluated as
    lr_t * m / (sqrt(v) + eps_t) with lr_t = lr * sqrt(1 - b2^t) / (1 - b1^t)
    and eps_t = eps * sqrt(1 - b2^t), which is the same quantity.
    """

    def __init__(self, n: int, lr: float):
        self.lr = lr
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self._buf = np.empty(n)

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        c2 = np.sqrt(1.0 - ADAM_BETA2 ** self.t)
        lr_t = self.lr * c2 / (1.0 - ADAM_BETA1 ** self.t)
        m, v, buf = self.m, self.v, self._buf
        m *= ADAM_BETA1
        np.multiply(grad, 1.0 - ADAM_BETA1, out=buf)
        m += buf
        v *= ADAM_BETA2
        np.multiply(grad, grad, out=buf)
        buf *= 1.0 - ADAM_BETA2
        v += buf
        np.sqrt(v, out=buf)
        buf += ADAM_EPS * c2
        np.divide(m, buf, out=buf)
        buf *= lr_t
        params -= buf


@dataclass(frozen=True)
class TrainReport:
    epochs_run: int
    final_train_loss: float  # weighted mean of the last epoch's mini-batch losses
    final_val_loss: float
    stopped_early: bool
    best_epoch: int = 0
    best_val_loss: float = float("nan")  # loss of the returned parameters
    history: tuple[tuple[float, float], ...] = field(default=(), repr=False)


def train(mlp: Mlp, features, target, w, hp: Hyperparams, seed: int = 0) -> tuple[Mlp, TrainReport]:
    """Fit by mini-batch Adam on the normalized weighted MSE.

    ``val_fraction`` of the rows (chosen by a seeded shuffle) are held out;
    training stops after ``patience`` epochs without validation improvement
    and the best-validation parameters are returned. When the held-out set
    would be empty, early stopping is disabled and the validation loss
    reported equals the training loss.
    """
    x = _as_matrix(mlp, features)
    y = np.asarray(target, dtype=np.float64)
    w = np.asarray(getattr(w, "values", w), dtype=np.float64)
    n = x.shape[0]
    if n <= 2:
        raise ValueError("need more than two samples to train")
    if y.shape != (n,) or w.shape != (n,):
        raise ValueError("target and weights must have one entry per row")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(w)) and np.all(w > 0)):
        raise ValueError("targets must be finite and weights positive and finite")

    rng = np.random.default_rng(seed)
    model = mlp.copy()
    perm = rng.permutation(n)
    n_val = int(n * hp.val_fraction)
    early = n_val >= 1
    if early:
        val_idx, tr_idx = perm[:n_val], perm[n_val:]
    else:
        val_idx, tr_idx = perm[:0], perm
    x_tr, y_tr, w_tr = x[tr_idx], y[tr_idx], w[tr_idx]
    x_val, y_val, w_val = x[val_idx], y[val_idx], w[val_idx]
    n_tr = tr_idx.shape[0]

    opt = Adam(model.n_params, hp.learning_rate)
    grad = np.empty_like(model.params)
    grad_views = _bind(grad, model.widths, model.activations)
    best_params = model.params.copy()
    best_val = np.inf
    best_epoch = 0
    wait = 0
    stopped = False
    train_loss = val_loss = float("nan")
    history = []
    bs = hp.batch_size
    epoch = 0
    for epoch in range(1, hp.epochs + 1):
        order = rng.permutation(n_tr)
        loss_sum = 0.0
        for start in range(0, n_tr, bs):
            b = order[start:start + bs]
            xb, yb, wb = x_tr[b], y_tr[b], w_tr[b]
            cache: list = []
            r = _forward(model, xb, rng, cache) - yb
            wr = wb * r
            loss_sum += wr @ r
            _backward(model, cache, wr * (2.0 / wb.sum()), grad_views)
            opt.step(model.params, grad)
        # training loss is the mean over the epoch's mini-batches (dropout on)
        train_loss = float(loss_sum / w_tr.sum())
        val_loss = weighted_mse(_forward(model, x_val, None, None), y_val, w_val) if early else train_loss
        history.append((train_loss, val_loss))
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise TrainingDivergedError(
                f"non-finite loss at epoch {epoch} (train={train_loss}, val={val_loss}); "
                f"learning_rate={hp.learning_rate} may be too large"
            )
        if not early:
            continue
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_params[...] = model.params
            wait = 0
        else:
            wait += 1
            if wait >= hp.patience:
                stopped = True
                break
    if early:
        model.params[...] = best_params
    else:
        best_val, best_epoch = val_loss, epoch
    report = TrainReport(epoch, train_loss, val_loss, stopped, best_epoch, float(best_val), tuple(history))
    return model, report


def gradient_check(mlp: Mlp, features, target, w, *, step: float = 1e-5,
                   kink_margin: float = 1e-3, seed: int = 0) -> float:
    """Largest relative error between backprop and central finite differences.

    Dropout is disabled. Rows with a relu pre-activation within
    ``kink_margin`` of zero are jittered until clear of the kink (and dropped
    if that fails) so finite differences never straddle a kink. The relative
    error of a parameter is |a - f| / max(|a| + |f|, 1e-6).
    """
    net = mlp.without_dropout()
    x = _as_matrix(net, features).copy()
    y = np.asarray(target, dtype=np.float64)
    w = np.asarray(getattr(w, "values", w), dtype=np.float64)
    rng = np.random.default_rng(seed)
    keep = np.ones(x.shape[0], dtype=bool)
    for _ in range(100):
        bad = _near_kink(net, x, kink_margin)
        if not bad.any():
            break
        x[bad] += rng.normal(0.0, 1e-2, size=(bad.sum(), x.shape[1]))
    else:
        keep = ~_near_kink(net, x, kink_margin)
    x, y, w = x[keep], y[keep], w[keep]
    if x.shape[0] == 0:
        return 0.0

    _, analytic = loss_and_grad(net, x, y, w)
    numeric = np.empty_like(analytic)
    p = net.params
    for i in range(p.shape[0]):
        old = p[i]
        p[i] = old + step
        lp = weighted_mse(_forward(net, x, None, None), y, w)
        p[i] = old - step
        lm = weighted_mse(_forward(net, x, None, None), y, w)
        p[i] = old
        numeric[i] = (lp - lm) / (2.0 * step)
    rel = np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), 1e-6)
    return float(rel.max()) if rel.size else 0.0


def _near_kink(mlp: Mlp, x: np.ndarray, margin: float) -> np.ndarray:
    bad = np.zeros(x.shape[0], dtype=bool)
    a = x
    for layer in mlp.layers:
        z = a @ layer.weight + layer.bias
        if layer.activation == RELU:
            bad |= np.any(np.abs(z) < margin, axis=1)
            a = np.maximum(z, 0.0)
        else:
            a = z
    return bad
