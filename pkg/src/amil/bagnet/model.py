"""Permutation-invariant bag classifier with hand-written gradients.

Topology (fixed)::

    x -> standardize -> [dense(no bias) -> batchnorm -> ELU -> dropout] x 3
      -> mean over events in the bag -> dense head

Batches are ``[M, N_B, d]`` arrays of equal-size bags.  Batch-norm statistics
are taken over the flattened ``M * N_B`` event axis because normalization
happens before pooling.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit as _sigmoid

from .. import kernels
from ..errors import HeadMismatchError, InvalidBagError, InvalidLabelError, ShapeError
from ..rng import make_rng
from ..synthdata import Bag

__all__ = [
    "HeadKind",
    "BagModel",
    "HeadOutput",
    "n_trainable_params",
    "as_batch",
    "adapt_normalization",
    "forward_batch",
    "embed",
    "pool",
    "forward",
    "loss_and_grad",
    "predict_proba",
    "logits_batch",
]

N_LAYERS = 3


class HeadKind(str, enum.Enum):
    BINARY = "binary"
    MULTICLASS = "multiclass"
    PARAM = "param"


HEAD_TAGS = {HeadKind.BINARY: 0, HeadKind.MULTICLASS: 1, HeadKind.PARAM: 2}


def n_trainable_params(n_features: int, head: HeadKind | str = "binary", n_classes: int = 2,
                       width: int = 64) -> int:
    """Closed-form trainable parameter count.

    Hidden dense layers carry no bias (batch norm's shift replaces it); each
    batch norm contributes a scale and a shift per unit.
    """
    head = HeadKind(head)
    d_in = n_features + 1 if head is HeadKind.PARAM else n_features
    n_out = n_classes if head is HeadKind.MULTICLASS else 1
    hidden = d_in * width + (N_LAYERS - 1) * width * width + N_LAYERS * 2 * width
    return hidden + width * n_out + n_out


@dataclass
class BagModel:
    head: HeadKind
    n_features: int
    n_classes: int = 1
    width: int = 64
    dropout: float = 0.1
    l2: float = 1e-3
    bn_eps: float = 1e-3
    bn_momentum: float = 0.99
    rng_seed: int = 0
    params: dict = field(default_factory=dict)
    state: dict = field(default_factory=dict)
    adapted: bool = False

    @classmethod
    def create(cls, head, n_features: int, n_classes: int = 2, width: int = 64,
               seed: int = 0, **kw) -> "BagModel":
        head = HeadKind(head)
        n_out = n_classes if head is HeadKind.MULTICLASS else 1
        if head is HeadKind.MULTICLASS and n_classes < 2:
            raise ValueError("multi-class head needs at least 2 classes")
        m = cls(head, int(n_features), n_out, int(width), rng_seed=int(seed), **kw)
        m._init_params()
        return m

    @property
    def input_dim(self) -> int:
        return self.n_features + 1 if self.head is HeadKind.PARAM else self.n_features

    def param_names(self) -> list[str]:
        names = []
        for l in range(N_LAYERS):
            names += [f"W{l}", f"gamma{l}", f"beta{l}"]
        return names + ["W_out", "b_out"]

    def state_names(self) -> list[str]:
        names = ["norm_mean", "norm_std"]
        for l in range(N_LAYERS):
            names += [f"running_mean{l}", f"running_var{l}"]
        return names

    def kernel_names(self) -> list[str]:
        return [f"W{l}" for l in range(N_LAYERS)]

    def _init_params(self):
        rng = make_rng(self.rng_seed, "init")
        w, p, s = self.width, {}, {}
        fan_in = self.input_dim
        for l in range(N_LAYERS):
            # LeCun-uniform: U(-sqrt(3/fan_in), sqrt(3/fan_in))
            lim = math.sqrt(3.0 / fan_in)
            p[f"W{l}"] = rng.uniform(-lim, lim, (fan_in, w))
            p[f"gamma{l}"] = np.ones(w)
            p[f"beta{l}"] = np.zeros(w)
            s[f"running_mean{l}"] = np.zeros(w)
            s[f"running_var{l}"] = np.ones(w)
            fan_in = w
        lim = math.sqrt(3.0 / w)
        p["W_out"] = rng.uniform(-lim, lim, (w, self.n_classes))
        p["b_out"] = np.zeros(self.n_classes)
        s["norm_mean"] = np.zeros(self.input_dim)
        s["norm_std"] = np.ones(self.input_dim)
        self.params, self.state = p, s

    def n_trainable(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def copy(self) -> "BagModel":
        m = BagModel(**{k: getattr(self, k) for k in (
            "head", "n_features", "n_classes", "width", "dropout", "l2", "bn_eps",
            "bn_momentum", "rng_seed", "adapted")})
        m.params = {k: v.copy() for k, v in self.params.items()}
        m.state = {k: v.copy() for k, v in self.state.items()}
        return m

    def get_weights(self) -> dict:
        return {k: v.copy() for k, v in {**self.params, **self.state}.items()}

    def set_weights(self, weights: dict):
        for k in self.params:
            self.params[k] = weights[k].copy()
        for k in self.state:
            self.state[k] = weights[k].copy()


@dataclass
class HeadOutput:
    logits: np.ndarray
    probabilities: np.ndarray

    @property
    def logit(self) -> float:
        return float(self.logits[0])

    @property
    def probability(self) -> float:
        return float(self.probabilities[0])


def as_batch(model: BagModel, bags, thetas=None) -> np.ndarray:
    """Normalize bag input to a contiguous ``[M, N_B, input_dim]`` array.

    ``bags`` may be a :class:`Bag`, a list of bags, a 2-D array (one bag) or a
    3-D array.  For a parameterized head, ``thetas`` (scalar or one per bag)
    is appended to every event row unless the input already has the extra
    column.
    """
    if isinstance(bags, Bag):
        x = bags.events[None]
    elif isinstance(bags, (list, tuple)):
        if not bags:
            raise InvalidBagError("empty batch")
        x = np.stack([b.events if isinstance(b, Bag) else np.asarray(b) for b in bags])
    else:
        x = np.asarray(bags, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
    if x.ndim != 3:
        raise ShapeError(f"expected [M, N_B, d] bags, got shape {x.shape}")
    if x.shape[1] < 1:
        raise InvalidBagError("bags must contain at least one event")
    if thetas is not None:
        if model.head is not HeadKind.PARAM:
            raise HeadMismatchError("theta inputs need a parameterized head")
        t = np.broadcast_to(np.asarray(thetas, dtype=np.float64).reshape(-1, 1, 1),
                            (x.shape[0], x.shape[1], 1))
        x = np.concatenate([x, t], axis=2)
    if x.shape[2] != model.input_dim:
        raise ShapeError(f"model expects {model.input_dim} features per event, got {x.shape[2]}")
    return np.ascontiguousarray(x, dtype=np.float64)


def adapt_normalization(model: BagModel, events: np.ndarray) -> None:
    """Fit the per-feature standardization to training events ``[n, input_dim]``."""
    events = np.asarray(events, dtype=np.float64).reshape(-1, model.input_dim)
    std = events.std(axis=0)
    model.state["norm_mean"] = events.mean(axis=0)
    model.state["norm_std"] = np.where(std > 0, std, 1.0)
    model.adapted = True


def _hidden(model: BagModel, x: np.ndarray, training: bool, rng, cache):
    p, s = model.params, model.state
    h = (x - s["norm_mean"]) / s["norm_std"]
    if cache is not None:
        cache["h_in"] = h
    keep = 1.0 - model.dropout
    for l in range(N_LAYERS):
        z = h @ p[f"W{l}"]
        if training:
            a, xhat, mean, var = kernels.bn_elu_forward_train(
                z, p[f"gamma{l}"], p[f"beta{l}"], model.bn_eps)
        else:
            a = kernels.bn_elu_forward_eval(
                z, p[f"gamma{l}"], p[f"beta{l}"], s[f"running_mean{l}"],
                s[f"running_var{l}"], model.bn_eps)
        mask = None
        if training and rng is not None and model.dropout > 0:
            mask = (rng.random(a.shape) < keep) / keep
            h = a * mask
        else:
            h = a
        if cache is not None:
            cache[l] = (a, xhat, var, mask) if training else (a, None, None, None)
            if training:
                cache[f"batch_mean{l}"] = mean
                cache[f"batch_var{l}"] = var
            cache[f"h{l}"] = h
    return h


def forward_batch(model: BagModel, x: np.ndarray, training: bool = False, rng=None,
                  cache: dict | None = None) -> np.ndarray:
    """Logits ``[M, n_out]`` for a prepared batch ``[M, N_B, input_dim]``.

    In training mode batch norm uses batch statistics and, when ``rng`` is
    given, dropout is applied with masks drawn from it.
    """
    m, n_b, d = x.shape
    h = _hidden(model, x.reshape(m * n_b, d), training, rng, cache)
    pooled = kernels.bag_mean_pool(h, n_b)
    if cache is not None:
        cache["pooled"] = pooled
    return pooled @ model.params["W_out"] + model.params["b_out"]


def embed(model: BagModel, bag, training_mode: bool = False, rng=None, theta=None) -> np.ndarray:
    """Per-event embeddings ``[N_B, width]`` after the three hidden layers."""
    x = as_batch(model, bag, theta)
    if x.shape[0] != 1:
        raise ShapeError("embed takes a single bag")
    return _hidden(model, x[0], training_mode, rng, None)


def pool(embeddings) -> np.ndarray:
    e = np.asarray(embeddings, dtype=np.float64)
    if e.ndim != 2 or e.shape[0] == 0:
        raise InvalidBagError("pooling needs a non-empty [N_B, width] matrix")
    return e.mean(axis=0)


def _softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _probs(model: BagModel, logits: np.ndarray) -> np.ndarray:
    return _softmax(logits) if model.head is HeadKind.MULTICLASS else _sigmoid(logits)


def forward(model: BagModel, bag, training_mode: bool = False, rng=None, theta=None) -> HeadOutput:
    """Head output for one bag.

    For a parameterized head pass ``theta``; it is appended to every event.
    """
    x = as_batch(model, bag, theta)
    logits = forward_batch(model, x, training_mode, rng)[0]
    return HeadOutput(logits, _probs(model, logits))


def logits_batch(model: BagModel, x, thetas=None, chunk_events: int = 200_000) -> np.ndarray:
    """Eval-mode logits for many bags, evaluated in memory-bounded chunks."""
    x = as_batch(model, x, thetas)
    step = max(1, chunk_events // x.shape[1])
    out = [forward_batch(model, x[i:i + step]) for i in range(0, x.shape[0], step)]
    return np.concatenate(out, axis=0)


def predict_proba(model: BagModel, x, thetas=None) -> np.ndarray:
    return _probs(model, logits_batch(model, x, thetas))


def _check_labels(model: BagModel, y) -> np.ndarray:
    y = np.asarray(y)
    if model.head is HeadKind.MULTICLASS:
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(y == np.round(y)):
                raise InvalidLabelError("multi-class labels must be integer class indices")
            y = y.astype(np.int64)
        if y.size and (y.min() < 0 or y.max() >= model.n_classes):
            raise InvalidLabelError(f"class labels must lie in [0, {model.n_classes})")
    else:
        if not np.all((y == 0) | (y == 1)):
            raise InvalidLabelError("binary labels must be 0 or 1")
        y = y.astype(np.float64)
    return y


def data_loss(model: BagModel, logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    m = logits.shape[0]
    if model.head is HeadKind.MULTICLASS:
        z = logits - logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1))
        loss = float(np.mean(lse - z[np.arange(m), y]))
        g = _softmax(logits)
        g[np.arange(m), y] -= 1.0
        return loss, g / m
    z = logits[:, 0]
    loss = float(np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))))
    return loss, ((_sigmoid(z) - y) / m)[:, None]


def l2_penalty(model: BagModel, l2: float | None = None) -> float:
    l2 = model.l2 if l2 is None else l2
    return float(l2 * sum(np.sum(model.params[k] ** 2) for k in model.kernel_names()))


def loss_and_grad(model: BagModel, bags, labels, rng=None, l2: float | None = None,
                  thetas=None, stats: dict | None = None) -> tuple[float, dict]:
    """Training-mode loss (mean cross-entropy + L2 on hidden kernels) and its gradient.

    Dropout is applied only when ``rng`` is given.  If ``stats`` is a dict it
    receives the batch-norm batch statistics for the running-average update.
    """
    x = as_batch(model, bags, thetas)
    y = _check_labels(model, labels)
    if y.shape[0] != x.shape[0]:
        raise ShapeError(f"{x.shape[0]} bags but {y.shape[0]} labels")
    l2 = model.l2 if l2 is None else l2
    m, n_b, _ = x.shape
    cache: dict = {}
    logits = forward_batch(model, x, True, rng, cache)
    loss, dlogits = data_loss(model, logits, y)
    loss += l2_penalty(model, l2)

    p = model.params
    g = {"W_out": cache["pooled"].T @ dlogits, "b_out": dlogits.sum(axis=0)}
    dh = kernels.bag_mean_pool_backward(np.ascontiguousarray(dlogits @ p["W_out"].T), n_b)
    for l in reversed(range(N_LAYERS)):
        a, xhat, var, mask = cache[l]
        if mask is not None:
            dh = dh * mask
        dz, g[f"gamma{l}"], g[f"beta{l}"] = kernels.bn_elu_backward(
            dh, a, xhat, p[f"gamma{l}"], var, model.bn_eps)
        h_prev = cache[f"h{l - 1}"] if l > 0 else cache["h_in"]
        g[f"W{l}"] = h_prev.T @ dz + 2.0 * l2 * p[f"W{l}"]
        if l > 0:
            dh = dz @ p[f"W{l}"].T
    if stats is not None:
        for l in range(N_LAYERS):
            stats[f"batch_mean{l}"] = cache[f"batch_mean{l}"]
            stats[f"batch_var{l}"] = cache[f"batch_var{l}"]
    return loss, g


def update_running_stats(model: BagModel, stats: dict) -> None:
    mom = model.bn_momentum
    for l in range(N_LAYERS):
        for key in ("mean", "var"):
            r = model.state[f"running_{key}{l}"]
            r *= mom
            r += (1.0 - mom) * stats[f"batch_{key}{l}"]
