"""Two-layer MLP / GCN for semi-supervised node classification.

Forward and backward passes are written out by hand in numpy. The
aggregation operator is the self-loop, symmetric-normalised adjacency. For
binary graphs this is ``(A + I)`` scaled by ``1/sqrt((1+deg_i)(1+deg_j))``.
For weighted graphs, ``P_hat = P + I`` is normalised by the product of its
row sums.
"""

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.special import log_softmax, softmax
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_adjacency
from .exceptions import ConfigError, DataError, DivergenceError
from .graph import Graph
from .reconstruction import EstimatedGraph

__all__ = [
    "ModelConfig",
    "TrainedModel",
    "aggregation_operator",
    "normalize_rows",
    "init_params",
    "gcn_forward",
    "mlp_forward",
    "loss_and_grads",
    "train",
    "predict_scores",
    "evaluate",
    "GCNClassifier",
    "MLPClassifier",
]

# Weighted operators denser than this are kept as dense arrays.
_DENSE_THRESHOLD = 0.05


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 16
    dropout: float = 0.1
    learning_rate: float = 0.01
    weight_decay: float = 1e-4
    epochs: int = 300
    seed: int = 0
    normalize_features: bool = True

    def __post_init__(self):
        if int(self.hidden) < 1:
            raise ConfigError("hidden must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not self.weight_decay >= 0:
            raise ConfigError("weight_decay must be non-negative")
        if int(self.epochs) < 1:
            raise ConfigError("epochs must be >= 1")

    @classmethod
    def from_dict(cls, values):
        unknown = set(values) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**values)


@dataclass(eq=False)
class TrainedModel:
    params: dict
    config: ModelConfig
    best_epoch: int
    history: list = field(default_factory=list)

    def save(self, path):
        payload = {
            "config": asdict(self.config),
            "best_epoch": self.best_epoch,
            "params": {k: {"shape": list(v.shape), "values": v.ravel().tolist()}
                       for k, v in self.params.items()},
        }
        Path(path).write_text(json.dumps(payload))

    @classmethod
    def load(cls, path):
        payload = json.loads(Path(path).read_text())
        params = {k: np.asarray(v["values"], dtype=np.float64).reshape(v["shape"])
                  for k, v in payload["params"].items()}
        return cls(params, ModelConfig(**payload["config"]), payload["best_epoch"])

    def save_history(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss", "val_acc"])
            for row in self.history:
                writer.writerow([row["epoch"], repr(row["loss"]), repr(row["val_acc"])])


def _structure_matrix(structure, n):
    """Return ``(matrix, weighted)`` for any accepted graph-like input."""
    if structure is None:
        return None, False
    if isinstance(structure, Graph):
        return structure.adjacency, False
    if isinstance(structure, EstimatedGraph):
        return structure.weights, not structure.is_binary
    if sp.issparse(structure):
        m = sp.csr_matrix(structure, dtype=np.float64)
        return m, bool(np.any((m.data != 0) & (m.data != 1)))
    a = np.asarray(structure)
    if a.dtype == np.bool_:
        return check_adjacency(a), False
    a = check_adjacency(a, weighted=True)
    weighted = bool(np.any((a != 0) & (a != 1)))
    return (a if weighted else a.astype(bool)), weighted


def aggregation_operator(structure, n):
    """Normalised aggregation matrix with self-loops (identity when ``structure`` is None)."""
    m, weighted = _structure_matrix(structure, n)
    if m is None:
        return sp.identity(n, format="csr")
    if m.shape != (n, n):
        raise DataError(f"graph has {m.shape[0]} nodes but features have {n} rows")
    if sp.issparse(m):
        dense_ok = False
        nnz = m.nnz
    else:
        nnz = int(np.count_nonzero(m))
        dense_ok = nnz > _DENSE_THRESHOLD * n * n
    if dense_ok:
        p_hat = np.asarray(m, dtype=np.float64) + np.eye(n)
        scale = 1.0 / np.sqrt(p_hat.sum(axis=1))
        p_hat *= scale[:, None]
        p_hat *= scale[None, :]
        return p_hat
    p_hat = sp.csr_matrix(m, dtype=np.float64) + sp.identity(n, format="csr")
    scale = sp.diags(1.0 / np.sqrt(np.asarray(p_hat.sum(axis=1)).ravel()))
    return sp.csr_matrix(scale @ p_hat @ scale)


def normalize_rows(features):
    features = np.asarray(features, dtype=np.float64)
    sums = features.sum(axis=1, keepdims=True)
    return np.divide(features, sums, out=np.zeros_like(features), where=sums != 0)


def init_params(in_dim, hidden, n_classes, rng):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and zero biases."""
    b1, b2 = 1.0 / np.sqrt(in_dim), 1.0 / np.sqrt(hidden)
    return {
        "W1": rng.uniform(-b1, b1, size=(in_dim, hidden)),
        "b1": np.zeros(hidden),
        "W2": rng.uniform(-b2, b2, size=(hidden, n_classes)),
        "b2": np.zeros(n_classes),
    }


def _dense(x):
    return x.toarray() if sp.issparse(x) else np.asarray(x)


def _hidden(params, agg_x, mask=None):
    z1 = _dense(agg_x @ params["W1"]) + params["b1"]
    h = np.maximum(z1, 0.0)
    return z1, (h if mask is None else h * mask)


def _forward(params, op, agg_x, mask=None):
    z1, hd = _hidden(params, agg_x, mask)
    z2 = _dense(op @ (hd @ params["W2"])) + params["b2"]
    return z2, (z1, hd)


def gcn_forward(structure, features, params):
    """Class scores (logits) of the two-layer GCN; dropout is inactive."""
    features = np.asarray(features, dtype=np.float64)
    op = aggregation_operator(structure, features.shape[0])
    return _forward(params, op, _dense(op @ features))[0]


def mlp_forward(features, params):
    """Class scores of the same two-layer network without neighbour aggregation."""
    features = np.asarray(features, dtype=np.float64)
    z1 = features @ params["W1"] + params["b1"]
    return np.maximum(z1, 0.0) @ params["W2"] + params["b2"]


def loss_and_grads(params, op, agg_x, labels, index, weight_decay, mask=None, op_rows=None):
    """Mean cross-entropy over ``index`` plus ``weight_decay/2 * ||W||^2``, and its gradient.

    ``mask`` is the already-scaled dropout mask applied to the hidden layer.
    ``op_rows`` may carry a precomputed ``op[index]``; only those rows of the
    aggregation operator reach the loss.
    """
    index = np.asarray(index)
    if op_rows is None:
        op_rows = op[index]
    z1, hd = _hidden(params, agg_x, mask)
    scores = _dense(op_rows @ (hd @ params["W2"])) + params["b2"]
    logp = log_softmax(scores, axis=1)
    rows = np.arange(index.shape[0])
    target = np.asarray(labels)[index]
    loss = -logp[rows, target].mean()
    loss += 0.5 * weight_decay * (np.sum(params["W1"] ** 2) + np.sum(params["W2"] ** 2))

    d_scores = np.exp(logp)
    d_scores[rows, target] -= 1.0
    d_scores /= index.shape[0]
    back = _dense(op_rows.T @ d_scores)
    grads = {"b2": d_scores.sum(axis=0), "W2": hd.T @ back + weight_decay * params["W2"]}
    d_h = back @ params["W2"].T
    if mask is not None:
        d_h *= mask
    d_z1 = d_h * (z1 > 0)
    grads["W1"] = _dense(agg_x.T @ d_z1) + weight_decay * params["W1"]
    grads["b1"] = d_z1.sum(axis=0)
    return float(loss), grads


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _prepare(structure, features, normalize):
    features = check_array(features, dtype=np.float64)
    if normalize:
        features = normalize_rows(features)
    op = aggregation_operator(structure, features.shape[0])
    if not sp.issparse(op):
        return op, op @ features
    agg_x = sp.csr_matrix(op @ sp.csr_matrix(features))
    # Sparse graphs over bag-of-words features stay sparse after aggregation.
    if agg_x.nnz > _DENSE_THRESHOLD * 4 * agg_x.shape[0] * agg_x.shape[1]:
        agg_x = agg_x.toarray()
    return op, agg_x


def _accuracy(scores, labels, index):
    return float(np.mean(np.argmax(scores[index], axis=1) == labels[index]))


def train(structure, features, labels, split, config=None):
    """Full-batch Adam training on ``split.train``.

    The parameters from the epoch with the best validation accuracy are
    kept (earliest epoch on ties). ``structure=None`` trains the MLP.

    Raises
    ------
    DivergenceError
        If the loss becomes non-finite; ``epoch`` names the epoch.
    """
    config = config or ModelConfig()
    labels = np.asarray(labels, dtype=np.int64)
    train_idx = np.asarray(split.train)
    if train_idx.size == 0:
        raise DataError("training split is empty")
    val_idx = np.asarray(split.val)
    op, agg_x = _prepare(structure, features, config.normalize_features)
    rng = np.random.default_rng(config.seed)
    n_classes = int(labels.max()) + 1
    params = init_params(agg_x.shape[1], int(config.hidden), n_classes, rng)
    opt = _Adam(params, config.learning_rate)
    keep = 1.0 - config.dropout

    op_train = op[train_idx]
    op_val = op[val_idx] if val_idx.size else None
    best = (-1.0, 0, {k: v.copy() for k, v in params.items()})
    history = []
    for epoch in range(1, int(config.epochs) + 1):
        mask = None
        if config.dropout > 0:
            mask = (rng.random((agg_x.shape[0], int(config.hidden))) < keep) / keep
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grads = loss_and_grads(params, op, agg_x, labels, train_idx,
                                         config.weight_decay, mask, op_train)
            finite = np.isfinite(loss) and all(np.all(np.isfinite(g)) for g in grads.values())
            if finite:
                opt.step(params, grads)
                finite = all(np.all(np.isfinite(v)) for v in params.values())
        if not finite:
            raise DivergenceError(f"training became non-finite at epoch {epoch}", epoch=epoch)
        if val_idx.size:
            with np.errstate(over="ignore", invalid="ignore"):
                _, h = _hidden(params, agg_x)
                val_scores = _dense(op_val @ (h @ params["W2"])) + params["b2"]
            val_acc = float(np.mean(np.argmax(val_scores, axis=1) == labels[val_idx]))
        else:
            val_acc = float("nan")
        history.append({"epoch": epoch, "loss": loss, "val_acc": val_acc})
        if not val_idx.size or val_acc > best[0]:
            best = (val_acc, epoch, {k: v.copy() for k, v in params.items()})
    return TrainedModel(best[2], config, best[1], history)


def predict_scores(model, structure, features):
    op, agg_x = _prepare(structure, features, model.config.normalize_features)
    return _forward(model.params, op, agg_x)[0]


def evaluate(model, structure, features, labels, index):
    """Share of nodes in ``index`` whose arg-max class (lowest id on ties) is correct."""
    index = np.asarray(index)
    if index.size == 0:
        raise DataError("cannot evaluate on an empty index set")
    scores = predict_scores(model, structure, features)
    return _accuracy(scores, np.asarray(labels), index)


class GCNClassifier(ClassifierMixin, BaseEstimator):
    """Transductive GCN classifier with an sklearn-compatible surface.

    The graph is passed to ``fit`` and kept for prediction. Nodes labelled
    ``-1`` are treated as unlabelled unless ``train_idx`` is given.

    Examples
    --------
    >>> clf = GCNClassifier(epochs=50).fit(X, y, graph=A, train_idx=tr, val_idx=va)
    >>> clf.predict(X)[te]
    """

    def __init__(self, hidden=16, dropout=0.1, learning_rate=0.01, weight_decay=1e-4,
                 epochs=300, random_state=0, normalize_features=True):
        self.hidden = hidden
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.random_state = random_state
        self.normalize_features = normalize_features

    def _config(self):
        return ModelConfig(self.hidden, self.dropout, self.learning_rate, self.weight_decay,
                           self.epochs, self.random_state, self.normalize_features)

    def fit(self, X, y, graph=None, train_idx=None, val_idx=None):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y)
        self.classes_, encoded = np.unique(y[y >= 0], return_inverse=True)
        labels = np.full(y.shape[0], -1, dtype=np.int64)
        labels[y >= 0] = encoded
        if train_idx is None:
            train_idx = np.flatnonzero(labels >= 0)
        if np.any(labels[np.asarray(train_idx)] < 0):
            raise DataError("training nodes must be labelled")
        val_idx = np.empty(0, dtype=np.int64) if val_idx is None else np.asarray(val_idx)
        split = _Split(np.asarray(train_idx), val_idx)
        safe = np.where(labels >= 0, labels, 0)
        self.graph_ = graph
        self.model_ = train(graph, X, safe, split, self._config())
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return softmax(predict_scores(self.model_, self.graph_, X), axis=1)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


class MLPClassifier(GCNClassifier):
    """The same network trained with every link removed."""

    def fit(self, X, y, graph=None, train_idx=None, val_idx=None):
        return super().fit(X, y, None, train_idx, val_idx)


@dataclass(frozen=True)
class _Split:
    train: np.ndarray
    val: np.ndarray
