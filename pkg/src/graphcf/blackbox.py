"""The frozen node classifier being explained: a 3-layer GCN.

The explainer only ever sees :meth:`BlackBoxModel.log_probs` (and helpers built
on it); weights stay private to this module.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .graph import Graph, GraphError, normalized_adjacency

log = logging.getLogger(__name__)

PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


def _norm_adj(g: Graph):
    # cached on the graph instance; graphs are immutable
    a = g.__dict__.get("_norm_adj")
    if a is None:
        a = normalized_adjacency(g)
        g.__dict__["_norm_adj"] = a
    return a


@dataclass
class BlackBoxModel:
    params: dict[str, ad.Tensor]
    meta: dict = field(default_factory=dict)

    @property
    def in_dim(self) -> int:
        return self.params["W1"].shape[0]

    @property
    def hidden(self) -> int:
        return self.params["W1"].shape[1]

    @property
    def n_classes(self) -> int:
        return self.params["W3"].shape[1]

    @classmethod
    def init(cls, in_dim: int, hidden: int, n_classes: int, seed=0) -> "BlackBoxModel":
        """Glorot weights; hidden biases drawn from U(-1, 1).

        With constant node features every node starts from the same input, and
        zero hidden biases leave all ReLU thresholds at the same place, which
        stalls training at the class prior. Spread-out biases avoid that.
        """
        rng = np.random.default_rng(seed)
        dims = [in_dim, hidden, hidden, n_classes]
        params = {}
        for i in range(3):
            params[f"W{i + 1}"] = ad.parameter(ad.glorot(rng, dims[i], dims[i + 1]), f"W{i + 1}")
            b = rng.uniform(-1.0, 1.0, size=dims[i + 1]) if i < 2 else np.zeros(dims[i + 1])
            params[f"b{i + 1}"] = ad.parameter(b, f"b{i + 1}")
        return cls(params, {"in_dim": in_dim, "hidden": hidden, "n_classes": n_classes})

    def _check(self, g: Graph) -> None:
        if g.feature_dim != self.in_dim:
            raise GraphError(f"graph has {g.feature_dim} features, model expects {self.in_dim}")

    def forward(self, g: Graph) -> ad.Tensor:
        """Differentiable forward pass (used for training)."""
        self._check(g)
        a = _norm_adj(g)
        p = self.params
        h = ad.Tensor(g.features)
        h = ad.relu(ad.add_bias(ad.sparse_aggregate(a, h @ p["W1"]), p["b1"]))
        h = ad.relu(ad.add_bias(ad.sparse_aggregate(a, h @ p["W2"]), p["b2"]))
        h = ad.add_bias(ad.sparse_aggregate(a, h @ p["W3"]), p["b3"])
        return ad.log_softmax(h)

    def log_probs(self, g: Graph) -> np.ndarray:
        """Per-node log-probabilities, ``n_nodes x n_classes``."""
        self._check(g)
        a = _norm_adj(g)
        p = {k: v.data for k, v in self.params.items()}
        h = np.maximum(a @ (g.features @ p["W1"]) + p["b1"], 0.0)
        h = np.maximum(a @ (h @ p["W2"]) + p["b2"], 0.0)
        z = a @ (h @ p["W3"]) + p["b3"]
        z = z - z.max(axis=1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    def predict_all(self, g: Graph) -> np.ndarray:
        return np.argmax(self.log_probs(g), axis=1)

    def predict(self, g: Graph, v: int) -> int:
        return int(np.argmax(self.log_probs(g)[g.check_node(v)]))

    def class_probs(self, g: Graph, v: int) -> np.ndarray:
        return np.exp(self.log_probs(g)[g.check_node(v)])

    def node_entropy(self, g: Graph, v: int) -> float:
        return float(entropy(self.class_probs(g, v)))

    # -- persistence ---------------------------------------------------------

    def save(self, path: str | Path) -> None:
        ad.save_params(path, self.params, header=dict(self.meta, kind="gcn-blackbox"))

    @classmethod
    def load(cls, path: str | Path) -> "BlackBoxModel":
        doc = json.loads(Path(path).read_text())
        header = doc.get("header", {})
        params = ad.params_from_json(doc["params"])
        if set(params) != set(PARAM_NAMES):
            raise ad.ShapeError(f"black-box checkpoint needs parameters {PARAM_NAMES}")
        d, hdim, c = header.get("in_dim"), header.get("hidden"), header.get("n_classes")
        expected = {"W1": (d, hdim), "b1": (hdim,), "W2": (hdim, hdim), "b2": (hdim,), "W3": (hdim, c), "b3": (c,)}
        ad.params_from_json(doc["params"], expected)
        return cls(params, header)


def entropy(probs: np.ndarray) -> np.ndarray:
    """Shannon entropy (natural log) along the last axis with ``0 ln 0 = 0``."""
    p = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(axis=-1)


def predict_from_probs(probs: Sequence[float]) -> int:
    return int(np.argmax(np.asarray(probs)))


def split_nodes(nodes: Sequence[int], train_frac: float, seed: int) -> tuple[list[int], list[int]]:
    """Seeded random split; returns sorted (train, test) node lists."""
    nodes = np.array(sorted(int(v) for v in nodes), dtype=np.int64)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(nodes))
    n_train = int(round(train_frac * len(nodes)))
    return sorted(nodes[perm[:n_train]].tolist()), sorted(nodes[perm[n_train:]].tolist())


@dataclass
class TrainReport:
    train_accuracy: float
    test_accuracy: float
    epochs: int
    final_loss: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def accuracy(model: BlackBoxModel, g: Graph, nodes: Sequence[int]) -> float:
    if len(nodes) == 0:
        return float("nan")
    pred = model.predict_all(g)
    idx = np.asarray(nodes, dtype=np.int64)
    return float(np.mean(pred[idx] == g.true_labels[idx]))


def _fit(g, idx, targets, model, lr, epochs, weight_decay) -> float:
    opt = ad.Adam(list(model.params.values()), lr)
    loss_val = float("nan")
    for epoch in range(epochs):
        opt.zero_grad()
        loss = ad.nll_pick(ad.gather_rows(model.forward(g), idx), targets)
        if weight_decay:
            for name in ("W1", "W2", "W3"):
                w = model.params[name]
                loss = loss + weight_decay * ad.sum_all(w * w)
        loss.backward()
        opt.step()
        loss_val = loss.item()
        if epoch % 200 == 0:
            log.debug("epoch %d loss %.4f", epoch, loss_val)
    return loss_val


def train_blackbox(
    g: Graph,
    train_nodes: Sequence[int],
    test_nodes: Sequence[int],
    lr: float = 0.01,
    epochs: int = 1000,
    seed: int = 0,
    hidden: int = 20,
    weight_decay: float = 0.0,
    restarts: int = 3,
) -> tuple[BlackBoxModel, TrainReport]:
    """Full-batch Adam on the mean NLL of ``train_nodes``.

    Trains ``restarts`` independently initialised models and keeps the one with
    the lowest final training loss; test nodes play no part in the choice.
    """
    if len(train_nodes) == 0:
        raise GraphError("empty training split")
    if set(train_nodes) & set(test_nodes):
        raise GraphError("train and test splits overlap")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    idx = np.asarray(train_nodes, dtype=np.int64)
    targets = g.true_labels[idx]
    best, best_loss = None, float("inf")
    for r in range(restarts):
        model = BlackBoxModel.init(g.feature_dim, hidden, g.n_classes, (seed, r))
        loss_val = _fit(g, idx, targets, model, lr, epochs, weight_decay)
        log.info("black-box restart %d: final loss %.4f", r, loss_val)
        if best is None or loss_val < best_loss:
            best, best_loss = model, loss_val
    model, loss_val = best, best_loss
    model.meta.update(
        seed=seed, epochs=epochs, lr=lr, restarts=restarts,
        n_train=len(train_nodes), n_test=len(test_nodes),
    )
    report = TrainReport(
        accuracy(model, g, train_nodes), accuracy(model, g, test_nodes), epochs, loss_val
    )
    model.meta.update(train_accuracy=report.train_accuracy, test_accuracy=report.test_accuracy)
    return model, report
