"""The perturbation environment: states, action sets, rewards and returns.

The world of an episode is the ``h``-hop neighbourhood of the target node,
measured once on the original graph. Within it the agent may delete any
present edge, or add an edge between the target and a node it is not yet
attached to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .autodiff import NumericError
from .blackbox import BlackBoxModel, entropy
from .graph import EditKind, Graph, Perturbation, khop_neighborhood

REWARD_EPS = 1e-6
REWARD_CAP = 1e6


@dataclass(frozen=True)
class FeatureFlags:
    """Which per-node heuristics are appended to the raw node features."""

    degree: bool = True
    entropy: bool = True
    onehot: bool = True

    def dim(self, d_feat: int, n_classes: int) -> int:
        return d_feat + int(self.degree) + int(self.entropy) + (n_classes if self.onehot else 0)


@dataclass(frozen=True, eq=False)
class State:
    target: int
    t: int
    node_order: tuple[int, ...]
    vectors: np.ndarray
    graph_t: Graph
    # local (row-index) endpoints of edges of graph_t inside the neighbourhood
    local_edges: np.ndarray = field(repr=False)

    @property
    def index(self) -> dict[int, int]:
        return {u: i for i, u in enumerate(self.node_order)}


@dataclass(frozen=True)
class ActionSpace:
    deletions: tuple[Perturbation, ...]
    additions: tuple[Perturbation, ...]

    @property
    def actions(self) -> tuple[Perturbation, ...]:
        return self.deletions + self.additions

    def __len__(self) -> int:
        return len(self.deletions) + len(self.additions)

    def __bool__(self) -> bool:
        return len(self) > 0


def neighborhood(g0: Graph, v: int, h: int) -> tuple[int, ...]:
    """Cached ``khop_neighborhood`` on the original graph."""
    cache = g0.__dict__.setdefault("_khop_cache", {})
    key = (int(v), int(h))
    if key not in cache:
        cache[key] = khop_neighborhood(g0, v, h)
    return cache[key]


def local_edges(g_t: Graph, node_order: Sequence[int]) -> list[tuple[int, int]]:
    """Canonical edges of ``g_t`` with both endpoints in ``node_order``, sorted."""
    members = set(node_order)
    adj = g_t.adjacency_lists
    out = []
    for u in node_order:
        for w in adj[u]:
            if w > u and w in members:
                out.append((u, w))
    out.sort()
    return out


def build_state(
    g_t: Graph,
    g0: Graph,
    v: int,
    h: int,
    m: BlackBoxModel,
    t: int,
    log_probs: Optional[np.ndarray] = None,
    flags: FeatureFlags = FeatureFlags(),
) -> State:
    """Node vectors ``features || degree || entropy || one-hot(predicted label)``.

    ``log_probs`` may be passed in when the caller already ran ``m`` on ``g_t``.
    """
    v = g0.check_node(v)
    order = neighborhood(g0, v, h)
    idx = np.asarray(order, dtype=np.int64)
    if log_probs is None:
        log_probs = m.log_probs(g_t)
    lp = log_probs[idx]
    cols = [g_t.features[idx]]
    if flags.degree:
        cols.append(g_t.degrees[idx].astype(np.float64)[:, None])
    if flags.entropy:
        cols.append(entropy(np.exp(lp))[:, None])
    if flags.onehot:
        onehot = np.zeros((len(idx), g_t.n_classes))
        onehot[np.arange(len(idx)), np.argmax(lp, axis=1)] = 1.0
        cols.append(onehot)
    vectors = np.concatenate(cols, axis=1)
    pos = {u: i for i, u in enumerate(order)}
    edges = local_edges(g_t, order)
    le = np.array([(pos[a], pos[b]) for a, b in edges], dtype=np.int64).reshape(-1, 2)
    return State(v, t, order, vectors, g_t, le)


def enumerate_actions(
    g_t: Graph, g0: Graph, v: int, h: int, deletion_only: bool = False
) -> ActionSpace:
    """Deletions inside the neighbourhood, then additions ``(v, u)`` ordered by ``u``."""
    v = g0.check_node(v)
    order = neighborhood(g0, v, h)
    deletions = tuple(Perturbation(a, b, EditKind.DELETE) for a, b in local_edges(g_t, order))
    if deletion_only:
        return ActionSpace(deletions, ())
    attached = set(g_t.neighbors(v))
    additions = tuple(
        Perturbation(v, u, EditKind.ADD) for u in order if u != v and u not in attached
    )
    return ActionSpace(deletions, additions)


def compute_reward(
    m: BlackBoxModel,
    g_next: Graph,
    v: int,
    t: int,
    beta: float,
    label: Optional[int] = None,
    log_probs: Optional[np.ndarray] = None,
) -> float:
    """``1 / (log p(label | g_next, v) + beta * (t + 1))`` with a guarded pole.

    ``label`` defaults to the true label of ``v``.
    """
    if beta < 0 or t < 0:
        raise ValueError("beta and t must be non-negative")
    if label is None:
        label = int(g_next.true_labels[v])
    if log_probs is None:
        log_probs = m.log_probs(g_next)
    return reward_from_logprob(float(log_probs[v, label]), t, beta)


def reward_from_logprob(l_pred: float, t: int, beta: float) -> float:
    if not math.isfinite(l_pred):
        raise NumericError(f"non-finite log-probability {l_pred}")
    den = l_pred + beta * (t + 1)
    if abs(den) < REWARD_EPS:
        den = REWARD_EPS if den > 0 else -REWARD_EPS
    return float(min(max(1.0 / den, -REWARD_CAP), REWARD_CAP))


REWARD_FORMS = ("inverse", "cost")


def shaped_reward(l_pred: float, t: int, beta: float, form: str = "inverse") -> float:
    """Reward used in training.

    "inverse" is :func:`reward_from_logprob`. "cost" is ``-(l_pred + beta * (t + 1))``,
    the negated quantity the inverse was meant to turn into a reward; unlike the
    inverse it stays monotone once the label flips.
    """
    if form == "inverse":
        return reward_from_logprob(l_pred, t, beta)
    if form == "cost":
        if not math.isfinite(l_pred):
            raise NumericError(f"non-finite log-probability {l_pred}")
        return -(l_pred + beta * (t + 1))
    raise ValueError(f"unknown reward form {form!r}")


def discounted_returns(rewards: Sequence[float], gamma: float) -> list[float]:
    """Returns-to-go ``G_t = r_t + gamma * G_{t+1}`` over the realised trajectory."""
    if not 0 <= gamma < 1:
        raise ValueError("gamma must lie in [0, 1)")
    out = [0.0] * len(rewards)
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


def normalize_returns(returns: Sequence[float], c: float = 1e-8) -> list[float]:
    """Subtract the mean, divide by ``max(population std, c)``."""
    if c <= 0:
        raise ValueError("c must be positive")
    if len(returns) == 0:
        return []
    x = np.asarray(returns, dtype=np.float64)
    centred = x - x.mean()
    # second pass removes the rounding error of the first mean
    centred -= centred.mean()
    sd = math.sqrt(float(np.mean(centred * centred)))
    return (centred / max(sd, c)).tolist()
