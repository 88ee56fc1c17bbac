"""Undirected attributed graphs, edge perturbations and neighbourhood queries.

Graphs are immutable. Perturbing a graph returns a new graph that shares the
feature/label arrays with its parent, so an episode can keep ``G^0`` around
while stepping through ``G^1, G^2, ...``.
"""

from __future__ import annotations

import enum
import json
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp


class GraphError(ValueError):
    """Raised for malformed graphs, invalid node ids and invalid edits."""


def canonical(u: int, v: int) -> tuple[int, int]:
    u, v = int(u), int(v)
    return (u, v) if u < v else (v, u)


class EditKind(str, enum.Enum):
    ADD = "add"
    DELETE = "delete"


@dataclass(frozen=True, order=True)
class Perturbation:
    """A single edge edit on the pair ``(u, v)``, stored with ``u < v``."""

    u: int
    v: int
    kind: EditKind

    def __post_init__(self):
        if self.u == self.v:
            raise GraphError(f"self-loop perturbation on node {self.u}")
        if self.u > self.v:
            a, b = self.v, self.u
            object.__setattr__(self, "u", a)
            object.__setattr__(self, "v", b)
        object.__setattr__(self, "kind", EditKind(self.kind))

    @property
    def pair(self) -> tuple[int, int]:
        return (self.u, self.v)

    @classmethod
    def add(cls, u: int, v: int) -> "Perturbation":
        return cls(int(u), int(v), EditKind.ADD)

    @classmethod
    def delete(cls, u: int, v: int) -> "Perturbation":
        return cls(int(u), int(v), EditKind.DELETE)

    def to_json(self) -> dict:
        return {"u": self.u, "v": self.v, "kind": self.kind.value}

    @classmethod
    def from_json(cls, d: dict) -> "Perturbation":
        return cls(int(d["u"]), int(d["v"]), EditKind(d["kind"]))


class Graph:
    """Undirected simple graph with node features, labels and motif ids.

    ``motif_of`` is either ``None`` (no ground truth) or a tuple with one entry
    per node holding the motif-instance id or ``None`` for base-graph nodes.
    """

    __slots__ = (
        "n_nodes",
        "edges",
        "features",
        "true_labels",
        "motif_of",
        "n_classes",
        "__dict__",
    )

    def __init__(
        self,
        n_nodes: int,
        edges: Iterable[tuple[int, int]],
        features: np.ndarray,
        true_labels: Sequence[int],
        n_classes: int,
        motif_of: Optional[Sequence[Optional[int]]] = None,
        *,
        _trusted: bool = False,
    ):
        self.n_nodes = int(n_nodes)
        if _trusted:
            self.edges = edges
            self.features = features
            self.true_labels = true_labels
        else:
            es = set()
            for u, v in edges:
                u, v = int(u), int(v)
                if u == v:
                    raise GraphError(f"self-loop on node {u}")
                if not (0 <= u < self.n_nodes and 0 <= v < self.n_nodes):
                    raise GraphError(f"edge ({u}, {v}) out of range for {self.n_nodes} nodes")
                e = canonical(u, v)
                if e in es:
                    raise GraphError(f"duplicate edge {e}")
                es.add(e)
            self.edges = frozenset(es)
            feats = np.array(features, dtype=np.float64, copy=True)
            if feats.ndim != 2 or feats.shape[0] != self.n_nodes:
                raise GraphError(f"features must be {self.n_nodes} x d, got {feats.shape}")
            feats.setflags(write=False)
            self.features = feats
            labels = np.array(true_labels, dtype=np.int64, copy=True)
            if labels.shape != (self.n_nodes,):
                raise GraphError("true_labels length must equal n_nodes")
            if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
                raise GraphError("labels must lie in [0, n_classes)")
            labels.setflags(write=False)
            self.true_labels = labels
            if motif_of is not None:
                motif_of = tuple(None if m is None else int(m) for m in motif_of)
                if len(motif_of) != self.n_nodes:
                    raise GraphError("motif_of length must equal n_nodes")
        self.motif_of = motif_of
        self.n_classes = int(n_classes)

    # -- basic queries -------------------------------------------------------

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def has_edge(self, u: int, v: int) -> bool:
        return canonical(u, v) in self.edges

    def check_node(self, v: int) -> int:
        if not (0 <= int(v) < self.n_nodes):
            raise GraphError(f"node {v} out of range [0, {self.n_nodes})")
        return int(v)

    @cached_property
    def edge_array(self) -> np.ndarray:
        """Sorted ``E x 2`` int array of canonical edges."""
        if not self.edges:
            return np.zeros((0, 2), dtype=np.int64)
        arr = np.array(sorted(self.edges), dtype=np.int64)
        arr.setflags(write=False)
        return arr

    @cached_property
    def degrees(self) -> np.ndarray:
        ea = self.edge_array
        deg = np.bincount(ea.ravel(), minlength=self.n_nodes).astype(np.int64)
        deg.setflags(write=False)
        return deg

    @cached_property
    def adjacency_lists(self) -> tuple[tuple[int, ...], ...]:
        nbrs: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for u, v in self.edges:
            nbrs[u].append(v)
            nbrs[v].append(u)
        return tuple(tuple(sorted(n)) for n in nbrs)

    def neighbors(self, v: int) -> tuple[int, ...]:
        return self.adjacency_lists[v]

    def motif_nodes(self) -> list[int]:
        if self.motif_of is None:
            return []
        return [i for i, m in enumerate(self.motif_of) if m is not None]

    # -- value semantics -----------------------------------------------------

    def with_edges(self, edges: frozenset) -> "Graph":
        return Graph(
            self.n_nodes,
            edges,
            self.features,
            self.true_labels,
            self.n_classes,
            self.motif_of,
            _trusted=True,
        )

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.n_nodes == other.n_nodes
            and self.n_classes == other.n_classes
            and self.edges == other.edges
            and self.motif_of == other.motif_of
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.true_labels, other.true_labels)
        )

    __hash__ = None

    def __repr__(self):
        return (
            f"Graph(n_nodes={self.n_nodes}, n_edges={self.n_edges}, "
            f"d_feat={self.feature_dim}, n_classes={self.n_classes})"
        )

    # -- serialization -------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "n_nodes": self.n_nodes,
            "edges": [[int(u), int(v)] for u, v in self.edge_array],
            "features": self.features.tolist(),
            "labels": self.true_labels.tolist(),
            "motifs": None if self.motif_of is None else list(self.motif_of),
            "n_classes": self.n_classes,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Graph":
        try:
            n = int(d["n_nodes"])
            feats = np.asarray(d["features"], dtype=np.float64)
            if feats.size == 0:
                feats = feats.reshape(n, 0)
            return cls(
                n,
                [tuple(e) for e in d["edges"]],
                feats,
                d["labels"],
                int(d["n_classes"]),
                d.get("motifs"),
            )
        except KeyError as exc:
            raise GraphError(f"dataset is missing field {exc}") from None

    def dumps(self) -> str:
        return json.dumps(self.to_json(), separators=(",", ":"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path: str | Path) -> "Graph":
        return cls.from_json(json.loads(Path(path).read_text()))


def khop_distances(g: Graph, v: int, h: int) -> dict[int, int]:
    """BFS distances from ``v`` for every node within ``h`` hops."""
    v = g.check_node(v)
    if h < 0:
        raise GraphError("hop count must be non-negative")
    dist = {v: 0}
    queue = deque([v])
    adj = g.adjacency_lists
    while queue:
        u = queue.popleft()
        du = dist[u]
        if du == h:
            continue
        for w in adj[u]:
            if w not in dist:
                dist[w] = du + 1
                queue.append(w)
    return dist


def khop_neighborhood(g: Graph, v: int, h: int) -> tuple[int, ...]:
    """Nodes at shortest-path distance at most ``h`` from ``v``, ascending."""
    return tuple(sorted(khop_distances(g, v, h)))


def apply_perturbation(g: Graph, p: Perturbation) -> Graph:
    g.check_node(p.u)
    g.check_node(p.v)
    e = p.pair
    present = e in g.edges
    add = p.kind is EditKind.ADD
    if add and present:
        raise GraphError(f"cannot add existing edge {e}")
    if not add and not present:
        raise GraphError(f"cannot delete absent edge {e}")
    child = g.with_edges(g.edges | {e} if add else g.edges - {e})
    _derive_caches(g, child, e, add)
    return child


def _derive_caches(parent: Graph, child: Graph, e: tuple[int, int], add: bool) -> None:
    """Patch the parent's cached views for a one-edge change instead of rebuilding."""
    cached = parent.__dict__
    u, v = e
    if "adjacency_lists" in cached:
        adj = list(cached["adjacency_lists"])
        if add:
            adj[u] = tuple(sorted(adj[u] + (v,)))
            adj[v] = tuple(sorted(adj[v] + (u,)))
        else:
            adj[u] = tuple(x for x in adj[u] if x != v)
            adj[v] = tuple(x for x in adj[v] if x != u)
        child.__dict__["adjacency_lists"] = tuple(adj)
    if "degrees" in cached:
        deg = cached["degrees"].copy()
        deg[[u, v]] += 1 if add else -1
        deg.setflags(write=False)
        child.__dict__["degrees"] = deg
    if "edge_array" in cached:
        ea = cached["edge_array"]
        key = ea[:, 0] * parent.n_nodes + ea[:, 1] if len(ea) else np.zeros(0, dtype=np.int64)
        i = int(np.searchsorted(key, u * parent.n_nodes + v))
        if add:
            ea = np.insert(ea, i, [u, v], axis=0)
        else:
            ea = np.delete(ea, i, axis=0)
        ea.setflags(write=False)
        child.__dict__["edge_array"] = ea


def apply_perturbations(g: Graph, ps: Iterable[Perturbation]) -> Graph:
    for p in ps:
        g = apply_perturbation(g, p)
    return g


def normalized_adjacency(g: Graph) -> sp.csr_matrix:
    """``D^-1/2 (A + I) D^-1/2`` with degrees counting the self-loop."""
    n = g.n_nodes
    ea = g.edge_array
    rows = np.concatenate([ea[:, 0], ea[:, 1], np.arange(n)])
    cols = np.concatenate([ea[:, 1], ea[:, 0], np.arange(n)])
    deg = (g.degrees + 1).astype(np.float64)
    inv_sqrt = 1.0 / np.sqrt(deg)
    vals = inv_sqrt[rows] * inv_sqrt[cols]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
