"""Synthetic node-classification benchmarks with planted motifs.

Three generators: a binary tree with 6-cycles, a binary tree with 3x3 grids,
and a Barabasi-Albert graph with 5-node houses. Every generator is a pure
function of its :class:`GenConfig`.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .graph import Graph, GraphError, canonical


class DatasetKind(str, enum.Enum):
    TREE_CYCLES = "tree-cycles"
    TREE_GRID = "tree-grid"
    BA_SHAPES = "ba-shapes"


@dataclass(frozen=True)
class GenConfig:
    kind: DatasetKind = DatasetKind.TREE_CYCLES
    tree_depth: int = 8
    ba_base_size: int = 300
    n_motifs: int = 60
    # None means floor(0.1 * edge count after motifs are attached)
    n_random_edges: Optional[int] = None
    feature_dim: int = 10
    ba_m: int = 5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", DatasetKind(self.kind))
        if self.tree_depth < 0 or self.ba_base_size < 1 or self.n_motifs < 0:
            raise GraphError("generator sizes must be non-negative")
        if self.feature_dim < 1:
            raise GraphError("feature_dim must be positive")
        if self.n_random_edges is not None and self.n_random_edges < 0:
            raise GraphError("n_random_edges must be non-negative")
        if self.kind is DatasetKind.BA_SHAPES and not (1 <= self.ba_m < self.ba_base_size):
            raise GraphError("ba_m must be in [1, ba_base_size)")

    def to_json(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d


# Benchmark-scale defaults. Random-edge counts bring the undirected edge totals
# to 975 / 1705 / 2050, i.e. the published totals counted in both directions.
DEFAULTS = {
    DatasetKind.TREE_CYCLES: dict(tree_depth=8, n_motifs=60, n_random_edges=45),
    DatasetKind.TREE_GRID: dict(tree_depth=8, n_motifs=80, n_random_edges=155),
    DatasetKind.BA_SHAPES: dict(ba_base_size=300, n_motifs=80, n_random_edges=15),
}


def default_config(kind: DatasetKind | str, **overrides) -> GenConfig:
    kind = DatasetKind(kind)
    params = dict(DEFAULTS[kind])
    params.update(overrides)
    return GenConfig(kind=kind, **params)


CYCLE_EDGES = [(i, (i + 1) % 6) for i in range(6)]
GRID_EDGES = [(r * 3 + c, r * 3 + c + 1) for r in range(3) for c in range(2)] + [
    (r * 3 + c, (r + 1) * 3 + c) for r in range(2) for c in range(3)
]
# 0 = roof apex, 1/2 = middle, 3/4 = bottom
HOUSE_EDGES = [(0, 1), (0, 2), (1, 2), (1, 3), (2, 4), (3, 4)]
HOUSE_ROLES = [1, 2, 2, 3, 3]
HOUSE_ANCHOR = 3


def binary_tree_edges(depth: int) -> tuple[int, list[tuple[int, int]]]:
    n = 2 ** (depth + 1) - 1
    edges = [((i - 1) // 2, i) for i in range(1, n)]
    return n, edges


def barabasi_albert_edges(n: int, m: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Preferential attachment starting from a star on ``m + 1`` nodes."""
    edges = [(0, i) for i in range(1, m + 1)]
    repeated = [0] * m + list(range(1, m + 1))
    for new in range(m + 1, n):
        targets: set[int] = set()
        while len(targets) < m:
            targets.add(repeated[int(rng.integers(len(repeated)))])
        for t in sorted(targets):
            edges.append((t, new))
            repeated.extend((t, new))
    return edges


def _plant_motifs(
    n_base: int,
    base_edges: list[tuple[int, int]],
    n_motifs: int,
    motif_size: int,
    motif_edges: list[tuple[int, int]],
    anchor: int,
    rng: np.random.Generator,
):
    edges = set(canonical(u, v) for u, v in base_edges)
    motif_of: list[Optional[int]] = [None] * n_base
    offset = n_base
    for k in range(n_motifs):
        for a, b in motif_edges:
            edges.add(canonical(offset + a, offset + b))
        host = int(rng.integers(n_base))
        edges.add(canonical(host, offset + anchor))
        motif_of.extend([k] * motif_size)
        offset += motif_size
    return offset, edges, motif_of


def _add_random_edges(n: int, edges: set, count: Optional[int], rng: np.random.Generator) -> None:
    if count is None:
        count = len(edges) // 10
    max_edges = n * (n - 1) // 2
    if len(edges) + count > max_edges:
        raise GraphError(f"cannot add {count} random edges to a graph on {n} nodes")
    added = 0
    while added < count:
        u, v = (int(x) for x in rng.integers(n, size=2))
        if u == v:
            continue
        e = canonical(u, v)
        if e in edges:
            continue
        edges.add(e)
        added += 1


def _finish(n, edges, motif_of, labels, n_classes, cfg) -> Graph:
    feats = np.ones((n, cfg.feature_dim), dtype=np.float64)
    return Graph(n, sorted(edges), feats, labels, n_classes, motif_of)


def gen_tree_cycles(cfg: GenConfig) -> Graph:
    if cfg.kind is not DatasetKind.TREE_CYCLES:
        raise GraphError("gen_tree_cycles needs kind=tree-cycles")
    rng = np.random.default_rng(cfg.seed)
    n_base, base_edges = binary_tree_edges(cfg.tree_depth)
    n, edges, motif_of = _plant_motifs(n_base, base_edges, cfg.n_motifs, 6, CYCLE_EDGES, 0, rng)
    _add_random_edges(n, edges, cfg.n_random_edges, rng)
    labels = [0 if m is None else 1 for m in motif_of]
    return _finish(n, edges, motif_of, labels, 2, cfg)


def gen_tree_grid(cfg: GenConfig) -> Graph:
    if cfg.kind is not DatasetKind.TREE_GRID:
        raise GraphError("gen_tree_grid needs kind=tree-grid")
    rng = np.random.default_rng(cfg.seed)
    n_base, base_edges = binary_tree_edges(cfg.tree_depth)
    n, edges, motif_of = _plant_motifs(n_base, base_edges, cfg.n_motifs, 9, GRID_EDGES, 0, rng)
    _add_random_edges(n, edges, cfg.n_random_edges, rng)
    labels = [0 if m is None else 1 for m in motif_of]
    return _finish(n, edges, motif_of, labels, 2, cfg)


def gen_ba_shapes(cfg: GenConfig) -> Graph:
    if cfg.kind is not DatasetKind.BA_SHAPES:
        raise GraphError("gen_ba_shapes needs kind=ba-shapes")
    rng = np.random.default_rng(cfg.seed)
    n_base = cfg.ba_base_size
    base_edges = barabasi_albert_edges(n_base, cfg.ba_m, rng)
    n, edges, motif_of = _plant_motifs(
        n_base, base_edges, cfg.n_motifs, 5, HOUSE_EDGES, HOUSE_ANCHOR, rng
    )
    _add_random_edges(n, edges, cfg.n_random_edges, rng)
    labels = [0] * n_base + HOUSE_ROLES * cfg.n_motifs
    return _finish(n, edges, motif_of, labels, 4, cfg)


def generate(cfg: GenConfig) -> Graph:
    return {
        DatasetKind.TREE_CYCLES: gen_tree_cycles,
        DatasetKind.TREE_GRID: gen_tree_grid,
        DatasetKind.BA_SHAPES: gen_ba_shapes,
    }[cfg.kind](cfg)
