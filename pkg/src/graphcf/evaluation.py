"""Metrics over counterfactual results, an exhaustive oracle, and exports.

Every metric is a pure fold over :class:`CounterfactualResult` records. The
oracle searches subsets of the step-0 action set, so it only scales to small
neighbourhoods and small ``max_k``.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .blackbox import BlackBoxModel
from .explainer import CounterfactualResult, neighborhood_edge_count
from .graph import EditKind, Graph, Perturbation
from .mdp import enumerate_actions, local_edges, neighborhood
from .trainer import original_log_probs

log = logging.getLogger(__name__)


class NoSuccesses:
    """Marker returned by statistics that are undefined without a success."""

    def __repr__(self):
        return "NO_SUCCESSES"

    def __bool__(self):
        return False


NO_SUCCESSES = NoSuccesses()


def _successes(results: Sequence[CounterfactualResult]) -> list[CounterfactualResult]:
    return [r for r in results if r.success]


def fidelity(results: Sequence[CounterfactualResult]) -> float:
    """Percentage of targets whose prediction did not flip."""
    if not results:
        raise ValueError("fidelity of an empty result set")
    return 100.0 * sum(not r.success for r in results) / len(results)


def success_rate(results: Sequence[CounterfactualResult]) -> float:
    if not results:
        raise ValueError("success rate of an empty result set")
    return 100.0 * sum(r.success for r in results) / len(results)


@dataclass(frozen=True)
class SizeStats:
    mean: float
    std: float
    n: int


def size_stats(results: Sequence[CounterfactualResult]):
    """Mean and population std of sizes over successes, or ``NO_SUCCESSES``."""
    sizes = [r.size for r in _successes(results)]
    if not sizes:
        return NO_SUCCESSES
    arr = np.asarray(sizes, dtype=np.float64)
    return SizeStats(float(arr.mean()), float(arr.std()), len(sizes))


def _motif_members(g: Graph) -> dict[int, frozenset]:
    if g.motif_of is None:
        raise ValueError("graph carries no motif ground truth")
    members: dict[int, set] = {}
    for u, k in enumerate(g.motif_of):
        if k is not None:
            members.setdefault(k, set()).add(u)
    return {k: frozenset(s) for k, s in members.items()}


def _edge_flags(r: CounterfactualResult, g: Graph, members) -> list[bool]:
    k = g.motif_of[r.node]
    if k is None:
        raise ValueError(f"target {r.node} is not a motif node")
    own = members[k]
    return [p.u in own or p.v in own for p in r.perturbations]


def accuracy(results: Sequence[CounterfactualResult], g: Graph):
    """Percentage of successful explanations whose every edit touches the target's motif."""
    members = _motif_members(g)
    ok = _successes(results)
    if not ok:
        return NO_SUCCESSES
    correct = sum(all(_edge_flags(r, g, members)) for r in ok)
    return 100.0 * correct / len(ok)


def accuracy_per_edge(results: Sequence[CounterfactualResult], g: Graph):
    """Percentage of perturbed edges (over successes) touching the target's motif."""
    members = _motif_members(g)
    flags = [f for r in _successes(results) for f in _edge_flags(r, g, members)]
    if not flags:
        return NO_SUCCESSES
    return 100.0 * sum(flags) / len(flags)


def result_sparsity(r: CounterfactualResult, nbhd_edges: Optional[int] = None) -> Optional[float]:
    n = r.nbhd_edges if nbhd_edges is None else nbhd_edges
    if n <= 0:
        return None
    deletions = sum(p.kind is EditKind.DELETE for p in r.perturbations)
    return 1.0 - deletions / n


def sparsity(
    results: Sequence[CounterfactualResult], g: Optional[Graph] = None, ell: Optional[int] = None
):
    """Mean fraction of neighbourhood edges kept, over successes.

    By default the neighbourhood is the one stored in each result; pass ``g``
    and ``ell`` to measure against the ``ell``-hop neighbourhood instead.
    """
    if ell is not None and g is None:
        raise ValueError("ell needs the graph")
    vals = []
    for r in _successes(results):
        n = neighborhood_edge_count(g, r.node, ell) if ell is not None else None
        s = result_sparsity(r, n)
        if s is None:
            log.warning("node %d has no neighbourhood edges; skipped in sparsity", r.node)
            continue
        vals.append(s)
    if not vals:
        return NO_SUCCESSES
    return float(np.mean(vals))


def edit_composition(results: Sequence[CounterfactualResult]) -> dict[int, tuple[int, int]]:
    """``size -> (additions, deletions)`` summed over successful results."""
    hist: dict[int, list[int]] = {}
    for r in _successes(results):
        bucket = hist.setdefault(r.size, [0, 0])
        for p in r.perturbations:
            bucket[0 if p.kind is EditKind.ADD else 1] += 1
    return {k: (v[0], v[1]) for k, v in sorted(hist.items())}


def addition_share(results: Sequence[CounterfactualResult]):
    adds = dels = 0
    for a, d in edit_composition(results).values():
        adds += a
        dels += d
    if adds + dels == 0:
        return NO_SUCCESSES
    return adds / (adds + dels)


def composition_csv(hist: dict[int, tuple[int, int]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["size", "additions", "deletions"])
    for size, (a, d) in sorted(hist.items()):
        w.writerow([size, a, d])
    return buf.getvalue()


def replay_valid(m: BlackBoxModel, g: Graph, r: CounterfactualResult) -> bool:
    from .explainer import replay

    return replay(m, g, r)


# -- oracle ------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleResult:
    node: int
    # "found", "none" (nothing flips within max_k) or "budget" (too many subsets)
    status: str
    perturbations: tuple[Perturbation, ...] = ()
    checked: int = 0

    @property
    def size(self) -> Optional[int]:
        return len(self.perturbations) if self.status == "found" else None

    def to_json(self) -> dict:
        return dict(
            node=self.node,
            status=self.status,
            size=self.size,
            perturbations=[p.to_json() for p in self.perturbations],
            checked=self.checked,
        )


def brute_force_oracle(
    m: BlackBoxModel,
    g: Graph,
    v: int,
    h: int,
    max_k: int = 3,
    max_subsets: int = 100_000,
    deletion_only: bool = False,
) -> OracleResult:
    """Smallest subset of step-0 edits that flips the prediction, applied at once.

    Sizes are tried in increasing order and subsets in ``itertools.combinations``
    order over the action list, so the first hit is minimal.
    """
    v = g.check_node(v)
    if max_k < 1:
        raise ValueError("max_k must be >= 1")
    actions = enumerate_actions(g, g, v, h, deletion_only).actions
    total = sum(math.comb(len(actions), k) for k in range(1, max_k + 1))
    if total > max_subsets:
        return OracleResult(v, "budget")
    label0 = int(np.argmax(original_log_probs(m, g)[v]))
    checked = 0
    for k in range(1, max_k + 1):
        for subset in itertools.combinations(actions, k):
            checked += 1
            edges = set(g.edges)
            for p in subset:
                if p.kind is EditKind.ADD:
                    edges.add(p.pair)
                else:
                    edges.discard(p.pair)
            if m.predict(g.with_edges(frozenset(edges)), v) != label0:
                return OracleResult(v, "found", tuple(subset), checked)
    return OracleResult(v, "none", (), checked)


# -- report ---------------------------------------------------------------------------


def _num(x):
    return None if x is NO_SUCCESSES else x


@dataclass
class EvalReport:
    n_results: int
    fidelity: float
    size_mean: Optional[float]
    size_std: Optional[float]
    accuracy: Optional[float]
    accuracy_per_edge: Optional[float]
    sparsity: Optional[float]
    addition_share: Optional[float]
    composition: dict[int, tuple[int, int]]
    rows: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        d = asdict(self)
        d["composition"] = {str(k): list(v) for k, v in self.composition.items()}
        return d

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    def rows_csv(self) -> str:
        buf = io.StringIO()
        cols = ["node", "success", "size", "additions", "deletions", "nbhd_edges", "correct", "sparsity"]
        w = csv.DictWriter(buf, cols, lineterminator="\n")
        w.writeheader()
        for row in self.rows:
            w.writerow(row)
        return buf.getvalue()


def evaluate(
    results: Sequence[CounterfactualResult], g: Graph, ell: Optional[int] = None
) -> EvalReport:
    stats = size_stats(results)
    has_motifs = g.motif_of is not None and all(g.motif_of[r.node] is not None for r in results)
    members = _motif_members(g) if has_motifs else None
    rows = []
    for r in sorted(results, key=lambda r: r.node):
        adds = sum(p.kind is EditKind.ADD for p in r.perturbations)
        n = neighborhood_edge_count(g, r.node, ell) if ell is not None else None
        rows.append(dict(
            node=r.node,
            success=r.success,
            size=r.size,
            additions=adds,
            deletions=r.size - adds,
            nbhd_edges=r.nbhd_edges if n is None else n,
            correct=all(_edge_flags(r, g, members)) if members is not None and r.success else None,
            sparsity=result_sparsity(r, n) if r.success else None,
        ))
    return EvalReport(
        n_results=len(results),
        fidelity=fidelity(results),
        size_mean=None if stats is NO_SUCCESSES else stats.mean,
        size_std=None if stats is NO_SUCCESSES else stats.std,
        accuracy=_num(accuracy(results, g)) if has_motifs else None,
        accuracy_per_edge=_num(accuracy_per_edge(results, g)) if has_motifs else None,
        sparsity=_num(sparsity(results, g, ell)),
        addition_share=_num(addition_share(results)),
        composition=edit_composition(results),
        rows=rows,
    )


# -- visualisation ----------------------------------------------------------------------


def export_dot(g: Graph, v: int, h: int, result: Optional[CounterfactualResult] = None) -> str:
    """DOT source for the target's neighbourhood with the counterfactual edits styled.

    Kept edges are grey, added edges solid red, deleted edges dashed blue.
    """
    v = g.check_node(v)
    nodes = neighborhood(g, v, h)
    added, deleted = set(), set()
    for p in result.perturbations if result is not None else ():
        (added if p.kind is EditKind.ADD else deleted).add(p.pair)
    lines = ["graph counterfactual {", "  node [shape=circle, fontsize=10];"]
    for u in nodes:
        label = int(g.true_labels[u])
        extra = ", style=filled, fillcolor=gold" if u == v else ""
        lines.append(f'  {u} [label="{u}\\n{label}"{extra}];')
    for a, b in local_edges(g, nodes):
        style = "style=dashed, color=blue" if (a, b) in deleted else "color=grey50"
        lines.append(f"  {a} -- {b} [{style}];")
    for a, b in sorted(added):
        lines.append(f"  {a} -- {b} [style=solid, color=red, penwidth=2];")
    lines.append("}")
    return "\n".join(lines) + "\n"
