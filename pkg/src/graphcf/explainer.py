"""Counterfactual generation for single target nodes.

Three explainers share one result type: a trained policy applied greedily
(inductive), a policy trained from scratch for the one node (transductive),
and uniform random edge deletion (baseline).
"""

from __future__ import annotations

import dataclasses
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .blackbox import BlackBoxModel
from .graph import Graph, Perturbation, apply_perturbation, apply_perturbations
from .mdp import enumerate_actions, local_edges, neighborhood
from .policy import PolicyNetwork
from .trainer import Mode, TrainConfig, Trajectory, make_policy, original_log_probs, rollout, train_policy


@dataclass(frozen=True)
class CounterfactualResult:
    node: int
    success: bool
    perturbations: tuple[Perturbation, ...]
    label_before: int
    label_after: int
    nbhd_edges: int
    ms: Optional[float] = None

    @property
    def size(self) -> int:
        return len(self.perturbations)

    def to_json(self, timing: bool = False) -> dict:
        d = dict(
            node=self.node,
            success=self.success,
            perturbations=[p.to_json() for p in self.perturbations],
            label_before=self.label_before,
            label_after=self.label_after,
            size=self.size,
            nbhd_edges=self.nbhd_edges,
        )
        if timing:
            d["ms"] = self.ms
        return d

    @classmethod
    def from_json(cls, d: dict) -> "CounterfactualResult":
        try:
            perts = tuple(Perturbation.from_json(p) for p in d["perturbations"])
            res = cls(
                int(d["node"]), bool(d["success"]), perts,
                int(d["label_before"]), int(d["label_after"]), int(d["nbhd_edges"]), d.get("ms"),
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed result record: {exc}") from None
        if "size" in d and int(d["size"]) != res.size:
            raise ValueError(f"record for node {res.node} has inconsistent size")
        return res


def neighborhood_edge_count(g: Graph, v: int, h: int) -> int:
    return len(local_edges(g, neighborhood(g, v, h)))


def _result(g: Graph, v: int, h: int, traj: Trajectory, t0: float) -> CounterfactualResult:
    return CounterfactualResult(
        v, traj.success, tuple(traj.actions), traj.label_before, traj.label_after,
        neighborhood_edge_count(g, v, h), (time.perf_counter() - t0) * 1000.0,
    )


def explain_inductive(
    p: PolicyNetwork, m: BlackBoxModel, g: Graph, v: int, cfg: TrainConfig
) -> CounterfactualResult:
    """Greedy rollout of an already trained policy; the policy is not touched."""
    t0 = time.perf_counter()
    return _result(g, v, cfg.hops, rollout(p, m, g, v, cfg, Mode.GREEDY), t0)


def transductive_config(**overrides) -> TrainConfig:
    """Training defaults for the per-node setting.

    gamma 0.6 and one-node batches. One node gives one optimizer step per
    episode (an inductive episode gives one per batch), so the step size is
    ten times the inductive default.
    """
    params = dict(gamma=0.6, batch_size=1, episodes=500, lr=3e-3)
    params.update(overrides)
    return TrainConfig(**params)


def node_seed(seed: int, v: int) -> int:
    return int(np.random.SeedSequence([seed, v]).generate_state(1)[0])


STOP_RULES = ("best", "greedy", "sampled", "fixed")


def explain_transductive(
    m: BlackBoxModel,
    g: Graph,
    v: int,
    cfg: TrainConfig,
    stop_rule: str = "best",
    patience: int = 50,
) -> CounterfactualResult:
    """Train a fresh policy on ``{v}`` alone and report a greedy rollout.

    The greedy rollout is checked after every training episode. ``stop_rule``:

    - "best": keep the smallest successful greedy rollout seen; stop once it
      has size 1 or after ``patience`` episodes without improvement.
    - "greedy": stop at the first successful greedy rollout.
    - "sampled": stop after the first successful sampled episode.
    - "fixed": run all ``cfg.episodes``.

    Every rule reports the greedy rollout of a policy snapshot from training,
    so the result is always a valid trajectory of the MDP.
    """
    if stop_rule not in STOP_RULES:
        raise ValueError(f"stop_rule must be one of {STOP_RULES}")
    t0 = time.perf_counter()
    v = g.check_node(v)
    node_cfg = dataclasses.replace(cfg, seed=node_seed(cfg.seed, v))
    policy = make_policy(m, g, node_cfg)
    best = rollout(policy, m, g, v, node_cfg)
    state = {"last": best, "since": 0}

    def better(a: Trajectory, b: Trajectory) -> bool:
        return a.success and (not b.success or len(a) < len(b))

    def stop(episode, pol, trajs):
        nonlocal best
        current = rollout(pol, m, g, v, node_cfg)
        state["last"] = current
        if stop_rule == "sampled":
            return any(t.success for t in trajs)
        if stop_rule == "greedy":
            return current.success
        if stop_rule == "fixed":
            return False
        if better(current, best):
            best, state["since"] = current, 0
        else:
            state["since"] += 1
        return (best.success and len(best) == 1) or state["since"] >= patience

    done = {
        "best": best.success and len(best) == 1,
        "greedy": best.success,
    }.get(stop_rule, False)
    if not done and enumerate_actions(g, g, v, cfg.hops, cfg.deletion_only):
        train_policy(m, g, [v], node_cfg, policy=policy, stop=stop)
    final = best if stop_rule == "best" else state["last"]
    return _result(g, v, cfg.hops, final, t0)


def random_baseline(
    m: BlackBoxModel, g: Graph, v: int, cfg: TrainConfig, seed: int = 0
) -> CounterfactualResult:
    """Delete uniformly random neighbourhood edges until the label flips."""
    t0 = time.perf_counter()
    v = g.check_node(v)
    rng = np.random.default_rng([seed, v])
    label0 = int(np.argmax(original_log_probs(m, g)[v]))
    g_t, label, perts = g, label0, []
    for _ in range(cfg.delta):
        dels = enumerate_actions(g_t, g, v, cfg.hops, deletion_only=True).deletions
        if not dels:
            break
        a = dels[int(rng.integers(len(dels)))]
        g_t = apply_perturbation(g_t, a)
        perts.append(a)
        label = int(np.argmax(m.log_probs(g_t)[v]))
        if label != label0:
            break
    return CounterfactualResult(
        v, label != label0, tuple(perts), label0, label,
        neighborhood_edge_count(g, v, cfg.hops), (time.perf_counter() - t0) * 1000.0,
    )


def replay(m: BlackBoxModel, g: Graph, result: CounterfactualResult) -> bool:
    """Re-apply the perturbations to the original graph and compare labels."""
    try:
        g_cf = apply_perturbations(g, result.perturbations)
    except ValueError:
        return False
    before = int(np.argmax(original_log_probs(m, g)[result.node]))
    after = m.predict(g_cf, result.node)
    return before == result.label_before and after == result.label_after and (
        result.success == (after != before)
    )


# -- batch driver ---------------------------------------------------------------------

_WORKER: dict = {}


def _init_worker(fn, args):
    _WORKER["fn"], _WORKER["args"] = fn, args


def _run_one(v):
    return _WORKER["fn"](*_WORKER["args"], v)


def run_many(
    fn: Callable[..., CounterfactualResult],
    args: tuple,
    nodes: Iterable[int],
    workers: int = 1,
) -> list[CounterfactualResult]:
    """Apply ``fn(*args, v)`` to every node, in parallel if ``workers > 1``.

    Results are sorted by node id, so the output does not depend on scheduling.
    """
    nodes = sorted(set(int(v) for v in nodes))
    if workers <= 1 or len(nodes) <= 1:
        out = [fn(*args, v) for v in nodes]
    else:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(fn, args)) as ex:
            out = list(ex.map(_run_one, nodes))
    return sorted(out, key=lambda r: r.node)


def _inductive(p, m, g, cfg, v):
    return explain_inductive(p, m, g, v, cfg)


def _transductive(m, g, cfg, stop_rule, patience, v):
    return explain_transductive(m, g, v, cfg, stop_rule, patience)


def _random(m, g, cfg, seed, v):
    return random_baseline(m, g, v, cfg, seed)


def explain_nodes(
    mode: str,
    m: BlackBoxModel,
    g: Graph,
    nodes: Sequence[int],
    cfg: TrainConfig,
    policy: Optional[PolicyNetwork] = None,
    workers: int = 1,
    stop_rule: str = "best",
    patience: int = 50,
) -> list[CounterfactualResult]:
    if mode == "inductive":
        if policy is None:
            raise ValueError("inductive mode needs a trained policy")
        return run_many(_inductive, (policy, m, g, cfg), nodes, workers)
    if mode == "transductive":
        return run_many(_transductive, (m, g, cfg, stop_rule, patience), nodes, workers)
    if mode == "random":
        return run_many(_random, (m, g, cfg, cfg.seed), nodes, workers)
    raise ValueError(f"unknown mode {mode!r}")


def write_results(path: str | Path, results: Sequence[CounterfactualResult], timing: bool = False) -> None:
    with open(path, "w") as fh:
        for r in sorted(results, key=lambda r: r.node):
            fh.write(json.dumps(r.to_json(timing), sort_keys=True) + "\n")


def read_results(path: str | Path) -> list[CounterfactualResult]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(CounterfactualResult.from_json(json.loads(line)))
            except (json.JSONDecodeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return out
