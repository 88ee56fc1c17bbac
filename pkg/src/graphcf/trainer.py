"""REINFORCE training of the perturbation policy.

An episode rolls the policy out once from every training node, batch by batch.
Each batch contributes one optimizer step on

    J = -(1/|batch|) * sum_v [ sum_t log p_t * R~_t + eta * sum_t Ent_t ]

where ``R~`` are normalised returns-to-go (within each trajectory by default,
or across the batch), treated as constants.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .blackbox import BlackBoxModel
from .graph import Graph, Perturbation, apply_perturbation
from .mdp import (
    FeatureFlags,
    build_state,
    discounted_returns,
    enumerate_actions,
    normalize_returns,
    REWARD_FORMS,
    shaped_reward,
)
from .policy import PolicyNetwork

log = logging.getLogger(__name__)


class Mode(str, enum.Enum):
    SAMPLE = "sample"
    GREEDY = "greedy"


@dataclass(frozen=True)
class TrainConfig:
    delta: int = 15
    episodes: int = 500
    batch_size: int = 16
    gamma: float = 0.4
    eta: float = 0.1
    beta: float = 0.5
    hops: int = 4
    lr: float = 3e-4
    seed: int = 0
    deletion_only: bool = False
    norm_c: float = 1e-8
    # "true" scores the true label in the reward, "predicted" the original prediction
    reward_label: str = "true"
    # "cost" is -(L + beta*d); "inverse" is the guarded 1/(L + beta*d)
    reward_form: str = "cost"
    # "trajectory" normalises returns within each trajectory, "batch" across the batch
    normalize: str = "trajectory"
    hidden: int = 16
    gat_layers: int = 3
    gat_slope: float = 0.01
    mlp_slope: float = 0.1
    encoder: str = "gat"

    def __post_init__(self):
        if self.delta < 1:
            raise ValueError("delta must be >= 1")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.eta < 0 or self.beta < 0:
            raise ValueError("eta and beta must be non-negative")
        if self.episodes < 0 or self.batch_size < 1 or self.hops < 1:
            raise ValueError("episodes >= 0, batch_size >= 1 and hops >= 1 required")
        if self.reward_label not in ("true", "predicted"):
            raise ValueError("reward_label must be 'true' or 'predicted'")
        if self.reward_form not in REWARD_FORMS:
            raise ValueError(f"reward_form must be one of {REWARD_FORMS}")
        if self.normalize not in ("trajectory", "batch"):
            raise ValueError("normalize must be 'trajectory' or 'batch'")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(values) - set(known)
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**values)


def make_policy(m: BlackBoxModel, g: Graph, cfg: TrainConfig) -> PolicyNetwork:
    in_dim = FeatureFlags().dim(g.feature_dim, g.n_classes)
    return PolicyNetwork.create(
        in_dim,
        seed=cfg.seed,
        hidden=cfg.hidden,
        layers=cfg.gat_layers,
        mlp_hidden=cfg.hidden,
        gat_slope=cfg.gat_slope,
        mlp_slope=cfg.mlp_slope,
        encoder=cfg.encoder,
    )


@dataclass
class Step:
    action: Perturbation
    logp: ad.Tensor
    entropy: ad.Tensor
    reward: float


@dataclass
class Trajectory:
    target: int
    steps: list[Step]
    success: bool
    final_graph: Graph
    label_before: int
    label_after: int
    # why the episode ended: "flip", "budget" or "no-action"
    reason: str = "budget"

    @property
    def actions(self) -> list[Perturbation]:
        return [s.action for s in self.steps]

    @property
    def rewards(self) -> list[float]:
        return [s.reward for s in self.steps]

    def __len__(self) -> int:
        return len(self.steps)


def original_log_probs(m: BlackBoxModel, g: Graph) -> np.ndarray:
    """``m.log_probs(g)`` cached on the graph (graphs are immutable)."""
    cache = g.__dict__.setdefault("_lp_cache", {})
    key = id(m)
    if key not in cache:
        cache[key] = (m, m.log_probs(g))
    return cache[key][1]


def sample_index(probs: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(probs)
    i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(i, len(probs) - 1)


def rollout(
    p: PolicyNetwork,
    m: BlackBoxModel,
    g: Graph,
    v: int,
    cfg: TrainConfig,
    mode: Mode | str = Mode.GREEDY,
    rng: Optional[np.random.Generator] = None,
) -> Trajectory:
    """Perturb ``g`` around ``v`` until the prediction flips or the budget runs out."""
    mode = Mode(mode)
    v = g.check_node(v)
    if mode is Mode.SAMPLE and rng is None:
        raise ValueError("sampling needs an rng")
    lp0 = original_log_probs(m, g)
    label0 = int(np.argmax(lp0[v]))
    label = int(g.true_labels[v]) if cfg.reward_label == "true" else label0
    g_t, lp, steps = g, lp0, []
    reason = "budget"
    for t in range(cfg.delta):
        space = enumerate_actions(g_t, g, v, cfg.hops, cfg.deletion_only)
        if not space:
            reason = "no-action"
            break
        state = build_state(g_t, g, v, cfg.hops, m, t, log_probs=lp)
        dist = p.distribution(state, space)
        if mode is Mode.GREEDY:
            i = int(np.argmax(dist.logp.data))
        else:
            i = sample_index(dist.probs, rng)
        action = dist.actions[i]
        g_t = apply_perturbation(g_t, action)
        lp = m.log_probs(g_t)
        r = shaped_reward(float(lp[v, label]), t, cfg.beta, cfg.reward_form)
        steps.append(Step(action, ad.pick(dist.logp, i), ad.entropy_from_logprobs(dist.logp), r))
        if int(np.argmax(lp[v])) != label0:
            reason = "flip"
            break
    label_after = int(np.argmax(lp[v]))
    return Trajectory(v, steps, label_after != label0, g_t, label0, label_after, reason)


def normalized_weights(
    trajectories: Sequence[Trajectory], gamma: float, c: float = 1e-8, scope: str = "trajectory"
) -> list[list[float]]:
    returns = [discounted_returns(t.rewards, gamma) for t in trajectories]
    if scope == "trajectory":
        return [normalize_returns(r, c) for r in returns]
    flat = normalize_returns([x for r in returns for x in r], c)
    out, i = [], 0
    for r in returns:
        out.append(flat[i:i + len(r)])
        i += len(r)
    return out


def policy_loss(
    trajectories: Sequence[Trajectory],
    gamma: float,
    eta: float,
    c: float = 1e-8,
    scope: str = "trajectory",
) -> ad.Tensor:
    """Batch REINFORCE loss with entropy bonus; returns are constants."""
    if not trajectories:
        raise ValueError("empty batch")
    terms = []
    for traj, weights in zip(trajectories, normalized_weights(trajectories, gamma, c, scope)):
        for step, w in zip(traj.steps, weights):
            terms.append(step.logp * w)
            if eta:
                terms.append(step.entropy * eta)
    if not terms:
        return ad.Tensor(0.0)
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total * (-1.0 / len(trajectories))


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)

    def add(self, **record) -> None:
        self.records.append(record)

    def write(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r, sort_keys=True) + "\n")

    def episodes(self) -> list[dict]:
        return [r for r in self.records if r.get("batch") is None]


def node_rng(seed: int, episode: int, v: int) -> np.random.Generator:
    return np.random.default_rng([seed, episode, v])


def train_policy(
    m: BlackBoxModel,
    g: Graph,
    train_nodes: Iterable[int],
    cfg: TrainConfig,
    policy: Optional[PolicyNetwork] = None,
    stop: Optional[Callable[[int, PolicyNetwork, list[Trajectory]], bool]] = None,
) -> tuple[PolicyNetwork, TrainLog]:
    """Train a policy on ``train_nodes`` for ``cfg.episodes`` episodes.

    ``stop(episode, policy, trajectories)`` is called after each episode and
    may end training early.
    """
    nodes = sorted({g.check_node(v) for v in train_nodes})
    if not nodes:
        raise ValueError("no training nodes")
    if policy is None:
        policy = make_policy(m, g, cfg)
    params = policy.param_list()
    opt = ad.Adam(params, cfg.lr)
    tlog = TrainLog()
    for episode in range(cfg.episodes):
        order = np.random.default_rng([cfg.seed, episode]).permutation(len(nodes))
        done: list[Trajectory] = []
        losses = []
        for b, start in enumerate(range(0, len(nodes), cfg.batch_size)):
            batch = [nodes[i] for i in order[start:start + cfg.batch_size]]
            trajs = [
                rollout(policy, m, g, v, cfg, Mode.SAMPLE, node_rng(cfg.seed, episode, v))
                for v in batch
            ]
            loss = policy_loss(trajs, cfg.gamma, cfg.eta, cfg.norm_c, cfg.normalize)
            if loss.requires_grad:
                opt.zero_grad()
                loss.backward()
                opt.step()
            losses.append(loss.item())
            done.extend(trajs)
            tlog.add(
                episode=episode,
                batch=b,
                mean_return=float(np.mean([sum(t.rewards) for t in trajs])),
                success_rate=float(np.mean([t.success for t in trajs])),
                loss=loss.item(),
            )
        summary = dict(
            episode=episode,
            batch=None,
            mean_return=float(np.mean([sum(t.rewards) for t in done])),
            success_rate=float(np.mean([t.success for t in done])),
            loss=float(np.mean(losses)),
            mean_size=float(np.mean([len(t) for t in done])),
        )
        tlog.add(**summary)
        log.log(
            logging.INFO if len(nodes) > 1 else logging.DEBUG,
            "episode %d: success %.3f, mean size %.2f, loss %.4f",
            episode, summary["success_rate"], summary["mean_size"], summary["loss"],
        )
        if stop is not None and stop(episode, policy, done):
            break
    return policy, tlog
