"""The perturbation policy: a graph-attention encoder plus an action scorer.

Node embeddings come from ``K`` single-head attention layers run on the
current graph restricted to the target's neighbourhood. Each candidate edit is
embedded as ``emb[first] || emb[second] || kind`` and scored by a small MLP;
a softmax over all candidates gives the action distribution.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .graph import EditKind
from .mdp import ActionSpace, State


@dataclass(frozen=True)
class PolicyConfig:
    in_dim: int
    hidden: int = 16
    layers: int = 3
    mlp_hidden: int = 16
    gat_slope: float = 0.01
    mlp_slope: float = 0.1
    # number of linear layers in the attention scorer
    attention_depth: int = 1
    encoder: str = "gat"
    seed: int = 0

    def __post_init__(self):
        if self.in_dim < 1 or self.hidden < 1 or self.layers < 1 or self.mlp_hidden < 1:
            raise ValueError("policy dimensions must be positive")
        if self.attention_depth < 1:
            raise ValueError("attention_depth must be >= 1")
        if self.encoder not in ("gat", "gcn"):
            raise ValueError(f"unknown encoder {self.encoder!r}")

    def dims(self) -> list[int]:
        return [self.in_dim] + [self.hidden] * self.layers

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class Distribution:
    """Action distribution; ``logp`` stays on the tape for the loss."""

    actions: tuple
    logp: ad.Tensor

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.logp.data)

    def __len__(self) -> int:
        return len(self.actions)


class PolicyNetwork:
    def __init__(self, config: PolicyConfig, params: Optional[dict[str, ad.Tensor]] = None):
        self.config = config
        self.params = params if params is not None else self._init_params()
        expected = self.param_shapes()
        if {k: v.shape for k, v in self.params.items()} != expected:
            raise ad.ShapeError("policy parameters do not match the architecture")

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        c = self.config
        dims = c.dims()
        shapes: dict[str, tuple[int, ...]] = {}
        for k in range(c.layers):
            d_in, d_out = dims[k], dims[k + 1]
            shapes[f"gat{k}.W"] = (d_in, d_out)
            if c.encoder == "gat":
                if c.attention_depth == 1:
                    # a bias on a softmax logit cancels, so there is none
                    shapes[f"gat{k}.a_dst"] = (d_in, 1)
                    shapes[f"gat{k}.a_src"] = (d_in, 1)
                else:
                    widths = [2 * d_in] + [c.hidden] * (c.attention_depth - 1) + [1]
                    for j in range(c.attention_depth):
                        shapes[f"gat{k}.att{j}.W"] = (widths[j], widths[j + 1])
                        if j < c.attention_depth - 1:
                            shapes[f"gat{k}.att{j}.b"] = (widths[j + 1],)
        act_dim = 2 * dims[-1] + 1
        shapes["mlp.W1"] = (act_dim, c.mlp_hidden)
        shapes["mlp.b1"] = (c.mlp_hidden,)
        # output bias omitted for the same reason: the action softmax ignores it
        shapes["mlp.W2"] = (c.mlp_hidden, 1)
        return shapes

    def _init_params(self) -> dict[str, ad.Tensor]:
        rng = np.random.default_rng(self.config.seed)
        params = {}
        for name, shape in self.param_shapes().items():
            if len(shape) == 2:
                data = ad.glorot(rng, shape[0], shape[1])
            else:
                data = np.zeros(shape)
            params[name] = ad.parameter(data, name)
        return params

    @classmethod
    def create(cls, in_dim: int, seed: int = 0, **overrides) -> "PolicyNetwork":
        return cls(PolicyConfig(in_dim=in_dim, seed=seed, **overrides))

    # -- forward ---------------------------------------------------------------

    def encode(self, state: State) -> ad.Tensor:
        return gat_encode(self, state)

    def distribution(self, state: State, space: ActionSpace) -> Distribution:
        return score_actions(self, self.encode(state), space, state)

    # -- bookkeeping ---------------------------------------------------------

    def param_list(self) -> list[ad.Tensor]:
        return [self.params[k] for k in sorted(self.params)]

    def digest(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name].data).tobytes())
        return h.hexdigest()

    def copy(self) -> "PolicyNetwork":
        return PolicyNetwork(
            self.config, {k: ad.parameter(v.data.copy(), k) for k, v in self.params.items()}
        )

    def save(self, path: str | Path) -> None:
        header = dict(self.config.to_json(), kind="policy", dims=self.config.dims())
        ad.save_params(path, self.params, header=header)

    @classmethod
    def load(cls, path: str | Path) -> "PolicyNetwork":
        doc = json.loads(Path(path).read_text())
        header = dict(doc.get("header", {}))
        if header.pop("kind", None) != "policy":
            raise ad.ShapeError(f"{path} is not a policy checkpoint")
        header.pop("dims", None)
        config = PolicyConfig(**header)
        probe = cls.__new__(cls)
        probe.config = config
        params = ad.params_from_json(doc["params"], probe.param_shapes())
        return cls(config, params)


def _closed_edges(state: State) -> tuple[np.ndarray, np.ndarray]:
    """(dst, src) pairs of closed 1-hop neighbourhoods, self-loops included."""
    n = len(state.node_order)
    le = state.local_edges
    loops = np.arange(n, dtype=np.int64)
    dst = np.concatenate([le[:, 0], le[:, 1], loops])
    src = np.concatenate([le[:, 1], le[:, 0], loops])
    return dst, src


def attention_weights(p: PolicyNetwork, h: ad.Tensor, dst, src, layer: int) -> ad.Tensor:
    """Attention coefficient per (dst, src) pair, normalised over each ``dst``."""
    c = p.config
    n = h.shape[0]
    prm = p.params
    if c.attention_depth == 1:
        s_dst = ad.reshape(h @ prm[f"gat{layer}.a_dst"], (n,))
        s_src = ad.reshape(h @ prm[f"gat{layer}.a_src"], (n,))
        # without the nonlinearity the dst term would cancel inside each softmax
        e = ad.leaky_relu(ad.add(ad.gather_rows(s_dst, dst), ad.gather_rows(s_src, src)), c.gat_slope)
    else:
        z = ad.concat([ad.gather_rows(h, dst), ad.gather_rows(h, src)], axis=1)
        for j in range(c.attention_depth):
            z = z @ prm[f"gat{layer}.att{j}.W"]
            if j < c.attention_depth - 1:
                z = ad.leaky_relu(ad.add_bias(z, prm[f"gat{layer}.att{j}.b"]), c.gat_slope)
        e = ad.reshape(z, (len(dst),))
    return ad.segment_softmax(e, dst, n)


def _local_norm_adj(state: State) -> sp.csr_matrix:
    n = len(state.node_order)
    dst, src = _closed_edges(state)
    a = sp.csr_matrix((np.ones(len(dst)), (dst, src)), shape=(n, n))
    d = np.asarray(a.sum(axis=1)).ravel() ** -0.5
    return sp.csr_matrix(sp.diags(d) @ a @ sp.diags(d))


def gat_encode(p: PolicyNetwork, state: State) -> ad.Tensor:
    """Per-node embeddings, ``|node_order| x hidden``."""
    c = p.config
    if state.vectors.shape[1] != c.in_dim:
        raise ad.ShapeError(f"state vectors have dim {state.vectors.shape[1]}, policy expects {c.in_dim}")
    n = len(state.node_order)
    h = ad.Tensor(state.vectors)
    if c.encoder == "gcn":
        a = _local_norm_adj(state)
        for k in range(c.layers):
            h = ad.leaky_relu(ad.sparse_aggregate(a, h @ p.params[f"gat{k}.W"]), c.gat_slope)
        return h
    dst, src = _closed_edges(state)
    for k in range(c.layers):
        alpha = attention_weights(p, h, dst, src, k)
        msg = ad.gather_rows(h @ p.params[f"gat{k}.W"], src)
        msg = ad.mul(msg, ad.reshape(alpha, (len(dst), 1)))
        h = ad.leaky_relu(ad.segment_sum(msg, dst, n), c.gat_slope)
    return h


def action_rows(space: ActionSpace, state: State) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row indices of each action's two endpoints and its kind flag.

    Deletions use (min id, max id); additions put the target first.
    """
    pos = state.index
    first, second, kind = [], [], []
    for a in space.actions:
        if a.kind is EditKind.DELETE:
            first.append(pos[a.u])
            second.append(pos[a.v])
            kind.append(0.0)
        else:
            other = a.v if a.u == state.target else a.u
            first.append(pos[state.target])
            second.append(pos[other])
            kind.append(1.0)
    return np.array(first, dtype=np.int64), np.array(second, dtype=np.int64), np.array(kind)


def action_scores(p: PolicyNetwork, emb: ad.Tensor, first, second, kind) -> ad.Tensor:
    prm, c = p.params, p.config
    x = ad.concat(
        [ad.gather_rows(emb, first), ad.gather_rows(emb, second), ad.Tensor(kind[:, None])],
        axis=1,
    )
    z = ad.leaky_relu(ad.add_bias(x @ prm["mlp.W1"], prm["mlp.b1"]), c.mlp_slope)
    return ad.reshape(z @ prm["mlp.W2"], (len(first),))


def score_actions(p: PolicyNetwork, emb: ad.Tensor, space: ActionSpace, state: State) -> Distribution:
    if not space:
        raise ValueError("cannot score an empty action space")
    first, second, kind = action_rows(space, state)
    scores = action_scores(p, emb, first, second, kind)
    return Distribution(space.actions, ad.log_softmax(scores))


def distribution_entropy(dist) -> float:
    """``-sum p ln p`` of a :class:`Distribution` or a plain probability vector."""
    probs = dist.probs if isinstance(dist, Distribution) else np.asarray(dist, dtype=np.float64)
    nz = probs[probs > 0]
    return float(-(nz * np.log(nz)).sum())
