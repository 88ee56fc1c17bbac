"""A small reverse-mode autodiff engine over float64 numpy arrays.

Each primitive returns a :class:`Tensor` that remembers its inputs and a
closure that maps the output gradient to input gradients. ``backward`` replays
those closures in reverse topological order. Only what the GCN classifier and
the GAT policy need is supported.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf needing it."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: Optional[str] = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    if x.data.ndim != 2 or b.data.shape != (x.shape[1],):
        raise ShapeError(f"bias of shape {b.shape} does not match rows of {x.shape}")
    return _make(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data)
    ad, bd = a.data, b.data
    return _make(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return _make(np.log(x), (a,), lambda g: (g / x,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    mask = a.data > 0
    factor = np.where(mask, 1.0, slope)
    return _make(a.data * factor, (a,), lambda g: (g * factor,))


# -- reductions and shape ops -----------------------------------------------------


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _make(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(a: Tensor) -> Tensor:
    shape, n = a.shape, a.data.size
    return _make(
        np.asarray(a.data.mean()), (a,), lambda g: (np.broadcast_to(g / n, shape).copy(),)
    )


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat of nothing")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return _make(out, parts, lambda g: np.split(g, bounds, axis=axis))


def gather_rows(x: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _make(x.data[idx], (x,), back)


def pick(x: Tensor, idx) -> Tensor:
    """Entries ``x[i, idx[i]]`` of a 2-D tensor, or ``x[idx]`` of a 1-D one."""
    if x.data.ndim == 1:
        return gather_rows(x, idx)
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(x.shape[0])
    if idx.shape != rows.shape:
        raise ShapeError("pick needs one column index per row")
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        out[rows, idx] = g
        return (out,)

    return _make(x.data[rows, idx], (x,), back)


def segment_sum(x: Tensor, segments, n_segments: int) -> Tensor:
    segments = np.asarray(segments, dtype=np.int64)
    out = np.zeros((n_segments,) + x.shape[1:])
    np.add.at(out, segments, x.data)
    return _make(out, (x,), lambda g: (g[segments],))


# -- linear algebra ------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def sparse_aggregate(adj: sp.spmatrix, x: Tensor) -> Tensor:
    """``adj @ x`` for a constant sparse ``adj``."""
    if adj.shape[1] != x.shape[0]:
        raise ShapeError(f"aggregate shapes {adj.shape} @ {x.shape}")
    adj_t = adj.T.tocsr()
    return _make(np.asarray(adj @ x.data), (x,), lambda g: (np.asarray(adj_t @ g),))


# -- softmax family ----------------------------------------------------------------------


def softmax_over_set(scores: Tensor) -> Tensor:
    """Softmax of a 1-D score vector."""
    if scores.data.ndim != 1 or scores.data.size == 0:
        raise ShapeError("softmax_over_set needs a non-empty vector")
    z = scores.data - scores.data.max()
    e = np.exp(z)
    p = e / e.sum()
    return _make(p, (scores,), lambda g: (p * (g - np.dot(g, p)),))


def log_softmax(x: Tensor) -> Tensor:
    """Log-softmax along the last axis (rows of a matrix, or a whole vector)."""
    if x.data.size == 0:
        raise ShapeError("log_softmax of an empty tensor")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _make(out, (x,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def nll_pick(logprobs: Tensor, classes) -> Tensor:
    """Mean negative log-likelihood of ``classes`` under row-wise ``logprobs``."""
    return neg(mean_all(pick(logprobs, classes)))


def segment_softmax(scores: Tensor, segments, n_segments: int) -> Tensor:
    """Softmax of a 1-D score vector within each group of ``segments``."""
    segments = np.asarray(segments, dtype=np.int64)
    s = scores.data
    seg_max = np.full(n_segments, -np.inf)
    np.maximum.at(seg_max, segments, s)
    e = np.exp(s - seg_max[segments])
    denom = np.zeros(n_segments)
    np.add.at(denom, segments, e)
    p = e / denom[segments]

    def back(g):
        gp = np.zeros(n_segments)
        np.add.at(gp, segments, g * p)
        return (p * (g - gp[segments]),)

    return _make(p, (scores,), back)


def entropy_from_logprobs(logp: Tensor) -> Tensor:
    """``-sum p log p`` for a 1-D log-probability vector."""
    return neg(sum_all(mul(exp(logp), logp)))


# -- checking ------------------------------------------------------------------------------


def gradient_check(
    f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5, floor: float = 1e-6
) -> float:
    """Worst relative error between backprop and central differences.

    ``f`` must rebuild its graph from the current values of ``params`` on each
    call. Relative error uses ``max(|analytic|, |numeric|, floor)`` as
    denominator; the floor keeps gradients that are zero by symmetry (for
    example a shared shift under a softmax) from turning roundoff into error.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    for p in params:
        p.grad = None
    out = f()
    if not np.all(np.isfinite(out.data)):
        raise NumericError("non-finite function value")
    out.backward()
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError("non-finite value during finite differencing")
            numeric = (fp - fm) / (2 * eps)
            a = analytic.reshape(-1)[i]
            if not np.isfinite(a):
                raise NumericError("non-finite analytic gradient")
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst


# -- optimisation --------------------------------------------------------------------------


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[Optional[np.ndarray]],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    state: Optional[dict] = None,
) -> tuple[list[np.ndarray], dict]:
    """One Adam update. Pure: returns new arrays and a new state dict."""
    if state is None:
        state = {"t": 0, "m": [np.zeros_like(p) for p in params], "v": [np.zeros_like(p) for p in params]}
    t = state["t"] + 1
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, {"t": t, "m": new_m, "v": new_v}


class Adam:
    """Stateful wrapper around :func:`adam_step` that updates tensors in place."""

    def __init__(self, params: Sequence[Tensor], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state: Optional[dict] = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        new, self.state = adam_step(
            [p.data for p in self.params],
            [p.grad for p in self.params],
            self.lr,
            self.beta1,
            self.beta2,
            self.eps,
            self.state,
        )
        for p, d in zip(self.params, new):
            p.data = d


# -- checkpoints ----------------------------------------------------------------------------


def params_to_json(params: Mapping[str, Tensor]) -> dict:
    return {
        name: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
        for name, t in params.items()
    }


def params_from_json(doc: Mapping, expected: Optional[Mapping[str, Sequence[int]]] = None) -> dict[str, Tensor]:
    out = {}
    for name, entry in doc.items():
        shape = tuple(int(s) for s in entry["shape"])
        data = np.asarray(entry["data"], dtype=np.float64)
        if data.size != int(np.prod(shape)):
            raise ShapeError(f"parameter {name}: {data.size} values for shape {shape}")
        out[name] = parameter(data.reshape(shape), name=name)
    if expected is not None:
        if set(expected) != set(out):
            raise ShapeError(f"parameter names {sorted(out)} != expected {sorted(expected)}")
        for name, shape in expected.items():
            if out[name].shape != tuple(shape):
                raise ShapeError(f"parameter {name}: shape {out[name].shape} != {tuple(shape)}")
    return out


def save_params(path: str | Path, params: Mapping[str, Tensor], header: Optional[dict] = None) -> None:
    doc = {"header": header or {}, "params": params_to_json(params)}
    Path(path).write_text(json.dumps(doc, separators=(",", ":")))


def load_params(path: str | Path, expected=None) -> tuple[dict, dict[str, Tensor]]:
    doc = json.loads(Path(path).read_text())
    return doc.get("header", {}), params_from_json(doc["params"], expected)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))
