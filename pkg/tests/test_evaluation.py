from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphcf.evaluation import (
    NO_SUCCESSES,
    accuracy,
    accuracy_per_edge,
    addition_share,
    brute_force_oracle,
    composition_csv,
    edit_composition,
    evaluate,
    export_dot,
    fidelity,
    size_stats,
    sparsity,
    success_rate,
)
from graphcf.explainer import CounterfactualResult, explain_inductive, replay
from graphcf.graph import Perturbation, apply_perturbations
from graphcf.mdp import enumerate_actions
from graphcf.trainer import TrainConfig, make_policy

from conftest import flip_pair, make_graph

A, D = Perturbation.add, Perturbation.delete


def res(node=0, success=True, perts=(), nbhd=10):
    return CounterfactualResult(node, success, tuple(perts), 1, 0 if success else 1, nbhd)


def test_fidelity_examples():
    assert fidelity([res(success=i < 9) for i in range(10)]) == 10.0
    assert fidelity([res()] * 3) == 0.0
    assert fidelity([res(success=False)] * 3) == 100.0
    with pytest.raises(ValueError):
        fidelity([])


def test_size_examples():
    s = size_stats([res(perts=[D(0, 1)])] * 3)
    assert (s.mean, s.std) == (1.0, 0.0)
    s = size_stats([res(perts=[D(0, 1)]), res(perts=[D(0, 1), D(1, 2), A(0, 3)])])
    assert (s.mean, s.std) == (2.0, 1.0)
    assert size_stats([]) is NO_SUCCESSES
    assert size_stats([res(success=False, perts=[D(0, 1)])]) is NO_SUCCESSES


# nodes 0-2 form motif 0, node 3 and 4 are base nodes
MOTIF_G = make_graph(5, [(0, 1), (1, 2), (2, 3), (3, 4)], labels=[1, 1, 1, 0, 0],
                     motif_of=[0, 0, 0, None, None])


def test_accuracy_examples():
    assert accuracy([res(0, perts=[D(1, 2)])], MOTIF_G) == 100.0
    assert accuracy([res(0, perts=[A(0, 4)])], MOTIF_G) == 100.0
    assert accuracy([res(0, perts=[D(3, 4)])], MOTIF_G) == 0.0
    assert accuracy([res(0, perts=[D(3, 4), D(1, 2)])], MOTIF_G) == 0.0
    assert accuracy_per_edge([res(0, perts=[D(3, 4), D(1, 2)])], MOTIF_G) == 50.0
    assert accuracy([res(0, success=False)], MOTIF_G) is NO_SUCCESSES
    with pytest.raises(ValueError):
        accuracy([res(3, perts=[D(3, 4)])], MOTIF_G)


def test_sparsity_examples():
    assert sparsity([res(perts=[D(0, 1)], nbhd=50)]) == pytest.approx(0.98)
    assert sparsity([res(perts=[A(0, 1), A(0, 2)], nbhd=50)]) == 1.0
    assert sparsity([res(perts=[D(0, 1), D(1, 2)], nbhd=2)]) == 0.0
    assert sparsity([res(perts=[A(0, 4)], nbhd=0)]) is NO_SUCCESSES


def test_sparsity_with_other_radius():
    r = res(0, perts=[D(1, 2)], nbhd=4)
    assert sparsity([r], MOTIF_G, ell=1) == 0.0
    assert sparsity([r], MOTIF_G, ell=4) == 0.75


def test_composition_examples():
    assert edit_composition([res(perts=[A(0, 1)]), res(perts=[D(0, 2)])]) == {1: (1, 1)}
    assert edit_composition([]) == {}
    assert edit_composition([res(perts=[A(0, 1), D(1, 2)])]) == {2: (1, 1)}
    assert addition_share([res(perts=[A(0, 1), A(0, 3), D(1, 2)])]) == pytest.approx(2 / 3)
    assert composition_csv({1: (3, 2)}) == "size,additions,deletions\n1,3,2\n"


def test_oracle_on_connector_edge():
    g, m = flip_pair()
    o = brute_force_oracle(m, g, 0, 1)
    assert o.status == "found" and o.perturbations == (D(0, 1),)
    r = CounterfactualResult(0, True, o.perturbations, 1, 0, 1)
    assert replay(m, g, r)


def test_oracle_unflippable():
    g, m = flip_pair()
    # node 1 stays class 1 whether or not it is joined to node 0
    o = brute_force_oracle(m, g, 1, 1)
    assert o.status == "none" and o.size is None


def test_oracle_budget(small_tc):
    g, m, _ = small_tc
    v = g.motif_nodes()[0]
    assert brute_force_oracle(m, g, v, 4, max_k=3, max_subsets=10).status == "budget"
    with pytest.raises(ValueError):
        brute_force_oracle(m, g, v, 4, max_k=0)


def shuffled_oracle_size(m, g, v, h, max_k, rng):
    actions = list(enumerate_actions(g, g, v, h).actions)
    rng.shuffle(actions)
    label = m.predict(g, v)
    for k in range(1, max_k + 1):
        for subset in itertools.combinations(actions, k):
            if m.predict(apply_perturbations(g, sorted(subset, key=lambda p: p.kind.value != "delete")), v) != label:
                return k
    return None


def test_oracle_properties(small_tc):
    g, m, _ = small_tc
    rng = np.random.default_rng(0)
    cfg = TrainConfig(hops=2)
    policy = make_policy(m, g, cfg)
    checked = 0
    for v in g.motif_nodes()[:12]:
        o = brute_force_oracle(m, g, v, 2, max_k=2, max_subsets=5000)
        if o.status == "budget":
            continue
        checked += 1
        assert o.size == shuffled_oracle_size(m, g, v, 2, 2, rng)
        if o.status == "found":
            assert replay(m, g, CounterfactualResult(v, True, o.perturbations, m.predict(g, v),
                                                     1 - m.predict(g, v), 0))
            r = explain_inductive(policy, m, g, v, cfg)
            if r.success:
                assert o.size <= r.size
    assert checked >= 5


@settings(max_examples=100, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=30))
def test_fidelity_complements_success(flags):
    rs = [res(success=f) for f in flags]
    assert fidelity(rs) + success_rate(rs) == 100.0


def test_report_and_dot():
    rs = [res(0, perts=[D(1, 2), A(0, 3)], nbhd=4), res(1, success=False)]
    rep = evaluate(rs, MOTIF_G)
    assert rep.fidelity == 50.0 and rep.size_mean == 2.0 and rep.accuracy == 100.0
    assert rep.addition_share == 0.5 and rep.composition == {2: (1, 1)}
    assert rep.rows_csv().splitlines()[0].startswith("node,success,size")
    assert rep.to_json()["composition"] == {"2": [1, 1]}
    dot = export_dot(MOTIF_G, 0, 2, rs[0])
    assert "1 -- 2 [style=dashed, color=blue]" in dot
    assert "0 -- 3 [style=solid, color=red" in dot
    assert "fillcolor=gold" in dot
