from __future__ import annotations

import numpy as np
import pytest

from graphcf import autodiff as ad
from graphcf.evaluation import brute_force_oracle
from graphcf.graph import Graph, apply_perturbation
from graphcf.trainer import (
    Mode,
    Step,
    TrainConfig,
    Trajectory,
    make_policy,
    node_rng,
    policy_loss,
    rollout,
    train_policy,
)

from conftest import flip_pair


def fixed_step(logp, entropy=0.0, reward=0.0):
    return Step(None, ad.parameter(logp), ad.parameter(entropy), reward)


def traj(steps):
    return Trajectory(0, steps, True, None, 0, 1, "flip")


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(delta=0)
    with pytest.raises(ValueError):
        TrainConfig(gamma=1.0)
    with pytest.raises(ValueError):
        TrainConfig(reward_form="log")
    with pytest.raises(ValueError):
        TrainConfig.from_mapping({"episodes": 3, "bogus": 1})
    assert TrainConfig.from_mapping(TrainConfig().to_json()) == TrainConfig()


def test_no_action_gives_empty_failure():
    g, m = flip_pair()
    lonely = Graph(3, [(0, 1)], np.array([[1.0], [-3.0], [2.0]]), [1, 1, 0], 2)
    cfg = TrainConfig(hops=2)
    t = rollout(make_policy(m, lonely, cfg), m, lonely, 2, cfg)
    assert len(t) == 0 and not t.success and t.reason == "no-action"


def test_single_flipping_action():
    g, m = flip_pair()
    cfg = TrainConfig(hops=1)
    t = rollout(make_policy(m, g, cfg), m, g, 0, cfg)
    oracle = brute_force_oracle(m, g, 0, 1, max_k=1)
    assert len(t) == 1 and t.success and t.reason == "flip"
    assert oracle.status == "found" and tuple(t.actions) == oracle.perturbations
    assert (t.label_before, t.label_after) == (1, 0)


def test_greedy_rollout_is_deterministic(small_tc):
    g, m, _ = small_tc
    cfg = TrainConfig(delta=6)
    p = make_policy(m, g, cfg)
    v = g.motif_nodes()[0]
    a, b = rollout(p, m, g, v, cfg), rollout(p, m, g, v, cfg)
    assert a.actions == b.actions and a.rewards == b.rewards


def test_sampling_needs_rng(small_tc):
    g, m, _ = small_tc
    cfg = TrainConfig()
    with pytest.raises(ValueError):
        rollout(make_policy(m, g, cfg), m, g, 0, cfg, Mode.SAMPLE)


def test_sampled_rollouts_respect_budget_and_replay(small_tc):
    g, m, _ = small_tc
    cfg = TrainConfig(delta=4)
    p = make_policy(m, g, cfg)
    for v in g.motif_nodes()[:15]:
        t = rollout(p, m, g, v, cfg, Mode.SAMPLE, node_rng(0, 0, v))
        assert len(t) <= cfg.delta
        h = g
        for a in t.actions:
            h = apply_perturbation(h, a)  # raises if invalid at its time
        assert h == t.final_graph
        assert t.success == (m.predict(h, v) != t.label_before)


def test_loss_single_step_is_zero():
    loss = policy_loss([traj([fixed_step(-0.5, reward=3.0)])], gamma=0.4, eta=0.0)
    assert loss.item() == 0.0


def test_loss_two_step_example():
    # gamma 0 and rewards [2, 0] normalise to [1, -1]
    loss = policy_loss([traj([fixed_step(-0.5, reward=2.0), fixed_step(-0.5, reward=0.0)])], 0.0, 0.0)
    assert loss.item() == pytest.approx(0.0, abs=1e-12)


def test_entropy_bonus_lowers_loss():
    def loss(ent):
        steps = [fixed_step(-0.5, ent, 2.0), fixed_step(-1.0, ent, 0.0)]
        return policy_loss([traj(steps)], 0.0, eta=0.1).item()

    values = [loss(e) for e in (0.0, 0.5, 1.0, 2.0)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_empty_batch_is_rejected():
    with pytest.raises(ValueError):
        policy_loss([], 0.4, 0.1)


def test_one_step_gradient_matches_differences():
    g, m = flip_pair()
    cfg = TrainConfig(hops=1)
    p = make_policy(m, g, cfg)

    def f():
        t = rollout(p, m, g, 0, cfg, Mode.GREEDY)
        other = rollout(p, m, g, 1, cfg, Mode.GREEDY)
        return policy_loss([t, other], 0.4, 0.1, scope="batch")

    assert ad.gradient_check(f, p.param_list(), eps=1e-4) < 1e-3


def test_positive_return_step_gains_probability(small_tc):
    g, m, _ = small_tc
    cfg = TrainConfig(delta=1, eta=0.0, lr=1e-3, normalize="batch")
    motif = g.motif_nodes()
    for pair in ([motif[0], motif[7]], [motif[3], motif[20]], [motif[11], motif[30]]):
        p = make_policy(m, g, cfg)
        trajs = [rollout(p, m, g, v, cfg) for v in pair]
        good = int(np.argmax([t.rewards[0] for t in trajs]))
        assert trajs[good].rewards[0] > trajs[1 - good].rewards[0]
        before = trajs[good].steps[0].logp.item()
        opt = ad.Adam(p.param_list(), cfg.lr)
        loss = policy_loss(trajs, cfg.gamma, cfg.eta, scope="batch")
        opt.zero_grad()
        loss.backward()
        opt.step()
        again = rollout(p, m, g, pair[good], cfg)
        assert again.actions == trajs[good].actions
        assert again.steps[0].logp.item() > before


def test_zero_episodes_returns_initial_policy(small_tc):
    g, m, _ = small_tc
    cfg = TrainConfig(episodes=0)
    p, log = train_policy(m, g, g.motif_nodes()[:4], cfg)
    assert p.digest() == make_policy(m, g, cfg).digest()
    assert log.records == []


def test_training_is_reproducible(tmp_path, small_tc):
    g, m, _ = small_tc
    cfg = TrainConfig(episodes=2, batch_size=4, delta=5)
    nodes = g.motif_nodes()[:8]
    for name in ("a", "b"):
        p, log = train_policy(m, g, nodes, cfg)
        p.save(tmp_path / f"{name}.json")
        log.write(tmp_path / f"{name}.log")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert (tmp_path / "a.log").read_bytes() == (tmp_path / "b.log").read_bytes()
    assert p.digest() != make_policy(m, g, cfg).digest()
    assert len(log.episodes()) == 2 and len(log.records) == 2 * 2 + 2


def test_training_reaches_high_success(small_tc):
    g, m, _ = small_tc
    nodes = [v for v in g.motif_nodes() if m.predict(g, v) == g.true_labels[v]]
    cfg = TrainConfig(episodes=5, delta=15)
    _, log = train_policy(m, g, nodes, cfg)
    assert log.episodes()[-1]["success_rate"] >= 0.9


def test_stop_callback_ends_training(small_tc):
    g, m, _ = small_tc
    cfg = TrainConfig(episodes=10, delta=3)
    seen = []
    train_policy(m, g, g.motif_nodes()[:3], cfg, stop=lambda e, p, t: seen.append(e) or e == 1)
    assert seen == [0, 1]
