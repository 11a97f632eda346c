import logging

import numpy as np
import pytest

from nbsp.errors import ShapeError
from nbsp.mechanism import (GradientMask, NbspState, PriorBuffer, build_mask, merge_masks, nbsp_gradient_step,
                            replay_gate, store_prior)
from nbsp.sac import ReplayBuffer, SacAgent, SacConfig
from nbsp.skill_neurons import NeuronId, SkillNeuronSet

SHAPES = {"actor": [8, 8, 4], "critic1": [8, 8, 1], "critic2": [8, 8, 1]}


def agent(seed=0, **cfg):
    return SacAgent(6, 2, False, SacConfig(hidden=(8, 8), batch_size=16, **cfg), seed=seed)


def filled_buffer(n=200, seed=0, capacity=None, cls=ReplayBuffer):
    rng = np.random.default_rng(seed)
    buf = cls(capacity or n, 6, 2)
    for i in range(n):
        buf.push(rng.normal(size=6), rng.uniform(-1, 1, 2), rng.normal(size=6), rng.normal(), rng.random() < 0.05,
                 uid=1000 * seed + i)
    return buf


def prior_from(seed=1, n=100):
    prior = PriorBuffer(n, 6, 2)
    store_prior(filled_buffer(n, seed), prior, n, np.random.default_rng(0), "pointmass/goal-east")
    return prior


def skill(entries):
    return SkillNeuronSet({NeuronId(*k): v for k, v in entries.items()}, 0.2)


def params(a):
    return [p.copy() for n in (a.actor, a.critic1, a.critic2, a.target1, a.target2) for p in n.weights + n.biases]


class TestBuildMask:
    def test_values(self):
        m = build_mask(skill({("actor", 0, 1): 1.0, ("critic1", 1, 2): 0.5}), 0.2, SHAPES)
        assert m["actor"][0][1] == 0.0
        assert m["critic1"][1][2] == pytest.approx(0.1)
        assert m["actor"][0][0] == 1.0
        assert all((v == 1.0).all() for net in SHAPES for v in [m[net][-1]])

    def test_final_layer_rejected(self):
        with pytest.raises(ValueError, match="final layer"):
            build_mask(skill({("actor", 2, 0): 0.9}), 0.2, SHAPES)

    def test_bad_inputs(self):
        with pytest.raises(ShapeError):
            build_mask(skill({("actor", 0, 8): 0.9}), 0.2, SHAPES)
        with pytest.raises(ValueError):
            build_mask(skill({("actor", 0, 0): 0.4}), 0.2, SHAPES)
        with pytest.raises(ValueError):
            build_mask(skill({}), 1.5, SHAPES)

    def test_skill_values_bounded_by_half_alpha(self):
        rng = np.random.default_rng(0)
        entries = {("critic2", int(rng.integers(2)), int(rng.integers(8))): float(rng.uniform(0.5, 1.0))
                   for _ in range(10)}
        m = build_mask(skill(entries), 0.2, SHAPES)
        for (net, l, j) in entries:
            assert 0.0 <= m[net][l][j] <= 0.1


class TestMerge:
    def test_minimum(self):
        a = GradientMask.ones(SHAPES)
        b = GradientMask.ones(SHAPES)
        b["actor"][0][3] = 0.1
        a["actor"][0][4] = 0.05
        b["actor"][0][4] = 0.1
        m = merge_masks(a, b)
        assert m["actor"][0][3] == 0.1 and m["actor"][0][4] == 0.05

    def test_ones_is_neutral(self):
        a = build_mask(skill({("actor", 1, 2): 0.8}), 0.2, SHAPES)
        m = merge_masks(a, GradientMask.ones(SHAPES))
        assert all(np.array_equal(x, y) for n in SHAPES for x, y in zip(a[n], m[n]))

    def test_latest_rule(self):
        a = build_mask(skill({("actor", 1, 2): 0.8}), 0.2, SHAPES)
        b = GradientMask.ones(SHAPES)
        assert merge_masks(a, b, "latest").is_identity()

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            merge_masks(GradientMask.ones(SHAPES), GradientMask.ones({"actor": [8, 4]}))

    def test_bounds_after_merge_sequence(self):
        rng = np.random.default_rng(3)
        mask = GradientMask.ones(SHAPES)
        touched = set()
        for _ in range(6):
            entries = {}
            for _ in range(5):
                k = (str(rng.choice(list(SHAPES))), int(rng.integers(2)), int(rng.integers(8)))
                entries[k] = float(rng.uniform(0.5, 1.0))
            touched |= set(entries)
            mask = merge_masks(mask, build_mask(skill(entries), 0.2, SHAPES))
        for net, l, j, v in mask.rows():
            assert 0.0 <= v <= 1.0
            if (net, l, j) not in touched:
                assert v == 1.0


class TestGate:
    def test_examples(self):
        assert replay_gate(10, 10, True)
        assert not replay_gate(5, 10, True)
        assert not replay_gate(10, 10, False)
        assert not replay_gate(0, 10, True)
        with pytest.raises(ValueError):
            replay_gate(3, 0, True)

    def test_exact_fraction_over_steps(self):
        a = agent()
        state = NbspState(None, prior_from(), replay_interval=10)
        rng = np.random.default_rng(0)
        current = filled_buffer()
        sources = [nbsp_gradient_step(a, state, current, rng)["source"] for _ in range(1000)]
        assert sources.count("prior") == 100 == state.prior_steps
        assert [i + 1 for i, s in enumerate(sources) if s == "prior"][:3] == [10, 20, 30]

    def test_gate_count_is_one_over_k(self):
        for k in (1, 3, 7, 10):
            assert sum(replay_gate(t, k, True) for t in range(1, 10_001)) == 10_000 // k

    def test_unready_prior_falls_back(self, caplog):
        a = agent()
        prior = PriorBuffer(10, 6, 2)
        store_prior(filled_buffer(5), prior, 5, np.random.default_rng(0), "t")
        state = NbspState(None, prior, replay_interval=2)
        with caplog.at_level(logging.INFO, logger="nbsp.mechanism"):
            for _ in range(4):
                assert nbsp_gradient_step(a, state, filled_buffer(), np.random.default_rng(0))["source"] == "current"
        assert state.fallbacks == 2
        assert "prior buffer holds 5" in caplog.text


class TestStorePrior:
    def test_undersized_source(self):
        prior = PriorBuffer(2000, 6, 2)
        store_prior(filled_buffer(100), prior, 1000, np.random.default_rng(0), "a")
        assert len(prior) == 100

    def test_zero_store_is_noop(self):
        prior = PriorBuffer(10, 6, 2)
        store_prior(filled_buffer(100), prior, 0, np.random.default_rng(0), "a")
        assert len(prior) == 0

    def test_membership_and_uniqueness(self):
        source = filled_buffer(300, seed=2)
        prior = PriorBuffer(500, 6, 2)
        store_prior(source, prior, 120, np.random.default_rng(5), "a")
        got = prior.contents()
        src = source.contents()
        by_id = {int(i): k for k, i in enumerate(src.ids)}
        assert len(set(got.ids.tolist())) == 120
        for k, uid in enumerate(got.ids):
            j = by_id[int(uid)]
            assert np.array_equal(got.obs[k], src.obs[j]) and got.rewards[k] == src.rewards[j]

    def test_composition_and_eviction(self):
        prior = PriorBuffer(150, 6, 2)
        store_prior(filled_buffer(100, 1), prior, 100, np.random.default_rng(0), "east")
        store_prior(filled_buffer(100, 2), prior, 100, np.random.default_rng(0), "west")
        assert len(prior) == 150
        assert prior.composition() == {"east": 50, "west": 100}


class TestMaskedSteps:
    def test_collapse_to_plain_sac(self):
        a, b = agent(seed=4), agent(seed=4)
        current = filled_buffer()
        state = NbspState(GradientMask.ones(SHAPES), PriorBuffer(10, 6, 2), replay_interval=10)
        ra, rb = np.random.default_rng(9), np.random.default_rng(9)
        for _ in range(300):
            nbsp_gradient_step(a, state, current, ra)
            b.update(current.sample(16, rb))
        assert all(np.array_equal(x, y) for x, y in zip(params(a), params(b)))
        assert a.log_alpha == b.log_alpha

    @pytest.mark.parametrize("net", ["actor", "critic1", "critic2"])
    def test_zero_mask_freezes_neuron(self, net):
        a = agent(seed=2)
        mask = build_mask(skill({(net, 1, 3): 1.0, (net, 0, 5): 1.0}), 0.2, SHAPES)
        state = NbspState(mask, prior_from(), replay_interval=10)
        target = getattr(a, net)
        before = (target.weights[1][3].copy(), target.biases[1][3], target.weights[0][5].copy(), target.biases[0][5])
        rng = np.random.default_rng(0)
        current = filled_buffer()
        for _ in range(500):
            nbsp_gradient_step(a, state, current, rng)
        assert np.array_equal(target.weights[1][3], before[0]) and target.biases[1][3] == before[1]
        assert np.array_equal(target.weights[0][5], before[2]) and target.biases[0][5] == before[3]
        # neighbours keep learning
        assert not np.array_equal(target.weights[1][2], agent(seed=2).networks[net].weights[1][2])

    @pytest.mark.parametrize("net", ["actor", "critic1"])
    @pytest.mark.parametrize("value", [0.0, 0.03, 0.1, 0.5])
    def test_first_masked_gradient_is_proportional(self, net, value):
        batch = filled_buffer().sample(16, np.random.default_rng(1))
        plain, masked = agent(seed=3), agent(seed=3)
        plain.update(batch)
        mask = GradientMask.ones(SHAPES)
        mask[net][0][2] = value
        masked.update(batch, mask.restricted([net]).as_update_masks())
        mp, mm = plain.opt[net], masked.opt[net]
        assert np.allclose(mm.m_w[0][2], value * mp.m_w[0][2], rtol=1e-12, atol=0)
        assert np.allclose(mm.m_b[0][2], value * mp.m_b[0][2], rtol=1e-12, atol=0)
        others = [j for j in range(8) if j != 2]
        assert np.array_equal(mm.m_w[0][others], mp.m_w[0][others])

    @pytest.mark.parametrize("value", [0.0, 0.03, 0.1, 0.5])
    def test_first_delta_proportional_when_masking_after_adam(self, value):
        batch = filled_buffer().sample(16, np.random.default_rng(1))
        plain, masked = agent(seed=3, mask_after_adam=True), agent(seed=3, mask_after_adam=True)
        w0 = plain.critic1.weights[0][2].copy()
        plain.update(batch)
        mask = GradientMask.ones(SHAPES)
        mask["critic1"][0][2] = value
        masked.update(batch, mask.restricted(["critic1"]).as_update_masks())
        d_plain = plain.critic1.weights[0][2] - w0
        d_masked = masked.critic1.weights[0][2] - w0
        assert np.allclose(d_masked, value * d_plain, rtol=1e-9, atol=1e-18)

    def test_temperature_is_never_masked(self):
        a, b = agent(seed=5), agent(seed=5)
        batch = filled_buffer().sample(16, np.random.default_rng(0))
        a.update(batch)
        zero = GradientMask({k: [np.zeros(n) for n in v[:-1]] + [np.ones(v[-1])] for k, v in SHAPES.items()})
        b.update(batch, zero.as_update_masks())
        # the actor's input layer is frozen in b, yet log alpha still moves identically on the first step
        assert a.log_alpha == b.log_alpha != np.log(0.2)


def test_state_validation():
    with pytest.raises(ValueError):
        NbspState(None, PriorBuffer(1, 6, 2), replay_interval=0)
    with pytest.raises(ValueError):
        NbspState(None, PriorBuffer(1, 6, 2), alpha_mask=1.2)
