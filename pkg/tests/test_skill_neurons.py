import numpy as np
import pytest

from nbsp import envs
from nbsp.errors import TraceError
from nbsp.sac import SacAgent, SacConfig
from nbsp.skill_neurons import (NeuronId, Standards, collect_trace, compute_standards, eligible_neurons,
                                identify, positive_accuracy, random_skill_neurons, read_gpm_csv,
                                read_neuron_series, score, score_trace, select_skill_neurons,
                                trace_from_arrays, write_trace_csv)


def brute_force_acc(a, q, a_bar, q_bar):
    hits = 0
    for t in range(len(q)):
        hits += int((1 if a[t] > a_bar else 0) == (1 if q[t] > q_bar else 0))
    return hits / len(q)


def planted_trace(rng, steps=2000, neurons=50, planted=17, agree=0.95, sign=1):
    gpm = (rng.random(steps) < 0.5).astype(float)
    acts = rng.normal(size=(steps, neurons))
    flip = rng.random(steps) >= agree
    ind = (gpm > 0.5) ^ flip
    if sign < 0:
        ind = ~ind
    acts[:, planted] = np.where(ind, 1.0, 0.0) + 0.01 * rng.random(steps)
    return trace_from_arrays({"actor": acts}, gpm)


def small_agent(discrete=False, seed=0):
    obs, act = (4, 5) if discrete else (6, 2)
    return SacAgent(obs, act, discrete, SacConfig(hidden=(8, 8)), seed=seed)


def test_standards_hand_means():
    tr = trace_from_arrays({"actor": np.array([[1.0], [3.0]])}, [1.0, 1.0])
    st = compute_standards(tr)
    assert st.mean_activation["actor"].tolist() == [2.0]
    assert st.mean_gpm == 1.0
    tr = trace_from_arrays({"actor": np.zeros((4, 1))}, [1, 0, 1, 1])
    assert compute_standards(tr).mean_gpm == 0.75


def test_empty_trace_rejected():
    tr = trace_from_arrays({"actor": np.zeros((0, 2))}, [])
    with pytest.raises(TraceError):
        compute_standards(tr)


def test_positive_accuracy_hand_example():
    tr = trace_from_arrays({"actor": np.array([[1.2], [0.8], [1.5], [0.3]])}, [1, 0, 1, 1])
    acc = positive_accuracy(tr, Standards({"actor": np.array([1.0])}, 0.5))
    assert acc["actor"][0] == 0.75


def test_positive_accuracy_extremes():
    gpm = np.array([1, 0, 1, 0, 0])
    tr = trace_from_arrays({"actor": gpm[:, None] * 2.0}, gpm)
    assert positive_accuracy(tr, compute_standards(tr))["actor"][0] == 1.0
    # activation pinned at its standard gives indicator 0; every q is above q_bar
    tr = trace_from_arrays({"actor": np.full((3, 1), 0.4)}, [1.0, 1.0, 1.0])
    acc = positive_accuracy(tr, Standards({"actor": np.array([0.4])}, 0.5))
    assert acc["actor"][0] == 0.0


def test_score_values():
    assert score(0.75) == 0.75
    assert score(0.1) == pytest.approx(0.9)
    assert score(0.5) == 0.5
    with pytest.raises(ValueError):
        score(1.5)


def test_selection_top_half():
    ids = [NeuronId("actor", 0, j) for j in range(4)]
    chosen = select_skill_neurons(dict(zip(ids, [0.9, 0.8, 0.7, 0.6])), 0.5)
    assert set(chosen.entries) == set(ids[:2])
    assert len(select_skill_neurons(dict(zip(ids, [0.9, 0.8, 0.7, 0.6])), 1.0)) == 4


def test_selection_tie_break():
    ids = [NeuronId("actor", 0, 3), NeuronId("actor", 1, 0), NeuronId("actor", 0, 1), NeuronId("actor", 0, 0)]
    scores = dict(zip(ids, [0.7, 0.9, 0.7, 0.6]))
    chosen = select_skill_neurons(scores, 0.5)
    assert set(chosen.entries) == {NeuronId("actor", 1, 0), NeuronId("actor", 0, 1)}


def test_selection_rejects_bad_input():
    with pytest.raises(ValueError):
        select_skill_neurons({}, 0.2)
    with pytest.raises(ValueError):
        select_skill_neurons({NeuronId("actor", 0, 0): 0.6}, 0.0)


def test_per_network_quota():
    scores = {}
    for net, n in (("actor", 10), ("critic1", 20), ("critic2", 20)):
        for j in range(n):
            scores[NeuronId(net, 0, j)] = 0.9 if net == "critic1" else 0.6
    per = select_skill_neurons(scores, 0.2)
    assert [len(per.for_network(n)) for n in ("actor", "critic1", "critic2")] == [2, 4, 4]
    pooled = select_skill_neurons(scores, 0.2, scope="pooled")
    assert len(pooled) == 10 and len(pooled.for_network("critic1")) == 10


def test_planted_neuron_recovered_every_trial():
    for trial in range(100):
        rng = np.random.default_rng(trial)
        tr = planted_trace(rng)
        scores = score_trace(tr)
        ranked = sorted(scores, key=lambda n: -scores[n])
        assert ranked[0] == NeuronId("actor", 0, 17)
        a, q = tr.activations["actor"][:, 17], tr.gpm
        assert scores[ranked[0]] == score(brute_force_acc(a, q, a.mean(), q.mean()))
        chosen = select_skill_neurons(scores, 1 / 50)
        assert list(chosen.entries) == [NeuronId("actor", 0, 17)]


def test_anti_correlation_gives_same_score():
    pos = planted_trace(np.random.default_rng(5), sign=1)
    neg = planted_trace(np.random.default_rng(5), sign=-1)
    nid = NeuronId("actor", 0, 17)
    assert score_trace(pos)[nid] == score_trace(neg)[nid]


@pytest.mark.parametrize("c", [1e-3, 0.5, 7.0, 1e4])
def test_scale_invariance(c):
    rng = np.random.default_rng(2)
    acts = rng.random((300, 6))
    gpm = (rng.random(300) < 0.3).astype(float)
    base = positive_accuracy(trace_from_arrays({"actor": acts}, gpm),
                             compute_standards(trace_from_arrays({"actor": acts}, gpm)))
    scaled = acts.copy()
    scaled[:, 2] *= c
    tr = trace_from_arrays({"actor": scaled}, gpm)
    assert positive_accuracy(tr, compute_standards(tr))["actor"][2] == base["actor"][2]


def test_scores_bounded():
    rng = np.random.default_rng(9)
    tr = trace_from_arrays({"actor": rng.normal(size=(100, 30))}, rng.random(100))
    assert all(0.5 <= s <= 1.0 for s in score_trace(tr).values())


def test_random_selection_same_size_and_scores():
    rng = np.random.default_rng(0)
    tr = planted_trace(rng)
    scores = score_trace(tr)
    goal = select_skill_neurons(scores, 0.2)
    rand = random_skill_neurons(scores, 0.2, np.random.default_rng(1))
    assert len(rand) == len(goal) == 10
    assert all(rand.entries[n] == scores[n] for n in rand.entries)


def test_eligible_excludes_final_layer():
    ids = eligible_neurons("actor", [8, 8, 4])
    assert len(ids) == 16 and max(n.layer for n in ids) == 1


@pytest.mark.parametrize("discrete", [False, True])
def test_collect_trace_shape_and_episode_gpm(discrete):
    agent = small_agent(discrete)
    task = envs.make_task("gridworld/goal-east" if discrete else "pointmass/goal-east")
    tr = collect_trace(agent, task, 333, np.random.default_rng(0))
    assert len(tr) == 333
    assert {k: v.shape for k, v in tr.activations.items()} == {n: (333, 16) for n in ("actor", "critic1", "critic2")}
    for ep in np.unique(tr.episode):
        assert len(np.unique(tr.gpm[tr.episode == ep])) == 1


def test_collect_trace_deterministic():
    agent = small_agent()
    task = envs.make_task("pointmass/goal-west")
    a = collect_trace(agent, task, 250, np.random.default_rng(4))
    b = collect_trace(agent, task, 250, np.random.default_rng(4))
    assert np.array_equal(a.gpm, b.gpm)
    assert all(np.array_equal(a.activations[k], b.activations[k]) for k in a.activations)


def test_collect_trace_rejects_zero_steps():
    with pytest.raises(TraceError):
        collect_trace(small_agent(), envs.make_task("pointmass/goal-east"), 0, np.random.default_rng(0))


def test_identify_returns_balanced_set():
    agent = small_agent()
    skill, scores = identify(agent, envs.make_task("pointmass/goal-east"), 400, np.random.default_rng(0), 0.25)
    assert len(scores) == 48
    assert [len(skill.for_network(n)) for n in ("actor", "critic1", "critic2")] == [4, 4, 4]
    assert skill.source_task == "pointmass/goal-east"


def test_trace_export_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    tr = trace_from_arrays({"actor": rng.normal(size=(12, 3)), "critic1": rng.normal(size=(12, 2))},
                           rng.random(12), episode=np.repeat([0, 1, 2], 4))
    write_trace_csv(tr, tmp_path / "act.csv", tmp_path / "gpm.csv")
    steps, values = read_neuron_series(tmp_path / "act.csv", NeuronId("critic1", 0, 1))
    assert steps.tolist() == list(range(12))
    assert np.array_equal(values, tr.activations["critic1"][:, 1])
    assert list(read_gpm_csv(tmp_path / "gpm.csv").values()) == tr.gpm.tolist()
    with pytest.raises(KeyError, match="actor:0:2"):
        read_neuron_series(tmp_path / "act.csv", NeuronId("actor", 0, 9))
