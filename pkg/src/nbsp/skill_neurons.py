"""Goal-oriented identification of skill neurons.

A neuron's activation is compared with its mean over an evaluation trace, the
agent's goal proximity with its own mean, and the neuron is scored by how
often the two above-average indicators agree (or consistently disagree).
Only hidden layers are eligible; final layers never are.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

import numpy as np

from nbsp import envs
from nbsp.errors import TraceError

NETWORK_ORDER = ("actor", "critic1", "critic2")


class NeuronId(NamedTuple):
    network: str
    layer: int
    index: int


@dataclass
class Trace:
    """Per-step activations of every eligible neuron plus per-step goal proximity."""

    activations: dict[str, np.ndarray]  # network -> (T, n_eligible)
    neurons: dict[str, list[NeuronId]]  # network -> column labels
    gpm: np.ndarray  # (T,)
    episode: np.ndarray  # (T,) episode index of each step

    def __len__(self) -> int:
        return len(self.gpm)


@dataclass
class Standards:
    mean_activation: dict[str, np.ndarray]
    mean_gpm: float


@dataclass
class SkillNeuronSet:
    entries: dict[NeuronId, float]
    proportion: float
    source_task: str = ""
    eligible: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def for_network(self, network: str) -> dict[NeuronId, float]:
        return {n: s for n, s in self.entries.items() if n.network == network}


def eligible_neurons(network: str, layer_sizes) -> list[NeuronId]:
    """Hidden-layer neurons of a network, in (layer, index) order."""
    return [NeuronId(network, l, j) for l, size in enumerate(layer_sizes[:-1]) for j in range(size)]


def hidden_activations(net, x) -> np.ndarray:
    """Concatenated hidden-layer activations for a batch of inputs."""
    _, rec = net.forward(np.atleast_2d(x), record=True)
    return np.concatenate(rec[:-1], axis=1)


def trace_from_arrays(activations: Mapping[str, np.ndarray], gpm, episode=None,
                      layer_sizes: Mapping[str, list[int]] | None = None) -> Trace:
    """Wrap raw arrays as a :class:`Trace`; columns default to layer 0."""
    acts = {k: np.asarray(v, dtype=np.float64) for k, v in activations.items()}
    gpm = np.asarray(gpm, dtype=np.float64)
    neurons = {}
    for name, a in acts.items():
        if layer_sizes and name in layer_sizes:
            neurons[name] = eligible_neurons(name, layer_sizes[name])
        else:
            neurons[name] = [NeuronId(name, 0, j) for j in range(a.shape[1])]
        if len(neurons[name]) != a.shape[1]:
            raise ValueError(f"{name}: {a.shape[1]} activation columns for {len(neurons[name])} neurons")
        if a.shape[0] != len(gpm):
            raise ValueError(f"{name}: {a.shape[0]} activation rows for {len(gpm)} gpm entries")
    ep = np.zeros(len(gpm), dtype=np.int64) if episode is None else np.asarray(episode, dtype=np.int64)
    return Trace(acts, neurons, gpm, ep)


def collect_trace(agent, task: envs.TaskSpec, steps: int, rng: np.random.Generator,
                  mode: str = "stochastic", episode_seed0: int = 0,
                  norm=None) -> Trace:
    """Roll the agent out on ``task`` and record activations for exactly ``steps`` steps.

    Episodes are always played to completion so every recorded step inherits
    its episode's goal proximity; the trace is then cut to ``steps`` entries.
    Critic activations are taken on the executed (state, action) pairs.
    """
    if steps < 1:
        raise TraceError("identification needs at least one step")
    if task.gpm_kind == "normalized_return" and norm is None:
        norm = envs.return_norm(task)
    obs_rows, act_rows, gpm_rows, ep_rows = [], [], [], []
    n_episodes = 0
    while len(obs_rows) < steps:
        state = envs.reset(task, episode_seed0 + n_episodes)
        obs = envs.observe(task, state)
        record = envs.EpisodeRecord()
        ep_obs, ep_act = [], []
        done = False
        while not done:
            action, _ = agent.sample_action(obs, mode, rng)
            state, reward, done = envs.step(task, state, action)
            ep_obs.append(obs)
            ep_act.append(action)
            record.ret += reward
            obs = envs.observe(task, state)
        record.success = bool(state.success)
        q = envs.gpm(record, task, norm)
        obs_rows.extend(ep_obs)
        act_rows.extend(ep_act)
        gpm_rows.extend([q] * len(ep_obs))
        ep_rows.extend([n_episodes] * len(ep_obs))
        n_episodes += 1
    obs_arr = np.array(obs_rows[:steps])
    if agent.discrete:
        critic_in = obs_arr
    else:
        critic_in = np.concatenate([obs_arr, np.array(act_rows[:steps])], axis=1)
    inputs = {"actor": obs_arr, "critic1": critic_in, "critic2": critic_in}
    acts, neurons = {}, {}
    for name, net in agent.networks.items():
        acts[name] = hidden_activations(net, inputs[name])
        neurons[name] = eligible_neurons(name, net.layer_sizes)
    return Trace(acts, neurons, np.array(gpm_rows[:steps]), np.array(ep_rows[:steps]))


def compute_standards(trace: Trace) -> Standards:
    """Mean activation per neuron and mean goal proximity."""
    if len(trace) == 0:
        raise TraceError("empty trace")
    return Standards({k: a.mean(axis=0) for k, a in trace.activations.items()}, float(trace.gpm.mean()))


def positive_accuracy(trace: Trace, standards: Standards) -> dict[str, np.ndarray]:
    """Fraction of steps where ``a > mean_a`` agrees with ``q > mean_q``, per neuron."""
    if len(trace) == 0:
        raise TraceError("empty trace")
    q_ind = trace.gpm > standards.mean_gpm
    out = {}
    for name, a in trace.activations.items():
        a_ind = a > standards.mean_activation[name]
        out[name] = (a_ind == q_ind[:, None]).mean(axis=0)
    return out


def score(acc):
    """Comprehensive score max(acc, 1 - acc); elementwise for arrays."""
    if np.isscalar(acc):
        if not 0.0 <= acc <= 1.0:
            raise ValueError(f"accuracy {acc} outside [0, 1]")
        return max(acc, 1.0 - acc)
    acc = np.asarray(acc, dtype=np.float64)
    return np.maximum(acc, 1.0 - acc)


def score_trace(trace: Trace, standards: Standards | None = None) -> dict[NeuronId, float]:
    """Scores for every neuron of a trace; standards default to the trace itself."""
    standards = compute_standards(trace) if standards is None else standards
    acc = positive_accuracy(trace, standards)
    scores = {}
    for name, values in acc.items():
        for nid, s in zip(trace.neurons[name], score(values)):
            scores[nid] = float(s)
    return scores


def _quota(proportion: float, count: int) -> int:
    return int(math.floor(proportion * count + 0.5))


def _ranked(ids):
    return sorted(ids, key=lambda item: (-item[1], item[0].layer, item[0].index, item[0].network))


def select_skill_neurons(scores: Mapping[NeuronId, float], proportion: float,
                         scope: str = "per_network", source_task: str = "") -> SkillNeuronSet:
    """Top ``round(proportion * eligible)`` neurons by score.

    With ``scope="per_network"`` each network contributes its own quota;
    ``"pooled"`` ranks every neuron together. Ties go to the smaller
    ``(layer, index)``.
    """
    if not scores:
        raise ValueError("no neuron scores to select from")
    if not 0.0 < proportion <= 1.0:
        raise ValueError(f"proportion must lie in (0, 1], got {proportion}")
    if scope == "per_network":
        groups: dict[str, list] = {}
        for nid, s in scores.items():
            groups.setdefault(nid.network, []).append((nid, s))
    elif scope == "pooled":
        groups = {"*": list(scores.items())}
    else:
        raise ValueError(f"unknown selection scope {scope!r}")
    chosen = {}
    for items in groups.values():
        for nid, s in _ranked(items)[: _quota(proportion, len(items))]:
            chosen[nid] = s
    eligible = {}
    for nid in scores:
        eligible[nid.network] = eligible.get(nid.network, 0) + 1
    return SkillNeuronSet(chosen, proportion, source_task, eligible)


def random_skill_neurons(scores: Mapping[NeuronId, float], proportion: float, rng: np.random.Generator,
                         scope: str = "per_network", source_task: str = "") -> SkillNeuronSet:
    """Same cardinality as :func:`select_skill_neurons`, neurons drawn uniformly.

    Each chosen neuron keeps its computed score so only the choice differs.
    """
    reference = select_skill_neurons(scores, proportion, scope, source_task)
    if scope == "per_network":
        groups: dict[str, list] = {}
        for nid in scores:
            groups.setdefault(nid.network, []).append(nid)
    else:
        groups = {"*": list(scores)}
    chosen = {}
    for key in sorted(groups):
        ids = sorted(groups[key], key=lambda n: (n.network, n.layer, n.index))
        quota = _quota(proportion, len(ids))
        for i in rng.choice(len(ids), size=quota, replace=False):
            chosen[ids[i]] = scores[ids[i]]
    return SkillNeuronSet(chosen, proportion, source_task, reference.eligible)


def identify(agent, task: envs.TaskSpec, steps: int, rng: np.random.Generator, proportion: float,
             mode: str = "stochastic", scope: str = "per_network", second_pass: str = "fresh",
             episode_seed0: int = 0):
    """Two-pass identification; returns ``(skill_set, scores)``.

    The first pass fixes the standards. The second pass, by default a fresh
    set of rollouts, is compared against them; ``second_pass="same"`` reuses
    the first trace.
    """
    first = collect_trace(agent, task, steps, rng, mode, episode_seed0)
    standards = compute_standards(first)
    if second_pass == "fresh":
        second = collect_trace(agent, task, steps, rng, mode, episode_seed0 + 1_000_000)
    elif second_pass == "same":
        second = first
    else:
        raise ValueError(f"unknown second_pass {second_pass!r}")
    scores = score_trace(second, standards)
    return select_skill_neurons(scores, proportion, scope, task.name), scores


def write_trace_csv(trace: Trace, activation_path, gpm_path) -> None:
    """Long-format activation table plus a parallel per-step goal-proximity table."""
    with open(activation_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "episode", "network", "layer", "index", "activation"])
        for name in sorted(trace.activations, key=lambda n: NETWORK_ORDER.index(n) if n in NETWORK_ORDER else 99):
            a = trace.activations[name]
            for t in range(len(trace)):
                ep = int(trace.episode[t])
                for col, nid in enumerate(trace.neurons[name]):
                    w.writerow([t, ep, name, nid.layer, nid.index, repr(float(a[t, col]))])
    with open(gpm_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "gpm"])
        for t, q in enumerate(trace.gpm):
            w.writerow([t, repr(float(q))])


def read_neuron_series(activation_path, neuron: NeuronId) -> tuple[np.ndarray, np.ndarray]:
    """Activations of one neuron from a trace export, as ``(steps, values)``.

    Raises ``KeyError`` listing the available ids when the neuron is absent.
    """
    steps, values = [], []
    available = set()
    with open(activation_path, newline="") as fh:
        for row in csv.DictReader(fh):
            nid = NeuronId(row["network"], int(row["layer"]), int(row["index"]))
            if nid == neuron:
                steps.append(int(row["step"]))
                values.append(float(row["activation"]))
            else:
                available.add(nid)
    if not steps:
        listing = ", ".join(f"{n.network}:{n.layer}:{n.index}" for n in sorted(available)[:50])
        more = "" if len(available) <= 50 else f" (+{len(available) - 50} more)"
        raise KeyError(f"neuron {neuron.network}:{neuron.layer}:{neuron.index} not in trace; available: {listing}{more}")
    return np.array(steps), np.array(values)


def read_gpm_csv(gpm_path) -> dict[int, float]:
    with open(gpm_path, newline="") as fh:
        return {int(r["step"]): float(r["gpm"]) for r in csv.DictReader(fh)}
