"""Gradient masks from skill-neuron scores, the prior-experience buffer and replay gating."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from nbsp.errors import NotReadyError, ShapeError
from nbsp.sac import ReplayBuffer, SacAgent
from nbsp.skill_neurons import SkillNeuronSet

log = logging.getLogger(__name__)


class GradientMask:
    """Per-network, per-layer multipliers over output neurons."""

    def __init__(self, layers: dict[str, list[np.ndarray]]):
        self.layers = layers

    @classmethod
    def ones(cls, shapes: dict[str, list[int]]) -> "GradientMask":
        return cls({name: [np.ones(n) for n in sizes] for name, sizes in shapes.items()})

    @property
    def shapes(self) -> dict[str, list[int]]:
        return {name: [len(v) for v in vecs] for name, vecs in self.layers.items()}

    def __getitem__(self, network: str) -> list[np.ndarray]:
        return self.layers[network]

    def copy(self) -> "GradientMask":
        return GradientMask({k: [v.copy() for v in vecs] for k, vecs in self.layers.items()})

    def restricted(self, networks) -> "GradientMask":
        """Copy in which networks outside ``networks`` are reset to all ones."""
        keep = set(networks)
        return GradientMask({k: [v.copy() if k in keep else np.ones_like(v) for v in vecs]
                             for k, vecs in self.layers.items()})

    def as_update_masks(self) -> dict[str, list[np.ndarray]]:
        return self.layers

    def is_identity(self) -> bool:
        return all((v == 1.0).all() for vecs in self.layers.values() for v in vecs)

    def rows(self):
        """``(network, layer, index, mask)`` for every neuron."""
        for name, vecs in self.layers.items():
            for l, v in enumerate(vecs):
                for j, m in enumerate(v):
                    yield name, l, j, float(m)


def build_mask(skill_set: SkillNeuronSet, alpha: float, shapes: dict[str, list[int]]) -> GradientMask:
    """alpha * (1 - score) on skill neurons, 1 everywhere else."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"mask strength alpha must lie in [0, 1], got {alpha}")
    mask = GradientMask.ones(shapes)
    for nid, s in skill_set.entries.items():
        if nid.network not in shapes:
            raise ShapeError(f"skill neuron {nid} refers to an unknown network")
        sizes = shapes[nid.network]
        if nid.layer >= len(sizes) - 1:
            raise ValueError(f"skill neuron {nid} lies in a final layer; final layers are never masked")
        if not 0.0 <= nid.index < sizes[nid.layer]:
            raise ShapeError(f"skill neuron {nid} index out of range")
        if not 0.5 <= s <= 1.0:
            raise ValueError(f"skill neuron {nid} has score {s} outside [0.5, 1]")
        mask.layers[nid.network][nid.layer][nid.index] = alpha * (1.0 - s)
    return mask


def merge_masks(current: GradientMask, incoming: GradientMask, rule: str = "min") -> GradientMask:
    """Combine masks from successive tasks; ``"min"`` keeps the strongest protection."""
    if current.shapes != incoming.shapes:
        raise ShapeError("cannot merge masks of different shapes")
    if rule == "latest":
        return incoming.copy()
    if rule != "min":
        raise ValueError(f"unknown merge rule {rule!r}")
    return GradientMask({k: [np.minimum(a, b) for a, b in zip(current.layers[k], incoming.layers[k])]
                         for k in current.layers})


def replay_gate(step: int, k: int, prior_nonempty: bool) -> bool:
    """True on every k-th gradient step once there is prior experience."""
    if k < 1:
        raise ValueError("replay interval must be >= 1")
    return bool(prior_nonempty) and step > 0 and step % k == 0


class PriorBuffer(ReplayBuffer):
    """Unified buffer of experience from completed task segments, tagged by source."""

    def __init__(self, capacity: int, obs_dim: int, action_dim: int, discrete: bool = False):
        super().__init__(capacity, obs_dim, action_dim, discrete)
        self.tags = np.empty(capacity, dtype=object)

    def push_tagged(self, batch, tag: str) -> None:
        for i in range(len(batch)):
            self.tags[self.ptr] = tag
            self.push(batch.obs[i], batch.actions[i], batch.next_obs[i], batch.rewards[i], batch.dones[i],
                      uid=int(batch.ids[i]))

    def composition(self) -> dict[str, int]:
        return dict(sorted(Counter(self.tags[self._order()]).items()))


def store_prior(current: ReplayBuffer, prior: PriorBuffer, store_size: int, rng: np.random.Generator,
                tag: str) -> PriorBuffer:
    """Append a uniform without-replacement sample of ``current`` to ``prior``."""
    n = min(store_size, len(current))
    if n <= 0:
        return prior
    order = current._order()
    picked = np.sort(rng.choice(len(order), size=n, replace=False))
    prior.push_tagged(current.take(order[picked]), tag)
    return prior


@dataclass
class NbspState:
    mask: GradientMask | None
    prior: PriorBuffer
    replay_interval: int = 10
    alpha_mask: float = 0.2
    replay: bool = True
    skill_sets: list[SkillNeuronSet] = field(default_factory=list)
    grad_step: int = 0
    prior_steps: int = 0
    fallbacks: int = 0

    def __post_init__(self):
        if self.replay_interval < 1:
            raise ValueError("replay interval must be >= 1")
        if not 0.0 <= self.alpha_mask <= 1.0:
            raise ValueError("alpha_mask must lie in [0, 1]")


def nbsp_gradient_step(agent: SacAgent, state: NbspState, current: ReplayBuffer,
                       rng: np.random.Generator) -> dict:
    """One SAC update on a batch from the prior buffer (gated steps) or the current one."""
    state.grad_step += 1
    bs = agent.config.batch_size
    source = "current"
    gate = state.replay and replay_gate(state.grad_step, state.replay_interval, len(state.prior) > 0)
    if gate:
        try:
            batch = state.prior.sample(bs, rng)
            source = "prior"
            state.prior_steps += 1
        except NotReadyError:
            state.fallbacks += 1
            log.info("gradient step %d: prior buffer holds %d < %d transitions, using current buffer",
                     state.grad_step, len(state.prior), bs)
            batch = current.sample(bs, rng)
    else:
        batch = current.sample(bs, rng)
    masks = None if state.mask is None else state.mask.as_update_masks()
    stats = agent.update(batch, masks)
    stats["source"] = source
    return stats
