"""Continual reinforcement learning with skill-neuron gradient masking and interval replay.

The package is a small numpy stack: dense networks with Adam (:mod:`nbsp.nn`),
seedable pointmass and gridworld tasks (:mod:`nbsp.envs`), soft actor-critic
(:mod:`nbsp.sac`), skill-neuron identification (:mod:`nbsp.skill_neurons`), the
masking and replay mechanism (:mod:`nbsp.mechanism`), a cycling-task harness
(:mod:`nbsp.harness`) and continual-learning metrics (:mod:`nbsp.metrics`).
"""

__version__ = "0.1.0"
