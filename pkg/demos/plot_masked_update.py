"""
Protecting neurons with a gradient mask
=======================================

A mask holds one multiplier per output neuron. Skill neurons get
``alpha * (1 - score)``, everything else 1. The multiplier scales the rows of
the weight gradient and the bias gradient before Adam sees them, so a neuron
with score 1 keeps its incoming weights exactly.
"""

import numpy as np

from nbsp.mechanism import build_mask
from nbsp.nn import AdamState, DenseNet, adam_step
from nbsp.skill_neurons import NeuronId, SkillNeuronSet

rng = np.random.default_rng(1)
net = DenseNet([4, 6, 6, 1], rng=rng, name="critic1")
shapes = {"critic1": net.layer_sizes}

skill = SkillNeuronSet({NeuronId("critic1", 0, 2): 1.0, NeuronId("critic1", 1, 4): 0.75}, proportion=0.2)
mask = build_mask(skill, alpha=0.2, shapes=shapes)
print("layer 0 mask:", mask["critic1"][0])
print("layer 1 mask:", mask["critic1"][1])

start = [w.copy() for w in net.weights]
opt = AdamState.for_net(net)
x = rng.normal(size=(32, 4))
target = np.sin(x.sum(axis=1, keepdims=True))
for _ in range(200):
    out, cache = net.forward_cache(x)
    grads = net.backward(x, (out - target) / len(x), cache)
    adam_step(net, grads, opt, 1e-2, mask["critic1"])

change = [np.abs(w - w0).max(axis=1) for w, w0 in zip(net.weights, start)]
print("largest weight change per neuron, layer 0:", np.round(change[0], 4))
print("neuron 2 of layer 0 untouched:", change[0][2] == 0.0)
