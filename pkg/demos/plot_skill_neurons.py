"""
Finding skill neurons in an activation trace
============================================

A neuron is a skill neuron when "activation above its average" predicts
"episode reached the goal" at most steps, or consistently predicts the
opposite. Here one neuron out of fifty is planted with that property and the
scoring recovers it. The activation histogram is written as SVG.
"""

import numpy as np

from nbsp.plots import histogram_svg
from nbsp.skill_neurons import score_trace, select_skill_neurons, trace_from_arrays

rng = np.random.default_rng(0)
steps, neurons, planted = 2000, 50, 31

# Goal proximity per step: 1 when the episode succeeded.
gpm = (rng.random(steps) < 0.4).astype(float)

activations = rng.gamma(2.0, 1.0, size=(steps, neurons))
agrees = rng.random(steps) < 0.95
activations[:, planted] = np.where((gpm > 0.5) == agrees, 2.5, 0.5) + 0.3 * rng.normal(size=steps)

trace = trace_from_arrays({"actor": activations}, gpm)
scores = score_trace(trace)
best = sorted(scores, key=scores.get, reverse=True)[:3]
for nid in best:
    print(f"neuron {nid.index:2d}  score {scores[nid]:.3f}")

# Selection keeps the top 20% of neurons in each network.
chosen = select_skill_neurons(scores, 0.2)
print(len(chosen), "skill neurons selected; planted one included:",
      any(n.index == planted for n in chosen.entries))

a = activations[:, planted]
svg = histogram_svg(a[gpm > 0.5], a[gpm <= 0.5], title=f"actor neuron {planted}")
with open("skill_neuron_histogram.svg", "w") as fh:
    fh.write(svg)
print("wrote skill_neuron_histogram.svg")
