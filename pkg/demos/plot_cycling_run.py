"""
A short cycling run
===================

Two pointmass tasks (reach a goal to the east, then to the west) are learned
in sequence. After each segment skill neurons are identified, the mask is
merged and part of the segment's experience joins the prior buffer. The
``smoke`` preset keeps this to a couple of minutes; the full preset
``nbsp-pointmass-2task`` is what the acceptance experiments use.
"""

import numpy as np

from nbsp.config import preset
from nbsp.harness import run_cycling_experiment
from nbsp.plots import curves_svg

config = preset("smoke").with_overrides(cycles=2, budget=6000, checkpoints=False)
art = run_cycling_experiment(config, seed=0, out_dir="cycling_run")

np.set_printoptions(precision=2)
print(art.sr.values)
print({k: round(v, 3) for k, v in art.metrics.items() if k in ("asr", "fm", "fwt")})

# Every mask entry lies in [0, 1]; the actor's first layer shows which
# neurons are currently protected.
actor_mask = art.masks[-1][1]["actor"][0]
print("protected actor neurons:", np.flatnonzero(actor_mask < 1.0))

svg = curves_svg(list(art.curves), n_segments=len(config.segments), cycle_length=len(config.experiment.tasks),
                 title="evaluation success during training")
with open("cycling_curves.svg", "w") as fh:
    fh.write(svg)
print("wrote cycling_curves.svg")
