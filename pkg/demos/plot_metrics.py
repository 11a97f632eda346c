"""
Continual-learning metrics from an sr matrix
============================================

After segment ``i`` of a cycling run the agent is evaluated on every segment
seen so far, giving row ``i`` of a lower-triangular matrix. Three numbers
summarise it: average success (ASR), forgetting (FM) and forward transfer
(FWT).
"""

import numpy as np

from nbsp.metrics import SrMatrix, MetricSummary, fm

# Two tasks cycled twice. The first agent forgets task 1 as soon as it
# learns task 2; the second keeps both.
forgetful = SrMatrix.from_array(np.array([
    [1.0, np.nan, np.nan, np.nan],
    [0.1, 1.0, np.nan, np.nan],
    [1.0, 0.0, 1.0, np.nan],
    [0.0, 1.0, 0.1, 1.0],
]))
stable = SrMatrix.from_array(np.tril(np.ones((4, 4))) + np.triu(np.full((4, 4), np.nan), 1))

for name, sr in (("forgetful", forgetful), ("stable", stable)):
    s = MetricSummary.of(sr)
    print(f"{name:9s}  ASR {s.asr:.3f}  FM {s.fm:.3f}  FWT {s.fwt:.3f}")

# Both agents learn every segment when it comes up, so FWT is identical;
# only the off-diagonal entries separate them.

# FM compares an entry with the best value it held after its own segment but
# before the current one, averaged over the earlier segments. The
# "inclusive" variant also counts the current segment, whose gap is zero, so
# each row is averaged over one more term.
print("FM previous-rows peak:", round(fm(forgetful), 3))
print("FM inclusive peak:    ", round(fm(forgetful, inner="inclusive"), 3))
