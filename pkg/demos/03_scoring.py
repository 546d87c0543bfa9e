"""
Scoring with DER
================

Frame-level DER with a 0.25 s collar. Optimal mapping matches hypothesis
speakers to reference speakers freely; appearance mapping insists that the
i-th enrolled output is the i-th speaker to talk.
"""
import numpy as np

from fseend.evalkit import der
from fseend.labels import ActivityLabels

ref = np.zeros((60, 2), dtype=np.int8)
ref[5:30, 0] = 1
ref[25:55, 1] = 1
reference = ActivityLabels(ref, frame_period=0.1)

hyp = ref.copy()
hyp[5:8, 0] = 0       # late onset, mostly inside the collar
hyp[40:45, 1] = 0     # a real miss
print("late onset + miss:", der(reference, ActivityLabels(hyp)).to_dict())
print("same, no collar:  ", round(der(reference, ActivityLabels(hyp), collar=0.0).der, 4))

swapped = ActivityLabels(ref[:, ::-1])
print("swapped columns, optimal:   ", der(reference, swapped).der)
print("swapped columns, appearance:", der(reference, swapped, mapping="appearance").der)
