"""
The within-boundary penalty
===========================

The penalty is smallest when every predicted inner pixel sits inside the
predicted outer object and grows as inner mass leaks outside.
"""

# %%
import numpy as np

from nestseg.grid import to_semantic
from nestseg.losses import wbr_penalty
from nestseg.synth import Dilate, SceneSpec, SpawnOutside, degrade, gen_scene

eps = 1e-7
scene = gen_scene(SceneSpec(seed=2, inner_per_outer=(1, 2)))
outer = to_semantic(scene.gt_outer)
inner = scene.gt_inner

print("nested ground truth:", wbr_penalty(to_semantic(inner), outer, outer, eps), "=", 1 / (1 + eps))

# %%
# inner objects spawned outside every outer push the value up
for k in (1, 3, 6):
    leaky = degrade(inner, [SpawnOutside(k, outer)], seed=k)
    print(f"{k} stray inner objects -> {wbr_penalty(to_semantic(leaky), outer, outer, eps):.4f}")

# %%
# growing the inners until they spill over the outer boundary does the same
for n in (0, 4, 8, 12):
    grown = degrade(inner, [Dilate(n)])
    print(f"inner dilated {n:>2} px -> {wbr_penalty(to_semantic(grown), outer, outer, eps):.4f}")

# %%
# every outside pixel predicted as inner reaches the upper limit 1/eps
print("worst case:", wbr_penalty(1 - outer, outer, outer, eps))
