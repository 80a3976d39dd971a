"""
A toy fit with and without the nesting penalty
==============================================

Fit both branches' fields directly by gradient descent, starting from the same
noisy guess, once with lambda3 = 0 and once with lambda3 = 1, and compare how
much soft inner mass ends up outside the outer objects.
"""

# %%
from nestseg.cli import DEMO_SCENE
from nestseg.grid import to_semantic
from nestseg.losses import FieldTargets, LossConfig, outside_inner_mass, toy_fit
from nestseg.synth import SceneSpec, gen_scene

scene = gen_scene(SceneSpec.from_dict(dict(DEMO_SCENE, seed=1)))
t_inner = FieldTargets.from_mask(scene.gt_inner, 32)
t_outer = FieldTargets.from_mask(scene.gt_outer, 32)
outer = to_semantic(scene.gt_outer)

# %%
runs = {lam: toy_fit(t_inner, t_outer, outer, LossConfig(lambda3=lam), "wbr", iterations=200, seed=1)
        for lam in (0.0, 1.0)}
for lam, res in runs.items():
    print(f"lambda3={lam}: loss {res.trace[0]:.3f} -> {res.trace[-1]:.3f}, outside mass "
          f"{outside_inner_mass(res.initial1, outer):.4f} -> {outside_inner_mass(res.branch1, outer):.4f}")
