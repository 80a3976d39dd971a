"""
Scoring nested predictions
==========================

IoU_R, AP and the joint TP rate across the usual threshold grid, for
predictions with known damage: dropped inners and shrunken outers.
"""

# %%
from nestseg.io import write_metric_report
from nestseg.metrics import ImagePair, average_precision, iou_recall, metric_table
from nestseg.synth import Drop, Erode, SceneSpec, degrade, gen_scene

images = []
for seed in range(5):
    s = gen_scene(SceneSpec(seed=seed, inner_per_outer=(1, 3)))
    images.append(ImagePair(s.gt_inner, degrade(s.gt_inner, [Drop(0.3)], seed),
                            s.gt_outer, degrade(s.gt_outer, [Erode(2)], seed)))

report = metric_table(images, nesting="one-to-many")
print(write_metric_report(report, "markdown"))

# %%
# erosion keeps AP flat while IoU_R keeps falling
gt = images[0].gt_outer
for n in (1, 2, 3, 4):
    pred = degrade(gt, [Erode(n)])
    print(f"erode {n}: AP {average_precision(gt, pred, 0.5):.3f}  IoU_R {iou_recall(gt, pred, 0.5):.3f}")
