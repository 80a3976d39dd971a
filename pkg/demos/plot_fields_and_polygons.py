"""
Distance and radial fields of a star-convex blob
================================================

Draw one random blob, compute its normalised distance field and the 32 ray
lengths at every pixel, then rebuild the polygon from the most central pixel.
"""

# %%
import numpy as np

from nestseg.geometry import boundary_distance_field, polygon_from_fields, radial_field, rasterize
from nestseg.synth import make_rng, random_blob

rng = make_rng(0)
mask = rasterize(random_blob(rng, (40, 40), (22, 22), 0.15, 32), 80, 80)
print("object area:", int(mask.sum()), "px")

# %%
# d is 1 at the pixel furthest from the background and falls to the border
d = boundary_distance_field(mask)
r = radial_field(mask, n_rays=32)
centre = tuple(int(i) for i in np.unravel_index(np.argmax(d), d.shape))
print("most central pixel:", centre, "ray lengths:", np.round(r[centre][:8], 2), "...")

# %%
# the polygon from that single pixel covers nearly the whole object
rebuilt = rasterize(polygon_from_fields(centre, r), 80, 80)
iou = np.sum((mask > 0) & (rebuilt > 0)) / np.sum((mask > 0) | (rebuilt > 0))
print(f"IoU of rebuilt polygon: {iou:.3f}")

# %%
# fewer rays give a coarser outline
for k in (8, 16, 32, 64):
    rk = radial_field(mask, n_rays=k)
    out = rasterize(polygon_from_fields(centre, rk), 80, 80)
    print(k, "rays ->", round(float(np.sum((mask > 0) & (out > 0)) / np.sum((mask > 0) | (out > 0))), 3))
