"""Star-convex polygons and the ground-truth fields that define them.

Angle convention: ray ``k`` points along ``theta_k = 2*pi*k/K`` with
``theta_0`` east (+col) and angles increasing counter-clockwise when north
(-row) is up, so the unit step of ray ``k`` is ``(-sin theta_k, cos theta_k)``
in ``(row, col)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from .grid import as_label_mask

__all__ = [
    "StarPolygon",
    "ray_directions",
    "boundary_distance_field",
    "radial_field",
    "polygon_from_fields",
    "rasterize",
    "rasterize_crop",
    "is_star_convex",
]

RAY_STEP = 0.5


def _nearest(x):
    # round-half-up; np.round would send 0.5 to 0 and 1.5 to 2
    return np.floor(x + 0.5).astype(np.int64)


def ray_directions(n_rays: int) -> np.ndarray:
    """Unit ``(drow, dcol)`` steps for ``n_rays`` equispaced angles."""
    if n_rays < 3:
        raise ValueError(f"a star polygon needs at least 3 rays, got K={n_rays}")
    theta = 2 * np.pi * np.arange(n_rays) / n_rays
    # snap so that rational components (0, +-1/2, +-1) are exact and
    # half-pixel ties round the same way for every ray
    return np.round(np.stack([-np.sin(theta), np.cos(theta)], axis=1), 12) + 0.0


@lru_cache(maxsize=None)
def _cached_directions(n_rays):
    dirs = ray_directions(n_rays)
    dirs.flags.writeable = False
    return dirs


@dataclass(frozen=True, eq=False)
class StarPolygon:
    """Star centre plus ``K`` radii at equispaced angles (pixels)."""

    centre: tuple[float, float]
    radii: np.ndarray

    def __post_init__(self):
        radii = np.asarray(self.radii, dtype=np.float64).reshape(-1)
        if radii.size < 3:
            raise ValueError(f"a star polygon needs at least 3 rays, got K={radii.size}")
        if np.any(radii < 0) or not np.all(np.isfinite(radii)):
            raise ValueError("radii must be finite and non-negative")
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "centre", (float(self.centre[0]), float(self.centre[1])))

    @property
    def n_rays(self) -> int:
        return self.radii.size

    def vertices(self) -> np.ndarray:
        """``(K, 2)`` array of ``(row, col)`` vertex coordinates."""
        return np.asarray(self.centre) + self.radii[:, None] * _cached_directions(self.n_rays)

    def area(self) -> float:
        v = self.vertices()
        y, x = v[:, 0], v[:, 1]
        return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _instance_slices(lbl):
    """Yield ``(id, slice)`` bounding boxes without allocating a table per id value."""
    ids, inverse = np.unique(lbl, return_inverse=True)
    dense = inverse.reshape(lbl.shape)
    if ids[0] != 0:
        dense = dense + 1
        ids = np.concatenate([[0], ids])
    for i, slc in enumerate(ndimage.find_objects(dense), start=1):
        if slc is not None:
            yield int(ids[i]), slc


def boundary_distance_field(mask) -> np.ndarray:
    """Per-instance normalised Euclidean distance to the nearest other pixel.

    A foreground pixel's raw value is its distance to the closest pixel with a
    different id (background or another instance); pixels beyond the grid
    count as background. Each instance is then scaled so its own maximum is 1.
    """
    lbl = as_label_mask(mask)
    out = np.zeros(lbl.shape, dtype=np.float64)
    for inst, (rs, cs) in _instance_slices(lbl):
        crop = np.pad(lbl[rs, cs] == inst, 1)
        dist = ndimage.distance_transform_edt(crop)[1:-1, 1:-1]
        sel = lbl[rs, cs] == inst
        out[rs, cs][sel] = dist[sel] / dist[sel].max()
    return out


def _same_after_shift(lbl, dr, dc):
    """``out[r, c] = lbl[r + dr, c + dc] == lbl[r, c]``; False where the shift leaves the grid."""
    H, W = lbl.shape
    out = np.zeros((H, W), dtype=bool)
    if abs(dr) >= H or abs(dc) >= W:
        return out
    dst = (slice(max(0, -dr), H - max(0, dr)), slice(max(0, -dc), W - max(0, dc)))
    src = (slice(max(0, dr), H - max(0, -dr)), slice(max(0, dc), W - max(0, -dc)))
    out[dst] = lbl[src] == lbl[dst]
    return out


def radial_field(mask, n_rays: int = 32, step: float = RAY_STEP) -> np.ndarray:
    """Distance along each ray to where it leaves the pixel's instance.

    Samples sit at multiples of ``step`` and are rounded to the nearest pixel;
    a sample off the grid counts as leaving. The crossing is placed midway
    between the last inside sample and the first outside one, so the error is
    at most ``step / 2``. Background pixels get all-zero rays.
    """
    dirs = ray_directions(n_rays)
    lbl = as_label_mask(mask)
    H, W = lbl.shape
    out = np.zeros((H, W, n_rays), dtype=np.float64)
    fg = lbl > 0
    if not fg.any():
        return out
    # pixel centres are integral, so the rounded offset of the n-th sample is
    # the same for every pixel and the march can run on whole-grid shifts
    for k, (dr, dc) in enumerate(dirs):
        alive = fg.copy()
        dist = out[:, :, k]
        prev = (0, 0)
        n = 1
        while alive.any():
            t = n * step
            offset = (int(np.floor(t * dr + 0.5)), int(np.floor(t * dc + 0.5)))
            if offset != prev:
                same = _same_after_shift(lbl, *offset)
                dist[alive & ~same] = t - 0.5 * step
                alive &= same
                prev = offset
            n += 1
    return out


def polygon_from_fields(pixel, r) -> StarPolygon:
    r = np.asarray(r)
    row, col = int(pixel[0]), int(pixel[1])
    if not (0 <= row < r.shape[0] and 0 <= col < r.shape[1]):
        raise IndexError(f"pixel {(row, col)} outside grid of shape {r.shape[:2]}")
    return StarPolygon((row, col), r[row, col].copy())


def rasterize_crop(poly: StarPolygon, height: int, width: int):
    """Rasterize into the polygon's clipped bounding box.

    Returns ``(row0, col0, crop)`` where ``crop`` is a boolean array; ``crop``
    is empty when the polygon misses the grid entirely.
    """
    v = poly.vertices()
    r0 = max(int(np.ceil(v[:, 0].min())), 0)
    r1 = min(int(np.floor(v[:, 0].max())), height - 1)
    c0 = max(int(np.ceil(v[:, 1].min())), 0)
    c1 = min(int(np.floor(v[:, 1].max())), width - 1)
    if r1 < r0 or c1 < c0:
        return r0, c0, np.zeros((0, 0), dtype=bool)
    py = np.arange(r0, r1 + 1, dtype=np.float64)[:, None]
    y1, x1 = v[:, 0], v[:, 1]
    y2 = np.concatenate([y1[1:], y1[:1]])
    x2 = np.concatenate([x1[1:], x1[:1]])
    straddles = (y1 > py) != (y2 > py)
    rr, kk = np.nonzero(straddles)
    x_cross = (x2[kk] - x1[kk]) * (py[rr, 0] - y1[kk]) / (y2[kk] - y1[kk]) + x1[kk]
    # pixel centre col c lies left of a crossing x iff c < ceil(x); count those per row
    n_cols = c1 - c0 + 1
    idx = np.clip(np.ceil(x_cross).astype(np.int64) - c0, 0, n_cols)
    n_rows = r1 - r0 + 1
    hist = np.bincount(rr * (n_cols + 1) + idx, minlength=n_rows * (n_cols + 1)).reshape(n_rows, n_cols + 1)
    right_of = np.cumsum(hist[:, ::-1], axis=1)[:, ::-1]
    return r0, c0, (right_of[:, 1:] % 2).astype(bool)


def rasterize(poly: StarPolygon, height: int, width: int) -> np.ndarray:
    """Even-odd rasterization sampling pixel centres, clipped to the grid."""
    out = np.zeros((height, width), dtype=np.uint8)
    r0, c0, crop = rasterize_crop(poly, height, width)
    out[r0:r0 + crop.shape[0], c0:c0 + crop.shape[1]] = crop
    return out


def is_star_convex(mask, centre, spacing: float = 0.5) -> bool:
    """Discrete star-convexity of the set pixels of ``mask`` around ``centre``.

    Every segment from the centre to a set pixel is sampled at most ``spacing``
    apart; each sample is rounded to its nearest pixel, which must be set.
    """
    m = np.asarray(mask) > 0
    cr, cc = int(centre[0]), int(centre[1])
    if not (0 <= cr < m.shape[0] and 0 <= cc < m.shape[1]) or not m[cr, cc]:
        raise ValueError(f"centre {(cr, cc)} is not a set pixel; invalid star centre")
    rows, cols = np.nonzero(m)
    length = np.hypot(rows - cr, cols - cc).max()
    n = max(int(np.ceil(length / spacing)), 1) + 1
    t = np.linspace(0.0, 1.0, n)
    chunk = max(1, 2_000_000 // n)
    for s in range(0, rows.size, chunk):
        pr = rows[s:s + chunk, None]
        pc = cols[s:s + chunk, None]
        sr = _nearest(cr + t * (pr - cr))
        sc = _nearest(cc + t * (pc - cc))
        if not m[sr, sc].all():
            return False
    return True
