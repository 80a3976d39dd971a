"""Seeded nested star-convex scenes and controlled degradations of label masks."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .geometry import StarPolygon, is_star_convex, rasterize_crop
from .grid import as_label_mask, instance_ids

__all__ = [
    "SceneSpec",
    "NestedScene",
    "PlacementError",
    "random_blob",
    "gen_scene",
    "Drop",
    "Shift",
    "Erode",
    "Dilate",
    "SpawnOutside",
    "degrade",
    "make_rng",
]


OUTER_REDRAWS = 20


class PlacementError(RuntimeError):
    """Rejection sampling ran out of retries."""


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & (2**64 - 1)))


def _pair(x):
    lo, hi = (x, x) if np.isscalar(x) else x
    return float(lo), float(hi)


@dataclass(frozen=True)
class SceneSpec:
    height: int = 128
    width: int = 128
    n_outer: int = 3
    inner_per_outer: tuple = (1, 1)
    outer_radius: tuple = (18.0, 26.0)
    inner_radius: tuple = (5.0, 8.0)
    boundary_jitter: float = 0.15
    seed: int = 0
    n_rays: int = 32
    gap: int = 2
    max_retries: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "inner_per_outer", tuple(int(v) for v in _pair(self.inner_per_outer)))
        object.__setattr__(self, "outer_radius", _pair(self.outer_radius))
        object.__setattr__(self, "inner_radius", _pair(self.inner_radius))
        if self.n_outer < 1:
            raise ValueError("n_outer must be >= 1")
        if not 0 <= self.inner_per_outer[0] <= self.inner_per_outer[1]:
            raise ValueError("inner_per_outer must be a range of counts")
        if not self.inner_radius[1] < self.outer_radius[0]:
            raise ValueError("largest inner radius must be below the smallest outer radius")
        if self.boundary_jitter < 0:
            raise ValueError("boundary_jitter must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("inner_per_outer", "outer_radius", "inner_radius"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SceneSpec":
        return cls(**data)


@dataclass(frozen=True, eq=False)
class NestedScene:
    gt_outer: np.ndarray
    gt_inner: np.ndarray
    containment: dict
    centres: dict  # ("outer" | "inner", id) -> generation centre (row, col)


def random_blob(rng, centre, radius_range, jitter, n_rays=32) -> StarPolygon:
    """Star polygon with log-normal radii around a random base radius, smoothed along the ring."""
    base = rng.uniform(*radius_range)
    radii = base * np.exp(jitter * rng.standard_normal(n_rays))
    for _ in range(2):
        radii = 0.25 * np.roll(radii, 1) + 0.5 * radii + 0.25 * np.roll(radii, -1)
    return StarPolygon(centre, radii)


def _paint(target, r0, c0, crop, value):
    view = target[r0:r0 + crop.shape[0], c0:c0 + crop.shape[1]]
    view[crop] = value


def _fits(crop, r0, c0, shape):
    return crop.any() and r0 >= 0 and c0 >= 0 and r0 + crop.shape[0] <= shape[0] and c0 + crop.shape[1] <= shape[1]


def _place(rng, shape, centres_from, radius_range, jitter, n_rays, allowed, retries, what):
    """Draw blobs until one lies inside ``allowed``, stays star-convex and fits the grid."""
    for _ in range(retries):
        centre = centres_from()
        poly = random_blob(rng, centre, radius_range, jitter, n_rays)
        r0, c0, crop = rasterize_crop(poly, *shape)
        if not _fits(crop, r0, c0, shape):
            continue
        # the blob must not be clipped by the grid either
        v = poly.vertices()
        if v[:, 0].min() < 0 or v[:, 1].min() < 0 or v[:, 0].max() > shape[0] - 1 or v[:, 1].max() > shape[1] - 1:
            continue
        region = allowed[r0:r0 + crop.shape[0], c0:c0 + crop.shape[1]]
        if not np.all(region[crop]):
            continue
        cr, cc = int(centre[0]) - r0, int(centre[1]) - c0
        if not (0 <= cr < crop.shape[0] and 0 <= cc < crop.shape[1] and crop[cr, cc]):
            continue
        if not is_star_convex(crop, (cr, cc)):
            continue
        return r0, c0, crop, (int(centre[0]), int(centre[1]))
    raise PlacementError(f"could not place {what} within {retries} retries; "
                         "grid too small or radii too large for the requested counts")


def gen_scene(spec: SceneSpec) -> NestedScene:
    """Outer blobs separated by ``spec.gap`` pixels, each holding inner blobs strictly inside it."""
    rng = make_rng(spec.seed)
    shape = (spec.height, spec.width)
    struct = ndimage.generate_binary_structure(2, 1)
    outer = np.zeros(shape, dtype=np.int32)
    inner = np.zeros(shape, dtype=np.int32)
    cmap, centres = {}, {}

    def uniform_centre():
        return (int(rng.integers(0, spec.height)), int(rng.integers(0, spec.width)))

    def place_children(oid, count, first_id):
        own = outer == oid
        core = ndimage.binary_erosion(own, struct, iterations=1, border_value=0)
        layer = np.zeros(shape, dtype=np.int32)
        found = {}
        for nid in range(first_id, first_id + count):
            taken = ndimage.binary_dilation((inner > 0) | (layer > 0), struct, iterations=1)
            allowed = core & ~taken
            cand = np.argwhere(allowed)
            if cand.size == 0:
                raise PlacementError(f"no room left for inner objects in outer object {oid}")

            def inside_centre():
                r, c = cand[rng.integers(0, len(cand))]
                return int(r), int(c)

            r0, c0, crop, centre = _place(rng, shape, inside_centre, spec.inner_radius, spec.boundary_jitter,
                                          spec.n_rays, allowed, spec.max_retries,
                                          f"inner object in outer object {oid}")
            _paint(layer, r0, c0, crop, nid)
            found[nid] = centre
        return layer, found

    next_inner = 1
    for oid in range(1, spec.n_outer + 1):
        blocked = ndimage.binary_dilation(outer > 0, struct, iterations=spec.gap) if oid > 1 else np.zeros(shape, bool)
        lo, hi = spec.inner_per_outer
        count = int(rng.integers(lo, hi + 1))
        # an unlucky outer shape can leave no room for its inners; redraw the outer a few times
        for attempt in range(OUTER_REDRAWS):
            r0, c0, crop, centre = _place(rng, shape, uniform_centre, spec.outer_radius, spec.boundary_jitter,
                                          spec.n_rays, ~blocked, spec.max_retries, f"outer object {oid}")
            _paint(outer, r0, c0, crop, oid)
            try:
                layer, found = place_children(oid, count, next_inner)
                break
            except PlacementError:
                outer[outer == oid] = 0
                if attempt == OUTER_REDRAWS - 1:
                    raise
        inner[layer > 0] = layer[layer > 0]
        centres[("outer", oid)] = centre
        for nid, c in found.items():
            cmap[nid] = oid
            centres[("inner", nid)] = c
        next_inner += count
    return NestedScene(outer, inner, cmap, centres)



# --------------------------------------------------------------------------
# degradation operators
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Drop:
    """Remove each instance independently with probability ``p``."""
    p: float


@dataclass(frozen=True)
class Shift:
    """Translate every instance by ``(dr, dc)`` pixels; pixels leaving the grid are lost."""
    dr: int
    dc: int


@dataclass(frozen=True)
class Erode:
    n: int


@dataclass(frozen=True)
class Dilate:
    """Grow instances ``n`` steps into background only; contested pixels go to the smaller id."""
    n: int


@dataclass(frozen=True, eq=False)
class SpawnOutside:
    """Add ``k`` star-convex instances inside the complement of ``forbidden``, clear of existing ones."""
    k: int
    forbidden: np.ndarray
    radius: tuple = (3.0, 6.0)
    jitter: float = 0.15


def _drop(mask, op, rng):
    if not 0 <= op.p <= 1:
        raise ValueError("drop probability must lie in [0, 1]")
    out = mask.copy()
    for iid in instance_ids(mask):
        if rng.random() < op.p:
            out[mask == iid] = 0
    return out


def _shift(mask, op, rng):
    out = np.zeros_like(mask)
    H, W = mask.shape
    dr, dc = int(op.dr), int(op.dc)
    src_r = slice(max(0, -dr), min(H, H - dr))
    src_c = slice(max(0, -dc), min(W, W - dc))
    dst_r = slice(max(0, dr), min(H, H + dr))
    dst_c = slice(max(0, dc), min(W, W + dc))
    if src_r.start < src_r.stop and src_c.start < src_c.stop:
        out[dst_r, dst_c] = mask[src_r, src_c]
    return out


def _erode(mask, op, rng):
    if op.n < 0:
        raise ValueError("erode steps must be >= 0")
    if op.n == 0:
        return mask.copy()
    out = np.zeros_like(mask)
    for iid in instance_ids(mask):
        keep = ndimage.binary_erosion(mask == iid, iterations=op.n, border_value=0)
        out[keep] = iid
    return out


def _dilate(mask, op, rng):
    if op.n < 0:
        raise ValueError("dilate steps must be >= 0")
    out = mask.copy()
    for _ in range(op.n):
        before = out.copy()
        for iid in instance_ids(before):
            grown = ndimage.binary_dilation(before == iid) & (out == 0)
            out[grown] = iid
    return out


def _spawn(mask, op, rng):
    if op.k < 0:
        raise ValueError("spawn count must be >= 0")
    forbidden = np.asarray(op.forbidden) > 0
    if forbidden.shape != mask.shape:
        raise ValueError(f"incompatible grids: forbidden {forbidden.shape} vs mask {mask.shape}")
    out = mask.copy()
    next_id = int(out.max()) + 1
    for _ in range(op.k):
        allowed = ~forbidden & ~ndimage.binary_dilation(out > 0)
        cand = np.argwhere(allowed)
        if cand.size == 0:
            raise PlacementError("spawn_outside: no free pixel outside the forbidden mask")

        def centre():
            r, c = cand[rng.integers(0, len(cand))]
            return int(r), int(c)

        r0, c0, crop, _ = _place(rng, mask.shape, centre, op.radius, op.jitter, 32, allowed,
                                 1000, "spawned instance outside the forbidden mask")
        _paint(out, r0, c0, crop, next_id)
        next_id += 1
    return out


_OPS = {Drop: _drop, Shift: _shift, Erode: _erode, Dilate: _dilate, SpawnOutside: _spawn}


def degrade(mask, ops=(), seed: int = 0) -> np.ndarray:
    """Apply degradation operators in order with one seeded generator."""
    out = as_label_mask(mask).copy()
    rng = make_rng(seed)
    for op in ops:
        try:
            fn = _OPS[type(op)]
        except KeyError:
            raise TypeError(f"unknown degradation operator {op!r}") from None
        out = fn(out, op, rng)
    return out
