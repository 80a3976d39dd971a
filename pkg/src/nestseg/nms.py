"""Polygon proposals from d/r fields, greedy NMS and instance rendering."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import StarPolygon, rasterize_crop

__all__ = ["Proposal", "propose", "nms", "render_instances", "predict_instances"]

DEFAULT_PROB_THRESH = 0.5
DEFAULT_NMS_THRESH = 0.4


@dataclass(frozen=True, eq=False)
class Proposal:
    polygon: StarPolygon
    score: float

    @property
    def pixel(self) -> tuple[int, int]:
        return int(self.polygon.centre[0]), int(self.polygon.centre[1])


def _order_key(p: Proposal):
    return (-p.score, p.pixel)


def propose(d, r, prob_thresh: float = DEFAULT_PROB_THRESH) -> list[Proposal]:
    """One proposal per pixel with ``d >= prob_thresh``, best score first.

    Ties are broken by ``(row, col)`` ascending.
    """
    d = np.asarray(d, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if d.shape != r.shape[:2]:
        raise ValueError(f"incompatible grids: d {d.shape} vs r {r.shape[:2]}")
    if not 0.0 <= prob_thresh <= 1.0:
        raise ValueError("prob_thresh must lie in [0, 1]")
    rows, cols = np.nonzero(d >= prob_thresh)
    scores = d[rows, cols]
    order = np.lexsort((cols, rows, -scores))
    return [
        Proposal(StarPolygon((rows[i], cols[i]), r[rows[i], cols[i]]), float(scores[i]))
        for i in order
    ]


@dataclass
class _Raster:
    r0: int
    c0: int
    crop: np.ndarray
    area: int = field(init=False)

    def __post_init__(self):
        self.area = int(self.crop.sum())

    def intersection(self, other: "_Raster") -> int:
        r0 = max(self.r0, other.r0)
        c0 = max(self.c0, other.c0)
        r1 = min(self.r0 + self.crop.shape[0], other.r0 + other.crop.shape[0])
        c1 = min(self.c0 + self.crop.shape[1], other.c0 + other.crop.shape[1])
        if r1 <= r0 or c1 <= c0:
            return 0
        a = self.crop[r0 - self.r0:r1 - self.r0, c0 - self.c0:c1 - self.c0]
        b = other.crop[r0 - other.r0:r1 - other.r0, c0 - other.c0:c1 - other.c0]
        return int(np.count_nonzero(a & b))

    def iou(self, other: "_Raster") -> float:
        inter = self.intersection(other)
        union = self.area + other.area - inter
        return inter / union if union else 0.0


def _raster(p: Proposal, height: int, width: int) -> _Raster:
    return _Raster(*rasterize_crop(p.polygon, height, width))


def nms(proposals, overlap_thresh: float = DEFAULT_NMS_THRESH, height: int = None, width: int = None) -> list[Proposal]:
    """Greedy suppression on rasterized-mask IoU.

    Proposals are visited best score first; one is rejected when its IoU with
    any already accepted proposal exceeds ``overlap_thresh``.
    """
    if not 0.0 <= overlap_thresh <= 1.0:
        raise ValueError("overlap_thresh must lie in [0, 1]")
    if height is None or width is None:
        raise ValueError("nms needs the grid height and width")
    kept: list[Proposal] = []
    kept_rasters: list[_Raster] = []
    for p in sorted(proposals, key=_order_key):
        ras = _raster(p, height, width)
        if all(ras.iou(k) <= overlap_thresh for k in kept_rasters):
            kept.append(p)
            kept_rasters.append(ras)
    return kept


def render_instances(accepted, height: int, width: int) -> np.ndarray:
    """Paint polygons lowest score first so better proposals win contested pixels.

    Ids are ``1..n`` in descending score order. Instances fully overpainted
    leave no pixels and hence no id in the output.
    """
    ranked = sorted(accepted, key=_order_key)
    out = np.zeros((height, width), dtype=np.int32)
    for idx in range(len(ranked) - 1, -1, -1):
        r0, c0, crop = rasterize_crop(ranked[idx].polygon, height, width)
        view = out[r0:r0 + crop.shape[0], c0:c0 + crop.shape[1]]
        view[crop] = idx + 1
    return out


def predict_instances(d, r, prob_thresh: float = DEFAULT_PROB_THRESH,
                      overlap_thresh: float = DEFAULT_NMS_THRESH) -> np.ndarray:
    """``propose -> nms -> render_instances`` in one call."""
    d = np.asarray(d)
    h, w = d.shape
    kept = nms(propose(d, r, prob_thresh), overlap_thresh, h, w)
    return render_instances(kept, h, w)
