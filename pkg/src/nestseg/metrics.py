"""Instance matching and evaluation: IoU_R, AP, joint TP rates."""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .grid import as_label_mask, instance_ids

__all__ = [
    "MatchTable",
    "MetricReport",
    "ImagePair",
    "JTPR",
    "DEFAULT_TAUS",
    "overlap_table",
    "instance_iou",
    "match",
    "iou_recall",
    "average_precision",
    "ap_from_counts",
    "ap_indifference_delta",
    "containment",
    "joint_tp_count",
    "jtpr_one_to_one",
    "jtpr_one_to_many",
    "metric_table",
]

DEFAULT_TAUS = tuple(round(0.1 * i, 1) for i in range(1, 10))
THREADS_ENV = "NESTSEG_THREADS"


@dataclass(frozen=True)
class MatchTable:
    tau: float
    pairs: tuple  # (gt_id, pred_id, iou), sorted by gt_id
    n_gt: int
    n_pred: int

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def fn(self) -> int:
        return self.n_gt - self.tp

    @property
    def fp(self) -> int:
        return self.n_pred - self.tp

    @property
    def matched_gt(self) -> frozenset:
        return frozenset(g for g, _, _ in self.pairs)

    @property
    def iou_sum(self) -> float:
        return float(sum(iou for _, _, iou in self.pairs))


def overlap_table(gt, pred):
    """Pairwise IoU between the instances of two label masks.

    Returns ``(gt_ids, pred_ids, iou)`` where ``iou`` has one row per gt id.
    Only co-occurring pairs are counted, everything else is exactly 0.
    """
    gt = as_label_mask(gt)
    pred = as_label_mask(pred)
    if gt.shape != pred.shape:
        raise ValueError(f"incompatible grids: {gt.shape} vs {pred.shape}")
    g_ids, g_inv, g_area = np.unique(gt.ravel(), return_inverse=True, return_counts=True)
    p_ids, p_inv, p_area = np.unique(pred.ravel(), return_inverse=True, return_counts=True)
    inter = np.zeros((g_ids.size, p_ids.size), dtype=np.int64)
    np.add.at(inter, (g_inv.ravel(), p_inv.ravel()), 1)
    gsel = g_ids > 0
    psel = p_ids > 0
    inter = inter[np.ix_(gsel, psel)]
    union = g_area[gsel][:, None] + p_area[psel][None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, inter / np.maximum(union, 1), 0.0)
    return g_ids[gsel], p_ids[psel], iou


def instance_iou(gt, gt_id, pred, pred_id) -> float:
    a = as_label_mask(gt) == gt_id
    b = as_label_mask(pred) == pred_id
    if not a.any():
        raise KeyError(f"gt id {gt_id} not present")
    if not b.any():
        raise KeyError(f"pred id {pred_id} not present")
    return float(np.count_nonzero(a & b) / np.count_nonzero(a | b))


def _assign(iou: np.ndarray, tau: float):
    valid = iou > tau
    if not valid.any():
        return []
    rows = np.flatnonzero(valid.any(axis=1))
    cols = np.flatnonzero(valid.any(axis=0))
    sub = iou[np.ix_(rows, cols)]
    sub_valid = valid[np.ix_(rows, cols)]
    # a pair's weight exceeds any total IoU, so the pair count is maximised first
    bonus = min(sub.shape) + 1.0
    gain = np.where(sub_valid, bonus + sub, 0.0)
    ri, ci = linear_sum_assignment(gain, maximize=True)
    keep = sub_valid[ri, ci]
    return [(rows[i], cols[j]) for i, j in zip(ri[keep], ci[keep])]


def match(gt, pred, tau: float = 0.5, *, table=None) -> MatchTable:
    """One-to-one matching with the most pairs of IoU > tau, then the largest total IoU."""
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    g_ids, p_ids, iou = overlap_table(gt, pred) if table is None else table
    pairs = sorted((int(g_ids[i]), int(p_ids[j]), float(iou[i, j])) for i, j in _assign(iou, tau))
    return MatchTable(float(tau), tuple(pairs), int(g_ids.size), int(p_ids.size))


def iou_recall(gt, pred, tau: float = 0.5) -> float:
    """Sum of matched IoUs divided by the number of ground-truth objects."""
    m = match(gt, pred, tau)
    if m.n_gt == 0:
        raise ValueError("IoU_R undefined: ground truth has no objects")
    return m.iou_sum / m.n_gt


def ap_from_counts(tp: int, fn: int, fp: int) -> float:
    total = tp + fn + fp
    if total == 0:
        raise ValueError("AP undefined: no ground-truth and no predicted objects")
    return tp / total


def average_precision(gt, pred, tau: float = 0.5) -> float:
    """``TP / (TP + FN + FP)`` at a single threshold."""
    m = match(gt, pred, tau)
    return ap_from_counts(m.tp, m.fn, m.fp)


def ap_indifference_delta(tp: int, fn: int, fp: int, delta_tp: int) -> float:
    """Change in FP that exactly cancels a TP change of ``delta_tp`` in AP.

    With ``k = tp + fn`` fixed, ``AP(tp, fn, fp) == AP(tp + delta_tp,
    fn - delta_tp, fp + delta_fp)`` for ``delta_fp = delta_tp * (k + fp) / tp``.
    For a TP loss (``delta_tp < 0``) any FP change at or below this boundary
    leaves AP unchanged or higher.
    """
    if tp <= 0 or fn < 0 or fp < 0:
        raise ValueError("need tp > 0 and fn, fp >= 0")
    if not 0 <= tp + delta_tp <= tp + fn:
        raise ValueError("tp + delta_tp must lie in [0, tp + fn]")
    return delta_tp * (tp + fn + fp) / tp


def containment(gt_inner, gt_outer) -> dict:
    """Map each inner id to the outer id covering most of its pixels (``None`` if none does).

    Ties go to the smaller outer id.
    """
    inner = as_label_mask(gt_inner)
    outer = as_label_mask(gt_outer)
    if inner.shape != outer.shape:
        raise ValueError(f"incompatible grids: {inner.shape} vs {outer.shape}")
    result = {}
    for iid in instance_ids(inner):
        under = outer[inner == iid]
        under = under[under > 0]
        if under.size == 0:
            result[int(iid)] = None
            continue
        ids, counts = np.unique(under, return_counts=True)
        result[int(iid)] = int(ids[np.argmax(counts)])  # argmax takes the first, i.e. smallest id
    return result


class JTPR(NamedTuple):
    inner: float
    outer: float


def _nested_matches(gt_inner, pred_inner, gt_outer, pred_outer, tau, cmap=None):
    mi = match(gt_inner, pred_inner, tau)
    mo = match(gt_outer, pred_outer, tau)
    if mi.n_gt == 0 or mo.n_gt == 0:
        raise ValueError("JTPR undefined: a ground-truth category has no objects")
    if cmap is None:
        cmap = containment(gt_inner, gt_outer)
    return mi, mo, cmap


def joint_tp_count(mi: MatchTable, mo: MatchTable, cmap: dict) -> int:
    """Number of inner GT objects matched together with their containing outer GT object."""
    inner_hit, outer_hit = mi.matched_gt, mo.matched_gt
    return sum(1 for i, o in cmap.items() if o is not None and i in inner_hit and o in outer_hit)


def jtpr_one_to_one(gt_inner, pred_inner, gt_outer, pred_outer, tau: float = 0.5, *, cmap=None) -> JTPR:
    """Joint TP count normalised by the inner and by the outer GT count."""
    mi, mo, cmap = _nested_matches(gt_inner, pred_inner, gt_outer, pred_outer, tau, cmap)
    j = joint_tp_count(mi, mo, cmap)
    return JTPR(j / mi.n_gt, j / mo.n_gt)


def _one_to_many_counts(mi, mo, cmap, outer_policy):
    if outer_policy not in ("any", "all"):
        raise ValueError(f"outer_policy must be 'any' or 'all', got {outer_policy!r}")
    inner_hit = mi.matched_gt
    children: dict = {}
    for i, o in cmap.items():
        if o is not None:
            children.setdefault(o, []).append(i)
    inner_num = 0
    outer_num = 0
    for o in mo.matched_gt:
        kids = children.get(o, [])
        hits = sum(1 for i in kids if i in inner_hit)
        inner_num += hits
        if not kids or (hits == len(kids) if outer_policy == "all" else hits > 0):
            outer_num += 1
    return inner_num, outer_num


def jtpr_one_to_many(gt_inner, pred_inner, gt_outer, pred_outer, tau: float = 0.5,
                     outer_policy: str = "any", *, cmap=None) -> JTPR:
    """Joint TP rates when one outer object may hold several inner objects.

    ``inner`` sums, over matched outer GT objects, their matched inner GT
    children, divided by the inner GT count. ``outer`` counts matched outer
    GT objects whose children satisfy ``outer_policy`` (``"any"``: at least one
    child matched, or no children; ``"all"``: every child matched), divided by
    the outer GT count.
    """
    mi, mo, cmap = _nested_matches(gt_inner, pred_inner, gt_outer, pred_outer, tau, cmap)
    inner_num, outer_num = _one_to_many_counts(mi, mo, cmap, outer_policy)
    return JTPR(inner_num / mi.n_gt, outer_num / mo.n_gt)


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ImagePair:
    """Ground truth and prediction for one image; ``*_outer`` left as None for single-category evaluation."""

    gt: np.ndarray
    pred: np.ndarray
    gt_outer: np.ndarray | None = None
    pred_outer: np.ndarray | None = None

    @property
    def nested(self) -> bool:
        return self.gt_outer is not None


@dataclass
class MetricReport:
    taus: tuple
    rows: dict  # metric name -> list of values, one per tau
    aggregation: str
    config: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def row(self, name: str) -> list:
        return self.rows[name]

    def to_dict(self) -> dict:
        return {"taus": list(self.taus), "rows": {k: list(v) for k, v in self.rows.items()},
                "aggregation": self.aggregation, "config": dict(self.config),
                "warnings": list(self.warnings)}

    @classmethod
    def from_dict(cls, data: dict) -> "MetricReport":
        return cls(tuple(data["taus"]), {k: list(v) for k, v in data["rows"].items()},
                   data["aggregation"], dict(data.get("config", {})), list(data.get("warnings", [])))


COUNT_KEYS = ("tp", "fp", "fn")


def _category_stats(gt, pred, taus):
    table = overlap_table(gt, pred)
    return [match(gt, pred, t, table=table) for t in taus]


def _image_stats(pair: ImagePair, taus, nesting, outer_policy):
    """Per-tau raw counts for one image."""
    stats = []
    inner = _category_stats(pair.gt, pair.pred, taus)
    outer = _category_stats(pair.gt_outer, pair.pred_outer, taus) if pair.nested else [None] * len(taus)
    cmap = containment(pair.gt, pair.gt_outer) if pair.nested else None
    for mi, mo in zip(inner, outer):
        s = {"inner": mi, "outer": mo}
        if mo is not None:
            if nesting == "one-to-one":
                j = joint_tp_count(mi, mo, cmap)
                s["joint"] = (j, j)
            else:
                s["joint"] = _one_to_many_counts(mi, mo, cmap, outer_policy)
        stats.append(s)
    return stats


def _safe_div(num, den):
    return num / den if den else float("nan")


def _metrics_from(stats_list, nested, aggregation):
    """Aggregate one tau's stats over images into metric values."""
    cats = ("inner", "outer") if nested else ("inner",)
    out = {}
    for cat in cats:
        suffix = f"_{cat}" if nested else ""
        ms = [s[cat] for s in stats_list]
        if aggregation == "pooled":
            n_gt = sum(m.n_gt for m in ms)
            out[f"IoU_R{suffix}"] = _safe_div(sum(m.iou_sum for m in ms), n_gt)
            out[f"AP{suffix}"] = _safe_div(sum(m.tp for m in ms), sum(m.tp + m.fn + m.fp for m in ms))
        else:
            out[f"IoU_R{suffix}"] = float(np.mean([m.iou_sum / m.n_gt for m in ms]))
            out[f"AP{suffix}"] = float(np.mean([ap_from_counts(m.tp, m.fn, m.fp) for m in ms]))
    if nested:
        n1 = [s["inner"].n_gt for s in stats_list]
        n2 = [s["outer"].n_gt for s in stats_list]
        ji = [s["joint"][0] for s in stats_list]
        jo = [s["joint"][1] for s in stats_list]
        if aggregation == "pooled":
            out["JTPR_inner"] = _safe_div(sum(ji), sum(n1))
            out["JTPR_outer"] = _safe_div(sum(jo), sum(n2))
        else:
            out["JTPR_inner"] = float(np.mean([a / b for a, b in zip(ji, n1)]))
            out["JTPR_outer"] = float(np.mean([a / b for a, b in zip(jo, n2)]))
    for cat in cats:
        suffix = f"_{cat}" if nested else ""
        for key in COUNT_KEYS:
            out[f"{key}{suffix}"] = int(sum(getattr(s[cat], key) for s in stats_list))
    return out


def _workers(workers):
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get(THREADS_ENV)
    return max(1, int(env)) if env else 1


def metric_table(images: Sequence[ImagePair], taus=DEFAULT_TAUS, nesting: str = "one-to-one",
                 aggregation: str = "per-image-mean", outer_policy: str = "any",
                 config: dict | None = None, workers: int | None = None) -> MetricReport:
    """Evaluate every image at every tau and aggregate.

    ``per-image-mean`` averages per-image metric values (images whose ground
    truth is empty are skipped with a warning); ``pooled`` sums counts over
    images before dividing. Count rows (``tp``/``fp``/``fn``) are totals in
    both modes. Images are evaluated on ``workers`` threads (default from
    ``NESTSEG_THREADS``, else 1); the result does not depend on it.
    """
    if not images:
        raise ValueError("metric_table needs at least one image")
    taus = tuple(float(t) for t in taus)
    if any(not 0 < t < 1 for t in taus) or any(b <= a for a, b in zip(taus, taus[1:])):
        raise ValueError("tau grid must be strictly increasing within (0, 1)")
    if nesting not in ("one-to-one", "one-to-many"):
        raise ValueError(f"nesting must be 'one-to-one' or 'one-to-many', got {nesting!r}")
    if aggregation not in ("per-image-mean", "pooled"):
        raise ValueError(f"aggregation must be 'per-image-mean' or 'pooled', got {aggregation!r}")
    nested = images[0].nested
    if any(im.nested != nested for im in images):
        raise ValueError("mix of nested and single-category images")

    notes = []
    keep = []
    for idx, im in enumerate(images):
        empty = instance_ids(im.gt).size == 0 or (nested and instance_ids(im.gt_outer).size == 0)
        if empty and aggregation == "per-image-mean":
            msg = f"image {idx}: empty ground truth, skipped"
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            notes.append(msg)
            continue
        keep.append(im)
    if not keep:
        raise ValueError("no image with non-empty ground truth")

    def run(im):
        if nested:
            return _image_stats(im, taus, nesting, outer_policy)
        return [{"inner": m} for m in _category_stats(im.gt, im.pred, taus)]

    n = _workers(workers)
    if n > 1:
        with ThreadPoolExecutor(max_workers=n) as pool:
            per_image = list(pool.map(run, keep))
    else:
        per_image = [run(im) for im in keep]

    rows: dict = {}
    for ti in range(len(taus)):
        values = _metrics_from([stats[ti] for stats in per_image], nested, aggregation)
        for k, v in values.items():
            rows.setdefault(k, []).append(v)
    cfg = {"nesting": nesting, "outer_policy": outer_policy, "n_images": len(keep)}
    cfg.update(config or {})
    return MetricReport(taus, rows, aggregation, cfg, notes)
