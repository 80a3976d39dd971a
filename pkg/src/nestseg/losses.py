"""Branched StarDist loss, within-boundary penalties and a toy field optimiser.

Penalty inputs are semantic masks. Integer arrays are binarised (``> 0``) so
label masks may be passed directly; float arrays are treated as soft masks
with values in ``[0, 1]`` and used as-is.

Every ratio entering a penalty is clamped to ``[0, 1]`` before use: numerators
come from predictions while denominators come from ground truth, so an
unclamped ratio can exceed 1 and push the reciprocal's argument to zero or
below.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .grid import invert, to_semantic
from .nms import DEFAULT_NMS_THRESH, DEFAULT_PROB_THRESH, predict_instances

__all__ = [
    "LossConfig",
    "BranchFields",
    "FieldTargets",
    "ToyFitResult",
    "BCE_CLIP",
    "PENALTY_KINDS",
    "bce_term",
    "distance_term",
    "stardist_loss",
    "wbr_penalty",
    "wbr_exclusive",
    "wbr_overlap",
    "soft_semantic",
    "branch_semantic",
    "combined_loss",
    "toy_objective",
    "toy_fit",
    "outside_inner_mass",
]

BCE_CLIP = 1e-7
PENALTY_KINDS = ("none", "wbr", "exclusive", "overlap")
REDUCTIONS = ("mean", "sum")


@dataclass(frozen=True)
class LossConfig:
    lambda1: float = 0.2
    lambda2: float = 1e-4
    lambda3: float = 1.0
    eps: float = 1e-7
    alpha: float | None = None

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not self.eps > 0:
            raise ValueError("eps must be strictly positive")
        if self.alpha is not None and not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in the open interval (0, 1)")

    def as_dict(self) -> dict:
        return {"lambda1": self.lambda1, "lambda2": self.lambda2, "lambda3": self.lambda3,
                "eps": self.eps, "alpha": self.alpha}


@dataclass(frozen=True, eq=False)
class BranchFields:
    """Ground-truth and predicted d/r fields of one decoder branch."""

    d_gt: np.ndarray
    d_pred: np.ndarray
    r_gt: np.ndarray
    r_pred: np.ndarray

    def __post_init__(self):
        for name in ("d_gt", "d_pred", "r_gt", "r_pred"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.d_gt.shape != self.d_pred.shape:
            raise ValueError(f"incompatible grids: d_gt {self.d_gt.shape} vs d_pred {self.d_pred.shape}")
        if self.r_gt.shape != self.r_pred.shape:
            raise ValueError(f"incompatible radial fields: {self.r_gt.shape} vs {self.r_pred.shape}")
        if self.r_gt.ndim != 3 or self.r_gt.shape[:2] != self.d_gt.shape:
            raise ValueError(f"radial field {self.r_gt.shape} does not match grid {self.d_gt.shape}")

    @property
    def n_rays(self) -> int:
        return self.r_gt.shape[2]


@dataclass(frozen=True, eq=False)
class FieldTargets:
    """Ground-truth d/r fields for one branch (see ``geometry``)."""

    d: np.ndarray
    r: np.ndarray

    @classmethod
    def from_mask(cls, mask, n_rays: int = 32) -> "FieldTargets":
        from .geometry import boundary_distance_field, radial_field
        return cls(boundary_distance_field(mask), radial_field(mask, n_rays))


def _reduce(values, reduction):
    if reduction == "mean":
        return float(np.mean(values))
    if reduction == "sum":
        return float(np.sum(values))
    raise ValueError(f"reduction must be one of {REDUCTIONS}, got {reduction!r}")


def _bce_map(d_gt, d_pred):
    p = np.clip(d_pred, BCE_CLIP, 1 - BCE_CLIP)
    return -(d_gt * np.log(p) + (1 - d_gt) * np.log1p(-p))


def _distance_map(fields: BranchFields, cfg: LossConfig):
    d = fields.d_gt
    fg = np.mean(np.abs(fields.r_gt - fields.r_pred), axis=2)
    bg = np.mean(np.abs(fields.r_pred), axis=2)
    return np.where(d > 0, d * fg, 0.0) + cfg.lambda2 * np.where(d == 0, bg, 0.0)


def bce_term(d_gt, d_pred, reduction: str = "mean") -> float:
    """Binary cross-entropy between target and predicted d, predictions clipped to ``[1e-7, 1-1e-7]``."""
    d_gt = np.asarray(d_gt, dtype=np.float64)
    d_pred = np.asarray(d_pred, dtype=np.float64)
    if d_gt.shape != d_pred.shape:
        raise ValueError(f"incompatible grids: {d_gt.shape} vs {d_pred.shape}")
    return _reduce(_bce_map(d_gt, d_pred), reduction)


def distance_term(fields: BranchFields, cfg: LossConfig = LossConfig(), reduction: str = "mean") -> float:
    """d-weighted ray MAE on foreground plus the ``lambda2`` radius penalty on background."""
    return _reduce(_distance_map(fields, cfg), reduction)


def stardist_loss(fields: BranchFields, cfg: LossConfig = LossConfig(), reduction: str = "mean") -> float:
    per_pixel = _bce_map(fields.d_gt, fields.d_pred) + cfg.lambda1 * _distance_map(fields, cfg)
    return _reduce(per_pixel, reduction)


def _mask(x):
    x = np.asarray(x)
    if x.dtype.kind in "iub":
        return (x > 0).astype(np.float64)
    return x.astype(np.float64, copy=False)


def _ratio(num, den, what):
    if den <= 0:
        raise ValueError(f"undefined penalty: {what} has no pixels")
    return min(max(num / den, 0.0), 1.0)


def _check(*masks):
    shapes = {np.shape(m) for m in masks}
    if len(shapes) != 1:
        raise ValueError(f"incompatible grids: shapes {sorted(shapes)}")


def _interior_ratio(pred_inner, pred_outer, gt_outer):
    outside = invert(pred_outer)
    return _ratio(float(np.sum(outside * pred_inner)), float(np.sum(invert(gt_outer))),
                  "ground-truth outer complement")


def wbr_penalty(pred_inner, pred_outer, gt_outer, eps: float = 1e-7) -> float:
    """Within-boundary penalty: reciprocal of ``1 + eps - rho``.

    ``rho`` is the predicted-inner mass lying outside the predicted outer
    mask, divided by the ground-truth outside area. Ranges from
    ``1/(1+eps)`` (nothing outside) to ``1/eps`` (``rho = 1``).
    """
    pred_inner, pred_outer, gt_outer = map(_mask, (pred_inner, pred_outer, gt_outer))
    _check(pred_inner, pred_outer, gt_outer)
    rho = _interior_ratio(pred_inner, pred_outer, gt_outer)
    return 1.0 / ((1.0 - rho) + eps)


def _two_interior_terms(pred1, pred3, pred_outer, gt1, gt_outer):
    pred1, pred3, pred_outer, gt1, gt_outer = map(_mask, (pred1, pred3, pred_outer, gt1, gt_outer))
    _check(pred1, pred3, pred_outer, gt1, gt_outer)
    int1 = _interior_ratio(pred1, pred_outer, gt_outer)
    int3 = _interior_ratio(pred3, pred_outer, gt_outer)
    co = _ratio(float(np.sum(pred1 * pred3)), float(np.sum(gt1)), "ground-truth inner object 1")
    return int1, int3, co


def wbr_exclusive(pred1, pred3, pred_outer, gt1, gt_outer, eps: float = 1e-7) -> float:
    """Penalty for two inner objects that must stay inside the outer one and apart from each other."""
    int1, int3, co = _two_interior_terms(pred1, pred3, pred_outer, gt1, gt_outer)
    return 1.0 / ((1.0 - int1) + (1.0 - int3) + (1.0 - co) + eps)


def wbr_overlap(pred1, pred3, pred_outer, gt1, gt_outer, alpha: float, eps: float = 1e-7) -> float:
    """Penalty for two inner objects expected to overlap by a fraction ``alpha``.

    Smallest when the measured overlap ratio equals ``alpha``. The floor is
    ``1/(2 + max(alpha, 1-alpha)**2 + eps)``, not ``1/(3 + eps)``.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in the open interval (0, 1)")
    int1, int3, co = _two_interior_terms(pred1, pred3, pred_outer, gt1, gt_outer)
    worst = max(alpha, 1 - alpha) ** 2
    return 1.0 / ((1.0 - int1) + (1.0 - int3) + (worst - (alpha - co) ** 2) + eps)


def soft_semantic(d, threshold: float = 0.5, steepness: float = 10.0) -> np.ndarray:
    """Logistic squash ``sigmoid((d - threshold) * steepness)``; a differentiable foreground mask."""
    if not steepness > 0:
        raise ValueError("steepness must be > 0")
    return expit((np.asarray(d, dtype=np.float64) - threshold) * steepness)


def branch_semantic(fields: BranchFields, route: str = "soft", *, threshold: float = 0.5,
                    steepness: float = 10.0, prob_thresh: float = DEFAULT_PROB_THRESH,
                    overlap_thresh: float = DEFAULT_NMS_THRESH) -> np.ndarray:
    """Predicted semantic mask of a branch.

    ``"soft"`` squashes the predicted d field; ``"hard"`` runs the
    proposal/NMS/render pipeline on the predicted fields (not differentiable).
    """
    if route == "soft":
        return soft_semantic(fields.d_pred, threshold, steepness)
    if route == "hard":
        return to_semantic(predict_instances(fields.d_pred, fields.r_pred, prob_thresh, overlap_thresh))
    raise ValueError(f"route must be 'soft' or 'hard', got {route!r}")


def combined_loss(branch1: BranchFields, branch2: BranchFields, gt_outer, cfg: LossConfig = LossConfig(),
                  penalty_kind: str = "wbr", *, branch3: BranchFields | None = None, gt_inner=None,
                  route: str = "soft", reduction: str = "sum", **mask_kw) -> float:
    """Loss of a two-branch (inner, outer) model plus ``lambda3`` times a nesting penalty.

    ``branch1`` is the inner category, ``branch2`` the outer one. Branch
    losses are summed over pixels by default (``reduction="mean"`` averages
    instead). ``"exclusive"`` and ``"overlap"`` need a second inner branch
    ``branch3`` and the ground-truth mask ``gt_inner`` of the first inner
    object; ``"overlap"`` also needs ``cfg.alpha``.
    """
    if penalty_kind not in PENALTY_KINDS:
        raise ValueError(f"penalty_kind must be one of {PENALTY_KINDS}, got {penalty_kind!r}")
    if branch1.d_gt.shape != branch2.d_gt.shape:
        raise ValueError("branch grids differ in shape")
    total = stardist_loss(branch1, cfg, reduction) + stardist_loss(branch2, cfg, reduction)
    if branch3 is not None:
        total += stardist_loss(branch3, cfg, reduction)
    if penalty_kind == "none" or cfg.lambda3 == 0:
        return total

    y1 = branch_semantic(branch1, route, **mask_kw)
    y2 = branch_semantic(branch2, route, **mask_kw)
    if penalty_kind == "wbr":
        lam = wbr_penalty(y1, y2, gt_outer, cfg.eps)
    else:
        if branch3 is None or gt_inner is None:
            raise ValueError(f"penalty_kind={penalty_kind!r} needs branch3 and gt_inner")
        y3 = branch_semantic(branch3, route, **mask_kw)
        if penalty_kind == "exclusive":
            lam = wbr_exclusive(y1, y3, y2, gt_inner, gt_outer, cfg.eps)
        else:
            if cfg.alpha is None:
                raise ValueError("penalty_kind='overlap' needs cfg.alpha")
            lam = wbr_overlap(y1, y3, y2, gt_inner, gt_outer, cfg.alpha, cfg.eps)
    return total + cfg.lambda3 * lam


# --------------------------------------------------------------------------
# toy optimiser: gradient descent on per-pixel fields, no network
# --------------------------------------------------------------------------

def _branch_grads(z, r_pred, t: FieldTargets, cfg: LossConfig, scale: float):
    p = expit(z)
    unclipped = (p > BCE_CLIP) & (p < 1 - BCE_CLIP)
    g_z = np.where(unclipped, p - t.d, 0.0) * scale
    K = t.r.shape[2]
    fg = np.where(t.d > 0, t.d, 0.0)[..., None] * np.sign(r_pred - t.r)
    bg = cfg.lambda2 * (t.d == 0)[..., None] * np.sign(r_pred)
    g_r = cfg.lambda1 * (fg + bg) / K * scale
    return g_z, g_r


def toy_objective(params: dict, gt1: FieldTargets, gt2: FieldTargets, gt_outer, cfg: LossConfig = LossConfig(),
                  penalty_kind: str = "wbr", *, threshold: float = 0.5, steepness: float = 10.0,
                  reduction: str = "sum"):
    """Combined loss (soft mask route) and its analytic gradient.

    ``params`` maps ``z1, r1, z2, r2`` to arrays: ``z`` are logits of the
    predicted d fields, ``r`` the predicted radial fields. Returns
    ``(loss, grads)`` with ``grads`` keyed like ``params``.
    """
    if penalty_kind not in ("none", "wbr"):
        raise ValueError("the toy optimiser supports penalty_kind 'none' or 'wbr'")
    b1 = BranchFields(gt1.d, expit(params["z1"]), gt1.r, params["r1"])
    b2 = BranchFields(gt2.d, expit(params["z2"]), gt2.r, params["r2"])
    loss = combined_loss(b1, b2, gt_outer, cfg, penalty_kind, route="soft", reduction=reduction,
                         threshold=threshold, steepness=steepness)
    scale = 1.0 if reduction == "sum" else 1.0 / b1.d_gt.size
    g_z1, g_r1 = _branch_grads(params["z1"], params["r1"], gt1, cfg, scale)
    g_z2, g_r2 = _branch_grads(params["z2"], params["r2"], gt2, cfg, scale)

    if penalty_kind == "wbr" and cfg.lambda3 > 0:
        p1, p2 = b1.d_pred, b2.d_pred
        s1 = soft_semantic(p1, threshold, steepness)
        s2 = soft_semantic(p2, threshold, steepness)
        den = float(np.sum(invert(_mask(gt_outer))))
        if den <= 0:
            raise ValueError("undefined penalty: ground-truth outer complement has no pixels")
        rho = float(np.sum((1 - s2) * s1)) / den
        if 0.0 < rho < 1.0:
            lam = 1.0 / ((1.0 - rho) + cfg.eps)
            coef = cfg.lambda3 * lam * lam / den
            ds1 = steepness * s1 * (1 - s1) * p1 * (1 - p1)
            ds2 = steepness * s2 * (1 - s2) * p2 * (1 - p2)
            g_z1 = g_z1 + coef * (1 - s2) * ds1
            g_z2 = g_z2 - coef * s1 * ds2
    return loss, {"z1": g_z1, "r1": g_r1, "z2": g_z2, "r2": g_r2}


@dataclass(frozen=True, eq=False)
class ToyFitResult:
    branch1: BranchFields
    branch2: BranchFields
    initial1: BranchFields
    initial2: BranchFields
    trace: np.ndarray
    penalty_kind: str


def _init_params(t: FieldTargets, rng, noise, radial_noise):
    d0 = np.clip(t.d + rng.uniform(-noise, noise, t.d.shape), 0.02, 0.98)
    r0 = t.r + rng.uniform(-radial_noise, radial_noise, t.r.shape)
    return logit(d0), r0


def toy_fit(gt1: FieldTargets, gt2: FieldTargets, gt_outer, cfg: LossConfig = LossConfig(),
            penalty_kind: str = "wbr", iterations: int = 200, step_size: float = 0.1, seed: int = 0,
            *, noise: float = 0.3, radial_noise: float = 1.0, threshold: float = 0.5,
            steepness: float = 10.0, reduction: str = "sum") -> ToyFitResult:
    """Plain gradient descent on the predicted fields of both branches.

    Predictions start at the targets plus seeded uniform noise (``noise`` on
    d, clipped to ``[0.02, 0.98]``; ``radial_noise`` on r). ``trace`` holds
    the loss before every step and after the last one.
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    rng = np.random.Generator(np.random.PCG64(seed))
    z1, r1 = _init_params(gt1, rng, noise, radial_noise)
    z2, r2 = _init_params(gt2, rng, noise, radial_noise)
    params = {"z1": z1, "r1": r1, "z2": z2, "r2": r2}
    start = {k: v.copy() for k, v in params.items()}
    trace = []
    for it in range(iterations + 1):
        loss, grads = toy_objective(params, gt1, gt2, gt_outer, cfg, penalty_kind,
                                    threshold=threshold, steepness=steepness, reduction=reduction)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite loss {loss} at iteration {it} (step_size={step_size})")
        trace.append(loss)
        if it == iterations:
            break
        for k in params:
            params[k] = params[k] - step_size * grads[k]

    def fields(t, z, r):
        return BranchFields(t.d, expit(z), t.r, r)

    return ToyFitResult(
        branch1=fields(gt1, params["z1"], params["r1"]),
        branch2=fields(gt2, params["z2"], params["r2"]),
        initial1=fields(gt1, start["z1"], start["r1"]),
        initial2=fields(gt2, start["z2"], start["r2"]),
        trace=np.asarray(trace),
        penalty_kind=penalty_kind,
    )


def outside_inner_mass(inner: BranchFields, gt_outer, threshold: float = 0.5, steepness: float = 10.0) -> float:
    """Soft inner-mask mass on pixels outside the ground-truth outer mask."""
    return float(np.sum(soft_semantic(inner.d_pred, threshold, steepness) * invert(_mask(gt_outer))))
