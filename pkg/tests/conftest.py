import math

import numpy as np
import pytest

ACCEPTANCE_LINES = []


def disc(radius, size=None, centre=None):
    size = size or int(2 * radius + 11)
    c = centre if centre is not None else (size // 2, size // 2)
    yy, xx = np.mgrid[:size, :size]
    return (((yy - c[0]) ** 2 + (xx - c[1]) ** 2) <= radius * radius).astype(np.int32)


def brute_edt(lbl):
    """Distance from each foreground pixel to the nearest pixel with another id; off-grid is background."""
    H, W = lbl.shape
    padded = np.full((H + 2, W + 2), -1, dtype=np.int64)
    padded[1:-1, 1:-1] = lbl
    others = {}
    out = np.zeros((H, W))
    coords = np.argwhere(np.ones_like(padded, dtype=bool))
    for r in range(H):
        for c in range(W):
            v = lbl[r, c]
            if v == 0:
                continue
            if v not in others:
                others[v] = coords[padded[coords[:, 0], coords[:, 1]] != v]
            o = others[v]
            out[r, c] = math.sqrt(((o[:, 0] - (r + 1)) ** 2 + (o[:, 1] - (c + 1)) ** 2).min())
    return out


def brute_point_in_polygon(py, px, verts):
    """Scalar even-odd crossing test."""
    inside = False
    n = len(verts)
    for i in range(n):
        y1, x1 = verts[i]
        y2, x2 = verts[(i + 1) % n]
        if (y1 > py) != (y2 > py):
            x = (x2 - x1) * (py - y1) / (y2 - y1) + x1
            if px < x:
                inside = not inside
    return inside


def brute_raster(poly, H, W):
    v = poly.vertices()
    out = np.zeros((H, W), dtype=np.uint8)
    for r in range(H):
        for c in range(W):
            out[r, c] = brute_point_in_polygon(r, c, v)
    return out


def brute_best_assignment(gt, pred, tau):
    """Exhaustive one-to-one assignment maximising (#pairs with IoU > tau, total IoU)."""
    from nestseg.metrics import instance_iou
    g_ids = [int(i) for i in np.unique(gt) if i > 0]
    p_ids = [int(i) for i in np.unique(pred) if i > 0]
    iou = {(g, p): instance_iou(gt, g, pred, p) for g in g_ids for p in p_ids}
    best = (0, 0.0)

    def rec(i, used, count, total):
        nonlocal best
        best = max(best, (count, total))
        if i == len(g_ids):
            return
        rec(i + 1, used, count, total)
        for p in p_ids:
            if p not in used and iou[(g_ids[i], p)] > tau:
                rec(i + 1, used | {p}, count + 1, total + iou[(g_ids[i], p)])

    rec(0, frozenset(), 0, 0.0)
    return best


def random_rect_mask(rng, shape, n, size_range=(3, 9)):
    m = np.zeros(shape, dtype=np.int32)
    for i in range(1, n + 1):
        h, w = rng.integers(*size_range, size=2)
        r = rng.integers(0, shape[0] - h + 1)
        c = rng.integers(0, shape[1] - w + 1)
        m[r:r + h, c:c + w] = i
    return m


def jitter_rect_mask(rng, gt, n_extra=0, max_shift=2):
    """Prediction made by shifting and resizing every gt rectangle, plus random extras."""
    pred = np.zeros_like(gt)
    nid = 1
    for gid in rng.permutation([i for i in np.unique(gt) if i > 0]):
        rows, cols = np.nonzero(gt == gid)
        r0 = rows.min() + rng.integers(-max_shift, max_shift + 1)
        c0 = cols.min() + rng.integers(-max_shift, max_shift + 1)
        r1 = rows.max() + 1 + rng.integers(-max_shift, max_shift + 1)
        c1 = cols.max() + 1 + rng.integers(-max_shift, max_shift + 1)
        r0, c0 = max(r0, 0), max(c0, 0)
        if r1 > r0 and c1 > c0:
            pred[r0:r1, c0:c1] = nid
            nid += 1
    extra = random_rect_mask(rng, gt.shape, n_extra)
    pred = np.where((extra > 0) & (pred == 0), extra + nid, pred)
    return pred


@pytest.fixture
def acceptance():
    def record(number, ok, detail):
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
