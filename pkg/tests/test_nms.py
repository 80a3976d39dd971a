import numpy as np
import pytest

from nestseg.geometry import StarPolygon, boundary_distance_field, radial_field, rasterize
from nestseg.metrics import match
from nestseg.nms import Proposal, nms, predict_instances, propose, render_instances
from nestseg.synth import SceneSpec, gen_scene


def prop(centre, radius, score, k=16):
    return Proposal(StarPolygon(centre, np.full(k, float(radius))), score)


def mask_iou(a, b):
    a, b = a > 0, b > 0
    u = (a | b).sum()
    return (a & b).sum() / u if u else 0.0


def test_propose_empty():
    assert propose(np.zeros((6, 6)), np.zeros((6, 6, 8)), 0.5) == []


def test_propose_single():
    d = np.zeros((6, 6))
    d[2, 3] = 0.9
    out = propose(d, np.ones((6, 6, 8)), 0.5)
    assert len(out) == 1 and out[0].pixel == (2, 3) and out[0].score == 0.9


def test_propose_orders_by_score_then_position():
    d = np.zeros((6, 6))
    d[4, 4] = 0.7
    d[1, 1] = 0.9
    d[0, 5] = 0.7
    out = propose(d, np.ones((6, 6, 8)), 0.5)
    assert [p.score for p in out] == [0.9, 0.7, 0.7]
    assert [p.pixel for p in out] == [(1, 1), (0, 5), (4, 4)]


def test_propose_shape_mismatch():
    with pytest.raises(ValueError, match="incompatible"):
        propose(np.zeros((4, 4)), np.zeros((4, 5, 8)))


def test_propose_threshold_inclusive():
    d = np.full((3, 3), 0.5)
    assert len(propose(d, np.ones((3, 3, 4)), 0.5)) == 9


def test_nms_single_kept():
    p = prop((5, 5), 3, 0.8)
    assert nms([p], 0.3, 12, 12) == [p]


def test_nms_identical_polygons():
    a, b = prop((5, 5), 3, 0.9), prop((5, 5), 3, 0.8)
    assert nms([b, a], 0.3, 12, 12) == [a]


@pytest.mark.parametrize("thresh", [0.0, 0.4, 1.0])
def test_nms_disjoint_polygons(thresh):
    a, b = prop((5, 5), 3, 0.9), prop((20, 20), 3, 0.6)
    assert nms([a, b], thresh, 30, 30) == [a, b]


def test_nms_keeps_pairwise_overlap_low():
    rng = np.random.default_rng(0)
    props = [prop(tuple(rng.uniform(5, 35, 2)), rng.uniform(2, 8), float(rng.random())) for _ in range(60)]
    kept = nms(props, 0.3, 40, 40)
    masks = [rasterize(p.polygon, 40, 40) for p in kept]
    for i in range(len(masks)):
        for j in range(i + 1, len(masks)):
            assert mask_iou(masks[i], masks[j]) <= 0.3
    assert [p.score for p in kept] == sorted((p.score for p in kept), reverse=True)


def test_render_empty():
    assert not render_instances([], 5, 5).any()


def test_render_single_disc():
    p = prop((8, 8), 5, 0.9, k=32)
    out = render_instances([p], 16, 16)
    np.testing.assert_array_equal(out > 0, rasterize(p.polygon, 16, 16) > 0)
    assert set(np.unique(out)) == {0, 1}


def test_render_contested_pixels_go_to_higher_score():
    # 4 rays of radius 2.5 give the diamond |dr| + |dc| <= 2 (13 pixels). Centres
    # (4, 4) and (4, 6) share (4, 4), (4, 5), (4, 6), (3, 5), (5, 5).
    hi = prop((4, 4), 2.5, 0.9, k=4)
    lo = prop((4, 6), 2.5, 0.6, k=4)
    out = render_instances([lo, hi], 10, 10)
    a = rasterize(hi.polygon, 10, 10) > 0
    b = rasterize(lo.polygon, 10, 10) > 0
    overlap = a & b
    assert a.sum() == b.sum() == 13
    assert sorted(zip(*np.nonzero(overlap))) == [(3, 5), (4, 4), (4, 5), (4, 6), (5, 5)]
    assert np.all(out[overlap] == 1)
    assert np.all(out[b & ~a] == 2)


def test_render_ignores_input_order():
    rng = np.random.default_rng(3)
    props = [prop(tuple(rng.uniform(5, 25, 2)), rng.uniform(2, 6), float(rng.random())) for _ in range(8)]
    a = render_instances(props, 30, 30)
    b = render_instances(list(reversed(props)), 30, 30)
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("seed", range(3))
def test_pipeline_recovers_gt(seed):
    sc = gen_scene(SceneSpec(seed=seed, inner_per_outer=(1, 2)))
    for lbl in (sc.gt_outer, sc.gt_inner):
        pred = predict_instances(boundary_distance_field(lbl), radial_field(lbl, 32), 0.5, 0.4)
        m = match(lbl, pred, 0.5)
        assert (m.tp, m.fp) == (m.n_gt, 0)
