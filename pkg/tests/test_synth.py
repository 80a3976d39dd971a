import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st
from scipy import ndimage

from nestseg.geometry import is_star_convex
from nestseg.grid import instance_ids, to_semantic
from nestseg.losses import wbr_penalty
from nestseg.metrics import average_precision, containment, iou_recall, jtpr_one_to_one, match
from nestseg.synth import (Dilate, Drop, Erode, PlacementError, SceneSpec, Shift, SpawnOutside, degrade,
                           gen_scene, make_rng)

EPS = 1e-7
SMALL = dict(height=80, width=80, outer_radius=(12, 16), inner_radius=(3, 5))


def check_scene(scene, spec):
    outer, inner = scene.gt_outer, scene.gt_inner
    assert outer.shape == inner.shape == (spec.height, spec.width)
    assert len(instance_ids(outer)) == spec.n_outer
    for iid in instance_ids(inner):
        under = np.unique(outer[inner == iid])
        assert len(under) == 1 and under[0] > 0  # subset of exactly one outer
        assert scene.containment[int(iid)] == int(under[0])
    assert containment(inner, outer) == scene.containment
    for (kind, iid), centre in scene.centres.items():
        mask = (outer if kind == "outer" else inner) == iid
        assert is_star_convex(mask, centre)
    # label masks are pairwise disjoint by construction; check each id is one connected blob
    for m in (outer, inner):
        for iid in instance_ids(m):
            assert ndimage.label(m == iid)[1] == 1


def test_spec_validation():
    with pytest.raises(ValueError):
        SceneSpec(n_outer=0)
    with pytest.raises(ValueError):
        SceneSpec(inner_radius=(5, 20), outer_radius=(18, 26))
    with pytest.raises(ValueError):
        SceneSpec(inner_per_outer=(3, 1))
    spec = SceneSpec(inner_per_outer=2, seed=11)
    assert spec.inner_per_outer == (2, 2)
    assert SceneSpec.from_dict(spec.to_dict()) == spec


def test_rng_is_pcg64():
    assert type(make_rng(1).bit_generator).__name__ == "PCG64"
    assert make_rng(2**63 + 5).integers(0, 1000) == make_rng(2**63 + 5).integers(0, 1000)


def test_determinism():
    spec = SceneSpec(seed=42, inner_per_outer=(1, 3))
    a, b = gen_scene(spec), gen_scene(spec)
    np.testing.assert_array_equal(a.gt_outer, b.gt_outer)
    np.testing.assert_array_equal(a.gt_inner, b.gt_inner)
    assert a.containment == b.containment
    c = gen_scene(SceneSpec(seed=43, inner_per_outer=(1, 3)))
    assert not np.array_equal(a.gt_outer, c.gt_outer)


def test_count_contract():
    spec = SceneSpec(n_outer=3, inner_per_outer=(2, 2), seed=3)
    scene = gen_scene(spec)
    assert len(instance_ids(scene.gt_outer)) == 3
    assert len(instance_ids(scene.gt_inner)) == 6
    per_outer = {}
    for o in scene.containment.values():
        per_outer[o] = per_outer.get(o, 0) + 1
    assert per_outer == {1: 2, 2: 2, 3: 2}
    check_scene(scene, spec)


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 2**32), st.integers(1, 3), st.integers(0, 2), st.floats(0, 0.3))
def test_generated_scenes_satisfy_invariants(seed, n_outer, hi, jitter):
    spec = SceneSpec(n_outer=n_outer, inner_per_outer=(0, hi), boundary_jitter=jitter, seed=seed, **SMALL)
    scene = gen_scene(spec)
    check_scene(scene, spec)
    if instance_ids(scene.gt_inner).size:
        so = to_semantic(scene.gt_outer)
        assert wbr_penalty(to_semantic(scene.gt_inner), so, so, EPS) == 1 / (1 + EPS)


def test_impossible_spec_fails_loudly():
    spec = SceneSpec(height=30, width=30, n_outer=5, outer_radius=(10, 12), inner_radius=(2, 3), max_retries=50)
    with pytest.raises(PlacementError, match="outer object"):
        gen_scene(spec)


# ---------------------------------------------------------------- degradation

@pytest.fixture(scope="module")
def scene():
    return gen_scene(SceneSpec(n_outer=3, inner_per_outer=(2, 2), seed=5))


def test_drop_extremes(scene):
    np.testing.assert_array_equal(degrade(scene.gt_inner, [Drop(1.0)], 0), 0)
    np.testing.assert_array_equal(degrade(scene.gt_inner, [Drop(0.0)], 0), scene.gt_inner)
    np.testing.assert_array_equal(degrade(scene.gt_inner, [], 0), scene.gt_inner)
    with pytest.raises(ValueError):
        degrade(scene.gt_inner, [Drop(1.5)])


def test_drop_removes_whole_instances(scene):
    out = degrade(scene.gt_inner, [Drop(0.5)], 9)
    for iid in instance_ids(scene.gt_inner):
        kept = out[scene.gt_inner == iid]
        assert np.all(kept == iid) or np.all(kept == 0)
    np.testing.assert_array_equal(out, degrade(scene.gt_inner, [Drop(0.5)], 9))


def test_shift_translates_and_clips():
    m = np.zeros((5, 5), int)
    m[0, 0] = 1
    m[4, 4] = 2
    out = degrade(m, [Shift(1, 1)])
    assert out[1, 1] == 1 and (out == 2).sum() == 0
    np.testing.assert_array_equal(degrade(m, [Shift(0, 0)]), m)
    assert not degrade(m, [Shift(9, 0)]).any()


def test_erode_and_dilate(scene):
    er = degrade(scene.gt_outer, [Erode(2)])
    for iid in instance_ids(scene.gt_outer):
        assert (er == iid).sum() < (scene.gt_outer == iid).sum()
        assert np.all(scene.gt_outer[er == iid] == iid)
    dl = degrade(scene.gt_outer, [Dilate(1)])
    assert np.all(dl[scene.gt_outer > 0] == scene.gt_outer[scene.gt_outer > 0])
    assert (dl > 0).sum() > (scene.gt_outer > 0).sum()
    with pytest.raises(ValueError):
        degrade(scene.gt_outer, [Erode(-1)])


def test_dilate_contested_pixel_goes_to_smaller_id():
    m = np.zeros((1, 3), int)
    m[0, 0] = 2
    m[0, 2] = 1
    np.testing.assert_array_equal(degrade(m, [Dilate(1)]), [[2, 1, 1]])


def test_ops_applied_in_order():
    m = np.zeros((9, 9), int)
    m[3:6, 3:6] = 1
    a = degrade(m, [Erode(1), Dilate(1)])
    b = degrade(m, [Dilate(1), Erode(1)])
    assert (a > 0).sum() != (b > 0).sum()


def test_spawn_outside(scene):
    forbidden = to_semantic(scene.gt_outer)
    out = degrade(scene.gt_inner, [SpawnOutside(3, forbidden)], 4)
    new = instance_ids(out)[~np.isin(instance_ids(out), instance_ids(scene.gt_inner))]
    assert len(new) == 3
    assert not np.any(forbidden[np.isin(out, new)])
    so = forbidden
    assert wbr_penalty(to_semantic(out), so, so, EPS) > 1 / (1 + EPS)
    with pytest.raises(PlacementError):
        degrade(scene.gt_inner, [SpawnOutside(1, np.ones_like(forbidden))], 0)
    with pytest.raises(TypeError):
        degrade(scene.gt_inner, ["drop"])


def test_drop_chain_gives_known_jtpr(scene):
    n = len(instance_ids(scene.gt_inner))
    for seed in range(10):
        pred = degrade(scene.gt_inner, [Drop(0.4)], seed)
        m = n - len(instance_ids(pred))
        j = jtpr_one_to_one(scene.gt_inner, pred, scene.gt_outer, scene.gt_outer)
        assert j.inner == pytest.approx((n - m) / n)


def test_erode_keeps_tp_and_lowers_iou_recall(scene):
    prev_r = iou_recall(scene.gt_outer, scene.gt_outer, 0.1)
    tp = match(scene.gt_outer, scene.gt_outer, 0.1).tp
    for n in (1, 2, 3):
        pred = degrade(scene.gt_outer, [Erode(n)])
        assert match(scene.gt_outer, pred, 0.1).tp == tp
        assert average_precision(scene.gt_outer, pred, 0.1) == 1.0
        r = iou_recall(scene.gt_outer, pred, 0.1)
        assert r < prev_r
        prev_r = r
