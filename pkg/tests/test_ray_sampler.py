import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fdneus.core import ImagePlane, seeded_rng
from fdneus.ray_sampler import (RegionWeights, allocate_rays, delta_schedule, region_pixel_counts,
                                region_weights, sample_rays, sample_uniform_rays, uncertainty_boost)
from fdneus.scene import ViewBundle
from conftest import simple_camera


def test_region_weights_delta_one():
    assert np.allclose(region_weights([9000, 1000], 1.0).weights, [0.9, 0.1], atol=1e-12)


def test_region_weights_delta_two():
    assert np.allclose(region_weights([9000, 1000], 2.0).weights, [0.75, 0.25], atol=1e-12)


def test_region_weights_single_and_errors():
    assert region_weights([42], 1.7).weights.tolist() == [1.0]
    with pytest.raises(ValueError):
        region_weights([], 1.0)
    with pytest.raises(ValueError):
        region_weights([10, 5], 0.5)
    w = region_weights([10, 0, 5], 1.0, region_ids=[0, 1, 2])
    assert w.region_ids.tolist() == [0, 2] and np.isclose(w.weights.sum(), 1.0)


counts_st = st.lists(st.integers(1, 10**6), min_size=1, max_size=12)


@settings(max_examples=100, deadline=None)
@given(counts=counts_st, delta=st.floats(1.0, 50.0))
def test_weights_sum_to_one_and_monotone(counts, delta):
    w = region_weights(counts, delta).weights
    assert abs(w.sum() - 1.0) < 1e-9
    order = np.argsort(counts, kind="stable")
    assert np.all(np.diff(w[order]) >= -1e-15)


@settings(max_examples=60, deadline=None)
@given(counts=st.lists(st.integers(1, 10**6), min_size=2, max_size=8), d1=st.floats(1.0, 20.0), step=st.floats(0.01, 20.0))
def test_large_delta_flattens_toward_uniform(counts, d1, step):
    dev = lambda d: np.max(np.abs(region_weights(counts, d).weights - 1 / len(counts)))  # noqa: E731
    assert dev(d1 + step) <= dev(d1) + 1e-12


def test_allocation_examples():
    assert allocate_rays(RegionWeights(np.arange(2), np.ones(2), np.array([0.75, 0.25]), 2.0), 512).tolist() == [384, 128]
    assert allocate_rays(RegionWeights(np.arange(1), np.ones(1), np.array([1.0]), 1.0), 512).tolist() == [512]
    third = allocate_rays(RegionWeights(np.arange(3), np.ones(3), np.full(3, 1 / 3), 1.0), 512)
    assert third.sum() == 512 and set(third.tolist()) <= {170, 171}


def test_allocation_needs_enough_rays():
    w = region_weights([5, 5, 5], 1.0)
    with pytest.raises(ValueError, match="smaller than region count"):
        allocate_rays(w, 2)


@settings(max_examples=150, deadline=None)
@given(counts=counts_st, delta=st.floats(1.0, 3.0), q=st.integers(12, 4096))
def test_allocation_exact_budget_and_floor(counts, delta, q):
    w = region_weights(counts, delta)
    a = allocate_rays(w, q)
    assert a.sum() == q and np.all(a >= 1)
    exact = w.weights * q
    # deviation below one ray unless the 1-ray floor had to lift a tiny region
    lifted = exact < 1
    assert np.all(np.abs(a - exact)[~lifted] < 1 + lifted.sum())
    if not lifted.any():
        assert np.all(np.abs(a - exact) < 1)
    assert np.array_equal(a, allocate_rays(w, q))


def test_delta_schedule():
    assert delta_schedule(0, 8000) == 1.0
    assert delta_schedule(8000, 8000) == 2.0
    assert delta_schedule(4000, 8000) == 1.5
    with pytest.raises(ValueError):
        delta_schedule(9000, 8000)


def test_uncertainty_boost():
    u = np.array([[0.0, 0.5], [np.nan, np.pi / 9]])
    b = uncertainty_boost(u, np.pi / 9, beta=1.0)
    assert b.tolist() == [[1.0, 2.0], [1.0, 1.0]]


def _toy_bundle(seg):
    H, W = seg.shape
    valid = seg >= 0
    nan3 = np.where(valid[..., None], 0.5, np.nan) * np.ones((H, W, 3))
    return ViewBundle(view=simple_camera(f=50.0, c=(W - 1) / 2, size=W) if H == W else None,
                      rgb=ImagePlane(nan3), depth=ImagePlane(np.where(valid, 1.0, np.nan)),
                      normal=ImagePlane(nan3), segmentation=ImagePlane(seg.astype(float)),
                      features=ImagePlane(nan3), valid=valid)


def _seg_map():
    seg = np.zeros((40, 40), dtype=int)
    seg[:, 30:] = 1
    seg[:5, :5] = 2
    seg[-2:, :] = -1
    return seg


def test_region_frequencies_match_allocation():
    b = _toy_bundle(_seg_map())
    ids, counts = region_pixel_counts(b)
    alloc = allocate_rays(region_weights(counts, 1.5, ids), 500)
    rng = seeded_rng(0)
    tally = np.zeros(3)
    for _ in range(200):
        rays = sample_rays(b, alloc, None, rng, ids)
        tally += np.bincount(rays.regions, minlength=3)
    assert np.allclose(tally / tally.sum(), alloc / alloc.sum(), atol=0.01)
    seg = _seg_map()
    assert np.all(seg[rays.pixels[:, 1], rays.pixels[:, 0]] == rays.regions)


def test_boost_doubles_pixel_frequency():
    seg = np.zeros((40, 40), dtype=int)
    b = _toy_bundle(seg)
    boost = np.ones((40, 40))
    boost[:, :20] = 2.0
    rng = seeded_rng(1)
    left = 0
    n = 0
    for _ in range(100):
        rays = sample_rays(b, [1000], boost, rng, [0])
        left += np.sum(rays.pixels[:, 0] < 20)
        n += len(rays)
    ratio = left / (n - left)
    assert abs(ratio - 2.0) / 2.0 < 0.05


def test_sampling_is_deterministic_and_rays_unit():
    b = _toy_bundle(_seg_map())
    ids, counts = region_pixel_counts(b)
    alloc = allocate_rays(region_weights(counts, 1.0, ids), 64)
    r1 = sample_rays(b, alloc, None, seeded_rng(5), ids)
    r2 = sample_rays(b, alloc, None, seeded_rng(5), ids)
    assert np.array_equal(r1.pixels, r2.pixels)
    assert np.allclose(np.linalg.norm(r1.dirs, axis=1), 1.0)
    rays = r1.as_rays(0.1, 3.0)
    assert len(rays) == 64 and rays[0][1].near == 0.1


def test_empty_region_budget_is_redistributed():
    b = _toy_bundle(_seg_map())
    rays = sample_rays(b, [50, 30, 20, 10], None, seeded_rng(2), [0, 1, 2, 3])
    assert len(rays) == 110 and 3 not in rays.regions


def test_uniform_sampling_covers_valid_pixels_only():
    b = _toy_bundle(_seg_map())
    rays = sample_uniform_rays(b, 2000, None, seeded_rng(3))
    assert len(rays) == 2000 and np.all(rays.pixels[:, 1] < 38)
