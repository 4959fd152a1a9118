import numpy as np
import pytest

from maggie.errors import InputValidationError
from maggie.evaluate import aggregate_metrics
from maggie.metrics import (
    BACKGROUND,
    FOREGROUND,
    METRIC_KEYS,
    UNKNOWN,
    conn_metric,
    connectivity_error_map,
    dtssd_metric,
    estimate_trimap,
    evaluate_clip,
    grad_metric,
    mad,
    messddt_metric,
    mse,
    sad,
)
from maggie.schemas import ClipReport


def test_mad_of_opposite_mattes():
    pred = np.ones((1, 1, 4, 4))
    gt = np.zeros((1, 1, 4, 4))
    assert mad(pred, gt).mean == pytest.approx(1000.0)


def test_mad_small_example():
    pred = np.array([0.5, 0.25, 0.0, 1.0]).reshape(1, 1, 2, 2)
    gt = np.array([0.5, 0.0, 0.0, 0.5]).reshape(1, 1, 2, 2)
    assert mad(pred, gt).mean == pytest.approx(187.5)


def test_identical_mattes_score_zero_everywhere(rng):
    gt = rng.uniform(0, 1, size=(3, 2, 16, 16))
    report = evaluate_clip(gt, gt)
    assert set(report) == set(METRIC_KEYS)
    for key, entry in report.items():
        assert entry.mean == pytest.approx(0.0, abs=1e-9), key


def test_mse_never_exceeds_mad(rng):
    for _ in range(20):
        pred = rng.uniform(0, 1, size=(1, 2, 6, 6))
        gt = rng.uniform(0, 1, size=(1, 2, 6, 6))
        assert mse(pred, gt, scale=1.0).mean <= mad(pred, gt, scale=1.0).mean + 1e-12


def test_sad_sums_per_frame():
    pred = np.zeros((2, 1, 4, 4))
    pred[0, 0, 0, 0] = 1.0
    gt = np.zeros_like(pred)
    # frame sums 1 and 0, averaged over frames
    assert sad(pred, gt, scale=1.0).mean == pytest.approx(0.5)


def test_trimap_of_binary_matte_without_dilation():
    gt = np.zeros((1, 1, 5, 5))
    gt[0, 0, 1:3, 1:3] = 1.0
    tri = estimate_trimap(gt, dilate_px=0)
    assert not np.any(tri == UNKNOWN)
    assert np.array_equal(tri == FOREGROUND, gt == 1.0)


def test_single_soft_pixel_grows_to_a_square():
    gt = np.zeros((1, 1, 7, 7))
    gt[0, 0, 3, 3] = 0.5
    tri = estimate_trimap(gt, dilate_px=1)
    expected = np.zeros((7, 7), bool)
    expected[2:5, 2:5] = True
    assert np.array_equal(tri[0, 0] == UNKNOWN, expected)


def test_trimap_matches_brute_force(rng):
    gt = rng.choice([0.0, 1.0, 0.5], p=[0.45, 0.45, 0.1], size=(1, 1, 12, 12))
    r = 2
    tri = estimate_trimap(gt, dilate_px=r)
    soft = (gt[0, 0] > 0) & (gt[0, 0] < 1)
    for y in range(12):
        for x in range(12):
            near = soft[max(0, y - r):y + r + 1, max(0, x - r):x + r + 1].any()
            if near:
                assert tri[0, 0, y, x] == UNKNOWN
            elif gt[0, 0, y, x] == 1.0:
                assert tri[0, 0, y, x] == FOREGROUND
            else:
                assert tri[0, 0, y, x] == BACKGROUND


def test_regions_partition_the_image(rng):
    gt = rng.choice([0.0, 1.0, 0.3], size=(2, 2, 10, 10))
    pred = rng.uniform(0, 1, size=gt.shape)
    tri = estimate_trimap(gt, dilate_px=1)
    counts = [(tri == v).sum() for v in (BACKGROUND, UNKNOWN, FOREGROUND)]
    assert sum(counts) == gt.size
    total = np.abs(pred - gt).sum()
    split = sum(sad(pred, gt, tri, region, scale=1.0).mean for region in ("foreground", "unknown", "background"))
    # per-frame sums averaged over 2 frames, then over 2 instances
    assert split == pytest.approx(total / 4)


def test_empty_region_is_flagged():
    gt = np.zeros((1, 1, 4, 4))
    tri = estimate_trimap(gt, dilate_px=1)
    entry = mad(gt, gt, tri, "unknown")
    assert entry.empty_region
    assert entry.mean == 0.0


def test_unknown_region_name_is_rejected():
    gt = np.zeros((1, 1, 4, 4))
    with pytest.raises(InputValidationError):
        mad(gt, gt, estimate_trimap(gt), "elsewhere")


def test_grad_ignores_constant_offsets(rng):
    gt = rng.uniform(0, 0.5, size=(1, 1, 12, 12))
    assert grad_metric(gt, gt).mean == 0.0
    assert grad_metric(gt + 0.3, gt).mean == pytest.approx(0.0, abs=1e-9)


def test_detached_pixel_costs_connectivity():
    gt = np.zeros((12, 12))
    gt[2:6, 2:6] = 1.0
    pred = gt.copy()
    pred[9, 9] = 1.0
    err = connectivity_error_map(pred, gt)
    assert err[9, 9] == pytest.approx(1.0)
    assert np.count_nonzero(err) == 1
    entry = conn_metric(pred[None, None], gt[None, None])
    assert entry.mean == pytest.approx(1e-3)
    assert conn_metric(gt[None, None], gt[None, None]).mean == 0.0


def test_static_error_has_no_temporal_cost():
    gt = np.full((4, 1, 4, 4), 0.3)
    pred = np.full((4, 1, 4, 4), 0.6)
    assert dtssd_metric(pred, gt).mean == pytest.approx(0.0)
    assert messddt_metric(pred, gt).mean == pytest.approx(0.0)


def test_flicker_example():
    gt = np.zeros((3, 1, 2, 2))
    pred = np.zeros_like(gt)
    pred[1] = 0.1
    # both frame pairs differ by 0.1 everywhere
    assert dtssd_metric(pred, gt).mean == pytest.approx(10.0)
    rev = dtssd_metric(pred[::-1].copy(), gt[::-1].copy()).mean
    assert rev == pytest.approx(10.0)


def test_messddt_example():
    gt = np.zeros((2, 1, 1, 2))
    pred = np.array([[[[0.1, 0.0]]], [[[0.3, 0.0]]]])
    # squared errors 0.01 -> 0.09 on one pixel: (0.08^2 + 0) / 2 x 1e3
    assert messddt_metric(pred, gt).mean == pytest.approx(0.08 ** 2 / 2 * 1e3)


def test_temporal_metrics_need_two_frames():
    gt = np.zeros((1, 1, 4, 4))
    with pytest.raises(InputValidationError):
        dtssd_metric(gt, gt)
    report = evaluate_clip(gt, gt)
    assert report["dtssd"].empty_region and report["messddt"].empty_region


def test_instance_order_does_not_change_means(rng):
    gt = rng.uniform(0, 1, size=(2, 3, 8, 8))
    pred = rng.uniform(0, 1, size=(2, 3, 8, 8))
    perm = [2, 0, 1]
    base = evaluate_clip(pred, gt)
    permuted = evaluate_clip(pred[:, perm], gt[:, perm])
    for key in METRIC_KEYS:
        assert permuted[key].mean == pytest.approx(base[key].mean, rel=1e-9, abs=1e-12), key
        assert permuted[key].per_instance == pytest.approx([base[key].per_instance[k] for k in perm])


def test_shape_mismatch_is_rejected():
    with pytest.raises(InputValidationError):
        mad(np.zeros((1, 1, 4, 4)), np.zeros((1, 2, 4, 4)))


def test_aggregate_keeps_valid_instances_of_partly_empty_clips():
    gt = np.zeros((2, 2, 12, 12))
    gt[:, 1, 3:9, 3:9] = 1.0
    gt[:, 1, 3:9, 9] = 0.5
    # off by 0.1 at every pixel
    pred = np.abs(gt - 0.1)
    partly_empty = evaluate_clip(pred, gt)
    assert partly_empty["mad_u"].empty_instances == [0]
    assert partly_empty["mad_u"].per_instance[1] == pytest.approx(100.0)

    exact = evaluate_clip(gt[:, 1:], gt[:, 1:])
    assert exact["mad_u"].empty_instances == []

    aggregate = aggregate_metrics([
        ClipReport(name="partly_empty", metrics=partly_empty),
        ClipReport(name="exact", metrics=exact),
    ])
    # instance 0 of the first clip has no unknown band and is left out
    assert aggregate["mad_u"] == pytest.approx(50.0)
    # every instance has pixels for plain MAD: (100 + 100 + 0) / 3
    assert aggregate["mad"] == pytest.approx(200.0 / 3)
