import numpy as np
import pytest

from segerr.apis.data import (
    BoundaryMask,
    ClassGroups,
    EvalConfig,
    LabelField,
    PointCloud,
)
from segerr.apis.data_loading import LabeledScene
from segerr.components import extract_components
from segerr.errors import SceneValidationError
from segerr.metrics import (
    aggregate,
    confusion_matrix,
    derr,
    evaluate_scene,
    ferr_merr,
    radius_sweep,
    rerr,
    traditional_metrics,
)
from segerr.names import CorruptionMode, CounterType, DErrSampleMode, MetricType
from segerr.synth import SyntheticSceneSource, corrupt_labels
from tests.test_classes.oracles import naive_metrics

FAKE_CFG = EvalConfig(num_classes=3, radius_m=0.05, min_component_size=5)
MIXED = SyntheticSceneSource.mixed(20, seed=4)


def _check_against_oracle(scene, cfg):
    report = evaluate_scene(scene.cloud, scene.gt, scene.pred, cfg)
    expected = naive_metrics(
        scene.cloud.positions,
        scene.gt.labels,
        scene.pred.labels,
        cfg.num_classes,
        cfg.radius_m,
        cfg.iou_threshold,
        cfg.min_component_size,
        component_samples=cfg.derr_samples is DErrSampleMode.COMPONENT,
    )
    np.testing.assert_array_equal(report.confusion, expected["confusion"])
    for counter in CounterType:
        assert report[counter] == expected[counter.value], counter
    for metric in MetricType:
        if expected[metric.value] is None:
            assert report[metric] is None, metric
        else:
            assert report[metric] == pytest.approx(expected[metric.value], abs=1e-9)
    for actual, value in zip(report.class_iou, expected["class_iou"]):
        assert actual == (None if value is None else pytest.approx(value, abs=1e-9))


class TestTraditionalMetrics:
    def test_small_example(self):
        gt = LabelField([0, 0, 1, 1, -1])
        pred = LabelField([0, 1, 1, 1, 0])
        result = traditional_metrics(gt, pred, EvalConfig(num_classes=3))
        expected = [[1, 1, 0], [0, 2, 0], [0, 0, 0]]
        np.testing.assert_array_equal(result.confusion, expected)
        assert result.class_iou == (0.5, pytest.approx(2 / 3), None)
        assert result.miou == pytest.approx(7 / 12)
        assert result.macc == pytest.approx(0.75)
        assert result.oacc == pytest.approx(0.75)

    def test_groups(self):
        gt = LabelField([0, 0, 1, 1, 2, 2])
        pred = LabelField([0, 0, 1, 2, 2, 2])
        groups = ClassGroups({"head": [0, 1], "tail": [2], "unseen": []})
        result = traditional_metrics(gt, pred, EvalConfig(num_classes=3), groups)
        assert result.group_iou["head"] == pytest.approx((1.0 + 0.5) / 2)
        assert result.group_iou["tail"] == pytest.approx(2 / 3)
        assert result.group_iou["unseen"] is None

    def test_confusion_ignores_unannotated(self):
        gt = LabelField([-1, -1, 1])
        pred = LabelField([0, 0, 1])
        assert confusion_matrix(gt, pred, 2).sum() == 1


class TestErrorMetrics:
    def test_ferr_merr(self):
        gt = BoundaryMask([True, True, False, False])
        pred = BoundaryMask([False, True, True, True])
        ferr, merr, counters = ferr_merr(gt, pred)
        assert ferr == pytest.approx(2 / 3)
        assert merr == pytest.approx(1 / 2)
        assert counters[CounterType.BOUNDARY_OVERLAP] == 1

    def test_ferr_merr_absent(self):
        empty = BoundaryMask([False, False])
        ferr, merr, _ = ferr_merr(empty, empty)
        assert ferr is None and merr is None

    def test_perfect_prediction(self, two_planes, cfg):
        cloud, gt = two_planes
        report = evaluate_scene(cloud, gt, gt, cfg)
        assert report[MetricType.MIOU] == 1.0
        assert report[MetricType.OACC] == 1.0
        assert report[MetricType.FERR] == 0.0
        assert report[MetricType.MERR] == 0.0
        assert report[MetricType.RERR] == 0.0
        assert report[MetricType.DERR] == 0.0
        assert report[CounterType.RERR_ALL] == 2
        assert report[CounterType.PRED_BOUNDARY] == report[CounterType.GT_BOUNDARY] > 0

    def test_region_swap(self, floating_spheres, cfg):
        cloud, gt = floating_spheres
        pred = corrupt_labels(gt, cloud, CorruptionMode.REGION_SWAP, 1, seed=5)
        report = evaluate_scene(cloud, gt, pred, cfg)
        assert report[MetricType.RERR] == 0.5
        assert report[CounterType.RERR_ALL] == 2
        # isolated spheres have no boundary at all
        assert report[MetricType.FERR] is None
        assert report[MetricType.MERR] is None
        assert report[MetricType.MIOU] == pytest.approx(0.25)

    def test_dilation_displaces(self, two_planes, cfg):
        cloud, gt = two_planes
        clean = evaluate_scene(cloud, gt, gt, cfg)
        pred = corrupt_labels(gt, cloud, CorruptionMode.DILATE, 0.04, seed=0)
        report = evaluate_scene(cloud, gt, pred, cfg)
        assert report[MetricType.DERR] >= clean[MetricType.DERR] + 0.05
        assert report[MetricType.MIOU] > 0.5
        assert report[MetricType.RERR] == 0.0

    def test_speckle_leaves_merge_error(self, two_planes, cfg):
        cloud, gt = two_planes
        clean = evaluate_scene(cloud, gt, gt, cfg)
        pred = corrupt_labels(gt, cloud, CorruptionMode.SPECKLE, 3, seed=1)
        report = evaluate_scene(cloud, gt, pred, cfg)
        assert abs(report[MetricType.MERR] - clean[MetricType.MERR]) <= 0.02
        assert report[MetricType.FERR] >= clean[MetricType.FERR] + 0.05

    def test_merge_erases_boundaries(self, checkerboard, cfg):
        cloud, gt = checkerboard
        clean = evaluate_scene(cloud, gt, gt, cfg)
        pred = corrupt_labels(gt, cloud, CorruptionMode.MERGE, 2, seed=3)
        report = evaluate_scene(cloud, gt, pred, cfg)
        assert report[MetricType.MERR] == 1.0
        assert report[MetricType.MERR] >= clean[MetricType.MERR] + 0.05
        assert report[MetricType.FERR] is None

    def test_swapping_fields_swaps_ferr_and_merr(self, two_planes, cfg):
        cloud, gt = two_planes
        pred = corrupt_labels(gt, cloud, CorruptionMode.DILATE, 0.04, seed=0)
        forward = evaluate_scene(cloud, gt, pred, cfg)
        backward = evaluate_scene(cloud, pred, gt, cfg)
        assert forward[MetricType.FERR] == backward[MetricType.MERR]
        assert forward[MetricType.MERR] == backward[MetricType.FERR]

    @pytest.mark.parametrize("samples", list(DErrSampleMode))
    def test_matches_oracle(self, fake_source, samples):
        cfg = FAKE_CFG.config_like_this(derr_samples=samples)
        for scene in fake_source:
            _check_against_oracle(scene, cfg)

    @pytest.mark.slow
    @pytest.mark.parametrize("r", [0.02, 0.06, 0.10])
    @pytest.mark.parametrize("index", range(len(MIXED)))
    def test_matches_oracle_on_mixed_scenes(self, index, r):
        scene = MIXED[index]
        cfg = EvalConfig(
            num_classes=MIXED.cases[index].spec.num_classes,
            radius_m=r,
            min_component_size=20,
        )
        _check_against_oracle(scene, cfg)

    def test_matches_oracle_on_corrupted_checkerboard(self, checkerboard):
        cloud, gt = checkerboard
        subset = np.flatnonzero(cloud.positions[:, 0] < 0.45)
        cloud, gt = cloud.select(subset), gt.select(subset)
        pred = corrupt_labels(gt, cloud, CorruptionMode.ERODE, 0.03, seed=2)
        scene = LabeledScene("eroded", cloud, gt, pred)
        cfg = EvalConfig(num_classes=2, radius_m=0.04, min_component_size=20)
        _check_against_oracle(scene, cfg)

    def test_rerr_direct(self, floating_spheres, cfg):
        cloud, gt = floating_spheres
        components = extract_components(cloud, gt, cfg.radius_m)
        assert rerr(components, cloud, gt, gt, cfg) == (0.0, 2, 2)
        small = cfg.config_like_this(min_component_size=10_000)
        assert rerr(components, cloud, gt, gt, small) == (None, 0, 0)

    def test_derr_direct(self, two_planes, cfg):
        cloud, gt = two_planes
        value, num, den = derr(cloud, gt, gt, cfg)
        assert value == 0.0
        assert num == den > 0

    def test_all_ignored(self, two_planes, cfg):
        cloud, _ = two_planes
        gt = LabelField(np.full(cloud.count, -1))
        pred = LabelField(np.zeros(cloud.count))
        report = evaluate_scene(cloud, gt, pred, cfg)
        assert all(value is None for value in report.metrics.values())
        assert all(value == 0 for value in report.counters.values())

    @pytest.mark.parametrize("workers", [4, 8])
    def test_independent_of_workers(self, fake_source, workers):
        scene = fake_source[0]
        single = evaluate_scene(scene.cloud, scene.gt, scene.pred, FAKE_CFG, workers=1)
        assert single == evaluate_scene(
            scene.cloud, scene.gt, scene.pred, FAKE_CFG, workers=workers
        )

    @pytest.mark.parametrize("samples", list(DErrSampleMode))
    def test_counters_shrink_as_threshold_grows(self, samples):
        scene = MIXED[2]
        previous = None
        for theta in (0.1, 0.3, 0.5, 0.7, 0.9):
            cfg = FAKE_CFG.config_like_this(
                num_classes=MIXED.cases[2].spec.num_classes,
                iou_threshold=theta,
                derr_samples=samples,
            )
            report = evaluate_scene(scene.cloud, scene.gt, scene.pred, cfg)
            counts = [
                report[t]
                for t in (
                    CounterType.RERR_ALL,
                    CounterType.RERR_TP,
                    CounterType.DERR_NUM,
                    CounterType.DERR_DEN,
                )
            ]
            if previous is not None:
                assert all(a <= b for a, b in zip(counts, previous)), theta
            previous = counts

    def test_independent_of_point_order(self, fake_source):
        scene = fake_source[1]
        order = np.random.default_rng(6).permutation(scene.cloud.count)
        report = evaluate_scene(scene.cloud, scene.gt, scene.pred, FAKE_CFG)
        shuffled = evaluate_scene(
            scene.cloud.select(order),
            scene.gt.select(order),
            scene.pred.select(order),
            FAKE_CFG,
        )
        assert shuffled == report

    def test_empty_scene(self, cfg):
        report = evaluate_scene(
            PointCloud(np.zeros((0, 3))), LabelField([]), LabelField([]), cfg
        )
        assert all(value is None for value in report.metrics.values())
        assert all(value == 0 for value in report.counters.values())
        assert report.class_iou == (None, None)

    def test_validation(self, two_planes, cfg):
        cloud, gt = two_planes
        with pytest.raises(SceneValidationError, match=r"ignore label"):
            evaluate_scene(cloud, gt, LabelField(np.full(cloud.count, -1)), cfg)
        with pytest.raises(SceneValidationError, match=r"outside"):
            evaluate_scene(cloud, gt, gt, cfg, groups=ClassGroups({"a": [2]}))


class TestAggregate:
    def test_micro_average(self, fake_source):
        reports = [evaluate_scene(s.cloud, s.gt, s.pred, FAKE_CFG) for s in fake_source]
        total = aggregate(reports)
        assert total.num_scenes == len(reports)
        for counter in CounterType:
            assert total[counter] == sum(r[counter] for r in reports)
        confusion = sum(r.confusion for r in reports)
        np.testing.assert_array_equal(total.confusion, confusion)
        pred = total[CounterType.PRED_BOUNDARY]
        overlap = total[CounterType.BOUNDARY_OVERLAP]
        assert total[MetricType.FERR] == pytest.approx((pred - overlap) / pred)

    def test_single_report(self, fake_source):
        scene = fake_source[0]
        report = evaluate_scene(scene.cloud, scene.gt, scene.pred, FAKE_CFG)
        assert aggregate([report]) == report

    def test_mismatch(self, fake_source):
        scene = fake_source[0]
        report = evaluate_scene(scene.cloud, scene.gt, scene.pred, FAKE_CFG)
        other = evaluate_scene(
            scene.cloud, scene.gt, scene.pred, FAKE_CFG.config_like_this(radius_m=0.04)
        )
        with pytest.raises(SceneValidationError, match=r"different configurations"):
            aggregate([report, other])
        grouped = evaluate_scene(
            scene.cloud, scene.gt, scene.pred, FAKE_CFG, ClassGroups({"a": [0]})
        )
        with pytest.raises(SceneValidationError, match=r"different groups"):
            aggregate([report, grouped])

    def test_order_and_grouping_do_not_matter(self, fake_source):
        a, b, c = (
            evaluate_scene(s.cloud, s.gt, s.pred, FAKE_CFG) for s in fake_source[:3]
        )
        assert aggregate([a, b]) == aggregate([b, a])
        assert aggregate([c, a, b]) == aggregate([a, b, c])
        nested_left = aggregate([aggregate([a, b]), c])
        nested_right = aggregate([a, aggregate([b, c])])
        assert nested_left == nested_right == aggregate([a, b, c])
        assert nested_left.num_scenes == 3

    def test_empty(self):
        with pytest.raises(ValueError, match=r"Nothing to aggregate"):
            aggregate([])


def test_radius_sweep(two_planes, cfg):
    cloud, gt = two_planes
    pred = corrupt_labels(gt, cloud, CorruptionMode.DILATE, 0.04, seed=0)
    reports = radius_sweep(cloud, gt, pred, cfg, radii=(0.04, 0.02, 0.06))
    assert list(reports) == [0.04, 0.02, 0.06]
    assert all(report.cfg.radius_m == r for r, report in reports.items())
    boundary = [reports[r][CounterType.GT_BOUNDARY] for r in (0.02, 0.04, 0.06)]
    assert boundary == sorted(boundary)


def test_summary(two_planes, cfg):
    cloud, gt = two_planes
    report = evaluate_scene(cloud, gt, gt, cfg, ClassGroups({"floor": [0]}))
    assert report.summary().splitlines() == [
        "mIoU: 1.0000",
        "mAcc: 1.0000",
        "oAcc: 1.0000",
        "FErr: 0.0000",
        "MErr: 0.0000",
        "RErr_0.5: 0.0000",
        "DErr_0.5: 0.0000",
        "IoU[floor]: 1.0000",
    ]


def test_single_point_scene():
    cloud = PointCloud([[0.0, 0.0, 0.0]])
    report = evaluate_scene(cloud, LabelField([1]), LabelField([1]), EvalConfig(2))
    assert report[MetricType.MIOU] == 1.0
    assert report[MetricType.FERR] is None
    assert report[MetricType.RERR] is None
