import logging

import numpy as np
import pytest

from segerr.apis.data import LabelField, PointCloud
from segerr.apis.processing import Corruptor
from segerr.components import extract_components
from segerr.errors import SceneValidationError
from segerr.names import CorruptionMode, GeneratorKind
from segerr.synth import (
    SceneSpec,
    SyntheticCase,
    SyntheticSceneSource,
    corrupt_labels,
    generate_scene,
    make_corruptor,
    make_rng,
)


class TestGenerators:
    def test_two_planes(self, two_planes):
        cloud, gt = two_planes
        assert cloud.count == 2601
        x = cloud.positions[:, 0]
        assert (gt.labels[x < 0.49] == 0).all()
        assert (gt.labels[x > 0.49] == 1).all()
        assert (cloud.positions[:, 2] == 0).all()

    def test_checkerboard(self, checkerboard):
        cloud, gt = checkerboard
        i = np.rint(cloud.positions[:, 0] / 0.02).astype(int)
        j = np.rint(cloud.positions[:, 1] / 0.02).astype(int)
        np.testing.assert_array_equal(gt.labels, (i // 10 + j // 10) % 2)

    def test_spheres(self, spheres, floating_spheres):
        cloud, gt = spheres
        floating, floating_gt = floating_spheres
        assert floating.count == 2 * 515
        assert cloud.count == 2601 + floating.count
        assert (gt.labels[cloud.positions[:, 2] == 0] == 0).all()
        assert (floating_gt.labels == 1).all()
        assert floating.positions[:, 2].min() == pytest.approx(0.2)

    def test_sphere_classes_cycle(self):
        spec = SceneSpec(GeneratorKind.SPHERES_IN_BOX, num_spheres=3, num_classes=3)
        _, gt = generate_scene(spec)
        assert sorted(np.unique(gt.labels).tolist()) == [0, 1, 2]

    def test_random_blobs(self):
        spec = SceneSpec(
            GeneratorKind.RANDOM_BLOBS, num_points=800, num_blobs=5, num_classes=3
        )
        cloud, gt = generate_scene(spec)
        assert cloud.count == 800
        assert gt.labels.min() >= 0 and gt.labels.max() < 3
        assert (cloud.positions[:, 2] == 0).all()

    @pytest.mark.parametrize("kind", list(GeneratorKind))
    def test_deterministic(self, kind):
        spec = SceneSpec(kind, num_points=500, jitter=0.001, seed=123)
        first, second = generate_scene(spec), generate_scene(spec)
        assert first[0] == second[0] and first[1] == second[1]

    def test_seed_changes_random_scenes(self):
        spec = SceneSpec(GeneratorKind.RANDOM_BLOBS, num_points=100)
        assert generate_scene(spec)[0] != generate_scene(spec.spec_like_this(seed=1))[0]

    def test_philox_stream(self):
        assert make_rng(2**64 - 1).integers(0, 1000, 5).tolist() == (
            make_rng(2**64 - 1).integers(0, 1000, 5).tolist()
        )


class TestSceneSpec:
    def test_round_trip(self):
        spec = SceneSpec(GeneratorKind.CHECKERBOARD, extent=(0.4, 0.2, 0), tile=0.04)
        document = spec.to_dict()
        assert document["kind"] == "checkerboard"
        assert SceneSpec.from_dict(document) == spec

    def test_validation(self):
        with pytest.raises(SceneValidationError, match=r"multiple of"):
            SceneSpec(GeneratorKind.CHECKERBOARD, tile=0.03)
        with pytest.raises(SceneValidationError, match=r"pitch must be positive"):
            SceneSpec(GeneratorKind.TWO_PLANES, pitch=0)
        with pytest.raises(SceneValidationError, match=r"64-bit"):
            SceneSpec(GeneratorKind.TWO_PLANES, seed=-1)
        with pytest.raises(SceneValidationError, match=r"at least 2 classes"):
            SceneSpec(GeneratorKind.TWO_PLANES, num_classes=1)
        with pytest.raises(SceneValidationError, match=r"extents must be positive"):
            SceneSpec(GeneratorKind.TWO_PLANES, extent=(0, 1, 0))
        with pytest.raises(ValueError):
            SceneSpec("triangles")

    def test_from_dict_validation(self):
        with pytest.raises(SceneValidationError, match=r"Unknown scene spec keys"):
            SceneSpec.from_dict({"kind": "two-planes", "colour": "red"})
        with pytest.raises(SceneValidationError, match=r"missing the kind"):
            SceneSpec.from_dict({"pitch": 0.02})


class TestCorruptions:
    def test_region_swap(self, floating_spheres):
        cloud, gt = floating_spheres
        pred = corrupt_labels(gt, cloud, CorruptionMode.REGION_SWAP, 1, seed=4)
        changed = pred.labels != gt.labels
        assert changed.sum() == 515
        components = extract_components(cloud, gt, 0.06)
        assert any(changed[c.point_indices].all() for c in components)

    def test_dilate_and_erode(self, two_planes):
        cloud, gt = two_planes
        dilated = corrupt_labels(gt, cloud, CorruptionMode.DILATE, 0.04, seed=0)
        changed = dilated.labels != gt.labels
        assert changed.any()
        assert (gt.labels[changed] == 1).all() and (dilated.labels[changed] == 0).all()
        eroded = corrupt_labels(gt, cloud, CorruptionMode.ERODE, 0.04, seed=0)
        changed = eroded.labels != gt.labels
        assert changed.any()
        assert (gt.labels[changed] == 0).all() and (eroded.labels[changed] == 1).all()
        assert (np.abs(cloud.positions[changed, 0] - 0.5) <= 0.061).all()

    @pytest.mark.parametrize("mode", [CorruptionMode.DILATE, CorruptionMode.ERODE])
    def test_tiny_shift(self, two_planes, mode):
        cloud, gt = two_planes
        assert corrupt_labels(gt, cloud, mode, 1e-4, seed=0) == gt
        sparse = PointCloud([[0.0, 0.0, 0.0], [1e4, 1e4, 1e4]])
        labels = LabelField([0, 1])
        assert corrupt_labels(labels, sparse, mode, 1e-6, seed=0) == labels

    def test_target_class(self, two_planes):
        cloud, gt = two_planes
        dilated = corrupt_labels(
            gt, cloud, CorruptionMode.DILATE, 0.04, seed=0, target_class=1
        )
        changed = dilated.labels != gt.labels
        assert (dilated.labels[changed] == 1).all()
        with pytest.raises(SceneValidationError, match=r"target_class"):
            make_corruptor(CorruptionMode.ERODE, 2, target_class=2)

    def test_speckle_keeps_away_from_boundaries(self, two_planes):
        cloud, gt = two_planes
        pred = corrupt_labels(gt, cloud, CorruptionMode.SPECKLE, 4, seed=9)
        changed = pred.labels != gt.labels
        assert changed.any()
        assert (np.abs(cloud.positions[changed, 0] - 0.5) > 0.06).all()

    def test_merge(self, checkerboard):
        cloud, gt = checkerboard
        pred = corrupt_labels(gt, cloud, CorruptionMode.MERGE, 1, seed=0)
        assert np.unique(pred.labels).shape[0] == 1

    @pytest.mark.parametrize("mode", list(CorruptionMode))
    def test_deterministic_and_zero_magnitude(self, checkerboard, mode):
        cloud, gt = checkerboard
        magnitude = 0.04 if mode in (CorruptionMode.DILATE, CorruptionMode.ERODE) else 2
        first = corrupt_labels(gt, cloud, mode, magnitude, seed=21)
        assert first == corrupt_labels(gt, cloud, mode, magnitude, seed=21)
        assert corrupt_labels(gt, cloud, mode, 0, seed=21) == gt

    def test_ignore_points_are_predicted(self, two_planes):
        cloud, gt = two_planes
        labels = gt.labels.copy()
        labels[:100] = -1
        pred = corrupt_labels(
            LabelField(labels), cloud, CorruptionMode.REGION_SWAP, 0, seed=0
        )
        assert (pred.labels[:100] == 0).all()
        assert (pred.labels >= 0).all()

    def test_speckle_without_room(self, caplog):
        spec = SceneSpec(GeneratorKind.CHECKERBOARD, extent=(0.2, 0.2, 0), tile=0.02)
        cloud, gt = generate_scene(spec)
        with caplog.at_level(logging.WARNING):
            pred = corrupt_labels(gt, cloud, CorruptionMode.SPECKLE, 3, seed=0)
        assert pred == gt
        assert "far enough" in caplog.text

    def test_validation(self, two_planes):
        cloud, gt = two_planes
        with pytest.raises(ValueError):
            corrupt_labels(gt, cloud, "blur", 1, seed=0)
        with pytest.raises(SceneValidationError, match=r"not below num_classes"):
            corrupt_labels(gt, cloud, CorruptionMode.MERGE, 1, seed=0, num_classes=1)
        with pytest.raises(SceneValidationError, match=r"non-negative"):
            corrupt_labels(gt, cloud, CorruptionMode.MERGE, -1, seed=0)
        with pytest.raises(TypeError):
            Corruptor(2)


class TestSyntheticSceneSource:
    def test_mixed(self):
        source = SyntheticSceneSource.mixed(12, seed=3)
        assert len(source) == 12
        names = [scene.name for scene in source]
        assert names[0] == "0-two-planes-clean"
        assert names[1] == "1-spheres-in-box-region-swap"
        assert len(set(names)) == 12
        for scene in source:
            assert scene.cloud.count <= 5000
            assert scene.gt.count == scene.pred.count == scene.cloud.count
            assert (scene.pred.labels >= 0).all()

    def test_clean_case_predicts_ground_truth(self):
        spec = SceneSpec(GeneratorKind.TWO_PLANES, extent=(0.3, 0.3, 0), split=0.15)
        scene = SyntheticSceneSource([SyntheticCase(spec)])[0]
        assert scene.gt == scene.pred

    def test_signature(self):
        assert SyntheticSceneSource.mixed(4).signature == (
            SyntheticSceneSource.mixed(4).signature
        )
        assert SyntheticSceneSource.mixed(4).signature != (
            SyntheticSceneSource.mixed(4, seed=1).signature
        )
        assert SyntheticSceneSource.mixed(2).name == "synthetic"
