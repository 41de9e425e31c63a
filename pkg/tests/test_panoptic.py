import unittest

import numpy as np

from bcrf import synthetic
from bcrf.exceptions import InputError, ShapeError
from bcrf.inference import run_inference
from bcrf.metrics import pq_metrics
from bcrf.panoptic import (
    Detection,
    colorize,
    fuse_panoptic,
    instance_unary_from_detections,
)
from bcrf.types import LabelSchema, MarginalPair, PanopticMap


class DetectionUnaryTest(unittest.TestCase):

    def test_single_detection(self):
        mask = np.array([[True, False]])
        unary, classes = instance_unary_from_detections(
            [Detection(1, 0.9, mask)], 1, 2)
        probs = np.exp(-unary.data)

        self.assertEqual(classes, (1,))
        np.testing.assert_allclose(probs[0, 0], [0.0526, 0.9474], atol=1e-4)
        self.assertGreater(probs[0, 1, 0], 0.999)

    def test_overlapping_detections(self):
        mask = np.ones((1, 1), dtype=bool)
        unary, classes = instance_unary_from_detections(
            [Detection(2, 0.8, mask), Detection(3, 0.6, mask)], 1, 1)
        probs = np.exp(-unary.data)[0, 0]

        self.assertEqual(classes, (2, 3))
        self.assertAlmostEqual(probs[1] / probs[2], 4.0 / 3.0)

    def test_no_detections(self):
        unary, classes = instance_unary_from_detections([], 2, 2)

        self.assertEqual(classes, ())
        np.testing.assert_array_equal(unary.data, np.zeros((2, 2, 1)))

    def test_bad_detections(self):
        with self.assertRaises(InputError):
            instance_unary_from_detections(
                [Detection(1, 1.5, np.ones((1, 1)))], 1, 1)
        with self.assertRaises(ShapeError):
            instance_unary_from_detections(
                [Detection(1, 0.5, np.ones((2, 1)))], 1, 1)


class FuseTest(unittest.TestCase):

    def setUp(self):
        self.schema = LabelSchema(('road', 'car'), (0,), (1,), (1,))

    def test_joint(self):
        q = np.array([[[0.9, 0.1], [0.2, 0.8], [0.4, 0.6]]])
        r = np.array([[[0.9, 0.1], [0.1, 0.9], [0.9, 0.1]]])
        panoptic = fuse_panoptic(MarginalPair(q, r), self.schema)

        np.testing.assert_array_equal(panoptic.semantic, [[0, 1, 0]])
        np.testing.assert_array_equal(panoptic.instance, [[0, 1, 0]])

    def test_joint_overrides_incompatible_argmaxes(self):
        # q prefers sky and r prefers the person, but person with its own
        # instance has the larger joint score
        schema = LabelSchema(('sky', 'person'), (0,), (1,), (1,))
        q = np.array([[[0.55, 0.45]]])
        r = np.array([[[0.3, 0.7]]])
        panoptic = fuse_panoptic(MarginalPair(q, r), schema)

        np.testing.assert_array_equal(panoptic.semantic, [[1]])
        np.testing.assert_array_equal(panoptic.instance, [[1]])

    def test_joint_pairs_are_compatible(self):
        rng = np.random.default_rng(5)
        sample = synthetic.random_instance(rng, 8, 8)
        state, _ = run_inference(
            sample.unary_semantic, sample.unary_instance, sample.image,
            synthetic.random_params(rng, sample.schema), sample.schema)
        panoptic = fuse_panoptic(state, sample.schema)

        for label, instance in zip(panoptic.semantic.ravel(),
                                   panoptic.instance.ravel()):
            if instance == 0:
                self.assertTrue(sample.schema.is_stuff(label))
            else:
                self.assertEqual(sample.schema.class_of(instance), label)

    def test_paste(self):
        q = np.zeros((2, 4, 2))
        q[..., 0] = 0.7
        q[..., 1] = 0.3
        r = np.zeros((2, 4, 2))
        r[..., 0] = 1.0
        r[:, :2] = [0.2, 0.8]
        panoptic = fuse_panoptic(
            MarginalPair(q, r), self.schema, mode='paste', min_area=4)

        np.testing.assert_array_equal(
            panoptic.semantic, [[1, 1, 0, 0], [1, 1, 0, 0]])
        np.testing.assert_array_equal(
            panoptic.instance, [[1, 1, 0, 0], [1, 1, 0, 0]])

    def test_paste_skips_small_masks(self):
        q = np.full((1, 4, 2), 0.5)
        r = np.zeros((1, 4, 2))
        r[..., 0] = 1.0
        r[0, 0] = [0.1, 0.9]
        panoptic = fuse_panoptic(
            MarginalPair(q, r), self.schema, mode='paste', min_area=2)

        np.testing.assert_array_equal(panoptic.instance, [[0, 0, 0, 0]])
        np.testing.assert_array_equal(panoptic.semantic, [[0, 0, 0, 0]])

    def test_unknown_mode(self):
        q = np.full((1, 1, 2), 0.5)
        r = np.full((1, 1, 2), 0.5)

        with self.assertRaises(InputError):
            fuse_panoptic(MarginalPair(q, r), self.schema, mode='vote')


class ColorizeTest(unittest.TestCase):

    def test_void_is_black(self):
        panoptic = PanopticMap([[-1, 0], [1, 1]], [[0, 0], [1, 2]])
        image = colorize(panoptic)

        self.assertEqual(image.dtype, np.uint8)
        np.testing.assert_array_equal(image[0, 0], [0, 0, 0])
        self.assertFalse(np.array_equal(image[1, 0], image[1, 1]))
        np.testing.assert_array_equal(colorize(panoptic), image)


class CrossTermBenchmarkTest(unittest.TestCase):
    """
    A clean car detection over semantic probabilities that call a block of
    the car road: the cross terms should let the detection repair the block.
    """

    def quality(self, sample, cross):
        params = synthetic.cross_benchmark_params(sample.schema, cross=cross)
        state, _ = run_inference(
            sample.unary_semantic, sample.unary_instance, sample.image,
            params, sample.schema)
        panoptic = fuse_panoptic(state, sample.schema)
        report = pq_metrics(
            panoptic, synthetic.ground_truth(sample), sample.schema)
        return report.aggregates['All'].pq

    def test_cross_terms_help(self):
        wins = 0
        for seed in range(10):
            sample = synthetic.corrupted_object_sample(
                np.random.default_rng(seed))
            if self.quality(sample, True) > self.quality(sample, False):
                wins += 1

        self.assertGreaterEqual(wins, 9)
