import math
import unittest

import numpy as np

from bcrf import synthetic
from bcrf.diff import (
    Tape,
    fit_parameters,
    grad_check,
    loss_and_gradients,
    loss_instance_matched,
    loss_semantic,
    match_instances,
    project_params,
)
from bcrf.exceptions import InputError, TrainingError
from bcrf.inference import run_inference
from bcrf.types import PotentialField, TermWeights, potts_matrix


def taped(sample, params, early_stop=False):
    tape = Tape()
    run_inference(
        sample.unary_semantic, sample.unary_instance, sample.image, params,
        sample.schema, tape=tape, early_stop=early_stop)
    return tape


class LossTest(unittest.TestCase):

    def test_uniform_semantic(self):
        q = PotentialField(np.full((2, 3, 2), 0.5))

        self.assertAlmostEqual(
            loss_semantic(q, np.zeros((2, 3), dtype=int)), math.log(2))

    def test_void_pixels_excluded(self):
        q = PotentialField([[[0.5, 0.5], [0.9, 0.1]]])

        self.assertAlmostEqual(loss_semantic(q, [[-1, 0]]), -math.log(0.9))
        self.assertEqual(loss_semantic(q, [[-1, -1]]), 0.0)

    def test_uniform_instance(self):
        r = PotentialField(np.full((2, 2, 4), 0.25))
        gt = np.array([[1, 1], [0, 2]])

        self.assertAlmostEqual(loss_instance_matched(r, gt), math.log(4))


class MatchInstancesTest(unittest.TestCase):

    def test_best_overlap_wins(self):
        # predicted channel 1 covers the left column, channel 2 the rest
        r = np.zeros((2, 3, 3))
        r[:, 0, 1] = 1.0
        r[:, 1:, 2] = 1.0
        gt = np.array([[5, 7, 7], [5, 7, -1]])

        target = match_instances(PotentialField(r), gt)

        np.testing.assert_array_equal(target, [[1, 2, 2], [1, 2, -1]])

    def test_unmatched_targets_no_instance(self):
        r = np.zeros((1, 4, 2))
        r[0, :2, 1] = 1.0
        r[0, 2:, 0] = 1.0
        gt = np.array([[3, 3, 4, 4]])

        target = match_instances(PotentialField(r), gt)

        np.testing.assert_array_equal(target, [[1, 1, 0, 0]])


class MatchedLossTest(unittest.TestCase):

    def setUp(self):
        # channel 1 covers the top left, channel 2 the bottom row
        self.r = np.array([
            [[0.1, 0.8, 0.1], [0.2, 0.7, 0.1], [0.6, 0.2, 0.2]],
            [[0.1, 0.2, 0.7], [0.1, 0.1, 0.8], [0.3, 0.1, 0.6]],
        ])
        self.gt = np.array([[1, 1, 0], [2, 2, 2]])
        self.expected = -np.mean(np.log([0.8, 0.7, 0.6, 0.7, 0.8, 0.6]))

    def test_loss(self):
        self.assertAlmostEqual(
            loss_instance_matched(PotentialField(self.r), self.gt),
            self.expected, places=12)

    def test_swapped_channels(self):
        swapped = PotentialField(self.r[..., [0, 2, 1]])

        self.assertAlmostEqual(
            loss_instance_matched(swapped, self.gt), self.expected,
            places=12)

    def test_relabeled_ground_truth(self):
        relabeled = np.where(self.gt == 1, 9, np.where(self.gt == 2, 4, 0))

        self.assertAlmostEqual(
            loss_instance_matched(PotentialField(self.r), relabeled),
            self.expected, places=12)


class BackwardTest(unittest.TestCase):

    def setUp(self):
        rng = np.random.default_rng(8)
        self.sample = synthetic.random_sample(rng)
        self.params = synthetic.random_params(rng, self.sample.schema)

    def test_zero_coupling_unary_gradient(self):
        params = self.params.replace(
            term_weights=TermWeights(1, 0, 1, 0, 0, 0), iterations=3)
        tape = taped(self.sample, params)
        _, grads = loss_and_gradients(
            tape, self.sample.gt_semantic, self.sample.gt_instances)

        q = np.exp(-self.sample.unary_semantic.data)
        q /= q.sum(axis=2, keepdims=True)
        onehot = np.eye(q.shape[2])[self.sample.gt_semantic]
        np.testing.assert_allclose(
            grads.unary_semantic, (onehot - q) / 16.0, atol=1e-12)

    def test_zero_iterations(self):
        tape = taped(self.sample, self.params.replace(iterations=0))
        _, grads = loss_and_gradients(
            tape, self.sample.gt_semantic, self.sample.gt_instances)

        np.testing.assert_array_equal(grads.term_weights, np.zeros(6))
        np.testing.assert_array_equal(grads.mu, np.zeros((3, 3)))
        np.testing.assert_array_equal(grads.eta, np.zeros((3, 3)))

    def test_early_stopped_tape(self):
        params = self.params.replace(iterations=10, convergence_tol=100.0)
        tape = taped(self.sample, params, early_stop=True)

        with self.assertRaises(TrainingError):
            loss_and_gradients(
                tape, self.sample.gt_semantic, self.sample.gt_instances)

    def test_unfinished_tape(self):
        with self.assertRaises(TrainingError):
            loss_and_gradients(
                Tape(), self.sample.gt_semantic, self.sample.gt_instances)


class GradCheckTest(unittest.TestCase):

    def test_random_instances(self):
        sizes = [(4, 4), (3, 5), (5, 3), (2, 6), (6, 2)]
        for seed in range(10):
            height, width = sizes[seed % len(sizes)]
            report = grad_check(seed=seed, height=height, width=width,
                                iterations=5)

            self.assertTrue(report.passed, 'seed %d: %r' % (seed, report.errors))
            self.assertLess(report.max_error, 1e-4)

    def test_error_shrinks_with_step(self):
        """Central differences are second order: doubling the step
        quadruples the error."""
        for seed in range(2):
            fine = grad_check(seed=seed, height=3, width=3, step=2e-3)
            coarse = grad_check(seed=seed, height=3, width=3, step=4e-3)

            ratio = coarse.max_error / fine.max_error
            self.assertGreater(ratio, 3.0, 'seed %d' % seed)
            self.assertLess(ratio, 5.0, 'seed %d' % seed)


class FitTest(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(0)

    def test_empty_dataset(self):
        schema = synthetic.object_schema()

        with self.assertRaises(InputError):
            fit_parameters([], synthetic.toy_params(schema), 1, 1.0)

    def test_no_steps(self):
        dataset = synthetic.toy_dataset(self.rng, 2)
        params = synthetic.toy_params(dataset[0].schema)
        fitted, trace = fit_parameters(dataset, params, 0, 1.0)

        self.assertEqual(len(trace), 1)
        np.testing.assert_array_equal(fitted.eta, params.eta)
        self.assertEqual(fitted.term_weights, params.term_weights)

    def test_zero_learning_rate(self):
        dataset = synthetic.toy_dataset(self.rng, 2)
        params = synthetic.toy_params(dataset[0].schema)
        fitted, trace = fit_parameters(dataset, params, 3, 0.0)

        self.assertEqual(len(trace), 4)
        np.testing.assert_array_equal(fitted.mu, params.mu)
        np.testing.assert_array_equal(fitted.eta, params.eta)
        self.assertEqual(fitted.term_weights, params.term_weights)
        self.assertEqual(trace[0].loss, trace[-1].loss)

    def test_toy_fit_reduces_loss(self):
        dataset = synthetic.toy_dataset(self.rng, 20)
        params = synthetic.toy_params(dataset[0].schema)
        fitted, trace = fit_parameters(dataset, params, 30, 1.0)

        self.assertEqual([record.step for record in trace], list(range(31)))
        self.assertLessEqual(trace[-1].loss, 0.8 * trace[0].loss)
        off_diagonal = fitted.eta[~np.eye(2, dtype=bool)]
        self.assertGreater(np.ptp(off_diagonal), 0.0)
        fitted.validate(dataset[0].schema)


class ProjectParamsTest(unittest.TestCase):

    def test_clamps(self):
        schema = synthetic.street_schema()
        params = synthetic.toy_params(schema)
        eta = potts_matrix(3) - 2.0
        projected = project_params(params.replace(
            term_weights=TermWeights(-1, 1, 1, 1, 1, 1), eta=eta,
            mu=np.ones((4, 4))))

        self.assertEqual(projected.term_weights[0], 0.0)
        np.testing.assert_array_equal(projected.eta, np.zeros((3, 3)))
        np.testing.assert_array_equal(np.diag(projected.mu), np.zeros(4))
        projected.validate(schema)
