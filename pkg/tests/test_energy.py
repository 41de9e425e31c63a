import itertools
import math
import unittest

import numpy as np

from bcrf import synthetic
from bcrf.energy import (
    EnergyModel,
    compat_transform_instance,
    compat_transform_semantic,
    cross_compat,
    cross_compat_matrix,
    semantic_unary_from_probs,
    total_energy,
)
from bcrf.exceptions import InputError, ShapeError
from bcrf.kernels import image_features
from bcrf.types import (
    BcrfParams,
    KernelSpec,
    LabelSchema,
    PotentialField,
    TermWeights,
    potts_matrix,
)


def street():
    return LabelSchema(('road', 'sky', 'person', 'car'), (0, 1), (2, 3))


class SemanticUnaryTest(unittest.TestCase):

    def test_uniform(self):
        unary = semantic_unary_from_probs(PotentialField(np.full((2, 2, 2), 0.5)))

        np.testing.assert_allclose(unary.data, math.log(2.0), rtol=1e-12)

    def test_skewed(self):
        probs = PotentialField([[[0.75, 0.25]]])
        unary = semantic_unary_from_probs(probs)

        np.testing.assert_allclose(
            unary.data[0, 0], [0.2877, 1.3863], atol=1e-4)

    def test_floor(self):
        unary = semantic_unary_from_probs(PotentialField([[[1.0, 0.0]]]))

        self.assertEqual(unary.data[0, 0, 0], 0.0)
        self.assertAlmostEqual(unary.data[0, 0, 1], -math.log(1e-8))

    def test_not_a_distribution(self):
        with self.assertRaises(InputError):
            semantic_unary_from_probs(PotentialField([[[0.7, 0.7]]]))
        with self.assertRaises(InputError):
            semantic_unary_from_probs(PotentialField([[[1.2, -0.2]]]))


class CrossCompatTest(unittest.TestCase):

    def setUp(self):
        self.schema = street()
        # rows and columns: null, person, car
        self.eta = np.array([
            [0.0, 1.0, 2.0],
            [3.0, 0.0, 4.0],
            [5.0, 6.0, 0.0],
        ])

    def test_free_pairs(self):
        self.assertEqual(cross_compat(0, None, self.eta, self.schema), 0.0)
        self.assertEqual(cross_compat(1, None, self.eta, self.schema), 0.0)
        self.assertEqual(cross_compat(2, 2, self.eta, self.schema), 0.0)
        self.assertEqual(cross_compat(3, 3, self.eta, self.schema), 0.0)

    def test_stuff_with_instance(self):
        self.assertEqual(cross_compat(0, 2, self.eta, self.schema), 1.0)
        self.assertEqual(cross_compat(1, 3, self.eta, self.schema), 2.0)

    def test_thing_without_instance(self):
        self.assertEqual(cross_compat(2, None, self.eta, self.schema), 3.0)
        self.assertEqual(cross_compat(3, None, self.eta, self.schema), 5.0)

    def test_thing_with_other_instance(self):
        self.assertEqual(cross_compat(2, 3, self.eta, self.schema), 4.0)
        self.assertEqual(cross_compat(3, 2, self.eta, self.schema), 6.0)

    def test_stuff_class_is_rejected(self):
        with self.assertRaises(InputError):
            cross_compat(2, 0, self.eta, self.schema)

    def test_matrix_agrees(self):
        schema = self.schema.with_instances((3, 2, 2))
        matrix = cross_compat_matrix(schema, self.eta)
        classes = (None, 3, 2, 2)

        self.assertEqual(matrix.shape, (4, 4))
        for label in range(4):
            for t, c in enumerate(classes):
                self.assertEqual(matrix[label, t],
                                 cross_compat(label, c, self.eta, schema))


class CompatTransformTest(unittest.TestCase):

    def test_semantic(self):
        dist = PotentialField([[[0.2, 0.8]]])
        mu = np.array([[0.0, 2.0], [3.0, 0.0]])
        out = compat_transform_semantic(dist, mu)

        np.testing.assert_allclose(out.data[0, 0], [1.6, 0.6])

    def test_instance_iverson(self):
        out = compat_transform_instance([[1.0, 2.0, 3.0]])

        np.testing.assert_array_equal(out, [[5.0, 4.0, 3.0]])


class TwoPixelEnergyTest(unittest.TestCase):
    """
    A 1x2 image with unit spatial kernels everywhere: the two pixels have
    similarity k = exp(-1/2).
    """

    def setUp(self):
        self.schema = LabelSchema(('road', 'car'), (0,), (1,), (1,))
        self.features = image_features(np.zeros((1, 2, 3)))
        spec = KernelSpec.spatial(1.0, 1.0)
        self.k = math.exp(-0.5)
        self.phi = PotentialField([[[0.1, 0.7], [0.9, 0.3]]])
        self.psi = PotentialField([[[0.2, 1.1], [0.8, 0.4]]])
        self.params = BcrfParams(
            TermWeights.uniform(), spec, spec, spec,
            potts_matrix(2), potts_matrix(2))

    def energy(self, semantic, instance, weights=None):
        params = self.params
        if weights is not None:
            params = params.replace(term_weights=TermWeights(*weights))
        return total_energy(
            np.array([semantic]), np.array([instance]), self.phi, self.psi,
            params, self.schema, self.features)

    def test_isolated_terms(self):
        """Each weight switches exactly one term on."""
        expected = [
            0.1 + 0.3,      # semantic unary
            self.k,         # road next to car
            0.2 + 0.4,      # instance unary
            self.k,         # inst0 next to inst1
            0.0,            # both pixels compatible in place
            2 * self.k,     # road sees the car instance, car sees inst0
        ]
        for term, value in enumerate(expected):
            weights = [0.0] * 6
            weights[term] = 1.0
            self.assertAlmostEqual(
                self.energy([0, 1], [0, 1], weights), value, places=12)

    def test_cross_unary_penalty(self):
        weights = [0, 0, 0, 0, 1, 0]

        self.assertAlmostEqual(self.energy([1, 1], [0, 0], weights), 2.0)
        self.assertAlmostEqual(self.energy([0, 0], [1, 0], weights), 1.0)

    def test_weights_are_linear(self):
        weights = np.array([0.5, 1.5, 2.0, 0.25, 3.0, 0.75])
        terms = []
        for term in range(6):
            isolated = [0.0] * 6
            isolated[term] = 1.0
            terms.append(self.energy([0, 1], [1, 1], isolated))

        self.assertAlmostEqual(
            self.energy([0, 1], [1, 1], weights), float(weights @ terms),
            places=12)

    def test_expected_energy_matches_enumeration(self):
        """The mean-field expectation is exact for a product distribution."""
        rng = np.random.default_rng(2)
        q = rng.dirichlet(np.ones(2), size=2)
        r = rng.dirichlet(np.ones(2), size=2)
        model = EnergyModel(self.schema, self.params, self.features)

        expected = 0.0
        for x in itertools.product(range(2), repeat=2):
            for z in itertools.product(range(2), repeat=2):
                p = q[0, x[0]] * q[1, x[1]] * r[0, z[0]] * r[1, z[1]]
                expected += p * self.energy(list(x), list(z))

        self.assertAlmostEqual(
            model.expected_energy(q, r, self.phi.flat, self.psi.flat),
            expected, places=10)

    def test_asymmetric_mu_prices_ordered_pairs(self):
        """The earlier pixel's label indexes the row of mu."""
        mu = np.array([[0.0, 1.0], [3.0, 0.0]])
        self.params = self.params.replace(mu=mu)
        weights = [0, 1, 0, 0, 0, 0]

        self.assertAlmostEqual(
            self.energy([0, 1], [0, 0], weights), self.k, places=12)
        self.assertAlmostEqual(
            self.energy([1, 0], [0, 0], weights), 3 * self.k, places=12)

    def test_expected_energy_with_asymmetric_mu(self):
        rng = np.random.default_rng(5)
        self.params = self.params.replace(
            mu=np.array([[0.0, 0.5], [2.5, 0.0]]))
        q = rng.dirichlet(np.ones(2), size=2)
        r = rng.dirichlet(np.ones(2), size=2)
        model = EnergyModel(self.schema, self.params, self.features)

        expected = 0.0
        for x in itertools.product(range(2), repeat=2):
            for z in itertools.product(range(2), repeat=2):
                p = q[0, x[0]] * q[1, x[1]] * r[0, z[0]] * r[1, z[1]]
                expected += p * self.energy(list(x), list(z))

        self.assertAlmostEqual(
            model.expected_energy(q, r, self.phi.flat, self.psi.flat),
            expected, places=10)

    def test_bad_labeling(self):
        with self.assertRaises(InputError):
            self.energy([0, 2], [0, 0])
        with self.assertRaises(ShapeError):
            total_energy(np.zeros((2, 1), dtype=int), np.zeros((2, 1), dtype=int),
                         self.phi, self.psi, self.params, self.schema,
                         self.features)


class EnergyModelTest(unittest.TestCase):

    def test_with_params_shares_kernels(self):
        schema = street().with_instances((2,))
        params = BcrfParams.potts(schema)
        model = EnergyModel.from_image(schema, params, np.zeros((2, 3, 3)))
        other = model.with_params(params.replace(eta=potts_matrix(3, 2.0)))

        self.assertIs(other.semantic_kernel, model.semantic_kernel)
        self.assertEqual(model.num_pixels, 6)
        np.testing.assert_array_equal(
            other.cross_matrix, 2.0 * model.cross_matrix)


def permuted_schema(schema, perm):
    inverse = np.argsort(perm)
    return LabelSchema(
        tuple(schema.labels[old] for old in inverse),
        tuple(int(perm[l]) for l in schema.stuff),
        tuple(int(perm[l]) for l in schema.things),
        tuple(int(perm[c]) for c in schema.instance_classes))


class LabelPermutationTest(unittest.TestCase):
    """
    Relabeling semantic classes consistently in the labeling, the unaries
    and mu leaves the energy unchanged.

    """
    def check(self, rng, perm, weights=None):
        sample = synthetic.random_instance(rng, 3, 4)
        schema = sample.schema
        params = synthetic.random_params(rng, schema)
        if weights is not None:
            params = params.replace(term_weights=TermWeights(*weights))
        features = image_features(sample.image)
        semantic = rng.integers(schema.num_labels, size=(3, 4))
        instance = rng.integers(schema.num_instance_labels, size=(3, 4))

        inverse = np.argsort(perm)
        moved_params = params.replace(mu=params.mu[np.ix_(inverse, inverse)])
        moved_phi = PotentialField(sample.unary_semantic.data[..., inverse])

        before = total_energy(
            semantic, instance, sample.unary_semantic, sample.unary_instance,
            params, schema, features)
        after = total_energy(
            perm[semantic], instance, moved_phi, sample.unary_instance,
            moved_params, permuted_schema(schema, perm), features)
        self.assertAlmostEqual(before, after, places=9)

    def test_swapping_stuff_labels(self):
        # road and sky share the null row of eta, so every term is kept
        for seed in range(10):
            self.check(np.random.default_rng(seed), np.array([1, 0, 2, 3]))

    def test_any_permutation_without_cross_terms(self):
        for seed in range(10):
            rng = np.random.default_rng(100 + seed)
            self.check(rng, rng.permutation(4), [1, 1, 1, 1, 0, 0])
