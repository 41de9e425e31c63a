import unittest

import numpy as np

from bcrf.exceptions import (
    ConfigError,
    InvariantError,
    SchemaError,
    ShapeError,
)
from bcrf.types import (
    BcrfParams,
    KernelComponent,
    KernelSpec,
    LabelSchema,
    MarginalPair,
    PanopticMap,
    PotentialField,
    TermWeights,
    potts_matrix,
    validate_schema,
)


def street():
    return LabelSchema(('road', 'sky', 'person', 'car'), (0, 1), (2, 3))


class LabelSchemaTest(unittest.TestCase):

    def test_repr(self):
        """Just make sure it doesn't blow up."""
        str(street())

    def test_well_formed(self):
        schema = LabelSchema(('road', 'person'), (0,), (1,), (1,))
        validate_schema(schema)

        self.assertEqual(schema.num_labels, 2)
        self.assertEqual(schema.num_instance_labels, 2)
        self.assertIsNone(schema.class_of(0))
        self.assertEqual(schema.class_of(1), 1)

    def test_label_in_stuff_and_things(self):
        schema = LabelSchema(('road', 'person'), (0, 1), (1,))

        with self.assertRaises(SchemaError) as ctx:
            validate_schema(schema)
        self.assertIn('both stuff and thing', str(ctx.exception))

    def test_instance_of_stuff_class(self):
        schema = LabelSchema(('road', 'person'), (0,), (1,), (0,))

        with self.assertRaises(SchemaError) as ctx:
            validate_schema(schema)
        self.assertIn('road', str(ctx.exception))

    def test_label_neither_stuff_nor_thing(self):
        schema = LabelSchema(('road', 'person', 'car'), (0,), (1,))

        with self.assertRaises(SchemaError):
            validate_schema(schema)

    def test_eta_index(self):
        schema = street()

        self.assertEqual(schema.eta_index(None), 0)
        self.assertEqual(schema.eta_index(0), 0)
        self.assertEqual(schema.eta_index(1), 0)
        self.assertEqual(schema.eta_index(2), 1)
        self.assertEqual(schema.eta_index(3), 2)
        self.assertEqual(schema.eta_names(), ('null', 'person', 'car'))

    def test_with_instances(self):
        schema = street().with_instances((3, 2, 3))

        self.assertEqual(schema.num_instances, 3)
        self.assertEqual(schema.num_instance_labels, 4)
        self.assertEqual(schema.class_of(3), 3)
        self.assertEqual(street().num_instances, 0)

    def test_from_kinds(self):
        schema = LabelSchema.from_kinds(
            ('road', 'person'), ('stuff', 'thing'))

        self.assertEqual(schema, LabelSchema(('road', 'person'), (0,), (1,)))

    def test_label_id(self):
        schema = street()

        self.assertEqual(schema.label_id('car'), 3)
        self.assertEqual(schema.label_id(2), 2)
        with self.assertRaises(SchemaError):
            schema.label_id('bus')


class PotentialFieldTest(unittest.TestCase):

    def test_flat_is_pixel_major(self):
        data = np.arange(12.0).reshape(2, 3, 2)
        field = PotentialField(data)

        self.assertEqual(field.num_pixels, 6)
        np.testing.assert_array_equal(field.flat[4], data[1, 1])

    def test_from_flat(self):
        flat = np.arange(8.0).reshape(4, 2)
        field = PotentialField.from_flat(flat, 2, 2)

        self.assertEqual(field.shape, (2, 2, 2))
        np.testing.assert_array_equal(field.flat, flat)

    def test_immutable(self):
        field = PotentialField(np.zeros((1, 1, 2)))

        with self.assertRaises(ValueError):
            field.data[0, 0, 0] = 1.0

    def test_copies_input(self):
        data = np.zeros((1, 1, 2))
        field = PotentialField(data)
        data[0, 0, 0] = 5.0

        self.assertEqual(field.data[0, 0, 0], 0.0)

    def test_rejects_non_finite(self):
        with self.assertRaises(InvariantError):
            PotentialField(np.array([[[np.nan, 0.0]]]))

    def test_rejects_wrong_rank(self):
        with self.assertRaises(ShapeError):
            PotentialField(np.zeros((2, 2)))


class MarginalPairTest(unittest.TestCase):

    def test_simplex(self):
        q = np.full((2, 2, 2), 0.5)
        r = np.ones((2, 2, 1))
        pair = MarginalPair(q, r)

        self.assertEqual((pair.height, pair.width), (2, 2))

    def test_rejects_off_simplex(self):
        with self.assertRaises(InvariantError):
            MarginalPair(np.full((1, 1, 2), 0.6), np.ones((1, 1, 1)))

    def test_rejects_negative(self):
        with self.assertRaises(InvariantError):
            MarginalPair(np.array([[[1.5, -0.5]]]), np.ones((1, 1, 1)))

    def test_rejects_mismatched_sizes(self):
        with self.assertRaises(ShapeError):
            MarginalPair(np.full((1, 2, 2), 0.5), np.ones((2, 1, 1)))


class KernelSpecTest(unittest.TestCase):

    def test_total_weight(self):
        spec = KernelSpec.spatial(0.5, 3.0) + KernelSpec.bilateral(2.0, 30, 13)

        self.assertEqual(spec.total_weight, 2.5)
        self.assertEqual(len(spec), 2)
        spec.validate()

    def test_negative_weight(self):
        spec = KernelSpec([KernelComponent(-1.0, (1.0, 1.0), 'spatial')])

        with self.assertRaises(ConfigError):
            spec.validate()

    def test_zero_bandwidth(self):
        spec = KernelSpec([KernelComponent(1.0, (1.0, 0.0), 'spatial')])

        with self.assertRaises(ConfigError):
            spec.validate()

    def test_bandwidth_count(self):
        spec = KernelSpec([KernelComponent(1.0, (1.0, 1.0), 'bilateral')])

        with self.assertRaises(ConfigError):
            spec.validate()


class BcrfParamsTest(unittest.TestCase):

    def setUp(self):
        self.schema = street()
        self.params = BcrfParams.potts(self.schema)

    def test_defaults(self):
        params = self.params

        self.assertEqual(params.term_weights, TermWeights.uniform(1.0))
        self.assertEqual(params.iterations, 5)
        self.assertEqual(params.damping, 1.0)
        self.assertEqual(params.convergence_tol, 1e-5)
        self.assertEqual(params.mu.shape, (4, 4))
        self.assertEqual(params.eta.shape, (3, 3))
        self.assertEqual(params.kernel_cross.total_weight, 0.5)
        params.validate(self.schema)

    def test_replace(self):
        params = self.params.replace(iterations=10)

        self.assertEqual(params.iterations, 10)
        self.assertEqual(self.params.iterations, 5)
        with self.assertRaises(TypeError):
            self.params.replace(sigma=1.0)

    def test_nonzero_diagonal(self):
        mu = np.ones((4, 4))

        with self.assertRaises(ConfigError):
            self.params.replace(mu=mu).validate(self.schema)

    def test_negative_term_weight(self):
        weights = self.params.term_weights._replace(cross_unary=-1.0)

        with self.assertRaises(ConfigError):
            self.params.replace(term_weights=weights).validate()

    def test_shape_against_schema(self):
        with self.assertRaises(ConfigError):
            self.params.replace(eta=potts_matrix(4)).validate(self.schema)

    def test_damping_range(self):
        with self.assertRaises(ConfigError):
            self.params.replace(damping=0.0).validate()


class PanopticMapTest(unittest.TestCase):

    def test_equality(self):
        a = PanopticMap([[0, 1]], [[0, 2]])
        b = PanopticMap(np.array([[0, 1]]), np.array([[0, 2]]))

        self.assertEqual(a, b)
        self.assertNotEqual(a, PanopticMap([[0, 1]], [[0, 1]]))
        self.assertEqual(a.shape, (1, 2))

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            PanopticMap([[0, 1]], [[0], [1]])
