"""
Value types shared by every stage of the engine: the label schema, per-pixel
fields, marginals, kernel specifications, parameters and panoptic maps.

All of them are immutable once constructed; array payloads are copied and
flagged read-only.

"""
from collections import namedtuple

import numpy as np

from bcrf.exceptions import ConfigError, InvariantError, SchemaError, ShapeError

__all__ = (
    'STUFF',
    'THING',
    'SPATIAL',
    'BILATERAL',
    'FEATURE_DIMENSIONS',
    'SIMPLEX_TOLERANCE',
    'LabelSchema',
    'validate_schema',
    'PotentialField',
    'MarginalPair',
    'FeatureField',
    'KernelComponent',
    'KernelSpec',
    'TermWeights',
    'BcrfParams',
    'PanopticMap',
    'potts_matrix',
)

STUFF = 'stuff'
THING = 'thing'

SPATIAL = 'spatial'
BILATERAL = 'bilateral'
FEATURE_DIMENSIONS = {SPATIAL: 2, BILATERAL: 5}

SIMPLEX_TOLERANCE = 1e-6


def _frozen(array, dtype):
    array = np.array(array, dtype=dtype)
    array.setflags(write=False)
    return array


class LabelSchema(object):
    """
    The semantic label set, split into stuff and things, plus the instance
    label set.

    Semantic labels are the dense ids ``0..L-1`` in the order of ``labels``;
    names are metadata. Instance label 0 is ``inst0`` (class ``None``, the
    null class); instances ``1..N`` map to thing labels through
    ``instance_classes``.

    The constructor does not check invariants; see :func:`validate_schema`.

    """
    def __init__(self, labels, stuff, things, instance_classes=()):
        """
        :param labels: label names, one per semantic label id
        :type labels: sequence of str
        :param stuff: ids of the stuff labels
        :type stuff: iterable of int
        :param things: ids of the thing labels
        :type things: iterable of int
        :param instance_classes: thing label of each instance ``1..N``
        :type instance_classes: sequence of int

        """
        self._labels = tuple(str(name) for name in labels)
        self._stuff = frozenset(int(l) for l in stuff)
        self._things = tuple(sorted(set(int(l) for l in things)))
        self._instance_classes = tuple(int(c) for c in instance_classes)

    @classmethod
    def from_kinds(cls, labels, kinds, instance_classes=()):
        """
        Build a schema from one kind (``'stuff'`` or ``'thing'``) per label.

        """
        kinds = list(kinds)
        return cls(
            labels,
            [l for l, kind in enumerate(kinds) if kind == STUFF],
            [l for l, kind in enumerate(kinds) if kind == THING],
            instance_classes,
        )

    def __repr__(self):
        return (
            "<%s labels=%s, stuff=%s, things=%s, instances=%s>" %
            (self.__class__.__name__, list(self._labels),
             sorted(self._stuff), list(self._things),
             list(self._instance_classes))
        )

    def __eq__(self, other):
        return (
            isinstance(other, LabelSchema) and
            self._labels == other._labels and
            self._stuff == other._stuff and
            self._things == other._things and
            self._instance_classes == other._instance_classes
        )

    def __ne__(self, other):
        return not self == other

    def __hash__(self):
        return hash((self._labels, self._stuff, self._things,
                     self._instance_classes))

    @property
    def labels(self):
        return self._labels

    @property
    def num_labels(self):
        return len(self._labels)

    @property
    def stuff(self):
        return self._stuff

    @property
    def things(self):
        """
        Thing label ids in ascending order. This order fixes the rows and
        columns of the cross compatibility matrix eta.

        """
        return self._things

    @property
    def instance_classes(self):
        return self._instance_classes

    @property
    def num_instances(self):
        return len(self._instance_classes)

    @property
    def num_instance_labels(self):
        return len(self._instance_classes) + 1

    @property
    def eta_size(self):
        return len(self._things) + 1

    def is_stuff(self, label):
        return int(label) in self._stuff

    def is_thing(self, label):
        return int(label) in self._things

    def class_of(self, instance):
        """
        :returns: the thing label of ``instance``, or None (the null class)
            for ``inst0``

        """
        instance = int(instance)
        if instance == 0:
            return None
        return self._instance_classes[instance - 1]

    def eta_index(self, label):
        """
        Row/column of ``label`` in eta. The null class and every stuff label
        map to 0; thing labels follow in ascending id order.

        """
        if label is None or int(label) not in self._things:
            return 0
        return 1 + self._things.index(int(label))

    def eta_names(self):
        return ('null',) + tuple(self._labels[l] for l in self._things)

    def label_id(self, name_or_id):
        if isinstance(name_or_id, str):
            try:
                return self._labels.index(name_or_id)
            except ValueError:
                raise SchemaError("unknown label '%s'" % name_or_id)
        return int(name_or_id)

    def with_instances(self, instance_classes):
        """
        :returns: a copy of this schema with a new instance label set

        """
        return LabelSchema(
            self._labels, self._stuff, self._things, instance_classes)


def validate_schema(schema):
    """
    Check every :class:`LabelSchema` invariant.

    :raises: :class:`bcrf.exceptions.SchemaError` naming the first violated
        invariant

    """
    num_labels = schema.num_labels
    if num_labels == 0:
        raise SchemaError('schema has no semantic labels')
    if len(set(schema.labels)) != num_labels:
        raise SchemaError('label names are not unique')

    overlap = schema.stuff.intersection(schema.things)
    if overlap:
        label = min(overlap)
        raise SchemaError(
            "label %d (%s) is both stuff and thing" %
            (label, _name(schema, label)))

    known = set(range(num_labels))
    declared = set(schema.stuff).union(schema.things)
    unknown = declared - known
    if unknown:
        raise SchemaError("label id %d is out of range" % min(unknown))
    missing = known - declared
    if missing:
        label = min(missing)
        raise SchemaError(
            "label %d (%s) is neither stuff nor thing" %
            (label, _name(schema, label)))

    for instance, label in enumerate(schema.instance_classes, 1):
        if label not in schema.things:
            raise SchemaError(
                "instance %d has class %d (%s), which is not a thing" %
                (instance, label, _name(schema, label)))


def _name(schema, label):
    if 0 <= label < schema.num_labels:
        return schema.labels[label]
    return '?'


class PotentialField(object):
    """
    An H x W x C field of finite real scores: unaries in negative log space,
    marginals, or message accumulators. Pixels are row-major, channels minor.

    """
    def __init__(self, data):
        """
        :param data: array of shape (height, width, channels)
        :type data: array-like
        :raises: ShapeError, InvariantError

        """
        data = np.array(data, dtype=np.float64)
        if data.ndim != 3:
            raise ShapeError(
                'expected a (height, width, channels) field, got shape %s' %
                (data.shape,))
        if not np.all(np.isfinite(data)):
            raise InvariantError('field contains non-finite values')
        data.setflags(write=False)
        self._data = data

    @classmethod
    def from_flat(cls, flat, height, width):
        flat = np.asarray(flat)
        return cls(flat.reshape(height, width, flat.shape[-1]))

    def __repr__(self):
        return (
            "<%s height=%d, width=%d, channels=%d>" %
            (self.__class__.__name__, self.height, self.width, self.channels)
        )

    @property
    def data(self):
        return self._data

    @property
    def flat(self):
        """
        (pixels, channels) view of the data.

        """
        return self._data.reshape(-1, self.channels)

    @property
    def height(self):
        return self._data.shape[0]

    @property
    def width(self):
        return self._data.shape[1]

    @property
    def channels(self):
        return self._data.shape[2]

    @property
    def shape(self):
        return self._data.shape

    @property
    def num_pixels(self):
        return self.height * self.width


class MarginalPair(object):
    """
    The factorized distribution: per-pixel semantic marginals ``q`` (L
    channels) and instance marginals ``r`` (N_inst + 1 channels).

    """
    def __init__(self, q, r):
        if not isinstance(q, PotentialField):
            q = PotentialField(q)
        if not isinstance(r, PotentialField):
            r = PotentialField(r)
        if q.shape[:2] != r.shape[:2]:
            raise ShapeError(
                'semantic marginals are %dx%d but instance marginals are '
                '%dx%d' % (q.height, q.width, r.height, r.width))
        _check_simplex(q, 'semantic')
        _check_simplex(r, 'instance')
        self.q = q
        self.r = r

    def __repr__(self):
        return (
            "<%s %dx%d, labels=%d, instance labels=%d>" %
            (self.__class__.__name__, self.q.height, self.q.width,
             self.q.channels, self.r.channels)
        )

    @property
    def height(self):
        return self.q.height

    @property
    def width(self):
        return self.q.width


def _check_simplex(field, which):
    flat = field.flat
    if np.any(flat < 0):
        raise InvariantError('%s marginals have negative entries' % which)
    worst = np.max(np.abs(flat.sum(axis=1) - 1.0))
    if worst > SIMPLEX_TOLERANCE:
        raise InvariantError(
            '%s marginals leave the simplex (row sum off by %g)' %
            (which, worst))


class FeatureField(object):
    """
    Per-pixel feature vectors for one feature kind: ``(x, y)`` for spatial,
    ``(x, y, r, g, b)`` for bilateral.

    """
    def __init__(self, data, kind):
        data = np.array(data, dtype=np.float64)
        if kind not in FEATURE_DIMENSIONS:
            raise ConfigError("unknown feature kind '%s'" % kind)
        if data.ndim != 3 or data.shape[2] != FEATURE_DIMENSIONS[kind]:
            raise ShapeError(
                '%s features need %d dimensions, got shape %s' %
                (kind, FEATURE_DIMENSIONS[kind], data.shape))
        if not np.all(np.isfinite(data)):
            raise InvariantError('features contain non-finite values')
        data.setflags(write=False)
        self._data = data
        self.kind = kind

    def __repr__(self):
        return (
            "<%s kind=%s, %dx%d>" %
            (self.__class__.__name__, self.kind, self._data.shape[0],
             self._data.shape[1])
        )

    @property
    def data(self):
        return self._data

    @property
    def flat(self):
        return self._data.reshape(-1, self._data.shape[2])

    @property
    def num_pixels(self):
        return self._data.shape[0] * self._data.shape[1]


KernelComponent = namedtuple('KernelComponent', 'weight bandwidths features')


class KernelSpec(object):
    """
    A mixture of Gaussian similarity components. Each component has a
    non-negative weight, one positive bandwidth per feature dimension, and
    the feature kind it reads.

    """
    def __init__(self, components=()):
        self._components = tuple(
            KernelComponent(
                float(c.weight),
                tuple(float(s) for s in c.bandwidths),
                c.features,
            )
            for c in components
        )

    @classmethod
    def spatial(cls, weight, sigma):
        return cls([KernelComponent(weight, (sigma, sigma), SPATIAL)])

    @classmethod
    def bilateral(cls, weight, sigma_xy, sigma_rgb):
        return cls([KernelComponent(
            weight, (sigma_xy,) * 2 + (sigma_rgb,) * 3, BILATERAL)])

    def __add__(self, other):
        return KernelSpec(self._components + other._components)

    def __iter__(self):
        return iter(self._components)

    def __len__(self):
        return len(self._components)

    def __eq__(self, other):
        return (isinstance(other, KernelSpec) and
                self._components == other._components)

    def __ne__(self, other):
        return not self == other

    def __repr__(self):
        return "<%s %s>" % (self.__class__.__name__, list(self._components))

    @property
    def total_weight(self):
        """
        Sum of the component weights: the similarity of a pixel to itself.

        """
        return sum(c.weight for c in self._components)

    def validate(self, name='kernel'):
        for c in self._components:
            if c.features not in FEATURE_DIMENSIONS:
                raise ConfigError(
                    "%s: unknown feature kind '%s'" % (name, c.features))
            if not np.isfinite(c.weight) or c.weight < 0:
                raise ConfigError(
                    '%s: component weight must be >= 0, got %r' %
                    (name, c.weight))
            if len(c.bandwidths) != FEATURE_DIMENSIONS[c.features]:
                raise ConfigError(
                    '%s: %s components need %d bandwidths, got %d' %
                    (name, c.features, FEATURE_DIMENSIONS[c.features],
                     len(c.bandwidths)))
            if not all(np.isfinite(s) and s > 0 for s in c.bandwidths):
                raise ConfigError(
                    '%s: bandwidths must be > 0, got %r' %
                    (name, c.bandwidths))


class TermWeights(namedtuple('TermWeights', (
        'unary_semantic',
        'pairwise_semantic',
        'unary_instance',
        'pairwise_instance',
        'cross_unary',
        'cross_pairwise'))):
    """
    Multipliers of the six energy terms, in energy order.

    """
    __slots__ = ()

    @classmethod
    def uniform(cls, value=1.0):
        return cls(*([float(value)] * 6))

    def as_array(self):
        return np.array(self, dtype=np.float64)


def potts_matrix(size, cost=1.0):
    """
    :returns: ``size x size`` matrix with zero diagonal and ``cost``
        elsewhere

    """
    matrix = np.full((size, size), float(cost))
    np.fill_diagonal(matrix, 0.0)
    return matrix


DEFAULT_SEMANTIC_KERNEL = (
    KernelSpec.spatial(1.0, 3.0) + KernelSpec.bilateral(1.0, 30.0, 13.0))
DEFAULT_INSTANCE_KERNEL = (
    KernelSpec.spatial(1.0, 3.0) + KernelSpec.bilateral(1.0, 30.0, 13.0))
DEFAULT_CROSS_KERNEL = KernelSpec.spatial(0.5, 3.0)


class BcrfParams(object):
    """
    Model parameters: term weights, the three similarity kernels, the label
    compatibility matrices and the solver settings.

    ``mu`` is L x L over semantic labels; ``eta`` is indexed over the null
    class followed by the thing labels (see
    :meth:`LabelSchema.eta_index`).

    """
    def __init__(self,
                 term_weights,
                 kernel_semantic,
                 kernel_instance,
                 kernel_cross,
                 mu,
                 eta,
                 iterations=5,
                 damping=1.0,
                 convergence_tol=1e-5,
                 ):
        """
        :param term_weights: multipliers of the six energy terms
        :type term_weights: :class:`TermWeights` or sequence of 6 floats
        :param kernel_semantic: similarity of the semantic pairwise term
        :type kernel_semantic: :class:`KernelSpec`
        :param kernel_instance: similarity of the instance pairwise term
        :type kernel_instance: :class:`KernelSpec`
        :param kernel_cross: similarity of the cross pairwise term
        :type kernel_cross: :class:`KernelSpec`
        :param mu: semantic label compatibility, zero diagonal
        :param eta: cross compatibility over null + things, zero diagonal
        :param iterations: maximum number of mean-field updates
        :type iterations: int
        :param damping: weight of the fresh update, in (0, 1]
        :type damping: float
        :param convergence_tol: stop once the largest marginal change drops
            below this
        :type convergence_tol: float

        """
        self.term_weights = TermWeights(*[float(w) for w in term_weights])
        self.kernel_semantic = kernel_semantic
        self.kernel_instance = kernel_instance
        self.kernel_cross = kernel_cross
        self.mu = _frozen(mu, np.float64)
        self.eta = _frozen(eta, np.float64)
        self.iterations = int(iterations)
        self.damping = float(damping)
        self.convergence_tol = float(convergence_tol)

    @classmethod
    def potts(cls, schema, cost=1.0, **kwargs):
        """
        Default parameters for ``schema``: unit term weights, default kernels
        and Potts compatibilities with ``cost`` off the diagonal.

        """
        kwargs.setdefault('term_weights', TermWeights.uniform())
        kwargs.setdefault('kernel_semantic', DEFAULT_SEMANTIC_KERNEL)
        kwargs.setdefault('kernel_instance', DEFAULT_INSTANCE_KERNEL)
        kwargs.setdefault('kernel_cross', DEFAULT_CROSS_KERNEL)
        kwargs.setdefault('mu', potts_matrix(schema.num_labels, cost))
        kwargs.setdefault('eta', potts_matrix(schema.eta_size, cost))
        return cls(**kwargs)

    def replace(self, **changes):
        """
        :returns: a copy with the given fields replaced

        """
        fields = dict(
            term_weights=self.term_weights,
            kernel_semantic=self.kernel_semantic,
            kernel_instance=self.kernel_instance,
            kernel_cross=self.kernel_cross,
            mu=self.mu,
            eta=self.eta,
            iterations=self.iterations,
            damping=self.damping,
            convergence_tol=self.convergence_tol,
        )
        unknown = set(changes) - set(fields)
        if unknown:
            raise TypeError('unknown parameter fields: %s' % sorted(unknown))
        fields.update(changes)
        return BcrfParams(**fields)

    def __repr__(self):
        return (
            "<%s weights=%s, iterations=%d, damping=%g>" %
            (self.__class__.__name__, tuple(self.term_weights),
             self.iterations, self.damping)
        )

    def validate(self, schema=None):
        """
        Check every parameter invariant, and the matrix shapes against
        ``schema`` when one is given.

        :raises: :class:`bcrf.exceptions.ConfigError`

        """
        weights = self.term_weights.as_array()
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise ConfigError(
                'term weights must be finite and >= 0, got %s' %
                (tuple(self.term_weights),))
        self.kernel_semantic.validate('semantic kernel')
        self.kernel_instance.validate('instance kernel')
        self.kernel_cross.validate('cross kernel')

        for name, matrix in (('mu', self.mu), ('eta', self.eta)):
            if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
                raise ConfigError('%s must be a square matrix' % name)
            if not np.all(np.isfinite(matrix)):
                raise ConfigError('%s has non-finite entries' % name)
            if np.any(np.diag(matrix) != 0):
                raise ConfigError('%s must have a zero diagonal' % name)
        if np.any(self.eta < 0):
            raise ConfigError('eta must be non-negative')

        if schema is not None:
            if self.mu.shape[0] != schema.num_labels:
                raise ConfigError(
                    'mu is %dx%d but the schema has %d labels' %
                    (self.mu.shape + (schema.num_labels,)))
            if self.eta.shape[0] != schema.eta_size:
                raise ConfigError(
                    'eta is %dx%d but the schema has %d things (+ null)' %
                    (self.eta.shape + (schema.eta_size - 1,)))

        if self.iterations < 0:
            raise ConfigError('iterations must be >= 0')
        if not 0 < self.damping <= 1:
            raise ConfigError('damping must lie in (0, 1]')
        if not self.convergence_tol > 0:
            raise ConfigError('convergence_tol must be > 0')


class PanopticMap(object):
    """
    Per-pixel (semantic id, instance id) assignment. Semantic id -1 marks
    void pixels in ground truth.

    """
    def __init__(self, semantic, instance):
        semantic = _frozen(semantic, np.int64)
        instance = _frozen(instance, np.int64)
        if semantic.ndim != 2 or semantic.shape != instance.shape:
            raise ShapeError(
                'semantic and instance maps must be equal 2-D arrays, got '
                '%s and %s' % (semantic.shape, instance.shape))
        self.semantic = semantic
        self.instance = instance

    def __repr__(self):
        return "<%s %dx%d>" % ((self.__class__.__name__,) + self.shape)

    def __eq__(self, other):
        return (
            isinstance(other, PanopticMap) and
            np.array_equal(self.semantic, other.semantic) and
            np.array_equal(self.instance, other.instance)
        )

    def __ne__(self, other):
        return not self == other

    __hash__ = None

    @property
    def shape(self):
        return self.semantic.shape

    @property
    def height(self):
        return self.semantic.shape[0]

    @property
    def width(self):
        return self.semantic.shape[1]
