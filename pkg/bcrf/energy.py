"""
The six-term joint energy over semantic and instance labelings, and the
pieces shared by inference, training and the exhaustive oracle.

Term order is fixed everywhere:

0. semantic unary
1. semantic pairwise (label compatibility ``mu`` over pixel pairs i < j)
2. instance unary
3. instance pairwise (Iverson bracket on instance ids)
4. cross unary (``f`` at the same pixel)
5. cross pairwise (``f`` between distinct pixels)

"""
from collections import namedtuple

import numpy as np

from bcrf.exceptions import InputError, ShapeError
from bcrf.kernels import GaussianKernel, image_features
from bcrf.types import PotentialField

import logging
log = logging.getLogger(__name__)


__all__ = (
    'UNARY_FLOOR',
    'Messages',
    'EnergyModel',
    'semantic_unary_from_probs',
    'cross_compat',
    'cross_compat_structure',
    'cross_compat_matrix',
    'compat_transform_semantic',
    'compat_transform_instance',
    'total_energy',
)

UNARY_FLOOR = 1e-8
PROBABILITY_TOLERANCE = 1e-4


def semantic_unary_from_probs(probs, floor=UNARY_FLOOR):
    """
    ``-log max(p, floor)`` of per-pixel class probabilities.

    :type probs: :class:`bcrf.types.PotentialField`
    :raises: InputError if any pixel is not a probability vector

    """
    flat = probs.flat
    if np.any(flat < 0):
        raise InputError('class probabilities must be non-negative')
    worst = np.max(np.abs(flat.sum(axis=1) - 1.0))
    if worst > PROBABILITY_TOLERANCE:
        raise InputError(
            'class probabilities must sum to 1 per pixel (off by %g)' % worst)
    return PotentialField(-np.log(np.maximum(probs.data, floor)))


def cross_compat(label, instance_class, eta, schema):
    """
    Penalty for semantic ``label`` co-occurring with an instance of
    ``instance_class`` (None for the null class).

    Zero when a thing label meets its own instance class and when a stuff
    label meets the null class. Otherwise ``eta`` is read at the label's row
    (stuff labels all share the null row) and the class column.

    """
    if instance_class is not None and not schema.is_thing(instance_class):
        raise InputError('instance class %r is not a thing' % instance_class)
    if instance_class is not None and int(label) == int(instance_class):
        return 0.0
    if instance_class is None and schema.is_stuff(label):
        return 0.0
    return float(eta[schema.eta_index(label), schema.eta_index(instance_class)])


def cross_compat_structure(schema):
    """
    Index maps that expand eta into the L x T cross matrix:
    ``F = mask * eta[rows, cols]``.

    :returns: ``(rows, cols, mask)``; ``rows`` has length L, ``cols`` length
        T, ``mask`` is L x T

    """
    rows = np.array([schema.eta_index(l) for l in range(schema.num_labels)])
    classes = [None] + list(schema.instance_classes)
    cols = np.array([schema.eta_index(c) for c in classes])

    mask = np.ones((schema.num_labels, len(classes)))
    for t, c in enumerate(classes):
        if c is None:
            mask[sorted(schema.stuff), t] = 0.0
        else:
            mask[c, t] = 0.0
    return rows, cols, mask


def cross_compat_matrix(schema, eta):
    """
    :returns: the L x T matrix ``F[l, t] = cross_compat(l, class(t))``

    """
    rows, cols, mask = cross_compat_structure(schema)
    return mask * np.asarray(eta)[rows[:, None], cols[None, :]]


def compat_transform_semantic(distribution, mu):
    """
    ``out_i(l) = sum_l' mu(l, l') distribution_i(l')``

    """
    out = distribution.flat @ np.asarray(mu).T
    return PotentialField.from_flat(out, distribution.height,
                                    distribution.width)


def compat_transform_instance(messages):
    """
    ``out_i(t) = sum_{t' != t} messages_i(t')``, the Iverson-bracket
    compatibility. Accepts and returns flat (N, T) arrays.

    """
    messages = np.asarray(messages)
    return messages.sum(axis=1, keepdims=True) - messages


Messages = namedtuple(
    'Messages', 'semantic instance cross_instance cross_semantic')
Messages.__doc__ = """
Filtered marginals of one mean-field state: ``semantic = K_s(q)``,
``instance = K_i(r)``, ``cross_instance = K_c(r)``, ``cross_semantic =
K_c(q)``.
"""


class EnergyModel(object):
    """
    The energy of one image under one parameter set.

    Kernels depend only on the image, so :meth:`with_params` shares them
    between parameter sets.

    """
    def __init__(self, schema, params, features=None, kernels=None):
        """
        :param schema: label sets, including the instance labels
        :type schema: :class:`bcrf.types.LabelSchema`
        :param params: model parameters
        :type params: :class:`bcrf.types.BcrfParams`
        :param features: feature fields of the image; needed unless
            ``kernels`` is given
        :param kernels: ``(semantic, instance, cross)``
            :class:`bcrf.kernels.GaussianKernel` triple

        """
        if kernels is None:
            kernels = (
                GaussianKernel(features, params.kernel_semantic),
                GaussianKernel(features, params.kernel_instance),
                GaussianKernel(features, params.kernel_cross),
            )
        self.schema = schema
        self.params = params
        self.kernels = tuple(kernels)
        self.semantic_kernel, self.instance_kernel, self.cross_kernel = (
            self.kernels)
        self.weights = params.term_weights.as_array()
        self.mu = np.asarray(params.mu)
        self.cross_matrix = cross_compat_matrix(schema, params.eta)

    @classmethod
    def from_image(cls, schema, params, image):
        return cls(schema, params, image_features(image))

    def __repr__(self):
        return (
            "<%s pixels=%d, labels=%d, instance labels=%d>" %
            (self.__class__.__name__, self.num_pixels,
             self.schema.num_labels, self.schema.num_instance_labels)
        )

    @property
    def num_pixels(self):
        return self.semantic_kernel.size

    def with_params(self, params):
        """
        :returns: a model for ``params`` reusing this model's kernels. The
            kernel specs of ``params`` must match.

        """
        return EnergyModel(self.schema, params, kernels=self.kernels)

    def messages(self, q, r):
        """
        Filter flat marginals ``q`` (N, L) and ``r`` (N, T).

        :rtype: :class:`Messages`

        """
        split = r.shape[1]
        cross = self.cross_kernel(np.hstack([r, q]))
        return Messages(
            self.semantic_kernel(q),
            self.instance_kernel(r),
            cross[:, :split],
            cross[:, split:],
        )

    def term_values(self, q, r, unary_semantic, unary_instance,
                    messages=None):
        """
        Unweighted expected value of each energy term under the factorized
        distribution ``(q, r)``. All arrays are flat.

        :returns: array of 6 term values, in term order

        """
        if messages is None:
            messages = self.messages(q, r)
        cross = self.cross_matrix
        return np.array([
            np.sum(q * unary_semantic),
            np.sum(q * (self.semantic_kernel.upper(q) @ self.mu.T)),
            np.sum(r * unary_instance),
            0.5 * np.sum(r * compat_transform_instance(messages.instance)),
            np.sum(q * (r @ cross.T)),
            np.sum(q * (messages.cross_instance @ cross.T)),
        ])

    def expected_energy(self, q, r, unary_semantic, unary_instance,
                        messages=None):
        terms = self.term_values(
            q, r, unary_semantic, unary_instance, messages)
        return float(self.weights @ terms)


def _one_hot(labeling, channels, name):
    labeling = np.asarray(labeling)
    if not np.issubdtype(labeling.dtype, np.integer):
        raise InputError('%s labeling must be integer' % name)
    flat = labeling.ravel()
    if flat.size and (flat.min() < 0 or flat.max() >= channels):
        raise InputError(
            '%s labeling has ids outside [0, %d)' % (name, channels))
    out = np.zeros((flat.size, channels))
    out[np.arange(flat.size), flat] = 1.0
    return out


def total_energy(semantic, instance, unary_semantic, unary_instance,
                 params, schema, features):
    """
    Energy of the joint labeling ``(semantic, instance)``, both H x W
    integer arrays.

    Each term weight multiplies exactly one summand, so zeroing all weights
    but one isolates that term.

    :rtype: float

    """
    semantic = np.asarray(semantic)
    instance = np.asarray(instance)
    expected = (unary_semantic.height, unary_semantic.width)
    if semantic.shape != expected or instance.shape != expected:
        raise ShapeError(
            'labelings are %s and %s but the unaries are %dx%d' %
            ((semantic.shape, instance.shape) + expected))

    model = EnergyModel(schema, params, features)
    q = _one_hot(semantic, schema.num_labels, 'semantic')
    r = _one_hot(instance, schema.num_instance_labels, 'instance')
    return model.expected_energy(
        q, r, unary_semantic.flat, unary_instance.flat)
