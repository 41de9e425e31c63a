"""
Exhaustive enumeration of every joint labeling of a tiny image. Used to
check inference against exact MAP labelings, marginals and the partition
function.

"""
import itertools

import numpy as np
from scipy.special import logsumexp

from bcrf.energy import EnergyModel
from bcrf.exceptions import SizeGuardError
from bcrf.types import MarginalPair

import logging
log = logging.getLogger(__name__)


__all__ = (
    'MAX_ASSIGNMENTS',
    'Enumeration',
    'enumerate_map',
    'exact_marginals',
    'exact_kl',
)

MAX_ASSIGNMENTS = 10 ** 7


def _labelings(channels, num_pixels):
    """
    Every labeling of ``num_pixels`` pixels, in lexicographic order.

    """
    return np.array(
        list(itertools.product(range(channels), repeat=num_pixels)),
        dtype=np.int64,
    ).reshape(-1, num_pixels)


class Enumeration(object):
    """
    The energy of every joint labeling, as a matrix indexed by semantic
    labeling (rows) and instance labeling (columns).

    """
    def __init__(self, unary_semantic, unary_instance, params, schema,
                 features):
        num_pixels = unary_semantic.num_pixels
        num_labels = schema.num_labels
        num_instance_labels = schema.num_instance_labels
        total = (num_labels ** num_pixels) * (num_instance_labels ** num_pixels)
        if total > MAX_ASSIGNMENTS:
            raise SizeGuardError(
                '%d^%d x %d^%d = %d joint labelings exceed the limit of %d' %
                (num_labels, num_pixels, num_instance_labels, num_pixels,
                 total, MAX_ASSIGNMENTS))

        self.height = unary_semantic.height
        self.width = unary_semantic.width
        self.semantic = _labelings(num_labels, num_pixels)
        self.instance = _labelings(num_instance_labels, num_pixels)
        log.debug('enumerating %d x %d joint labelings',
                  len(self.semantic), len(self.instance))

        model = EnergyModel(schema, params, features)
        self.energies = self._energies(
            model, unary_semantic.flat, unary_instance.flat)
        self.log_partition = float(logsumexp(-self.energies))

    def _energies(self, model, phi, psi):
        w = model.weights
        xs, zs = self.semantic, self.instance
        num_pixels = xs.shape[1]
        pixels = np.arange(num_pixels)
        semantic_kernel = model.semantic_kernel.matrix()
        instance_kernel = model.instance_kernel.matrix()
        # the cross unary pairs each pixel with itself
        coupling = (w[5] * model.cross_kernel.matrix() +
                    w[4] * np.eye(num_pixels))
        cross = model.cross_matrix

        semantic = w[0] * phi[pixels, xs].sum(axis=1)
        instance = w[2] * psi[pixels, zs].sum(axis=1)
        joint = np.zeros((len(xs), len(zs)))
        for i in range(num_pixels):
            for j in range(num_pixels):
                if i < j:
                    semantic += (w[1] * semantic_kernel[i, j] *
                                 model.mu[xs[:, i], xs[:, j]])
                    instance += (w[3] * instance_kernel[i, j] *
                                 (zs[:, i] != zs[:, j]))
                if coupling[i, j] != 0:
                    joint += (coupling[i, j] *
                              cross[xs[:, i][:, None], zs[:, j][None, :]])
        return semantic[:, None] + instance[None, :] + joint

    def labeling(self, flat_index):
        row, col = np.unravel_index(flat_index, self.energies.shape)
        shape = (self.height, self.width)
        return (self.semantic[row].reshape(shape),
                self.instance[col].reshape(shape))

    def probabilities(self):
        return np.exp(-self.energies - self.log_partition)


def enumerate_map(unary_semantic, unary_instance, params, schema, features):
    """
    The minimum-energy joint labeling. Ties go to the lexicographically
    first ``(semantic, instance)`` assignment.

    :returns: ``(semantic, instance, energy)``
    :raises: SizeGuardError above :data:`MAX_ASSIGNMENTS` joint labelings

    """
    enumeration = Enumeration(
        unary_semantic, unary_instance, params, schema, features)
    best = int(np.argmin(enumeration.energies))
    semantic, instance = enumeration.labeling(best)
    return semantic, instance, float(enumeration.energies.flat[best])


def exact_marginals(unary_semantic, unary_instance, params, schema,
                    features):
    """
    Per-pixel marginals of the exact Gibbs distribution.

    :returns: ``(marginals, log_partition)``

    """
    enumeration = Enumeration(
        unary_semantic, unary_instance, params, schema, features)
    probabilities = enumeration.probabilities()
    semantic_mass = probabilities.sum(axis=1)
    instance_mass = probabilities.sum(axis=0)

    num_pixels = unary_semantic.num_pixels
    q = np.stack([
        np.bincount(enumeration.semantic[:, i], weights=semantic_mass,
                    minlength=schema.num_labels)
        for i in range(num_pixels)
    ])
    r = np.stack([
        np.bincount(enumeration.instance[:, i], weights=instance_mass,
                    minlength=schema.num_instance_labels)
        for i in range(num_pixels)
    ])
    shape = (unary_semantic.height, unary_semantic.width)
    return (MarginalPair(q.reshape(shape + (-1,)), r.reshape(shape + (-1,))),
            enumeration.log_partition)


def exact_kl(state, unary_semantic, unary_instance, params, schema,
             features):
    """
    ``KL(q || p)`` between the factorized ``state`` and the exact Gibbs
    distribution ``p``.

    """
    enumeration = Enumeration(
        unary_semantic, unary_instance, params, schema, features)
    pixels = np.arange(unary_semantic.num_pixels)
    with np.errstate(divide='ignore'):
        log_q = np.log(state.q.flat)
        log_r = np.log(state.r.flat)
    semantic = log_q[pixels, enumeration.semantic].sum(axis=1)
    instance = log_r[pixels, enumeration.instance].sum(axis=1)
    log_factorized = semantic[:, None] + instance[None, :]

    support = np.isfinite(log_factorized)
    log_p = -enumeration.energies - enumeration.log_partition
    factorized = np.exp(log_factorized[support])
    return float(np.sum(
        factorized * (log_factorized[support] - log_p[support])))
