"""
Parallel (Jacobi) mean-field inference over the joint semantic/instance
model.

Every update reads the previous semantic and instance marginals, so the two
fields are refreshed together; a damping factor below 1 blends the fresh
softmax with the previous state.

"""
from collections import namedtuple

import numpy as np
from scipy.special import entr, softmax

from bcrf.energy import EnergyModel, compat_transform_instance
from bcrf.exceptions import InvariantError, ShapeError
from bcrf.kernels import image_features
from bcrf.types import MarginalPair

import logging
log = logging.getLogger(__name__)


__all__ = (
    'TraceRecord',
    'InferenceTrace',
    'init_marginals',
    'meanfield_step',
    'run_inference',
    'free_energy',
    'entropy',
    'decode_map',
)


TraceRecord = namedtuple('TraceRecord', 'iter free_energy max_delta')

# what reverse mode needs from one update
Step = namedtuple('Step', 'q r messages s_q s_r')


class InferenceTrace(object):
    """
    Free energy and largest marginal change per iteration. Iteration 0 is
    the initialization and records a change of 0.

    """
    def __init__(self, records=()):
        self._records = []
        for record in records:
            self.append(record)

    def append(self, record):
        if self._records and record.iter <= self._records[-1].iter:
            raise InvariantError(
                'trace iterations must increase (%d after %d)' %
                (record.iter, self._records[-1].iter))
        self._records.append(TraceRecord(*record))

    def __len__(self):
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    def __getitem__(self, index):
        return self._records[index]

    def __repr__(self):
        return (
            "<%s iterations=%d, free_energy=%s>" %
            (self.__class__.__name__, len(self) - 1,
             self._records[-1].free_energy if self._records else None)
        )

    @property
    def free_energies(self):
        return [record.free_energy for record in self._records]

    @property
    def iterations(self):
        return len(self._records) - 1


def init_marginals(unary_semantic, unary_instance):
    """
    Softmax of the negated unaries.

    :rtype: :class:`bcrf.types.MarginalPair`

    """
    return MarginalPair(
        softmax(-unary_semantic.data, axis=2),
        softmax(-unary_instance.data, axis=2),
    )


def _update(model, q, r, phi, psi, messages=None):
    """
    One damped update on flat arrays.

    :returns: ``(q_new, r_new, step)``

    """
    w = model.weights
    cross = model.cross_matrix
    if messages is None:
        messages = model.messages(q, r)

    q_lin = (-w[0] * phi
             - w[1] * (messages.semantic @ model.mu.T)
             - w[4] * (r @ cross.T)
             - w[5] * (messages.cross_instance @ cross.T))
    r_lin = (-w[2] * psi
             - w[3] * compat_transform_instance(messages.instance)
             - w[4] * (q @ cross)
             - w[5] * (messages.cross_semantic @ cross))

    s_q = softmax(q_lin, axis=1)
    s_r = softmax(r_lin, axis=1)
    alpha = model.params.damping
    q_new = alpha * s_q + (1.0 - alpha) * q
    r_new = alpha * s_r + (1.0 - alpha) * r
    return q_new, r_new, Step(q, r, messages, s_q, s_r)


def _check_shapes(unary_semantic, unary_instance, schema, image=None):
    height, width = unary_semantic.height, unary_semantic.width
    if unary_instance.shape[:2] != (height, width):
        raise ShapeError(
            'semantic unaries are %dx%d but instance unaries are %dx%d' %
            (height, width, unary_instance.height, unary_instance.width))
    if unary_semantic.channels != schema.num_labels:
        raise ShapeError(
            'semantic unaries have %d channels, schema has %d labels' %
            (unary_semantic.channels, schema.num_labels))
    if unary_instance.channels != schema.num_instance_labels:
        raise ShapeError(
            'instance unaries have %d channels, schema has %d instance '
            'labels' % (unary_instance.channels, schema.num_instance_labels))
    if image is not None and np.shape(image)[:2] != (height, width):
        raise ShapeError(
            'image is %s but the unaries are %dx%d' %
            (np.shape(image)[:2], height, width))


def _pair(q, r, height, width):
    return MarginalPair(
        q.reshape(height, width, -1), r.reshape(height, width, -1))


def meanfield_step(state, unary_semantic, unary_instance, params, schema,
                   features, model=None):
    """
    One parallel update of both marginal fields from ``state``.

    :rtype: :class:`bcrf.types.MarginalPair`

    """
    _check_shapes(unary_semantic, unary_instance, schema)
    if model is None:
        model = EnergyModel(schema, params, features)
    q_new, r_new, _ = _update(
        model, state.q.flat, state.r.flat,
        unary_semantic.flat, unary_instance.flat)
    return _pair(q_new, r_new, state.height, state.width)


def entropy(state):
    """
    Entropy of the factorized distribution, ``H(q) + H(r)``.

    """
    return float(entr(state.q.data).sum() + entr(state.r.data).sum())


def _free_energy(model, q, r, phi, psi, messages=None):
    energy = model.expected_energy(q, r, phi, psi, messages)
    return energy - float(entr(q).sum() + entr(r).sum())


def free_energy(state, unary_semantic, unary_instance, params, schema,
                features, model=None):
    """
    Expected energy under ``state`` minus its entropy. Equals
    ``KL(state || p) - log Z``.

    """
    if model is None:
        model = EnergyModel(schema, params, features)
    return _free_energy(
        model, state.q.flat, state.r.flat,
        unary_semantic.flat, unary_instance.flat)


def run_inference(unary_semantic, unary_instance, image, params, schema,
                  tape=None, early_stop=True, model=None):
    """
    Iterate mean-field updates from :func:`init_marginals` for at most
    ``params.iterations`` steps, stopping early once the largest marginal
    change falls below ``params.convergence_tol``.

    :param unary_semantic: H x W x L semantic unaries
    :param unary_instance: H x W x T instance unaries
    :param image: H x W x 3 RGB image
    :param params: model parameters
    :param schema: label sets, including the instance labels
    :param tape: if given, records every step for reverse mode (see
        :class:`bcrf.diff.Tape`)
    :param early_stop: stop on convergence
    :type early_stop: bool
    :param model: prebuilt :class:`bcrf.energy.EnergyModel` whose kernels
        are reused
    :returns: ``(marginals, trace)``

    """
    _check_shapes(unary_semantic, unary_instance, schema, image)
    if model is None:
        model = EnergyModel(schema, params, image_features(image))
    elif model.params is not params:
        model = model.with_params(params)

    height, width = unary_semantic.height, unary_semantic.width
    phi, psi = unary_semantic.flat, unary_instance.flat
    initial = init_marginals(unary_semantic, unary_instance)
    q, r = initial.q.flat, initial.r.flat

    trace = InferenceTrace()
    messages = model.messages(q, r)
    trace.append(TraceRecord(
        0, _free_energy(model, q, r, phi, psi, messages), 0.0))
    if tape is not None:
        tape.begin(model, phi, psi, q, r, height, width)

    stopped_early = False
    for iteration in range(1, params.iterations + 1):
        q_new, r_new, step = _update(model, q, r, phi, psi, messages)
        delta = max(np.max(np.abs(q_new - q)), np.max(np.abs(r_new - r)))
        if tape is not None:
            tape.record(step)
        q, r = q_new, r_new

        messages = model.messages(q, r)
        energy = _free_energy(model, q, r, phi, psi, messages)
        if not np.isfinite(energy):
            raise InvariantError(
                'free energy is not finite at iteration %d' % iteration)
        trace.append(TraceRecord(iteration, energy, float(delta)))
        log.debug('iteration %d: free energy %.6f, max change %.3g',
                  iteration, energy, delta)

        if early_stop and delta < params.convergence_tol:
            stopped_early = iteration < params.iterations
            break

    if tape is not None:
        tape.finish(q, r, stopped_early)
    log.info('inference finished after %d iterations, free energy %.6f',
             trace.iterations, trace[-1].free_energy)
    return _pair(q, r, height, width), trace


def decode_map(state):
    """
    Per-pixel argmax of both marginal fields, ties to the lowest index.

    :returns: ``(semantic, instance)`` H x W integer arrays

    """
    return (np.argmax(state.q.data, axis=2),
            np.argmax(state.r.data, axis=2))
