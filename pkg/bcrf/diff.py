"""
Reverse-mode differentiation through unrolled mean-field inference,
training losses, finite-difference gradient checking and a small
gradient-descent parameter fitter.

Pass a :class:`Tape` to :func:`bcrf.inference.run_inference` to record
the forward pass, then hand it to :func:`backward` or
:func:`loss_and_gradients`.

"""
from collections import namedtuple

import numpy as np

from bcrf.energy import EnergyModel, cross_compat_structure
from bcrf.exceptions import InputError, ShapeError, TrainingError
from bcrf.inference import run_inference
from bcrf.kernels import image_features
from bcrf.types import PotentialField, TermWeights

import logging
log = logging.getLogger(__name__)


__all__ = (
    'LOSS_FLOOR',
    'GRADCHECK_STEP',
    'GRADCHECK_TOLERANCE',
    'Tape',
    'GradientBundle',
    'GradCheckReport',
    'FitRecord',
    'TrainingSample',
    'loss_semantic',
    'match_instances',
    'loss_instance_matched',
    'backward',
    'loss_and_gradients',
    'grad_check',
    'fit_parameters',
    'project_params',
)

LOSS_FLOOR = 1e-8
GRADCHECK_STEP = 1e-4
GRADCHECK_TOLERANCE = 1e-4
GRADCHECK_ABSOLUTE = 1e-3
GRADIENT_GROUPS = (
    'unary_semantic', 'unary_instance', 'term_weights', 'mu', 'eta')


GradientBundle = namedtuple('GradientBundle', GRADIENT_GROUPS)
GradientBundle.__doc__ = """
Gradients of a scalar loss. Unary gradients are H x W x C arrays,
``term_weights`` has 6 entries in term order, ``mu`` and ``eta`` mirror the
parameter matrices.
"""

FitRecord = namedtuple('FitRecord', 'step loss')

TrainingSample = namedtuple(
    'TrainingSample',
    'image unary_semantic unary_instance schema gt_semantic gt_instances')


class Tape(object):
    """
    Everything reverse mode needs from one forward pass: the model, the
    unaries, the initial marginals and one record per update.

    """
    def __init__(self):
        self.model = None
        self.unary_semantic = None
        self.unary_instance = None
        self.initial = None
        self.steps = []
        self.q = None
        self.r = None
        self.stopped_early = False
        self.height = None
        self.width = None

    def __repr__(self):
        return "<%s steps=%d>" % (self.__class__.__name__, len(self.steps))

    def begin(self, model, unary_semantic, unary_instance, q, r, height,
              width):
        self.model = model
        self.height = height
        self.width = width
        self.unary_semantic = unary_semantic
        self.unary_instance = unary_instance
        self.initial = (q, r)
        self.steps = []

    def record(self, step):
        self.steps.append(step)

    def finish(self, q, r, stopped_early):
        self.q = q
        self.r = r
        self.stopped_early = stopped_early

    def check(self):
        if self.model is None or self.q is None:
            raise TrainingError('tape holds no finished forward pass')
        if self.stopped_early:
            raise TrainingError(
                'forward pass stopped early after %d of %d iterations; '
                'run inference with early_stop=False to differentiate' %
                (len(self.steps), self.model.params.iterations))


def _cross_entropy(probs, target):
    """
    Mean ``-log max(p, floor)`` of the target channel over pixels with a
    non-negative target.

    :returns: ``(loss, gradient with respect to probs)``

    """
    valid = target >= 0
    count = int(np.count_nonzero(valid))
    grad = np.zeros_like(probs)
    if count == 0:
        return 0.0, grad
    rows = np.flatnonzero(valid)
    cols = target[valid]
    picked = probs[rows, cols]
    loss = -np.sum(np.log(np.maximum(picked, LOSS_FLOOR))) / count
    grad[rows, cols] = np.where(
        picked > LOSS_FLOOR, -1.0 / (count * np.maximum(picked, LOSS_FLOOR)),
        0.0)
    return float(loss), grad


def _check_target(target, field, name):
    target = np.asarray(target)
    if target.shape != (field.height, field.width):
        raise ShapeError(
            '%s ground truth is %s but the marginals are %dx%d' %
            (name, target.shape, field.height, field.width))
    if np.any(target >= field.channels):
        raise InputError(
            '%s ground truth has ids >= %d' % (name, field.channels))
    return target.ravel()


def loss_semantic(q, gt_semantic):
    """
    Mean pixelwise cross entropy of semantic marginals ``q`` against
    ``gt_semantic``. Void pixels (-1) are excluded from the mean.

    :type q: :class:`bcrf.types.PotentialField`

    """
    target = _check_target(gt_semantic, q, 'semantic')
    return _cross_entropy(q.flat, target)[0]


def match_instances(r, gt_instances):
    """
    Greedy IoU matching between the argmax masks of instance marginals
    ``r`` and ground-truth instance ids (0 for no instance, negative for
    void).

    Candidate pairs are visited by decreasing IoU, then predicted channel,
    then ground-truth id; each side is used at most once.

    :returns: H x W array of target instance channels; unmatched
        ground-truth pixels target ``inst0`` and void pixels -1

    """
    gt = np.asarray(gt_instances)
    if gt.shape != (r.height, r.width):
        raise ShapeError(
            'instance ground truth is %s but the marginals are %dx%d' %
            (gt.shape, r.height, r.width))
    gt = gt.ravel()
    predicted = np.argmax(r.flat, axis=1)

    candidates = []
    for g in np.unique(gt[gt > 0]):
        gt_mask = gt == g
        for t in range(1, r.channels):
            pred_mask = predicted == t
            inter = np.count_nonzero(gt_mask & pred_mask)
            if inter:
                iou = inter / float(np.count_nonzero(gt_mask | pred_mask))
                candidates.append((-iou, t, int(g)))
    candidates.sort()

    target = np.zeros_like(gt)
    target[gt < 0] = -1
    used_pred, used_gt = set(), set()
    for _, t, g in candidates:
        if t in used_pred or g in used_gt:
            continue
        used_pred.add(t)
        used_gt.add(g)
        target[gt == g] = t
    return target.reshape(r.height, r.width)


def loss_instance_matched(r, gt_instances, target=None):
    """
    Cross entropy of instance marginals against matched ground truth.

    :param target: a fixed matching from :func:`match_instances`; computed
        from ``r`` when omitted

    """
    if target is None:
        target = match_instances(r, gt_instances)
    target = _check_target(target, r, 'instance')
    return _cross_entropy(r.flat, target)[0]


def _softmax_backward(s, grad):
    return s * (grad - np.sum(grad * s, axis=1, keepdims=True))


def backward(tape, grad_q, grad_r):
    """
    Propagate gradients with respect to the final marginals back to the
    unaries and parameters.

    :param grad_q: dLoss/dq, flat (N, L)
    :param grad_r: dLoss/dr, flat (N, T)
    :rtype: :class:`GradientBundle`
    :raises: TrainingError if the forward pass stopped early

    """
    tape.check()
    model = tape.model
    w = model.weights
    mu = model.mu
    cross = model.cross_matrix
    alpha = model.params.damping

    gq = np.array(grad_q, dtype=np.float64)
    gr = np.array(grad_r, dtype=np.float64)
    g_phi = np.zeros_like(tape.unary_semantic)
    g_psi = np.zeros_like(tape.unary_instance)
    g_w = np.zeros(6)
    g_mu = np.zeros_like(mu)
    g_cross = np.zeros_like(cross)

    for step in reversed(tape.steps):
        q, r, m = step.q, step.r, step.messages

        g_ql = _softmax_backward(step.s_q, alpha * gq)
        g_rl = _softmax_backward(step.s_r, alpha * gr)
        gq = (1.0 - alpha) * gq
        gr = (1.0 - alpha) * gr

        # semantic update
        semantic_compat = m.semantic @ mu.T
        g_phi -= w[0] * g_ql
        g_w[0] -= np.sum(g_ql * tape.unary_semantic)
        g_w[1] -= np.sum(g_ql * semantic_compat)
        g_mu -= w[1] * (g_ql.T @ m.semantic)
        g_a = -w[1] * (g_ql @ mu)
        g_w[4] -= np.sum(g_ql * (r @ cross.T))
        gr -= w[4] * (g_ql @ cross)
        g_cross -= w[4] * (g_ql.T @ r)
        g_w[5] -= np.sum(g_ql * (m.cross_instance @ cross.T))
        g_cr = -w[5] * (g_ql @ cross)
        g_cross -= w[5] * (g_ql.T @ m.cross_instance)

        # instance update
        g_psi -= w[2] * g_rl
        g_w[2] -= np.sum(g_rl * tape.unary_instance)
        iverson = m.instance.sum(axis=1, keepdims=True) - m.instance
        g_w[3] -= np.sum(g_rl * iverson)
        g_iverson = -w[3] * g_rl
        g_b = g_iverson.sum(axis=1, keepdims=True) - g_iverson
        g_w[4] -= np.sum(g_rl * (q @ cross))
        gq -= w[4] * (g_rl @ cross.T)
        g_cross -= w[4] * (q.T @ g_rl)
        g_w[5] -= np.sum(g_rl * (m.cross_semantic @ cross))
        g_cq = -w[5] * (g_rl @ cross.T)
        g_cross -= w[5] * (m.cross_semantic.T @ g_rl)

        # kernels are symmetric, so they are their own adjoints
        cross_adjoint = model.cross_kernel(np.hstack([g_cr, g_cq]))
        split = g_cr.shape[1]
        gq += model.semantic_kernel(g_a) + cross_adjoint[:, split:]
        gr += model.instance_kernel(g_b) + cross_adjoint[:, :split]

    q0, r0 = tape.initial
    g_phi -= _softmax_backward(q0, gq)
    g_psi -= _softmax_backward(r0, gr)

    rows, cols, mask = cross_compat_structure(model.schema)
    g_eta = np.zeros_like(model.params.eta)
    np.add.at(
        g_eta,
        (np.broadcast_to(rows[:, None], mask.shape),
         np.broadcast_to(cols[None, :], mask.shape)),
        g_cross * mask,
    )

    return GradientBundle(
        g_phi.reshape(tape.height, tape.width, -1),
        g_psi.reshape(tape.height, tape.width, -1),
        g_w,
        g_mu,
        g_eta,
    )


def _targets(tape, gt_semantic, gt_instances, instance_target=None):
    q = PotentialField.from_flat(tape.q, tape.height, tape.width)
    r = PotentialField.from_flat(tape.r, tape.height, tape.width)
    semantic = _check_target(gt_semantic, q, 'semantic')
    if instance_target is None:
        instance_target = match_instances(r, gt_instances)
    instance = _check_target(instance_target, r, 'instance')
    return semantic, instance


def loss_and_gradients(tape, gt_semantic, gt_instances,
                       instance_target=None):
    """
    Semantic plus matched instance cross entropy of the taped forward pass,
    and its gradients.

    :returns: ``(loss, gradients)``

    """
    tape.check()
    semantic, instance = _targets(
        tape, gt_semantic, gt_instances, instance_target)
    loss_s, grad_q = _cross_entropy(tape.q, semantic)
    loss_i, grad_r = _cross_entropy(tape.r, instance)
    return loss_s + loss_i, backward(tape, grad_q, grad_r)


def _forward(sample, params, model, instance_target=None):
    tape = Tape()
    run_inference(
        sample.unary_semantic, sample.unary_instance, sample.image, params,
        sample.schema, tape=tape, early_stop=False, model=model)
    return tape


class GradCheckReport(object):
    """
    Largest relative error between analytic and central-difference
    gradients, per parameter group.

    """
    def __init__(self, errors, step, tolerance=GRADCHECK_TOLERANCE):
        self.errors = dict(errors)
        self.step = step
        self.tolerance = tolerance

    def __repr__(self):
        return "<%s max_error=%.3g, passed=%s>" % (
            self.__class__.__name__, self.max_error, self.passed)

    @property
    def max_error(self):
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self):
        return self.max_error < self.tolerance


def _relative_error(analytic, numeric):
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)),
                       GRADCHECK_ABSOLUTE)
    return np.abs(analytic - numeric) / scale


def numeric_gradients(sample, params, step=GRADCHECK_STEP,
                      instance_target=None):
    """
    Central-difference gradients of the training loss, with the instance
    matching frozen at ``instance_target``.

    :rtype: :class:`GradientBundle`

    """
    model = EnergyModel(sample.schema, params, image_features(sample.image))

    def loss_at(current, phi=None, psi=None):
        perturbed = sample
        if phi is not None:
            perturbed = perturbed._replace(unary_semantic=phi)
        if psi is not None:
            perturbed = perturbed._replace(unary_instance=psi)
        tape = _forward(perturbed, current, model.with_params(current))
        semantic, instance = _targets(
            tape, sample.gt_semantic, sample.gt_instances, instance_target)
        return (_cross_entropy(tape.q, semantic)[0] +
                _cross_entropy(tape.r, instance)[0])

    def central(values, evaluate):
        grad = np.zeros(values.shape)
        for index in np.ndindex(*values.shape):
            plus = values.copy()
            minus = values.copy()
            plus[index] += step
            minus[index] -= step
            grad[index] = (evaluate(plus) - evaluate(minus)) / (2 * step)
        return grad

    weights = params.term_weights.as_array()
    return GradientBundle(
        central(sample.unary_semantic.data,
                lambda v: loss_at(params, phi=PotentialField(v))),
        central(sample.unary_instance.data,
                lambda v: loss_at(params, psi=PotentialField(v))),
        central(weights,
                lambda v: loss_at(params.replace(term_weights=TermWeights(*v)))),
        central(params.mu, lambda v: loss_at(params.replace(mu=v))),
        central(params.eta, lambda v: loss_at(params.replace(eta=v))),
    )


def grad_check(sample=None, params=None, seed=0, height=4, width=4,
               iterations=5, step=GRADCHECK_STEP):
    """
    Compare analytic gradients against central differences.

    With no ``sample``, a random instance of ``height`` x ``width`` pixels
    and random parameters are drawn from ``seed``. The instance matching is
    computed once at the unperturbed point and held fixed.

    Per-entry errors are ``|a - n| / max(|a|, |n|, 1e-3)``.

    :rtype: :class:`GradCheckReport`

    """
    from bcrf import synthetic

    rng = np.random.default_rng(seed)
    if sample is None:
        sample = synthetic.random_sample(rng, height, width)
    if params is None:
        params = synthetic.random_params(
            rng, sample.schema, iterations=iterations)

    model = EnergyModel(sample.schema, params, image_features(sample.image))
    tape = _forward(sample, params, model)
    r = PotentialField.from_flat(tape.r, tape.height, tape.width)
    target = match_instances(r, sample.gt_instances)
    _, analytic = loss_and_gradients(
        tape, sample.gt_semantic, sample.gt_instances, target)
    numeric = numeric_gradients(sample, params, step, target)

    errors = {}
    for name in GRADIENT_GROUPS:
        a = np.asarray(getattr(analytic, name))
        n = np.asarray(getattr(numeric, name))
        errors[name] = float(np.max(_relative_error(a, n))) if a.size else 0.0
    report = GradCheckReport(errors, step)
    log.info('gradient check (seed %d): %s', seed, report)
    return report


def project_params(params):
    """
    Clamp term weights and eta to be non-negative and zero the diagonals
    of mu and eta.

    """
    weights = np.maximum(params.term_weights.as_array(), 0.0)
    mu = np.array(params.mu)
    np.fill_diagonal(mu, 0.0)
    eta = np.maximum(np.array(params.eta), 0.0)
    np.fill_diagonal(eta, 0.0)
    return params.replace(term_weights=TermWeights(*weights), mu=mu, eta=eta)


def fit_parameters(dataset, params, steps, learning_rate):
    """
    Batch gradient descent on term weights, mu and eta, averaging the
    training loss over ``dataset``. Kernels, iterations and damping stay
    fixed; every forward pass runs all iterations.

    :param dataset: training samples
    :type dataset: sequence of :class:`TrainingSample`
    :param params: starting parameters
    :param steps: number of descent steps
    :param learning_rate: step size
    :returns: ``(params, trace)``; the trace holds the loss before each step
        and after the last
    :raises: TrainingError if the loss stops being finite; the error carries
        the trace so far

    """
    dataset = list(dataset)
    if not dataset:
        raise InputError('cannot fit on an empty dataset')
    models = [
        EnergyModel(sample.schema, params, image_features(sample.image))
        for sample in dataset
    ]

    trace = []
    for step in range(steps + 1):
        total = 0.0
        g_w = np.zeros(6)
        g_mu = np.zeros_like(params.mu)
        g_eta = np.zeros_like(params.eta)
        for sample, model in zip(dataset, models):
            tape = _forward(sample, params, model.with_params(params))
            loss, grads = loss_and_gradients(
                tape, sample.gt_semantic, sample.gt_instances)
            total += loss
            g_w += grads.term_weights
            g_mu += grads.mu
            g_eta += grads.eta

        loss = total / len(dataset)
        if not np.isfinite(loss):
            raise TrainingError(
                'training loss is not finite at step %d' % step, trace)
        trace.append(FitRecord(step, loss))
        log.info('fit step %d: loss %.6f', step, loss)
        if step == steps:
            break

        scale = learning_rate / len(dataset)
        params = project_params(params.replace(
            term_weights=TermWeights(
                *(params.term_weights.as_array() - scale * g_w)),
            mu=params.mu - scale * g_mu,
            eta=params.eta - scale * g_eta,
        ))
    return params, trace
