"""
Turning detector output into instance unaries, and marginals into a
panoptic labeling.

"""
from collections import namedtuple

import numpy as np

from bcrf.energy import cross_compat_structure
from bcrf.exceptions import InputError, SchemaError, ShapeError
from bcrf.types import PanopticMap, PotentialField

import logging
log = logging.getLogger(__name__)


__all__ = (
    'JOINT',
    'PASTE',
    'NO_INSTANCE_FLOOR',
    'Detection',
    'instance_unary_from_detections',
    'fuse_panoptic',
    'colorize',
)

JOINT = 'joint'
PASTE = 'paste'

NO_INSTANCE_FLOOR = 0.05
# detections that do not cover a pixel keep this fraction of the floor
UNCOVERED_FRACTION = 1e-3
LOG_FLOOR = 1e-8

Detection = namedtuple('Detection', 'label score mask')


def instance_unary_from_detections(detections, height, width,
                                   no_instance_floor=NO_INSTANCE_FLOOR):
    """
    Instance unaries from scored detection masks.

    At each pixel, every detection covering it contributes its score and
    ``inst0`` gets ``no_instance_floor``; a pixel covered by nothing gives
    ``inst0`` a score of 1. Detections that miss the pixel keep a tiny
    fraction of the floor. Scores are normalized per pixel and turned into
    negative log probabilities.

    :param detections: detector output; detection ``k`` becomes instance
        label ``k + 1``
    :type detections: sequence of :class:`Detection`
    :returns: ``(unaries, instance_classes)``

    """
    if not 0 < no_instance_floor <= 1:
        raise InputError('no-instance floor must lie in (0, 1]')
    scores = np.empty((height, width, len(detections) + 1))
    covered = np.zeros((height, width), dtype=bool)
    uncovered_score = no_instance_floor * UNCOVERED_FRACTION

    for index, detection in enumerate(detections, 1):
        mask = np.asarray(detection.mask, dtype=bool)
        if mask.shape != (height, width):
            raise ShapeError(
                'detection %d has a %s mask, expected %dx%d' %
                (index, mask.shape, height, width))
        if not 0 < detection.score <= 1:
            raise InputError(
                'detection %d has score %r outside (0, 1]' %
                (index, detection.score))
        scores[..., index] = np.where(mask, detection.score, uncovered_score)
        covered |= mask

    scores[..., 0] = np.where(covered, no_instance_floor, 1.0)
    probabilities = scores / scores.sum(axis=2, keepdims=True)
    classes = tuple(int(detection.label) for detection in detections)
    log.debug('built instance unaries for %d detections', len(detections))
    return PotentialField(-np.log(probabilities)), classes


def _fuse_joint(q, r, schema):
    _, _, mask = cross_compat_structure(schema)
    labels, instances = np.nonzero(mask == 0)
    if not len(labels):
        raise SchemaError('no compatible (label, instance) pair exists')

    log_q = np.log(np.maximum(q, LOG_FLOOR))
    log_r = np.log(np.maximum(r, LOG_FLOOR))
    # pairs come out of nonzero in row-major order, so argmax breaks ties
    # towards the lowest label, then the lowest instance
    best = np.argmax(log_q[:, labels] + log_r[:, instances], axis=1)
    return labels[best], instances[best]


def _fuse_paste(q, r, schema, height, width, overlap_threshold, min_area):
    predicted = np.argmax(r, axis=1)
    semantic = np.full(height * width, -1, dtype=np.int64)
    instance = np.zeros(height * width, dtype=np.int64)
    claimed = np.zeros(height * width, dtype=bool)

    confidence = []
    for t in range(1, r.shape[1]):
        mask = predicted == t
        if mask.any():
            confidence.append((-float(r[mask, t].mean()), t))
    for _, t in sorted(confidence):
        mask = predicted == t
        area = np.count_nonzero(mask)
        if area < min_area:
            continue
        free = mask & ~claimed
        if np.count_nonzero(free) / float(area) < overlap_threshold:
            continue
        semantic[free] = schema.class_of(t)
        instance[free] = t
        claimed |= free

    stuff = np.array(sorted(schema.stuff), dtype=np.int64)
    if len(stuff):
        fill = stuff[np.argmax(q[:, stuff], axis=1)]
    else:
        fill = np.argmax(q, axis=1)
    semantic[~claimed] = fill[~claimed]
    return semantic, instance


def fuse_panoptic(state, schema, mode=JOINT, overlap_threshold=0.5,
                  min_area=16):
    """
    Decode marginals into one panoptic labeling.

    ``'joint'`` picks, per pixel, the compatible (label, instance) pair with
    the largest ``log Q(label) + log R(instance)``. ``'paste'`` pastes
    instance masks in order of decreasing confidence, skipping masks smaller
    than ``min_area`` or mostly covered already, and fills the rest with the
    most likely stuff label.

    :type state: :class:`bcrf.types.MarginalPair`
    :rtype: :class:`bcrf.types.PanopticMap`

    """
    height, width = state.height, state.width
    q, r = state.q.flat, state.r.flat
    if q.shape[1] != schema.num_labels or \
            r.shape[1] != schema.num_instance_labels:
        raise ShapeError(
            'marginals have %d/%d channels, schema expects %d/%d' %
            (q.shape[1], r.shape[1], schema.num_labels,
             schema.num_instance_labels))

    if mode == JOINT:
        semantic, instance = _fuse_joint(q, r, schema)
    elif mode == PASTE:
        semantic, instance = _fuse_paste(
            q, r, schema, height, width, overlap_threshold, min_area)
    else:
        raise InputError("unknown fusion mode '%s'" % mode)
    return PanopticMap(
        semantic.reshape(height, width), instance.reshape(height, width))


def _channel(values, multiplier, offset):
    return ((values * multiplier + offset) % 200 + 40).astype(np.uint8)


def colorize(panoptic):
    """
    A deterministic RGB preview: one color per (label, instance) pair,
    black for void.

    :rtype: H x W x 3 uint8 array

    """
    semantic = panoptic.semantic
    instance = panoptic.instance
    image = np.stack([
        _channel(semantic * 7 + instance, 67, 11),
        _channel(semantic * 13 + instance * 3, 101, 29),
        _channel(semantic * 5 + instance * 11, 37, 83),
    ], axis=-1)
    image[semantic < 0] = 0
    return image
