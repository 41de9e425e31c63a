"""
Panoptic quality.

Segments are the sets of pixels sharing a (label, instance) key; stuff
labels ignore the instance id. Predicted and ground-truth segments of
the same label match when their IoU exceeds 0.5, which makes the matching
unique. Void ground-truth pixels are dropped from both maps.

"""
from collections import namedtuple
from functools import reduce
import multiprocessing
import operator

import numpy as np

from bcrf.exceptions import InputError, InvariantError, ShapeError

import logging
log = logging.getLogger(__name__)


__all__ = (
    'VOID',
    'IOU_THRESHOLD',
    'ClassQuality',
    'AggregateQuality',
    'PanopticReport',
    'PanopticStats',
    'panoptic_stats',
    'pq_metrics',
    'evaluate_many',
)

VOID = -1
IOU_THRESHOLD = 0.5

ClassQuality = namedtuple('ClassQuality', 'pq sq rq tp fp fn')
AggregateQuality = namedtuple('AggregateQuality', 'pq sq rq classes')
PanopticReport = namedtuple('PanopticReport', 'per_class aggregates')


def _quality(iou_sum, tp, fp, fn):
    sq = iou_sum / tp if tp else 0.0
    denominator = tp + 0.5 * fp + 0.5 * fn
    rq = tp / denominator if denominator else 0.0
    return ClassQuality(sq * rq, sq, rq, tp, fp, fn)


class PanopticStats(object):
    """
    Per-class matching counts: summed IoU of matches, true positives, false
    positives and false negatives, plus which classes occur in ground truth.

    Adding two instances merges their counts; the sum is associative, so
    images can be scored independently and combined in any grouping.

    """
    def __init__(self, counts=None, gt_classes=()):
        self.counts = dict(
            (int(label), tuple(values))
            for label, values in (counts or {}).items())
        self.gt_classes = frozenset(int(label) for label in gt_classes)

    def __add__(self, other):
        counts = dict(self.counts)
        for label, values in other.counts.items():
            if label in counts:
                counts[label] = tuple(
                    a + b for a, b in zip(counts[label], values))
            else:
                counts[label] = values
        return PanopticStats(counts, self.gt_classes | other.gt_classes)

    def __eq__(self, other):
        return (isinstance(other, PanopticStats) and
                self.counts == other.counts and
                self.gt_classes == other.gt_classes)

    def __ne__(self, other):
        return not self == other

    __hash__ = None

    def __repr__(self):
        return "<%s classes=%s>" % (
            self.__class__.__name__, sorted(self.counts))

    def quality(self, label):
        return _quality(*self.counts.get(int(label), (0.0, 0, 0, 0)))

    def report(self, schema):
        """
        Per-class quality for every class seen in either map, and averages
        over ground-truth classes: ``'All'``, ``'Things'`` and ``'Stuff'``.

        :rtype: :class:`PanopticReport`

        """
        per_class = dict(
            (label, self.quality(label)) for label in sorted(self.counts))
        groups = (
            ('All', lambda label: True),
            ('Things', schema.is_thing),
            ('Stuff', schema.is_stuff),
        )
        aggregates = {}
        for name, member in groups:
            present = [per_class[label] for label in sorted(self.gt_classes)
                       if member(label)]
            if present:
                aggregates[name] = AggregateQuality(
                    float(np.mean([c.pq for c in present])),
                    float(np.mean([c.sq for c in present])),
                    float(np.mean([c.rq for c in present])),
                    len(present),
                )
            else:
                aggregates[name] = AggregateQuality(0.0, 0.0, 0.0, 0)
        return PanopticReport(per_class, aggregates)


def _segment_keys(panoptic, valid, schema):
    semantic = panoptic.semantic[valid]
    instance = panoptic.instance[valid]
    things = np.isin(semantic, schema.things)
    return np.stack([semantic, np.where(things, instance, 0)], axis=1)


def _check_labels(panoptic, schema, name, allow_void):
    semantic = panoptic.semantic
    low = VOID if allow_void else 0
    if semantic.size and (semantic.min() < low or
                          semantic.max() >= schema.num_labels):
        raise InputError(
            '%s semantic ids fall outside [%d, %d)' %
            (name, low, schema.num_labels))


def panoptic_stats(prediction, ground_truth, schema):
    """
    Match the segments of one prediction against one ground truth.

    :type prediction: :class:`bcrf.types.PanopticMap`
    :type ground_truth: :class:`bcrf.types.PanopticMap`
    :rtype: :class:`PanopticStats`

    """
    if prediction.shape != ground_truth.shape:
        raise ShapeError(
            'prediction is %s but ground truth is %s' %
            (prediction.shape, ground_truth.shape))
    _check_labels(prediction, schema, 'predicted', allow_void=False)
    _check_labels(ground_truth, schema, 'ground-truth', allow_void=True)

    valid = ground_truth.semantic != VOID
    if not valid.any():
        return PanopticStats()
    gt_segments, gt_index, gt_area = np.unique(
        _segment_keys(ground_truth, valid, schema), axis=0,
        return_inverse=True, return_counts=True)
    pred_segments, pred_index, pred_area = np.unique(
        _segment_keys(prediction, valid, schema), axis=0,
        return_inverse=True, return_counts=True)
    gt_index = gt_index.ravel()
    pred_index = pred_index.ravel()
    pairs, overlap = np.unique(
        np.stack([gt_index, pred_index], axis=1), axis=0, return_counts=True)

    matched_gt = set()
    matched_pred = set()
    iou_sum = {}
    for (g, p), inter in zip(pairs, overlap):
        label = gt_segments[g][0]
        if pred_segments[p][0] != label:
            continue
        iou = inter / float(gt_area[g] + pred_area[p] - inter)
        if iou <= IOU_THRESHOLD:
            continue
        if g in matched_gt or p in matched_pred:
            raise InvariantError('segment matched twice')
        matched_gt.add(g)
        matched_pred.add(p)
        iou_sum[label] = iou_sum.get(label, 0.0) + iou

    counts = {}
    labels = set(gt_segments[:, 0]) | set(pred_segments[:, 0])
    for label in labels:
        tp = sum(1 for g in matched_gt if gt_segments[g][0] == label)
        fn = sum(1 for g in range(len(gt_segments))
                 if gt_segments[g][0] == label and g not in matched_gt)
        fp = sum(1 for p in range(len(pred_segments))
                 if pred_segments[p][0] == label and p not in matched_pred)
        counts[int(label)] = (iou_sum.get(label, 0.0), tp, fp, fn)
    return PanopticStats(counts, gt_segments[:, 0])


def pq_metrics(prediction, ground_truth, schema):
    """
    Panoptic, segmentation and recognition quality of one prediction.

    :rtype: :class:`PanopticReport`

    """
    return panoptic_stats(prediction, ground_truth, schema).report(schema)


def _stats_for_pair(args):
    prediction, ground_truth, schema = args
    return panoptic_stats(prediction, ground_truth, schema)


def evaluate_many(pairs, schema, processes=None):
    """
    Dataset-level panoptic quality over ``(prediction, ground_truth)``
    pairs. Images are scored independently, across ``processes`` worker
    processes when more than one is requested, and their counts summed.

    :rtype: :class:`PanopticReport`

    """
    jobs = [(prediction, gt, schema) for prediction, gt in pairs]
    if processes is not None and processes > 1 and len(jobs) > 1:
        log.debug('scoring %d images on %d processes', len(jobs), processes)
        with multiprocessing.Pool(processes) as pool:
            stats = pool.map(_stats_for_pair, jobs)
    else:
        stats = [_stats_for_pair(job) for job in jobs]
    total = reduce(operator.add, stats, PanopticStats())
    return total.report(schema)
