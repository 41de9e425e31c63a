"""
Seeded synthetic scenes for tests, gradient checks and the toy fitting
run. Every generator draws from the ``numpy.random.Generator`` it is given.

"""
import numpy as np
from scipy.special import softmax

from bcrf.diff import TrainingSample
from bcrf.energy import semantic_unary_from_probs
from bcrf.panoptic import Detection, instance_unary_from_detections
from bcrf.types import (
    BcrfParams,
    KernelSpec,
    LabelSchema,
    PanopticMap,
    PotentialField,
    TermWeights,
    potts_matrix,
)

import logging
log = logging.getLogger(__name__)


PALETTE = np.array([
    (230, 25, 75),
    (60, 180, 75),
    (255, 225, 25),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (128, 128, 128),
], dtype=np.float64)


__all__ = (
    'street_schema',
    'object_schema',
    'random_instance',
    'random_sample',
    'random_params',
    'corrupted_object_sample',
    'ground_truth',
    'cross_benchmark_params',
    'toy_params',
    'toy_dataset',
)


def street_schema():
    """
    Two stuff labels (road, sky) and two thing labels (person, car).

    """
    return LabelSchema(('road', 'sky', 'person', 'car'), (0, 1), (2, 3))


def object_schema():
    """
    One stuff label (road) and one thing label (car).

    """
    return LabelSchema(('road', 'car'), (0,), (1,))


def _rectangle(rng, height, width, low, high):
    h = int(rng.integers(low, high + 1))
    w = int(rng.integers(low, high + 1))
    top = int(rng.integers(0, height - h + 1))
    left = int(rng.integers(0, width - w + 1))
    mask = np.zeros((height, width), dtype=bool)
    mask[top:top + h, left:left + w] = True
    return mask


def _label_colors(rng, count):
    if count <= len(PALETTE):
        return PALETTE[rng.permutation(len(PALETTE))[:count]]
    return rng.uniform(0, 255, size=(count, 3))


def random_instance(rng, height=16, width=16, schema=None,
                    max_detections=2, noise=1.0, peak=3.0):
    """
    A structured random scene: stuff regions split by a horizontal
    boundary, rectangular thing objects, a matching image, noisy class
    probabilities peaked on the true labels, and one detection per object.

    :returns: a :class:`bcrf.diff.TrainingSample` whose schema carries the
        detections as instances
    :rtype: :class:`bcrf.diff.TrainingSample`

    """
    schema = schema or street_schema()
    stuff = sorted(schema.stuff)
    things = list(schema.things)

    semantic = np.empty((height, width), dtype=np.int64)
    boundary = int(rng.integers(1, height)) if height > 1 else 1
    semantic[:boundary] = stuff[-1] if stuff else things[0]
    semantic[boundary:] = stuff[0] if stuff else things[0]
    instance = np.zeros((height, width), dtype=np.int64)

    detections = []
    if things:
        count = int(rng.integers(1, max_detections + 1))
        size = max(1, min(height, width) // 2)
        for index in range(1, count + 1):
            label = int(things[rng.integers(len(things))])
            mask = _rectangle(rng, height, width, max(1, size // 2), size)
            semantic[mask] = label
            instance[mask] = index
            score = float(rng.uniform(0.6, 0.99))
            detections.append(Detection(label, score, mask))

    colors = _label_colors(rng, schema.num_labels)
    image = colors[semantic] + rng.normal(0, 8.0, size=(height, width, 3))
    image = np.clip(image, 0, 255).astype(np.uint8)

    logits = (peak * np.eye(schema.num_labels)[semantic] +
              rng.normal(0, noise, size=(height, width, schema.num_labels)))
    probs = PotentialField(softmax(logits, axis=2))

    unary_instance, classes = instance_unary_from_detections(
        detections, height, width)
    return TrainingSample(
        image,
        semantic_unary_from_probs(probs),
        unary_instance,
        schema.with_instances(classes),
        semantic,
        instance,
    )


def random_sample(rng, height=4, width=4):
    """
    A tiny random scene over three labels for gradient checks.

    """
    schema = LabelSchema(('road', 'person', 'car'), (0,), (1, 2))
    return random_instance(
        rng, height, width, schema, max_detections=2, noise=1.0, peak=1.5)


def random_params(rng, schema, iterations=5):
    """
    Random parameters of moderate strength: positive term weights, one
    spatial and one bilateral component per kernel, random compatibilities
    and a random damping factor.

    """
    def kernel(scale):
        return (
            KernelSpec.spatial(rng.uniform(0.1, scale), rng.uniform(1, 3)) +
            KernelSpec.bilateral(
                rng.uniform(0.1, scale), rng.uniform(2, 6),
                rng.uniform(20, 60))
        )

    mu = rng.uniform(0.5, 1.5, size=(schema.num_labels,) * 2)
    np.fill_diagonal(mu, 0.0)
    eta = rng.uniform(0.5, 1.5, size=(schema.eta_size,) * 2)
    np.fill_diagonal(eta, 0.0)
    return BcrfParams(
        TermWeights(*rng.uniform(0.5, 1.5, size=6)),
        kernel(0.5),
        kernel(0.5),
        kernel(0.3),
        mu,
        eta,
        iterations=iterations,
        damping=float(rng.uniform(0.6, 1.0)),
    )


def corrupted_object_sample(rng, size=32, object_size=20, block_size=10,
                            corruption=0.99, score=0.99,
                            no_instance_floor=0.01, jitter=0.01):
    """
    A square car on road whose detection is clean but whose semantic
    probabilities call an inner block of the car road.

    Outside the car, road has probability 0.9; on the car, car has 0.9,
    except inside the block where road has ``corruption``. Every
    probability is jittered by up to ``jitter``.

    :rtype: :class:`bcrf.diff.TrainingSample`

    """
    schema = object_schema()
    top, left = (int(v) for v in
                 rng.integers(2, size - object_size - 1, size=2))
    car = np.zeros((size, size), dtype=bool)
    car[top:top + object_size, left:left + object_size] = True

    offset = (object_size - block_size) // 2
    block_top = top + offset + int(rng.integers(-1, 2))
    block_left = left + offset + int(rng.integers(-1, 2))
    block = np.zeros((size, size), dtype=bool)
    block[block_top:block_top + block_size,
          block_left:block_left + block_size] = True

    road = np.where(car, 0.1, 0.9)
    road[block] = corruption
    road = np.clip(road + rng.uniform(-jitter, jitter, size=road.shape),
                   0.001, 0.999)
    probs = PotentialField(np.stack([road, 1.0 - road], axis=-1))

    image = np.where(car[..., None], (200, 40, 40), (90, 90, 90))
    image = image + rng.normal(0, 5.0, size=(size, size, 3))
    image = np.clip(image, 0, 255).astype(np.uint8)

    detections = [Detection(1, score, car)]
    unary_instance, classes = instance_unary_from_detections(
        detections, size, size, no_instance_floor)
    truth = car.astype(np.int64)
    return TrainingSample(
        image,
        semantic_unary_from_probs(probs),
        unary_instance,
        schema.with_instances(classes),
        truth,
        truth.copy(),
    )


def ground_truth(sample):
    return PanopticMap(sample.gt_semantic, sample.gt_instances)


def cross_benchmark_params(schema, sigma=3.0, cross=True):
    """
    Spatial-only kernels for the corrupted-object benchmark. With
    ``cross=False`` both cross terms are switched off.

    """
    weights = TermWeights.uniform()
    if not cross:
        weights = weights._replace(cross_unary=0.0, cross_pairwise=0.0)
    return BcrfParams(
        weights,
        KernelSpec.spatial(0.5, sigma),
        KernelSpec.spatial(1.0, sigma),
        KernelSpec.spatial(1.0, sigma),
        potts_matrix(schema.num_labels),
        potts_matrix(schema.eta_size),
        iterations=5,
    )


def toy_params(schema, kernel_weight=0.1, sigma=2.0):
    """
    Deliberately weak starting parameters for the toy fitting run.

    """
    return BcrfParams(
        TermWeights.uniform(),
        KernelSpec.spatial(kernel_weight, sigma),
        KernelSpec.spatial(kernel_weight, sigma),
        KernelSpec.spatial(kernel_weight, sigma),
        potts_matrix(schema.num_labels),
        potts_matrix(schema.eta_size),
        iterations=5,
    )


def toy_dataset(rng, samples=20, size=16, object_size=10, block_size=5):
    """
    Small corrupted-object scenes for parameter fitting.

    """
    return [
        corrupted_object_sample(
            rng, size, object_size, block_size, corruption=0.97,
            score=0.99, no_instance_floor=0.01)
        for _ in range(samples)
    ]
