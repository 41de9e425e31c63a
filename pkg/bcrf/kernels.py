"""
Gaussian-mixture pixel similarity and exact dense message passing.

Filtering is naive: every pixel is compared against every other pixel, so
the cost is quadratic in the number of pixels. Small problems cache the
whole similarity matrix; larger ones are filtered in row blocks.

"""
import numpy as np
from scipy.spatial.distance import cdist

from bcrf.exceptions import ShapeError, ConfigError
from bcrf.types import (
    BILATERAL,
    SPATIAL,
    FeatureField,
    PotentialField,
)

import logging
log = logging.getLogger(__name__)


__all__ = (
    'build_features',
    'image_features',
    'similarity',
    'message_pass',
    'GaussianKernel',
)

# similarity matrices are cached whole up to this many pixels
DENSE_PIXEL_LIMIT = 2048
BLOCK_ROWS = 256


def _check_image(image):
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(
            'expected an (height, width, 3) RGB image, got shape %s' %
            (image.shape,))
    if image.shape[0] < 1 or image.shape[1] < 1:
        raise ShapeError('image is empty')
    return image


def build_features(image, kind):
    """
    Per-pixel features of ``image``: ``(x, y)`` for ``'spatial'`` and
    ``(x, y, r, g, b)`` for ``'bilateral'``, in raw pixel and intensity
    units. Bandwidths are applied by the kernel.

    :param image: RGB image
    :type image: array of shape (height, width, 3)
    :param kind: ``'spatial'`` or ``'bilateral'``
    :rtype: :class:`bcrf.types.FeatureField`

    """
    image = _check_image(image)
    height, width = image.shape[:2]
    ys, xs = np.mgrid[0:height, 0:width]
    coords = np.stack([xs, ys], axis=-1).astype(np.float64)

    if kind == SPATIAL:
        data = coords
    elif kind == BILATERAL:
        data = np.concatenate([coords, image.astype(np.float64)], axis=-1)
    else:
        raise ConfigError("unknown feature kind '%s'" % kind)
    return FeatureField(data, kind)


def image_features(image):
    """
    :returns: every feature kind of ``image``, keyed by kind
    :rtype: dict

    """
    return {
        SPATIAL: build_features(image, SPATIAL),
        BILATERAL: build_features(image, BILATERAL),
    }


class GaussianKernel(object):
    """
    The similarity ``K(i, j) = sum_m w_m exp(-|f_i - f_j|^2 / 2)`` of one
    :class:`bcrf.types.KernelSpec` over a fixed set of pixels, with each
    feature dimension divided by its bandwidth.

    Calling the kernel on an (N, C) array filters every channel and leaves
    the self term out:
    ``out_i = sum_{j != i} K(i, j) values_j``.

    """
    def __init__(self, features, spec):
        """
        :param features: feature fields keyed by kind, as returned by
            :func:`image_features`
        :type features: dict
        :param spec: the mixture to evaluate
        :type spec: :class:`bcrf.types.KernelSpec`

        """
        self.spec = spec
        self._scaled = []
        size = None
        for component in spec:
            field = features[component.features]
            scaled = field.flat / np.asarray(component.bandwidths)
            self._scaled.append((component.weight, scaled))
            size = field.num_pixels
        if size is None:
            size = next(iter(features.values())).num_pixels
        self.size = size
        self.self_weight = spec.total_weight
        self._full = None

    def __repr__(self):
        return (
            "<%s pixels=%d, components=%d>" %
            (self.__class__.__name__, self.size, len(self._scaled))
        )

    def similarity(self, i, j):
        total = 0.0
        for weight, scaled in self._scaled:
            diff = scaled[i] - scaled[j]
            total += weight * np.exp(-0.5 * np.dot(diff, diff))
        return total

    def _rows(self, rows):
        block = np.zeros((len(rows), self.size))
        for weight, scaled in self._scaled:
            distances = cdist(scaled[rows], scaled, 'sqeuclidean')
            block += weight * np.exp(-0.5 * distances)
        return block

    def full_matrix(self):
        """
        The N x N similarity matrix, self terms included. Cached.

        """
        if self._full is None:
            log.debug('caching %dx%d similarity matrix', self.size, self.size)
            self._full = self._rows(np.arange(self.size))
            self._full.setflags(write=False)
        return self._full

    def matrix(self):
        """
        :returns: the similarity matrix with a zero diagonal
        :rtype: numpy.ndarray

        """
        matrix = self.full_matrix() - self.self_weight * np.eye(self.size)
        np.fill_diagonal(matrix, 0.0)
        return matrix

    def __call__(self, values):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != self.size:
            raise ShapeError(
                'kernel covers %d pixels, got values of shape %s' %
                (self.size, values.shape))

        if self.size <= DENSE_PIXEL_LIMIT:
            out = self.full_matrix() @ values
        else:
            out = np.empty_like(values)
            for start in range(0, self.size, BLOCK_ROWS):
                rows = np.arange(start, min(start + BLOCK_ROWS, self.size))
                out[rows] = self._rows(rows) @ values

        out -= self.self_weight * values
        return out

    def upper(self, values):
        """
        Filter over later pixels only: ``out_i = sum_{j > i} K(i, j)
        values_j``, with pixels in row-major order.

        """
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != self.size:
            raise ShapeError(
                'kernel covers %d pixels, got values of shape %s' %
                (self.size, values.shape))

        if self.size <= DENSE_PIXEL_LIMIT:
            return np.triu(self.full_matrix(), 1) @ values
        out = np.empty_like(values)
        columns = np.arange(self.size)
        for start in range(0, self.size, BLOCK_ROWS):
            rows = np.arange(start, min(start + BLOCK_ROWS, self.size))
            later = columns[None, :] > rows[:, None]
            out[rows] = (self._rows(rows) * later) @ values
        return out


def similarity(i, j, features, spec):
    """
    Similarity of pixels ``i`` and ``j`` (flat, row-major indices). For
    ``i == j`` this is the sum of the component weights.

    """
    return GaussianKernel(features, spec).similarity(i, j)


def message_pass(values, features, spec):
    """
    Filter every channel of ``values`` with the kernel of ``spec``,
    excluding each pixel's own contribution.

    :type values: :class:`bcrf.types.PotentialField`
    :rtype: :class:`bcrf.types.PotentialField`

    """
    kernel = GaussianKernel(features, spec)
    out = kernel(values.flat)
    return PotentialField.from_flat(out, values.height, values.width)
