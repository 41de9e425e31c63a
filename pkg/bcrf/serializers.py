"""
Builtin serializers for the files bcrf reads and writes.

"""
import csv
import io
import json
import re
import struct

import numpy as np

from bcrf.exceptions import FormatError
from bcrf.interfaces import Serializer
from bcrf.panoptic import Detection

import logging
log = logging.getLogger(__name__)


__all__ = (
    'TensorSerializer',
    'DetectionSerializer',
    'PPMSerializer',
    'NamedtupleSerializer',
    'EtaSerializer',
    'rle_encode',
    'rle_decode',
    'read_tensor',
    'write_tensor',
    'read_image',
    'write_image',
    'read_detections',
    'read_text',
    'write_text',
)


BTF_MAGIC = b'BTF1'
FLOAT32 = 0
INT32 = 1
FLOAT64 = 2
BTF_DTYPES = {
    FLOAT32: np.dtype('<f4'),
    INT32: np.dtype('<i4'),
    FLOAT64: np.dtype('<f8'),
}
_HEADER = struct.Struct('<4sII')


class TensorSerializer(Serializer):
    """
    Dense little-endian tensors: the magic ``BTF1``, a u32 dtype code
    (0 float32, 1 int32, 2 float64), a u32 rank, one u32 per dimension,
    then the row-major payload.

    """
    def __init__(self, dtype=None):
        """
        :param dtype: dtype code that decoded files must carry, or None to
            accept any
        :type dtype: int

        """
        self.dtype = dtype

    def dumps(self, array):
        array = np.asarray(array)
        if array.dtype.kind == 'f':
            code = FLOAT64 if array.dtype.itemsize > 4 else FLOAT32
        elif array.dtype.kind in 'iub':
            code = INT32
        else:
            raise FormatError('cannot store %s tensors' % array.dtype)
        if self.dtype is not None:
            code = self.dtype
        header = _HEADER.pack(BTF_MAGIC, code, array.ndim)
        dims = struct.pack('<%dI' % array.ndim, *array.shape)
        payload = np.ascontiguousarray(array, dtype=BTF_DTYPES[code])
        return header + dims + payload.tobytes()

    def loads(self, data):
        if len(data) < _HEADER.size or data[:4] != BTF_MAGIC:
            raise FormatError('not a BTF1 tensor (bad magic)')
        _, code, rank = _HEADER.unpack_from(data)
        if code not in BTF_DTYPES:
            raise FormatError('unknown tensor dtype code %d' % code)
        if self.dtype is not None and code != self.dtype:
            raise FormatError(
                'tensor has dtype %s, expected %s' %
                (BTF_DTYPES[code], BTF_DTYPES[self.dtype]))
        offset = _HEADER.size + 4 * rank
        if len(data) < offset:
            raise FormatError('tensor header is truncated')
        dims = struct.unpack_from('<%dI' % rank, data, _HEADER.size)
        dtype = BTF_DTYPES[code]
        count = int(np.prod(dims, dtype=np.int64))
        if len(data) - offset != count * dtype.itemsize:
            raise FormatError(
                'tensor payload is %d bytes, dims %s need %d' %
                (len(data) - offset, dims, count * dtype.itemsize))
        return np.frombuffer(
            data, dtype=dtype, count=count, offset=offset).reshape(dims).copy()


def rle_encode(mask):
    """
    Run lengths of a boolean mask in row-major order, alternating
    background and foreground and starting with background (so the first
    count may be 0).

    :rtype: list of int

    """
    flat = np.asarray(mask, dtype=bool).ravel()
    if not flat.size:
        return []
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], changes, [flat.size]])
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return counts


def rle_decode(counts, shape):
    """
    Inverse of :func:`rle_encode`.

    :raises: FormatError unless the counts cover ``shape`` exactly

    """
    counts = list(counts)
    if any(not isinstance(c, int) or isinstance(c, bool) or c < 0
           for c in counts):
        raise FormatError('run lengths must be non-negative integers')
    size = int(np.prod(shape))
    if sum(counts) != size:
        raise FormatError(
            'run lengths cover %d pixels, mask has %d' % (sum(counts), size))
    values = np.arange(len(counts)) % 2 == 1
    return np.repeat(values, counts).reshape(shape)


class DetectionSerializer(Serializer):
    """
    Detections as a JSON list of ``{"class": int, "score": float, "rle":
    [int, ...]}`` objects. Masks are run-length encoded for a fixed image
    size.

    """
    def __init__(self, height, width):
        self.shape = (height, width)

    def loads(self, text):
        try:
            entries = json.loads(text)
        except ValueError as e:
            raise FormatError('detections are not valid JSON: %s' % e)
        if not isinstance(entries, list):
            raise FormatError('detections must be a JSON list')

        detections = []
        for index, entry in enumerate(entries):
            if not isinstance(entry, dict) or \
                    set(entry) != set(('class', 'score', 'rle')):
                raise FormatError(
                    'detection %d needs exactly the keys class, score, rle' %
                    index)
            label, score = entry['class'], entry['score']
            if not isinstance(label, int) or isinstance(label, bool):
                raise FormatError('detection %d has a non-integer class' % index)
            if not isinstance(score, (int, float)) or isinstance(score, bool):
                raise FormatError('detection %d has a non-numeric score' % index)
            if not isinstance(entry['rle'], list):
                raise FormatError('detection %d has no run-length list' % index)
            mask = rle_decode(entry['rle'], self.shape)
            detections.append(Detection(label, float(score), mask))
        return detections

    def dumps(self, detections):
        return json.dumps([
            {
                'class': int(detection.label),
                'score': float(detection.score),
                'rle': rle_encode(detection.mask),
            }
            for detection in detections
        ])


_PPM_TOKEN = re.compile(br'(?:\s|#[^\n]*\n)*(\S+)')


class PPMSerializer(Serializer):
    """
    Binary (P6) PPM images with 8-bit channels.

    """
    def loads(self, data):
        tokens = []
        position = 0
        for _ in range(4):
            match = _PPM_TOKEN.match(data, position)
            if match is None:
                raise FormatError('PPM header is truncated')
            tokens.append(match.group(1))
            position = match.end()
        if tokens[0] != b'P6':
            raise FormatError('not a binary PPM image (bad magic)')
        try:
            width, height, maxval = (int(t) for t in tokens[1:])
        except ValueError:
            raise FormatError('PPM header has non-numeric fields')
        if maxval != 255:
            raise FormatError('only 8-bit PPM images are supported')
        # exactly one whitespace byte separates the header from the pixels
        payload = data[position + 1:]
        if len(payload) != width * height * 3:
            raise FormatError(
                'PPM payload is %d bytes, %dx%d needs %d' %
                (len(payload), width, height, width * height * 3))
        return np.frombuffer(payload, dtype=np.uint8).reshape(
            height, width, 3).copy()

    def dumps(self, image):
        image = np.asarray(image)
        if image.ndim != 3 or image.shape[2] != 3:
            raise FormatError('PPM images must be (height, width, 3)')
        header = b'P6\n%d %d\n255\n' % (image.shape[1], image.shape[0])
        pixels = np.clip(image, 0, 255).astype(np.uint8)
        return header + pixels.tobytes()


class NamedtupleSerializer(Serializer):
    """
    Serialize sequences of namedtuples as CSV, one column per field.

    """
    def __init__(self, NTClass, types=None):
        """
        :param NTClass: the namedtuple class that you'd like to marshal to
            and from.
        :type NTClass: type
        :param types: one callable per field that parses its column;
            defaults to float
        :type types: sequence of callables

        """
        self.NTClass = NTClass
        self.types = tuple(types or (float,) * len(NTClass._fields))

    def loads(self, text):
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != self.NTClass._fields:
            raise FormatError(
                'CSV header must be %s' % ','.join(self.NTClass._fields))
        try:
            return [
                self.NTClass(*(cast(value)
                               for cast, value in zip(self.types, row)))
                for row in rows[1:]
                if row
            ]
        except (TypeError, ValueError) as e:
            raise FormatError('bad CSV row: %s' % e)

    def dumps(self, records):
        out = io.StringIO()
        writer = csv.writer(out, lineterminator='\n')
        writer.writerow(self.NTClass._fields)
        for record in records:
            writer.writerow([repr(float(v)) if isinstance(v, float) else v
                             for v in record])
        return out.getvalue()


class EtaSerializer(Serializer):
    """
    The cross compatibility matrix eta as a CSV heatmap: a header row of
    column names and one row per class, led by its name. The null class
    comes first, then the thing labels.

    """
    def __init__(self, schema):
        self.names = schema.eta_names()

    def dumps(self, eta):
        out = io.StringIO()
        writer = csv.writer(out, lineterminator='\n')
        writer.writerow(('eta',) + self.names)
        for name, row in zip(self.names, np.asarray(eta)):
            writer.writerow((name,) + tuple(repr(float(v)) for v in row))
        return out.getvalue()

    def loads(self, text):
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0][1:]) != self.names:
            raise FormatError(
                'eta header must name %s' % ', '.join(self.names))
        body = [row for row in rows[1:] if row]
        if tuple(row[0] for row in body) != self.names:
            raise FormatError('eta rows must be %s' % ', '.join(self.names))
        try:
            return np.array([[float(v) for v in row[1:]] for row in body])
        except ValueError as e:
            raise FormatError('bad eta entry: %s' % e)


def read_text(path):
    with open(path) as f:
        return f.read()


def write_text(path, text):
    with open(path, 'w') as f:
        f.write(text)


def read_tensor(path, dtype=None):
    with open(path, 'rb') as f:
        return TensorSerializer(dtype).loads(f.read())


def write_tensor(path, array, dtype=None):
    with open(path, 'wb') as f:
        f.write(TensorSerializer(dtype).dumps(array))
    log.debug('wrote %s tensor to %s', np.shape(array), path)


def read_image(path):
    """
    Read an RGB image stored as PPM or as an (H, W, 3) tensor.

    """
    with open(path, 'rb') as f:
        data = f.read()
    if data[:2] == b'P6':
        return PPMSerializer().loads(data)
    image = TensorSerializer().loads(data)
    if image.ndim != 3 or image.shape[2] != 3:
        raise FormatError(
            'image tensor must be (height, width, 3), got %s' % (image.shape,))
    return image


def write_image(path, image):
    with open(path, 'wb') as f:
        f.write(PPMSerializer().dumps(image))


def read_detections(path, height, width):
    return DetectionSerializer(height, width).loads(read_text(path))
