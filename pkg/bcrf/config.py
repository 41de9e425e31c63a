"""
JSON configuration documents: a label schema plus model parameters.

::

    {
      "schema": {
        "labels": [{"name": "road", "kind": "stuff"},
                   {"name": "car", "kind": "thing"}],
        "instances": ["car"]
      },
      "params": {
        "term_weights": {"cross_pairwise": 0.5},
        "kernels": {"cross": [{"weight": 0.5, "bandwidths": [3, 3],
                               "features": "spatial"}]},
        "mu": {"potts": 1.0},
        "iterations": 10
      }
    }

Every params key is optional; missing keys take the defaults of
:meth:`bcrf.types.BcrfParams.potts`.

"""
import json

import numpy as np

from bcrf.exceptions import ConfigError, SchemaError
from bcrf.types import (
    STUFF,
    THING,
    BcrfParams,
    KernelComponent,
    KernelSpec,
    LabelSchema,
    TermWeights,
    potts_matrix,
    validate_schema,
)

import logging
log = logging.getLogger(__name__)


__all__ = (
    'parse_config',
    'load_config',
    'dump_config',
    'save_config',
)

TOP_KEYS = ('schema', 'params')
SCHEMA_KEYS = ('labels', 'instances')
LABEL_KEYS = ('name', 'kind')
PARAM_KEYS = (
    'term_weights', 'kernels', 'mu', 'eta', 'iterations', 'damping',
    'convergence_tol')
KERNEL_KEYS = ('semantic', 'instance', 'cross')
COMPONENT_KEYS = ('weight', 'bandwidths', 'features')


def _check_keys(document, allowed, where, required=()):
    if not isinstance(document, dict):
        raise ConfigError('%s must be a JSON object' % where)
    unknown = sorted(set(document) - set(allowed))
    if unknown:
        raise ConfigError("unknown key '%s' in %s" % (unknown[0], where))
    for key in required:
        if key not in document:
            raise ConfigError("%s is missing '%s'" % (where, key))


def _parse_schema(document):
    _check_keys(document, SCHEMA_KEYS, 'schema', required=('labels',))
    labels = document['labels']
    if not isinstance(labels, list):
        raise ConfigError('schema labels must be a list')
    names, kinds = [], []
    for index, label in enumerate(labels):
        _check_keys(label, LABEL_KEYS, 'label %d' % index,
                    required=LABEL_KEYS)
        if label['kind'] not in (STUFF, THING):
            raise ConfigError(
                "label %d has kind '%s', expected stuff or thing" %
                (index, label['kind']))
        names.append(label['name'])
        kinds.append(label['kind'])

    schema = LabelSchema.from_kinds(names, kinds)
    instances = [schema.label_id(c) for c in document.get('instances', [])]
    schema = schema.with_instances(instances)
    validate_schema(schema)
    return schema


def _parse_kernel(components, name):
    if not isinstance(components, list):
        raise ConfigError('%s kernel must be a list of components' % name)
    parsed = []
    for index, component in enumerate(components):
        where = '%s kernel component %d' % (name, index)
        _check_keys(component, COMPONENT_KEYS, where, required=COMPONENT_KEYS)
        parsed.append(KernelComponent(
            _number(component['weight'], where),
            [_number(s, where) for s in component['bandwidths']],
            component['features'],
        ))
    return KernelSpec(parsed)


def _number(value, where):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError('%s: expected a number, got %r' % (where, value))
    return float(value)


def _parse_matrix(value, size, name):
    if isinstance(value, dict):
        _check_keys(value, ('potts',), name, required=('potts',))
        return potts_matrix(size, _number(value['potts'], name))
    try:
        matrix = np.array(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise ConfigError('%s must be a matrix of numbers' % name)
    if matrix.shape != (size, size):
        raise ConfigError(
            '%s must be %dx%d, got shape %s' % (name, size, size, matrix.shape))
    return matrix


def _parse_params(document, schema):
    _check_keys(document, PARAM_KEYS, 'params')
    params = BcrfParams.potts(schema)
    changes = {}

    if 'term_weights' in document:
        weights = document['term_weights']
        _check_keys(weights, TermWeights._fields, 'term_weights')
        changes['term_weights'] = params.term_weights._replace(**dict(
            (k, _number(v, 'term_weights')) for k, v in weights.items()))

    kernels = document.get('kernels', {})
    _check_keys(kernels, KERNEL_KEYS, 'kernels')
    for name in KERNEL_KEYS:
        if name in kernels:
            changes['kernel_' + name] = _parse_kernel(kernels[name], name)

    if 'mu' in document:
        changes['mu'] = _parse_matrix(document['mu'], schema.num_labels, 'mu')
    if 'eta' in document:
        changes['eta'] = _parse_matrix(
            document['eta'], schema.eta_size, 'eta')
    if 'iterations' in document:
        iterations = document['iterations']
        if isinstance(iterations, bool) or not isinstance(iterations, int):
            raise ConfigError('iterations must be an integer')
        changes['iterations'] = iterations
    for key in ('damping', 'convergence_tol'):
        if key in document:
            changes[key] = _number(document[key], key)

    params = params.replace(**changes)
    params.validate(schema)
    return params


def parse_config(document):
    """
    Build the schema and parameters described by a decoded config document.

    :returns: ``(schema, params)``
    :raises: ConfigError, SchemaError

    """
    _check_keys(document, TOP_KEYS, 'config', required=('schema',))
    schema = _parse_schema(document['schema'])
    params = _parse_params(document.get('params', {}), schema)
    log.debug('parsed config: %r, %r', schema, params)
    return schema, params


def load_config(path):
    """
    Read and parse a JSON config file.

    :returns: ``(schema, params)``

    """
    with open(path) as f:
        try:
            document = json.load(f)
        except ValueError as e:
            raise ConfigError('%s is not valid JSON: %s' % (path, e))
    try:
        return parse_config(document)
    except SchemaError:
        raise
    except ConfigError as e:
        raise ConfigError('%s: %s' % (path, e))


def _dump_kernel(spec):
    return [
        {
            'weight': c.weight,
            'bandwidths': list(c.bandwidths),
            'features': c.features,
        }
        for c in spec
    ]


def dump_config(schema, params):
    """
    The config document for ``schema`` and ``params``. Parsing it again
    reproduces both exactly.

    :rtype: dict

    """
    labels = [
        {'name': name, 'kind': STUFF if schema.is_stuff(label) else THING}
        for label, name in enumerate(schema.labels)
    ]
    return {
        'schema': {
            'labels': labels,
            'instances': list(schema.instance_classes),
        },
        'params': {
            'term_weights': params.term_weights._asdict(),
            'kernels': {
                'semantic': _dump_kernel(params.kernel_semantic),
                'instance': _dump_kernel(params.kernel_instance),
                'cross': _dump_kernel(params.kernel_cross),
            },
            'mu': params.mu.tolist(),
            'eta': params.eta.tolist(),
            'iterations': params.iterations,
            'damping': params.damping,
            'convergence_tol': params.convergence_tol,
        },
    }


def save_config(path, schema, params):
    with open(path, 'w') as f:
        json.dump(dump_config(schema, params), f, indent=2)
        f.write('\n')
