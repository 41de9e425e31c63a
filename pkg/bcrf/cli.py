"""
The ``bcrf`` command line.

Every subcommand exits 0 on success, 1 on invalid input and 2 when an
internal invariant fails, printing a one-line ``bcrf: error:`` diagnostic on
stderr. Results go to stdout or to files; logging goes to stderr.

"""
import argparse
from collections import namedtuple
import json
import os
import sys

import numpy as np

from bcrf import synthetic
from bcrf.config import load_config, save_config
from bcrf.diff import FitRecord, fit_parameters, grad_check
from bcrf.energy import semantic_unary_from_probs, total_energy
from bcrf.exceptions import (
    InputError,
    InvariantError,
    ShapeError,
    SizeGuardError,
    TrainingError,
)
from bcrf.inference import TraceRecord, run_inference
from bcrf.kernels import image_features
from bcrf.metrics import evaluate_many
from bcrf.oracle import enumerate_map, exact_marginals
from bcrf.panoptic import (
    JOINT,
    NO_INSTANCE_FLOOR,
    PASTE,
    colorize,
    fuse_panoptic,
    instance_unary_from_detections,
)
from bcrf.serializers import (
    FLOAT32,
    INT32,
    EtaSerializer,
    NamedtupleSerializer,
    read_detections,
    read_image,
    read_tensor,
    write_image,
    write_tensor,
    write_text,
)
from bcrf.types import (
    BcrfParams,
    MarginalPair,
    PanopticMap,
    PotentialField,
    validate_schema,
)

import logging
log = logging.getLogger(__name__)


__all__ = (
    'main',
    'build_parser',
)

MAX_PIXELS = 16384
LOG_LEVELS = (logging.WARNING, logging.INFO, logging.DEBUG)

Problem = namedtuple(
    'Problem', 'image unary_semantic unary_instance schema params')


class _Parser(argparse.ArgumentParser):
    """
    Usage errors are input errors: exit 1.

    """
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, 'bcrf: error: %s\n' % message)


def _check_size(height, width, limit):
    if height * width > limit:
        raise SizeGuardError(
            'image has %d pixels, more than the limit of %d (--max-pixels)' %
            (height * width, limit))


def _load_problem(args, schema, params):
    image = read_image(args.image)
    height, width = image.shape[:2]
    _check_size(height, width, args.max_pixels)

    probs = read_tensor(args.probs)
    if probs.ndim != 3 or probs.shape[:2] != (height, width):
        raise ShapeError(
            'probabilities are %s but the image is %dx%d' %
            (probs.shape, height, width))
    if not np.all(np.isfinite(probs)):
        raise InputError('class probabilities must be finite')
    unary_semantic = semantic_unary_from_probs(PotentialField(probs))

    detections = []
    if args.detections:
        detections = read_detections(args.detections, height, width)
    unary_instance, classes = instance_unary_from_detections(
        detections, height, width, args.no_instance_floor)

    schema = schema.with_instances(classes)
    validate_schema(schema)
    params.validate(schema)
    return Problem(image, unary_semantic, unary_instance, schema, params)


def _bundled_problem(args, iterations=None):
    """
    A seeded synthetic 16x16 scene, or the files named on the command line.

    """
    if args.config:
        schema, params = load_config(args.config)
    else:
        schema, params = synthetic.street_schema(), None
    if args.image or args.probs:
        if not (args.image and args.probs):
            raise InputError('--image and --probs must be given together')
        problem = _load_problem(
            args, schema, params or BcrfParams.potts(schema))
    else:
        rng = np.random.default_rng(args.seed)
        sample = synthetic.random_instance(rng, 16, 16, schema)
        problem = Problem(
            sample.image, sample.unary_semantic, sample.unary_instance,
            sample.schema, params or BcrfParams.potts(sample.schema))
    if iterations is not None:
        problem = problem._replace(
            params=problem.params.replace(iterations=iterations))
    return problem


def _trace_csv(trace):
    return NamedtupleSerializer(TraceRecord, (int, float, float)).dumps(trace)


def _write_panoptic(out, panoptic):
    write_tensor(os.path.join(out, 'semantic.btf'), panoptic.semantic, INT32)
    write_tensor(os.path.join(out, 'instance.btf'), panoptic.instance, INT32)
    write_image(os.path.join(out, 'preview.ppm'), colorize(panoptic))


def cmd_infer(args):
    schema, params = load_config(args.config)
    problem = _load_problem(args, schema, params)
    marginals, trace = run_inference(
        problem.unary_semantic, problem.unary_instance, problem.image,
        problem.params, problem.schema)
    panoptic = fuse_panoptic(marginals, problem.schema, args.mode)

    os.makedirs(args.out, exist_ok=True)
    write_tensor(os.path.join(args.out, 'q.btf'), marginals.q.data, FLOAT32)
    write_tensor(os.path.join(args.out, 'r.btf'), marginals.r.data, FLOAT32)
    write_text(os.path.join(args.out, 'trace.csv'), _trace_csv(trace))
    _write_panoptic(args.out, panoptic)
    log.info('wrote marginals and panoptic map to %s', args.out)
    print('iterations %d, free energy %r' %
          (trace.iterations, trace[-1].free_energy))


def cmd_energy(args):
    schema, params = load_config(args.config)
    problem = _load_problem(args, schema, params)
    semantic = read_tensor(args.semantic, INT32)
    instance = read_tensor(args.instance, INT32)
    energy = total_energy(
        semantic, instance, problem.unary_semantic, problem.unary_instance,
        problem.params, problem.schema, image_features(problem.image))
    print(repr(energy))


def cmd_trace(args):
    problem = _bundled_problem(args, args.iterations)
    _, trace = run_inference(
        problem.unary_semantic, problem.unary_instance, problem.image,
        problem.params, problem.schema, early_stop=False)
    text = _trace_csv(trace)
    if args.out:
        write_text(args.out, text)
    else:
        sys.stdout.write(text)


def cmd_gradcheck(args):
    failed = 0
    for index in range(args.instances):
        seed = args.seed + index
        report = grad_check(
            seed=seed, height=args.height, width=args.width,
            iterations=args.iterations, step=args.step)
        for name in sorted(report.errors):
            print('%d %-16s %.3e' % (seed, name, report.errors[name]))
        failed += not report.passed
    if failed:
        raise InvariantError(
            'gradient check failed on %d of %d instances' %
            (failed, args.instances))


def cmd_fit(args):
    rng = np.random.default_rng(args.seed)
    dataset = synthetic.toy_dataset(rng, args.samples, args.size)
    schema = dataset[0].schema
    params = synthetic.toy_params(schema)
    try:
        params, trace = fit_parameters(dataset, params, args.steps, args.lr)
    except TrainingError as e:
        if e.trace:
            log.error('fit diverged after %d steps', len(e.trace))
        raise

    os.makedirs(args.out, exist_ok=True)
    save_config(os.path.join(args.out, 'params.json'), schema, params)
    write_text(os.path.join(args.out, 'eta.csv'),
               EtaSerializer(schema).dumps(params.eta))
    write_text(os.path.join(args.out, 'fit.csv'),
               NamedtupleSerializer(FitRecord, (int, float)).dumps(trace))
    print('loss %r -> %r' % (trace[0].loss, trace[-1].loss))


def _read_map(paths):
    semantic, instance = paths
    return PanopticMap(read_tensor(semantic, INT32),
                       read_tensor(instance, INT32))


def cmd_metrics(args):
    schema, _ = load_config(args.config)
    if len(args.pred) != len(args.gt):
        raise InputError(
            'got %d predictions but %d ground truths' %
            (len(args.pred), len(args.gt)))
    pairs = []
    for pred, gt in zip(args.pred, args.gt):
        pairs.append((_read_map(pred), _read_map(gt)))
    report = evaluate_many(pairs, schema, args.jobs)

    print('%-12s %8s %8s %8s %5s %5s %5s' %
          ('class', 'PQ', 'SQ', 'RQ', 'TP', 'FP', 'FN'))
    for label, quality in sorted(report.per_class.items()):
        print('%-12s %8.4f %8.4f %8.4f %5d %5d %5d' %
              ((schema.labels[label],) + tuple(quality)))
    for name in ('All', 'Things', 'Stuff'):
        aggregate = report.aggregates[name]
        print('%-12s %8.4f %8.4f %8.4f %5d' % ((name,) + tuple(aggregate)))


def _renormalized(field):
    data = np.asarray(field, dtype=np.float64)
    if data.ndim != 3:
        raise ShapeError('marginals must be (height, width, channels)')
    if np.any(data < 0):
        raise InputError('marginals have negative entries')
    totals = data.sum(axis=2, keepdims=True)
    if not np.all(np.isfinite(totals)) or np.any(totals <= 0):
        raise InputError(
            'marginals need a finite, positive sum at every pixel')
    return data / totals


def cmd_fuse(args):
    schema, _ = load_config(args.config)
    q = _renormalized(read_tensor(args.q))
    r = _renormalized(read_tensor(args.r))
    height, width = q.shape[:2]
    _check_size(height, width, args.max_pixels)
    if args.detections:
        detections = read_detections(args.detections, height, width)
        schema = schema.with_instances(d.label for d in detections)
    validate_schema(schema)

    panoptic = fuse_panoptic(
        MarginalPair(q, r), schema, args.mode, args.overlap_threshold,
        args.min_area)
    os.makedirs(args.out, exist_ok=True)
    _write_panoptic(args.out, panoptic)


def cmd_oracle(args):
    if args.image or args.probs:
        problem = _bundled_problem(args)
    else:
        rng = np.random.default_rng(args.seed)
        sample = synthetic.random_sample(rng, args.height, args.width)
        if args.config:
            _, params = load_config(args.config)
        else:
            params = synthetic.random_params(rng, sample.schema)
        params.validate(sample.schema)
        problem = Problem(
            sample.image, sample.unary_semantic, sample.unary_instance,
            sample.schema, params)

    features = image_features(problem.image)
    semantic, instance, energy = enumerate_map(
        problem.unary_semantic, problem.unary_instance, problem.params,
        problem.schema, features)
    marginals, log_partition = exact_marginals(
        problem.unary_semantic, problem.unary_instance, problem.params,
        problem.schema, features)
    document = {
        'map': {
            'semantic': semantic.tolist(),
            'instance': instance.tolist(),
            'energy': energy,
        },
        'log_partition': log_partition,
        'marginals': {
            'semantic': marginals.q.data.tolist(),
            'instance': marginals.r.data.tolist(),
        },
    }
    print(json.dumps(document, indent=2, sort_keys=True))


def _add_problem_arguments(parser, required=True):
    parser.add_argument('--image', required=required,
                        help='RGB image, PPM (P6) or BTF1 tensor')
    parser.add_argument('--probs', required=required,
                        help='H x W x L semantic probabilities (BTF1)')
    parser.add_argument('--detections',
                        help='detections JSON; none when omitted')
    parser.add_argument('--no-instance-floor', type=float,
                        default=NO_INSTANCE_FLOOR,
                        help='inst0 score inside detections (default: '
                             '%(default)s)')


def build_parser():
    parser = _Parser(
        prog='bcrf',
        description='Bipartite CRF inference for panoptic segmentation.')
    parser.add_argument('-v', '--verbose', action='count', default=0,
                        help='log more (-v info, -vv debug)')
    parser.add_argument('--seed', type=int, default=0,
                        help='seed for every randomized path')
    parser.add_argument('--max-pixels', type=int, default=MAX_PIXELS,
                        help='largest image accepted (default: %(default)s)')
    commands = parser.add_subparsers(dest='command', metavar='command')
    commands.required = True

    infer = commands.add_parser('infer', help='run mean-field inference')
    infer.add_argument('--config', required=True)
    _add_problem_arguments(infer)
    infer.add_argument('--mode', choices=(JOINT, PASTE), default=JOINT)
    infer.add_argument('--out', required=True, help='output directory')
    infer.set_defaults(handler=cmd_infer)

    energy = commands.add_parser('energy', help='energy of a labeling')
    energy.add_argument('--config', required=True)
    _add_problem_arguments(energy)
    energy.add_argument('--semantic', required=True,
                        help='semantic labeling (BTF1 int32)')
    energy.add_argument('--instance', required=True,
                        help='instance labeling (BTF1 int32)')
    energy.set_defaults(handler=cmd_energy)

    trace = commands.add_parser(
        'trace', help='free energy per iteration as CSV')
    trace.add_argument('--config')
    _add_problem_arguments(trace, required=False)
    trace.add_argument('--iterations', type=int, default=10)
    trace.add_argument('--out', help='CSV path; stdout when omitted')
    trace.set_defaults(handler=cmd_trace)

    gradcheck = commands.add_parser(
        'gradcheck', help='compare gradients with finite differences')
    gradcheck.add_argument('--height', type=int, default=4)
    gradcheck.add_argument('--width', type=int, default=4)
    gradcheck.add_argument('--iterations', type=int, default=5)
    gradcheck.add_argument('--step', type=float, default=1e-4)
    gradcheck.add_argument('--instances', type=int, default=1)
    gradcheck.set_defaults(handler=cmd_gradcheck)

    fit = commands.add_parser('fit', help='fit parameters on a toy dataset')
    fit.add_argument('--samples', type=int, default=20)
    fit.add_argument('--size', type=int, default=16)
    fit.add_argument('--steps', type=int, default=30)
    fit.add_argument('--lr', type=float, default=1.0)
    fit.add_argument('--out', required=True, help='output directory')
    fit.set_defaults(handler=cmd_fit)

    metrics = commands.add_parser('metrics', help='PQ / SQ / RQ table')
    metrics.add_argument('--config', required=True)
    metrics.add_argument('--pred', nargs=2, action='append', required=True,
                         metavar=('SEMANTIC', 'INSTANCE'))
    metrics.add_argument('--gt', nargs=2, action='append', required=True,
                         metavar=('SEMANTIC', 'INSTANCE'))
    metrics.add_argument('--jobs', type=int, default=1)
    metrics.set_defaults(handler=cmd_metrics)

    fuse = commands.add_parser('fuse', help='marginals to a panoptic map')
    fuse.add_argument('--config', required=True)
    fuse.add_argument('--q', required=True, help='semantic marginals')
    fuse.add_argument('--r', required=True, help='instance marginals')
    fuse.add_argument('--detections',
                      help='detections JSON naming the instance classes')
    fuse.add_argument('--mode', choices=(JOINT, PASTE), default=JOINT)
    fuse.add_argument('--overlap-threshold', type=float, default=0.5)
    fuse.add_argument('--min-area', type=int, default=16)
    fuse.add_argument('--out', required=True, help='output directory')
    fuse.set_defaults(handler=cmd_fuse)

    oracle = commands.add_parser(
        'oracle', help='exact MAP and marginals of a tiny instance')
    oracle.add_argument('--config')
    _add_problem_arguments(oracle, required=False)
    oracle.add_argument('--height', type=int, default=2)
    oracle.add_argument('--width', type=int, default=2)
    oracle.set_defaults(handler=cmd_oracle)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=LOG_LEVELS[min(args.verbose, len(LOG_LEVELS) - 1)],
        stream=sys.stderr,
        format='%(levelname)s %(name)s: %(message)s',
    )
    try:
        args.handler(args)
    except (InputError, OSError) as e:
        sys.stderr.write('bcrf: error: %s\n' % e)
        return 1
    except (InvariantError, TrainingError) as e:
        sys.stderr.write('bcrf: error: %s\n' % e)
        return 2
    return 0


if __name__ == '__main__':
    sys.exit(main())
