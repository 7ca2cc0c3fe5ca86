#
#  Copyright (c) 2026 The slimflow authors
#
#  Permission is hereby granted, free of charge, to any person obtaining a copy
#  of this software and associated documentation files (the "Software"), to
#  deal in the Software without restriction, including without limitation the
#  rights to use, copy, modify, merge, publish, distribute, sublicense, and/or
#  sell copies of the Software, and to permit persons to whom the Software is
#  furnished to do so, subject to the following conditions:
#
#  The above copyright notice and this permission notice shall be included in
#  all copies or substantial portions of the Software.
#
#  THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
#  IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
#  FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
#  AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
#  LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING
#  FROM, OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS
#  IN THE SOFTWARE.
#

'''Command line interface for slimflow.

Run ``python -m slimflow <subcommand> --help`` for the options of each
stage. Every subcommand reads the same JSON config (``--config``);
flags override the file. Exit status is 0 on success, 1 on a usage
error and 2 when a stage fails.
'''

import argparse
import dataclasses
import logging
import os
import sys

from . import data
from ._version import __version__
from .config import RunConfig
from .distill import flow_guided_distill
from .errors import ContractViolation, SlimFlowError, UsageError
from .log import logger
from .metrics import nfe_sweep
from .schedules import BetaSchedule
from .solvers import SolverSpec
from .train import augment_pairs, train_flow


_log = logging.getLogger(__name__)

REFERENCE_SEED_OFFSET = 100
PLOT_TRAJECTORIES = 64
PLOT_TRAJECTORY_STEPS = 20


class ArgumentParser(argparse.ArgumentParser):
    '''An :class:`argparse.ArgumentParser` that raises instead of
    exiting on bad arguments.'''

    def error(self, message):
        raise UsageError('{}: {}'.format(self.prog, message))


def _on_off(text):
    if text not in ('on', 'off'):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == 'on'


def _solver(text):
    try:
        return SolverSpec.parse(text)
    except (SlimFlowError, ValueError) as e:
        raise argparse.ArgumentTypeError(str(e))


def _load_config(args):
    return RunConfig.load(args.config, args.seed)


def _start(stage, config, **fields):
    logger.log_stage_start(stage, config.hash, config.seed, **fields)
    _log.info('%s: config %s, seed %d', stage, config.hash[:12],
              config.seed)


def _reference(config, n):
    return data.sample_data(config.distribution(), n,
                            config.seed + REFERENCE_SEED_OFFSET)


def _write_result(result, out, history=None):
    data.save_checkpoint(out, result.raw, result.ema.shadow)
    if history:
        data.write_table_csv(history, result.history)
    _log.info('wrote %s', out)


def train_teacher(args):
    config = _load_config(args)
    _start('train-teacher', config)
    train_config = config.teacher_train_config(**_periodic(args))
    if args.iters is not None:
        train_config = dataclasses.replace(train_config, iters=args.iters)
    result = train_flow(train_config, config.distribution(),
                        config.teacher_spec())
    _write_result(result, args.out, args.history)
    return result


def _periodic(args):
    every = getattr(args, 'checkpoint_every', 0) or 0
    kwargs = {'checkpoint_every': every,
              'eval_every': getattr(args, 'eval_every', 0) or 0}
    if every:
        kwargs['checkpoint_dir'] = args.checkpoint_dir or \
            os.path.dirname(os.path.abspath(args.out))
    return kwargs


# Which solver kinds each refinement flag applies to.
_SOLVER_FLAGS = {'nfe': ('euler', 'heun', 'rk45'), 'rtol': ('rk45',),
                 't_mid': ('two_step',)}


def _refine(solver, args):
    changes = {}
    for flag, kinds in _SOLVER_FLAGS.items():
        value = getattr(args, flag, None)
        if value is None or solver.kind not in kinds:
            continue
        if flag == 'nfe':
            key = 'max_nfe' if solver.kind == 'rk45' else 'n_steps'
            changes[key] = value
        elif flag == 'rtol':
            changes.update(rtol=value, atol=value)
        else:
            changes['t_mid'] = value
    try:
        return dataclasses.replace(solver, **changes)
    except ContractViolation as e:
        raise UsageError(str(e))


def _solvers(args, default):
    '''The ``--solver`` choices (or ``default``) refined by ``--nfe``,
    ``--rtol`` and ``--t-mid``.

    ``--nfe`` is the step count of euler and heun and the evaluation
    cap of rk45. A flag that applies to none of the solvers is a usage
    error.
    '''
    solvers = args.solver or default
    if not isinstance(solvers, list):
        solvers = [solvers]
    for flag, kinds in _SOLVER_FLAGS.items():
        if getattr(args, flag, None) is not None and not any(
                s.kind in kinds for s in solvers):
            raise UsageError('--{} does not apply to {}'.format(
                flag.replace('_', '-'),
                ', '.join(s.label for s in solvers)))
    return [_refine(s, args) for s in solvers]


def _solver_flags(parser):
    parser.add_argument('--nfe', type=int,
                        help='steps for euler and heun, evaluation cap '
                             'for rk45')
    parser.add_argument('--rtol', type=float, help='rk45 tolerance')
    parser.add_argument('--t-mid', type=float,
                        help='intermediate time of two-step')


def gen_pairs(args):
    config = _load_config(args)
    _start('gen-pairs', config, teacher=args.teacher)
    teacher, _ = data.load_checkpoint(args.teacher)
    solver, = _solvers(args, [config.pair_solver()])
    n = config.pair_count if args.n is None else args.n
    workers = config.workers if args.workers is None else args.workers
    ds = data.generate_pairs(teacher, n, solver, config.seed, workers)
    data.save_pairs(ds, args.out)
    _log.info('wrote %d pairs to %s', ds.count, args.out)
    return ds


def _schedule(args, config, iters):
    if args.schedule is None:
        return BetaSchedule.from_config(config['schedule'], iters)
    if args.schedule == 'constant':
        return BetaSchedule.constant(args.beta0)
    section = {'kind': args.schedule, 'horizon': args.horizon,
               'k_step': args.k_step}
    return BetaSchedule.from_config(section, iters)


def reflow(args):
    config = _load_config(args)
    _start('reflow', config, pairs=args.pairs)
    pairs = data.load_pairs(args.pairs)
    train_config = config.student_train_config(**_periodic(args))
    if args.iters is not None:
        train_config = dataclasses.replace(train_config, iters=args.iters)
    if args.augment is not None:
        doc = config.as_dict()
        doc['augment']['enabled'] = args.augment
        config = RunConfig.from_dict(doc)
    involution = config.involution()
    if involution is not None:
        pairs = augment_pairs(pairs, involution)
    schedule = _schedule(args, config, train_config.iters)
    logger.log_event('reflow', 'schedule', **schedule.as_dict())
    result = train_flow(train_config, pairs, config.student_spec(),
                        schedule)
    _write_result(result, args.out, args.history)
    return result


def distill(args):
    config = _load_config(args)
    _start('distill', config, flow=args.source)
    frozen, _ = data.load_checkpoint(args.source)
    pairs = data.load_pairs(args.pairs)
    overrides = {}
    if args.two_step is not None:
        overrides['use_two_step'] = args.two_step
    if args.variant is not None:
        overrides['variant'] = args.variant
    if args.init is not None:
        overrides['init'] = args.init
    if args.iters is not None:
        overrides['iters'] = args.iters
    result = flow_guided_distill(frozen, pairs,
                                 config.distill_config(**overrides))
    _write_result(result, args.out, args.history)
    return result


def _evaluate(config, paths, solvers=None, n_samples=None):
    section = config['eval']
    n_samples = n_samples or int(section['n_samples'])
    reference = _reference(config, n_samples)
    solvers = solvers or config.eval_solvers()
    reports = []
    for path in paths:
        field, _ = data.load_checkpoint(path)
        name = os.path.splitext(os.path.basename(path))[0]
        for report in nfe_sweep(field, solvers, n_samples, reference,
                                config.seed, name, **config.eval_options()):
            logger.log_report('eval', report)
            reports.append(report)
    return reports


def evaluate(args):
    config = _load_config(args)
    _start('eval', config, checkpoints=args.checkpoints)
    solvers = _solvers(args, config.eval_solvers())
    reports = _evaluate(config, args.checkpoints, solvers, args.n_samples)
    data.write_reports_csv(args.out, reports)
    _log.info('wrote %d reports to %s', len(reports), args.out)
    return reports


def pipeline(args):
    '''teacher -> pairs -> reflow -> pairs -> distill (+ naive) -> eval.

    Writes four checkpoints (``teacher``, ``reflow``, ``distill`` and,
    unless ``distill.baseline`` is off, ``distill_naive``), the two pair
    files, ``report.csv`` and the student's ``reflow_history.csv``.
    '''
    config = _load_config(args)
    _start('pipeline', config)
    out = args.out_dir
    os.makedirs(out, exist_ok=True)

    def path(name):
        return os.path.join(out, name)

    teacher = train_flow(config.teacher_train_config(),
                         config.distribution(), config.teacher_spec(),
                         stage='train-teacher')
    data.save_checkpoint(path('teacher.ckpt'), teacher.raw,
                         teacher.ema.shadow)

    solver = config.pair_solver()
    pairs = data.generate_pairs(teacher.field, config.pair_count, solver,
                                config.seed + 10, config.workers)
    data.save_pairs(pairs, path('reflow_pairs.bin'))
    involution = config.involution()
    if involution is not None:
        pairs = augment_pairs(pairs, involution)

    student = train_flow(config.student_train_config(), pairs,
                         config.student_spec(), config.schedule())
    data.save_checkpoint(path('reflow.ckpt'), student.raw,
                         student.ema.shadow)
    data.write_table_csv(path('reflow_history.csv'), student.history)

    distill_pairs = data.generate_pairs(
        student.field, config.distill_pair_count, solver, config.seed + 20,
        config.workers)
    data.save_pairs(distill_pairs, path('distill_pairs.bin'))

    names = ['teacher.ckpt', 'reflow.ckpt']
    runs = [('distill', True)]
    if config['distill'].get('baseline', True):
        runs.append(('distill_naive', False))
    for name, two_step in runs:
        one_step = flow_guided_distill(
            student.field, distill_pairs,
            config.distill_config(use_two_step=two_step), stage=name)
        data.save_checkpoint(path(name + '.ckpt'), one_step.raw,
                             one_step.ema.shadow)
        names.append(name + '.ckpt')

    reports = _evaluate(config, [path(n) for n in names])
    data.write_reports_csv(path('report.csv'), reports)
    _log.info('pipeline finished; results in %s', out)
    return reports


def plot_data(args):
    '''Write CSV tables for sample, trajectory and NFE plots.'''
    config = _load_config(args)
    _start('plot-data', config, checkpoint=args.checkpoint)
    os.makedirs(args.out_dir, exist_ok=True)
    field, _ = data.load_checkpoint(args.checkpoint)
    n = int(config['eval']['n_samples'])
    columns = ['x{}'.format(i) for i in range(field.in_dim)]
    x1 = data.index_noise(n, field.in_dim, config.seed)

    rows = []
    for solver in config.eval_solvers():
        for point in solver.solve(field, x1).endpoint:
            rows.append(dict(zip(columns, point), source='generated',
                             solver=solver.label))
    for point in _reference(config, n):
        rows.append(dict(zip(columns, point), source='reference',
                         solver=''))
    data.write_table_csv(os.path.join(args.out_dir, 'samples.csv'), rows,
                         ['source', 'solver'] + columns)

    traj = SolverSpec.euler(PLOT_TRAJECTORY_STEPS).solve(
        field, x1[:PLOT_TRAJECTORIES], keep_path=True)
    rows = [dict(zip(columns, state[i]), sample=i, t=t)
            for t, state in zip(traj.times, traj.states)
            for i in range(len(state))]
    data.write_table_csv(os.path.join(args.out_dir, 'trajectories.csv'),
                         rows, ['sample', 't'] + columns)

    sweep = [SolverSpec.euler(k) for k in (1, 2, 4, 8, 16, 32)]
    sweep += [SolverSpec.heun(k) for k in (1, 2, 4, 8, 16)]
    reports = nfe_sweep(field, sweep, n, _reference(config, n), config.seed,
                        os.path.basename(args.checkpoint),
                        **config.eval_options())
    data.write_reports_csv(os.path.join(args.out_dir, 'sweep.csv'), reports)
    return reports


def _common(parser):
    parser.add_argument('--config', help='JSON run configuration')
    parser.add_argument('--seed', type=int,
                        help='overrides the config and SLIMFLOW_SEED')


def _training(parser):
    parser.add_argument('--iters', type=int)
    parser.add_argument('--history', help='write the loss history as CSV')
    parser.add_argument('--checkpoint-every', type=int, default=0,
                        help='also checkpoint every N iterations')
    parser.add_argument('--checkpoint-dir')
    parser.add_argument('--eval-every', type=int, default=0,
                        help='log straightness and one-step sw2 every N '
                             'iterations')


def build_parser():
    parser = ArgumentParser(prog='slimflow', description=__doc__.split(
        '\n\n')[0])
    parser.add_argument('--version', action='version',
                        version='%(prog)s ' + __version__)
    parser.add_argument('-v', '--verbose', action='store_true')
    parser.add_argument('--log', help='append a json-lines run log here')
    sub = parser.add_subparsers(dest='command', parser_class=ArgumentParser)
    sub.required = True

    p = sub.add_parser('train-teacher', help='train a 1-rectified flow')
    _common(p)
    _training(p)
    p.add_argument('--out', required=True)
    p.set_defaults(func=train_teacher)

    p = sub.add_parser('gen-pairs', help='simulate (noise, sample) pairs')
    _common(p)
    p.add_argument('--teacher', required=True)
    p.add_argument('--n', type=int)
    p.add_argument('--solver', type=_solver,
                   help='euler, heun, rk45 or two-step; euler:N, heun:N, '
                        'rk45:RTOL and two-step:T are shorthands')
    _solver_flags(p)
    p.add_argument('--workers', type=int)
    p.add_argument('--out', required=True)
    p.set_defaults(func=gen_pairs)

    p = sub.add_parser('reflow', help='train a student by annealing reflow')
    _common(p)
    _training(p)
    p.add_argument('--pairs', required=True)
    p.add_argument('--schedule', choices=['constant', 'linear',
                                          'exponential', 'cosine_half',
                                          'cosine_full'])
    p.add_argument('--beta0', type=float, default=0.0)
    p.add_argument('--horizon', type=float)
    p.add_argument('--k-step', type=float)
    p.add_argument('--augment', type=_on_off, metavar='on|off')
    p.add_argument('--out', required=True)
    p.set_defaults(func=reflow)

    p = sub.add_parser('distill', help='flow-guided one-step distillation')
    _common(p)
    p.add_argument('--from', dest='source', required=True,
                   help='2-rectified flow checkpoint')
    p.add_argument('--pairs', required=True)
    p.add_argument('--two-step', type=_on_off, metavar='on|off')
    p.add_argument('--variant', choices=['sg', 'teacher'])
    p.add_argument('--init', choices=['copy', 'random'],
                   help='start the student from the flow or at random')
    p.add_argument('--iters', type=int)
    p.add_argument('--history')
    p.add_argument('--out', required=True)
    p.set_defaults(func=distill)

    p = sub.add_parser('eval', help='evaluate checkpoints')
    _common(p)
    p.add_argument('checkpoints', nargs='+')
    p.add_argument('--solver', type=_solver, action='append')
    _solver_flags(p)
    p.add_argument('--n-samples', type=int)
    p.add_argument('--out', required=True)
    p.set_defaults(func=evaluate)

    p = sub.add_parser('pipeline', help='run every stage')
    _common(p)
    p.add_argument('--out-dir', required=True)
    p.set_defaults(func=pipeline)

    p = sub.add_parser('plot-data', help='write CSV tables for plots')
    _common(p)
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--out-dir', required=True)
    p.set_defaults(func=plot_data)
    return parser


def run(argv=None):
    '''Run the command line ``argv`` and return the exit status.'''
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        sys.stderr.write('{}\n'.format(e))
        return 1
    except SystemExit as e:
        # --help and --version
        return e.code or 0
    if args.log:
        logger.configure(logfile=args.log)
    try:
        args.func(args)
    except UsageError as e:
        sys.stderr.write('{}\n'.format(e))
        return 1
    except (SlimFlowError, OSError) as e:
        _log.debug('stage failed', exc_info=True)
        sys.stderr.write('slimflow: {}\n'.format(e))
        return 2
    finally:
        logger.close()
        if args.log:
            logger.configure(logfile=None)
    return 0


def main(argv=None):
    args = sys.argv[1:] if argv is None else argv
    logging.basicConfig(
        level=logging.DEBUG if '-v' in args or '--verbose' in args
        else logging.WARNING,
        format='%(levelname)s %(name)s: %(message)s')
    sys.exit(run(args))
