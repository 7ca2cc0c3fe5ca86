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

'''Rectified flow, reflow and annealing reflow training.

All three objectives regress ``v(x_t, t)`` onto the displacement
``x1 - x0`` of an interpolant ``x_t = (1 - t) x0 + t x1``; they differ
only in how ``(x0, x1)`` is coupled. The loss of a batch is the mean
over rows of the squared error summed over coordinates.
'''

import dataclasses
import logging
import os

import numpy as np
import pandas as pd

from .data import PairDataset, ToyDistribution, save_checkpoint
from .errors import ContractViolation, NonFiniteError
from .log import logger
from .metrics import EvalReport, sliced_w2, straightness
from .nn import (
    AdamState,
    EmaState,
    ForwardTape,
    VelocityField,
    adam_step,
    ema_update
)
from .schedules import BetaSchedule, beta_at, blend_noise
from .solvers import SolverSpec


_log = logging.getLogger(__name__)

INVOLUTION_TOLERANCE = 1e-12


@dataclasses.dataclass
class TrainBatch(object):
    '''Coupled endpoints and per-row times of one training batch.'''

    x0: np.ndarray
    x1: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.x0 = np.atleast_2d(np.asarray(self.x0, dtype=np.float64))
        self.x1 = np.atleast_2d(np.asarray(self.x1, dtype=np.float64))
        self.t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        if not len(self.x0):
            raise ContractViolation('empty batch')
        if self.x0.shape != self.x1.shape or len(self.t) != len(self.x0):
            raise ContractViolation(
                'batch rows disagree: x0 {}, x1 {}, t {}'.format(
                    self.x0.shape, self.x1.shape, self.t.shape))
        if np.any((self.t < 0.0) | (self.t > 1.0)):
            raise ContractViolation('time outside [0, 1]')

    @property
    def x_t(self):
        t = self.t[:, None]
        return (1.0 - t) * self.x0 + t * self.x1

    @property
    def target(self):
        return self.x1 - self.x0


class Involution(object):
    '''An orthogonal matrix ``R`` with ``R @ R == I``.

    Applying ``R`` to both members of a pair of a flow whose data is
    symmetric under ``R`` yields another valid pair.

    Raises
    ------
    ContractViolation
        If ``matrix`` is not square, not orthogonal or not
        self-inverse to within 1e-12.
    '''

    def __init__(self, matrix):
        R = np.array(matrix, dtype=np.float64)
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise ContractViolation('involution must be a square matrix')
        eye = np.eye(len(R))
        if np.max(np.abs(R @ R - eye)) > INVOLUTION_TOLERANCE:
            raise ContractViolation('matrix is not an involution')
        if np.max(np.abs(R.T @ R - eye)) > INVOLUTION_TOLERANCE:
            raise ContractViolation('involution must be orthogonal')
        self.matrix = R

    @classmethod
    def identity(cls, dim):
        return cls(np.eye(dim))

    @classmethod
    def reflection(cls, dim, axes=(0,)):
        '''Negate the coordinates in ``axes`` (a horizontal flip for
        ``axes=(0,)`` in 2-D).'''
        diag = np.ones(dim)
        for axis in axes:
            if not 0 <= axis < dim:
                raise ContractViolation('axis {} out of range'.format(axis))
            diag[axis] = -1.0
        return cls(np.diag(diag))

    @classmethod
    def transposition(cls, dim, swaps):
        '''Swap the coordinate pairs in ``swaps``, which must be
        disjoint.'''
        perm = np.arange(dim)
        seen = set()
        for i, j in swaps:
            if {i, j} & seen or not (0 <= i < dim and 0 <= j < dim):
                raise ContractViolation('swaps must be disjoint and in '
                                        'range')
            seen.update((i, j))
            perm[i], perm[j] = j, i
        return cls(np.eye(dim)[perm])

    @classmethod
    def from_config(cls, section, dim):
        section = dict(section or {})
        kind = section.get('kind', 'reflection')
        if kind == 'reflection':
            return cls.reflection(dim, section.get('axes', [0]))
        if kind == 'transposition':
            return cls.transposition(dim, section.get('swaps', [[0, 1]]))
        if kind == 'matrix':
            return cls(section['matrix'])
        raise ContractViolation('unknown involution {!r}'.format(kind))

    @property
    def dim(self):
        return len(self.matrix)

    def apply(self, x):
        return np.asarray(x, dtype=np.float64) @ self.matrix.T

    def as_dict(self):
        return {'kind': 'matrix', 'matrix': self.matrix.tolist()}


def _regress(field, batch):
    tape = ForwardTape()
    pred = field.forward(batch.x_t, batch.t, tape)
    diff = pred - batch.target
    loss = float(np.mean(np.sum(diff * diff, axis=1)))
    return field.backward(tape, 2.0 * diff / len(diff), loss)


def _times(t, n, rng):
    if t is None:
        rng = rng if rng is not None else np.random.default_rng()
        return rng.random(n)
    return np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))


def rf_loss(field, x0, x1, t=None, rng=None):
    '''Rectified flow loss on independently drawn ``x0`` and ``x1``.

    ``t`` defaults to one uniform draw per row from ``rng``.

    Returns
    -------
    GradTape
        The loss and its gradient with respect to the weights.
    '''
    x0 = np.atleast_2d(x0)
    return _regress(field, TrainBatch(x0, x1, _times(t, len(x0), rng)))


def reflow_loss(field, x1, x0_hat, t=None, rng=None):
    '''Reflow loss on teacher pairs ``(x1, x0_hat)``.'''
    x1 = np.atleast_2d(x1)
    return _regress(field, TrainBatch(x0_hat, x1, _times(t, len(x1), rng)))


def annealing_reflow_loss(field, x1, x0_hat, x1_prime, beta, t=None,
                          rng=None):
    '''Reflow loss with fresh noise ``x1_prime`` blended into ``x1``.

    Each row uses ``x1^beta = sqrt(1 - beta^2) x1 + beta x1_prime`` as
    its noise endpoint. ``beta = 0`` is exactly :func:`reflow_loss`.
    '''
    x1 = np.atleast_2d(x1)
    x1_prime = np.atleast_2d(x1_prime)
    blended = blend_noise(x1, x1_prime, beta)
    return _regress(field, TrainBatch(x0_hat, blended,
                                      _times(t, len(x1), rng)))


def augment_pairs(pairs, involution):
    '''Append ``(R x1, R x0_hat)`` for every pair.

    The caller is responsible for the data being symmetric under ``R``.
    '''
    if involution.dim != pairs.dim:
        raise ContractViolation(
            '{}-d involution applied to {}-d pairs'.format(
                involution.dim, pairs.dim))
    provenance = dict(pairs.provenance)
    provenance['augment'] = involution.as_dict()
    return PairDataset(
        np.concatenate([pairs.x1, involution.apply(pairs.x1)]),
        np.concatenate([pairs.x0_hat, involution.apply(pairs.x0_hat)]),
        provenance)


@dataclasses.dataclass
class TrainConfig(object):
    '''Optimization settings shared by teacher and student training.

    ``eval_every`` and ``checkpoint_every`` are in iterations; 0 turns
    periodic evaluation or checkpoints off. Periodic checkpoints are
    written into ``checkpoint_dir``.
    '''

    iters: int = 20000
    batch_size: int = 256
    lr: float = 1e-3
    ema_ratio: float = 0.999
    seed: int = 0
    history_every: int = 100
    eval_every: int = 0
    eval_samples: int = 512
    checkpoint_every: int = 0
    checkpoint_dir: str = None

    def __post_init__(self):
        if self.iters < 0 or self.batch_size < 1:
            raise ContractViolation('iters must be >= 0 and batch_size '
                                    '>= 1')
        if self.lr <= 0:
            raise ContractViolation('learning rate must be positive')
        if self.history_every < 1:
            raise ContractViolation('history_every must be at least 1')
        if self.checkpoint_every and not self.checkpoint_dir:
            raise ContractViolation('checkpoint_every needs a '
                                    'checkpoint_dir')


@dataclasses.dataclass
class TrainResult(object):
    '''Outcome of :func:`train_flow`.

    ``field`` carries the EMA weights; ``raw`` the optimizer's weights.
    ``history`` has one row per logged iteration; its ``straightness``
    column is filled where a periodic evaluation ran.
    '''

    field: VelocityField
    raw: VelocityField
    ema: EmaState
    history: pd.DataFrame
    reports: list = dataclasses.field(default_factory=list)
    checkpoints: list = dataclasses.field(default_factory=list)


def _periodic_report(stage, field, reference, config, k):
    solver = SolverSpec.euler(1)
    x1 = np.random.default_rng([config.seed, k]).standard_normal(
        (config.eval_samples, field.in_dim))
    one_step = solver.solve(field, x1).endpoint
    report = EvalReport(
        '{}@{}'.format(stage, k), solver, 1,
        straightness(field, seed=config.seed),
        sliced_w2(one_step, reference, seed=config.seed),
        field.param_count, field.macs, config.seed)
    logger.log_report(stage, report)
    return report


def train_flow(config, source, spec, schedule=None, init=None,
               stage=None):
    '''Train a velocity field.

    Parameters
    ----------
    config : TrainConfig
    source : ToyDistribution or PairDataset
        A distribution trains a 1-rectified flow against independent
        noise with :func:`rf_loss`. A pair dataset trains a student
        with :func:`annealing_reflow_loss`, drawing fresh noise every
        iteration.
    spec : MlpSpec
        Architecture of the trained field.
    schedule : BetaSchedule, optional
        ``beta(k)`` for student training; defaults to
        :meth:`BetaSchedule.default_for` ``config.iters``.
    init : VelocityField, optional
        Starting weights; defaults to a Kaiming initialization seeded
        with ``config.seed``.

    Returns
    -------
    TrainResult

    Raises
    ------
    NonFiniteError
        If the loss becomes non-finite; ``index`` is the iteration.
    '''
    pairs = isinstance(source, PairDataset)
    if not pairs and not isinstance(source, ToyDistribution):
        raise ContractViolation('source must be a distribution or pairs')
    if source.dim != spec.in_dim:
        raise ContractViolation('{}-d source for a {}-d field'.format(
            source.dim, spec.in_dim))
    if pairs and not len(source):
        raise ContractViolation('no pairs to train on')
    stage = stage or ('reflow' if pairs else 'train-teacher')
    if pairs and schedule is None:
        schedule = BetaSchedule.default_for(config.iters)

    field = init.copy() if init is not None else \
        VelocityField.initialize(spec, config.seed)
    adam = AdamState.for_field(field, lr=config.lr)
    ema = EmaState.for_field(field, config.ema_ratio)
    rng = np.random.default_rng(config.seed)
    reference = None
    if config.eval_every:
        reference = source.x0_hat if pairs else source.draw(
            np.random.default_rng([config.seed, 0]), config.eval_samples)

    history = []
    reports = []
    checkpoints = []
    n, d = config.batch_size, spec.in_dim
    for k in range(config.iters):
        beta = None
        if pairs:
            beta = beta_at(schedule, k)
            x1, x0_hat = source.batch(rng.integers(len(source), size=n))
            x1_prime = rng.standard_normal((n, d))
            grads = annealing_reflow_loss(field, x1, x0_hat, x1_prime, beta,
                                          rng.random(n))
        else:
            x0 = source.draw(rng, n)
            grads = rf_loss(field, x0, rng.standard_normal((n, d)),
                            rng.random(n))
        if not np.isfinite(grads.loss):
            raise NonFiniteError('loss', k, 'at iteration {}'.format(k))
        adam_step(adam, field, grads)
        ema_update(ema, field)

        logger.log_iteration(stage, k, config.iters, grads.loss, beta)
        done = k + 1
        row = {'iteration': k, 'beta': beta, 'loss': grads.loss,
               'straightness': np.nan}
        if config.eval_every and done % config.eval_every == 0:
            report = _periodic_report(stage, ema.as_field(spec), reference,
                                      config, done)
            reports.append(report)
            row['straightness'] = report.straightness
            history.append(row)
        elif k % config.history_every == 0 or done == config.iters:
            history.append(row)
        if config.checkpoint_every and done % config.checkpoint_every == 0:
            path = os.path.join(config.checkpoint_dir,
                                '{}-{:07d}.ckpt'.format(stage, done))
            save_checkpoint(path, field, ema.shadow)
            checkpoints.append(path)

    _log.debug('%s finished after %d iterations', stage, config.iters)
    return TrainResult(ema.as_field(spec), field, ema,
                       pd.DataFrame(history,
                                    columns=['iteration', 'beta', 'loss',
                                             'straightness']),
                       reports, checkpoints)
