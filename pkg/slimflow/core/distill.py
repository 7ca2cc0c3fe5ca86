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

'''One-step distillation guided by a frozen 2-rectified flow.

The student starts as a copy of the flow (or from a random
initialization) and learns the one-step map
``x1 -> x1 - v(x1, 1)``. Two targets are combined:

* precise endpoints of the flow, simulated offline (the distillation
  pairs);
* a cheap few-step Euler guide computed online from the frozen flow on
  fresh noise.

In the ``student_first_sg`` variant the first guide step is taken with
the student's own velocity under a stop-gradient; in ``teacher_first``
every guide step uses the frozen flow.
'''

import dataclasses
import logging

import numpy as np
import pandas as pd

from .errors import ContractViolation, NonFiniteError
from .log import logger
from .nn import (
    AdamState,
    EmaState,
    ForwardTape,
    VelocityField,
    adam_step,
    ema_update
)
from .train import TrainResult


_log = logging.getLogger(__name__)

VARIANTS = ('student_first_sg', 'teacher_first')
VARIANT_ALIASES = {'sg': 'student_first_sg', 'teacher': 'teacher_first'}
INITS = ('copy', 'random')


@dataclasses.dataclass
class DistillConfig(object):
    '''Settings of :func:`flow_guided_distill`.

    ``eps`` clamps the guide's intermediate time to ``(eps, 1 - eps)``.
    ``guide_steps`` is the number of evaluations in the online guide; 2
    is the two-step Euler map.
    ``init`` is ``'copy'`` to start the student from the flow's weights
    or ``'random'`` for a fresh initialization seeded with ``seed``.
    '''

    use_two_step: bool = True
    variant: str = 'student_first_sg'
    eps: float = 0.01
    guide_steps: int = 2
    init: str = 'copy'
    loss_kind: str = 'squared_error'
    iters: int = 10000
    batch_size: int = 256
    lr: float = 1e-3
    ema_ratio: float = 0.999
    seed: int = 0
    history_every: int = 100

    def __post_init__(self):
        self.variant = VARIANT_ALIASES.get(self.variant, self.variant)
        if self.variant not in VARIANTS:
            raise ContractViolation('unknown variant {!r}'.format(
                self.variant))
        if not 0.0 < self.eps < 0.5:
            raise ContractViolation('eps must be in (0, 0.5)')
        if self.guide_steps < 2:
            raise ContractViolation('the guide needs at least 2 steps')
        if self.init not in INITS:
            raise ContractViolation('unknown init {!r}'.format(self.init))
        if self.loss_kind != 'squared_error':
            raise ContractViolation('unknown loss {!r}'.format(
                self.loss_kind))
        if self.iters < 0 or self.batch_size < 1 or self.history_every < 1:
            raise ContractViolation('iters, batch_size or history_every '
                                    'out of range')


def _one_step(student, x1):
    tape = ForwardTape()
    out = student.forward(x1, 1.0, tape)
    return x1 - out, tape


def _match(student, x1, target):
    '''Squared error of the student's one-step output against
    ``target``, with gradients through the student only.'''
    x1 = np.atleast_2d(np.asarray(x1, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if not len(x1):
        raise ContractViolation('empty batch')
    if x1.shape != target.shape:
        raise ContractViolation('noise {} and targets {} disagree'.format(
            x1.shape, target.shape))
    one_step, tape = _one_step(student, x1)
    diff = one_step - target
    loss = float(np.mean(np.sum(diff * diff, axis=1)))
    # d(one_step)/d(out) = -1
    return student.backward(tape, -2.0 * diff / len(diff), loss)


def distill_loss(student, x1, target):
    '''Mean squared error between ``x1 - student(x1, 1)`` and
    precomputed ``target`` endpoints.

    Returns
    -------
    GradTape
    '''
    return _match(student, x1, target)


def _guide(frozen, x_t, t, steps):
    # Euler from t down to 0 in ``steps - 1`` even steps per row.
    x = x_t
    for j in range(steps - 1):
        hi = t * (1.0 - j / (steps - 1))
        lo = t * (1.0 - (j + 1) / (steps - 1))
        x = x - (hi - lo)[:, None] * frozen(x, hi)
    return x


def two_step_target(student, frozen, x1, t, variant='student_first_sg',
                    guide_steps=2):
    '''The online guide endpoint for noise ``x1`` and times ``t``.'''
    x1 = np.atleast_2d(np.asarray(x1, dtype=np.float64))
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (len(x1),))
    first = student if variant == 'student_first_sg' else frozen
    x_t = x1 - (1.0 - t)[:, None] * first(x1, 1.0)
    return _guide(frozen, x_t, t, guide_steps)


def two_step_loss(student, frozen, x1, t, variant='student_first_sg',
                  eps=0.01, guide_steps=2, sg_field=None):
    '''Squared error between the student's one-step output and the
    few-step guide of ``frozen``.

    The guide is a constant target: no gradient flows through it, in
    particular not through the student's own velocity in the
    ``student_first_sg`` variant. ``sg_field`` replaces the student in
    that first guide step; it defaults to the student itself.

    Raises
    ------
    ContractViolation
        If any ``t`` lies outside the open interval ``(eps, 1 - eps)``.
    '''
    variant = VARIANT_ALIASES.get(variant, variant)
    if variant not in VARIANTS:
        raise ContractViolation('unknown variant {!r}'.format(variant))
    t = np.asarray(t, dtype=np.float64)
    if np.any((t <= eps) | (t >= 1.0 - eps)):
        raise ContractViolation(
            'guide time outside ({}, {})'.format(eps, 1.0 - eps))
    target = two_step_target(sg_field or student, frozen, x1, t, variant,
                             guide_steps)
    return _match(student, x1, target)


def combined_loss(student, frozen, x1, target, x1_fresh, t, config):
    '''``L_distill + L_2-step`` (the second term only when
    ``config.use_two_step``).

    Returns
    -------
    tuple
        ``(GradTape, terms)`` where ``terms`` maps each loss name to its
        value.
    '''
    grads = distill_loss(student, x1, target)
    terms = {'distill': grads.loss}
    if config.use_two_step:
        guided = two_step_loss(student, frozen, x1_fresh, t, config.variant,
                               config.eps, config.guide_steps)
        terms['two_step'] = guided.loss
        grads = grads + guided
    return grads, terms


def _guide_times(rng, n, eps):
    # open interval (eps, 1 - eps)
    t = rng.uniform(eps, 1.0 - eps, size=n)
    return np.clip(t, np.nextafter(eps, 1.0), np.nextafter(1.0 - eps, 0.0))


def flow_guided_distill(frozen, pairs, config, student_spec=None,
                        stage='distill'):
    '''Distill ``frozen`` into a one-step student.

    The student starts from a copy of ``frozen``'s weights, or from a
    fresh initialization when ``config.init`` is ``'random'``.
    Every iteration draws a batch of distillation pairs and, for the
    guide term, a fresh batch of noise with one time per row uniform in
    ``(eps, 1 - eps)``. ``frozen`` is never modified.

    Parameters
    ----------
    frozen : VelocityField
        The 2-rectified flow.
    pairs : PairDataset
        ``(x1, ODE[frozen](x1))`` pairs.
    config : DistillConfig
    student_spec : MlpSpec, optional
        Must equal ``frozen.spec`` when given.

    Returns
    -------
    TrainResult
        ``field`` is the EMA student.

    Raises
    ------
    ContractViolation
        On a student spec that differs from the flow's.
    NonFiniteError
        If the loss becomes non-finite; ``index`` is the iteration.
    '''
    if student_spec is not None and student_spec != frozen.spec:
        raise ContractViolation(
            'student {} cannot be initialized from a {} flow'.format(
                student_spec, frozen.spec))
    if pairs.dim != frozen.in_dim:
        raise ContractViolation('{}-d pairs for a {}-d flow'.format(
            pairs.dim, frozen.in_dim))
    if config.iters and not len(pairs):
        raise ContractViolation('no distillation pairs')

    spec = frozen.spec
    if config.init == 'copy':
        student = frozen.copy()
    else:
        student = VelocityField.initialize(spec, config.seed)
    adam = AdamState.for_field(student, lr=config.lr)
    ema = EmaState.for_field(student, config.ema_ratio)
    rng = np.random.default_rng(config.seed)
    n, d = config.batch_size, spec.in_dim

    history = []
    for k in range(config.iters):
        x1, target = pairs.batch(rng.integers(len(pairs), size=n))
        fresh = rng.standard_normal((n, d))
        t = _guide_times(rng, n, config.eps)
        grads, terms = combined_loss(student, frozen, x1, target, fresh, t,
                                     config)
        if not np.isfinite(grads.loss):
            raise NonFiniteError('loss', k, 'at iteration {}'.format(k))
        adam_step(adam, student, grads)
        ema_update(ema, student)
        logger.log_iteration(stage, k, config.iters, grads.loss,
                             terms=terms)
        if k % config.history_every == 0 or k == config.iters - 1:
            row = {'iteration': k, 'loss': grads.loss}
            row.update(terms)
            history.append(row)

    _log.debug('%s finished after %d iterations', stage, config.iters)
    return TrainResult(ema.as_field(spec), student, ema,
                       pd.DataFrame(history, columns=[
                           'iteration', 'loss', 'distill', 'two_step']))
