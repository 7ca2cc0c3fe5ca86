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

'''Annealing schedules ``k -> beta(k)`` and the noise blending operator.

Annealing reflow blends fresh noise into the noise end of every teacher
pair with weight ``beta(k)`` at iteration ``k``. A schedule starts at
``beta(0) = 1`` (independent pairs, plain rectified flow training) and
reaches ``0`` (pure reflow) at its horizon. The families are

=================  ==============================================
``constant``       ``beta0`` for every ``k`` (fixed-beta studies)
``linear``         ``1 - min(1, k / horizon)``
``exponential``    ``exp(-k / k_step)``, clamped to 0 once ``<= 1e-6``
``cosine_half``    ``cos(pi * min(1, k / horizon) / 2)``
``cosine_full``    ``(1 + cos(pi * min(1, k / horizon))) / 2``
=================  ==============================================

When no explicit horizon is given, ``linear`` uses ``6 * k_step`` and
the cosine families ``2 * k_step``.
'''

import dataclasses
import math

import numpy as np

from .errors import ContractViolation


KINDS = ('constant', 'linear', 'exponential', 'cosine_half', 'cosine_full')

# exp(-14) < 1e-6, so the exponential schedule is exactly 0 from
# 14 * k_step on.
EXPONENTIAL_FLOOR = 1e-6


@dataclasses.dataclass(frozen=True)
class BetaSchedule(object):
    '''A ``beta(k)`` annealing policy.

    Use the class methods rather than the constructor:

    .. code-block:: python

        BetaSchedule.linear(horizon=300000)
        BetaSchedule.exponential(k_step=50000)
        BetaSchedule.constant(0.3)
    '''

    kind: str = 'linear'
    beta0: float = 0.0
    horizon: float = None
    k_step: float = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractViolation('unknown schedule kind {!r}'.format(
                self.kind))
        if self.kind == 'constant':
            if not 0.0 <= self.beta0 <= 1.0:
                raise ContractViolation(
                    'beta0 must be in [0, 1], got {}'.format(self.beta0))
            return
        if self.horizon is None and self.k_step is None:
            raise ContractViolation(
                '{} schedule needs a horizon or k_step'.format(self.kind))
        if self.kind == 'exponential' and self.k_step is None:
            raise ContractViolation('exponential schedule needs k_step')
        for name in ('horizon', 'k_step'):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ContractViolation(
                    '{} must be positive, got {}'.format(name, value))

    @classmethod
    def constant(cls, beta0):
        return cls('constant', beta0=float(beta0))

    @classmethod
    def linear(cls, horizon=None, k_step=None):
        return cls('linear', horizon=horizon, k_step=k_step)

    @classmethod
    def exponential(cls, k_step):
        return cls('exponential', k_step=k_step)

    @classmethod
    def cosine_half(cls, k_step=None, horizon=None):
        return cls('cosine_half', horizon=horizon, k_step=k_step)

    @classmethod
    def cosine_full(cls, k_step=None, horizon=None):
        return cls('cosine_full', horizon=horizon, k_step=k_step)

    @classmethod
    def default_for(cls, total_iters):
        '''Linear anneal reaching 0 after 3/4 of ``total_iters``.'''
        return cls.linear(horizon=max(1.0, 0.75 * total_iters))

    @classmethod
    def from_config(cls, section, total_iters):
        '''Build from a ``schedule`` config section.

        An empty section, or one with neither ``horizon`` nor
        ``k_step``, gets :meth:`default_for` ``total_iters``.
        '''
        section = dict(section or {})
        kind = section.get('kind', 'linear')
        if kind == 'constant':
            return cls.constant(section.get('beta0', 0.0))
        horizon = section.get('horizon')
        k_step = section.get('k_step')
        if horizon is None and k_step is None:
            if kind == 'linear':
                return cls.default_for(total_iters)
            # same 3/4 horizon as the linear default
            k_step = max(1.0, 0.75 * total_iters / 6.0)
        return cls(kind, horizon=horizon, k_step=k_step)

    @property
    def effective_horizon(self):
        '''Iteration from which ``beta`` is 0 (``inf`` for constants).'''
        if self.kind == 'constant':
            return 0.0 if self.beta0 == 0.0 else math.inf
        if self.kind == 'exponential':
            return 14.0 * self.k_step
        if self.horizon is not None:
            return float(self.horizon)
        factor = 6.0 if self.kind == 'linear' else 2.0
        return factor * self.k_step

    def as_dict(self):
        return {k: v for k, v in dataclasses.asdict(self).items()
                if v is not None}


def beta_at(schedule, k):
    '''Value of ``schedule`` at iteration ``k >= 0``, in ``[0, 1]``.'''
    if k < 0:
        raise ContractViolation('iteration must be non-negative')
    kind = schedule.kind
    if kind == 'constant':
        return float(schedule.beta0)
    if kind == 'exponential':
        value = math.exp(-k / schedule.k_step)
        return 0.0 if value <= EXPONENTIAL_FLOOR else value
    frac = min(1.0, k / schedule.effective_horizon)
    if kind == 'linear':
        return 1.0 - frac
    if kind == 'cosine_half':
        return 0.0 if frac >= 1.0 else math.cos(math.pi * frac / 2.0)
    return (1.0 + math.cos(math.pi * frac)) / 2.0


def blend_noise(x1, x1_prime, beta):
    '''``sqrt(1 - beta**2) * x1 + beta * x1_prime``, componentwise.

    For independent standard normal ``x1`` and ``x1_prime`` the result
    is standard normal again. ``beta = 0`` returns ``x1`` and
    ``beta = 1`` returns ``x1_prime`` exactly.

    Raises
    ------
    ContractViolation
        If the shapes differ or ``beta`` is outside ``[0, 1]``.
    '''
    x1 = np.asarray(x1, dtype=np.float64)
    x1_prime = np.asarray(x1_prime, dtype=np.float64)
    if x1.shape != x1_prime.shape:
        raise ContractViolation('cannot blend shapes {} and {}'.format(
            x1.shape, x1_prime.shape))
    if not 0.0 <= beta <= 1.0:
        raise ContractViolation(
            'beta must be in [0, 1], got {}'.format(beta))
    if beta == 0.0:
        return x1.copy()
    if beta == 1.0:
        return x1_prime.copy()
    return math.sqrt(1.0 - beta * beta) * x1 + beta * x1_prime
