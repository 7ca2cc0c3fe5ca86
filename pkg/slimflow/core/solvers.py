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

'''ODE integrators for ``dx/dt = v(x, t)`` from ``t = 1`` (noise) to
``t = 0`` (data).

Four samplers are provided, selected with a :class:`SolverSpec`:

``euler(N)``
    ``N`` forward Euler steps on an even grid, ``N`` evaluations.
``heun(N)``
    ``N`` trapezoidal steps on an even grid; the final step lands on
    ``t = 0`` with a plain Euler step, so ``2N - 1`` evaluations.
``rk45(rtol, atol, max_nfe)``
    Dormand-Prince 5(4) with first-same-as-last stages, an initial
    step of 0.1, safety factor 0.9 and PI step-size control. Every
    batch row carries its own step size, so a row's result does not
    depend on the rest of the batch.
``two_step(t_mid)``
    The two-step Euler map ``x1 - (1-t) v(x1, 1) - t v(x_t, t)`` with
    ``x_t = x1 - (1-t) v(x1, 1)``, two evaluations.

All solvers accept a single state of shape ``(d,)`` or a batch of shape
``(n, d)`` and return a :class:`Trajectory` whose ``nfe`` counts the
(batched) field evaluations that were performed.
'''

import dataclasses
import logging

import numpy as np

from .errors import ContractViolation, NonFiniteError, SolverError


_log = logging.getLogger(__name__)

KINDS = ('euler', 'heun', 'rk45', 'two_step')

RK45_FIRST_STEP = 0.1
RK45_SAFETY = 0.9
RK45_MIN_FACTOR = 0.2
RK45_MAX_FACTOR = 10.0
# PI controller exponents for an order-5 pair.
RK45_ALPHA = 0.7 / 5.0
RK45_BETA = 0.4 / 5.0

# Dormand-Prince 5(4) tableau.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84,
               0.0])
_B_HAT = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640,
                   -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B - _B_HAT


@dataclasses.dataclass
class Trajectory(object):
    '''States visited while integrating from ``t = 1`` to ``t = 0``.

    ``times[0] == 1`` and ``times[-1] == 0``; ``states[i]`` is the state
    at ``times[i]``. Fixed-step solvers keep the whole grid (unless asked
    not to); the adaptive solver keeps only the endpoints, because every
    row takes its own steps. ``velocities[i]`` (Euler only) is the field
    evaluated at ``(states[i], times[i])``.
    '''

    times: np.ndarray
    states: list
    nfe: int
    velocities: list = None
    nfe_per_sample: np.ndarray = None

    @property
    def endpoint(self):
        return self.states[-1]


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    return np.atleast_2d(x).copy(), squeeze


def _maybe_squeeze(arrays, squeeze):
    if not squeeze:
        return arrays
    return [a[0] for a in arrays]


def _check_finite(x, where, step):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(where, step)


def _euler(field, x, n_steps, keep_path=True, strict=True):
    times = np.linspace(1.0, 0.0, n_steps + 1)
    states = [x]
    velocities = []
    for i in range(n_steps):
        v = field(x, times[i])
        x = x - (times[i] - times[i + 1]) * v
        if strict:
            _check_finite(x, 'euler state', i)
        if keep_path:
            states.append(x)
            velocities.append(v)
    if not keep_path:
        times = np.array([1.0, 0.0])
        states.append(x)
    return times, states, velocities


def euler_solve(field, x1, n_steps, keep_path=True):
    '''Integrate with ``n_steps`` forward Euler steps.

    Evaluates the field exactly ``n_steps`` times, at
    ``t = 1, (N-1)/N, ..., 1/N``.

    Raises
    ------
    ContractViolation
        If ``n_steps < 1``.
    NonFiniteError
        If a state becomes non-finite; ``index`` is the step.
    '''
    if n_steps < 1:
        raise ContractViolation('euler needs at least one step')
    x, squeeze = _as_batch(x1)
    times, states, velocities = _euler(field, x, n_steps, keep_path)
    return Trajectory(times, _maybe_squeeze(states, squeeze), n_steps,
                      _maybe_squeeze(velocities, squeeze))


def _heun(field, x, n_steps, keep_path=True, strict=True):
    times = np.linspace(1.0, 0.0, n_steps + 1)
    states = [x]
    nfe = 0
    for i in range(n_steps):
        h = times[i] - times[i + 1]
        d1 = field(x, times[i])
        nfe += 1
        x_euler = x - h * d1
        if i == n_steps - 1:
            x = x_euler
        else:
            d2 = field(x_euler, times[i + 1])
            nfe += 1
            x = x - h * 0.5 * (d1 + d2)
        if strict:
            _check_finite(x, 'heun state', i)
        if keep_path:
            states.append(x)
    if not keep_path:
        times = np.array([1.0, 0.0])
        states.append(x)
    return times, states, nfe


def heun_solve(field, x1, n_steps, keep_path=True):
    '''Integrate with ``n_steps`` Heun (trapezoidal) steps.

    The last step, ending at ``t = 0``, is a plain Euler step, so the
    field is evaluated ``2 * n_steps - 1`` times.
    '''
    if n_steps < 1:
        raise ContractViolation('heun needs at least one step')
    x, squeeze = _as_batch(x1)
    times, states, nfe = _heun(field, x, n_steps, keep_path)
    return Trajectory(times, _maybe_squeeze(states, squeeze), nfe)


def _dopri(field, x, rtol, atol, max_nfe):
    '''Dormand-Prince on every row of ``x``, each with its own steps.

    Returns ``(y, t, nfe_per_row, calls, failed)``.
    '''
    n = len(x)
    y = x.copy()
    t = np.ones(n)
    h = np.full(n, RK45_FIRST_STEP)
    err_prev = np.ones(n)
    nfe = np.zeros(n, dtype=np.int64)
    failed = np.zeros(n, dtype=bool)
    active = np.ones(n, dtype=bool)

    k1 = field(y, t)
    nfe += 1
    calls = 1
    while active.any():
        idx = np.flatnonzero(active)
        over = nfe[idx] + 6 > max_nfe
        if over.any():
            failed[idx[over]] = True
            active[idx[over]] = False
            idx = idx[~over]
            if not len(idx):
                break
        yi, ti, ki = y[idx], t[idx], k1[idx]
        hi = np.minimum(h[idx], ti)
        dt = -hi[:, None]
        stages = [ki]
        for s in range(1, 7):
            incr = sum(a * k for a, k in zip(_A[s], stages) if a)
            stages.append(field(yi + dt * incr, ti - _C[s] * hi))
        calls += 6
        nfe[idx] += 6
        # The 5th order solution is the input of the last stage.
        y_new = yi + dt * sum(b * k for b, k in zip(_B, stages) if b)
        err_vec = dt * sum(e * k for e, k in zip(_E, stages) if e)
        scale = atol + rtol * np.maximum(np.abs(yi), np.abs(y_new))
        with np.errstate(invalid='ignore', over='ignore'):
            err = np.sqrt(np.mean((err_vec / scale) ** 2, axis=1))
        bad = ~np.isfinite(err) | ~np.all(np.isfinite(y_new), axis=1)
        accept = (err <= 1.0) & ~bad

        with np.errstate(divide='ignore', over='ignore', invalid='ignore'):
            grow = np.where(
                err == 0.0, RK45_MAX_FACTOR,
                RK45_SAFETY * err ** -RK45_ALPHA * err_prev[idx] ** RK45_BETA)
            shrink = RK45_SAFETY * err ** -0.2
        factor = np.where(
            accept, np.clip(grow, RK45_MIN_FACTOR, RK45_MAX_FACTOR),
            np.clip(shrink, RK45_MIN_FACTOR, 1.0))

        acc = idx[accept]
        y[acc] = y_new[accept]
        k1[acc] = stages[6][accept]
        last = hi[accept] >= ti[accept]
        t[acc] = np.where(last, 0.0, ti[accept] - hi[accept])
        err_prev[acc] = np.maximum(err[accept], 1e-4)
        h[idx] = hi * np.where(bad, 1.0, factor)

        failed[idx[bad]] = True
        active[idx[bad]] = False
        active[acc[last]] = False
    return y, t, nfe, calls, failed


def rk45_solve(field, x1, rtol=1e-3, atol=None, max_nfe=2000):
    '''Adaptive Dormand-Prince 5(4) integration from 1 to 0.

    Parameters
    ----------
    field : callable
        ``field(x, t)`` returning velocities shaped like ``x``.
    x1 : array-like
    rtol, atol : float
        Relative and absolute tolerances; ``atol`` defaults to
        ``rtol``. A step is accepted when the RMS of its scaled local
        error estimate is at most 1.
    max_nfe : int
        Evaluation budget per row.

    Notes
    -----
    The first trial step is 0.1, so even a constant field takes two
    accepted steps and costs 13 evaluations (7, then 6 with FSAL).

    Raises
    ------
    SolverError
        If any row would exceed ``max_nfe`` or diverges; the error
        carries the last accepted state of every row.
    '''
    if atol is None:
        atol = rtol
    if rtol <= 0 or atol <= 0:
        raise ContractViolation('tolerances must be positive')
    x, squeeze = _as_batch(x1)
    y, t, nfe, calls, failed = _dopri(field, x, rtol, atol, max_nfe)
    if failed.any():
        raise SolverError(
            'rk45 did not reach t=0 for {} row(s) within {} evaluations'
            .format(int(failed.sum()), max_nfe),
            state=y, times=t, failed=np.flatnonzero(failed))
    states = _maybe_squeeze([x, y], squeeze)
    return Trajectory(np.array([1.0, 0.0]), states, calls,
                      nfe_per_sample=nfe)


def _check_t_mid(t):
    t = np.asarray(t, dtype=np.float64)
    if np.any((t <= 0.0) | (t >= 1.0)):
        raise ContractViolation('intermediate time must be in (0, 1)')
    return t


def _two_step(field, x, t):
    t = np.broadcast_to(t, (len(x),))
    x_t = x - (1.0 - t)[:, None] * field(x, 1.0)
    return x_t, x_t - t[:, None] * field(x_t, t)


def two_step_euler(field, x1, t):
    '''``x1 - (1-t) v(x1, 1) - t v(x_t, t)`` with two evaluations.

    ``t`` may be a scalar or one value per row, each in ``(0, 1)``.
    '''
    t = _check_t_mid(t)
    x, squeeze = _as_batch(x1)
    _, out = _two_step(field, x, t)
    return out[0] if squeeze else out


@dataclasses.dataclass(frozen=True)
class SolverSpec(object):
    '''Choice of sampler and its parameters.'''

    kind: str = 'rk45'
    n_steps: int = 1
    rtol: float = 1e-3
    atol: float = None
    max_nfe: int = 2000
    t_mid: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractViolation('unknown solver {!r}'.format(self.kind))
        if self.kind in ('euler', 'heun') and self.n_steps < 1:
            raise ContractViolation('{} needs at least one step'.format(
                self.kind))
        if self.kind == 'rk45':
            if self.rtol <= 0 or (self.atol is not None and self.atol <= 0):
                raise ContractViolation('tolerances must be positive')
            if self.max_nfe < 7:
                raise ContractViolation('rk45 needs max_nfe >= 7')
        if self.kind == 'two_step' and not 0.0 < self.t_mid < 1.0:
            raise ContractViolation('t_mid must be in (0, 1)')

    @classmethod
    def euler(cls, n_steps):
        return cls('euler', n_steps=int(n_steps))

    @classmethod
    def heun(cls, n_steps):
        return cls('heun', n_steps=int(n_steps))

    @classmethod
    def rk45(cls, rtol=1e-3, atol=None, max_nfe=2000):
        return cls('rk45', rtol=float(rtol), atol=atol, max_nfe=int(max_nfe))

    @classmethod
    def two_step(cls, t_mid=0.5):
        return cls('two_step', t_mid=float(t_mid))

    @classmethod
    def parse(cls, text):
        '''Parse ``euler:N``, ``heun:N``, ``rk45:RTOL`` or ``two-step:T``.'''
        kind, _, arg = text.strip().partition(':')
        kind = kind.replace('-', '_')
        if kind in ('euler', 'heun'):
            return cls(kind, n_steps=int(arg or 1))
        if kind == 'rk45':
            return cls.rk45(float(arg or 1e-3))
        if kind == 'two_step':
            return cls.two_step(float(arg or 0.5))
        raise ContractViolation('unknown solver {!r}'.format(text))

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        kind = d.pop('kind', 'rk45').replace('-', '_')
        return cls(kind, **d)

    def as_dict(self):
        return {k: v for k, v in dataclasses.asdict(self).items()
                if v is not None}

    @property
    def label(self):
        if self.kind in ('euler', 'heun'):
            return '{}:{}'.format(self.kind, self.n_steps)
        if self.kind == 'rk45':
            return 'rk45:{:g}'.format(self.rtol)
        return 'two-step:{:g}'.format(self.t_mid)

    @property
    def nominal_nfe(self):
        '''Evaluations per sample, or ``None`` for the adaptive solver.'''
        return {'euler': self.n_steps, 'heun': 2 * self.n_steps - 1,
                'two_step': 2}.get(self.kind)

    def solve(self, field, x1, keep_path=False):
        '''Integrate ``x1`` and return a :class:`Trajectory`.'''
        if self.kind == 'euler':
            return euler_solve(field, x1, self.n_steps, keep_path)
        if self.kind == 'heun':
            return heun_solve(field, x1, self.n_steps, keep_path)
        if self.kind == 'rk45':
            return rk45_solve(field, x1, self.rtol, self.atol, self.max_nfe)
        x, squeeze = _as_batch(x1)
        x_t, out = _two_step(field, x, self.t_mid)
        states = _maybe_squeeze([x, x_t, out], squeeze)
        return Trajectory(np.array([1.0, self.t_mid, 0.0]), states, 2)


def solve_endpoints(spec, field, x1):
    '''Endpoints of every row, tolerating per-row failures.

    Unlike :meth:`SolverSpec.solve`, a row that diverges or exceeds the
    rk45 budget does not raise; it is flagged instead.

    Returns
    -------
    tuple
        ``(endpoints, failed)`` where ``failed`` is a boolean mask over
        rows.
    '''
    x, _ = _as_batch(x1)
    with np.errstate(over='ignore', invalid='ignore'):
        if spec.kind == 'euler':
            _, states, _ = _euler(field, x, spec.n_steps, False, False)
            y = states[-1]
        elif spec.kind == 'heun':
            _, states, _ = _heun(field, x, spec.n_steps, False, False)
            y = states[-1]
        elif spec.kind == 'two_step':
            _, y = _two_step(field, x, spec.t_mid)
        else:
            atol = spec.rtol if spec.atol is None else spec.atol
            y, _, _, _, failed = _dopri(field, x, spec.rtol, atol,
                                        spec.max_nfe)
            return y, failed | ~np.all(np.isfinite(y), axis=1)
    return y, ~np.all(np.isfinite(y), axis=1)
