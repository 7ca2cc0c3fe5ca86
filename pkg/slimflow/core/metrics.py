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

'''Straightness, sliced Wasserstein distance and evaluation reports.'''

import dataclasses

import numpy as np

from .data import index_noise
from .errors import ContractViolation
from .solvers import SolverSpec, euler_solve


DEFAULT_PROJECTIONS = 128
STRAIGHTNESS_SAMPLES = 256
STRAIGHTNESS_STEPS = 100


@dataclasses.dataclass(frozen=True)
class EvalReport(object):
    '''Quality and cost of one checkpoint under one sampler.'''

    checkpoint: str
    solver: SolverSpec
    nfe: int
    straightness: float
    sw2: float
    params: int
    macs: int
    seed: int

    def __post_init__(self):
        if self.straightness < 0 or self.sw2 < 0:
            raise ContractViolation('straightness and sw2 are non-negative')

    def as_row(self):
        return {'checkpoint': self.checkpoint, 'solver': self.solver.label,
                'nfe': int(self.nfe),
                'straightness': float(self.straightness),
                'sw2': float(self.sw2), 'params': int(self.params),
                'macs': int(self.macs), 'seed': int(self.seed)}


def straightness(field, n_samples=STRAIGHTNESS_SAMPLES,
                 n_steps=STRAIGHTNESS_STEPS, seed=0, dim=None):
    '''Mean squared deviation of ``v`` from each trajectory's displacement.

    ``n_samples`` trajectories are simulated from fresh noise with
    ``n_steps`` Euler steps. The endpoint of each trajectory is its
    ``x0``; the deviation ``|v(x_t, t) - (x1 - x0)|^2`` is averaged
    over the Euler grid and then over samples, reusing the velocities
    the integration evaluated.

    ``dim`` is only needed when ``field`` is a plain callable without
    an ``in_dim``.
    '''
    if n_steps < 2:
        raise ContractViolation('straightness needs at least 2 steps')
    dim = dim or field.in_dim
    x1 = index_noise(n_samples, dim, seed)
    traj = euler_solve(field, x1, n_steps, keep_path=True)
    displacement = x1 - traj.endpoint
    dev = np.stack(traj.velocities) - displacement[None]
    return float(np.mean(np.sum(dev * dev, axis=-1)))


def _as_points(samples):
    a = np.asarray(samples, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or not len(a):
        raise ContractViolation('expected a non-empty (n, dim) sample set')
    return a


def sliced_w2(samples_a, samples_b, n_projections=DEFAULT_PROJECTIONS,
              seed=0):
    '''Squared sliced 2-Wasserstein distance between two point sets.

    Directions are drawn first from ``seed``; the larger set is then
    subsampled without replacement to the size of the smaller one, so
    the value is symmetric in its arguments. Each projected pair of
    sets is matched by sorting.
    '''
    a = _as_points(samples_a)
    b = _as_points(samples_b)
    if a.shape[1] != b.shape[1]:
        raise ContractViolation('cannot compare {}-d and {}-d samples'
                                .format(a.shape[1], b.shape[1]))
    rng = np.random.default_rng(seed)
    directions = rng.standard_normal((n_projections, a.shape[1]))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    m = min(len(a), len(b))
    if len(a) > m:
        a = a[rng.choice(len(a), m, replace=False)]
    elif len(b) > m:
        b = b[rng.choice(len(b), m, replace=False)]
    pa = np.sort(a @ directions.T, axis=0)
    pb = np.sort(b @ directions.T, axis=0)
    return float(np.mean((pa - pb) ** 2))


def _generate(field, solver, n_samples, seed):
    x1 = index_noise(n_samples, field.in_dim, seed)
    traj = solver.solve(field, x1)
    if solver.nominal_nfe is not None:
        nfe = solver.nominal_nfe
    else:
        nfe = int(round(float(np.mean(traj.nfe_per_sample))))
    return traj.endpoint, nfe


def evaluate_checkpoint(field, reference, solver=None, n_samples=2048,
                        seed=0, checkpoint='',
                        straightness_samples=STRAIGHTNESS_SAMPLES,
                        straightness_steps=STRAIGHTNESS_STEPS,
                        n_projections=DEFAULT_PROJECTIONS,
                        straightness_value=None):
    '''Evaluate ``field`` with ``solver`` against ``reference`` samples.

    Parameters
    ----------
    field : VelocityField
    reference : numpy.ndarray
        Samples of the distribution the field should generate.
    solver : SolverSpec, optional
        Defaults to rk45 at ``rtol=1e-3``.
    straightness_value : float, optional
        Reuse an already computed straightness.

    Returns
    -------
    EvalReport
    '''
    solver = solver or SolverSpec.rk45()
    generated, nfe = _generate(field, solver, n_samples, seed)
    if straightness_value is None:
        straightness_value = straightness(
            field, straightness_samples, straightness_steps, seed)
    return EvalReport(checkpoint, solver, nfe, straightness_value,
                      sliced_w2(generated, reference, n_projections, seed),
                      field.param_count, field.macs, int(seed))


def nfe_sweep(field, solvers, n_samples, reference, seed=0,
              checkpoint='', **kwargs):
    '''One :class:`EvalReport` per solver, all with the same seed.

    Straightness does not depend on the sampler and is computed once.
    Solver errors propagate.
    '''
    reports = []
    value = kwargs.pop('straightness_value', None)
    for solver in solvers:
        report = evaluate_checkpoint(field, reference, solver, n_samples,
                                     seed, checkpoint,
                                     straightness_value=value, **kwargs)
        value = report.straightness
        reports.append(report)
    return reports
