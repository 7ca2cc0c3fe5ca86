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

'''Toy data, pair datasets and the files slimflow reads and writes.

Pair files
    ``b'SFPAIR1\\0'``, u32 version (1), u32 dim, u64 count, then
    ``count`` records of ``2 * dim`` little-endian float64 (the noise
    ``x1`` followed by the generated endpoint ``x0_hat``). Provenance
    lives in a json sidecar named ``<file>.meta.json``.

Checkpoints
    ``b'SFCKPT1\\0'``, then the :class:`~slimflow.core.nn.MlpSpec` as
    little-endian u32s (``in_dim``, number of hidden layers, each
    hidden width, ``time_embed_dim``, activation id), u64
    ``param_count``, the weights as little-endian float64, a u32 flag
    saying whether EMA shadow weights follow, and if so the shadow
    weights in the same layout.

Reports and tables are written as CSV through :mod:`pandas`.
'''

import concurrent.futures
import dataclasses
import hashlib
import json
import logging
import os
import struct

import numpy as np
import pandas as pd

from .errors import (
    ContractViolation,
    FormatError,
    PairGenerationError,
    UnsupportedVersionError
)
from .log import logger
from .nn import ACTIVATIONS, MlpSpec, VelocityField
from .solvers import solve_endpoints


_log = logging.getLogger(__name__)

PAIR_MAGIC = b'SFPAIR1\0'
PAIR_VERSION = 1
CHECKPOINT_MAGIC = b'SFCKPT1\0'

# Rows are integrated in fixed chunks so that results do not depend on
# the number of workers.
PAIR_CHUNK = 256
MAX_SKIP_RATE = 0.01

DISTRIBUTIONS = ('gauss_mixture', 'two_moons', 'checkerboard', 'std_normal')


@dataclasses.dataclass(frozen=True)
class ToyDistribution(object):
    '''A toy data distribution.

    Use the class methods to build one. ``gauss_mixture`` places
    isotropic Gaussians of width ``sigma`` at ``centers``;
    ``two_moons`` is the classic pair of interleaved half circles with
    Gaussian ``noise``; ``checkerboard`` is uniform over the black
    cells of a ``cells x cells`` board covering ``[-extent, extent]^2``;
    ``std_normal`` is ``N(0, I)``.
    '''

    kind: str
    dim: int
    centers: tuple = ()
    weights: tuple = ()
    sigma: float = 0.1
    noise: float = 0.05
    cells: int = 4
    extent: float = 2.0

    def __post_init__(self):
        if self.kind not in DISTRIBUTIONS:
            raise ContractViolation('unknown distribution {!r}'.format(
                self.kind))
        if self.dim < 1:
            raise ContractViolation('dim must be at least 1')
        if self.kind in ('two_moons', 'checkerboard') and self.dim != 2:
            raise ContractViolation('{} is two-dimensional'.format(
                self.kind))
        if self.kind == 'gauss_mixture':
            centers = np.asarray(self.centers, dtype=np.float64)
            if centers.ndim != 2 or centers.shape[1] != self.dim \
                    or not len(centers):
                raise ContractViolation(
                    'centers must be a non-empty list of {}-vectors'.format(
                        self.dim))
            weights = np.asarray(self.weights, dtype=np.float64)
            if weights.shape != (len(centers),) or np.any(weights < 0) \
                    or not np.isclose(weights.sum(), 1.0):
                raise ContractViolation('mixture weights must be '
                                        'non-negative and sum to 1')
            if self.sigma <= 0:
                raise ContractViolation('sigma must be positive')
        if self.kind == 'checkerboard' and (self.cells < 1
                                            or self.extent <= 0):
            raise ContractViolation('checkerboard needs cells >= 1 and a '
                                    'positive extent')

    @classmethod
    def gauss_mixture(cls, centers, weights=None, sigma=0.1):
        centers = tuple(tuple(float(c) for c in row) for row in centers)
        if weights is None:
            weights = (1.0 / len(centers),) * len(centers)
        return cls('gauss_mixture', dim=len(centers[0]), centers=centers,
                   weights=tuple(float(w) for w in weights),
                   sigma=float(sigma))

    @classmethod
    def two_moons(cls, noise=0.05):
        return cls('two_moons', dim=2, noise=float(noise))

    @classmethod
    def checkerboard(cls, cells=4, extent=2.0):
        return cls('checkerboard', dim=2, cells=int(cells),
                   extent=float(extent))

    @classmethod
    def std_normal(cls, dim=2):
        return cls('std_normal', dim=int(dim))

    @classmethod
    def from_config(cls, section):
        '''Build from a ``data`` config section.'''
        section = dict(section or {})
        kind = section.get('distribution', 'gauss_mixture')
        params = dict(section.get('params', {}))
        dim = int(section.get('dim', 2))
        if kind == 'gauss_mixture':
            centers = params.get('centers') or _square_centers(dim)
            return cls.gauss_mixture(centers, params.get('weights'),
                                     params.get('sigma', 0.1))
        if kind == 'two_moons':
            return cls.two_moons(params.get('noise', 0.05))
        if kind == 'checkerboard':
            return cls.checkerboard(params.get('cells', 4),
                                    params.get('extent', 2.0))
        if kind == 'std_normal':
            return cls.std_normal(dim)
        raise ContractViolation('unknown distribution {!r}'.format(kind))

    def in_support(self, x):
        '''Checkerboard membership of every row of ``x``.'''
        x = np.atleast_2d(x)
        width = 2.0 * self.extent / self.cells
        cell = np.floor((x + self.extent) / width).astype(int)
        inside = np.all((cell >= 0) & (cell < self.cells), axis=1)
        return inside & ((cell[:, 0] + cell[:, 1]) % 2 == 0)

    def draw(self, rng, n):
        '''``n`` i.i.d. samples using the generator ``rng``.'''
        if self.kind == 'std_normal':
            return rng.standard_normal((n, self.dim))
        if self.kind == 'gauss_mixture':
            centers = np.asarray(self.centers)
            comp = rng.choice(len(centers), size=n, p=np.asarray(
                self.weights))
            return centers[comp] + self.sigma * rng.standard_normal(
                (n, self.dim))
        if self.kind == 'two_moons':
            upper = rng.random(n) < 0.5
            angle = np.pi * rng.random(n)
            x = np.where(upper, np.cos(angle), 1.0 - np.cos(angle))
            y = np.where(upper, np.sin(angle), 0.5 - np.sin(angle))
            return (np.stack([x, y], axis=1)
                    + self.noise * rng.standard_normal((n, 2)))
        # checkerboard
        width = 2.0 * self.extent / self.cells
        black = [(i, j) for i in range(self.cells)
                 for j in range(self.cells) if (i + j) % 2 == 0]
        pick = np.asarray(black)[rng.integers(len(black), size=n)]
        offset = rng.random((n, 2)) * width
        return -self.extent + pick * width + offset

    def as_dict(self):
        d = {'distribution': self.kind, 'dim': self.dim}
        if self.kind == 'gauss_mixture':
            d['params'] = {'centers': [list(c) for c in self.centers],
                           'weights': list(self.weights),
                           'sigma': self.sigma}
        elif self.kind == 'two_moons':
            d['params'] = {'noise': self.noise}
        elif self.kind == 'checkerboard':
            d['params'] = {'cells': self.cells, 'extent': self.extent}
        return d


def _square_centers(dim, radius=2.0):
    # 2**dim corners of a cube, symmetric under every axis reflection
    corners = np.array(np.meshgrid(*[[-radius, radius]] * dim,
                                   indexing='ij')).reshape(dim, -1).T
    return corners.tolist()


def _index_rng(seed, index):
    return np.random.default_rng([int(seed), int(index)])


def sample_data(dist, n, seed):
    '''``n`` samples of ``dist``; sample ``i`` depends only on
    ``(seed, i)``.'''
    if n < 1:
        raise ContractViolation('n must be at least 1')
    return np.concatenate([dist.draw(_index_rng(seed, i), 1)
                           for i in range(n)])


def index_noise(n, dim, seed, start=0):
    '''Standard normal rows ``start .. start+n-1`` of stream ``seed``.'''
    if n == 0:
        return np.zeros((0, dim))
    return np.stack([_index_rng(seed, i).standard_normal(dim)
                     for i in range(start, start + n)])


@dataclasses.dataclass
class PairDataset(object):
    '''Couples ``(x1, x0_hat)`` of noise and generated endpoint.

    ``x1`` and ``x0_hat`` are ``(count, dim)`` arrays; ``provenance``
    records where the pairs came from (teacher checkpoint hash, solver,
    seed, skipped indices, augmentation).
    '''

    x1: np.ndarray
    x0_hat: np.ndarray
    provenance: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        self.x1 = np.asarray(self.x1, dtype=np.float64)
        self.x0_hat = np.asarray(self.x0_hat, dtype=np.float64)
        if self.x1.ndim != 2 or self.x1.shape != self.x0_hat.shape:
            raise ContractViolation(
                'pair arrays must share a (count, dim) shape, got {} and '
                '{}'.format(self.x1.shape, self.x0_hat.shape))

    @property
    def dim(self):
        return self.x1.shape[1]

    @property
    def count(self):
        return self.x1.shape[0]

    def __len__(self):
        return self.count

    def batch(self, idx):
        return self.x1[idx], self.x0_hat[idx]


def checkpoint_hash(field):
    '''SHA-256 of a field's spec and weights.'''
    h = hashlib.sha256()
    h.update(json.dumps(field.spec.as_dict(), sort_keys=True).encode())
    h.update(np.ascontiguousarray(field.weights, dtype='<f8').tobytes())
    return h.hexdigest()


def generate_pairs(teacher, n, solver, seed, workers=1):
    '''Simulate ``n`` pairs ``(x1, ODE[teacher](x1))``.

    Noise row ``i`` is drawn from its own stream keyed by
    ``(seed, i)``. Rows are integrated in fixed chunks, in parallel
    when ``workers > 1``, and reassembled in index order, so the output
    is identical for any worker count.

    Rows whose integration fails (divergence or rk45 budget) are
    skipped and listed in the provenance.

    Raises
    ------
    PairGenerationError
        If 1% or more of the rows fail.
    '''
    dim = teacher.in_dim
    starts = list(range(0, n, PAIR_CHUNK))

    def work(start):
        count = min(PAIR_CHUNK, n - start)
        x1 = index_noise(count, dim, seed, start)
        x0, failed = solve_endpoints(solver, teacher, x1)
        return x1, x0, failed

    if workers > 1 and len(starts) > 1:
        with concurrent.futures.ThreadPoolExecutor(workers) as executor:
            chunks = list(executor.map(work, starts))
    else:
        chunks = [work(s) for s in starts]

    if chunks:
        x1 = np.concatenate([c[0] for c in chunks])
        x0 = np.concatenate([c[1] for c in chunks])
        failed = np.concatenate([c[2] for c in chunks])
    else:
        x1 = x0 = np.zeros((0, dim))
        failed = np.zeros(0, dtype=bool)
    skipped = np.flatnonzero(failed).tolist()
    if n and len(skipped) >= MAX_SKIP_RATE * n:
        raise PairGenerationError(
            '{} of {} pairs failed to integrate'.format(len(skipped), n),
            skipped)
    if skipped:
        _log.warning('skipped %d of %d pairs', len(skipped), n)
    provenance = {'teacher': checkpoint_hash(teacher),
                  'solver': solver.as_dict(), 'seed': int(seed),
                  'requested': int(n), 'skipped': skipped}
    logger.log_event('gen-pairs', 'pairs', count=n - len(skipped),
                     skipped=len(skipped), solver=solver.label)
    return PairDataset(x1[~failed], x0[~failed], provenance)


def _meta_path(path):
    return '{}.meta.json'.format(os.fspath(path))


def save_pairs(ds, path):
    '''Write ``ds`` to ``path`` and its provenance to the sidecar.'''
    header = PAIR_MAGIC + struct.pack('<IIQ', PAIR_VERSION, ds.dim, ds.count)
    payload = np.stack([ds.x1, ds.x0_hat], axis=1).astype('<f8')
    with open(path, 'wb') as f:
        f.write(header)
        f.write(payload.tobytes())
    with open(_meta_path(path), 'w') as f:
        json.dump(ds.provenance, f, sort_keys=True, indent=1)
        f.write('\n')


def load_pairs(path):
    '''Read a pair file written by :func:`save_pairs`.

    Raises
    ------
    FormatError
        On a bad magic, a zero dimension or a truncated or oversized
        payload; the error names the byte offset.
    UnsupportedVersionError
        If the version field is not 1.
    '''
    with open(path, 'rb') as f:
        data = f.read()
    path = os.fspath(path)
    if len(data) < 8 or data[:8] != PAIR_MAGIC:
        raise FormatError(path, 0, 'not a slimflow pair file')
    if len(data) < 24:
        raise FormatError(path, len(data), 'truncated header')
    version, dim, count = struct.unpack_from('<IIQ', data, 8)
    if version != PAIR_VERSION:
        raise UnsupportedVersionError(
            path, 8, 'unsupported pair file version {}'.format(version))
    if dim == 0:
        raise FormatError(path, 12, 'dimension must be positive')
    expected = 24 + 16 * dim * count
    if len(data) != expected:
        raise FormatError(path, min(len(data), expected),
                          'payload is {} bytes, expected {}'.format(
                              len(data) - 24, expected - 24))
    records = np.zeros((0, 2, dim))
    if count:
        records = np.frombuffer(data, dtype='<f8', offset=24).reshape(
            count, 2, dim).astype(np.float64)
    provenance = {}
    if os.path.exists(_meta_path(path)):
        with open(_meta_path(path)) as f:
            provenance = json.load(f)
    return PairDataset(records[:, 0].copy(), records[:, 1].copy(),
                       provenance)


def save_checkpoint(path, field, shadow=None):
    '''Write ``field`` and optional EMA ``shadow`` weights.'''
    spec = field.spec
    header = CHECKPOINT_MAGIC + struct.pack(
        '<{}I'.format(4 + len(spec.hidden)),
        spec.in_dim, len(spec.hidden), *spec.hidden, spec.time_embed_dim,
        spec.activation_id)
    parts = [header, struct.pack('<Q', field.param_count),
             np.asarray(field.weights, dtype='<f8').tobytes()]
    if shadow is None:
        parts.append(struct.pack('<I', 0))
    else:
        shadow = np.asarray(shadow, dtype='<f8').reshape(-1)
        if shadow.size != field.param_count:
            raise ContractViolation('EMA shadow is not aligned with weights')
        parts.extend([struct.pack('<I', 1), shadow.tobytes()])
    with open(path, 'wb') as f:
        f.write(b''.join(parts))
    logger.log_event('checkpoint', 'write', path=os.fspath(path),
                     sha256=checkpoint_hash(field))


def load_checkpoint(path, use_ema=True):
    '''Read a checkpoint.

    Returns
    -------
    tuple
        ``(field, shadow)``. With ``use_ema`` and a shadow present, the
        returned field carries the shadow weights. ``shadow`` is None
        when the file has none.
    '''
    with open(path, 'rb') as f:
        data = f.read()
    path = os.fspath(path)
    if data[:8] != CHECKPOINT_MAGIC:
        raise FormatError(path, 0, 'not a slimflow checkpoint')
    offset = 8

    def take(fmt):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(data):
            raise FormatError(path, offset, 'truncated checkpoint')
        values = struct.unpack_from(fmt, data, offset)
        offset += size
        return values

    in_dim, n_hidden = take('<II')
    hidden = take('<{}I'.format(n_hidden)) if n_hidden else ()
    time_embed_dim, activation_id = take('<II')
    if activation_id >= len(ACTIVATIONS):
        raise FormatError(path, offset - 4, 'unknown activation id {}'
                          .format(activation_id))
    try:
        spec = MlpSpec(in_dim, hidden, time_embed_dim,
                       ACTIVATIONS[activation_id])
    except ContractViolation as e:
        raise FormatError(path, 8, 'invalid architecture: {}'.format(e))
    (count,) = take('<Q')
    if count != VelocityField(spec).param_count:
        raise FormatError(path, offset - 8, 'parameter count {} does not '
                          'match the spec'.format(count))

    def floats():
        nonlocal offset
        if offset + 8 * count > len(data):
            raise FormatError(path, len(data), 'truncated weights')
        values = np.frombuffer(data, dtype='<f8', count=count, offset=offset)
        offset += 8 * count
        return values.astype(np.float64)

    weights = floats()
    (flag,) = take('<I')
    shadow = floats() if flag else None
    if offset != len(data):
        raise FormatError(path, offset, 'trailing bytes')
    field = VelocityField(spec, shadow if use_ema and shadow is not None
                          else weights)
    return field, shadow


def write_table_csv(path, rows, columns=None):
    '''Write ``rows`` (dicts or a DataFrame) as CSV.'''
    if isinstance(rows, pd.DataFrame):
        frame = rows if columns is None else rows[columns]
    else:
        frame = pd.DataFrame(list(rows), columns=columns)
    frame.to_csv(path, index=False, float_format='%.17g')
    return frame


REPORT_COLUMNS = ['checkpoint', 'solver', 'nfe', 'straightness', 'sw2',
                  'params', 'macs', 'seed']


def write_reports_csv(path, reports):
    '''Write :class:`~slimflow.core.metrics.EvalReport` rows as CSV.'''
    return write_table_csv(path, [r.as_row() for r in reports],
                           REPORT_COLUMNS)
