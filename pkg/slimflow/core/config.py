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

'''Run configuration.

A run is described by one JSON document with a section per stage.
Missing keys take the defaults in :data:`DEFAULTS`; unknown top-level
keys are rejected. :func:`config_hash` identifies a configuration in
the run log.
'''

import copy
import dataclasses
import hashlib
import json
import os

from .data import ToyDistribution
from .distill import DistillConfig
from .errors import ContractViolation
from .nn import MlpSpec
from .schedules import BetaSchedule
from .solvers import SolverSpec
from .train import Involution, TrainConfig


DEFAULTS = {
    'seed': None,
    'data': {'distribution': 'gauss_mixture', 'dim': 2,
             'params': {'centers': [[2.0, 2.0], [-2.0, 2.0], [2.0, -2.0],
                                    [-2.0, -2.0]],
                        'sigma': 0.3}},
    'teacher': {'hidden': [128, 128, 128], 'time_embed_dim': 16,
                'activation': 'silu', 'iters': 20000},
    'student': {'hidden': [32, 32], 'time_embed_dim': 16,
                'activation': 'silu'},
    'schedule': {'kind': 'linear'},
    'iters': 20000,
    'batch_size': 256,
    'lr': 1e-3,
    'ema_ratio': 0.999,
    'pairs': {'count': 10000,
              'solver': {'kind': 'rk45', 'rtol': 1e-3, 'atol': 1e-3,
                         'max_nfe': 2000},
              'workers': 1},
    'augment': {'enabled': False,
                'involution': {'kind': 'reflection', 'axes': [0]}},
    'distill': {'iters': 10000, 'batch_size': 256, 'two_step': True,
                'variant': 'sg', 'eps': 0.01, 'guide_steps': 2,
                'pairs': 25000, 'baseline': True,
                'init': 'copy'},
    'eval': {'n_samples': 2048, 'straightness_samples': 256,
             'straightness_steps': 100, 'projections': 128,
             'solvers': ['euler:1', 'euler:2', 'heun:2', 'rk45:1e-3']},
}

SEED_ENV = 'SLIMFLOW_SEED'


def _merge(base, override):
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict) \
                and key != 'params':
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def resolve_seed(flag=None, configured=None):
    '''``--seed`` flag, then the config's ``seed``, then
    ``SLIMFLOW_SEED``, then 0.'''
    for value in (flag, configured, os.environ.get(SEED_ENV)):
        if value is not None and value != '':
            try:
                return int(value)
            except ValueError:
                raise ContractViolation('seed must be an integer, got '
                                        '{!r}'.format(value))
    return 0


def config_hash(doc):
    '''SHA-256 of the canonical JSON encoding of ``doc``.'''
    if isinstance(doc, RunConfig):
        doc = doc.as_dict()
    text = json.dumps(doc, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


@dataclasses.dataclass
class RunConfig(object):
    '''A fully defaulted configuration with accessors per stage.'''

    doc: dict

    @classmethod
    def from_dict(cls, doc=None, seed=None):
        doc = dict(doc or {})
        unknown = sorted(set(doc) - set(DEFAULTS))
        if unknown:
            raise ContractViolation('unknown config keys: {}'.format(
                ', '.join(unknown)))
        merged = _merge(DEFAULTS, doc)
        data = doc.get('data')
        if data is not None and 'params' not in data and (
                merged['data']['distribution'] != 'gauss_mixture'
                or merged['data']['dim'] != 2):
            # default mixture centers only fit the default 2-d mixture
            merged['data']['params'] = {}
        merged['seed'] = resolve_seed(seed, merged['seed'])
        return cls(merged)

    @classmethod
    def load(cls, path=None, seed=None):
        '''Read ``path`` (or use the defaults when it is None).'''
        if path is None:
            return cls.from_dict({}, seed)
        with open(path) as f:
            try:
                doc = json.load(f)
            except ValueError as e:
                raise ContractViolation('{}: {}'.format(path, e))
        if not isinstance(doc, dict):
            raise ContractViolation('{}: expected a JSON object'.format(path))
        return cls.from_dict(doc, seed)

    def __getitem__(self, key):
        return self.doc[key]

    @property
    def seed(self):
        return self.doc['seed']

    @property
    def hash(self):
        return config_hash(self.doc)

    def as_dict(self):
        return copy.deepcopy(self.doc)

    def distribution(self):
        return ToyDistribution.from_config(self.doc['data'])

    @property
    def dim(self):
        return self.distribution().dim

    def teacher_spec(self):
        section = {k: v for k, v in self.doc['teacher'].items()
                   if k != 'iters'}
        return MlpSpec.from_dict(section, in_dim=self.dim)

    def student_spec(self):
        return MlpSpec.from_dict(self.doc['student'], in_dim=self.dim)

    def schedule(self):
        return BetaSchedule.from_config(self.doc['schedule'],
                                        self.doc['iters'])

    def _train(self, iters, seed_offset, **kwargs):
        return TrainConfig(iters=int(iters),
                           batch_size=int(self.doc['batch_size']),
                           lr=float(self.doc['lr']),
                           ema_ratio=float(self.doc['ema_ratio']),
                           seed=self.seed + seed_offset, **kwargs)

    def teacher_train_config(self, **kwargs):
        return self._train(self.doc['teacher'].get('iters',
                                                   self.doc['iters']),
                           0, **kwargs)

    def student_train_config(self, **kwargs):
        return self._train(self.doc['iters'], 1, **kwargs)

    def pair_solver(self):
        return SolverSpec.from_dict(self.doc['pairs']['solver'])

    @property
    def pair_count(self):
        return int(self.doc['pairs']['count'])

    @property
    def workers(self):
        return int(self.doc['pairs'].get('workers', 1))

    def involution(self):
        '''The augmentation involution, or None when disabled.'''
        section = self.doc['augment']
        if not section.get('enabled'):
            return None
        return Involution.from_config(section.get('involution'), self.dim)

    def distill_config(self, **overrides):
        section = self.doc['distill']
        kwargs = dict(use_two_step=bool(section['two_step']),
                      variant=section['variant'],
                      eps=float(section['eps']),
                      guide_steps=int(section.get('guide_steps', 2)),
                      init=section.get('init', 'copy'),
                      iters=int(section['iters']),
                      batch_size=int(section['batch_size']),
                      lr=float(section.get('lr', self.doc['lr'])),
                      ema_ratio=float(section.get('ema_ratio',
                                                  self.doc['ema_ratio'])),
                      seed=self.seed + 2)
        kwargs.update(overrides)
        return DistillConfig(**kwargs)

    @property
    def distill_pair_count(self):
        return int(self.doc['distill']['pairs'])

    def eval_solvers(self):
        return [SolverSpec.parse(s) for s in self.doc['eval']['solvers']]

    def eval_options(self):
        section = self.doc['eval']
        return {'straightness_samples': int(section['straightness_samples']),
                'straightness_steps': int(section['straightness_steps']),
                'n_projections': int(section['projections'])}
