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

import json
import os
import shutil
import tempfile
import unittest
from unittest import mock

from slimflow.core.config import DEFAULTS, RunConfig, config_hash, resolve_seed
from slimflow.core.errors import ContractViolation
from slimflow.core.nn import MlpSpec
from slimflow.core.schedules import BetaSchedule
from slimflow.core.solvers import SolverSpec


class TestSeed(unittest.TestCase):

    def test_precedence(self):
        with mock.patch.dict(os.environ, {'SLIMFLOW_SEED': '7'}):
            self.assertEqual(resolve_seed(3, 5), 3)
            self.assertEqual(resolve_seed(None, 5), 5)
            self.assertEqual(resolve_seed(None, None), 7)
        with mock.patch.dict(os.environ, clear=True):
            self.assertEqual(resolve_seed(None, None), 0)

    def test_invalid(self):
        with mock.patch.dict(os.environ, {'SLIMFLOW_SEED': 'abc'}):
            with self.assertRaises(ContractViolation):
                resolve_seed()


class TestRunConfig(unittest.TestCase):

    def setUp(self):
        self.tmpdir = tempfile.mkdtemp()
        self.env = mock.patch.dict(os.environ, clear=True)
        self.env.start()

    def tearDown(self):
        self.env.stop()
        shutil.rmtree(self.tmpdir)

    def test_defaults(self):
        config = RunConfig.from_dict()
        self.assertEqual(config.seed, 0)
        self.assertEqual(config.teacher_spec(), MlpSpec(2, (128, 128, 128)))
        self.assertEqual(config.student_spec(), MlpSpec(2, (32, 32)))
        self.assertEqual(config.schedule(), BetaSchedule.default_for(20000))
        self.assertEqual(config.pair_solver(),
                         SolverSpec.rk45(1e-3, 1e-3, 2000))
        self.assertEqual(config.pair_count, 10000)
        self.assertIsNone(config.involution())
        self.assertEqual(config.distill_config().variant, 'student_first_sg')
        self.assertEqual(config.distill_pair_count, 25000)
        self.assertEqual([s.label for s in config.eval_solvers()],
                         ['euler:1', 'euler:2', 'heun:2', 'rk45:0.001'])

    def test_stage_configs(self):
        config = RunConfig.from_dict({'seed': 5, 'iters': 30, 'lr': 0.01,
                                      'teacher': {'iters': 40}})
        teacher = config.teacher_train_config()
        student = config.student_train_config()
        self.assertEqual((teacher.iters, teacher.seed, teacher.lr),
                         (40, 5, 0.01))
        self.assertEqual((student.iters, student.seed), (30, 6))
        self.assertEqual(config.distill_config(iters=3).iters, 3)

    def test_partial_sections_merge(self):
        config = RunConfig.from_dict({'student': {'hidden': [16]},
                                      'augment': {'enabled': True}})
        self.assertEqual(config.student_spec(), MlpSpec(2, (16,)))
        self.assertEqual(config.involution().matrix.tolist(),
                         [[-1.0, 0.0], [0.0, 1.0]])

    def test_other_distribution(self):
        config = RunConfig.from_dict({'data': {'distribution': 'std_normal',
                                               'dim': 3}})
        self.assertEqual(config.dim, 3)
        self.assertEqual(config.student_spec().in_dim, 3)

    def test_unknown_key(self):
        with self.assertRaises(ContractViolation):
            RunConfig.from_dict({'iterations': 3})

    def test_load(self):
        path = os.path.join(self.tmpdir, 'c.json')
        with open(path, 'w') as f:
            json.dump({'seed': 9, 'iters': 12}, f)
        config = RunConfig.load(path)
        self.assertEqual(config.seed, 9)
        self.assertEqual(config['iters'], 12)
        self.assertEqual(RunConfig.load(path, seed=1).seed, 1)

    def test_load_invalid_json(self):
        path = os.path.join(self.tmpdir, 'c.json')
        with open(path, 'w') as f:
            f.write('{not json')
        with self.assertRaises(ContractViolation):
            RunConfig.load(path)

    def test_hash(self):
        a = RunConfig.from_dict({'iters': 10})
        b = RunConfig.from_dict({'iters': 10})
        c = RunConfig.from_dict({'iters': 11})
        self.assertEqual(a.hash, b.hash)
        self.assertNotEqual(a.hash, c.hash)
        self.assertEqual(config_hash({'b': 1, 'a': 2}),
                         config_hash({'a': 2, 'b': 1}))
        self.assertEqual(len(a.hash), 64)

    def test_defaults_are_not_shared(self):
        config = RunConfig.from_dict()
        config.doc['teacher']['hidden'].append(1)
        self.assertEqual(DEFAULTS['teacher']['hidden'], [128, 128, 128])
