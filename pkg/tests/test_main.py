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

import contextlib
import io
import json
import os
import shutil
import tempfile
import unittest
from unittest import mock

import pandas as pd

from slimflow.core import data
from slimflow.core.main import run
from slimflow.core.nn import MlpSpec, VelocityField


TINY = {
    'seed': 3,
    'teacher': {'hidden': [8], 'time_embed_dim': 4, 'iters': 20},
    'student': {'hidden': [6], 'time_embed_dim': 4},
    'iters': 20,
    'batch_size': 32,
    'pairs': {'count': 64, 'solver': {'kind': 'euler', 'n_steps': 4}},
    'distill': {'iters': 10, 'batch_size': 16, 'pairs': 64},
    'eval': {'n_samples': 64, 'straightness_samples': 16,
             'straightness_steps': 10, 'solvers': ['euler:1', 'rk45:1e-3']},
}


class CliTestCase(unittest.TestCase):

    def setUp(self):
        super().setUp()
        self.tmpdir = tempfile.mkdtemp()
        self.env = mock.patch.dict(os.environ, clear=True)
        self.env.start()
        self.config = self.path('config.json')
        with open(self.config, 'w') as f:
            json.dump(TINY, f)

    def tearDown(self):
        super().tearDown()
        self.env.stop()
        shutil.rmtree(self.tmpdir)

    def path(self, *names):
        return os.path.join(self.tmpdir, *names)

    def read(self, *names):
        with open(self.path(*names), 'rb') as f:
            return f.read()

    def run_cli(self, *argv):
        stderr = io.StringIO()
        with contextlib.redirect_stderr(stderr):
            code = run(list(argv))
        return code, stderr.getvalue()


class TestExitCodes(CliTestCase):

    def test_unknown_subcommand(self):
        code, err = self.run_cli('bogus')
        self.assertEqual(code, 1)
        self.assertIn('invalid choice', err)

    def test_unknown_flag(self):
        code, _ = self.run_cli('eval', 'x.ckpt', '--out', 'r.csv', '--what')
        self.assertEqual(code, 1)

    def test_bad_on_off(self):
        code, _ = self.run_cli('distill', '--from', 'a', '--pairs', 'b',
                               '--out', 'c', '--two-step', 'maybe')
        self.assertEqual(code, 1)

    def test_missing_file(self):
        missing = self.path('missing.ckpt')
        code, err = self.run_cli('eval', missing, '--out',
                                 self.path('r.csv'))
        self.assertEqual(code, 2)
        self.assertIn(missing, err)

    def test_version(self):
        with contextlib.redirect_stdout(io.StringIO()):
            code, _ = self.run_cli('--version')
        self.assertEqual(code, 0)


class TestStages(CliTestCase):

    def test_eval_constant_field(self):
        field = VelocityField.constant(MlpSpec(2, (4,)), [1.0, 0.0])
        data.save_checkpoint(self.path('c.ckpt'), field)
        code, err = self.run_cli('eval', self.path('c.ckpt'), '--config',
                                 self.config, '--out', self.path('r.csv'))
        self.assertEqual(code, 0, err)
        frame = pd.read_csv(self.path('r.csv'))
        self.assertEqual(list(frame['solver']), ['euler:1', 'rk45:0.001'])
        self.assertTrue((frame['straightness'] < 1e-20).all())
        self.assertEqual(list(frame['checkpoint']), ['c', 'c'])

    def test_stages_chain(self):
        cfg = ('--config', self.config)
        code, err = self.run_cli('train-teacher', *cfg, '--out',
                                 self.path('teacher.ckpt'), '--history',
                                 self.path('teacher.csv'))
        self.assertEqual(code, 0, err)
        code, err = self.run_cli('gen-pairs', *cfg, '--teacher',
                                 self.path('teacher.ckpt'), '--n', '40',
                                 '--solver', 'rk45', '--rtol', '1e-3',
                                 '--out', self.path('pairs.bin'))
        self.assertEqual(code, 0, err)
        self.assertEqual(data.load_pairs(self.path('pairs.bin')).count, 40)

        outs = []
        for name in ('cold.ckpt', 'annealed.ckpt', 'cold2.ckpt'):
            schedule = ['--schedule', 'constant', '--beta0', '0'] \
                if name != 'annealed.ckpt' else []
            code, err = self.run_cli('reflow', *cfg, '--pairs',
                                     self.path('pairs.bin'), *schedule,
                                     '--out', self.path(name))
            self.assertEqual(code, 0, err)
            outs.append(self.read(name))
        self.assertEqual(outs[0], outs[2])
        self.assertNotEqual(outs[0], outs[1])

        code, err = self.run_cli('reflow', *cfg, '--pairs',
                                 self.path('pairs.bin'), '--augment', 'on',
                                 '--iters', '10', '--checkpoint-every', '5',
                                 '--checkpoint-dir', self.tmpdir,
                                 '--eval-every', '5',
                                 '--history', self.path('h.csv'),
                                 '--out', self.path('aug.ckpt'))
        self.assertEqual(code, 0, err)
        self.assertTrue(os.path.exists(self.path('reflow-0000010.ckpt')))
        history = pd.read_csv(self.path('h.csv'))
        self.assertEqual(list(history['iteration']), [0, 4, 9])
        self.assertEqual(history['straightness'].notna().sum(), 2)

        code, err = self.run_cli('distill', *cfg, '--from',
                                 self.path('annealed.ckpt'), '--pairs',
                                 self.path('pairs.bin'), '--two-step', 'off',
                                 '--variant', 'teacher', '--out',
                                 self.path('one.ckpt'))
        self.assertEqual(code, 0, err)
        field, _ = data.load_checkpoint(self.path('one.ckpt'))
        self.assertEqual(field.spec, MlpSpec(2, (6,), 4))

    def test_run_log(self):
        field = VelocityField.constant(MlpSpec(2, (4,)), [1.0, 0.0])
        data.save_checkpoint(self.path('c.ckpt'), field)
        code, err = self.run_cli('--log', self.path('run.jsonl'), 'eval',
                                 self.path('c.ckpt'), '--config',
                                 self.config, '--out', self.path('r.csv'))
        self.assertEqual(code, 0, err)
        with open(self.path('run.jsonl')) as f:
            records = [json.loads(line) for line in f]
        self.assertEqual(records[0]['event'], 'start')
        self.assertEqual(records[0]['seed'], 3)
        self.assertEqual(len(records[0]['config_hash']), 64)
        self.assertEqual(sum(r['event'] == 'report' for r in records), 2)

    def test_plot_data(self):
        field = VelocityField.initialize(MlpSpec(2, (4,)), 0)
        data.save_checkpoint(self.path('c.ckpt'), field)
        code, err = self.run_cli('plot-data', '--config', self.config,
                                 '--checkpoint', self.path('c.ckpt'),
                                 '--out-dir', self.path('plots'))
        self.assertEqual(code, 0, err)
        samples = pd.read_csv(self.path('plots', 'samples.csv'))
        self.assertEqual(len(samples), 3 * 64)
        trajectories = pd.read_csv(self.path('plots', 'trajectories.csv'))
        self.assertEqual(len(trajectories), 21 * 64)
        sweep = pd.read_csv(self.path('plots', 'sweep.csv'))
        self.assertEqual(list(sweep['nfe'][:6]), [1, 2, 4, 8, 16, 32])


class TestSolverFlags(CliTestCase):

    def setUp(self):
        super().setUp()
        field = VelocityField.constant(MlpSpec(2, (4,)), [1.0, 0.0])
        data.save_checkpoint(self.path('c.ckpt'), field)

    def gen_pairs(self, *flags):
        out = self.path('pairs.bin')
        code, err = self.run_cli('gen-pairs', '--config', self.config,
                                 '--teacher', self.path('c.ckpt'), '--n',
                                 '8', '--out', out, *flags)
        solver = data.load_pairs(out).provenance['solver'] if code == 0 \
            else None
        return code, err, solver

    def test_bare_kinds_with_flags(self):
        cases = [
            (('--solver', 'euler', '--nfe', '10'),
             {'kind': 'euler', 'n_steps': 10}),
            (('--solver', 'heun', '--nfe', '3'),
             {'kind': 'heun', 'n_steps': 3}),
            (('--solver', 'two-step', '--t-mid', '0.3'),
             {'kind': 'two_step', 't_mid': 0.3}),
            (('--solver', 'rk45', '--rtol', '1e-4', '--nfe', '500'),
             {'kind': 'rk45', 'rtol': 1e-4, 'atol': 1e-4, 'max_nfe': 500}),
        ]
        for flags, expected in cases:
            with self.subTest(flags=flags):
                code, err, solver = self.gen_pairs(*flags)
                self.assertEqual(code, 0, err)
                for key, value in expected.items():
                    self.assertEqual(solver[key], value)

    def test_flags_override_shorthand(self):
        code, err, solver = self.gen_pairs('--solver', 'euler:4', '--nfe',
                                           '6')
        self.assertEqual(code, 0, err)
        self.assertEqual(solver['n_steps'], 6)

    def test_flag_for_another_kind(self):
        for flags in (('--solver', 'euler', '--t-mid', '0.3'),
                      ('--solver', 'two-step', '--nfe', '4'),
                      ('--solver', 'heun', '--rtol', '1e-3'),
                      ('--solver', 'two-step', '--t-mid', '1.5'),
                      ('--solver', 'euler', '--nfe', '0')):
            with self.subTest(flags=flags):
                code, err, _ = self.gen_pairs(*flags)
                self.assertEqual(code, 1, err)

    def test_eval_applies_flags_per_solver(self):
        code, err = self.run_cli('eval', self.path('c.ckpt'), '--config',
                                 self.config, '--solver', 'euler',
                                 '--solver', 'heun', '--nfe', '4', '--out',
                                 self.path('r.csv'))
        self.assertEqual(code, 0, err)
        frame = pd.read_csv(self.path('r.csv'))
        self.assertEqual(list(frame['solver']), ['euler:4', 'heun:4'])
        self.assertEqual(list(frame['nfe']), [4, 7])

    def test_distill_random_init(self):
        field = VelocityField.initialize(MlpSpec(2, (6,), 4), 1)
        data.save_checkpoint(self.path('flow.ckpt'), field)
        code, err, _ = self.gen_pairs('--solver', 'euler')
        self.assertEqual(code, 0, err)
        for init in ('copy', 'random'):
            code, err = self.run_cli('distill', '--config', self.config,
                                     '--from', self.path('flow.ckpt'),
                                     '--pairs', self.path('pairs.bin'),
                                     '--iters', '0', '--init', init,
                                     '--out', self.path(init + '.ckpt'))
            self.assertEqual(code, 0, err)
        copied, _ = data.load_checkpoint(self.path('copy.ckpt'))
        fresh, _ = data.load_checkpoint(self.path('random.ckpt'))
        self.assertTrue((copied.weights == field.weights).all())
        self.assertFalse((fresh.weights == field.weights).all())


class TestPipeline(CliTestCase):

    def test_pipeline_is_reproducible(self):
        for out in ('a', 'b'):
            code, err = self.run_cli('pipeline', '--config', self.config,
                                     '--out-dir', self.path(out))
            self.assertEqual(code, 0, err)
        names = ['teacher.ckpt', 'reflow.ckpt', 'distill.ckpt',
                 'distill_naive.ckpt', 'reflow_pairs.bin',
                 'distill_pairs.bin', 'report.csv']
        for name in names:
            with self.subTest(name=name):
                self.assertEqual(self.read('a', name), self.read('b', name))
        frame = pd.read_csv(self.path('a', 'report.csv'))
        self.assertEqual(sorted(set(frame['checkpoint'])),
                         ['distill', 'distill_naive', 'reflow', 'teacher'])
        for name in names[:4]:
            data.load_checkpoint(self.path('a', name))
        history = pd.read_csv(self.path('a', 'reflow_history.csv'))
        self.assertEqual(list(history.columns),
                         ['iteration', 'beta', 'loss', 'straightness'])
