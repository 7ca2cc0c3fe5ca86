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

import math
import unittest

import numpy as np

from slimflow.core.data import ToyDistribution
from slimflow.core.errors import ContractViolation, SolverError
from slimflow.core.nn import MlpSpec, VelocityField
from slimflow.core.solvers import (
    SolverSpec,
    euler_solve,
    heun_solve,
    rk45_solve,
    solve_endpoints,
    two_step_euler
)
from slimflow.core.train import TrainConfig, train_flow
from slimflow.mixins import mixins


def linear(x, t):
    return np.array(x, copy=True)


class CountingField(object):
    '''Wraps a field and counts calls and evaluated rows.'''

    def __init__(self, field):
        self.field = field
        self.calls = 0
        self.rows = 0

    def __call__(self, x, t):
        self.calls += 1
        self.rows += len(np.atleast_2d(x))
        return self.field(x, t)


class TestConstantField(unittest.TestCase, mixins.ArrayMixins):

    def setUp(self):
        self.c = np.array([0.75, -1.5])
        self.field = VelocityField.constant(MlpSpec(2, (8,)), self.c)
        self.x1 = np.random.default_rng(1).standard_normal((16, 2))
        self.expected = self.x1 - self.c

    def test_all_solvers_are_exact(self):
        for spec in (SolverSpec.euler(1), SolverSpec.euler(7),
                     SolverSpec.heun(1), SolverSpec.heun(5),
                     SolverSpec.two_step(0.3), SolverSpec.rk45(1e-3)):
            with self.subTest(solver=spec.label):
                self.assertArrayAlmostEqual(
                    spec.solve(self.field, self.x1).endpoint, self.expected)

    def test_rk45_budget(self):
        traj = rk45_solve(self.field, self.x1, rtol=1e-3)
        # a first step of 0.1 and a second covering the remaining 0.9
        self.assertTrue(np.all(traj.nfe_per_sample == 13))

    def test_single_state(self):
        out = euler_solve(self.field, self.x1[0], 3).endpoint
        self.assertEqual(out.shape, (2,))
        self.assertArrayAlmostEqual(out, self.expected[0])


class TestConvergence(unittest.TestCase, mixins.ArrayMixins):

    x1 = np.array([[1.0, -0.5, 2.0]])

    def slope(self, solve):
        exact = math.exp(-1.0) * self.x1
        ns = [10, 100, 1000]
        errors = [np.max(np.abs(solve(n) - exact)) for n in ns]
        return np.polyfit(np.log(ns), np.log(errors), 1)[0]

    def test_euler_is_first_order(self):
        slope = self.slope(lambda n: euler_solve(linear, self.x1, n,
                                                 keep_path=False).endpoint)
        self.assertLess(abs(slope + 1.0), 0.2)

    def test_heun_is_second_order(self):
        slope = self.slope(lambda n: heun_solve(linear, self.x1, n,
                                                keep_path=False).endpoint)
        self.assertLess(abs(slope + 2.0), 0.2)

    def test_rk45_accuracy(self):
        out = rk45_solve(linear, self.x1, rtol=1e-6).endpoint
        self.assertArrayAlmostEqual(out, math.exp(-1.0) * self.x1, atol=1e-6)

    def test_rk45_matches_fine_euler_on_trained_field(self):
        dist = ToyDistribution.gauss_mixture([[1.0, 1.0], [-1.0, -1.0]],
                                             sigma=0.3)
        config = TrainConfig(iters=200, batch_size=128, lr=1e-2)
        field = train_flow(config, dist, MlpSpec(2, (16, 16), 8)).raw
        x1 = np.random.default_rng(3).standard_normal((16, 2))
        fine = euler_solve(field, x1, 100000, keep_path=False).endpoint
        adaptive = rk45_solve(field, x1, rtol=1e-6).endpoint
        self.assertArrayAlmostEqual(adaptive, fine, atol=1e-4)

    def test_euler_path(self):
        traj = euler_solve(linear, self.x1, 4)
        self.assertArrayEqual(traj.times, [1.0, 0.75, 0.5, 0.25, 0.0])
        self.assertEqual(len(traj.states), 5)
        self.assertEqual(len(traj.velocities), 4)
        self.assertArrayEqual(traj.velocities[0], self.x1)


class TestAccounting(unittest.TestCase):

    def setUp(self):
        self.field = VelocityField.initialize(MlpSpec(2, (8,)), 0)
        self.x1 = np.random.default_rng(2).standard_normal((5, 2))

    def test_fixed_step(self):
        for spec, expected in ((SolverSpec.euler(4), 4),
                               (SolverSpec.heun(4), 7),
                               (SolverSpec.heun(1), 1),
                               (SolverSpec.two_step(0.5), 2)):
            with self.subTest(solver=spec.label):
                counter = CountingField(self.field)
                traj = spec.solve(counter, self.x1)
                self.assertEqual(counter.calls, expected)
                self.assertEqual(traj.nfe, expected)
                self.assertEqual(spec.nominal_nfe, expected)

    def test_rk45(self):
        counter = CountingField(self.field)
        traj = rk45_solve(counter, self.x1, rtol=1e-5)
        self.assertEqual(traj.nfe, counter.calls)
        self.assertEqual(int(np.sum(traj.nfe_per_sample)), counter.rows)
        self.assertTrue(np.all((traj.nfe_per_sample - 1) % 6 == 0))


class TestFailures(unittest.TestCase, mixins.ArrayMixins):

    def test_rk45_budget_exceeded(self):
        with self.assertRaises(SolverError) as e:
            rk45_solve(linear, np.ones((2, 1)), rtol=1e-10, max_nfe=7)
        self.assertEqual(list(e.exception.failed), [0, 1])
        self.assertIsNotNone(e.exception.state)

    def test_solve_endpoints_flags_divergence(self):
        def diverging(x, t):
            return np.where(x[:, :1] > 0, np.inf, 0.0) * np.ones_like(x)

        x1 = np.array([[1.0, 0.0], [-1.0, 0.0], [2.0, 1.0]])
        for spec in (SolverSpec.euler(3), SolverSpec.heun(3),
                     SolverSpec.rk45()):
            with self.subTest(solver=spec.label):
                y, failed = solve_endpoints(spec, diverging, x1)
                self.assertEqual(failed.tolist(), [True, False, True])
                self.assertArrayAlmostEqual(y[1], x1[1])

    def test_two_step_times(self):
        with self.assertRaises(ContractViolation):
            two_step_euler(linear, np.ones((1, 1)), 1.0)
        with self.assertRaises(ContractViolation):
            two_step_euler(linear, np.ones((2, 1)), [0.5, 0.0])


class TestTwoStep(unittest.TestCase):

    def test_hand_computed(self):
        # x_t = 1 - 0.5 * 1 = 0.5, out = 0.5 - 0.5 * 0.5 = 0.25
        out = two_step_euler(linear, np.array([1.0]), 0.5)
        self.assertAlmostEqual(float(out[0]), 0.25)

    def test_per_row_times(self):
        out = two_step_euler(linear, np.ones((2, 1)), np.array([0.5, 0.25]))
        self.assertAlmostEqual(out[0, 0], 0.25)
        # x_t = 0.25, out = 0.25 - 0.25 * 0.25
        self.assertAlmostEqual(out[1, 0], 0.1875)


class TestSolverSpec(unittest.TestCase):

    def test_parse(self):
        self.assertEqual(SolverSpec.parse('euler:8'), SolverSpec.euler(8))
        self.assertEqual(SolverSpec.parse('heun:3'), SolverSpec.heun(3))
        self.assertEqual(SolverSpec.parse('rk45:1e-4'),
                         SolverSpec.rk45(1e-4))
        self.assertEqual(SolverSpec.parse('two-step:0.3'),
                         SolverSpec.two_step(0.3))
        with self.assertRaises(ContractViolation):
            SolverSpec.parse('midpoint:2')

    def test_labels(self):
        for text in ('euler:8', 'heun:3', 'rk45:0.001', 'two-step:0.3'):
            self.assertEqual(SolverSpec.parse(text).label, text)

    def test_dict_round_trip(self):
        spec = SolverSpec.rk45(1e-4, 1e-5, 300)
        self.assertEqual(SolverSpec.from_dict(spec.as_dict()), spec)

    def test_invalid(self):
        with self.assertRaises(ContractViolation):
            SolverSpec.euler(0)
        with self.assertRaises(ContractViolation):
            SolverSpec.rk45(0.0)
        with self.assertRaises(ContractViolation):
            SolverSpec.two_step(1.0)
