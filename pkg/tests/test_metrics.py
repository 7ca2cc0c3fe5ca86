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

import unittest

import numpy as np
from scipy.optimize import linear_sum_assignment

from slimflow.core.errors import ContractViolation, SolverError
from slimflow.core.metrics import (
    EvalReport,
    evaluate_checkpoint,
    nfe_sweep,
    sliced_w2,
    straightness
)
from slimflow.core.nn import MlpSpec, VelocityField
from slimflow.core.solvers import SolverSpec


class TimeField(object):
    '''v(x, t) = t in one dimension.'''

    in_dim = 1

    def __call__(self, x, t):
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (len(x),))
        return t[:, None].copy()


class TestStraightness(unittest.TestCase):

    def test_constant_field(self):
        field = VelocityField.constant(MlpSpec(2, (4,)), [1.0, -2.0])
        self.assertLess(straightness(field), 1e-20)

    def test_time_dependent_field(self):
        n = 100
        value = straightness(TimeField(), n_samples=8, n_steps=n)
        self.assertAlmostEqual(value, (n * n - 1) / (12.0 * n * n),
                               places=12)
        self.assertLess(abs(value - 1.0 / 12.0), 1e-3)

    def test_deterministic_and_non_negative(self):
        field = VelocityField.initialize(MlpSpec(2, (8,)), 0)
        a = straightness(field, 64, 10, seed=3)
        self.assertEqual(a, straightness(field, 64, 10, seed=3))
        self.assertGreater(a, 0.0)

    def test_needs_two_steps(self):
        with self.assertRaises(ContractViolation):
            straightness(TimeField(), n_steps=1)


class TestSlicedW2(unittest.TestCase):

    def setUp(self):
        rng = np.random.default_rng(0)
        self.a = rng.standard_normal((500, 2))
        self.b = rng.standard_normal((300, 2)) + [2.0, 0.0]

    def test_identical_sets(self):
        self.assertEqual(sliced_w2(self.a, self.a), 0.0)

    def test_point_masses(self):
        self.assertEqual(sliced_w2([[0.0]], [[3.0]]), 9.0)
        self.assertEqual(sliced_w2([0.0], [-1.5]), 2.25)

    def test_symmetric(self):
        self.assertEqual(sliced_w2(self.a, self.b, seed=4),
                         sliced_w2(self.b, self.a, seed=4))

    def test_quadratic_scaling(self):
        self.assertAlmostEqual(sliced_w2(2.0 * self.a, 2.0 * self.b),
                               4.0 * sliced_w2(self.a, self.b), places=12)

    def test_gaussian_shift(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((10000, 2))
        b = rng.standard_normal((10000, 2)) + [2.0, 0.0]
        # E[(2 cos theta)^2] = 2 over uniform directions
        self.assertAlmostEqual(sliced_w2(a, b), 2.0, delta=0.5)

    def test_matches_assignment_oracle(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((64, 2))
        b = rng.standard_normal((64, 2)) * 0.5 + [1.0, -1.0]
        directions = np.random.default_rng(7).standard_normal((128, 2))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        costs = []
        for d in directions:
            pa, pb = a @ d, b @ d
            cost = (pa[:, None] - pb[None, :]) ** 2
            rows, cols = linear_sum_assignment(cost)
            costs.append(cost[rows, cols].mean())
        self.assertAlmostEqual(sliced_w2(a, b, seed=7), float(np.mean(costs)),
                               places=9)

    def test_dim_mismatch(self):
        with self.assertRaises(ContractViolation):
            sliced_w2(np.zeros((3, 2)), np.zeros((3, 3)))
        with self.assertRaises(ContractViolation):
            sliced_w2(np.zeros((0, 2)), np.zeros((3, 2)))


class TestReports(unittest.TestCase):

    def setUp(self):
        self.field = VelocityField.constant(MlpSpec(2, (4,)), [1.0, 0.0])
        self.reference = np.random.default_rng(3).standard_normal((256, 2))

    def test_constant_field_sweep(self):
        solvers = [SolverSpec.euler(n) for n in (1, 2, 10)]
        reports = nfe_sweep(self.field, solvers, 256, self.reference,
                            seed=1, checkpoint='c')
        self.assertEqual([r.nfe for r in reports], [1, 2, 10])
        values = [r.sw2 for r in reports]
        self.assertLess(max(values) - min(values), 1e-12)
        self.assertEqual(len({r.straightness for r in reports}), 1)
        self.assertEqual(reports[0].params, self.field.param_count)

    def test_rk45_nfe_is_counted(self):
        report = evaluate_checkpoint(self.field, self.reference,
                                     SolverSpec.rk45(), n_samples=32)
        self.assertEqual(report.nfe, 13)

    def test_solver_errors_propagate(self):
        field = VelocityField.initialize(MlpSpec(2, (8,)), 0)
        with self.assertRaises(SolverError):
            nfe_sweep(field, [SolverSpec.rk45(1e-12, max_nfe=7)], 16,
                      self.reference)

    def test_as_row(self):
        report = EvalReport('teacher', SolverSpec.heun(2), 3, 0.5, 0.25,
                            10, 8, 0)
        self.assertEqual(report.as_row(), {
            'checkpoint': 'teacher', 'solver': 'heun:2', 'nfe': 3,
            'straightness': 0.5, 'sw2': 0.25, 'params': 10, 'macs': 8,
            'seed': 0})

    def test_negative_values(self):
        with self.assertRaises(ContractViolation):
            EvalReport('x', SolverSpec.euler(1), 1, -1.0, 0.0, 1, 1, 0)
