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

'''This module provides :mod:`unittest`-style assertions about
velocity fields, their gradients and the statistics of sampled point
sets.

Assertions are provided via mixins so that they can use other
assertions as building blocks, and so that a test case can compose
exactly the mixins it needs.

.. warning::

    Mixins define `abstract methods <abc>`_ that
    :class:`unittest.TestCase` implements. When mixing them into your
    test case, they must come `after` :class:`unittest.TestCase` in
    the inheritance list.

    .. _abc: https://docs.python.org/3/library/abc.html#abc.abstractmethod

Example:

.. code-block:: python

    import unittest

    from slimflow.mixins import mixins


    class MyTestCase(unittest.TestCase, mixins.ArrayMixins):

        def test_me(self):
            self.assertAllFinite([0.0, 1.0])
'''

import abc
import collections.abc

import numpy as np
import pandas as pd


class ArrayMixins(abc.ABC):
    '''Assertions about numeric arrays.'''

    @abc.abstractmethod
    def fail(self, msg):
        pass  # pragma: no cover

    @abc.abstractmethod
    def _formatMessage(self, msg, standardMsg):
        pass  # pragma: no cover

    def assertArrayAlmostEqual(self, first, second, atol=1e-12, msg=None):
        '''Fail unless ``first`` and ``second`` have the same shape and
        differ by at most ``atol`` everywhere.

        Parameters
        ----------
        first, second : array-like
        atol : float
        msg : str
            If not provided, the :mod:`slimflow.mixins` standard message
            will be used.
        '''
        first = np.asarray(first, dtype=np.float64)
        second = np.asarray(second, dtype=np.float64)
        if first.shape != second.shape:
            standardMsg = 'shapes %s and %s differ' % (first.shape,
                                                       second.shape)
            self.fail(self._formatMessage(msg, standardMsg))
        if not first.size:
            return
        err = np.abs(first - second)
        worst = tuple(int(i) for i in np.unravel_index(np.argmax(err),
                                                       err.shape))
        if not err[worst] <= atol:
            standardMsg = ('arrays differ by %g at index %s (%r != %r), '
                           'tolerance %g') % (err[worst], worst,
                                              first[worst], second[worst],
                                              atol)
            self.fail(self._formatMessage(msg, standardMsg))

    def assertArrayEqual(self, first, second, msg=None):
        '''Fail unless ``first`` and ``second`` have the same shape and
        exactly equal elements.'''
        first = np.asarray(first)
        second = np.asarray(second)
        if first.shape != second.shape or not np.array_equal(first, second):
            standardMsg = 'arrays are not exactly equal'
            self.fail(self._formatMessage(msg, standardMsg))

    def assertAllFinite(self, array, msg=None):
        '''Fail if ``array`` holds a NaN or an infinity.'''
        array = np.asarray(array, dtype=np.float64)
        finite = np.isfinite(array)
        if not finite.all():
            standardMsg = '%d non-finite value(s), first at flat index %d' % (
                finite.size - finite.sum(), np.argmin(finite.reshape(-1)))
            self.fail(self._formatMessage(msg, standardMsg))


class GradientMixins(abc.ABC):
    '''Assertions comparing analytic gradients to finite differences.'''

    @abc.abstractmethod
    def fail(self, msg):
        pass  # pragma: no cover

    @abc.abstractmethod
    def _formatMessage(self, msg, standardMsg):
        pass  # pragma: no cover

    @staticmethod
    def _central_difference(loss, weights, i, step):
        plus = weights.copy()
        plus[i] += step
        minus = weights.copy()
        minus[i] -= step
        return (loss(plus) - loss(minus)) / (2.0 * step)

    def assertGradientMatches(self, loss, weights, grads, indices=None,
                              rel_tol=1e-5, step=1e-5, floor=1e-4,
                              msg=None):
        '''Fail if ``grads`` disagrees with central finite differences of
        ``loss`` at ``weights``.

        The relative error of component ``i`` is
        ``|g_i - d_i| / max(|g_i|, |d_i|, floor)``.

        Parameters
        ----------
        loss : callable
            Maps a flat weight vector to a scalar.
        weights : array-like
        grads : array-like
            Analytic gradient at ``weights``.
        indices : iterable of int, optional
            Components to check; all of them by default.
        rel_tol, step, floor : float
        msg : str
        '''
        weights = np.asarray(weights, dtype=np.float64)
        grads = np.asarray(grads, dtype=np.float64)
        if indices is None:
            indices = range(weights.size)
        worst = (0.0, None, None, None)
        for i in indices:
            numeric = self._central_difference(loss, weights, i, step)
            scale = max(abs(grads[i]), abs(numeric), floor)
            err = abs(grads[i] - numeric) / scale
            if err > worst[0]:
                worst = (err, i, grads[i], numeric)
        if worst[0] >= rel_tol:
            standardMsg = ('gradient of weight %d is %r, finite differences '
                           'give %r (relative error %g)') % (
                               worst[1], worst[2], worst[3], worst[0])
            self.fail(self._formatMessage(msg, standardMsg))


class MonotonicMixins(abc.ABC):
    '''Assertions about sequences of measurements.'''

    @abc.abstractmethod
    def fail(self, msg):
        pass  # pragma: no cover

    @abc.abstractmethod
    def _formatMessage(self, msg, standardMsg):
        pass  # pragma: no cover

    def assertNonIncreasing(self, sequence, tol=0.0, msg=None):
        '''Fail if any element of ``sequence`` exceeds its predecessor by
        more than ``tol``.

        Raises
        ------
        TypeError
            If ``sequence`` is not iterable.
        '''
        if not isinstance(sequence, collections.abc.Iterable):
            raise TypeError('First argument is not iterable')
        sequence = list(sequence)
        for i, (a, b) in enumerate(zip(sequence, sequence[1:])):
            if b > a + tol:
                standardMsg = ('Element %d of %s rises from %r to %r') % (
                    i + 1, sequence, a, b)
                self.fail(self._formatMessage(msg, standardMsg))


class DistributionMixins(abc.ABC):
    '''Statistical assertions about point sets and paired runs.'''

    @abc.abstractmethod
    def fail(self, msg):
        pass  # pragma: no cover

    @abc.abstractmethod
    def _formatMessage(self, msg, standardMsg):
        pass  # pragma: no cover

    def assertStandardNormalMarginal(self, samples, sigmas=5.0, msg=None):
        '''Fail if the per-coordinate mean or variance of ``samples`` is
        further than ``sigmas`` standard errors from 0 or 1.

        The standard error of the mean is ``1/sqrt(n)``; that of the
        variance is ``sqrt(2/n)``.
        '''
        samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
        n = len(samples)
        frame = pd.DataFrame(samples)
        mean = frame.mean()
        var = frame.var(ddof=0)
        bad_mean = (mean.abs() > sigmas / np.sqrt(n))
        bad_var = ((var - 1.0).abs() > sigmas * np.sqrt(2.0 / n))
        if bad_mean.any() or bad_var.any():
            summary = pd.DataFrame({'mean': mean, 'var': var})
            standardMsg = ('%d samples are not standard normal:\n%s') % (
                n, summary.to_string())
            self.fail(self._formatMessage(msg, standardMsg))

    def assertStraighterThan(self, first, second, msg=None):
        '''Fail unless straightness ``first`` is strictly below
        ``second``.'''
        if not first < second:
            standardMsg = 'straightness %r is not below %r' % (first, second)
            self.fail(self._formatMessage(msg, standardMsg))

    def assertMeanNotGreater(self, first, second, slack=0.0, msg=None):
        '''Fail if the mean of paired runs ``first`` exceeds the mean of
        ``second`` by more than ``slack``.

        Parameters
        ----------
        first, second : sequence of float
            One value per seed, in the same seed order.
        slack : float
        msg : str
        '''
        runs = pd.DataFrame({'first': list(first), 'second': list(second)})
        if runs['first'].mean() > runs['second'].mean() + slack:
            standardMsg = ('mean %g exceeds mean %g (slack %g) over runs:\n'
                           '%s') % (runs['first'].mean(),
                                    runs['second'].mean(), slack,
                                    runs.to_string())
            self.fail(self._formatMessage(msg, standardMsg))
