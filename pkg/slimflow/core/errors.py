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

'''Exceptions raised by :mod:`slimflow.core`.

Every exception derives from :class:`SlimFlowError` so that callers
(the command line in particular) can separate slimflow failures from
programming errors. Failures that have a natural location, such as the
parameter index holding a non-finite gradient or the byte offset where
a file is truncated, carry it as an attribute as well as in the
message.
'''


class SlimFlowError(Exception):
    '''Base class for all slimflow errors.'''
    pass


class ContractViolation(SlimFlowError, ValueError):
    '''Raised when a precondition of an operation does not hold.

    Examples are a state vector whose width does not match the
    network, a blending coefficient outside ``[0, 1]``, or an empty
    training batch.
    '''
    pass


class StateError(SlimFlowError, RuntimeError):
    '''Raised when an object is used out of order.

    The typical case is calling
    :meth:`~slimflow.core.nn.VelocityField.backward` with a tape that
    never recorded a forward pass, or that was recorded before the
    weights were last updated.
    '''
    pass


class NonFiniteError(SlimFlowError, FloatingPointError):
    '''Raised when a NaN or infinity shows up where it must not.

    Parameters
    ----------
    where : str
        What was being computed (``'gradient'``, ``'euler state'``,
        ``'loss'``, ...).
    index : int
        Parameter index, solver step or training iteration at which
        the non-finite value was found.
    '''

    def __init__(self, where, index, detail=''):
        self.where = where
        self.index = index
        msg = 'non-finite {} at index {}'.format(where, index)
        if detail:
            msg = '{} ({})'.format(msg, detail)
        super().__init__(msg)


class SolverError(SlimFlowError):
    '''Raised when an adaptive solver gives up before reaching t=0.

    The partial result is kept so that callers can inspect how far the
    integration got.

    Parameters
    ----------
    message : str
    state : numpy.ndarray
        Last accepted state of every row.
    times : numpy.ndarray
        Time reached by every row.
    failed : numpy.ndarray
        Indices of the rows that did not finish.
    '''

    def __init__(self, message, state=None, times=None, failed=()):
        self.state = state
        self.times = times
        self.failed = failed
        super().__init__(message)


class PairGenerationError(SlimFlowError):
    '''Raised when too many pairs fail to generate.'''

    def __init__(self, message, skipped=()):
        self.skipped = list(skipped)
        super().__init__(message)


class FormatError(SlimFlowError, ValueError):
    '''Raised when a pair or checkpoint file cannot be parsed.

    Parameters
    ----------
    path : str
    offset : int
        Byte offset at which parsing failed.
    reason : str
    '''

    def __init__(self, path, offset, reason):
        self.path = path
        self.offset = offset
        self.reason = reason
        super().__init__('{}: byte offset {}: {}'.format(path, offset, reason))


class UnsupportedVersionError(FormatError):
    '''Raised when a file declares a format version we cannot read.'''
    pass


class UsageError(SlimFlowError):
    '''Raised for malformed command lines.'''
    pass
