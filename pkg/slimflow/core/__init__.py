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

'''slimflow: small rectified flows, annealing reflow and one-step
distillation on toy data, in numpy.

The pipeline has three stages:

1. train a teacher rectified flow on a toy distribution
   (:func:`~slimflow.core.train.train_flow`);
2. simulate teacher pairs and train a smaller student on them with
   annealing reflow;
3. distill the student into a one-step generator with
   :func:`~slimflow.core.distill.flow_guided_distill`.

:mod:`slimflow.core.metrics` measures straightness and sliced
Wasserstein distance to the data.
'''

from ._version import __version__  # noqa: F401
from .errors import (
    ContractViolation,
    FormatError,
    NonFiniteError,
    PairGenerationError,
    SlimFlowError,
    SolverError,
    StateError,
    UnsupportedVersionError,
    UsageError
)
from .main import main, run


__all__ = (
    'ContractViolation',
    'FormatError',
    'NonFiniteError',
    'PairGenerationError',
    'SlimFlowError',
    'SolverError',
    'StateError',
    'UnsupportedVersionError',
    'UsageError',
    'main',
    'run'
)
