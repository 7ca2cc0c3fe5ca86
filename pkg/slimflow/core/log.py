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

''':mod:`slimflow.core` can log a json record for every interesting
event of a run.

If configured, the :data:`slimflow.core.log.logger` writes one json
object per line: the start of each stage (with the config hash and the
seed), training iterations, evaluation reports, pair generation
summaries and checkpoint writes.

Configuration is handled via the environment variables
:envvar:`SLIMFLOW_LOGFILE`, :envvar:`SLIMFLOW_LOG_EVERY` and
:envvar:`SLIMFLOW_LOG_VERBOSE`, or via the :meth:`RunLogger.configure`
method. Environment variables override those set with
:meth:`~RunLogger.configure`, so a script that configures logging
programmatically can always be redirected without changing it.

Note that :class:`RunLogger` should not be instantiated directly;
instead, import and configure :data:`slimflow.core.log.logger`.
'''

import datetime
import json
import logging
import os

import numpy as np

from ._version import __version__


_log = logging.getLogger(__name__)


def _jsonable(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    return value


class RunLogger(object):
    '''The :class:`RunLogger` logs json about each stage of a run.

    Example:

    .. code-block:: py

       from slimflow.core import log

       log.logger.configure(logfile='/path/to/run.jsonl', every=100)

    Training iterations are only logged every ``every`` iterations
    (and always on the last one); all other events are logged
    unconditionally. With ``verbose`` on, iteration records also carry
    the individual loss terms instead of only the total.
    '''

    def __init__(self):
        self._logfile = None
        self._logfilename = None
        self._every = 100
        self._verbose = False

    @staticmethod
    def _open_if_needed(filename):
        if isinstance(filename, (str, bytes, os.PathLike)):
            return open(filename, 'a')
        else:
            # Assume is already file-like
            return filename

    def configure(self, **kwargs):
        '''Configure what run logging is done.

        Settings configured with this method are overridden by
        environment variables.

        Parameters
        ----------
        logfile : str or file object
            If a string, we append to that filename. If an open file
            object, we just write to it. If None, disable logging.
        every : int
            Log one training iteration out of ``every``.
        verbose : bool
            Include every loss term in iteration records.
        '''
        if 'logfile' in kwargs:
            # As in the env var case, the name may be a file object;
            # the lazy opening in ``logfile`` handles both.
            if self._logfile is not None and kwargs['logfile'] != \
                    self._logfilename:
                self.close()
            self._logfilename = kwargs['logfile']

        if 'every' in kwargs:
            self._every = int(kwargs['every'])

        if 'verbose' in kwargs:
            self._verbose = kwargs['verbose']

    def close(self):
        if self._logfile is not None and \
                self._logfile is not self._logfilename:
            self._logfile.close()
        self._logfile = None

    @property
    def log_enabled(self):
        return self.logfile is not None

    @property
    def logfile(self):
        if self._logfile:
            return self._logfile
        if self.logfilename:
            self._logfile = self._open_if_needed(self.logfilename)
        return self._logfile

    @property
    def logfilename(self):
        return os.environ.get('SLIMFLOW_LOGFILE', self._logfilename)

    @property
    def every(self):
        try:
            return max(1, int(os.environ['SLIMFLOW_LOG_EVERY']))
        except KeyError:
            return max(1, self._every)

    @property
    def verbose(self):
        verbose = os.environ.get('SLIMFLOW_LOG_VERBOSE', self._verbose)
        if isinstance(verbose, str):
            return verbose.lower() not in ('', '0', 'false', 'no')
        return bool(verbose)

    def _write(self, doc):
        if not self.log_enabled:
            return
        now = datetime.datetime.now()
        doc['slimflow_version'] = __version__
        doc['@timestamp'] = now.strftime('%Y-%m-%dT%H:%M:%S.%f')
        try:
            json.dump(_jsonable(doc), self.logfile)
            self.logfile.write('\n')
            self.logfile.flush()
        except Exception:
            _log.exception('Failed to write run log record')

    def log_event(self, stage, event, **fields):
        '''Log an arbitrary event of ``stage``.'''
        doc = {'stage': stage, 'event': event}
        doc.update(fields)
        self._write(doc)

    def log_stage_start(self, stage, config_hash, seed, **fields):
        self.log_event(stage, 'start', config_hash=config_hash, seed=seed,
                       **fields)

    def log_iteration(self, stage, iteration, total, loss, beta=None,
                      terms=None):
        '''Log training iteration ``iteration`` out of ``total``.

        Only every :attr:`every`-th iteration and the final one are
        written.
        '''
        last = iteration == total - 1
        if not last and iteration % self.every:
            return
        doc = {'iteration': iteration, 'loss': float(loss)}
        if beta is not None:
            doc['beta'] = float(beta)
        if terms and self.verbose:
            doc['terms'] = {k: float(v) for k, v in terms.items()}
        self.log_event(stage, 'iteration', **doc)

    def log_report(self, stage, report):
        '''Log an :class:`~slimflow.core.metrics.EvalReport`.'''
        self.log_event(stage, 'report', **report.as_row())


logger = RunLogger()
