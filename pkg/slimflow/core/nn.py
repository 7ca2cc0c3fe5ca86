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

'''Dense velocity fields with exact reverse-mode gradients.

A :class:`VelocityField` is a time-conditioned multilayer perceptron
``v(x, t)`` whose output has the same width as its state input. Time
enters through a sinusoidal embedding concatenated to the state. All
arithmetic is done in 64-bit floats on :mod:`numpy` arrays, one batch
row per sample.

Gradients are computed by hand: :meth:`VelocityField.forward` can
record its intermediates on a :class:`ForwardTape`, and
:meth:`VelocityField.backward` turns the gradient of a scalar loss with
respect to the network output into the gradient with respect to every
weight (a :class:`GradTape`). Optimization is done with
:func:`adam_step` and smoothed with :func:`ema_update`.

Example:

.. code-block:: python

    import numpy as np
    from slimflow.core import nn

    spec = nn.MlpSpec(in_dim=2, hidden=(32, 32))
    field = nn.VelocityField.initialize(spec, seed=0)
    tape = nn.ForwardTape()
    y = field.forward(np.zeros((4, 2)), np.full(4, 0.5), tape=tape)
    grads = field.backward(tape, 2 * y / len(y))
'''

import dataclasses

import numpy as np

from .errors import ContractViolation, NonFiniteError, StateError


ACTIVATIONS = ('tanh', 'silu')

# Frequencies of the time embedding span [1, MAX_FREQUENCY] rad per
# unit time.
MAX_FREQUENCY = 64.0


def _sigmoid(a):
    # tanh form does not overflow for large |a|
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _activate(kind, a):
    if kind == 'tanh':
        return np.tanh(a)
    return a * _sigmoid(a)


def _activate_grad(kind, a):
    if kind == 'tanh':
        return 1.0 - np.tanh(a) ** 2
    s = _sigmoid(a)
    return s * (1.0 + a * (1.0 - s))


def time_embedding(t, width):
    '''Sinusoidal embedding of the times ``t`` (shape ``(n,)``).

    Returns an ``(n, width)`` array of ``sin`` then ``cos`` features at
    geometrically spaced frequencies; an odd ``width`` gets ``t`` itself
    as its last column.
    '''
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = width // 2
    if half:
        freqs = np.geomspace(1.0, MAX_FREQUENCY, half)
        args = t[:, None] * freqs[None, :]
        features = [np.sin(args), np.cos(args)]
    else:
        features = []
    if width % 2:
        features.append(t[:, None])
    if not features:
        return np.zeros((len(t), 0))
    return np.concatenate(features, axis=1)


@dataclasses.dataclass(frozen=True)
class MlpSpec(object):
    '''Architecture of a :class:`VelocityField`.

    The network maps ``in_dim + time_embed_dim`` inputs through the
    ``hidden`` layers to ``in_dim`` outputs. Hidden layers apply
    ``activation``; the output layer is linear.
    '''

    in_dim: int
    hidden: tuple = (64, 64)
    time_embed_dim: int = 16
    activation: str = 'silu'

    def __post_init__(self):
        object.__setattr__(self, 'hidden',
                           tuple(int(h) for h in self.hidden))
        if int(self.in_dim) < 1:
            raise ContractViolation(
                'in_dim must be at least 1, got {}'.format(self.in_dim))
        if any(h < 1 for h in self.hidden):
            raise ContractViolation(
                'hidden widths must be at least 1, got {}'.format(
                    self.hidden))
        if int(self.time_embed_dim) < 0:
            raise ContractViolation('time_embed_dim must be non-negative')
        if self.activation not in ACTIVATIONS:
            raise ContractViolation('unknown activation {!r}; expected one '
                                    'of {}'.format(self.activation,
                                                   ACTIVATIONS))

    @property
    def layer_sizes(self):
        return ([self.in_dim + self.time_embed_dim] + list(self.hidden)
                + [self.in_dim])

    @property
    def layer_shapes(self):
        sizes = self.layer_sizes
        return list(zip(sizes[:-1], sizes[1:]))

    @property
    def activation_id(self):
        return ACTIVATIONS.index(self.activation)

    def as_dict(self):
        return {'in_dim': self.in_dim, 'hidden': list(self.hidden),
                'time_embed_dim': self.time_embed_dim,
                'activation': self.activation}

    @classmethod
    def from_dict(cls, d, in_dim=None):
        d = dict(d)
        if in_dim is not None:
            d.setdefault('in_dim', in_dim)
        return cls(in_dim=int(d['in_dim']),
                   hidden=tuple(d.get('hidden', (64, 64))),
                   time_embed_dim=int(d.get('time_embed_dim', 16)),
                   activation=d.get('activation', 'silu'))


def count_params_macs(spec):
    '''Count parameters and multiply-accumulates of one forward pass.

    Parameters
    ----------
    spec : MlpSpec

    Returns
    -------
    tuple of int
        ``(params, macs)`` where ``params`` sums ``n_in * n_out + n_out``
        and ``macs`` sums ``n_in * n_out`` over the layers. Biases and
        the parameter-free time embedding are not counted as MACs.
    '''
    params = macs = 0
    for n_in, n_out in spec.layer_shapes:
        params += n_in * n_out + n_out
        macs += n_in * n_out
    return params, macs


class ForwardTape(object):
    '''Intermediates of one recorded forward pass.

    Pass an empty tape to :meth:`VelocityField.forward` and hand it to
    :meth:`VelocityField.backward` afterwards. A tape is tied to the
    field and the weight version it was recorded with.
    '''

    def __init__(self):
        self.recorded = False
        self.inputs = []
        self.preacts = []
        self.squeeze = False
        self._owner = None
        self._version = None

    def _record(self, owner, version):
        self.recorded = True
        self._owner = owner
        self._version = version


@dataclasses.dataclass
class GradTape(object):
    '''Gradient of a scalar loss with respect to every weight.'''

    grads: np.ndarray
    loss: float = 0.0

    def __add__(self, other):
        return GradTape(self.grads + other.grads, self.loss + other.loss)


class VelocityField(object):
    '''A time-conditioned MLP velocity field ``v(x, t)``.

    Parameters
    ----------
    spec : MlpSpec
    weights : array-like, optional
        Flat parameter vector of length ``param_count``. Defaults to
        all zeros. Layers are laid out in order, each as its
        ``(n_in, n_out)`` weight matrix in row-major order followed by
        its bias.
    '''

    def __init__(self, spec, weights=None):
        self.spec = spec
        self._param_count, self._macs = count_params_macs(spec)
        if weights is None:
            weights = np.zeros(self._param_count)
        weights = np.array(weights, dtype=np.float64, copy=True).reshape(-1)
        if weights.shape != (self._param_count,):
            raise ContractViolation(
                'expected {} weights for {}, got {}'.format(
                    self._param_count, spec, weights.size))
        if not np.all(np.isfinite(weights)):
            raise NonFiniteError('weight', int(np.argmin(
                np.isfinite(weights))))
        self._weights = weights
        self._version = 0

    @classmethod
    def initialize(cls, spec, seed=0):
        '''Kaiming-uniform initialization with a fixed seed.

        Every weight and bias of a layer with fan-in ``n_in`` is drawn
        from ``U(-1/sqrt(n_in), 1/sqrt(n_in))``.
        '''
        rng = np.random.default_rng(seed)
        chunks = []
        for n_in, n_out in spec.layer_shapes:
            bound = 1.0 / np.sqrt(n_in)
            chunks.append(rng.uniform(-bound, bound, size=n_in * n_out))
            chunks.append(rng.uniform(-bound, bound, size=n_out))
        return cls(spec, np.concatenate(chunks))

    @classmethod
    def zeros(cls, spec):
        return cls(spec)

    @classmethod
    def constant(cls, spec, value):
        '''A field that returns ``value`` everywhere.

        All weights are zero except the output bias.
        '''
        field = cls(spec)
        weights = field.weights
        weights[-spec.in_dim:] = np.broadcast_to(
            np.asarray(value, dtype=np.float64), (spec.in_dim,))
        field.set_weights(weights)
        return field

    def copy(self):
        return type(self)(self.spec, self._weights)

    @property
    def in_dim(self):
        return self.spec.in_dim

    @property
    def param_count(self):
        return self._param_count

    @property
    def macs(self):
        return self._macs

    @property
    def weights(self):
        '''A copy of the flat parameter vector.'''
        return self._weights.copy()

    def set_weights(self, weights):
        weights = np.asarray(weights, dtype=np.float64).reshape(-1)
        if weights.shape != self._weights.shape:
            raise ContractViolation(
                'expected {} weights, got {}'.format(
                    self._param_count, weights.size))
        self._weights = weights.copy()
        self._version += 1

    def layers(self, weights=None):
        '''Views ``(W, b)`` of every layer into a flat vector.'''
        flat = self._weights if weights is None else weights
        views = []
        offset = 0
        for n_in, n_out in self.spec.layer_shapes:
            W = flat[offset:offset + n_in * n_out].reshape(n_in, n_out)
            offset += n_in * n_out
            b = flat[offset:offset + n_out]
            offset += n_out
            views.append((W, b))
        return views

    def _prepare(self, x, t):
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        x = np.atleast_2d(x)
        if x.ndim != 2 or x.shape[1] != self.spec.in_dim:
            raise ContractViolation(
                'state has shape {}, expected (n, {})'.format(
                    x.shape, self.spec.in_dim))
        t = np.broadcast_to(np.asarray(t, dtype=np.float64),
                            (x.shape[0],))
        if np.any((t < 0.0) | (t > 1.0)):
            raise ContractViolation('time outside [0, 1]')
        return x, t, squeeze

    def forward(self, x, t, tape=None):
        '''Evaluate ``v(x, t)``.

        Parameters
        ----------
        x : array-like
            A single state of shape ``(in_dim,)`` or a batch of shape
            ``(n, in_dim)``.
        t : float or array-like
            Time in ``[0, 1]``, scalar or one per row.
        tape : ForwardTape, optional
            If given, the intermediates needed by :meth:`backward` are
            recorded on it.

        Returns
        -------
        numpy.ndarray
            Velocity with the same shape as ``x``.

        Raises
        ------
        ContractViolation
            If ``x`` does not have ``in_dim`` columns or ``t`` leaves
            ``[0, 1]``.
        '''
        x, t, squeeze = self._prepare(x, t)
        h = np.concatenate(
            [x, time_embedding(t, self.spec.time_embed_dim)], axis=1)
        layers = self.layers()
        if tape is not None:
            tape.inputs = []
            tape.preacts = []
            tape.squeeze = squeeze
        for i, (W, b) in enumerate(layers):
            if tape is not None:
                tape.inputs.append(h)
            a = h @ W + b
            if i == len(layers) - 1:
                h = a
            else:
                if tape is not None:
                    tape.preacts.append(a)
                h = _activate(self.spec.activation, a)
        if tape is not None:
            tape._record(self, self._version)
        return h[0] if squeeze else h

    __call__ = forward

    def backward(self, tape, grad_output, loss=0.0):
        '''Backpropagate ``grad_output`` through a recorded forward pass.

        Parameters
        ----------
        tape : ForwardTape
            Tape filled by :meth:`forward` on this field with the
            current weights.
        grad_output : array-like
            Gradient of the scalar loss with respect to the output of
            that forward pass (same shape as the output).
        loss : float
            Value of the loss, carried along on the result.

        Returns
        -------
        GradTape

        Raises
        ------
        StateError
            If the tape holds no forward pass of this field, or the
            weights changed since it was recorded.
        '''
        if tape is None or not tape.recorded:
            raise StateError('backward called without a recorded forward '
                             'pass')
        if tape._owner is not self or tape._version != self._version:
            raise StateError('tape was recorded with different weights')
        g = np.asarray(grad_output, dtype=np.float64)
        if tape.squeeze:
            g = g.reshape(1, -1)
        layers = self.layers()
        grads = np.zeros_like(self._weights)
        views = self.layers(grads)
        for i in reversed(range(len(layers))):
            if i < len(layers) - 1:
                g = g * _activate_grad(self.spec.activation, tape.preacts[i])
            dW, db = views[i]
            dW[...] = tape.inputs[i].T @ g
            db[...] = g.sum(axis=0)
            if i:
                g = g @ layers[i][0].T
        return GradTape(grads, float(loss))


@dataclasses.dataclass
class AdamState(object):
    '''Moments and hyper-parameters of the Adam optimizer.'''

    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = None
    v: np.ndarray = None

    @classmethod
    def for_field(cls, field, **kwargs):
        return cls(m=np.zeros(field.param_count),
                   v=np.zeros(field.param_count), **kwargs)


def adam_step(state, field, grads):
    '''Apply one bias-corrected Adam update to ``field`` in place.

    Parameters
    ----------
    state : AdamState
    field : VelocityField
    grads : GradTape

    Returns
    -------
    tuple
        ``(field, state)``, both updated in place.

    Raises
    ------
    NonFiniteError
        If any gradient is NaN or infinite; the weights are left
        untouched and the error names the first bad parameter index.
    '''
    g = np.asarray(grads.grads, dtype=np.float64)
    if g.shape != (field.param_count,) or state.m.shape != g.shape:
        raise ContractViolation('gradient, moments and weights are not '
                                'aligned')
    finite = np.isfinite(g)
    if not finite.all():
        raise NonFiniteError('gradient', int(np.argmin(finite)))
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    field.set_weights(field._weights
                      - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return field, state


@dataclasses.dataclass
class EmaState(object):
    '''Exponential moving average of a field's weights.'''

    ratio: float = 0.999
    shadow: np.ndarray = None

    def __post_init__(self):
        if not 0.0 <= self.ratio < 1.0:
            raise ContractViolation(
                'EMA ratio must be in [0, 1), got {}'.format(self.ratio))

    @classmethod
    def for_field(cls, field, ratio=0.999):
        return cls(ratio=ratio, shadow=field.weights)

    def as_field(self, spec):
        return VelocityField(spec, self.shadow)


def ema_update(ema, field):
    '''``shadow = ratio * shadow + (1 - ratio) * weights``, in place.'''
    if ema.shadow.shape != (field.param_count,):
        raise ContractViolation('EMA shadow and weights are not aligned')
    ema.shadow = ema.ratio * ema.shadow + (1.0 - ema.ratio) * field._weights
    return ema
