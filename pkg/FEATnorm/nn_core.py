#!/usr/bin/env python


__version__ = "0.2.0"

__revision__ = "20261017"


import hashlib

import numpy as np
from scipy.special import log_softmax, softmax

from FEATnorm.utils import (
    ContractError,
    OracleError,
    ParseError,
    ShapeError,
    ValidationError,
    rng,
)


ACTIVATIONS = ("identity", "relu", "tanh")

DESCENT = "descent"
ASCENT = "ascent"


class DenseLayer:

    """
    A fully connected layer ``y = act(x W + b)``.

    Args:
        weight : :func:`numpy.array`
            ``in_dim x out_dim`` weight matrix

        bias : :func:`numpy.array`
            ``out_dim`` bias vector

    Kwargs:
        activation : :obj:`str` (optional, default: ``identity``)
            one of ``identity``, ``relu``, ``tanh``. Fixed after construction.
    """

    def __init__(self, weight, bias, activation="identity"):
        if activation not in ACTIVATIONS:
            raise ValidationError(
                "unknown activation '" + str(activation) + "', use one of " + ", ".join(ACTIVATIONS)
            )
        weight = np.array(weight, dtype=np.float64, ndmin=2)
        bias = np.array(bias, dtype=np.float64).reshape(-1)
        if weight.ndim != 2 or bias.shape[0] != weight.shape[1]:
            raise ShapeError(
                "weight " + str(weight.shape) + " and bias " + str(bias.shape) + " do not match"
            )
        self.weight = weight
        self.bias = bias
        self._activation = activation

    @property
    def activation(self):
        return self._activation

    @property
    def in_dim(self):
        return self.weight.shape[0]

    @property
    def out_dim(self):
        return self.weight.shape[1]

    def copy(self):
        return DenseLayer(self.weight.copy(), self.bias.copy(), self._activation)


class Mlp:

    """
    An ordered stack of :class:`DenseLayer`.

    ``version`` is bumped on every in-place parameter change and is used to
    detect stale forward caches. ``n_backward`` counts calls of
    :func:`backward` on this network.

    Args:
        layers : :obj:`list`
            at least one :class:`DenseLayer`, adjacent layers dimension
            compatible
    """

    def __init__(self, layers):
        layers = list(layers)
        if len(layers) == 0:
            raise ValidationError("an Mlp needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i - 1].out_dim != layers[i].in_dim:
                raise ShapeError(
                    "layer "
                    + str(i - 1)
                    + " outputs "
                    + str(layers[i - 1].out_dim)
                    + " but layer "
                    + str(i)
                    + " expects "
                    + str(layers[i].in_dim)
                )
        self.layers = layers
        self.version = 0
        self.n_backward = 0

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    @property
    def n_params(self):
        return int(sum(l.weight.size + l.bias.size for l in self.layers))

    def parameters(self):
        """list of the parameter arrays, (weight, bias) per layer"""
        params = []
        for layer in self.layers:
            params += [layer.weight, layer.bias]
        return params

    def copy(self):
        return Mlp([l.copy() for l in self.layers])

    def digest(self):
        """sha256 over the activation tags and the raw parameter bytes"""
        h = hashlib.sha256()
        for layer in self.layers:
            h.update(layer.activation.encode("ascii"))
            h.update(layer.weight.tobytes())
            h.update(layer.bias.tobytes())
        return h.hexdigest()

    def touch(self):
        self.version += 1


class Gradients:

    """
    Per-layer weight and bias gradients mirroring the shapes of an
    :class:`Mlp`.
    """

    def __init__(self, weights, biases):
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]

    @classmethod
    def zeros_like(cls, net):
        return cls([np.zeros_like(l.weight) for l in net.layers], [np.zeros_like(l.bias) for l in net.layers])

    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def __neg__(self):
        return Gradients([-w for w in self.weights], [-b for b in self.biases])

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def matches(self, net):
        if len(self.weights) != len(net.layers) or len(self.biases) != len(net.layers):
            return False
        return all(
            w.shape == l.weight.shape and b.shape == l.bias.shape
            for w, b, l in zip(self.weights, self.biases, net.layers)
        )


class ForwardCache:

    """
    Activation record of one :func:`forward` call: the input of every layer
    and the output of every layer's activation.
    """

    def __init__(self, net, inputs, outputs):
        self.net_id = id(net)
        self.version = net.version
        self.shapes = [l.weight.shape for l in net.layers]
        self.inputs = inputs
        self.outputs = outputs


def init_mlp(dims, activations, seed, tag="mlp"):

    """
    Creates an :class:`Mlp` with Glorot-uniform weights
    ``U[-a, a], a = sqrt(6 / (in + out))`` and zero biases.

    Args:
        dims : :obj:`list`
            layer widths including the input width, e.g. ``[32, 64, 32]``

        activations : :obj:`list` or :obj:`str`
            one activation per layer, or a single one for all layers

        seed : :obj:`int`
            master seed

    Kwargs:
        tag : :obj:`str` (optional, default: ``mlp``)
            name of the random sub-stream, so different networks built from
            the same master seed get different weights
    """

    dims = [int(d) for d in dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ValidationError("invalid layer dims " + str(dims))
    if isinstance(activations, str):
        activations = [activations] * (len(dims) - 1)
    if len(activations) != len(dims) - 1:
        raise ValidationError(str(len(dims) - 1) + " layers but " + str(len(activations)) + " activations")

    gen = rng(seed, "init", tag)
    layers = []
    for n_in, n_out, act in zip(dims[:-1], dims[1:], activations):
        a = np.sqrt(6.0 / (n_in + n_out))
        layers.append(DenseLayer(gen.uniform(-a, a, size=(n_in, n_out)), np.zeros(n_out), act))
    return Mlp(layers)


def _activate(z, activation):
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(dout, out, activation):
    if activation == "relu":
        return dout * (out > 0.0)
    if activation == "tanh":
        return dout * (1.0 - out ** 2)
    return dout


def forward(net, inputs):

    """
    Forward pass through ``net``.

    Args:
        net : :class:`Mlp`

        inputs : :func:`numpy.array`
            ``rows x in_dim`` batch

    Returns:
        output : :func:`numpy.array`
            ``rows x out_dim``

        cache : :class:`ForwardCache`
            everything :func:`backward` needs
    """

    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ShapeError(
            "input of shape " + str(x.shape) + " does not fit first layer " + str(net.layers[0].weight.shape)
        )

    layer_inputs = []
    layer_outputs = []
    for layer in net.layers:
        layer_inputs.append(x)
        x = _activate(x @ layer.weight + layer.bias, layer.activation)
        layer_outputs.append(x)

    return x, ForwardCache(net, layer_inputs, layer_outputs)


def backward(net, cache, doutput):

    """
    Backward pass through ``net`` for the upstream gradient ``doutput``.

    Args:
        net : :class:`Mlp`
            the network the ``cache`` was recorded for, unchanged since

        cache : :class:`ForwardCache`

        doutput : :func:`numpy.array`
            gradient of the loss with respect to the forward output

    Returns:
        grads : :class:`Gradients`

        dinput : :func:`numpy.array`
            gradient with respect to the forward input, for chaining into an
            upstream network
    """

    if (
        cache.net_id != id(net)
        or cache.version != net.version
        or cache.shapes != [l.weight.shape for l in net.layers]
    ):
        raise ContractError("forward cache does not belong to this network state")

    g = np.asarray(doutput, dtype=np.float64)
    if g.shape != cache.outputs[-1].shape:
        raise ShapeError(
            "doutput of shape " + str(g.shape) + " but forward output was " + str(cache.outputs[-1].shape)
        )

    net.n_backward += 1
    dweights = [None] * len(net.layers)
    dbiases = [None] * len(net.layers)
    for i in reversed(range(len(net.layers))):
        layer = net.layers[i]
        dz = _activation_grad(g, cache.outputs[i], layer.activation)
        dweights[i] = cache.inputs[i].T @ dz
        dbiases[i] = dz.sum(axis=0)
        g = dz @ layer.weight.T

    return Gradients(dweights, dbiases), g


def softmax_cross_entropy(logits, labels):

    """
    Mean softmax cross-entropy over the rows of ``logits``.

    Args:
        logits : :func:`numpy.array`
            ``rows x classes``

        labels : :func:`numpy.array`
            ``rows`` class indices

    Returns:
        loss : :obj:`float`
            ``mean(-log softmax(logits)[label])``

        dlogits : :func:`numpy.array`
            ``(softmax - one_hot) / rows``
    """

    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ShapeError("logits must be 2-D, got shape " + str(logits.shape))
    if labels.shape != (logits.shape[0],):
        raise ShapeError(
            "labels of shape " + str(labels.shape) + " for logits of shape " + str(logits.shape)
        )
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValidationError(
            "labels must be in [0, " + str(logits.shape[1]) + "), got range ["
            + str(labels.min()) + ", " + str(labels.max()) + "]"
        )

    rows = np.arange(logits.shape[0])
    logp = log_softmax(logits, axis=1)
    loss = float(-np.mean(logp[rows, labels]))

    dlogits = softmax(logits, axis=1)
    dlogits[rows, labels] -= 1.0
    dlogits /= logits.shape[0]

    return loss, dlogits


def apply_update(net, grads, rate, direction=DESCENT):

    """
    Plain SGD update, in place.

    ``descent``: ``p <- p - rate * g``; ``ascent``: ``p <- p + rate * g``.
    Parameters with a zero gradient are not touched.

    Args:
        net : :class:`Mlp`

        grads : :class:`Gradients`
            mirroring ``net``

        rate : :obj:`float`
            positive step size

    Kwargs:
        direction : :obj:`str` (optional, default: ``descent``)
            ``descent`` or ``ascent``

    Returns:
        net : :class:`Mlp`
    """

    if not np.isfinite(rate) or rate <= 0:
        raise ValidationError("update rate must be finite and > 0, got " + str(rate))
    if direction not in (DESCENT, ASCENT):
        raise ValidationError("unknown update direction '" + str(direction) + "'")
    if not grads.matches(net):
        raise ShapeError("gradients do not mirror the network shapes")
    if not grads.is_finite():
        raise ValidationError("non-finite gradients")

    step = np.subtract if direction == DESCENT else np.add
    for param, grad in zip(net.parameters(), grads.arrays()):
        step(param, rate * grad, out=param, where=grad != 0.0)
    net.touch()
    return net


def finite_diff_grad(loss_fn, net, step=1e-5):

    """
    Central-difference estimate ``(f(p + h) - f(p - h)) / 2h`` of the gradient
    of ``loss_fn`` for every parameter of ``net``. Each parameter is restored
    bit-exactly after probing.

    Args:
        loss_fn : callable
            deterministic function of ``net`` returning a real loss

        net : :class:`Mlp`

    Kwargs:
        step : :obj:`float` (optional, default: 1e-5)

    Returns:
        grads : :class:`Gradients`
    """

    if not step > 0:
        raise ValidationError("finite-difference step must be > 0, got " + str(step))

    grads = Gradients.zeros_like(net)
    names = []
    for i in range(len(net.layers)):
        names += [(i, "weight"), (i, "bias")]

    for (layer_idx, kind), param, grad in zip(names, net.parameters(), grads.arrays()):
        for index in np.ndindex(param.shape):
            original = param[index]
            param[index] = original + step
            net.touch()
            f_plus = loss_fn(net)
            param[index] = original - step
            net.touch()
            f_minus = loss_fn(net)
            param[index] = original
            net.touch()
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise OracleError(
                    "non-finite loss probing layer " + str(layer_idx) + " " + kind + str(list(index))
                )
            grad[index] = (f_plus - f_minus) / (2.0 * step)

    return grads


def scaled_error(a, b, rtol=1e-4, atol=1e-7):
    """
    Elementwise ``|a - b| / max(|a|, |b|, atol / rtol)``. An entry is within
    tolerance iff the value is <= rtol.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), atol / rtol)


class GradCheckResult:

    def __init__(self, max_error, worst, n_params, rtol):
        self.max_error = max_error
        self.worst = worst
        self.n_params = n_params
        self.rtol = rtol

    @property
    def passed(self):
        return bool(self.max_error <= self.rtol)

    def to_dict(self):
        return {
            "max_error": self.max_error,
            "worst": self.worst,
            "n_params": self.n_params,
            "passed": self.passed,
        }


def gradient_check(net, inputs, labels, step=1e-5, rtol=1e-4, atol=1e-7, corrupt=None):

    """
    Compares :func:`backward` against :func:`finite_diff_grad` for the softmax
    cross-entropy of ``net(inputs)``.

    Args:
        net : :class:`Mlp`

        inputs : :func:`numpy.array`

        labels : :func:`numpy.array`

    Kwargs:
        step : :obj:`float` (optional, default: 1e-5)
            finite-difference step

        rtol : :obj:`float` (optional, default: 1e-4)

        atol : :obj:`float` (optional, default: 1e-7)
            absolute floor near zero

        corrupt : :obj:`float` or :obj:`None` (optional, default: :obj:`None`)
            test hook: added to the first analytic weight gradient entry

    Returns:
        :class:`GradCheckResult`
    """

    def loss_fn(m):
        out, _ = forward(m, inputs)
        return softmax_cross_entropy(out, labels)[0]

    out, cache = forward(net, inputs)
    _, dout = softmax_cross_entropy(out, labels)
    analytic, _ = backward(net, cache, dout)
    if corrupt is not None:
        analytic.weights[0][(0,) * analytic.weights[0].ndim] += corrupt

    numeric = finite_diff_grad(loss_fn, net, step)

    max_error = 0.0
    worst = None
    for i, (wa, wn, ba, bn) in enumerate(
        zip(analytic.weights, numeric.weights, analytic.biases, numeric.biases)
    ):
        for kind, a, n in (("weight", wa, wn), ("bias", ba, bn)):
            err = scaled_error(a, n, rtol, atol)
            idx = np.unravel_index(np.argmax(err), err.shape)
            if worst is None or err[idx] > max_error:
                max_error = float(err[idx])
                worst = {
                    "layer": i,
                    "kind": kind,
                    "index": [int(j) for j in idx],
                    "analytic": float(a[idx]),
                    "numeric": float(n[idx]),
                }

    return GradCheckResult(max_error, worst, net.n_params, rtol)


def _format_row(values):
    return " ".join("%.17g" % v for v in values)


def dumps_mlp(net):

    """
    Plain-text serialization: a header with the layer count and per-layer
    ``in out activation``, then one block per layer with the weight rows and
    the bias row as decimal text (17 significant digits).
    """

    lines = ["layers " + str(len(net.layers))]
    for i, layer in enumerate(net.layers):
        lines.append("layer " + str(i) + " " + str(layer.in_dim) + " " + str(layer.out_dim) + " " + layer.activation)
    for i, layer in enumerate(net.layers):
        lines.append("block " + str(i))
        for row in layer.weight:
            lines.append(_format_row(row))
        lines.append(_format_row(layer.bias))
    return "\n".join(lines) + "\n"


def _floats(text, n, line):
    try:
        values = [float(v) for v in text.split()]
    except ValueError:
        raise ParseError("not a list of numbers: '" + text.strip() + "'", line)
    if len(values) != n:
        raise ParseError("expected " + str(n) + " values, found " + str(len(values)), line)
    if not np.all(np.isfinite(values)):
        raise ParseError("non-finite parameter value", line)
    return values


def loads_mlp(text, first_line=1):

    """
    Inverse of :func:`dumps_mlp`.

    Kwargs:
        first_line : :obj:`int` (optional, default: 1)
            line number of the first line of ``text`` in its file, used in
            error messages
    """

    lines = text.splitlines()
    pos = 0

    def take(expected):
        nonlocal pos
        if pos >= len(lines):
            raise ParseError("unexpected end of model text, expected " + expected, first_line + pos)
        pos += 1
        return lines[pos - 1], first_line + pos - 1

    head, ln = take("'layers N'")
    parts = head.split()
    if len(parts) != 2 or parts[0] != "layers" or not parts[1].isdigit():
        raise ParseError("expected 'layers N', found '" + head + "'", ln)

    specs = []
    for i in range(int(parts[1])):
        row, ln = take("layer header")
        p = row.split()
        if len(p) != 5 or p[0] != "layer" or p[1] != str(i) or not (p[2].isdigit() and p[3].isdigit()):
            raise ParseError("expected 'layer " + str(i) + " IN OUT ACTIVATION', found '" + row + "'", ln)
        if p[4] not in ACTIVATIONS:
            raise ParseError("unknown activation '" + p[4] + "'", ln)
        specs.append((int(p[2]), int(p[3]), p[4]))

    layers = []
    for i, (n_in, n_out, act) in enumerate(specs):
        row, ln = take("block header")
        if row.split() != ["block", str(i)]:
            raise ParseError("expected 'block " + str(i) + "', found '" + row + "'", ln)
        weight = np.empty((n_in, n_out), dtype=np.float64)
        for r in range(n_in):
            row, ln = take("weight row")
            weight[r] = _floats(row, n_out, ln)
        row, ln = take("bias row")
        layers.append(DenseLayer(weight, np.array(_floats(row, n_out, ln)), act))

    try:
        return Mlp(layers)
    except ValidationError as err:
        raise ParseError(str(err), first_line)
