#!/usr/bin/env python


__version__ = "0.1.0"

__revision__ = "20261017"


import numpy as np
from scipy.integrate import trapezoid

from FEATnorm.utils import ValidationError


METRIC_NAMES = ("weighted_accuracy", "probe_accuracy", "auc")


class Metric:

    """
    A named score in [0, 1] together with the number of samples it was
    computed on.
    """

    def __init__(self, name, value, support):
        if name not in METRIC_NAMES:
            raise ValidationError("unknown metric '" + str(name) + "'")
        if not 0.0 <= value <= 1.0:
            raise ValidationError(name + " must be in [0, 1], got " + str(value))
        if support < 1:
            raise ValidationError(name + " needs a positive support")
        self.name = name
        self.value = float(value)
        self.support = int(support)

    def to_dict(self):
        return {"name": self.name, "value": self.value, "support": self.support}

    def __repr__(self):
        return "Metric(" + self.name + "=" + str("{:.4f}".format(self.value)) + ", n=" + str(self.support) + ")"


def weighted_accuracy(predictions, labels, name="weighted_accuracy"):

    """
    Weighted accuracy (WA): the overall fraction of correct predictions,
    which weights every class by its frequency.

    Args:
        predictions : :func:`numpy.array`
            predicted class indices

        labels : :func:`numpy.array`
            true class indices

    Kwargs:
        name : :obj:`str` (optional, default: ``weighted_accuracy``)
            metric name to attach, ``probe_accuracy`` for speaker probes

    Returns:
        :class:`Metric`
    """

    predictions = np.asarray(predictions).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if len(predictions) != len(labels):
        raise ValidationError(
            str(len(predictions)) + " predictions for " + str(len(labels)) + " labels"
        )
    if len(labels) == 0:
        raise ValidationError("weighted accuracy of an empty set")
    return Metric(name, float(np.mean(predictions == labels)), len(labels))


def auc(points):

    """
    Range-normalized trapezoidal area under a curve. A constant curve ``y = c``
    gives ``c``, so the value reads as an average score over the evaluated
    training-set sizes.

    Args:
        points : :obj:`list`
            at least two ``(x, y)`` pairs, ``x`` strictly increasing,
            ``y`` in [0, 1]

    Returns:
        :obj:`float`
    """

    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2 or points.shape[0] < 2:
        raise ValidationError("auc needs at least two (x, y) points")
    x = points[:, 0]
    y = points[:, 1]
    dx = np.diff(x)
    if np.any(dx == 0.0):
        raise ValidationError("duplicate x value in curve: " + str(x[1:][dx == 0.0].tolist()))
    if np.any(dx < 0.0):
        raise ValidationError("curve x values must be strictly increasing")
    if np.any(y < 0.0) or np.any(y > 1.0):
        raise ValidationError("curve y values must be in [0, 1]")
    return float(trapezoid(y, x) / (x[-1] - x[0]))
