#!/usr/bin/env python


__version__ = "0.2.0"

__revision__ = "20261017"


import json
import logging
import os
import tempfile
import zlib
from multiprocessing import cpu_count
from multiprocessing.pool import Pool

import numpy as np


LOG_FORMAT = "%(asctime)s [%(levelname)8s]: " + "%(message)s [%(funcName)s]"
LOG_DATEFMT = "%Y-%m-%d %H:%M:%S"

logging.basicConfig(format=LOG_FORMAT, datefmt=LOG_DATEFMT)


class FEATnormError(Exception):
    """
    Base class of all errors raised by *FEATnorm*.
    """


class ValidationError(FEATnormError, ValueError):
    """
    Invalid arguments, labels, datasets or configuration values.
    """


class ShapeError(ValidationError):
    """
    Dimension mismatch between two matrices or between a matrix and a layer.
    """


class ParseError(ValidationError):
    """
    Malformed input file. The message carries the 1-based line number.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = "line " + str(line) + ": " + message
        super().__init__(message)
        self.line = line


class ContractError(FEATnormError, RuntimeError):
    """
    An internal protocol was violated, e.g. a stale forward cache was handed
    to backward or a speaker step was scheduled in BASELINE mode.
    """


class OracleError(FEATnormError, ArithmeticError):
    """
    The finite-difference oracle met a non-finite loss.
    """


def get_logger(name, loglevel="INFO", logfile=None):

    """
    Creates a named logger with the package log format.

    Args:
        name : :obj:`str`
            name of the logger, usually the run or dataset identifier

    Kwargs:
        loglevel : :obj:`str` (optional, default: ``INFO``)
            ``INFO`` or ``DEBUG``

        logfile : :obj:`str` (optional, default: :obj:`None`)
            if given, a file handler writing to this path is attached
            (the file is overwritten)

    Returns:
        logger : :class:`logging.Logger`
    """

    logger = logging.getLogger(name)

    if loglevel == "INFO":
        logger.setLevel(logging.INFO)
    if loglevel == "DEBUG":
        logger.setLevel(logging.DEBUG)

    if logfile:
        for handler in list(logger.handlers):
            if isinstance(handler, logging.FileHandler):
                logger.removeHandler(handler)
                handler.close()
        fh = logging.FileHandler(logfile, mode="w")
        fh.setLevel(loglevel)
        fh.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=LOG_DATEFMT))
        logger.addHandler(fh)

    return logger


def close_logger(logger):
    for handler in list(logger.handlers):
        if isinstance(handler, logging.FileHandler):
            logger.removeHandler(handler)
            handler.close()


def stream_key(tag):
    """
    Stable 32-bit integer for a stream name (``crc32``, independent of the
    interpreter's hash randomisation).
    """
    return zlib.crc32(str(tag).encode("utf-8"))


def rng(seed, *tags):

    """
    Returns an independent :class:`numpy.random.Generator` for the named
    sub-stream ``tags`` of the master ``seed``.

    Different tag tuples give statistically independent streams, so changing
    e.g. the split seed never changes the generated features.

    Args:
        seed : :obj:`int`
            master seed

        tags : :obj:`str` or :obj:`int`
            names of the sub-stream
    """

    entropy = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF]
    entropy += [t if isinstance(t, (int, np.integer)) else stream_key(t) for t in tags]
    return np.random.default_rng(np.random.SeedSequence([int(e) for e in entropy]))


_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def splitmix64(counters):

    """
    SplitMix64 output function applied to an array of ``uint64`` counters.

    Args:
        counters : :func:`numpy.array`
            ``uint64`` counter values

    Returns:
        :func:`numpy.array` of ``uint64`` pseudo random words
    """

    with np.errstate(over="ignore"):
        z = counters * _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        z = z ^ (z >> np.uint64(31))
    return z


class CounterStream:

    """
    Counter-based random stream: word ``i`` is ``splitmix64(key + i + 1)``.
    Uniforms use the upper 53 bits, normals use the Box--Muller transform of
    consecutive uniform pairs. The output depends only on ``(seed, tag)`` and
    the number of values drawn before, never on the platform.

    Args:
        seed : :obj:`int`
            master seed

        tag : :obj:`str`
            stream name
    """

    def __init__(self, seed, tag):
        key = (int(seed) & 0xFFFFFFFF) << 32 | stream_key(tag)
        self.key = np.uint64(key)
        self.counter = 0

    def words(self, n):
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return splitmix64(self.key + idx)

    def uniform(self, n):
        """uniform deviates in [0, 1)"""
        return (self.words(n) >> np.uint64(11)).astype(np.float64) * 2.0 ** (-53)

    def normal(self, n):
        """standard normal deviates"""
        n_pairs = (n + 1) // 2
        u = self.uniform(2 * n_pairs)
        u1 = 1.0 - u[0::2]  # (0, 1]
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * n_pairs, dtype=np.float64)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        return z[:n]


def n_workers(n_jobs, loglevel="INFO"):
    if loglevel == "DEBUG":
        return 1
    if n_jobs is None:
        return 1
    if int(n_jobs) == -1:
        return cpu_count()
    if int(n_jobs) < 1:
        raise ValidationError("jobs must be -1 or >= 1, got " + str(n_jobs))
    return int(n_jobs)


def starmap(func, star_args, n_jobs=1):

    """
    Runs ``func`` over ``star_args`` either in-process (``n_jobs == 1``) or on
    a :class:`multiprocessing.pool.Pool`; ``n_jobs = -1`` uses every core.
    Results keep the order of ``star_args``.
    """

    n_jobs = n_workers(n_jobs)
    if n_jobs <= 1 or len(star_args) <= 1:
        return [func(*args) for args in star_args]
    with Pool(min(n_jobs, len(star_args))) as pool:
        return pool.starmap(func, star_args)


def write_atomic(path, text):

    """
    Writes ``text`` to ``path`` through a temporary file in the same directory
    and :func:`os.replace`, so ``path`` is either absent, the old file, or the
    complete new file.
    """

    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp_", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def dump_json(path, obj):
    write_atomic(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")
