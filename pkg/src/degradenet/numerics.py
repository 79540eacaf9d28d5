"""Small numerical primitives shared by the rest of the package.

Everything here works on float64 numpy arrays. Randomness always flows
through an explicit ``numpy.random.Generator`` built by :func:`make_rng`, so
any function taking an ``rng`` is a pure function of its inputs and seed.
"""
import zlib

import numpy as np

from .errors import InvalidInputError, ShapeError

ACTIVATIONS = ("sigmoid", "tanh", "identity")


def make_rng(seed):
    """PCG64-backed generator; identical seeds give identical streams on every platform."""
    if seed < 0 or seed >= 2**64:
        raise InvalidInputError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.PCG64(int(seed)))


def child_seed(master_seed, name):
    """Derive a named, independent 64-bit seed from a master seed."""
    ss = np.random.SeedSequence([int(master_seed), zlib.crc32(name.encode("utf-8"))])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _check_finite(v):
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("non-finite value in input")
    return v


def sigmoid(x):
    # exp is only ever taken of -|x|, so nothing overflows
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def apply_activation(kind, v):
    v = _check_finite(v)
    if kind == "sigmoid":
        return sigmoid(v)
    if kind == "tanh":
        return np.tanh(v)
    if kind == "identity":
        return v.copy()
    raise InvalidInputError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def affine(W, v, b):
    """Return ``W @ v + b`` after checking shapes."""
    W = np.asarray(W, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if W.ndim != 2 or v.ndim != 1 or b.ndim != 1:
        raise ShapeError("affine expects a matrix, a vector and a bias vector")
    if W.shape[1] != v.shape[0]:
        raise ShapeError(f"W has {W.shape[1]} columns but v has length {v.shape[0]}")
    if W.shape[0] != b.shape[0]:
        raise ShapeError(f"W has {W.shape[0]} rows but b has length {b.shape[0]}")
    return W @ v + b


def xavier_init(rows, cols, rng):
    if rows < 1 or cols < 1:
        raise ShapeError(f"xavier_init needs positive dimensions, got ({rows}, {cols})")
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))
