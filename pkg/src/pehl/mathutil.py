"""Numerically careful scalar maps shared by the linear and neural models."""

from __future__ import annotations

import numpy as np


def sigmoid(z):
    """Logistic function, accurate to ~1 ulp across the whole real line.

    Branches on sign so neither tail suffers cancellation or overflow.
    """
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def softplus(z):
    """log(1 + exp(z)) without overflow."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z > 0
    out[pos] = z[pos] + np.log1p(np.exp(-z[pos]))
    out[~pos] = np.log1p(np.exp(z[~pos]))
    return out if out.ndim else float(out)
