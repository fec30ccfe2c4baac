"""Shared test helpers: finite-difference oracles and random geometry factories."""

from __future__ import annotations

import numpy as np
import pytest

# Central-difference step scale: cube root of machine epsilon.
FD_SCALE = float(np.cbrt(np.finfo(float).eps))


def central_diff(f, x, scales=None):
    """Central finite-difference gradient of scalar f at vector x.

    Per-coordinate step h_i = FD_SCALE * max(|x_i|, scale_i).
    """
    x = np.asarray(x, dtype=float)
    if scales is None:
        scales = np.ones_like(x)
    g = np.zeros_like(x)
    for i in range(x.size):
        h = FD_SCALE * max(abs(x[i]), scales[i])
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(20260825)
