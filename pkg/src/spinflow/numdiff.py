"""Finite-difference derivatives used whenever a closed form is missing.

The default scheme is the 4th-order central difference

    D(h) = (-f(x+2h) + 8 f(x+h) - 8 f(x-h) + f(x-2h)) / (12 h)

with step h = 1e-4 * (1 + |x|) and one Richardson step

    D = (16 D(h/2) - D(h)) / 15,

which is exact for polynomials up to degree 5 and leaves ~1e-11 relative
error on generic smooth data. All helpers are batched: `f` must accept
arbitrary leading batch axes.
"""
from __future__ import annotations

import numpy as np

DEFAULT_SCALE = 1e-4

# step multiples used by D(h) and D(h/2); +-h is shared between the two
_STEPS = np.array([-2.0, -1.0, -0.5, 0.5, 1.0, 2.0])


def step_size(x, scale=DEFAULT_SCALE):
    """Per-point step scale * (1 + |x|), shape x.shape[:-1]."""
    x = np.asarray(x, dtype=float)
    return scale * (1.0 + np.linalg.norm(x, axis=-1))


def fd_grad(f, x, h=None, richardson=True):
    """Gradient of a batched map f: (..., n) -> (..., *S).

    Returns an array of shape (..., n, *S) whose [..., a, :] slice is the
    partial derivative of f along x^a. All 6n stencil points are evaluated
    in a single call to f. Works for real or complex outputs.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    bshape = x.shape[:-1]
    if h is None:
        h = step_size(x)
    h = np.broadcast_to(np.asarray(h, dtype=float), bshape)

    steps = _STEPS.reshape((6, 1) + (1,) * len(bshape) + (1,))
    dirs = np.eye(n).reshape((1, n) + (1,) * len(bshape) + (n,))
    pts = x.reshape((1, 1) + bshape + (n,)) + steps * h.reshape((1, 1) + bshape + (1,)) * dirs
    vals = np.asarray(f(pts))  # (6, n) + bshape + S

    sshape = vals.shape[2 + len(bshape):]
    hh = h.reshape((1,) + bshape + (1,) * len(sshape))
    f_m2, f_m1, f_mh, f_ph, f_p1, f_p2 = (vals[i] for i in range(6))
    d_h = (-f_p2 + 8.0 * f_p1 - 8.0 * f_m1 + f_m2) / (12.0 * hh)
    if not richardson:
        out = d_h
    else:
        d_h2 = (-f_p1 + 8.0 * f_ph - 8.0 * f_mh + f_m1) / (6.0 * hh)
        out = (16.0 * d_h2 - d_h) / 15.0
    # (n,) + bshape + S  ->  bshape + (n,) + S
    return np.moveaxis(out, 0, len(bshape))


def fd_deriv(f, t, h=1e-4, richardson=True):
    """Derivative of a map f: scalar -> array, same scheme as fd_grad."""
    t = float(t)
    h = float(h)
    f_m2, f_m1, f_mh, f_ph, f_p1, f_p2 = (np.asarray(f(t + s * h)) for s in _STEPS)
    d_h = (-f_p2 + 8.0 * f_p1 - 8.0 * f_m1 + f_m2) / (12.0 * h)
    if not richardson:
        return d_h
    d_h2 = (-f_p1 + 8.0 * f_ph - 8.0 * f_mh + f_m1) / (6.0 * h)
    return (16.0 * d_h2 - d_h) / 15.0
