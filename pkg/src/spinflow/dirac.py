"""Dirac operator on a framed chart: symbol parts and pointwise action.

With sigma^a = s^j e_j^a built from the Pauli matrices and an orthonormal
framing, the operator acting on 2-spinor fields is

    W u = -i sigma^a (d_a u + (1/4) sigma_b (d_a sigma^b
                                + Gamma^b_ag sigma^g) u).

Its principal symbol W_prin(x, eta) = sigma^a eta_a has eigenvalues
+-h(x, eta), h = sqrt(g^ab eta_a eta_b), with rank-1 spectral projections
P_pm = (Id +- W_prin / h) / 2.  The zero-order matrix part W0(x) and the
subprincipal matrix

    W_sub(x) = W0(x) + (i/2) rho^{-1} d_a(rho sigma^a),    rho = sqrt(det g),

contract all coordinate indices covariantly (the parenthesised W0 factor is
nabla_a sigma^b), so both are chart-independent matrix functions of the
point once the framing is fixed; they may be evaluated in whichever chart
is convenient.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ZeroCovector
from .framing import ID2, PAULI
from .geometry import christoffel
from .numdiff import fd_grad

# spin conjugation matrix c; the antilinear map v -> c conj(v) squares to -Id
CONJ_C = np.array([[0.0, -1.0], [1.0, 0.0]], dtype=complex)


def sigma_matrices(frame, x):
    """Pauli-frame contractions sigma^a = s^j e_j^a, shape (..., 3, 2, 2)."""
    E = frame.frame(x)
    return np.einsum('jpq,...ja->...apq', PAULI, E)


def _dsigma(frame, x):
    """d_a sigma^b as (..., a, b, 2, 2)."""
    dE = frame.dframe(x)
    return np.einsum('jpq,...ajb->...abpq', PAULI, dE)


def covector_norm(chart, x, eta):
    """h(x, eta) = sqrt(g^ab eta_a eta_b), batched."""
    ginv = chart.inv_metric(x)
    h2 = np.einsum('...a,...ab,...b->...', eta, ginv, eta)
    return np.sqrt(h2)


def principal_symbol(frame, x, eta):
    """W_prin(x, eta) = sigma^a eta_a, shape (..., 2, 2)."""
    sig = sigma_matrices(frame, x)
    return np.einsum('...apq,...a->...pq', sig, np.asarray(eta, dtype=float))


def zero_order_part(chart, frame, x):
    """Zero-order matrix -(i/4) sigma^a sigma_b nabla_a sigma^b at x."""
    x = np.asarray(x, dtype=float)
    gmat = chart.metric(x)
    sig = sigma_matrices(frame, x)
    sig_low = np.einsum('...bc,...cpq->...bpq', gmat, sig)
    Gam = christoffel(chart, x)
    covd = (_dsigma(frame, x)
            + np.einsum('...bag,...gpq->...abpq', Gam, sig))
    return -0.25j * np.einsum('...apq,...bqr,...abrs->...ps',
                              sig, sig_low, covd)


def w_subprincipal(chart, frame, x):
    """Subprincipal matrix W0 + (i/2) rho^{-1} d_a(rho sigma^a) at x.

    The divergence term uses d_a log rho = Gamma^b_ab, so only first metric
    derivatives enter.
    """
    x = np.asarray(x, dtype=float)
    sig = sigma_matrices(frame, x)
    Gam = christoffel(chart, x)
    div_sig = (np.einsum('...aapq->...pq', _dsigma(frame, x))
               + np.einsum('...a,...apq->...pq',
                           np.einsum('...bab->...a', Gam), sig))
    return zero_order_part(chart, frame, x) + 0.5j * div_sig


def _phase_fixed_unit(v):
    """Normalize and rotate so the largest-|.| component (ties -> first) is
    real positive."""
    a0 = np.abs(v[..., 0])
    a1 = np.abs(v[..., 1])
    anchor = np.where(a0 >= a1, v[..., 0], v[..., 1])
    v = v * np.conj(anchor / np.abs(anchor))[..., None]
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _projector_column(P):
    """Unit vector spanning the range of a rank-1 Hermitian projector."""
    n0 = np.einsum('...p,...p->...', np.conj(P[..., :, 0]), P[..., :, 0]).real
    n1 = np.einsum('...p,...p->...', np.conj(P[..., :, 1]), P[..., :, 1]).real
    v = np.where((n0 >= n1)[..., None], P[..., :, 0], P[..., :, 1])
    return _phase_fixed_unit(v)


def eigenpairs_projections(chart, frame, x, eta):
    """(h, v_plus, v_minus, P_plus, P_minus) of the principal symbol.

    h is the positive eigenvalue, P_pm = (Id +- W_prin / h) / 2 the rank-1
    spectral projections, and v_pm unit eigenvectors with a deterministic
    phase: the component of largest modulus (ties resolved toward the
    first) is made real and positive.  Raises ZeroCovector when h <= 1e-12
    (the fiber calculus needs a direction).
    """
    x = np.asarray(x, dtype=float)
    eta = np.asarray(eta, dtype=float)
    h = covector_norm(chart, x, eta)
    if np.any(h <= 1e-12):
        raise ZeroCovector("covector norm h <= 1e-12; eigenpairs undefined")
    W = principal_symbol(frame, x, eta)
    Wn = W / h[..., None, None]
    Pp = 0.5 * (ID2 + Wn)
    Pm = 0.5 * (ID2 - Wn)
    return h, _projector_column(Pp), _projector_column(Pm), Pp, Pm


def charge_conjugate(v):
    """Antilinear spin conjugation (v1, v2) -> (-conj(v2), conj(v1)).

    Squares to -Id; the image is pointwise orthogonal to the input.
    """
    v = np.asarray(v, dtype=complex)
    return np.stack([-np.conj(v[..., 1]), np.conj(v[..., 0])], axis=-1)


@dataclass
class SpinorField:
    """Batched 2-spinor field on a chart: u(x) -> (..., 2) complex."""

    chart: str
    u: Callable
    name: str = ""

    def __call__(self, x):
        return np.asarray(self.u(np.asarray(x, dtype=float)), dtype=complex)


def apply_dirac(chart, frame, field, x):
    """Evaluate (W field)(x); the coordinate derivative is finite-differenced.

    `field` is a SpinorField or any batched callable x -> (..., 2).
    """
    x = np.asarray(x, dtype=float)
    du = fd_grad(field, x)
    u = np.asarray(field(x), dtype=complex)
    sig = sigma_matrices(frame, x)
    W0 = zero_order_part(chart, frame, x)
    return (-1j * np.einsum('...apq,...aq->...p', sig, du)
            + np.einsum('...pq,...q->...p', W0, u))
