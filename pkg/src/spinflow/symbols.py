"""Small-time expansions of the propagator symbols.

Two independent routes to the leading (degree-0) symbol are provided: the
parallel-transport route (`propagator_principal`, a rank-1 matrix built from
the transported spinor) and the phase-integral route (`principal_via_q`,
which integrates the scalar `q_phase` along the Hamiltonian trajectory).
Their agreement is the main cross-check of the module.

The degree-0 and degree -1 coefficients themselves are assembled in closed
form from curvature and contorsion data by `smalltime_invariant`, packaged
as `SmallTimeSymbol` polynomials in t.  `u0_subprincipal` gives the t=0
subprincipal matrix, `gauge_derivatives` the first and second covariant
derivatives at the anchor point of the SU(2) gauge relating two framings,
and `gsub_convert` translates a subprincipal symbol between the invariant
calculus and the coordinate left calculus.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from .dirac import (covector_norm, eigenpairs_projections, principal_symbol,
                    sigma_matrices, w_subprincipal)
from .errors import DerivativeUnavailable, PhaseConventionBreak, ZeroCovector
from .flow import spinor_transport
from .framing import ID2
from .geometry import christoffel, curvature_pack, integrate_fixed
from .numdiff import fd_grad
from .weitzenbock import starK_covariant_derivative, torsion_pack


def covector_norm_derivatives(chart, x, eta):
    """(h, dh/deta, d2h/deta2) with h = sqrt(g^ab eta_a eta_b), batched.

    Derivatives carry raised indices: h_eta[..., a] = eta^a / h and
    h_etaeta[..., a, b] = (g^ab h^2 - eta^a eta^b) / h^3.
    """
    x = np.asarray(x, dtype=float)
    eta = np.asarray(eta, dtype=float)
    ginv = chart.inv_metric(x)
    etaup = np.einsum('...ab,...b->...a', ginv, eta)
    h2 = np.einsum('...a,...a->...', eta, etaup)
    if np.any(h2 <= 1e-24):
        raise ZeroCovector("covector norm h <= 1e-12; fiber derivatives undefined")
    h = np.sqrt(h2)
    h_eta = etaup / h[..., None]
    h_etaeta = (ginv * h2[..., None, None]
                - np.einsum('...a,...b->...ab', etaup, etaup)) / (h**3)[..., None, None]
    return h, h_eta, h_etaeta


def projector_eta_derivative(chart, frame, x, eta, sign=+1):
    """Momentum gradient of the spectral projection, dP^pm/deta_b.

    Closed form pm(sigma^b / h - eta^b eta_rho sigma^rho / h^3)/2 with a
    raised free index b; shape (..., 3, 2, 2).
    """
    sig = sigma_matrices(frame, x)
    h, h_eta, _ = covector_norm_derivatives(chart, x, eta)
    W = principal_symbol(frame, x, eta)
    return 0.5 * sign * (sig / h[..., None, None, None]
                         - h_eta[..., :, None, None] * W[..., None, :, :]
                         / (h**2)[..., None, None, None])


@dataclass
class SmallTimeSymbol:
    """Polynomial-in-t truncation of a propagator symbol at fixed (y, eta).

    coeffs[k] multiplies t^k; the truncation error is O(t**remainder_order).
    Calling the object evaluates the polynomial (t may be batched).
    """
    degree: int
    coeffs: list
    remainder_order: int
    y: np.ndarray
    eta: np.ndarray
    sign: int = +1

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape + self.coeffs[0].shape, dtype=complex)
        for k, c in enumerate(self.coeffs):
            out += c * (t ** k)[..., None, None]
        return out


def propagator_principal(chart, frame, y, eta, t, sign=+1):
    """Degree-0 propagator symbol via spinor transport: zeta(t) v^*.

    Returns the rank-1 matrix zeta(t) (v^pm)^* where zeta solves the
    transport equation along the sign-branch trajectory from (y, eta).
    t may be a scalar or a 1-d array of sample times; the time axis is
    appended before the matrix axes.
    """
    scalar_t = np.ndim(t) == 0
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    res = spinor_transport(chart, frame, y, eta, ts, sign=sign)
    pairs = eigenpairs_projections(chart, frame, y, eta)
    v = pairs[1] if sign > 0 else pairs[2]
    a0 = np.einsum('...tp,...q->...tpq', res.zeta, np.conj(v))
    return a0[..., 0, :, :] if scalar_t else a0


def _anchored_eigvec(chart, frame, x, eta, sign=+1, anchor=None):
    """Unit eigenvector of the principal symbol with a fixed phase anchor.

    The vector is the anchor-th column of P^pm normalized so that its
    anchor component is real positive; with anchor=None the component of
    larger modulus is used (ties toward the first), matching the default
    eigenvector convention.  A fixed anchor keeps the family smooth under
    finite differencing across convention ties.  Returns (v, anchor).
    """
    h = covector_norm(chart, x, eta)
    W = principal_symbol(frame, x, eta)
    P = 0.5 * (ID2 + sign * W / h[..., None, None])
    diag = np.stack([P[..., 0, 0].real, P[..., 1, 1].real], axis=-1)
    if anchor is None:
        anchor = (diag[..., 1] > diag[..., 0]).astype(int)
    anchor = np.broadcast_to(anchor, P.shape[:-2])
    col = np.take_along_axis(P, anchor[..., None, None], axis=-1)[..., 0]
    nrm = np.take_along_axis(diag, anchor[..., None], axis=-1)[..., 0]
    return col / np.sqrt(nrm)[..., None], anchor


def q_phase(chart, frame, y, eta, sign=+1, anchor=None):
    """Scalar phase-speed q^pm of the degree-0 symbol at a fiber point.

    Combines the subprincipal matrix with two Poisson-bracket corrections
    built from coordinate/momentum derivatives of the phase-anchored
    eigenvector; the result is real up to finite-difference noise.
    Batched over leading axes of (y, eta).
    """
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    y, eta = np.broadcast_arrays(y, eta)
    h, h_eta, _ = covector_norm_derivatives(chart, y, eta)
    W = principal_symbol(frame, y, eta)
    Wsub = w_subprincipal(chart, frame, y)
    v, anchor = _anchored_eigvec(chart, frame, y, eta, sign, anchor)

    v_x = fd_grad(lambda X: _anchored_eigvec(chart, frame, X, eta, sign,
                                             anchor)[0], y)
    v_e = fd_grad(lambda E: _anchored_eigvec(chart, frame, y, E, sign,
                                             anchor)[0], eta)

    # analytic spatial gradient of h via d_c g^{ab} = -g dg g
    ginv = chart.inv_metric(y)
    dg = chart.dmetric(y)
    dginv = -np.einsum('...am,...cmn,...nb->...cab', ginv, dg, ginv)
    h_x = 0.5 * np.einsum('...a,...cab,...b->...c', eta, dginv, eta) / h[..., None]

    A = W - sign * h[..., None, None] * ID2
    term1 = np.einsum('...p,...pq,...q->...', np.conj(v), Wsub, v)
    term2 = -0.5j * (np.einsum('...ap,...pq,...aq->...', np.conj(v_x), A, v_e)
                     - np.einsum('...ap,...pq,...aq->...', np.conj(v_e), A, v_x))
    term3 = -1.0j * sign * (
        np.einsum('...p,...ap,...a->...', np.conj(v), v_x, h_eta)
        - np.einsum('...p,...ap,...a->...', np.conj(v), v_e, h_x))
    return term1 + term2 + term3


def _runs(values):
    """Consecutive equal-value runs of a 1-d array as (start, stop, value)."""
    out = []
    start = 0
    for i in range(1, len(values)):
        if values[i] != values[start]:
            out.append((start, i - 1, values[start]))
            start = i
    out.append((start, len(values) - 1, values[start]))
    return out


def principal_via_q(chart, frame, y, eta, t, sign=+1, num_intervals=48):
    """Degree-0 propagator symbol via the integrated phase route.

    Samples the trajectory on a uniform grid, integrates q with composite
    Simpson quadrature, and returns v(x(t), xi(t)) e^{-i int q} v(y, eta)^*.
    If the eigenvector phase anchor switches along the trajectory the
    integration is spliced across the switch (warning PhaseConventionBreak)
    with the accumulated phase kept continuous.
    """
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if np.ndim(t) > 0:
        return np.stack([principal_via_q(chart, frame, y, eta, ti, sign,
                                         num_intervals)
                         for ti in np.asarray(t, dtype=float)])
    t = float(t)
    pairs = eigenpairs_projections(chart, frame, y, eta)
    v0 = pairs[1] if sign > 0 else pairs[2]
    if t == 0.0:
        return np.einsum('p,q->pq', v0, np.conj(v0))

    # trajectory nodes via velocity-scaled unit-time integration
    ginv = chart.inv_metric(y)
    sharp = ginv @ eta
    h = float(np.sqrt(eta @ sharp))
    w0 = sign * sharp / h
    s = np.linspace(0.0, t, num_intervals + 1)
    xs, us = integrate_fixed(chart, np.broadcast_to(y, (s.size, 3)),
                             s[:, None] * w0, 1.0)
    udot = np.where(np.abs(s)[:, None] < 1e-14, w0, us / np.where(s == 0.0, 1.0, s)[:, None])
    xis = sign * h * np.einsum('...ab,...b->...a', chart.metric(xs), udot)

    hn = covector_norm(chart, xs, xis)
    Wn = principal_symbol(frame, xs, xis)
    P = 0.5 * (ID2 + sign * Wn / hn[..., None, None])
    anchors = (P[..., 1, 1].real > P[..., 0, 0].real).astype(int)

    runs = _runs(anchors)
    if len(runs) > 1:
        warnings.warn("eigenvector anchor switched along the trajectory; "
                      "phase integral spliced across the switch",
                      PhaseConventionBreak)
    c = 1.0 + 0.0j
    for k, (i0, i1, a) in enumerate(runs):
        j1 = min(i1 + 1, s.size - 1) if k + 1 < len(runs) else i1
        idx = slice(i0, j1 + 1)
        anc = np.full(j1 + 1 - i0, a)
        qs = q_phase(chart, frame, xs[idx], xis[idx], sign, anchor=anc)
        c *= np.exp(-1j * simpson(qs, x=s[idx]))
        if k + 1 < len(runs):
            v_old, _ = _anchored_eigvec(chart, frame, xs[j1], xis[j1], sign,
                                        np.asarray(a))
            v_new, _ = _anchored_eigvec(chart, frame, xs[j1], xis[j1], sign,
                                        np.asarray(runs[k + 1][2]))
            c *= np.exp(1j * np.angle(np.conj(v_new) @ v_old))
    v_end, _ = _anchored_eigvec(chart, frame, xs[-1], xis[-1], sign,
                                np.asarray(runs[-1][2]))
    return c * np.einsum('p,q->pq', v_end, np.conj(v0))


def u0_subprincipal(chart, frame, y, eta, sign=+1):
    """Subprincipal matrix of the time-zero half-propagator.

    Equals pm (*T^{ab} eta_a eta_b / 4h^3) Id with the dual torsion raised
    by the inverse metric; a scalar multiple of the identity.
    """
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    tp = torsion_pack(chart, frame, y)
    ginv = chart.inv_metric(y)
    h = covector_norm(chart, y, eta)
    etaup = np.einsum('...ab,...b->...a', ginv, eta)
    val = sign * np.einsum('...a,...ab,...b->...', etaup, tp.starT, etaup) \
        / (4.0 * h**3)
    return val[..., None, None] * ID2


def _half_gauge_derivatives(K, dK, sig, ginv):
    """First/second derivative blocks of the gauge from one contorsion."""
    d1 = -0.5j * np.einsum('...ab,...bpq->...apq', K, sig)
    dsym = dK + np.einsum('...abm->...bam', dK)
    quad = np.einsum('...am,...mn,...bn->...ab', K, ginv, K)
    d2 = (-0.25j * np.einsum('...abm,...mpq->...abpq', dsym, sig)
          - 0.25 * quad[..., None, None] * ID2)
    return d1, d2


def gauge_derivatives(chart, frame, frame_tilde, y):
    """First and second covariant derivatives at y of the framing gauge.

    G is the SU(2) field with G(y) = Id rotating `frame_tilde` into `frame`
    (the first framing supplies the positively-signed contorsion).  Both
    framings must coincide at y.  Returns (dG, ddG) with shapes (3, 2, 2)
    and (3, 3, 2, 2); ddG is symmetric in its two derivative slots.
    """
    y = np.asarray(y, dtype=float)
    E = frame.frame(y)
    Et = frame_tilde.frame(y)
    if not np.allclose(E, Et, atol=1e-8):
        raise DerivativeUnavailable(
            "gauge derivative formulas need framings that coincide at y")
    sig = sigma_matrices(frame, y)
    ginv = chart.inv_metric(y)
    K = torsion_pack(chart, frame, y).starK
    Kt = torsion_pack(chart, frame_tilde, y).starK
    dK = starK_covariant_derivative(chart, frame, y)
    dKt = starK_covariant_derivative(chart, frame_tilde, y)

    d1e, d2e = _half_gauge_derivatives(K, dK, sig, ginv)
    d1t, d2t = _half_gauge_derivatives(Kt, dKt, sig, ginv)
    d1t_star = np.conj(np.swapaxes(d1t, -1, -2))
    d2t_star = np.conj(np.swapaxes(d2t, -1, -2))

    dG = d1e + d1t_star
    cross = np.einsum('...apq,...bqr->...abpr', d1e, d1t_star)
    ddG = (d2e + cross + np.einsum('...abpq->...bapq', cross) + d2t_star)
    return dG, ddG


def smalltime_invariant(chart, frame, y, eta, sign=+1):
    """Closed-form small-time coefficients of both symbol degrees at (y, eta).

    Assembles the degree-0 (t^0, t^1, t^2; remainder O(t^3)) and degree -1
    (t^0, t^1; remainder O(t^2)) coefficients from scalar curvature, Ricci,
    the dual contorsion *K and its covariant derivative.  Returns a pair of
    SmallTimeSymbol objects.
    """
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    cp = curvature_pack(chart, y)
    tp = torsion_pack(chart, frame, y)
    K = tp.starK
    dK = starK_covariant_derivative(chart, frame, y)
    sig = sigma_matrices(frame, y)
    h, h_eta, h_etaeta = covector_norm_derivatives(chart, y, eta)
    W = principal_symbol(frame, y, eta)
    P = 0.5 * (ID2 + sign * W / h[..., None, None])
    dP = projector_eta_derivative(chart, frame, y, eta, sign)
    ginv = cp.g_inv

    dKsym = dK + np.einsum('...abm->...bam', dK)
    KK = np.einsum('...am,...mn,...bn->...ab', K, ginv, K)
    M = (np.einsum('...b,...apq->...abpq', h_eta, dP)
         + 0.5 * h_etaeta[..., None, None] * P[..., None, None, :, :])
    uu = h_eta  # eta^a / h

    # degree 0
    A1 = np.einsum('...a,...ab,...bpq->...pq', h_eta, K, sig)
    c1 = sign * 0.5j * A1 @ P
    B1 = np.einsum('...a,...b,...abm,...mpq->...pq', uu, uu, dKsym, sig)
    B2 = np.einsum('...a,...b,...ab->...', uu, uu, KK)
    c2 = 0.125 * (1j * B1 - B2[..., None, None] * ID2) @ P
    deg0 = SmallTimeSymbol(0, [P, c1, c2], 3, y, eta, sign)

    # degree -1
    d0 = -0.5 * np.einsum('...ab,...bpq,...aqr->...pr', K, sig, dP)
    R1 = np.einsum('...ab,...a,...bpq->...pq', cp.Ricci, h * uu, sig)
    d1 = -sign * 1j * (cp.Scalar[..., None, None] * P / (24.0 * h[..., None, None])
                       - R1 / (8.0 * (h**2)[..., None, None]))
    d1 = d1 - sign * 0.25 * np.einsum('...abm,...mpq,...abqr->...pr',
                                      dKsym, sig, M)
    d1 = d1 - sign * 0.25j * np.einsum('...ab,...abpq->...pq', KK, M)
    degm1 = SmallTimeSymbol(-1, [d0, d1], 2, y, eta, sign)
    return deg0, degm1


def gsub_convert(chart, y, eta, p_prin, p_sub, epsilon=0.0):
    """Subprincipal symbol of the invariant calculus from the left calculus.

    p_prin must be a batched callable (x, eta) -> (..., 2, 2); p_sub is the
    left-calculus subprincipal value at (y, eta).  Adds the mixed x/eta
    derivative trace, the Christoffel correction, and (for epsilon > 0) the
    metric-weighted eta-Hessian term.  When p_prin is eta-independent the
    output equals p_sub.
    """
    if not callable(p_prin):
        raise DerivativeUnavailable("gsub_convert needs p_prin as a callable")
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    p_sub = np.asarray(p_sub, dtype=complex)
    Gam = christoffel(chart, y)
    gmat = chart.metric(y)
    h, h_eta, _ = covector_norm_derivatives(chart, y, eta)

    def at_eta(E):
        return p_prin(np.broadcast_to(y, E.shape), E)

    def d_eta_at(X):
        # eta-gradient of p_prin at fixed spatial points X; the inner
        # stencil prepends two axes, so X gains two leading broadcast axes
        return fd_grad(lambda F: p_prin(X[None, None], F),
                       np.broadcast_to(eta, X.shape))

    Pe = fd_grad(at_eta, eta)                       # (3, 2, 2)
    Pee = fd_grad(lambda E: fd_grad(
        lambda F: p_prin(np.broadcast_to(y, F.shape), F), E), eta)
    Pxe = fd_grad(d_eta_at, y)                      # (3, 3, 2, 2): d_x d_eta

    mixed = 0.5j * np.einsum('aapq->pq', Pxe)
    gamma_term = 0.5j * (np.einsum('aba,bpq->pq', Gam, Pe)
                         + np.einsum('abc,a,bcpq->pq', Gam, eta, Pee))
    eps_term = -0.5 * epsilon * (np.einsum('bc,c,bpq->pq', gmat, h_eta, Pe)
                                 + h * np.einsum('bc,bcpq->pq', gmat, Pee))
    return p_sub + mixed + gamma_term + eps_term
