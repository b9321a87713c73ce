"""Numeric reconstruction of the small-time symbol coefficients.

This module rebuilds the degree-0 and degree-(-1) expansions without the
closed-form coefficient assembly of :mod:`spinflow.symbols`: the
oscillatory-representation amplitude is sampled on finite-difference grids
in geodesic normal coordinates, truncated amplitude-to-symbol reducers
turn the grids into algebraic data, and the projected transport system is
solved for the coefficients.  Everything runs on the fixed-step geodesic
engine so the sampled values stay smooth under the stencils.

Conventions, with ``s`` the branch sign and hats for normal-coordinate
objects (center y, orthonormalizing matrix E, so eta_hat = E^T eta and
the flow center is the straight ray x_hat0(t) = s t eta_hat / h):

    B(t, x; eta)  = phi_t + sigma^m(x) phi_{x^m}        (eikonal factor)
    a_1 = B a0,   a_0 = B a{-1} - i d_t a0 + M a0,
    M = -i d_t log w - i sigma^m d_m log w + W0

where a0, a{-1} are the transported symbol coefficients and w the
half-density weight.  The reducers are: evaluation at the flow point
(order 0); the mixed trace i [ sum_m d2/dx^m deta_m
+ s (t/2) h_{eta eta} d2/dx dx ] (order -1); and -1/2 (sum_m d2/dx^m
deta_m)^2 at t = 0 (order -2).  The order-0 equation projected off the
branch eigenspace yields the off-branch block of a{-1} at every time
sample; the order-(-1) equation projected onto it yields the on-branch
slope; combining both with the time-zero matrix gives the degree-(-1)
coefficients, while a polynomial fit of the transported principal part
gives the degree-0 ones.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dirac import eigenpairs_projections, sigma_matrices, zero_order_part
from .errors import FitIllConditioned
from .flow import flow_fixed
from .framing import ID2, PAULI, _newton_log
from .geometry import density, integrate_fixed
from .symbols import SmallTimeSymbol, propagator_principal, u0_subprincipal

_X_STEP0 = 0.015     # normal-coordinate step, time-zero tensor grids
_X_STEPT = 0.02      # normal-coordinate step, flow-sample grids
_ETA_REL = 0.03      # eta_hat step relative to |eta_hat|
_DT_W = 0.02         # t stencil step for the weight
_DT_A0 = 0.01        # t stencil step for the transported principal part
_DMIX_REL = 1e-3     # eta_hat step for the phase mixed Hessian
_COND_MAX = 1e10

# 4-node first-derivative weights, nodes k = -2, -1, +1, +2 (no center)
_D1_4 = {-2: 1.0 / 12.0, -1: -8.0 / 12.0, 1: 8.0 / 12.0, 2: -1.0 / 12.0}
_W4 = np.array([_D1_4[-2], _D1_4[-1], _D1_4[1], _D1_4[2]])


def _axis_weights(order, step):
    """5-node symmetric weights for value / first / second derivative."""
    if order == 0:
        return np.array([0.0, 0.0, 1.0, 0.0, 0.0])
    if order == 1:
        return np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / (12.0 * step)
    if order == 2:
        return np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / (12.0 * step ** 2)
    raise ValueError("axis derivative order must be 0, 1 or 2")


@dataclass
class ReducerStencil:
    """Finite-difference realization of the amplitude-to-symbol reducers.

    Operates on value grids of shape (5, 5, 5, 5, 5, 5, 2, 2): three
    x_hat axes then three eta_hat axes, five symmetric nodes each, spaced
    by x_step and eta_step.
    """

    x_step: float
    eta_step: float

    def _contract(self, grid, x_orders, eta_orders):
        ws = ([_axis_weights(o, self.x_step) for o in x_orders]
              + [_axis_weights(o, self.eta_step) for o in eta_orders])
        return np.einsum('abcdefpq,a,b,c,d,e,f->pq', grid, *ws)

    def mixed_trace(self, grid):
        """sum_m d2/dx^m deta_m at the grid center."""
        out = np.zeros((2, 2), dtype=complex)
        for a in range(3):
            xo = [1 if g == a else 0 for g in range(3)]
            out += self._contract(grid, xo, xo)
        return out

    def second_x(self, grid, H):
        """sum_mn H_mn d2/dx^m dx^n at the grid center."""
        out = np.zeros((2, 2), dtype=complex)
        for a in range(3):
            for b in range(3):
                xo = [(g == a) + (g == b) for g in range(3)]
                out += H[a, b] * self._contract(grid, xo, [0, 0, 0])
        return out

    def double_mixed_trace(self, grid):
        """(sum_m d2/dx^m deta_m)^2 at the grid center."""
        out = np.zeros((2, 2), dtype=complex)
        for a in range(3):
            for b in range(3):
                o = [(g == a) + (g == b) for g in range(3)]
                out += self._contract(grid, o, o)
        return out


# ---------------------------------------------------------------------------
# node sets


def _tensor_offsets(extent):
    """Full (2*extent+1)^3 tensor of unit-step offsets, C-ordered."""
    n = np.arange(-extent, extent + 1, dtype=float)
    return np.stack(np.meshgrid(n, n, n, indexing='ij'),
                    axis=-1).reshape(-1, 3)


def _axis_key(a, k):
    return tuple(k if g == a else 0 for g in range(3))


def _star13():
    """Center plus +-1, +-2 nodes along each axis, with an index map."""
    offs = [np.zeros(3)]
    idx = {(a, 0): 0 for a in range(3)}
    for a in range(3):
        for k in (-2, -1, 1, 2):
            idx[(a, k)] = len(offs)
            e = np.zeros(3)
            e[a] = k
            offs.append(e)
    return np.array(offs), idx


def _set33():
    """3^3 tensor plus +-2 axis extensions, with tensor and axis maps."""
    offs = []
    tidx = {}
    for i in (-1, 0, 1):
        for j in (-1, 0, 1):
            for k in (-1, 0, 1):
                tidx[(i, j, k)] = len(offs)
                offs.append([float(i), float(j), float(k)])
    sidx = dict(tidx)
    for a in range(3):
        for k in (-2, 2):
            key = _axis_key(a, k)
            sidx[key] = len(offs)
            offs.append([float(v) for v in key])
    return np.array(offs), tidx, sidx


def _rows_of(offsets, wanted):
    """Row indices of the wanted offset vectors inside an offset table."""
    return np.array([int(np.where((offsets == w).all(axis=1))[0][0])
                     for w in wanted])


# ---------------------------------------------------------------------------
# geometric kernels


def _hamilton_rhs(chart, x, xi, sign):
    """Time derivatives (xdot, xidot) of the branch flow at (x, xi)."""
    ginv = chart.inv_metric(x)
    dg = chart.dmetric(x)
    dginv = -np.einsum('...am,...cmn,...nb->...cab', ginv, dg, ginv)
    sharp = np.einsum('...ab,...b->...a', ginv, xi)
    h = np.sqrt(np.einsum('...a,...a->...', xi, sharp))
    xdot = sign * sharp / h[..., None]
    xidot = (-sign * 0.5 / h[..., None]) * np.einsum(
        '...cab,...a,...b->...c', dginv, xi, xi)
    return xdot, xidot


def _log_sens(chart, bases, X):
    """Damped-Newton log with per-row bases, polished to the noise floor.

    Returns (V, Je, Jb): the log vectors and the endpoint sensitivities of
    the exponential map to the initial velocity and to the base point.
    The damped iteration stops near 1e-11, which is too coarse to sit
    inside fourth-derivative stencils, so two plain Newton steps push the
    residual to rounding level.
    """
    def shooter(Yb, V):
        xe, _, S = integrate_fixed(chart, Yb, V, 1.0, want_sens=True)
        return xe, S[:, :3, 3:]

    V = _newton_log(chart, bases, X, shooter)
    xe, _, S = integrate_fixed(chart, bases, V, 1.0, want_sens=True)
    V = V - np.linalg.solve(S[:, :3, 3:], (xe - X)[..., None])[..., 0]
    xe, _, S = integrate_fixed(chart, bases, V, 1.0, want_sens=True)
    Je, Jb = S[:, :3, 3:], S[:, :3, :3]
    V = V - np.linalg.solve(Je, (xe - X)[..., None])[..., 0]
    return V, Je, Jb


def _b_zero(chart, y, V, S, sigX, etas, sign):
    """Eikonal factor at t = 0 over (x-set, eta-set); analytic throughout.

    V holds the radial log vectors of the x-set and S the forward
    sensitivities of the exponential along them, so no shooting is needed:
    phi_t = <xidot, V> + <eta, (dV/dbase) xdot>, dV/dbase = -Je^{-1} Jb.
    """
    Je = S[:, :3, 3:]
    Jb = S[:, :3, :3]
    A = -np.linalg.solve(Je, Jb)
    yb = np.broadcast_to(y, etas.shape)
    xdot, xidot = _hamilton_rhs(chart, yb, etas, sign)
    phi_t = (np.einsum('ia,ja->ij', V, xidot)
             + np.einsum('ja,iab,jb->ij', etas, A, xdot))
    invJeT = np.linalg.inv(np.swapaxes(Je, -1, -2))
    phi_x = np.einsum('iab,jb->ija', invJeT, etas)
    return (phi_t[..., None, None] * ID2
            + np.einsum('ijm,impq->ijpq', phi_x, sigX))


def _b_flow(chart, X0, xi0, xdot0, xidot0, X, sigX):
    """Eikonal factor at one flow sample over (x-set, eta-set).

    The merged shooting batch is eta-major; the result is returned
    x-major as (Nx, Ne, 2, 2).
    """
    Ne, Nx = X0.shape[0], X.shape[0]
    bases = np.repeat(X0, Nx, axis=0)
    targets = np.tile(X, (Ne, 1))
    V, Je, Jb = _log_sens(chart, bases, targets)
    xis = np.repeat(xi0, Nx, axis=0)
    drift = np.linalg.solve(Je, np.einsum(
        'rab,rb->ra', Jb, np.repeat(xdot0, Nx, axis=0))[..., None])[..., 0]
    phi_t = (np.einsum('ra,ra->r', V, np.repeat(xidot0, Nx, axis=0))
             - np.einsum('ra,ra->r', xis, drift))
    phi_x = np.linalg.solve(np.swapaxes(Je, -1, -2), xis[..., None])[..., 0]
    B = (phi_t[..., None, None] * ID2
         + np.einsum('rm,rmpq->rpq', phi_x, np.tile(sigX, (Ne, 1, 1, 1))))
    return np.swapaxes(B.reshape(Ne, Nx, 2, 2), 0, 1)


def _weight_vals(chart, y, eta, E, tprimes, X, Jx, rho_hat, sign, dmix):
    """Half-density weight on (t-nodes, x-set) at the central covector.

    The mixed phase Hessian in normal coordinates is built from the
    analytic x_hat-gradient J^T Je^{-T} xi by 2-node differencing along
    the eta_hat axes; with a real phase the squared determinant is
    positive, so no branch tracking is needed.  Constant factors are
    irrelevant downstream (only log-derivatives of the weight are used).
    """
    Nt, Nx = len(tprimes), X.shape[0]
    shifts = np.zeros((6, 3))
    for b in range(3):
        shifts[2 * b, b] = dmix
        shifts[2 * b + 1, b] = -dmix
    etas_s = eta[None, :] + shifts @ np.linalg.inv(E)
    bases = np.empty((Nt, 6, 3))
    xi0s = np.empty((Nt, 6, 3))
    for it, tp in enumerate(tprimes):
        bases[it], xi0s[it] = flow_fixed(chart, np.broadcast_to(y, (6, 3)),
                                         etas_s, float(tp), sign=sign)
    _, Je, _ = _log_sens(chart,
                         np.repeat(bases.reshape(-1, 3), Nx, axis=0),
                         np.tile(X, (Nt * 6, 1)))
    xis = np.repeat(xi0s.reshape(-1, 3), Nx, axis=0)
    phi_x = np.linalg.solve(np.swapaxes(Je, -1, -2), xis[..., None])[..., 0]
    ghat = np.einsum('rba,rb->ra', np.tile(Jx, (Nt * 6, 1, 1)), phi_x)
    grads = ghat.reshape(Nt, 6, Nx, 3)
    mixed = np.empty((Nt, Nx, 3, 3))
    for b in range(3):
        mixed[..., b] = (grads[:, 2 * b] - grads[:, 2 * b + 1]) / (2 * dmix)
    det = np.linalg.det(mixed)
    return rho_hat[None, :] ** -0.5 * np.abs(det) ** 0.5


def _projection_eta_grad(sig, ginv, eta, sign):
    """Analytic eta-derivative of the branch eigenprojection, hatted data.

    All arguments carry matching batch axes; the derivative index is
    appended before the matrix axes.
    """
    sharp = np.einsum('...ab,...b->...a', ginv, eta)
    h = np.sqrt(np.einsum('...a,...a->...', eta, sharp))
    W = np.einsum('...apq,...a->...pq', sig, eta)
    return 0.5 * sign * (
        sig / h[..., None, None, None]
        - sharp[..., :, None, None] * W[..., None, :, :]
        / (h ** 3)[..., None, None, None])


def _branch_projections(chart, frame, x, eta, sign):
    """(on-branch, off-branch) spectral projections at (x, eta)."""
    _, _, _, Pp, Pm = eigenpairs_projections(chart, frame, x, eta)
    return (Pp, Pm) if sign > 0 else (Pm, Pp)


def _star_mixed_trace(grid, eidx, x_step, eta_step):
    """sum_m d2/dx^m deta_m of a (star, star, 2, 2) value grid."""
    out = np.zeros((2, 2), dtype=complex)
    for a in range(3):
        for k in (-2, -1, 1, 2):
            for l in (-2, -1, 1, 2):
                out += ((_D1_4[k] / x_step) * (_D1_4[l] / eta_step)
                        * grid[eidx[(a, k)], eidx[(a, l)]])
    return out


def _fit_poly(ts, vals, degree):
    """Least-squares t-polynomial fit of matrix samples, with a condition
    guard on the time-sample Vandermonde matrix."""
    Vm = np.vander(np.asarray(ts, dtype=float), degree + 1, increasing=True)
    cond = np.linalg.cond(Vm)
    if cond > _COND_MAX:
        raise FitIllConditioned(
            f"time-sample Vandermonde condition {cond:.3g} exceeds "
            f"{_COND_MAX:.1g}")
    sol, *_ = np.linalg.lstsq(Vm, vals.reshape(len(ts), -1), rcond=None)
    return sol.reshape(degree + 1, *vals.shape[1:])


# ---------------------------------------------------------------------------
# the fit


def smalltime_numeric_fit(chart, frame, y, eta, sign=+1, tau=None,
                          _collect=None):
    """Reconstruct both small-time expansions by grid reduction and fitting.

    Returns a pair of :class:`~spinflow.symbols.SmallTimeSymbol` objects
    (degree 0 with three coefficients, degree -1 with two) built from the
    time samples {0, +-tau/8, +-tau/4, +-tau/2, +-tau}; tau defaults to
    0.05 * chart.injectivity_hint.  The computation is independent of the
    closed-form coefficient assembly — agreement with
    :func:`~spinflow.symbols.smalltime_invariant` is the module's central
    cross-check.  Raises FitIllConditioned when the time samples make the
    fit Vandermonde matrix numerically degenerate.
    """
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    s = int(sign)
    if tau is None:
        tau = 0.05 * chart.injectivity_hint
    ts = np.array([-1.0, -0.5, -0.25, -0.125, 0.0,
                   0.125, 0.25, 0.5, 1.0]) * float(tau)
    # fail early on degenerate sampling, before any integration work
    _fit_poly(ts, np.zeros((9, 1)), 3)

    g0 = chart.metric(y)
    E = np.linalg.inv(np.linalg.cholesky(g0)).T
    Einv = np.linalg.inv(E)
    eta_hat = E.T @ eta
    h = float(np.linalg.norm(eta_hat))
    b_eta = _ETA_REL * h
    dmix = _DMIX_REL * h
    Hmat = (np.eye(3) * h ** 2 - np.outer(eta_hat, eta_hat)) / h ** 3

    P_on0, P_off0 = _branch_projections(chart, frame, y, eta, s)

    # ----- transported principal part: samples, fit and time slopes
    t_stencil = _DT_A0 * np.array([-2.0, -1.0, 1.0, 2.0])
    all_t = np.concatenate([ts, np.add.outer(ts, t_stencil).ravel()])
    A0_all = propagator_principal(chart, frame, y, eta, all_t, s)
    deg0_coeffs = _fit_poly(ts, A0_all[:9], 3)[:3]

    def a0_slope(i):
        return np.einsum('t,tpq->pq', _W4 / _DT_A0,
                         A0_all[9 + 4 * i: 13 + 4 * i])

    # ----- shared eta_hat star, its covectors and transported values
    star_off, eidx = _star13()
    etas13 = (eta_hat[None, :] + star_off * b_eta) @ Einv
    yb13 = np.broadcast_to(y, etas13.shape)
    ts_nz = ts[ts != 0.0]
    A0_eta = propagator_principal(chart, frame, yb13, etas13, ts_nz, s)
    A0t0_eta = propagator_principal(chart, frame, yb13, etas13, t_stencil, s)
    a0t0 = np.einsum('t,jtpq->jpq', _W4 / _DT_A0, A0t0_eta)
    P0_eta = _branch_projections(chart, frame, yb13, etas13, s)[0]

    # ----- time-zero tensor grids (fully analytic eikonal factor)
    tens7 = _tensor_offsets(3)
    rows5 = np.where((np.abs(tens7) <= 2).all(axis=1))[0]
    tens5 = tens7[rows5]
    V7 = (tens7 * _X_STEP0) @ E.T
    X7, _, S7 = integrate_fixed(chart, np.broadcast_to(y, V7.shape),
                                V7, 1.0, want_sens=True)
    J7 = S7[:, :3, 3:] @ E
    rho7 = density(chart, X7) * np.linalg.det(J7)
    logw7 = -0.5 * np.log(rho7).reshape(7, 7, 7)
    dlogw7 = np.stack(np.gradient(logw7, _X_STEP0, edge_order=2),
                      axis=-1).reshape(-1, 3)

    X5, S5 = X7[rows5], S7[rows5]
    sig5 = sigma_matrices(frame, X5)
    eta_tens = (eta_hat[None, :] + tens5 * b_eta) @ Einv
    B00 = _b_zero(chart, y, (tens5 * _X_STEP0) @ E.T, S5, sig5, eta_tens, s)
    P_tens = _branch_projections(
        chart, frame, np.broadcast_to(y, eta_tens.shape), eta_tens, s)[0]
    a1_grid = np.einsum('ijpq,jqr->ijpr', B00, P_tens)
    red = ReducerStencil(x_step=_X_STEP0, eta_step=b_eta)
    S2a1 = -0.5 * red.double_mixed_trace(
        a1_grid.reshape(5, 5, 5, 5, 5, 5, 2, 2))

    # ----- star-node geometry in hatted components
    srows5 = _rows_of(tens5, star_off)
    X13, J13 = X5[srows5], J7[rows5][srows5]
    invJ13 = np.linalg.inv(J13)
    comp13 = np.einsum('iab,ijb->ija', invJ13, frame.frame(X13))
    sighat13 = np.einsum('ija,jpq->iapq', comp13, PAULI)
    ginv_hat13 = np.einsum('iab,ibc,idc->iad', invJ13,
                           chart.inv_metric(X13), invJ13)

    # ----- initial matrix on the eta_hat star
    etah13 = eta_hat[None, :] + star_off * b_eta
    u0_13 = u0_subprincipal(chart, frame, yb13, etas13, s)
    dP = _projection_eta_grad(
        sighat13[:, None], ginv_hat13[:, None],
        np.broadcast_to(etah13, (13,) + etah13.shape), s)
    mix13 = np.zeros((13, 2, 2), dtype=complex)
    for a in range(3):
        for k in (-2, -1, 1, 2):
            mix13 += (_D1_4[k] / _X_STEP0) * dP[eidx[(a, k)], :, a]
    IC13 = u0_13 + 0.5j * mix13
    IC0 = IC13[0]

    # ----- the matrix M at t = 0 on the (x-star, eta-star) grid
    rho13 = rho7[rows5][srows5]
    w0_13 = rho13 ** -0.5
    sig_term13 = np.einsum('ia,iapq->ipq', dlogw7[rows5][srows5], sighat13)
    W0_13 = zero_order_part(chart, frame, X13)
    tw0 = _DT_W * np.array([-2.0, -1.0, 1.0, 2.0])
    wt13 = np.empty((13, 13))
    for j in range(13):
        wv = _weight_vals(chart, y, etas13[j], E, tw0, X13, J13,
                          rho13, s, dmix)
        wt13[:, j] = np.einsum('t,ti->i', _W4 / _DT_W, wv)
    M13 = ((-1j * wt13 / w0_13[:, None])[..., None, None] * ID2
           + (-1j * sig_term13 + W0_13)[:, None])

    # ----- order-(-1) pieces at t = 0 and the on-branch slope
    B00_13 = B00[np.ix_(srows5, srows5)]
    a0_grid = (np.einsum('ijpq,jqr->ijpr', B00_13, IC13)
               - 1j * np.broadcast_to(a0t0[None], (13, 13, 2, 2))
               + np.einsum('ijpq,jqr->ijpr', M13, P0_eta))
    S1a0 = 1j * _star_mixed_trace(a0_grid, eidx, _X_STEP0, b_eta)
    c1_on = -1j * (P_on0 @ (M13[0, 0] @ IC0 + S2a1 + S1a0))

    # slope of the complementary branch projection along the flow
    Pdot_nodes = np.empty((4, 2, 2), dtype=complex)
    for it, tp in enumerate(t_stencil):
        Xf, Xif = flow_fixed(chart, y, eta, float(tp), sign=s)
        Pdot_nodes[it] = _branch_projections(chart, frame, Xf, Xif, s)[1]
    Pdot_off = np.einsum('t,tpq->pq', _W4 / _DT_A0, Pdot_nodes)

    # ----- off-branch block at every time sample
    offs33, tidx, sidx = _set33()
    off_vals = np.empty((9, 2, 2), dtype=complex)
    for i_t, t_i in enumerate(ts):
        if t_i == 0.0:
            a1g = np.einsum('ijpq,jqr->ijpr', B00_13, P0_eta)
            S1a1 = 1j * _star_mixed_trace(a1g, eidx, _X_STEP0, b_eta)
            N0 = -1j * a0_slope(i_t) + M13[0, 0] @ P_on0
            off_vals[i_t] = (s / (2.0 * h)) * (P_off0 @ (S1a1 + N0))
            if _collect is not None:
                _collect.update(S1a1_0=S1a1, N0_0=N0)
            continue

        xh_set = (s * t_i / h) * eta_hat[None, :] + offs33 * _X_STEPT
        Xset, _, Sset = integrate_fixed(
            chart, np.broadcast_to(y, xh_set.shape), xh_set @ E.T,
            1.0, want_sens=True)
        Jset = Sset[:, :3, 3:] @ E
        sigset = sigma_matrices(frame, Xset)
        rho_set = density(chart, Xset) * np.linalg.det(Jset)

        X0j, xi0j = flow_fixed(chart, yb13, etas13, float(t_i), sign=s)
        xd0, xid0 = _hamilton_rhs(chart, X0j, xi0j, s)
        Bt = _b_flow(chart, X0j, xi0j, xd0, xid0, Xset, sigset)
        j_nz = int(np.where(ts_nz == t_i)[0][0])
        a1g = np.einsum('ijpq,jqr->ijpr', Bt, A0_eta[:, j_nz])

        main = np.zeros((2, 2), dtype=complex)
        for a in range(3):
            for k in (-2, -1, 1, 2):
                row = sidx[_axis_key(a, k)]
                for l in (-2, -1, 1, 2):
                    main += ((_D1_4[k] / _X_STEPT) * (_D1_4[l] / b_eta)
                             * a1g[row, eidx[(a, l)]])
        a1c = a1g[:, 0]
        corr = np.zeros((2, 2), dtype=complex)
        for a in range(3):
            acc = np.zeros((2, 2), dtype=complex)
            for k, wk in ((-2, -1.0), (-1, 16.0), (0, -30.0),
                          (1, 16.0), (2, -1.0)):
                acc += wk * a1c[sidx[_axis_key(a, k)]]
            corr += Hmat[a, a] * acc / (12.0 * _X_STEPT ** 2)
        for a in range(3):
            for b in range(3):
                if a == b:
                    continue
                pp = a1c[tidx[tuple((g == a) + (g == b) for g in range(3))]]
                pm = a1c[tidx[tuple((g == a) - (g == b) for g in range(3))]]
                mp = a1c[tidx[tuple((g == b) - (g == a) for g in range(3))]]
                mm = a1c[tidx[tuple(-(g == a) - (g == b) for g in range(3))]]
                corr += Hmat[a, b] * (pp - pm - mp + mm) \
                    / (4.0 * _X_STEPT ** 2)
        S1a1 = 1j * (main + s * (t_i / 2.0) * corr)

        # the matrix M at the flow center
        c_row = tidx[(0, 0, 0)]
        star7 = [c_row] + [tidx[_axis_key(a, k)]
                           for a in range(3) for k in (-1, 1)]
        tw = t_i + _DT_W * np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
        wv = _weight_vals(chart, y, eta, E, tw, Xset[star7], Jset[star7],
                          rho_set[star7], s, dmix)
        wt_c = np.einsum('t,t->', np.array([_D1_4[-2], _D1_4[-1], 0.0,
                                            _D1_4[1], _D1_4[2]]) / _DT_W,
                         wv[:, 0])
        logw_star = np.log(wv[2])
        dlogw = np.array([(logw_star[2 + 2 * a] - logw_star[1 + 2 * a])
                          / (2.0 * _X_STEPT) for a in range(3)])
        invJc = np.linalg.inv(Jset[c_row])
        compc = np.einsum('ab,jb->ja', invJc, frame.frame(Xset[c_row]))
        sighat_c = np.einsum('ja,jpq->apq', compc, PAULI)
        Mval = ((-1j * wt_c / wv[2, 0]) * ID2
                - 1j * np.einsum('a,apq->pq', dlogw, sighat_c)
                + zero_order_part(chart, frame, Xset[c_row]))

        N0 = -1j * a0_slope(i_t) + Mval @ A0_eta[0, j_nz]
        Pf_off = _branch_projections(chart, frame, X0j[0], xi0j[0], s)[1]
        off_vals[i_t] = (s / (2.0 * h)) * (Pf_off @ (S1a1 + N0))

    off_fit = _fit_poly(ts, off_vals, 2)
    c0 = IC0
    c1 = c1_on + off_fit[1] - Pdot_off @ c0
    if _collect is not None:
        _collect.update(ts=ts, off_vals=off_vals, off_fit=off_fit,
                        c1_on=c1_on, Pdot_off=Pdot_off, IC0=IC0, M13=M13,
                        S2a1=S2a1, S1a0=S1a0, h=h, P_on0=P_on0,
                        P_off0=P_off0, B00_13=B00_13, IC13=IC13,
                        P0_eta=P0_eta, a0t0=a0t0, eidx=eidx, b_eta=b_eta)

    deg0 = SmallTimeSymbol(degree=0, coeffs=list(deg0_coeffs),
                           remainder_order=3, y=y, eta=eta, sign=s)
    degm1 = SmallTimeSymbol(degree=-1, coeffs=[c0, c1],
                            remainder_order=2, y=y, eta=eta, sign=s)
    return deg0, degm1
