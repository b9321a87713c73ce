"""Cogeodesic flow, spinor transport along it, and the complex phase.

The Hamiltonian h(x, xi) = sqrt(g^ab xi_a xi_b) generates two flow branches

    xdot = +- dh/dxi,      xidot = -+ dh/dx,

whose spatial projections are unit-speed geodesics: x^pm(t; y, eta) =
exp_y(+- t eta^sharp / h), with xi^pm = +- h g(x) xdot and h conserved.
Spinor data rides along through the transport equation

    (d/dt + xdot^a omega_a) zeta = 0,     omega_a = (1/4) sigma_b nabla_a sigma^b,

whose connection matrix is anti-hermitian, so |zeta| is conserved.

The phase attached to a branch is

    phi^pm(t, x; y, eta) = <xi^pm(t), log_{x^pm(t)}(x)>
                           + (i eps / 2) h dist^2(x, x^pm(t)),

defined for x inside the injectivity ball of the flow point; the module
also evaluates its x-gradient (analytically, through the inverse of the
exponential differential), the mixed Hessian phi_{x eta} by eta
differencing, and the quarter-root weight

    w = [rho(x) rho(y)]^{-1/2} [ (det phi_{x eta})^2 ]^{1/4}

with the root branch tracked continuously along the straight segment
(s t, y + s (x - y)), s in [0, 1], from the anchor w(0, y;  y, .) =
rho(y)^{-1}.  Phase evaluation runs entirely on the fixed-step geodesic
engine so the results stay smooth under outer finite differencing; the
trajectory-level entry points (hamiltonian_flow, spinor_transport) use the
adaptive integrator.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from .dirac import _dsigma, eigenpairs_projections, sigma_matrices
from .errors import BranchLoss, NoConvergence, OutOfRadius, ZeroCovector
from .framing import _newton_log
from .geometry import IVP_TOL, christoffel, density, integrate_fixed
from .numdiff import fd_grad


def _sharp_and_h(chart, y, eta):
    ginv = chart.inv_metric(y)
    sharp = np.einsum('...ab,...b->...a', ginv, eta)
    h = np.sqrt(np.einsum('...a,...a->...', eta, sharp))
    if np.any(h <= 1e-12):
        raise ZeroCovector("covector norm h <= 1e-12; flow undefined")
    return sharp, h


def omega_field(chart, frame, x):
    """Transport connection omega_a = (1/4) sigma_b nabla_a sigma^b,
    shape (..., 3, 2, 2)."""
    x = np.asarray(x, dtype=float)
    gmat = chart.metric(x)
    sig = sigma_matrices(frame, x)
    sig_low = np.einsum('...bc,...cpq->...bpq', gmat, sig)
    covd = (_dsigma(frame, x)
            + np.einsum('...bag,...gpq->...abpq', christoffel(chart, x), sig))
    return 0.25 * np.einsum('...bqr,...abrs->...aqs', sig_low, covd)


@dataclass
class FlowState:
    """Cogeodesic flow samples for one branch."""

    t: np.ndarray        # (T,)
    x: np.ndarray        # (..., T, 3)
    xi: np.ndarray       # (..., T, 3)
    h: np.ndarray        # (...)
    h_drift: float       # max |h(x(t), xi(t)) - h(y, eta)| over samples


@dataclass
class TransportResult(FlowState):
    """Flow samples plus the transported spinor."""

    zeta: np.ndarray = None      # (..., T, 2)
    norm_drift: float = 0.0      # max | |zeta(t)| - |zeta(0)| |


def _xi_from_velocity(chart, x, u, h, sign):
    return sign * h[..., None] * np.einsum('...ab,...b->...a',
                                           chart.metric(x), u)


def hamiltonian_flow(chart, y, eta, ts, sign=+1):
    """Flow samples of the +-h branch from (y, eta) at times ts.

    y and eta broadcast over leading axes; each requested time is reached
    by an adaptive integration from t = 0.  h_drift records the worst
    conservation defect of h across all samples.
    """
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    y, eta = np.broadcast_arrays(y, eta)
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    sharp, h = _sharp_and_h(chart, y, eta)
    v0 = sign * sharp / h[..., None]
    bshape = y.shape[:-1]
    Y = y.reshape(-1, 3)
    V0 = v0.reshape(-1, 3)
    N = Y.shape[0]

    xs = np.empty((ts.size, N, 3))
    us = np.empty((ts.size, N, 3))
    for i, t in enumerate(ts):
        xs[i], us[i] = _adaptive_geodesic(chart, Y, V0, float(t))
    xis = _xi_from_velocity(chart, xs, us, h.reshape(-1), sign)
    hs = np.sqrt(np.einsum('...a,...ab,...b->...', xis,
                           np.linalg.inv(chart.metric(xs)), xis))
    drift = float(np.max(np.abs(hs - h.reshape(-1))))
    x_out = np.moveaxis(xs, 0, -2).reshape(bshape + (ts.size, 3))
    xi_out = np.moveaxis(xis, 0, -2).reshape(bshape + (ts.size, 3))
    return FlowState(t=ts, x=x_out, xi=xi_out, h=h, h_drift=drift)


def _adaptive_geodesic(chart, Y, V0, t):
    """solve_ivp RK45 geodesic batch from (Y, V0) to time t (either sign)."""
    N = Y.shape[0]
    if t == 0.0:
        return Y.copy(), V0.copy()

    def rhs(_t, z):
        x = z[:3 * N].reshape(N, 3)
        u = z[3 * N:].reshape(N, 3)
        Gam = christoffel(chart, x)
        acc = -np.einsum('...abc,...b,...c->...a', Gam, u, u)
        return np.concatenate([u.ravel(), acc.ravel()])

    sol = solve_ivp(rhs, (0.0, t), np.concatenate([Y.ravel(), V0.ravel()]),
                    method='RK45', rtol=IVP_TOL, atol=IVP_TOL)
    if not sol.success:
        raise NoConvergence(f"flow integration failed: {sol.message}")
    zf = sol.y[:, -1]
    x = zf[:3 * N].reshape(N, 3)
    chart.require_inside(x)
    return x, zf[3 * N:].reshape(N, 3)


def flow_fixed(chart, y, eta, t, sign=+1, n=None, want_sens=False):
    """Fixed-step flow point and momentum at a single time t (batched).

    Smooth under outer finite differencing; with want_sens=True also
    returns the 6x6 sensitivity of (x, xdot) to (y, v0 = sign eta^sharp/h).
    """
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    y, eta = np.broadcast_arrays(y, eta)
    sharp, h = _sharp_and_h(chart, y, eta)
    v0 = sign * sharp / h[..., None]
    out = integrate_fixed(chart, y, v0, float(t), n=n, want_sens=want_sens)
    x, u = out[0], out[1]
    xi = _xi_from_velocity(chart, x, u, h, sign)
    if want_sens:
        return x, xi, out[2]
    return x, xi


def _transport_rhs(chart, frame, x, u, zeta):
    Gam = christoffel(chart, x)
    acc = -np.einsum('...abc,...b,...c->...a', Gam, u, u)
    om = omega_field(chart, frame, x)
    zdot = -np.einsum('...a,...apq,...q->...p',
                      np.asarray(u, dtype=complex), om, zeta)
    return u, acc, zdot


def spinor_transport(chart, frame, y, eta, ts, sign=+1, zeta0=None):
    """Transport zeta along the +-flow from (y, eta); samples at times ts.

    zeta0 defaults to the phase-fixed unit eigenvector v^pm(y, eta) of the
    matching branch.  Broadcasts over leading axes of (y, eta, zeta0).
    """
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    y, eta = np.broadcast_arrays(y, eta)
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    if zeta0 is None:
        pairs = eigenpairs_projections(chart, frame, y, eta)
        zeta0 = pairs[1] if sign > 0 else pairs[2]
    zeta0 = np.broadcast_to(np.asarray(zeta0, dtype=complex),
                            y.shape[:-1] + (2,))
    sharp, h = _sharp_and_h(chart, y, eta)
    v0 = sign * sharp / h[..., None]
    bshape = y.shape[:-1]
    Y = y.reshape(-1, 3)
    V0 = v0.reshape(-1, 3)
    Z0 = zeta0.reshape(-1, 2)
    N = Y.shape[0]

    def pack(x, u, z):
        return np.concatenate([x.ravel(), u.ravel(),
                               z.real.ravel(), z.imag.ravel()])

    def unpack(zv):
        x = zv[:3 * N].reshape(N, 3)
        u = zv[3 * N:6 * N].reshape(N, 3)
        z = (zv[6 * N:8 * N] + 1j * zv[8 * N:]).reshape(N, 2)
        return x, u, z

    def rhs(_t, zv):
        x, u, z = unpack(zv)
        dx, du, dz = _transport_rhs(chart, frame, x, u, z)
        return np.concatenate([dx.ravel(), du.ravel(),
                               dz.real.ravel(), dz.imag.ravel()])

    xs = np.empty((ts.size, N, 3))
    us = np.empty((ts.size, N, 3))
    zs = np.empty((ts.size, N, 2), dtype=complex)
    z0 = pack(Y, V0, Z0)
    for i, t in enumerate(ts):
        if t == 0.0:
            xs[i], us[i], zs[i] = Y, V0, Z0
            continue
        sol = solve_ivp(rhs, (0.0, float(t)), z0, method='RK45',
                        rtol=IVP_TOL, atol=IVP_TOL)
        if not sol.success:
            raise NoConvergence(f"transport integration failed: {sol.message}")
        xs[i], us[i], zs[i] = unpack(sol.y[:, -1])
        chart.require_inside(xs[i])
    xis = _xi_from_velocity(chart, xs, us, h.reshape(-1), sign)
    hs = np.sqrt(np.einsum('...a,...ab,...b->...', xis,
                           np.linalg.inv(chart.metric(xs)), xis))
    drift = float(np.max(np.abs(hs - h.reshape(-1))))
    norms = np.linalg.norm(zs, axis=-1)
    norm_drift = float(np.max(np.abs(norms - np.linalg.norm(Z0, axis=-1))))
    reshape = lambda a, k: np.moveaxis(a, 0, -2).reshape(bshape + (ts.size, k))
    return TransportResult(t=ts, x=reshape(xs, 3), xi=reshape(xis, 3), h=h,
                           h_drift=drift, zeta=reshape(zs, 2),
                           norm_drift=norm_drift)


def transport_fixed(chart, frame, y, eta, t, sign=+1, zeta0=None, n=None):
    """Fixed-step RK4 spinor transport to a single time t (batched).

    Returns (x, xi, zeta); smooth under outer finite differencing.
    """
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    y, eta = np.broadcast_arrays(y, eta)
    if zeta0 is None:
        pairs = eigenpairs_projections(chart, frame, y, eta)
        zeta0 = pairs[1] if sign > 0 else pairs[2]
    zeta0 = np.broadcast_to(np.asarray(zeta0, dtype=complex),
                            y.shape[:-1] + (2,))
    sharp, h = _sharp_and_h(chart, y, eta)
    x = y.copy()
    u = sign * sharp / h[..., None]
    z = zeta0.copy()
    if n is None:
        n = max(16, int(np.ceil(abs(t) / 0.008)))
    dt = t / n
    for _ in range(n):
        k1 = _transport_rhs(chart, frame, x, u, z)
        k2 = _transport_rhs(chart, frame, x + 0.5 * dt * k1[0],
                            u + 0.5 * dt * k1[1], z + 0.5 * dt * k1[2])
        k3 = _transport_rhs(chart, frame, x + 0.5 * dt * k2[0],
                            u + 0.5 * dt * k2[1], z + 0.5 * dt * k2[2])
        k4 = _transport_rhs(chart, frame, x + dt * k3[0],
                            u + dt * k3[1], z + dt * k3[2])
        x = x + (dt / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        u = u + (dt / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        z = z + (dt / 6.0) * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    return x, _xi_from_velocity(chart, x, u, h, sign), z


# ---------------------------------------------------------------------------
# phase and weight


@dataclass
class PhaseEval:
    """phi, its first x-derivatives, the mixed Hessian and the weight."""

    value: np.ndarray      # (...) complex
    grad_x: np.ndarray     # (..., 3) complex
    mixed: np.ndarray      # (..., 3, 3) complex  [gamma, beta] = d2/dx dg eta_beta
    weight: Optional[np.ndarray]   # (...) complex, None when not requested
    epsilon: float
    x_flow: np.ndarray     # (3,) flow point at time t
    xi_flow: np.ndarray    # (3,) momentum at time t
    h: float


def _log_from_bases(chart, Y, X, n=None):
    """Fixed-step log map with a separate base point per row."""
    def shooter(Yb, V):
        xe, _, S = integrate_fixed(chart, Yb, V, 1.0, n=n, want_sens=True)
        return xe, S[:, :3, 3:]
    return _newton_log(chart, Y, X, shooter)


def _phi_core(chart, y, ts_arr, X, etas, sign, eps, inj):
    """Batched phase value and x-gradient at (ts_arr[i], X[i]; y, etas[i])."""
    M = X.shape[0]
    sharp, h = _sharp_and_h(chart, np.broadcast_to(y, etas.shape), etas)
    v0 = sign * sharp / h[..., None]
    Y0 = np.broadcast_to(y, (M, 3))
    xe, ue = integrate_fixed(chart, Y0, ts_arr[:, None] * v0, 1.0)
    g_e = chart.metric(xe)
    small = np.abs(ts_arr) < 1e-14
    udot = np.where(small[:, None], v0, ue / np.where(small, 1.0, ts_arr)[:, None])
    xi = sign * h[:, None] * np.einsum('...ab,...b->...a', g_e, udot)
    v = _log_from_bases(chart, xe, X)
    gv = np.einsum('...ab,...b->...a', g_e, v)
    dist2 = np.einsum('...a,...a->...', v, gv)
    if np.any(dist2 > inj * inj):
        raise OutOfRadius(
            f"target exceeds injectivity radius {inj:.3g} of the flow point")
    _, _, S = integrate_fixed(chart, xe, v, 1.0, want_sens=True)
    Je = S[:, :3, 3:]
    value = (np.einsum('...a,...a->...', xi, v)
             + 0.5j * eps * h * dist2)
    wvec = xi + 1j * eps * h[:, None] * gv
    grad = np.linalg.solve(np.swapaxes(Je, -1, -2),
                           wvec.astype(complex)[..., None])[..., 0]
    return value, grad


def phase_and_weight(chart, t, x, y, eta, sign=+1, epsilon=1.0,
                     want_weight=True, want_mixed=True, branch_samples=9,
                     max_branch_samples=129):
    """Evaluate phi^pm(t, x; y, eta), its derivatives and the weight.

    t is scalar, (y, eta) a single base pair, x a batch of targets.  The
    mixed Hessian is produced by finite differencing the analytic
    x-gradient in eta; pass want_mixed=False (with want_weight=False) to
    skip it.  The weight's quarter root is branch-tracked along
    (s t, y + s (x - y)); when the principal-branch shortcut fails the path
    sampling is refined up to `max_branch_samples`, then BranchLoss is
    raised.  Raises OutOfRadius when a target (or the branch path) leaves
    the injectivity ball of its flow point.
    """
    t = float(t)
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    x = np.asarray(x, dtype=float)
    bshape = x.shape[:-1]
    X = x.reshape(-1, 3)
    N = X.shape[0]
    inj = chart.injectivity_hint
    eps = float(epsilon)

    ts_arr = np.full(N, t)
    etas = np.broadcast_to(eta, (N, 3))
    value, grad = _phi_core(chart, y, ts_arr, X, etas, sign, eps, inj)

    def mixed_at(ts_s, X_s):
        M = X_s.shape[0]

        def G(es):
            sh = es.shape[:-1]
            E = es.reshape(-1, 3)
            S = E.shape[0]
            _, gr = _phi_core(chart, y,
                              np.tile(ts_s, S),
                              np.tile(X_s, (S, 1)),
                              np.repeat(E, M, axis=0), sign, eps, inj)
            return gr.reshape(sh + (M, 3))

        # plain 4th-order stencil: the gradient is analytic in eta, so the
        # Richardson refinement would only double the batch for nothing
        out = fd_grad(G, eta, richardson=False)   # (3_eta, M, 3_x)
        return np.moveaxis(out, 0, -1)            # (M, 3_x, 3_eta)

    mixed = mixed_at(ts_arr, X) if (want_mixed or want_weight) else None

    weight = None
    if want_weight:
        rho_y = float(density(chart, y))
        rho_x = density(chart, X)
        K = branch_samples
        while True:
            s = np.linspace(0.0, 1.0, K)
            Xp = y + s[:, None, None] * (X - y)          # (K, N, 3)
            tp = np.repeat(t * s, N)
            mx = mixed_at(tp, Xp.reshape(-1, 3)).reshape(K, N, 3, 3)
            det2 = np.linalg.det(mx) ** 2                 # (K, N)
            args = np.angle(det2)
            if np.all(np.abs(args) < 0.5 * np.pi):
                theta_end = args[-1]
                break
            theta = np.unwrap(args, axis=0)
            if np.all(np.abs(np.diff(theta, axis=0)) < 0.5 * np.pi):
                theta_end = theta[-1]
                break
            if 2 * K - 1 > max_branch_samples:
                raise BranchLoss(
                    f"quarter-root branch lost with {K} path samples")
            K = 2 * K - 1
        weight = ((rho_x * rho_y) ** -0.5
                  * np.abs(det2[-1]) ** 0.25
                  * np.exp(0.25j * theta_end)).reshape(bshape)

    xe1, xi1 = flow_fixed(chart, y, eta, t, sign=sign)
    _, h = _sharp_and_h(chart, y, eta)
    return PhaseEval(value=value.reshape(bshape),
                     grad_x=grad.reshape(bshape + (3,)),
                     mixed=None if mixed is None
                           else mixed.reshape(bshape + (3, 3)),
                     weight=weight, epsilon=eps,
                     x_flow=xe1, xi_flow=xi1, h=float(h))
