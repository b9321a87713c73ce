"""Charts, curvature and geodesic operations on a 3-manifold.

A ManifoldChart is a single coordinate patch with a batched metric callable
and (optionally) closed-form metric derivatives.  Index conventions:

    g(x)   -> (..., 3, 3)          g_ab
    dg(x)  -> (..., 3, 3, 3)       dg[..., c, a, b]    = d_c g_ab
    d2g(x) -> (..., 3, 3, 3, 3)    d2g[..., c, d, a, b] = d_c d_d g_ab
    d3g(x) -> (..., 3, 3, 3, 3, 3)

Curvature follows

    R^r_smn = d_m Gamma^r_ns - d_n Gamma^r_ms
              + Gamma^r_ml Gamma^l_ns - Gamma^r_nl Gamma^l_ms,
    Ric_sn = R^m_smn,   Scal = g^sn Ric_sn,

which makes the unit round 3-sphere come out with scalar curvature +6.

Public integrators (exp_map, log_map_and_distance) run adaptive RK45 at
rtol = atol = 1e-11.  The fixed-step engine (`integrate_fixed`) exists for
callers that difference the results afterwards: its error is smooth in the
initial data, so it cancels in finite-difference stencils, whereas adaptive
accept/reject noise does not.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ChartExit, NoConvergence, OutOfChart, SingularMetric
from .numdiff import fd_grad

IVP_TOL = 1e-11
FIXED_STEP = 0.008      # coordinate arc length per fixed RK4 step
FIXED_MIN_STEPS = 16
_DET_FLOOR = 1e-14


@dataclass
class ManifoldChart:
    """Single coordinate chart with metric closed forms.

    `g` and `domain` must accept arbitrary leading batch axes.  The optional
    dg/d2g/d3g callables follow the module-level index convention; when they
    are missing, derived quantities fall back to finite differences.
    `injectivity_hint` bounds the geodesic ball radius used by normal
    coordinates and phase evaluation; `loop_bound` is the shortest geodesic
    loop length T0 used by the spectral module.
    """

    name: str
    g: Callable
    domain: Callable
    dg: Optional[Callable] = None
    d2g: Optional[Callable] = None
    d3g: Optional[Callable] = None
    injectivity_hint: float = 1.0
    loop_bound: float = 2.0 * np.pi
    dim: int = 3

    def metric(self, x, check=False):
        gm = np.asarray(self.g(np.asarray(x, dtype=float)))
        if check:
            _require_nonsingular(gm)
        return gm

    def inv_metric(self, x):
        return np.linalg.inv(self.metric(x))

    def dmetric(self, x):
        if self.dg is not None:
            return np.asarray(self.dg(np.asarray(x, dtype=float)))
        return fd_grad(self.g, x)

    def in_domain(self, x):
        return np.asarray(self.domain(np.asarray(x, dtype=float)))

    def require_inside(self, x):
        ok = self.in_domain(x)
        if not np.all(ok):
            raise OutOfChart(f"point outside chart '{self.name}'")


@dataclass
class CurvaturePack:
    """Pointwise curvature data; every field carries the batch shape of x."""

    g: np.ndarray        # (..., 3, 3)
    g_inv: np.ndarray    # (..., 3, 3)
    Gamma: np.ndarray    # (..., 3, 3, 3)   Gamma[..., a, b, c] = Gamma^a_bc
    Riemann: np.ndarray  # (..., 3, 3, 3, 3)  R^r_smn
    Ricci: np.ndarray    # (..., 3, 3)
    Scalar: np.ndarray   # (...)
    rho: np.ndarray      # (...)  sqrt(det g)


def _require_nonsingular(gmat):
    det = np.linalg.det(gmat)
    if np.any(det <= _DET_FLOOR):
        raise SingularMetric(f"metric determinant <= {_DET_FLOOR}")
    return det


def density(chart, x):
    """sqrt(det g) at x."""
    return np.sqrt(_require_nonsingular(chart.metric(x)))


def christoffel(chart, x):
    """Christoffel symbols Gamma[..., a, b, c] = Gamma^a_bc at x."""
    gmat = chart.metric(x)
    _require_nonsingular(gmat)
    ginv = np.linalg.inv(gmat)
    dg = chart.dmetric(x)
    # lowered symbol S_dbc = d_b g_dc + d_c g_db - d_d g_bc
    S = np.einsum('...bdc->...dbc', dg) + np.einsum('...cdb->...dbc', dg) - dg
    return 0.5 * np.einsum('...ad,...dbc->...abc', ginv, S)


def _dgamma(chart, x):
    """d_m Gamma^a_bc as [..., m, a, b, c]; analytic when dg and d2g exist."""
    if chart.dg is None or chart.d2g is None:
        return fd_grad(lambda z: christoffel(chart, z), x)
    gmat = chart.metric(x)
    ginv = np.linalg.inv(gmat)
    dg = np.asarray(chart.dg(x))
    d2g = np.asarray(chart.d2g(np.asarray(x, dtype=float)))
    S = np.einsum('...bdc->...dbc', dg) + np.einsum('...cdb->...dbc', dg) - dg
    dS = (np.einsum('...mbdc->...mdbc', d2g)
          + np.einsum('...mcdb->...mdbc', d2g)
          - np.einsum('...mdbc->...mdbc', d2g))
    dginv = -np.einsum('...ap,...mpq,...qd->...mad', ginv, dg, ginv)
    return 0.5 * (np.einsum('...mad,...dbc->...mabc', dginv, S)
                  + np.einsum('...ad,...mdbc->...mabc', ginv, dS))


def curvature_pack(chart, x):
    """Assemble CurvaturePack (metric, Christoffels, Riemann, Ricci, Scalar, rho)."""
    x = np.asarray(x, dtype=float)
    gmat = chart.metric(x)
    det = _require_nonsingular(gmat)
    ginv = np.linalg.inv(gmat)
    Gam = christoffel(chart, x)
    dGam = _dgamma(chart, x)
    R = (np.einsum('...mrns->...rsmn', dGam)
         - np.einsum('...nrms->...rsmn', dGam)
         + np.einsum('...rml,...lns->...rsmn', Gam, Gam)
         - np.einsum('...rnl,...lms->...rsmn', Gam, Gam))
    Ric = np.einsum('...msmn->...sn', R)
    Scal = np.einsum('...sn,...sn->...', ginv, Ric)
    return CurvaturePack(g=gmat, g_inv=ginv, Gamma=Gam, Riemann=R,
                         Ricci=Ric, Scalar=Scal, rho=np.sqrt(det))


# ---------------------------------------------------------------------------
# geodesic integration


def _geo_rhs(chart, x, u, S=None):
    Gam = christoffel(chart, x)
    acc = -np.einsum('...abc,...b,...c->...a', Gam, u, u)
    if S is None:
        return u, acc, None
    dGam = _dgamma(chart, x)
    B = np.einsum('...dabc,...b,...c->...ad', dGam, u, u)
    C = 2.0 * np.einsum('...abc,...c->...ab', Gam, u)
    Sx, Su = S[..., :3, :], S[..., 3:, :]
    dSx = Su
    dSu = -np.einsum('...ad,...dk->...ak', B, Sx) - np.einsum('...ab,...bk->...ak', C, Su)
    return u, acc, np.concatenate([dSx, dSu], axis=-2)


def integrate_fixed(chart, x0, u0, tmax=1.0, n=None, want_sens=False):
    """Batched fixed-step RK4 geodesic integration over [0, tmax].

    Returns (x, u) or (x, u, S) with S = d(x, u)/d(x0, u0) as (..., 6, 6).
    """
    x = np.array(np.broadcast_arrays(np.asarray(x0, float), np.asarray(u0, float))[0])
    u = np.broadcast_to(np.asarray(u0, float), x.shape).astype(float).copy()
    S = None
    if want_sens:
        S = np.zeros(x.shape[:-1] + (6, 6))
        S[...] = np.eye(6)
    if n is None:
        L = float(np.max(np.linalg.norm(u, axis=-1))) * abs(tmax)
        n = max(FIXED_MIN_STEPS, int(np.ceil(L / FIXED_STEP)))
    dt = tmax / n
    for _ in range(n):
        k1 = _geo_rhs(chart, x, u, S)
        k2 = _geo_rhs(chart, x + 0.5 * dt * k1[0], u + 0.5 * dt * k1[1],
                      None if S is None else S + 0.5 * dt * k1[2])
        k3 = _geo_rhs(chart, x + 0.5 * dt * k2[0], u + 0.5 * dt * k2[1],
                      None if S is None else S + 0.5 * dt * k2[2])
        k4 = _geo_rhs(chart, x + dt * k3[0], u + dt * k3[1],
                      None if S is None else S + dt * k3[2])
        x = x + (dt / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        u = u + (dt / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        if S is not None:
            S = S + (dt / 6.0) * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    if want_sens:
        return x, u, S
    return x, u


def _ivp_run(chart, x0, u0, tmax, want_sens=False, check_domain=True):
    """Stacked solve_ivp RK45 (1e-11) for a batch of geodesics."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    u0 = np.atleast_2d(np.asarray(u0, dtype=float))
    x0, u0 = np.broadcast_arrays(x0, u0)
    N = x0.shape[0]
    parts = [x0.ravel(), u0.ravel()]
    if want_sens:
        S0 = np.zeros((N, 6, 6))
        S0[:] = np.eye(6)
        parts.append(S0.ravel())
    z0 = np.concatenate(parts)
    if tmax == 0.0:
        sol_states = z0[None, :]
    else:
        def rhs(_t, z):
            x = z[:3 * N].reshape(N, 3)
            u = z[3 * N:6 * N].reshape(N, 3)
            S = z[6 * N:].reshape(N, 6, 6) if want_sens else None
            dx, du, dS = _geo_rhs(chart, x, u, S)
            out = [dx.ravel(), du.ravel()]
            if want_sens:
                out.append(dS.ravel())
            return np.concatenate(out)

        sol = solve_ivp(rhs, (0.0, tmax), z0, method='RK45',
                        rtol=IVP_TOL, atol=IVP_TOL)
        if not sol.success:
            raise NoConvergence(f"geodesic integration failed: {sol.message}")
        sol_states = sol.y.T
    if check_domain:
        xs = sol_states[:, :3 * N].reshape(-1, N, 3)
        if not np.all(chart.in_domain(xs)):
            raise ChartExit(f"geodesic left chart '{chart.name}'")
    zf = sol_states[-1]
    x = zf[:3 * N].reshape(N, 3)
    u = zf[3 * N:6 * N].reshape(N, 3)
    if want_sens:
        return x, u, zf[6 * N:].reshape(N, 6, 6)
    return x, u


def exp_map(chart, y, v, t=1.0):
    """Geodesic exponential: endpoint of exp_y(t v); v may be batched."""
    y = np.asarray(y, dtype=float)
    chart.require_inside(y)
    _require_nonsingular(chart.metric(y))
    v = np.asarray(v, dtype=float)
    bshape = v.shape[:-1]
    vf = v.reshape(-1, 3)
    x0 = np.broadcast_to(y, vf.shape)
    x, _ = _ivp_run(chart, x0, vf, float(t), check_domain=True)
    return x.reshape(bshape + (3,))


def log_map_and_distance(chart, y, x, tol=1e-10, max_iter=50):
    """Invert exp_y by damped Newton shooting.

    Returns (v, dist) with exp_y(v) = x and dist the Riemannian distance;
    batched over x. Raises NoConvergence after max_iter shots.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    chart.require_inside(y)
    chart.require_inside(x)
    g0 = chart.metric(y, check=True)
    bshape = x.shape[:-1]
    X = x.reshape(-1, 3)
    N = X.shape[0]
    Y = np.broadcast_to(y, X.shape)
    tol_pt = tol * (1.0 + np.linalg.norm(X, axis=-1))

    V = X - Y
    lam = np.ones(N)
    V_prev = V.copy()
    step_prev = np.zeros_like(V)
    res_prev = np.full(N, np.inf)
    for _ in range(max_iter):
        xe, _, S = _ivp_run(chart, Y, V, 1.0, want_sens=True, check_domain=False)
        r = xe - X
        res = np.linalg.norm(r, axis=-1)
        if np.all(res <= tol_pt):
            break
        worse = res > res_prev * (1.0 + 1e-12) + 1e-15
        if np.any(worse):
            lam[worse] *= 0.5
            if np.any(lam < 1e-6):
                raise NoConvergence("shooting stalled (step damping exhausted)")
            V[worse] = V_prev[worse] + lam[worse, None] * step_prev[worse]
            continue
        Je = S[:, :3, 3:]
        try:
            step = -np.linalg.solve(Je, r[..., None])[..., 0]
        except np.linalg.LinAlgError:
            raise NoConvergence("degenerate exponential differential (caustic)")
        V_prev = V.copy()
        step_prev = step
        res_prev = res
        lam = np.minimum(1.0, 2.0 * lam)
        V = V + lam[:, None] * step
    else:
        raise NoConvergence(f"log map did not converge in {max_iter} iterations")

    dist = np.sqrt(np.einsum('...a,ab,...b->...', V, g0, V))
    return V.reshape(bshape + (3,)), dist.reshape(bshape)


# ---------------------------------------------------------------------------
# normal coordinates


@dataclass
class NormalChart(ManifoldChart):
    """Geodesic normal coordinates centered at a base-chart point.

    Coordinates xh map to the base chart via x = exp_y(E xh) with
    E = L^{-T}, g(y) = L L^T, so ghat(0) = Id and the Euclidean norm |xh|
    equals geodesic distance from the center.  The metric callable solves
    the geodesic + variational system in the base chart (fixed-step RK4).
    """

    base: ManifoldChart = None
    center: np.ndarray = None
    E: np.ndarray = None

    def to_base_full(self, xhat, n=None):
        """Map points to the base chart; returns (x, J) with J = dx/dxh."""
        xhat = np.asarray(xhat, dtype=float)
        bshape = xhat.shape[:-1]
        V = xhat.reshape(-1, 3) @ self.E.T
        x0 = np.broadcast_to(self.center, V.shape)
        xe, _, S = integrate_fixed(self.base, x0, V, 1.0, n=n, want_sens=True)
        J = S[:, :3, 3:] @ self.E
        return xe.reshape(bshape + (3,)), J.reshape(bshape + (3, 3))

    def to_base(self, xhat):
        return self.to_base_full(xhat)[0]


def normal_coordinates(chart, y):
    """Build the NormalChart of `chart` centered at y."""
    y = np.asarray(y, dtype=float)
    chart.require_inside(y)
    g0 = chart.metric(y, check=True)
    L = np.linalg.cholesky(g0)
    E = np.linalg.inv(L).T

    nc = NormalChart(
        name=f"{chart.name}:normal",
        g=None,
        domain=lambda xh: np.linalg.norm(np.asarray(xh, dtype=float), axis=-1)
        < chart.injectivity_hint,
        injectivity_hint=chart.injectivity_hint,
        loop_bound=chart.loop_bound,
        base=chart,
        center=y,
        E=E,
    )

    def ghat(xhat):
        xe, J = nc.to_base_full(xhat)
        gb = chart.metric(xe)
        return np.einsum('...ka,...kl,...lb->...ab', J, gb, J)

    nc.g = ghat
    return nc
