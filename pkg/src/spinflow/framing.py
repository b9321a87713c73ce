"""Orthonormal framings, Pauli decompositions and SU(2)/SO(3) gauge maps.

A Frame stores the rows e_j (j = 1..3) of a global orthonormal framing,
e_j^a g_ab e_k^b = delta_jk, as a batched callable.  Gauge maps between two
framings are SO(3)-valued fields O with etilde_j = O_j^k e_k; their spin
lifts are SU(2)-valued with the two-to-one ambiguity G <-> -G resolved
explicitly (continuity to a reference, or G = +Id normalization).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import NoConvergence, NotSU2
from .geometry import christoffel, integrate_fixed
from .numdiff import fd_grad

# Pauli matrices s^1, s^2, s^3
PAULI = np.array(
    [
        [[0.0, 1.0], [1.0, 0.0]],
        [[0.0, -1.0j], [1.0j, 0.0]],
        [[1.0, 0.0], [0.0, -1.0]],
    ],
    dtype=complex,
)
ID2 = np.eye(2, dtype=complex)


@dataclass
class Frame:
    """Orthonormal framing on a chart (rows e[..., j, :] = e_j)."""

    chart: str
    e: Callable
    de: Optional[Callable] = None  # de[..., b, j, a] = d_b e_j^a
    name: str = ""

    def frame(self, x):
        return np.asarray(self.e(np.asarray(x, dtype=float)))

    def dframe(self, x):
        if self.de is not None:
            return np.asarray(self.de(np.asarray(x, dtype=float)))
        return fd_grad(self.e, x)


@dataclass
class GaugeTransform:
    """SU(2)-valued field relating two framings on the same chart."""

    source: str
    target: str
    G: Callable
    name: str = ""

    def __call__(self, x):
        return np.asarray(self.G(np.asarray(x, dtype=float)))


def pauli_project(M):
    """Split M = a0 * Id + a_j s^j; returns (a0, a) with a of shape (..., 3)."""
    M = np.asarray(M)
    a0 = 0.5 * np.trace(M, axis1=-2, axis2=-1)
    a = 0.5 * np.einsum('jab,...ba->...j', PAULI, M)
    return a0, a


def frame_checks(chart, frame, xs, killing=False):
    """Residuals of the framing axioms at points xs.

    Returns a dict with the max orthonormality defect |e g e^T - Id|, the
    minimum of det(e) (positive for an oriented framing), and the max
    closed-form/finite-difference defect of de when a closed form exists.
    With killing=True the symmetrized covariant derivative of each lowered
    frame covector is added as "killing_residual" (zero iff every frame
    vector field generates an isometry).
    """
    xs = np.asarray(xs, dtype=float)
    E = frame.frame(xs)
    G = chart.metric(xs)
    gram = np.einsum('...ja,...ab,...kb->...jk', E, G, E)
    orth = float(np.max(np.abs(gram - np.eye(3))))
    mindet = float(np.min(np.linalg.det(E)))
    de_defect = None
    if frame.de is not None:
        de_defect = float(np.max(np.abs(frame.dframe(xs) - fd_grad(frame.e, xs))))
    out = {"orthonormality": orth, "orientation_min_det": mindet,
           "de_consistency": de_defect}
    if killing:
        dg = chart.dmetric(xs)
        de = frame.dframe(xs) if frame.de is not None else fd_grad(frame.e, xs)
        dv = (np.einsum('...abc,...jc->...jab', dg, E)
              + np.einsum('...bc,...ajc->...jab', G, de))
        gam = christoffel(chart, xs)
        nv = dv - np.einsum('...cab,...jd,...dc->...jab', gam, E, G)
        out["killing_residual"] = float(np.max(np.abs(nv + np.swapaxes(nv, -1, -2))))
    return out


# ---------------------------------------------------------------------------
# SU(2) <-> SO(3)


def _check_su2(G, tol=1e-9):
    G = np.asarray(G, dtype=complex)
    uni = np.abs(np.einsum('...ba,...bc->...ac', np.conj(G), G) - ID2).max()
    det = np.abs(np.linalg.det(G) - 1.0).max()
    if uni > tol or det > tol:
        raise NotSU2(f"matrix not in SU(2): unitary defect {uni:.2e}, det defect {det:.2e}")
    return G


def su2_to_so3(G):
    """Adjoint rotation of an SU(2) element: O[j, k] = tr(s^j G s^k G*) / 2.

    Satisfies G (v . s) G* = (O v) . s, so O is the rotation matrix whose
    spin lift is G; O is insensitive to the sign of G.
    """
    G = _check_su2(G)
    O = 0.5 * np.einsum('jab,...bc,kcd,...ad->...jk', PAULI, G, PAULI, np.conj(G))
    return np.real(O)


def _check_so3(O, tol=1e-9):
    O = np.asarray(O, dtype=float)
    orth = np.abs(np.einsum('...ji,...jk->...ik', O, O) - np.eye(3)).max()
    det = np.abs(np.linalg.det(O) - 1.0).max()
    if orth > tol or det > tol:
        raise NotSU2(f"matrix not in SO(3): orthogonality defect {orth:.2e}, det defect {det:.2e}")
    return O


def su2_gauge(O, reference=None):
    """Spin lift of SO(3) values: G with su2_to_so3(G) = O.

    The two-to-one ambiguity is fixed by `reference`: each lift takes the
    sign making Re tr(G_ref* G) > 0 (default reference Id, i.e. lifts near
    the identity come out with positive trace).  Batched.
    """
    O = _check_so3(O)
    t = np.einsum('...jj->...', O)
    # squared quaternion components (w, x, y, z), each >= 0 up to roundoff
    q2 = 0.25 * np.stack(
        [
            1.0 + t,
            1.0 + 2.0 * O[..., 0, 0] - t,
            1.0 + 2.0 * O[..., 1, 1] - t,
            1.0 + 2.0 * O[..., 2, 2] - t,
        ],
        axis=-1,
    )
    pick = np.argmax(q2, axis=-1)
    qmax2 = np.take_along_axis(q2, pick[..., None], axis=-1)[..., 0]
    d = 4.0 * np.sqrt(np.maximum(qmax2, 1e-300))

    a = O[..., 2, 1] - O[..., 1, 2]
    b = O[..., 0, 2] - O[..., 2, 0]
    c = O[..., 1, 0] - O[..., 0, 1]
    p = O[..., 1, 0] + O[..., 0, 1]
    r = O[..., 0, 2] + O[..., 2, 0]
    s = O[..., 2, 1] + O[..., 1, 2]

    w_case = np.stack([d / 4.0, a / d, b / d, c / d], axis=-1)
    x_case = np.stack([a / d, d / 4.0, p / d, r / d], axis=-1)
    y_case = np.stack([b / d, p / d, d / 4.0, s / d], axis=-1)
    z_case = np.stack([c / d, r / d, s / d, d / 4.0], axis=-1)
    cases = np.stack([w_case, x_case, y_case, z_case], axis=-2)
    q = np.take_along_axis(cases, pick[..., None, None], axis=-2)[..., 0, :]

    G = q[..., 0, None, None] * ID2 - 1j * np.einsum('...j,jab->...ab', q[..., 1:], PAULI)
    ref = ID2 if reference is None else np.asarray(reference, dtype=complex)
    inner = np.real(np.einsum('...ba,...bc->...', np.conj(np.broadcast_to(ref, G.shape)), G))
    flip = np.where(inner < 0.0, -1.0, 1.0)
    return G * flip[..., None, None]


def gauge_between(chart, frame_a, frame_b):
    """SO(3)-valued field O(x) with frame_b rows = O(x) . frame_a rows."""
    def O(x):
        Ea = frame_a.frame(x)
        Eb = frame_b.frame(x)
        G = chart.metric(x)
        return np.einsum('...ja,...ab,...kb->...jk', Eb, G, Ea)
    return O


# ---------------------------------------------------------------------------
# Levi-Civita framing (radially parallel-transported frame)


def _newton_log(chart, y, X, shooter, tol=1e-11, max_iter=50):
    """Damped Newton inversion of exp_y, with a pluggable shooter."""
    X = np.atleast_2d(X)
    N = X.shape[0]
    Y = np.broadcast_to(y, X.shape)
    tol_pt = tol * (1.0 + np.linalg.norm(X, axis=-1))
    V = X - Y
    lam = np.ones(N)
    V_prev = V.copy()
    step_prev = np.zeros_like(V)
    res_prev = np.full(N, np.inf)
    for _ in range(max_iter):
        xe, Je = shooter(Y, V)
        r = xe - X
        res = np.linalg.norm(r, axis=-1)
        if np.all(res <= tol_pt):
            return V
        worse = res > res_prev * (1.0 + 1e-12) + 1e-15
        if np.any(worse):
            lam[worse] *= 0.5
            if np.any(lam < 1e-6):
                raise NoConvergence("shooting stalled (step damping exhausted)")
            V[worse] = V_prev[worse] + lam[worse, None] * step_prev[worse]
            continue
        step = -np.linalg.solve(Je, r[..., None])[..., 0]
        V_prev = V.copy()
        step_prev = step
        res_prev = res
        lam = np.minimum(1.0, 2.0 * lam)
        V = V + lam[:, None] * step
    raise NoConvergence(f"log map did not converge in {max_iter} iterations")


def log_map_fixed(chart, y, X, n=None):
    """Fixed-step variant of the log map (smooth under outer differencing)."""
    def shooter(Y, V):
        xe, _, S = integrate_fixed(chart, Y, V, 1.0, n=n, want_sens=True)
        return xe, S[:, :3, 3:]
    return _newton_log(chart, np.asarray(y, float), X, shooter)


def _transport_frame(chart, y, V, E0, n=None):
    """Parallel-transport frame rows E0 along exp_y(t V), t in [0, 1]."""
    V = np.atleast_2d(V)
    N = V.shape[0]
    x = np.broadcast_to(np.asarray(y, float), V.shape).copy()
    u = V.copy()
    E = np.broadcast_to(E0, (N, 3, 3)).copy()
    if n is None:
        L = float(np.max(np.linalg.norm(u, axis=-1)))
        n = max(16, int(np.ceil(L / 0.008)))
    dt = 1.0 / n

    def rhs(x, u, E):
        Gam = christoffel(chart, x)
        acc = -np.einsum('...abc,...b,...c->...a', Gam, u, u)
        dE = -np.einsum('...abc,...b,...jc->...ja', Gam, u, E)
        return u, acc, dE

    for _ in range(n):
        k1 = rhs(x, u, E)
        k2 = rhs(x + 0.5 * dt * k1[0], u + 0.5 * dt * k1[1], E + 0.5 * dt * k1[2])
        k3 = rhs(x + 0.5 * dt * k2[0], u + 0.5 * dt * k2[1], E + 0.5 * dt * k2[2])
        k4 = rhs(x + dt * k3[0], u + dt * k3[1], E + dt * k3[2])
        x = x + (dt / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        u = u + (dt / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        E = E + (dt / 6.0) * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    return E


def levi_civita_frame(chart, y, seed_frame=None, cache=False, cache_radius=None,
                      cache_degree=4, cache_samples=200, cache_seed=0):
    """Radially parallel framing anchored at y.

    The frame at x is the parallel transport of the frame at y along the
    unique short geodesic y -> x; its torsion vanishes at y.  The anchor
    frame is seed_frame evaluated at y (default: inverse Cholesky factor of
    g(y)).  Evaluation transports on demand with the fixed-step engine so the
    result is smooth under finite differencing; `cache=True` replaces it by
    a degree-`cache_degree` polynomial fit on the ball of radius
    `cache_radius` (default injectivity_hint / 4), which is faster but caps
    downstream derivative accuracy at the fit residual.
    """
    y = np.asarray(y, dtype=float)
    g0 = chart.metric(y, check=True)
    if seed_frame is None:
        E0 = np.linalg.inv(np.linalg.cholesky(g0))
    else:
        E0 = seed_frame.frame(y)

    def e(x):
        x = np.asarray(x, dtype=float)
        bshape = x.shape[:-1]
        X = x.reshape(-1, 3)
        near = np.linalg.norm(X - y, axis=-1) < 1e-13
        V = np.zeros_like(X)
        if np.any(~near):
            V[~near] = log_map_fixed(chart, y, X[~near])
        E = _transport_frame(chart, y, V, E0)
        return E.reshape(bshape + (3, 3))

    fr = Frame(chart=chart.name, e=e, de=None, name=f"levi_civita@{chart.name}")
    if cache:
        radius = cache_radius if cache_radius is not None else chart.injectivity_hint / 4.0
        fr = _cache_frame(chart, fr, y, radius, cache_degree, cache_samples, cache_seed)
    return fr


def _cache_frame(chart, frame, y, radius, degree, samples, seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(samples, 3))
    pts *= (radius * rng.uniform(size=samples) ** (1.0 / 3.0) / np.linalg.norm(pts, axis=-1))[:, None]
    pts = pts + y
    vals = frame.frame(pts).reshape(samples, 9)

    powers = [(i, j, k) for i in range(degree + 1)
              for j in range(degree + 1 - i)
              for k in range(degree + 1 - i - j)]
    def design(X):
        d = (X - y) / radius
        return np.stack([d[:, 0] ** i * d[:, 1] ** j * d[:, 2] ** k
                         for (i, j, k) in powers], axis=-1)

    A = design(pts)
    coef, *_ = np.linalg.lstsq(A, vals, rcond=None)

    def e_cached(x):
        x = np.asarray(x, dtype=float)
        bshape = x.shape[:-1]
        out = design(x.reshape(-1, 3)) @ coef
        return out.reshape(bshape + (3, 3))

    return Frame(chart=frame.chart, e=e_cached, de=None, name=frame.name + ":cached")
