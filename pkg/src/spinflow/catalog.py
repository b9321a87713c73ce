"""Built-in manifolds with closed-form metric, framings, gauges and spectra.

Three entries:

  s3       round unit 3-sphere in a conformally flat chart,
           g = (1 + |x|^2/4)^{-2} delta, with the two global framings
           "plus"/"minus" (constant-torsion, *K = -/+ g), the SU(2) gauge
           field relating them, and the exact symmetric spectrum
           +-(k + 1/2) with multiplicity k (k + 1).
  s2xs1    product of the unit 2-sphere (normal coordinates on the (u, v)
           plane) and a circle (w), with the Cholesky framing.
  t3_flat  flat 3-torus, identity chart and framing.

Every stored closed form can be re-validated at random points with
`builtin(id, validate=True)`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import ToleranceFail, UnknownId
from .framing import Frame, GaugeTransform, frame_checks, gauge_between, su2_to_so3
from .geometry import ManifoldChart
from .numdiff import fd_grad
from .spectral import SpectrumModel

I3 = np.eye(3)
_EPS = np.zeros((3, 3, 3))
for _a, _b, _c in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    _EPS[_a, _b, _c] = 1.0
    _EPS[_c, _b, _a] = -1.0


@dataclass
class CatalogEntry:
    id: str
    chart: ManifoldChart
    framings: Dict[str, Frame]
    gauges: Dict[Tuple[str, str], GaugeTransform]
    spectrum: Optional[SpectrumModel]
    constants: Dict[str, float]
    default_framing: str
    base_point: np.ndarray = field(default_factory=lambda: np.zeros(3))
    killing_framings: Tuple[str, ...] = ()


# ---------------------------------------------------------------------------
# round 3-sphere


def _s3_chart():
    def g(x):
        u = 1.0 + 0.25 * np.sum(np.asarray(x, float) ** 2, axis=-1)
        return u[..., None, None] ** -2 * I3

    def dg(x):
        x = np.asarray(x, float)
        u = 1.0 + 0.25 * np.sum(x ** 2, axis=-1)
        return (-(u ** -3))[..., None, None, None] * x[..., :, None, None] * I3

    def d2g(x):
        x = np.asarray(x, float)
        u = 1.0 + 0.25 * np.sum(x ** 2, axis=-1)
        xc = x[..., :, None, None, None]
        xd = x[..., None, :, None, None]
        coef = 1.5 * u[..., None, None, None, None] ** -4 * xc * xd \
            - u[..., None, None, None, None] ** -3 * I3[:, :, None, None]
        return coef * I3

    def d3g(x):
        x = np.asarray(x, float)
        u = (1.0 + 0.25 * np.sum(x ** 2, axis=-1))[..., None, None, None, None, None]
        xc = x[..., :, None, None, None, None]
        xd = x[..., None, :, None, None, None]
        xe = x[..., None, None, :, None, None]
        dcd = I3[:, :, None, None, None]
        dce = I3[:, None, :, None, None]
        dde = I3[None, :, :, None, None]
        coef = -3.0 * u ** -5 * xc * xd * xe \
            + 1.5 * u ** -4 * (dce * xd + dde * xc + dcd * xe)
        return coef * I3

    return ManifoldChart(
        name="s3", g=g, domain=lambda x: np.linalg.norm(np.asarray(x, float), axis=-1) <= 1e3,
        dg=dg, d2g=d2g, d3g=d3g,
        injectivity_hint=np.pi / 2.0, loop_bound=2.0 * np.pi)


def _s3_frame(label):
    # rows e_j^a = [(2 - |x|^2/2) d_ja + x_j x_a -+ 2 eps_jak x_k] / 2
    sgn = -1.0 if label == "plus" else 1.0

    def e(x):
        x = np.asarray(x, float)
        f2 = 0.25 * np.sum(x ** 2, axis=-1)
        out = (1.0 - f2)[..., None, None] * I3 \
            + 0.5 * x[..., :, None] * x[..., None, :] \
            + sgn * np.einsum('jak,...k->...ja', _EPS, x)
        return out

    def de(x):
        # de[..., b, j, a] = -x_b d_ja/2 + d_jb x_a/2 + x_j d_ab/2 -+ eps_jab
        x = np.asarray(x, float)
        out = (-0.5 * x[..., :, None, None] * I3
               + np.einsum('bj,...a->...bja', I3, 0.5 * x)
               + np.einsum('ab,...j->...bja', I3, 0.5 * x)
               + sgn * np.transpose(_EPS, (2, 0, 1)))
        return out

    return Frame(chart="s3", e=e, de=de, name=label)


def _s3_gauge():
    # SU(2) field whose adjoint rotation carries the "minus" framing rows
    # onto the "plus" framing rows; equals Id at the origin.
    def G(x):
        x = np.asarray(x, float)
        r2 = np.sum(x ** 2, axis=-1)
        den = 4.0 + r2
        out = np.zeros(x.shape[:-1] + (2, 2), dtype=complex)
        out[..., 0, 0] = (4.0 - r2 - 4.0j * x[..., 2]) / den
        out[..., 0, 1] = (-4.0 * x[..., 1] - 4.0j * x[..., 0]) / den
        out[..., 1, 0] = (4.0 * x[..., 1] - 4.0j * x[..., 0]) / den
        out[..., 1, 1] = (4.0 - r2 + 4.0j * x[..., 2]) / den
        return out

    return GaugeTransform(source="minus", target="plus", G=G, name="s3 minus->plus")


def _build_s3():
    chart = _s3_chart()
    plus = _s3_frame("plus")
    minus = _s3_frame("minus")
    gauge = _s3_gauge()
    spectrum = SpectrumModel(name="s3", eigenvalue=lambda k: k + 0.5,
                             multiplicity=lambda k: k * (k + 1))
    return CatalogEntry(
        id="s3", chart=chart,
        framings={"plus": plus, "minus": minus},
        gauges={("minus", "plus"): gauge},
        spectrum=spectrum,
        constants={"volume": 2.0 * np.pi ** 2, "scalar_curvature": 6.0,
                   "caustic_bound": np.pi / 2.0},
        default_framing="plus",
        killing_framings=("plus", "minus"))


# ---------------------------------------------------------------------------
# unit 2-sphere x circle

_PHI_COEF = np.array([(-1.0) ** (k + 1) * 2.0 ** (2 * k - 1) / factorial(2 * k)
                      for k in range(2, 16)])  # phi = sum c_k rho^{k-2}


def _phi_funcs(rho):
    """phi, phi', phi'' of rho = u^2 + v^2, series below 0.25, direct above."""
    rho = np.asarray(rho, dtype=float)
    small = rho < 0.25
    out = np.zeros(rho.shape + (3,))

    rs = np.where(small, rho, 0.0)
    p = np.zeros_like(rs)
    dp = np.zeros_like(rs)
    ddp = np.zeros_like(rs)
    for i, c in enumerate(_PHI_COEF):
        k = i + 2
        p += c * rs ** (k - 2)
        if k >= 3:
            dp += (k - 2) * c * rs ** (k - 3)
        if k >= 4:
            ddp += (k - 2) * (k - 3) * c * rs ** (k - 4)

    rl = np.where(small, 0.25, rho)
    r = np.sqrt(rl)
    sin2 = np.sin(r) ** 2
    A = sin2 - rl
    S1 = np.sin(2.0 * r) / (2.0 * r)
    S2 = np.cos(2.0 * r) / (2.0 * rl) - np.sin(2.0 * r) / (4.0 * rl ** 1.5)
    pd = A / rl ** 2
    dpd = (S1 - 1.0) / rl ** 2 - 2.0 * A / rl ** 3
    ddpd = S2 / rl ** 2 - 4.0 * (S1 - 1.0) / rl ** 3 + 6.0 * A / rl ** 4

    out[..., 0] = np.where(small, p, pd)
    out[..., 1] = np.where(small, dp, dpd)
    out[..., 2] = np.where(small, ddp, ddpd)
    return out[..., 0], out[..., 1], out[..., 2]


def _s2xs1_chart():
    # q = (v, -u): angular direction in the (u, v) plane; dq/du=(0,-1), dq/dv=(1,0)
    def _q(x):
        q = np.zeros(x.shape[:-1] + (2,))
        q[..., 0] = x[..., 1]
        q[..., 1] = -x[..., 0]
        return q

    _DQ = np.array([[0.0, -1.0], [1.0, 0.0], [0.0, 0.0]])  # dq[c][a] = d_c q_a

    def g(x):
        x = np.asarray(x, float)
        rho = np.sum(x[..., :2] ** 2, axis=-1)
        p, _, _ = _phi_funcs(rho)
        q = _q(x)
        out = np.zeros(x.shape[:-1] + (3, 3))
        out[..., :2, :2] = np.eye(2) + p[..., None, None] * q[..., :, None] * q[..., None, :]
        out[..., 2, 2] = 1.0
        return out

    def dg(x):
        x = np.asarray(x, float)
        rho = np.sum(x[..., :2] ** 2, axis=-1)
        p, dp, _ = _phi_funcs(rho)
        q = _q(x)
        Q = q[..., :, None] * q[..., None, :]
        drho = np.zeros(x.shape[:-1] + (3,))
        drho[..., :2] = 2.0 * x[..., :2]
        dQ = np.einsum('ca,...b->...cab', _DQ, q) + np.einsum('...a,cb->...cab', q, _DQ)
        out = np.zeros(x.shape[:-1] + (3, 3, 3))
        out[..., :, :2, :2] = (dp[..., None, None, None] * drho[..., :, None, None]
                               * Q[..., None, :, :]
                               + p[..., None, None, None] * dQ)
        return out

    def d2g(x):
        x = np.asarray(x, float)
        rho = np.sum(x[..., :2] ** 2, axis=-1)
        p, dp, ddp = _phi_funcs(rho)
        q = _q(x)
        Q = q[..., :, None] * q[..., None, :]
        drho = np.zeros(x.shape[:-1] + (3,))
        drho[..., :2] = 2.0 * x[..., :2]
        ddrho = 2.0 * np.diag([1.0, 1.0, 0.0])
        dQ = np.einsum('ca,...b->...cab', _DQ, q) + np.einsum('...a,cb->...cab', q, _DQ)
        ddQ = np.einsum('ca,db->cdab', _DQ, _DQ) + np.einsum('da,cb->cdab', _DQ, _DQ)
        out = np.zeros(x.shape[:-1] + (3, 3, 3, 3))
        out[..., :, :, :2, :2] = (
            ddp[..., None, None, None, None]
            * drho[..., :, None, None, None] * drho[..., None, :, None, None]
            * Q[..., None, None, :, :]
            + dp[..., None, None, None, None]
            * (ddrho[:, :, None, None] * Q[..., None, None, :, :]
               + drho[..., :, None, None, None] * dQ[..., None, :, :, :]
               + drho[..., None, :, None, None] * dQ[..., :, None, :, :])
            + p[..., None, None, None, None] * ddQ)
        return out

    return ManifoldChart(
        name="s2xs1", g=g,
        domain=lambda x: np.linalg.norm(np.asarray(x, float)[..., :2], axis=-1) < np.pi - 0.1,
        dg=dg, d2g=d2g, d3g=None,
        injectivity_hint=np.pi / 2.0, loop_bound=2.0 * np.pi)


def _cholesky_frame(chart):
    def e(x):
        L = np.linalg.cholesky(chart.metric(x))
        return np.linalg.inv(L)

    return Frame(chart=chart.name, e=e, de=None, name="cholesky")


def _build_s2xs1():
    chart = _s2xs1_chart()
    return CatalogEntry(
        id="s2xs1", chart=chart,
        framings={"cholesky": _cholesky_frame(chart)},
        gauges={}, spectrum=None,
        constants={"volume": 8.0 * np.pi ** 2, "scalar_curvature": 2.0,
                   "caustic_bound": np.pi / 2.0},
        default_framing="cholesky")


# ---------------------------------------------------------------------------
# flat torus


def _build_t3():
    def g(x):
        x = np.asarray(x, float)
        return np.broadcast_to(I3, x.shape[:-1] + (3, 3))

    zero3 = lambda x, extra: np.zeros(np.asarray(x, float).shape[:-1] + (3,) * extra)
    chart = ManifoldChart(
        name="t3_flat", g=g,
        domain=lambda x: np.full(np.asarray(x, float).shape[:-1], True),
        dg=lambda x: zero3(x, 3), d2g=lambda x: zero3(x, 4), d3g=lambda x: zero3(x, 5),
        injectivity_hint=1.0, loop_bound=2.0 * np.pi)
    ident = Frame(chart="t3_flat",
                  e=lambda x: np.broadcast_to(I3, np.asarray(x, float).shape[:-1] + (3, 3)),
                  de=lambda x: zero3(x, 3),
                  name="identity")
    return CatalogEntry(
        id="t3_flat", chart=chart,
        framings={"identity": ident},
        gauges={}, spectrum=None,
        constants={"volume": (2.0 * np.pi) ** 3, "scalar_curvature": 0.0,
                   "caustic_bound": np.inf},
        default_framing="identity",
        killing_framings=("identity",))


# ---------------------------------------------------------------------------

_BUILDERS = {"s3": _build_s3, "s2xs1": _build_s2xs1, "t3_flat": _build_t3}


def catalog_ids():
    return sorted(_BUILDERS)


def builtin(entry_id, validate=False):
    """Construct a catalog entry; optionally re-validate its closed forms."""
    if entry_id not in _BUILDERS:
        raise UnknownId(f"no catalog entry '{entry_id}' (have: {', '.join(catalog_ids())})")
    entry = _BUILDERS[entry_id]()
    if validate:
        validate_entry(entry)
    return entry


def _sample_points(entry, n, rng):
    if entry.id == "s3":
        pts = rng.normal(size=(n, 3))
        pts *= (1.5 * rng.uniform(size=n) ** (1 / 3) / np.linalg.norm(pts, axis=-1))[:, None]
        return pts
    if entry.id == "s2xs1":
        ang = rng.uniform(0.0, 2.0 * np.pi, size=n)
        rad = 2.5 * np.sqrt(rng.uniform(size=n))
        return np.stack([rad * np.cos(ang), rad * np.sin(ang),
                         rng.uniform(-3.0, 3.0, size=n)], axis=-1)
    return rng.uniform(-np.pi, np.pi, size=(n, 3))


def validate_entry(entry, n_points=100, seed=20240817):
    """Check stored closed forms at random chart points; raise ToleranceFail.

    Covers: metric-derivative closed forms against finite differences,
    framing orthonormality/orientation and frame-derivative closed forms,
    SU(2) gauge fields against the framing pair they claim to relate, and
    basic spectrum sanity (positive increasing eigenvalues, even positive
    multiplicities).
    """
    rng = np.random.default_rng(seed)
    pts = _sample_points(entry, n_points, rng)
    chart = entry.chart
    bad = []

    if not np.all(chart.in_domain(pts)):
        bad.append("sample points left the declared domain")
    if chart.dg is not None:
        d = np.max(np.abs(chart.dg(pts) - fd_grad(chart.g, pts)))
        if d > 1e-7:
            bad.append(f"dg closed form vs FD: {d:.2e}")
    if chart.d2g is not None and chart.dg is not None:
        d = np.max(np.abs(chart.d2g(pts) - fd_grad(chart.dg, pts)))
        if d > 1e-7:
            bad.append(f"d2g closed form vs FD: {d:.2e}")
    if chart.d3g is not None and chart.d2g is not None:
        d = np.max(np.abs(chart.d3g(pts) - fd_grad(chart.d2g, pts)))
        if d > 1e-6:
            bad.append(f"d3g closed form vs FD: {d:.2e}")

    for name, fr in entry.framings.items():
        checks = frame_checks(chart, fr, pts, killing=name in entry.killing_framings)
        if checks["orthonormality"] > 1e-10:
            bad.append(f"framing '{name}' orthonormality: {checks['orthonormality']:.2e}")
        if checks["orientation_min_det"] <= 0.0:
            bad.append(f"framing '{name}' not positively oriented")
        if checks["de_consistency"] is not None and checks["de_consistency"] > 1e-6:
            bad.append(f"framing '{name}' de closed form vs FD: {checks['de_consistency']:.2e}")
        if checks.get("killing_residual", 0.0) > 1e-7:
            bad.append(f"framing '{name}' Killing residual: {checks['killing_residual']:.2e}")

    for (src, tgt), gauge in entry.gauges.items():
        O = su2_to_so3(gauge(pts))
        rel = np.einsum('...jk,...ka->...ja', O, entry.framings[src].frame(pts)) \
            - entry.framings[tgt].frame(pts)
        d = float(np.max(np.abs(rel)))
        if d > 1e-9:
            bad.append(f"gauge {src}->{tgt} framing relation: {d:.2e}")

    if entry.spectrum is not None:
        ks = np.arange(1, 51)
        lams = np.array([entry.spectrum.eigenvalue(int(k)) for k in ks])
        ms = np.array([entry.spectrum.multiplicity(int(k)) for k in ks])
        if np.any(np.diff(lams) <= 0) or np.any(lams <= 0):
            bad.append("spectrum eigenvalues not positive increasing")
        if np.any(ms <= 0) or np.any(np.mod(ms, 2) != 0):
            bad.append("spectrum multiplicities not positive even integers")

    if bad:
        raise ToleranceFail("catalog validation failed: " + "; ".join(bad))
    return True
