"""Tests for the small-time symbol module.

Closed-form targets (diagonal phase factors, coefficient matrices, gauge
derivative values) were measured once against the transport route and
finite differences of the closed-form catalog gauge, then frozen here.
"""
import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose

from spinflow.catalog import builtin
from spinflow.dirac import covector_norm, eigenpairs_projections
from spinflow.errors import DerivativeUnavailable, PhaseConventionBreak
from spinflow.framing import (PAULI, Frame, gauge_between, levi_civita_frame,
                              su2_gauge)
from spinflow.numdiff import fd_grad
from spinflow.symbols import (SmallTimeSymbol, covector_norm_derivatives,
                              gauge_derivatives, gsub_convert,
                              principal_via_q, projector_eta_derivative,
                              propagator_principal, q_phase,
                              smalltime_invariant, u0_subprincipal)
from spinflow.weitzenbock import torsion_pack

S3 = builtin("s3")
S2XS1 = builtin("s2xs1")
T3 = builtin("t3_flat")
FRP = S3.framings["plus"]
FRM = S3.framings["minus"]
FR21 = S2XS1.framings["cholesky"]
FR3 = T3.framings["identity"]

Y0 = np.zeros(3)
ETA = np.array([0.3, -0.4, 0.5])
ETA_BAR = np.array([0.0, 0.0, 1.0])
CONJ = np.array([[0.0, -1.0], [1.0, 0.0]])


def _projections(chart, frame, y, eta):
    out = eigenpairs_projections(chart, frame, y, eta)
    return out[3], out[4]


def test_time_zero_is_spectral_projection():
    for entry, frame in ((S3, FRP), (S2XS1, FR21), (T3, FR3)):
        y = np.array([0.2, -0.1, 0.3])
        Pp, Pm = _projections(entry.chart, frame, y, ETA)
        ap = propagator_principal(entry.chart, frame, y, ETA, 0.0, +1)
        am = propagator_principal(entry.chart, frame, y, ETA, 0.0, -1)
        assert_allclose(ap - Pp, 0.0 * ap, atol=1e-12)
        assert_allclose(am - Pm, 0.0 * am, atol=1e-12)
        assert_allclose(ap + am - np.eye(2), np.zeros((2, 2)), atol=1e-10)
        aq = principal_via_q(entry.chart, frame, y, ETA, 0.0, +1)
        assert_allclose(aq - Pp, 0.0 * aq, atol=1e-12)


def test_s3_killing_framings_give_diagonal_phases():
    # from the chart center along the third axis both branches pick up the
    # same framing-dependent phase: exp(-it/2) on "plus", exp(+it/2) on
    # "minus"
    t = 0.6
    for frame, phase in ((FRP, np.exp(-0.5j * t)), (FRM, np.exp(+0.5j * t))):
        ap = propagator_principal(S3.chart, frame, Y0, ETA_BAR, t, +1)
        am = propagator_principal(S3.chart, frame, Y0, ETA_BAR, t, -1)
        assert_allclose(ap, phase * np.diag([1.0, 0.0]), atol=1e-7)
        assert_allclose(am, phase * np.diag([0.0, 1.0]), atol=1e-7)


def test_propagator_principal_time_array_and_batch():
    ts = np.array([-0.2, 0.0, 0.15, 0.3])
    a = propagator_principal(S3.chart, FRP, Y0, ETA, ts, +1)
    assert a.shape == (4, 2, 2)
    single = propagator_principal(S3.chart, FRP, Y0, ETA, 0.15, +1)
    assert_allclose(a[2] - single, np.zeros((2, 2)), atol=1e-12)


def test_flat_chart_q_vanishes_and_route_is_constant():
    y = np.array([0.1, 0.2, -0.3])
    for sign in (+1, -1):
        q = q_phase(T3.chart, FR3, y, ETA, sign)
        assert abs(q) < 1e-10
    a = principal_via_q(T3.chart, FR3, y, ETA, 0.25, +1)
    Pp, _ = _projections(T3.chart, FR3, y, ETA)
    assert_allclose(a - Pp, 0.0 * a, atol=1e-12)


def test_s3_killing_q_phase_is_constant_half():
    # the phase speed is +1/2 on the "plus" framing and -1/2 on "minus",
    # for both branches, so the integrated factor is exp(∓it/2)
    for frame, val in ((FRP, 0.5), (FRM, -0.5)):
        for sign in (+1, -1):
            q = q_phase(S3.chart, frame, Y0, ETA, sign)
            assert abs(q - val) < 1e-9
    t = 0.4
    a = principal_via_q(S3.chart, FRP, Y0, ETA_BAR, t, +1)
    assert_allclose(a, np.exp(-0.5j * t) * np.diag([1.0, 0.0]), atol=1e-8)


def test_q_phase_is_real_valued():
    rng = np.random.default_rng(11)
    for entry, frame in ((S3, FRP), (S2XS1, FR21)):
        y = rng.uniform(-0.4, 0.4, (8, 3))
        eta = rng.uniform(-1.0, 1.0, (8, 3))
        q = q_phase(entry.chart, frame, y, eta, +1)
        assert np.max(np.abs(q.imag)) < 1e-9


def test_two_route_agreement_random_points():
    rng = np.random.default_rng(7)
    for entry, frame in ((S3, FRP), (S2XS1, FR21)):
        for k in range(6):
            y = rng.uniform(-0.4, 0.4, 3)
            eta = rng.uniform(-1.0, 1.0, 3)
            t = rng.uniform(-0.3, 0.3)
            sign = 1 if k % 2 == 0 else -1
            a_tr = propagator_principal(entry.chart, frame, y, eta, t, sign)
            a_q = principal_via_q(entry.chart, frame, y, eta, t, sign)
            assert np.max(np.abs(a_tr - a_q)) < 1e-9


def test_anchor_switch_warns_and_still_agrees():
    # frame rows rotate about the second axis with angle 2.4 x3, so along
    # the third-axis trajectory the dominant eigenvector component switches
    # at x3 = pi/4.8 ~ 0.65
    kappa = 2.4

    def rot_e(x):
        th = kappa * np.asarray(x, dtype=float)[..., 2]
        c, s = np.cos(th), np.sin(th)
        z, o = np.zeros_like(c), np.ones_like(c)
        return np.stack([np.stack([c, z, s], -1),
                         np.stack([z, o, z], -1),
                         np.stack([-s, z, c], -1)], -2)

    def rot_de(x):
        th = kappa * np.asarray(x, dtype=float)[..., 2]
        c, s = np.cos(th), np.sin(th)
        z = np.zeros_like(c)
        dR = kappa * np.stack([np.stack([-s, z, c], -1),
                               np.stack([z, z, z], -1),
                               np.stack([-c, z, -s], -1)], -2)
        out = np.zeros(np.shape(th) + (3, 3, 3))
        out[..., 2, :, :] = dR
        return out

    fr = Frame(chart="t3_flat", e=rot_e, de=rot_de, name="rotating")
    with pytest.warns(PhaseConventionBreak):
        a_q = principal_via_q(T3.chart, fr, Y0, ETA_BAR, 0.8, +1)
    a_tr = propagator_principal(T3.chart, fr, Y0, ETA_BAR, 0.8, +1)
    assert np.max(np.abs(a_q - a_tr)) < 1e-9
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        principal_via_q(T3.chart, fr, Y0, ETA_BAR, 0.3, +1)


def test_framing_change_left_right_multiplies_principal_symbol():
    G = S3.gauges[("minus", "plus")]
    rng = np.random.default_rng(3)
    from spinflow.flow import hamiltonian_flow
    for k in range(5):
        y = rng.uniform(-0.4, 0.4, 3)
        eta = rng.uniform(-1.0, 1.0, 3)
        t = rng.uniform(-0.5, 0.5)
        sign = 1 if k % 2 else -1
        a_minus = propagator_principal(S3.chart, FRM, y, eta, t, sign)
        a_plus = propagator_principal(S3.chart, FRP, y, eta, t, sign)
        xt = hamiltonian_flow(S3.chart, y, eta, np.array([t]), sign=sign).x[0]
        rel = np.conj(G(xt)).T @ a_plus @ G(y)
        assert np.max(np.abs(a_minus - rel)) < 1e-9


def test_covector_norm_derivatives_match_finite_differences():
    y = np.array([0.25, -0.15, 0.1])
    h, h_eta, h_etaeta = covector_norm_derivatives(S3.chart, y, ETA)
    assert_allclose(h, covector_norm(S3.chart, y, ETA), atol=1e-14)
    fd1 = fd_grad(lambda e: covector_norm(S3.chart, y, e), ETA)
    fd2 = fd_grad(lambda e: fd_grad(
        lambda f: covector_norm(S3.chart, y, f), e), ETA)
    assert_allclose(h_eta - fd1, np.zeros(3), atol=1e-9)
    assert_allclose(h_etaeta - fd2, np.zeros((3, 3)), atol=1e-7)
    # homogeneity: eta . dh/deta = h, eta . d2h/deta2 = 0
    assert_allclose(ETA @ h_eta, h, atol=1e-12)
    assert_allclose(h_etaeta @ ETA, np.zeros(3), atol=1e-12)


def test_projector_eta_derivative_closed_form_vs_fd():
    y = np.array([0.2, 0.1, -0.3])
    for sign in (+1, -1):
        dP = projector_eta_derivative(S3.chart, FRP, y, ETA, sign)
        fd = fd_grad(lambda e: eigenpairs_projections(
            S3.chart, FRP, y, e)[3 if sign > 0 else 4], ETA)
        assert np.max(np.abs(dP - fd)) < 1e-9
        # Euler relation for degree-0 homogeneity
        assert np.max(np.abs(np.einsum('a,apq->pq', ETA, dP))) < 1e-12
        # contraction with the lowered Pauli frame recovers +-Id/h
        h = covector_norm(S3.chart, y, ETA)
        g = S3.chart.metric(y)
        sig = np.einsum('jpq,ja->apq', PAULI, FRP.frame(y))
        sig_low = np.einsum('ab,bpq->apq', g, sig)
        tracee = np.einsum('apq,aqr->pr', sig_low, dP)
        assert_allclose(tracee, sign * np.eye(2) / h, atol=1e-12)


def test_invariant_time_zero_and_branch_sum():
    for entry, frame in ((S3, FRP), (S2XS1, FR21)):
        Pp, Pm = _projections(entry.chart, frame, Y0, ETA)
        d0p, _ = smalltime_invariant(entry.chart, frame, Y0, ETA, +1)
        d0m, _ = smalltime_invariant(entry.chart, frame, Y0, ETA, -1)
        assert_allclose(d0p.coeffs[0] - Pp, 0.0 * Pp, atol=1e-12)
        assert_allclose(d0m.coeffs[0] - Pm, 0.0 * Pm, atol=1e-12)
        assert_allclose(d0p.coeffs[0] + d0m.coeffs[0] - np.eye(2),
                        np.zeros((2, 2)), atol=1e-10)
        assert d0p.degree == 0 and d0p.remainder_order == 3


def test_s3_killing_invariant_coefficients_closed_forms():
    h = covector_norm(S3.chart, Y0, ETA)
    W = np.einsum('a,apq->pq', ETA, PAULI)
    for sign in (+1, -1):
        P = 0.5 * (np.eye(2) + sign * W / h)
        deg0, degm1 = smalltime_invariant(S3.chart, FRP, Y0, ETA, sign)
        assert_allclose(deg0.coeffs[0] - P, 0.0 * P, atol=1e-12)
        assert_allclose(deg0.coeffs[1] - (-0.5j * P), 0.0 * P, atol=1e-12)
        assert_allclose(deg0.coeffs[2] - (-P / 8.0), 0.0 * P, atol=1e-12)
        assert_allclose(degm1.coeffs[0] - sign * np.eye(2) / (2.0 * h),
                        np.zeros((2, 2)), atol=1e-12)
        if sign > 0:
            target = -0.25j * np.eye(2) / h
        else:
            target = 0.25j * (np.eye(2) - 2.0 * W / h) / h
        assert_allclose(degm1.coeffs[1] - target, 0.0 * target, atol=1e-12)
    # at the distinguished covector the degree -1 part matches
    # (t0 +- i t1/ (4 h)) patterns entrywise
    _, degm1 = smalltime_invariant(S3.chart, FRP, Y0, ETA_BAR, -1)
    assert_allclose(degm1.coeffs[1], 0.25j * np.diag([-1.0, 3.0]), atol=1e-12)


def test_ricci_flat_constant_frame_has_trivial_expansions():
    y = np.array([0.2, -0.1, 0.4])
    for sign in (+1, -1):
        deg0, degm1 = smalltime_invariant(T3.chart, FR3, y, ETA, sign)
        assert_allclose(deg0.coeffs[1], np.zeros((2, 2)), atol=1e-14)
        assert_allclose(deg0.coeffs[2], np.zeros((2, 2)), atol=1e-14)
        assert_allclose(degm1.coeffs[0], np.zeros((2, 2)), atol=1e-14)
        assert_allclose(degm1.coeffs[1], np.zeros((2, 2)), atol=1e-14)


def test_s2xs1_radial_frame_matches_anisotropic_closed_form():
    lc = levi_civita_frame(S2XS1.chart, Y0, seed_frame=FR21)
    h = float(np.linalg.norm(ETA))
    W = np.einsum('a,apq->pq', ETA, PAULI)
    for sign in (+1, -1):
        deg0, degm1 = smalltime_invariant(S2XS1.chart, lc, Y0, ETA, sign)
        # radially parallel framing: degree 0 stays the bare projection
        assert np.max(np.abs(deg0.coeffs[1])) < 1e-12
        assert np.max(np.abs(deg0.coeffs[2])) < 1e-12
        assert np.max(np.abs(degm1.coeffs[0])) < 1e-12
        target = -sign * 1j / (24.0 * h * h) * (
            h * np.eye(2) + (-3 + sign) * W + 3.0 * ETA[2] * PAULI[2])
        assert_allclose(degm1.coeffs[1] - target, 0.0 * target, atol=1e-12)
        # equivalent display through the transverse Ricci contraction
        P = 0.5 * (np.eye(2) + sign * W / h)
        target2 = -sign * 1j * (P / (12.0 * h)
                                - (ETA[0] * PAULI[0] + ETA[1] * PAULI[1])
                                / (8.0 * h * h))
        assert_allclose(degm1.coeffs[1] - target2, 0.0 * target2, atol=1e-12)


def test_deg0_linear_term_tracks_contorsion_contraction():
    # vanishes for a radially parallel framing, equals -+(i/2) P on the
    # self-dual/anti-self-dual framings where *K = -+ g
    lc = levi_civita_frame(S3.chart, Y0, seed_frame=FRP)
    deg0, _ = smalltime_invariant(S3.chart, lc, Y0, ETA, +1)
    assert np.max(np.abs(deg0.coeffs[1])) < 1e-12
    for frame, fsign in ((FRP, -1.0), (FRM, +1.0)):
        for sign in (+1, -1):
            Pp, Pm = _projections(S3.chart, frame, Y0, ETA)
            P = Pp if sign > 0 else Pm
            deg0, _ = smalltime_invariant(S3.chart, frame, Y0, ETA, sign)
            assert np.max(np.abs(deg0.coeffs[1])) > 0.3
            assert_allclose(deg0.coeffs[1] - fsign * 0.5j * P, 0.0 * P,
                            atol=1e-12)


def test_invariant_truncation_against_transport():
    deg0, _ = smalltime_invariant(S3.chart, FRP, Y0, ETA, +1)
    errs = []
    for t in (0.1, 0.05):
        a_tr = propagator_principal(S3.chart, FRP, Y0, ETA, t, +1)
        errs.append(np.max(np.abs(deg0(t) - a_tr)))
    assert errs[0] < 1e-3
    assert errs[0] / errs[1] > 6.0  # cubic remainder: factor ~8
    # a radially parallel framing transports the projection exactly
    lc = levi_civita_frame(S2XS1.chart, Y0, seed_frame=FR21)
    deg0_lc, _ = smalltime_invariant(S2XS1.chart, lc, Y0, ETA, +1)
    a_tr = propagator_principal(S2XS1.chart, lc, Y0, ETA, 0.1, +1)
    assert np.max(np.abs(deg0_lc(0.1) - a_tr)) < 1e-9


def test_conjugation_pairing_of_coefficients():
    # spin conjugation with (t, eta) -> (-t, -eta) maps each branch
    # expansion to itself
    lc = levi_civita_frame(S2XS1.chart, Y0, seed_frame=FR21)
    t = 0.17
    for chart, frame in ((S3.chart, FRP), (S2XS1.chart, lc)):
        for sign in (+1, -1):
            fwd = smalltime_invariant(chart, frame, Y0, ETA, sign)
            bwd = smalltime_invariant(chart, frame, Y0, -ETA, sign)
            for A, B in zip(fwd, bwd):
                lhs = CONJ @ np.conj(B(-t)) @ np.linalg.inv(CONJ)
                assert np.max(np.abs(lhs - A(t))) < 1e-12


def test_smalltime_symbol_polynomial_evaluation():
    c = [np.eye(2, dtype=complex), 1j * np.eye(2), -np.eye(2)]
    sym = SmallTimeSymbol(0, c, 3, Y0, ETA, +1)
    ts = np.array([0.0, 0.5, -0.5])
    out = sym(ts)
    assert out.shape == (3, 2, 2)
    assert_allclose(out[1], (1.0 + 0.5j - 0.25) * np.eye(2), atol=1e-15)
    assert_allclose(out[0], np.eye(2), atol=1e-15)


def test_u0_subprincipal_values():
    h = covector_norm(S3.chart, Y0, ETA)
    for frame, fsign in ((FRP, +1.0), (FRM, -1.0)):
        for sign in (+1, -1):
            u0 = u0_subprincipal(S3.chart, frame, Y0, ETA, sign)
            assert_allclose(u0 - sign * fsign * np.eye(2) / (2.0 * h),
                            np.zeros((2, 2)), atol=1e-12)
    u0 = u0_subprincipal(T3.chart, FR3, np.array([0.2, -0.1, 0.4]), ETA, +1)
    assert_allclose(u0, np.zeros((2, 2)), atol=1e-14)
    lc = levi_civita_frame(S3.chart, Y0, seed_frame=FRP)
    u0 = u0_subprincipal(S3.chart, lc, Y0, ETA, +1)
    assert np.max(np.abs(u0)) < 1e-12


def test_gauge_derivatives_same_pair_vanish():
    dG, ddG = gauge_derivatives(S3.chart, FRP, FRP, Y0)
    assert_allclose(dG, np.zeros((3, 2, 2)), atol=1e-14)
    assert_allclose(ddG, np.zeros((3, 3, 2, 2)), atol=1e-14)


def test_gauge_derivatives_radial_pair_closed_forms():
    lcm = levi_civita_frame(S3.chart, Y0, seed_frame=FRM)
    dG, _ = gauge_derivatives(S3.chart, FRM, lcm, Y0)
    assert_allclose(dG - (-0.5j) * PAULI, 0.0 * dG, atol=1e-10)
    lcp = levi_civita_frame(S3.chart, Y0, seed_frame=FRP)
    dG, ddG = gauge_derivatives(S3.chart, FRP, lcp, Y0)
    assert_allclose(dG - 0.5j * PAULI, 0.0 * dG, atol=1e-10)
    target = -0.25 * np.eye(3)[:, :, None, None] * np.eye(2)
    assert_allclose(ddG - target, 0.0 * ddG, atol=1e-10)
    # symmetric in the two derivative slots
    assert_allclose(ddG - np.einsum('abpq->bapq', ddG), 0.0 * ddG, atol=1e-12)


def test_gauge_derivatives_match_catalog_gauge_differences():
    G = S3.gauges[("minus", "plus")]
    dG, ddG = gauge_derivatives(S3.chart, FRM, FRP, Y0)
    assert_allclose(dG - (-1j) * PAULI, 0.0 * dG, atol=1e-12)
    d = 1e-4
    eye = np.eye(3)
    fd1 = np.stack([(8.0 * (G(d * eye[a]) - G(-d * eye[a]))
                     - (G(2 * d * eye[a]) - G(-2 * d * eye[a]))) / (12.0 * d)
                    for a in range(3)])
    assert np.max(np.abs(fd1 - dG)) < 1e-7
    fd2 = np.zeros((3, 3, 2, 2), dtype=complex)
    for a in range(3):
        for b in range(3):
            ea, eb = d * eye[a], d * eye[b]
            fd2[a, b] = (G(ea + eb) - G(ea - eb) - G(-ea + eb)
                         + G(-ea - eb)) / (4.0 * d * d)
    assert np.max(np.abs(fd2 - ddG)) < 1e-6


def test_gauge_derivatives_match_constructed_lift():
    lcp = levi_civita_frame(S3.chart, Y0, seed_frame=FRP)
    dG, ddG = gauge_derivatives(S3.chart, FRP, lcp, Y0)
    O = gauge_between(S3.chart, lcp, FRP)

    def Ghat(x):
        # su2_gauge lifts the row-rotation convention, which is the adjoint
        # of the normalization used by gauge_derivatives
        return np.conj(su2_gauge(O(x))).T

    d = 2e-4
    eye = np.eye(3)
    fd1 = np.stack([(8.0 * (Ghat(d * eye[a]) - Ghat(-d * eye[a]))
                     - (Ghat(2 * d * eye[a]) - Ghat(-2 * d * eye[a])))
                    / (12.0 * d) for a in range(3)])
    assert np.max(np.abs(fd1 - dG)) < 1e-8
    fd2 = np.zeros((3, 3, 2, 2), dtype=complex)
    for a in range(3):
        for b in range(3):
            ea, eb = d * eye[a], d * eye[b]
            fd2[a, b] = (Ghat(ea + eb) - Ghat(ea - eb) - Ghat(-ea + eb)
                         + Ghat(-ea - eb)) / (4.0 * d * d)
    assert np.max(np.abs(fd2 - ddG)) < 1e-6


def test_gauge_derivatives_require_coinciding_frames():
    with pytest.raises(DerivativeUnavailable):
        gauge_derivatives(S3.chart, FRP, FRM, np.array([0.3, 0.0, 0.0]))


def test_gsub_convert_identity_passthrough():
    p_sub = np.array([[0.3, 0.1 - 0.2j], [0.1 + 0.2j, -0.5]])

    def const(x, eta):
        shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(eta)[:-1])
        return np.broadcast_to(np.eye(2, dtype=complex), shape + (2, 2))

    out = gsub_convert(S3.chart, Y0, ETA, const, p_sub, epsilon=1.0)
    assert_allclose(out - p_sub, 0.0 * out, atol=1e-13)
    with pytest.raises(DerivativeUnavailable):
        gsub_convert(S3.chart, Y0, ETA, np.eye(2), p_sub)


def test_gsub_convert_vanishes_at_radial_anchor():
    # chart center: metric derivatives vanish and the radial framing is
    # torsion-free there, so both subprincipal notions are zero
    lcp = levi_civita_frame(S3.chart, Y0, seed_frame=FRP)
    for sign in (+1, -1):
        def pfield(x, eta, s=sign):
            return eigenpairs_projections(S3.chart, lcp, x, eta)[3 if s > 0 else 4]
        p_sub = u0_subprincipal(S3.chart, lcp, Y0, ETA, sign)
        out = gsub_convert(S3.chart, Y0, ETA, pfield, p_sub, epsilon=0.0)
        assert np.max(np.abs(out)) < 1e-9


def test_gsub_convert_epsilon_term_is_the_metric_hessian_piece():
    lcp = levi_civita_frame(S3.chart, Y0, seed_frame=FRP)

    def pfield(x, eta):
        return eigenpairs_projections(S3.chart, lcp, x, eta)[3]

    p_sub = np.array([[0.3, 0.1 - 0.2j], [0.1 + 0.2j, -0.5]])
    o0 = gsub_convert(S3.chart, Y0, ETA, pfield, p_sub, epsilon=0.0)
    o1 = gsub_convert(S3.chart, Y0, ETA, pfield, p_sub, epsilon=1.0)

    def hPe(E):
        h = covector_norm(S3.chart, np.broadcast_to(Y0, E.shape), E)
        Pe = fd_grad(lambda F: pfield(np.broadcast_to(Y0, F.shape), F), E)
        return h[..., None, None, None] * Pe

    dhPe = fd_grad(hPe, ETA)
    indep = -0.5 * np.einsum('bc,cbpq->pq', S3.chart.metric(Y0), dhPe)
    assert np.max(np.abs((o1 - o0) - indep)) < 1e-9
