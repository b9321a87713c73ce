import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import simpson

from spinflow.errors import ConfigInvalid, GridTooCoarse, TruncationInsufficient
from spinflow.spectral import (
    Mollifier,
    SpectrumModel,
    build_mollifier,
    mollified_counting,
    weyl_coefficients,
    weyl_residual,
)

T0 = 2.0 * np.pi
VOL_S3 = 2.0 * np.pi ** 2

MOLL1 = build_mollifier(T0, shape="exp1")
MOLL2 = build_mollifier(T0, shape="exp2")

S3_SPECTRUM = SpectrumModel("s3", eigenvalue=lambda k: k + 0.5,
                            multiplicity=lambda k: k * (k + 1.0))
TOY = SpectrumModel("toy-integer", eigenvalue=lambda k: float(k),
                    multiplicity=lambda k: 1.0)


def test_hat_mu_plateau_and_support():
    for m in (MOLL1, MOLL2):
        t = np.linspace(-T0 / 3.0, T0 / 3.0, 41)
        assert_allclose(m.hat_mu(t), 1.0, atol=1e-15)
        out = np.array([2.0 * T0 / 3.0 + 0.01, -T0, 5.0 * T0])
        assert_allclose(m.hat_mu(out), 0.0, atol=1e-15)
        mid = m.hat_mu(np.linspace(T0 / 3.0, 2.0 * T0 / 3.0, 101))
        assert np.all(mid >= 0.0) and np.all(mid <= 1.0)
        assert np.all(np.diff(mid) <= 1e-12)
        # evenness
        s = np.array([0.3, 1.7, 3.9])
        assert_allclose(m.hat_mu(-s), m.hat_mu(s), atol=1e-15)


def test_mu_even_and_normalized():
    s = np.array([0.4, 1.3, 6.9, 14.2])
    assert_allclose(MOLL1.mu(-s), MOLL1.mu(s), atol=1e-15)
    # full-lattice sum telescopes to the transform at 0, i.e. the integral
    # of mu, because the transform support misses all other period points
    for m in (MOLL1, MOLL2):
        k = np.arange(-80, 81)
        for lam in (12.0, 25.3):
            assert_allclose(np.sum(m.mu(lam + k)), 1.0, atol=1e-12)
    # direct quadrature cross-check (window truncation dominates the error)
    lam = np.linspace(-60.0, 60.0, 12001)
    assert_allclose(simpson(MOLL1.mu(lam), x=lam), 1.0, atol=1e-6)
    assert_allclose(simpson(MOLL2.mu(lam), x=lam), 1.0, atol=1e-7)


def test_mu_peak_value():
    assert_allclose(MOLL1.mu(0.0), 1.0, atol=2e-3)
    assert MOLL1.mu(0.0) == np.max(MOLL1.mu(np.linspace(-3, 3, 301)))


def test_tail_bound_recorded():
    # measured decay envelopes past lam = 40/T0 for the two stock profiles
    assert MOLL1.tail_edge == pytest.approx(40.0 / T0)
    assert 3.9e-3 < MOLL1.tail_bound < 4.1e-3
    assert 1.9e-2 < MOLL2.tail_bound < 2.0e-2


@pytest.mark.xfail(strict=True,
                   reason="nominal tail bound 1e-10 at 40/T0 is not attained by "
                          "the stock profiles; measured 3.99e-3 (exp1) and "
                          "1.95e-2 (exp2)")
def test_tail_bound_nominal():
    assert MOLL1.tail_bound <= 1e-10


def test_mollifier_scaling_dilation():
    big = build_mollifier(2.0 * T0, shape="exp1", measure_tail=False)
    pts = np.array([0.3, 1.1, 2.7, 4.9])
    assert_allclose(big.mu(pts), 2.0 * MOLL1.mu(2.0 * pts), atol=1e-15)


def test_build_mollifier_rejects_bad_grid_and_shape():
    with pytest.raises(GridTooCoarse):
        build_mollifier(T0, grid_n=63)
    with pytest.raises(GridTooCoarse):
        build_mollifier(T0, grid_n=32)
    with pytest.raises(ValueError):
        build_mollifier(T0, shape="box")


def test_check_grid():
    assert MOLL1.check_grid([0.7, 7.5, 20.0]) < 1e-12
    coarse = build_mollifier(T0, shape="exp1", grid_n=64, measure_tail=False)
    with pytest.raises(GridTooCoarse):
        coarse.check_grid([0.7, 3.3, 7.5])


def test_toy_integer_spectrum_counts_one():
    # at integer query points every offset hits an exact zero of mu except
    # the central one, so the count is 1 to machine precision
    assert_allclose(mollified_counting(TOY, MOLL1, 12.0), 1.0, atol=1e-12)
    assert_allclose(mollified_counting(TOY, MOLL2, 12.0), 1.0, atol=1e-12)
    # generic query points see the decay envelope of mu
    assert_allclose(mollified_counting(TOY, MOLL1, 25.7), 1.0, atol=1e-5)
    assert_allclose(mollified_counting(TOY, MOLL1, 7.3), 1.0, atol=5e-3)


def test_branch_symmetry_and_sign_validation():
    cp = mollified_counting(S3_SPECTRUM, MOLL1, 17.0, sign=+1)
    cm = mollified_counting(S3_SPECTRUM, MOLL1, 17.0, sign=-1)
    assert_allclose(cp, cm, atol=1e-12)
    with pytest.raises(ConfigInvalid):
        mollified_counting(S3_SPECTRUM, MOLL1, 17.0, sign=0)
    lop = SpectrumModel("asym", eigenvalue=lambda k: float(k),
                        multiplicity=lambda k: 1.0, symmetric=False)
    with pytest.raises(ConfigInvalid):
        mollified_counting(lop, MOLL1, 5.0, sign=-1)


def test_weyl_coefficients_formulas():
    c2, c1, c0 = weyl_coefficients(6.0)
    assert c2 == 1.0 / (2.0 * np.pi ** 2)
    assert c1 == 0.0
    assert c0 == -6.0 / (48.0 * np.pi ** 2)
    assert weyl_coefficients(0.0)[2] == 0.0
    assert weyl_coefficients(2.0)[2] == -1.0 / (24.0 * np.pi ** 2)


def test_s3_residuals_small_and_decaying():
    grid = np.array([10.0, 20.0, 30.0, 40.0])
    for m in (MOLL1, MOLL2):
        rep = weyl_residual(S3_SPECTRUM, m, VOL_S3, 6.0, grid)
        assert np.all(np.abs(rep["residual"]) < 1e-3)
        assert rep["decay_exponent"] < -1.0
        assert np.all(np.diff(np.abs(rep["residual"])) < 0)


def test_mollifier_independence_of_residual():
    for lam in (20.0, 30.0, 40.0):
        d = abs(mollified_counting(S3_SPECTRUM, MOLL1, lam)
                - mollified_counting(S3_SPECTRUM, MOLL2, lam)) / VOL_S3
        assert d < 1e-6


def test_wrong_constant_term_detected():
    rep = weyl_residual(S3_SPECTRUM, MOLL1, VOL_S3, 0.0, 30.0)
    assert_allclose(rep["residual"], -1.0 / (8.0 * np.pi ** 2), atol=1e-6)


def test_shifted_spectrum_detected():
    shifted = SpectrumModel("shifted", eigenvalue=lambda k: k + 0.6,
                            multiplicity=lambda k: k * (k + 1.0))
    r10 = weyl_residual(shifted, MOLL1, VOL_S3, 6.0, 10.0)["residual"]
    r20 = weyl_residual(shifted, MOLL1, VOL_S3, 6.0, 20.0)["residual"]
    assert abs(r10) > 0.05
    assert 1.9 < r20 / r10 < 2.1  # linear growth of the spoiled term


def test_antiderivative_consistency():
    # integrate counting minus the growth density so the trapezoid
    # discretization error cancels and the drift isolates the genuine
    # integrated remainder (grid-converged at this resolution)
    grid = np.linspace(0.0, 30.0, 301)
    counting = mollified_counting(S3_SPECTRUM, MOLL1, grid) / VOL_S3
    c2, c1, c0 = weyl_coefficients(6.0)
    excess = counting - (c2 * grid ** 2 + c1 * grid + c0)
    h = grid[1] - grid[0]
    anti = np.concatenate([[0.0], np.cumsum(0.5 * (excess[1:] + excess[:-1]) * h)])
    drift = anti[grid >= 5.0]
    assert drift.max() - drift.min() < 1e-4


def test_truncation_guard():
    # levels at k + 0.4 keep clear of mu's exact zeros on the integer
    # lattice, so the exponential multiplicity growth is actually seen
    runaway = SpectrumModel("runaway", eigenvalue=lambda k: k + 0.4,
                            multiplicity=lambda k: np.exp(0.9 * k))
    with pytest.raises(TruncationInsufficient):
        mollified_counting(runaway, MOLL1, 30.0)


def test_counting_batched_matches_scalar():
    # per-query and joint truncation windows differ, so agreement is only
    # to the tail tolerance scale; 1e-12 would sit below the quadrature
    # noise times the k^2 multiplicities and never converge
    grid = np.array([8.0, 14.5, 21.0])
    batched = mollified_counting(S3_SPECTRUM, MOLL1, grid, tail_tol=1e-9)
    singles = np.array([mollified_counting(S3_SPECTRUM, MOLL1, q, tail_tol=1e-9)
                        for q in grid])
    assert_allclose(batched, singles, rtol=0, atol=3e-9)
