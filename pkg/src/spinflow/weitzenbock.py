"""Frame connection, torsion, contorsion and their matrix duals.

For a framing e_j with coframe e^j_c = g_cd e_j^d the flat frame connection

    Upsilon^a_bc = e_j^a d_b e^j_c

parallelizes the frame and the metric.  Its torsion T^a_bc (antisymmetric
in bc) and contorsion

    K^a_bc = (T^a_bc + T_b^a_c + T_c^a_b) / 2,     Upsilon = Gamma + K,

are dualized into 3x3 matrices with the metric volume tensor
E_abc = rho eps_abc (rho = sqrt(det g), eps_123 = +1):

    star_last_pair:  (*T)_ab = T_a^mn E_mnb / 2     (dualizes slots 2-3)
    star_outer_pair: (*K)_ab = K^m_a^n E_mnb / 2    (dualizes slots 1-3)

linked by *K = *T - tr(*T) g / 2 and *T = *K - tr(*K) g, traces taken
with g^ab.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import _require_nonsingular, christoffel
from .numdiff import fd_grad

EPS3 = np.zeros((3, 3, 3))
for _i, _j, _k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    EPS3[_i, _j, _k] = 1.0
    EPS3[_k, _j, _i] = -1.0


@dataclass
class TorsionPack:
    """Frame-connection data at a batch of points."""

    Upsilon: np.ndarray  # (..., 3, 3, 3)  Upsilon^a_bc
    T: np.ndarray        # (..., 3, 3, 3)  T^a_bc
    K: np.ndarray        # (..., 3, 3, 3)  K^a_bc
    starT: np.ndarray    # (..., 3, 3)
    starK: np.ndarray    # (..., 3, 3)
    E: np.ndarray        # (..., 3, 3, 3)  rho * eps


def star_last_pair(gmat, rho, T_upper):
    """Dual of slots 2-3 of T^a_bc: (*T)_ab = T_a^mn E_mnb / 2."""
    ginv = np.linalg.inv(gmat)
    T_low = np.einsum('...ad,...dbc->...abc', gmat, T_upper)
    T_a_up = np.einsum('...mp,...nq,...apq->...amn', ginv, ginv, T_low)
    return 0.5 * np.einsum('...amn,...mnb->...ab', T_a_up,
                           rho[..., None, None, None] * EPS3)


def star_outer_pair(gmat, rho, K_upper):
    """Dual of slots 1-3 of K^a_bc: (*K)_ab = K^m_a^n E_mnb / 2."""
    ginv = np.linalg.inv(gmat)
    K_mid = np.einsum('...nq,...maq->...man', ginv, K_upper)
    return 0.5 * np.einsum('...man,...mnb->...ab', K_mid,
                           rho[..., None, None, None] * EPS3)


def torsion_pack(chart, frame, x):
    """Assemble TorsionPack for a framing at points x."""
    x = np.asarray(x, dtype=float)
    gmat = chart.metric(x)
    det = _require_nonsingular(gmat)
    rho = np.sqrt(det)
    E = frame.frame(x)
    dE = frame.dframe(x)
    dg = chart.dmetric(x)

    # coframe f_jc = g_cd e_j^d and its derivative
    dF = (np.einsum('...bcd,...jd->...bjc', dg, E)
          + np.einsum('...cd,...bjd->...bjc', gmat, dE))
    Ups = np.einsum('...ja,...bjc->...abc', E, dF)
    T = Ups - np.einsum('...acb->...abc', Ups)

    T_low = np.einsum('...ad,...dbc->...abc', gmat, T)
    K_low = 0.5 * (T_low + np.einsum('...bac->...abc', T_low)
                   + np.einsum('...cab->...abc', T_low))
    ginv = np.linalg.inv(gmat)
    K = np.einsum('...ad,...dbc->...abc', ginv, K_low)

    starT = star_last_pair(gmat, rho, T)
    starK = star_outer_pair(gmat, rho, K)
    Evol = rho[..., None, None, None] * EPS3
    return TorsionPack(Upsilon=Ups, T=T, K=K, starT=starT, starK=starK, E=Evol)


def starK_covariant_derivative(chart, frame, x):
    """Levi-Civita covariant derivative of the *K field, [..., c, a, b]."""
    x = np.asarray(x, dtype=float)
    dstarK = fd_grad(lambda z: torsion_pack(chart, frame, z).starK, x)
    Gam = christoffel(chart, x)
    sK = torsion_pack(chart, frame, x).starK
    return (dstarK
            - np.einsum('...dca,...db->...cab', Gam, sK)
            - np.einsum('...dcb,...ad->...cab', Gam, sK))
