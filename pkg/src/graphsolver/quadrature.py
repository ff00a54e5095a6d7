"""Triangle quadrature and analytic static potential integrals.

The 7-point symmetric Gauss rule (degree 5) handles regular interactions;
self and touching pairs use singularity extraction, where the static 1/R
part is integrated in closed form over the (planar) source triangle.
"""

from __future__ import annotations

import numpy as np

# 7-point symmetric rule, exact for degree-5 polynomials.  Barycentric
# coordinates and weights normalized to sum to 1.
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
GAUSS7_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])
GAUSS7_W = np.array([
    0.225,
    0.132394152788506, 0.132394152788506, 0.132394152788506,
    0.125939180544827, 0.125939180544827, 0.125939180544827,
])

GAUSS3_BARY = np.array([
    [2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3],
])
GAUSS3_W = np.array([1 / 3, 1 / 3, 1 / 3])


def gauss_points(corners: np.ndarray, bary=GAUSS7_BARY):
    """Map a barycentric rule onto triangles.

    corners: (...,3,3) -> points (...,npts,3)
    """
    return np.einsum("qb,...bx->...qx", bary, corners)


def subdivide4(corners: np.ndarray) -> np.ndarray:
    """Split triangles at edge midpoints: (...,3,3) -> (...,4,3,3)."""
    a = corners[..., 0, :]
    b = corners[..., 1, :]
    c = corners[..., 2, :]
    ab = 0.5 * (a + b)
    bc = 0.5 * (b + c)
    ca = 0.5 * (c + a)
    subs = np.stack([
        np.stack([a, ab, ca], axis=-2),
        np.stack([ab, b, bc], axis=-2),
        np.stack([ca, bc, c], axis=-2),
        np.stack([ab, bc, ca], axis=-2),
    ], axis=-3)
    return subs


def triangle_area(corners: np.ndarray) -> np.ndarray:
    return 0.5 * np.linalg.norm(
        np.cross(corners[..., 1, :] - corners[..., 0, :],
                 corners[..., 2, :] - corners[..., 0, :]), axis=-1)


def static_potentials(corners: np.ndarray, obs: np.ndarray):
    """Closed-form I0 = int 1/R dS' and I1 = int (r'-rho)/R dS' over a triangle.

    corners: (3,3); obs: (M,3) observation points.  rho is the projection of
    the observation point onto the triangle plane.  Returns (I0 (M,), I1 (M,3)).
    Standard edge-sum formulas for the potential of a flat polygon.
    """
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    a = corners[1] - corners[0]
    b = corners[2] - corners[0]
    nrm = np.cross(a, b)
    nhat = nrm / np.linalg.norm(nrm)

    d = (obs - corners[0]) @ nhat                     # signed height
    rho = obs - d[:, None] * nhat                     # in-plane projection

    I0 = np.zeros(len(obs))
    I1 = np.zeros((len(obs), 3))
    for i in range(3):
        p0 = corners[i]
        p1 = corners[(i + 1) % 3]
        s_hat = (p1 - p0) / np.linalg.norm(p1 - p0)
        m_hat = np.cross(s_hat, nhat)                 # outward in-plane normal

        p = (p0 - rho) @ m_hat                        # signed distance to edge line
        s_lo = (p0 - rho) @ s_hat
        s_hi = (p1 - rho) @ s_hat
        R_lo = np.linalg.norm(obs - p0, axis=1)
        R_hi = np.linalg.norm(obs - p1, axis=1)
        R0sq = p * p + d * d

        # ln((R_hi + s_hi)/(R_lo + s_lo)), stable when the edge line passes
        # (nearly) through the observation point
        num = R_hi + s_hi
        den = R_lo + s_lo
        tiny = R0sq < 1e-28 * np.maximum(R_lo, R_hi) ** 2
        safe_num = np.where(tiny | (num <= 0), 1.0, num)
        safe_den = np.where(tiny | (den <= 0), 1.0, den)
        f = np.log(safe_num / safe_den)

        beta = (np.arctan2(p * s_hi, R0sq + np.abs(d) * R_hi)
                - np.arctan2(p * s_lo, R0sq + np.abs(d) * R_lo))

        I0 += p * f - np.abs(d) * beta
        I1 += 0.5 * (R0sq * f + s_hi * R_hi - s_lo * R_lo)[:, None] * m_hat

    return I0, I1, rho
