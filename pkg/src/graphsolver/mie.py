"""Analytic Mie-series bistatic RCS for a perfectly conducting sphere.

Serves as the independent oracle for the MoM solver.  Conventions match the
solver's sphere setup: plane wave travelling along -z, electric field along
x, observation on the phi = 0 plane (the E-plane).  The returned cut is
indexed by the observation polar angle theta_obs in [0, 360), so values can
be compared sample-for-sample with the solver's phi = 0 cut.
"""

from __future__ import annotations

import numpy as np
from scipy.special import spherical_jn, spherical_yn

from .em import C0, RcsCut


def mie_truncation(ka: float) -> int:
    return int(np.ceil(ka + 4.0 * ka ** (1.0 / 3.0) + 2.0))


def _pec_coefficients(x: float, nmax: int):
    n = np.arange(1, nmax + 1)
    jn = spherical_jn(n, x)
    jnp = spherical_jn(n, x, derivative=True)
    yn = spherical_yn(n, x)
    ynp = spherical_yn(n, x, derivative=True)
    # Riccati-Bessel psi = x j, xi = x h1; primes via product rule
    psi = x * jn
    psip = jn + x * jnp
    xi = x * (jn + 1j * yn)
    xip = (jn + 1j * yn) + x * (jnp + 1j * ynp)
    a = psip / xip
    b = psi / xi
    return a, b


def _angular_functions(mu: np.ndarray, nmax: int):
    """pi_n, tau_n for n = 1..nmax via the standard recurrences."""
    pi = np.zeros((nmax + 1, len(mu)))
    tau = np.zeros((nmax + 1, len(mu)))
    pi[1] = 1.0
    tau[1] = mu
    for n in range(2, nmax + 1):
        pi[n] = ((2 * n - 1) / (n - 1)) * mu * pi[n - 1] - (n / (n - 1)) * pi[n - 2]
        tau[n] = n * mu * pi[n] - (n + 1) * pi[n - 1]
    return pi[1:], tau[1:]


def e_plane_amplitude(scatter_angles_rad: np.ndarray, ka: float, nmax: int):
    """Complex E-plane scattering amplitude S2(gamma)."""
    a, b = _pec_coefficients(ka, nmax)
    mu = np.cos(scatter_angles_rad)
    pi_n, tau_n = _angular_functions(mu, nmax)
    n = np.arange(1, nmax + 1)
    coef = (2 * n + 1) / (n * (n + 1))
    return np.einsum("n,n,nq->q", coef, a, tau_n) + np.einsum(
        "n,n,nq->q", coef, b, pi_n)


def mie_sphere_rcs(radius: float, frequency: float, plane: str = "phi0",
                   step: float = 1.0, extra_terms: int = 0) -> RcsCut:
    """Bistatic RCS (m^2) of a PEC sphere on the phi = 0 observation cut.

    Truncation follows the usual size-parameter heuristic; extra_terms adds
    terms on top for convergence checks.
    """
    if radius <= 0.0 or frequency <= 0.0:
        raise ValueError("radius and frequency must be positive")
    if plane != "phi0":
        raise ValueError(f"unsupported cut plane {plane!r}")
    k = 2.0 * np.pi * frequency / C0
    ka = k * radius
    nmax = mie_truncation(ka) + extra_terms

    angles = np.arange(0.0, 360.0, step)
    theta_obs = np.radians(angles)
    # incidence along -z: scattering angle gamma between r_hat and -z_hat
    gamma = np.arccos(np.clip(-np.cos(theta_obs), -1.0, 1.0))
    s2 = e_plane_amplitude(gamma, ka, nmax)
    sigma = 4.0 * np.pi * np.abs(s2) ** 2 / k ** 2
    return RcsCut(angles=angles, sigma=sigma, plane="phi0")


def mie_backscatter(radius: float, frequency: float) -> float:
    k = 2.0 * np.pi * frequency / C0
    ka = k * radius
    a, b = _pec_coefficients(ka, mie_truncation(ka))
    n = np.arange(1, len(a) + 1)
    s = np.sum((-1.0) ** n * (2 * n + 1) * (a - b))
    lam = C0 / frequency
    return float(lam ** 2 / (4.0 * np.pi) * np.abs(s) ** 2)
