"""Combined-field MoM solver: excitation, Galerkin assembly, solve, RCS.

Conventions (used everywhere): time factor e^{+j w t}, incident phase
e^{-j k.r}, free-space Green's function G = e^{-jkR} / (4 pi R).

The tested system is

    Z = alpha * Z0 * (0.5 * Gram + K) + (1 - alpha) * Z_E
    b = alpha * Z0 * b_M + (1 - alpha) * b_E

with Z_E the Galerkin electric-field operator, K the principal-value
magnetic-field operator tested through the observation normal, Gram the
RWG mass matrix, b_E = <f_m, E_inc> and b_M = <f_m, n x H_inc>.
"""

from __future__ import annotations

import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .quadrature import (GAUSS7_BARY, GAUSS7_W, gauss_points, static_potentials,
                         subdivide4, triangle_area)
from .rwg import RwgSet

C0 = 299_792_458.0
MU0 = 4.0e-7 * np.pi
EPS0 = 1.0 / (MU0 * C0 * C0)
Z0 = np.sqrt(MU0 / EPS0)

_FOUR_PI = 4.0 * np.pi


class EmError(ValueError):
    pass


@dataclass(frozen=True)
class PlaneWave:
    """Incident plane wave.  theta/phi give the propagation direction."""

    frequency: float
    theta: float
    phi: float
    polarization: str = "theta_pol"   # or "phi_pol"
    amplitude: float = 1.0

    def __post_init__(self):
        if self.frequency <= 0.0:
            raise EmError("frequency must be positive")
        if self.amplitude <= 0.0:
            raise EmError("amplitude must be positive")
        if not (0.0 <= self.theta <= 180.0):
            raise EmError("theta must lie in [0, 180]")
        if not (0.0 <= self.phi < 360.0):
            raise EmError("phi must lie in [0, 360)")
        if self.polarization not in ("theta_pol", "phi_pol"):
            raise EmError(f"unknown polarization {self.polarization!r}")

    @property
    def wavelength(self) -> float:
        return C0 / self.frequency

    @property
    def wavenumber(self) -> float:
        return 2.0 * np.pi * self.frequency / C0

    def direction(self) -> np.ndarray:
        """Unit propagation direction k_hat."""
        th, ph = np.radians(self.theta), np.radians(self.phi)
        return np.array([np.sin(th) * np.cos(ph),
                         np.sin(th) * np.sin(ph),
                         np.cos(th)])

    def polarization_vector(self) -> np.ndarray:
        th, ph = np.radians(self.theta), np.radians(self.phi)
        if self.polarization == "theta_pol":
            return np.array([np.cos(th) * np.cos(ph),
                             np.cos(th) * np.sin(ph),
                             -np.sin(th)])
        return np.array([-np.sin(ph), np.cos(ph), 0.0])


def plane_wave_fields(pw: PlaneWave, r, phase_sign: int = -1):
    """Incident (E, H) at points r; r is (3,) or (M,3).

    phase_sign = -1 is the package convention e^{-j k.r}; +1 selects the
    conjugate convention (used by a consistency check).
    """
    r = np.asarray(r, dtype=np.float64)
    single = r.ndim == 1
    r2 = np.atleast_2d(r)
    khat = pw.direction()
    e_pol = pw.polarization_vector()
    phase = np.exp(1j * phase_sign * pw.wavenumber * (r2 @ khat))
    E = pw.amplitude * phase[:, None] * e_pol
    H = np.cross(khat, E) / Z0
    if single:
        return E[0], H[0]
    return E, H


@dataclass(frozen=True)
class ImpedanceSystem:
    Z: np.ndarray
    b: np.ndarray
    alpha: float
    frequency: float


@dataclass(frozen=True)
class RcsCut:
    angles: np.ndarray        # degrees
    sigma: np.ndarray         # m^2
    plane: str = "phi0"

    def sigma_dbsm(self) -> np.ndarray:
        return 10.0 * np.log10(np.maximum(self.sigma, 1e-300))


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

def _local_bases(rwg: RwgSet):
    """Per-triangle basis table for a closed mesh (exactly 3 per triangle).

    Returns (gid (F,3), coef (F,3) = sign*l/2A, free (F,3,3) free-vertex
    coords, div (F,3) = sign*l/A).
    """
    F = len(rwg.tri_areas)
    gid = np.full((F, 3), -1, dtype=np.int64)
    coef = np.zeros((F, 3))
    div = np.zeros((F, 3))
    free = np.zeros((F, 3, 3))
    fill = np.zeros(F, dtype=np.int64)
    verts = rwg.mesh.vertices
    for n in range(rwg.num_bases):
        for t, sign, area, fv in (
            (rwg.tri_plus[n], 1.0, rwg.area_plus[n], rwg.free_plus[n]),
            (rwg.tri_minus[n], -1.0, rwg.area_minus[n], rwg.free_minus[n]),
        ):
            k = fill[t]
            if k >= 3:
                raise EmError("triangle hosts more than 3 bases; mesh not closed?")
            gid[t, k] = n
            coef[t, k] = sign * rwg.lengths[n] / (2.0 * area)
            div[t, k] = sign * rwg.lengths[n] / area
            free[t, k] = verts[fv]
            fill[t] += 1
    if np.any(fill != 3):
        raise EmError("expected exactly 3 bases per triangle (closed mesh)")
    return gid, coef, free, div


def _vertex_adjacency(mesh):
    """For each triangle, the sorted array of triangles sharing >=1 vertex."""
    F = mesh.num_triangles
    v2t: dict[int, list[int]] = {}
    for t, tri in enumerate(mesh.triangles):
        for v in tri:
            v2t.setdefault(int(v), []).append(t)
    adj = []
    for t, tri in enumerate(mesh.triangles):
        s = set()
        for v in tri:
            s.update(v2t[int(v)])
        adj.append(np.array(sorted(s), dtype=np.int64))
    return adj


def _adaptive_source_points(corners, obs_pts, ratio=0.75, max_depth=5):
    """Quadrature points over a source triangle, refined toward obs_pts.

    Subdivides while the sub-triangle diameter exceeds ratio * distance to
    the nearest observation point.  Returns (points (Q,3), weights (Q,)).
    """
    pts_out = []
    w_out = []
    stack = [(np.asarray(corners, dtype=np.float64), 0)]
    while stack:
        tri, depth = stack.pop()
        c = tri.mean(axis=0)
        diam = max(np.linalg.norm(tri[0] - tri[1]),
                   np.linalg.norm(tri[1] - tri[2]),
                   np.linalg.norm(tri[2] - tri[0]))
        dist = np.min(np.linalg.norm(obs_pts - c, axis=1))
        if depth < max_depth and diam > ratio * max(dist - 0.5 * diam, 1e-300):
            for sub in subdivide4(tri[None])[0]:
                stack.append((sub, depth + 1))
        else:
            pts_out.append(gauss_points(tri[None])[0])
            w_out.append(triangle_area(tri[None])[0] * GAUSS7_W)
    return np.concatenate(pts_out), np.concatenate(w_out)


def assemble_system(rwg: RwgSet, pw: PlaneWave, alpha: float,
                    include_k: bool = True, phase_sign: int = -1,
                    workers: int = 1) -> ImpedanceSystem:
    """Galerkin CFIE assembly.  alpha = 0 is pure EFIE, 1 pure MFIE."""
    if not (0.0 <= alpha <= 1.0):
        raise EmError("alpha must lie in [0, 1]")
    if phase_sign not in (-1, 1):
        raise EmError("phase_sign must be -1 or +1")
    # operators are assembled in the exp(+j w t) convention, G = exp(-jkR);
    # phase_sign = +1 flips to the conjugate convention at the end
    k = pw.wavenumber
    jk = 1j * k
    lam = pw.wavelength

    mesh = rwg.mesh
    F = mesh.num_triangles
    N = rwg.num_bases
    areas = rwg.tri_areas
    if areas.min() <= 1e-12:
        raise EmError("degenerate triangle encountered during assembly")
    mean_edge = float(rwg.lengths.mean())
    if mean_edge > 0.2 * lam:
        raise EmError(f"mean edge {mean_edge:.4g} m exceeds 0.2 wavelengths")
    if mean_edge > 0.12 * lam:
        warnings.warn("mean edge exceeds 0.12 wavelengths; accuracy degrades",
                      stacklevel=2)

    corners = mesh.triangle_points()                        # (F,3,3)
    qpts = gauss_points(corners)                            # (F,7,3)
    qw = areas[:, None] * GAUSS7_W                          # (F,7)
    normals = rwg.tri_normals

    gid, coef, free, div = _local_bases(rwg)
    # f-values at own quadrature points, coefficients folded in: (F,3,7,3)
    fvals = coef[:, :, None, None] * (qpts[:, None, :, :] - free[:, :, None, :])

    adj = _vertex_adjacency(mesh)
    near_extra = _near_pairs(rwg, mean_edge)

    ZE = np.zeros((N, N), dtype=np.complex128)
    ZK = np.zeros((N, N), dtype=np.complex128)

    # ---- regular pairs, blocked and vectorized --------------------------
    block = 16
    starts = list(range(0, F, block))

    def do_block(s):
        o = slice(s, min(s + block, F))
        nb = o.stop - o.start
        rvec = qpts[o][:, :, None, None, :] - qpts[None, None, :, :, :]
        R = np.linalg.norm(rvec, axis=-1)
        # R = 0 within the block's own triangles produces NaN here; those
        # entries belong to special pairs and are overwritten with 0 below
        with np.errstate(divide="ignore", invalid="ignore"):
            G = np.exp(-jk * R) / (_FOUR_PI * R)
            WG = qw[o][:, :, None, None] * qw[None, None] * G

        # zero out special pairs (handled separately)
        for bi, t in enumerate(range(o.start, o.stop)):
            WG[bi, :, adj[t], :] = 0.0
            for q in near_extra.get(t, ()):
                WG[bi, :, q, :] = 0.0

        s1 = np.einsum("bifj,fnja->bifna", WG, fvals, optimize=True)
        e1 = np.einsum("bmia,bifna->bmfn", fvals[o], s1, optimize=True)
        s0 = np.einsum("bifj->bf", WG)
        e2 = div[o][:, :, None, None] * div[None, None] * s0[:, None, :, None]
        zeb = jk * Z0 * (e1 - e2 / k ** 2)

        zkb = None
        if include_k:
            # grad_r G = -(1 + jkR) G rvec / R^2
            with np.errstate(divide="ignore", invalid="ignore"):
                gG = (-(1.0 + jk * R) * G / R ** 2)[..., None] * rvec
                WgG = (qw[o][:, :, None, None, None]
                       * qw[None, None, :, :, None] * gG)
            for bi, t in enumerate(range(o.start, o.stop)):
                WgG[bi, :, adj[t], :, :] = 0.0
                for q in near_extra.get(t, ()):
                    WgG[bi, :, q, :, :] = 0.0
            ndG = np.einsum("ba,bifja->bifj", normals[o], WgG, optimize=True)
            t1a = np.einsum("bifj,fnja->bifna", ndG, fvals, optimize=True)
            term1 = np.einsum("bmia,bifna->bmfn", fvals[o], t1a, optimize=True)
            nf = np.einsum("ba,fnja->bfnj", normals[o], fvals, optimize=True)
            t2a = np.einsum("bifja,bfnj->bifna", WgG, nf, optimize=True)
            term2 = np.einsum("bmia,bifna->bmfn", fvals[o], t2a, optimize=True)
            zkb = term1 - term2
        return o, zeb, zkb

    def accumulate(o, zeb, zkb):
        nb = o.stop - o.start
        rows = np.broadcast_to(gid[o][:, :, None, None], (nb, 3, F, 3)).ravel()
        cols = np.broadcast_to(gid[None, None, :, :], (nb, 3, F, 3)).ravel()
        np.add.at(ZE, (rows, cols), zeb.ravel())
        if zkb is not None:
            np.add.at(ZK, (rows, cols), zkb.ravel())

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for o, zeb, zkb in pool.map(do_block, starts):
                accumulate(o, zeb, zkb)
    else:
        for s in starts:
            accumulate(*do_block(s))

    # ---- self / touching / near pairs with singular treatment -----------
    for p in range(F):
        specials = set(int(q) for q in adj[p])
        specials.update(near_extra.get(p, ()))
        obs = qpts[p]
        wobs = qw[p]
        for q in sorted(specials):
            cq = corners[q]
            # EFIE inner integral: extraction of the static 1/R part
            spts, sw = _adaptive_source_points(cq, obs) if q != p else (
                gauss_points(subdivide4(cq[None]).reshape(-1, 3, 3)).reshape(-1, 3),
                (triangle_area(subdivide4(cq[None]).reshape(-1, 3, 3))[:, None]
                 * GAUSS7_W).ravel())
            rv = obs[:, None, :] - spts[None, :, :]
            R = np.linalg.norm(rv, axis=-1)
            small = R < 1e-12
            Rs = np.where(small, 1.0, R)
            Gs = np.where(small, -jk / _FOUR_PI,
                          (np.exp(-jk * Rs) - 1.0) / (_FOUR_PI * Rs))
            I0, I1, rho = static_potentials(cq, obs)
            Ia = (Gs * sw).sum(axis=1) + I0 / _FOUR_PI              # (7,)
            Ib = (Gs[:, :, None] * sw[:, None] * spts).sum(axis=1) \
                + (I1 + rho * I0[:, None]) / _FOUR_PI               # (7,3)

            for m in range(3):
                rm = obs - free[p, m]                               # (7,3)
                for n in range(3):
                    inner_vec = Ib - free[q, n] * Ia[:, None]
                    e1 = coef[p, m] * coef[q, n] * np.einsum(
                        "i,ia,ia->", wobs, rm, inner_vec)
                    e2 = div[p, m] * div[q, n] * (wobs * Ia).sum()
                    ZE[gid[p, m], gid[q, n]] += jk * Z0 * (e1 - e2 / k ** 2)

            if include_k and q != p:
                gGs = (-(1.0 + jk * R) * np.exp(-jk * R)
                       / (_FOUR_PI * R ** 3))[..., None] * rv       # (7,Q,3)
                # moments: g0 = int gradG, g1[a,b] = int gradG_a r'_b
                g0 = np.einsum("q,iqa->ia", sw, gGs)
                g1 = np.einsum("q,iqa,qb->iab", sw, gGs, spts)
                nrm = normals[p]
                for m in range(3):
                    rm = obs - free[p, m]
                    for n in range(3):
                        # int (r'-vn) x gradG, as a vector per obs point
                        vn = free[q, n]
                        # (r' x gradG)_a = eps_abc r'_b gradG_c -> from g1
                        rx = np.stack([
                            g1[:, 2, 1] - g1[:, 1, 2],
                            g1[:, 0, 2] - g1[:, 2, 0],
                            g1[:, 1, 0] - g1[:, 0, 1],
                        ], axis=1)
                        cx = rx - np.cross(np.broadcast_to(vn, g0.shape), g0)
                        integ = np.cross(np.broadcast_to(nrm, cx.shape), cx)
                        val = coef[p, m] * coef[q, n] * np.einsum(
                            "i,ia,ia->", wobs, rm, integ)
                        ZK[gid[p, m], gid[q, n]] += val

    # Galerkin EFIE is symmetric; symmetrize to cancel quadrature asymmetry
    ZE = 0.5 * (ZE + ZE.T)

    gram = _gram_matrix(rwg, fvals, gid, qw)
    Z = alpha * Z0 * (0.5 * gram + ZK) + (1.0 - alpha) * ZE
    if phase_sign == 1:
        # conjugate time convention: operators conjugate along with the fields
        Z = np.conj(Z)

    b = excitation_vector(rwg, pw, alpha, phase_sign=phase_sign)
    return ImpedanceSystem(Z=Z, b=b, alpha=alpha, frequency=pw.frequency)


def excitation_vector(rwg: RwgSet, pw: PlaneWave, alpha: float,
                      phase_sign: int = -1) -> np.ndarray:
    """Tested right-hand side alpha*Z0*<f, n x H> + (1-alpha)*<f, E>.

    Cheap relative to matrix assembly, so angle sweeps over one mesh can
    reuse the factorized impedance matrix and rebuild only this vector.
    """
    mesh = rwg.mesh
    F = mesh.num_triangles
    qpts = gauss_points(mesh.triangle_points())
    qw = rwg.tri_areas[:, None] * GAUSS7_W
    normals = rwg.tri_normals
    gid, coef, free, div = _local_bases(rwg)
    fvals = coef[:, :, None, None] * (qpts[:, None, :, :] - free[:, :, None, :])

    E, H = plane_wave_fields(pw, qpts.reshape(-1, 3), phase_sign=phase_sign)
    E = E.reshape(F, 7, 3)
    H = H.reshape(F, 7, 3)
    nxH = np.cross(np.broadcast_to(normals[:, None, :], H.shape), H)
    bM = np.einsum("fi,fmia,fia->fm", qw, fvals, nxH)
    bE = np.einsum("fi,fmia,fia->fm", qw, fvals, E)
    b = np.zeros(rwg.num_bases, dtype=np.complex128)
    np.add.at(b, gid.ravel(), (alpha * Z0 * bM + (1.0 - alpha) * bE).ravel())
    return b


def _near_pairs(rwg: RwgSet, mean_edge: float):
    """Non-touching pairs whose centroids are closer than 0.3 mean edges."""
    c = rwg.tri_centroids
    F = len(c)
    out: dict[int, set] = {}
    thr = 0.3 * mean_edge
    # cheap O(F^2) distance check in blocks
    for s in range(0, F, 256):
        d = np.linalg.norm(c[s:s + 256, None, :] - c[None, :, :], axis=-1)
        ii, jj = np.nonzero(d < thr)
        for i, j in zip(ii, jj):
            p, q = int(i + s), int(j)
            if p != q:
                out.setdefault(p, set()).add(q)
    return out


def _gram_matrix(rwg: RwgSet, fvals, gid, qw):
    N = rwg.num_bases
    gram = np.zeros((N, N))
    vals = np.einsum("fi,fmia,fnia->fmn", qw, fvals, fvals)
    F = len(qw)
    rows = np.broadcast_to(gid[:, :, None], (F, 3, 3)).ravel()
    cols = np.broadcast_to(gid[:, None, :], (F, 3, 3)).ravel()
    np.add.at(gram, (rows, cols), vals.ravel())
    return gram


# ---------------------------------------------------------------------------
# Solve
# ---------------------------------------------------------------------------

def solve_system(sys: ImpedanceSystem) -> np.ndarray:
    """Dense LU solve with one iterative-refinement step if needed."""
    Z, b = sys.Z, sys.b
    if not np.all(np.isfinite(Z)) or not np.all(np.isfinite(b)):
        raise EmError("non-finite system")
    if not np.any(b):
        return np.zeros_like(b)
    lu, piv = scipy.linalg.lu_factor(Z)
    cond_est = np.abs(np.diag(lu)).max() / max(np.abs(np.diag(lu)).min(), 1e-300)
    if cond_est > 1e14:
        raise EmError(f"ill-conditioned system (pivot ratio ~{cond_est:.3g})")
    u = scipy.linalg.lu_solve((lu, piv), b)
    bnorm = np.linalg.norm(b)
    res = np.linalg.norm(Z @ u - b) / bnorm
    if res > 1e-10:
        u = u + scipy.linalg.lu_solve((lu, piv), b - Z @ u)
        res = np.linalg.norm(Z @ u - b) / bnorm
    if res > 1e-8:
        raise EmError(f"solve residual {res:.3g} exceeds 1e-8")
    return u


# ---------------------------------------------------------------------------
# Far field / RCS
# ---------------------------------------------------------------------------

def bistatic_rcs(rwg: RwgSet, u: np.ndarray, frequency: float,
                 plane: str = "phi0", step: float = 1.0,
                 amplitude: float = 1.0) -> RcsCut:
    """Bistatic RCS from the far-zone radiation integral of the RWG currents."""
    if plane != "phi0":
        raise EmError(f"unsupported cut plane {plane!r}")
    k = 2.0 * np.pi * frequency / C0

    mesh = rwg.mesh
    corners = mesh.triangle_points()
    qpts = gauss_points(corners)
    qw = rwg.tri_areas[:, None] * GAUSS7_W
    gid, coef, free, _ = _local_bases(rwg)
    fvals = coef[:, :, None, None] * (qpts[:, None, :, :] - free[:, :, None, :])
    # current at quadrature points: (F,7,3)
    J = np.einsum("fm,fmia->fia", np.asarray(u)[gid], fvals)

    angles = np.arange(0.0, 360.0, step)
    th = np.radians(angles)
    rhat = np.stack([np.sin(th), np.zeros_like(th), np.cos(th)], axis=1)

    phase = np.exp(1j * k * np.einsum("qa,fia->qfi", rhat, qpts))
    Nvec = np.einsum("fi,qfi,fia->qa", qw, phase, J)
    Nt = Nvec - np.einsum("qa,qa->q", Nvec, rhat)[:, None] * rhat
    einf = (k * Z0 / _FOUR_PI) * np.linalg.norm(Nt, axis=1)
    sigma = _FOUR_PI * einf ** 2 / amplitude ** 2
    return RcsCut(angles=angles, sigma=sigma, plane=plane)


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------

def rcs_to_csv(cut: RcsCut) -> str:
    lines = ["angle_deg,sigma_m2,sigma_dbsm"]
    for a, s, db in zip(cut.angles, cut.sigma, cut.sigma_dbsm()):
        lines.append(f"{a:.6f},{s:.12e},{db:.6f}")
    return "\n".join(lines) + "\n"


def rcs_from_csv(text: str) -> RcsCut:
    rows = text.strip().splitlines()[1:]
    angles, sigma = [], []
    for row in rows:
        a, s, _ = row.split(",")
        angles.append(float(a))
        sigma.append(float(s))
    return RcsCut(angles=np.array(angles), sigma=np.array(sigma))


_POL_CODE = {"theta_pol": 0.0, "phi_pol": 1.0}
_POL_NAME = {0.0: "theta_pol", 1.0: "phi_pol"}


def solution_to_bytes(u: np.ndarray, pw: PlaneWave, alpha: float) -> bytes:
    u = np.asarray(u, dtype=np.complex128)
    head = struct.pack("<7d", float(len(u)), pw.frequency, alpha, pw.theta,
                       pw.phi, _POL_CODE[pw.polarization], pw.amplitude)
    inter = np.empty(2 * len(u))
    inter[0::2] = u.real
    inter[1::2] = u.imag
    return head + inter.astype("<f8").tobytes()


def solution_from_bytes(data: bytes):
    vals = struct.unpack("<7d", data[:56])
    n = int(vals[0])
    arr = np.frombuffer(data[56:], dtype="<f8")
    if len(arr) != 2 * n:
        raise EmError("truncated solution record")
    u = arr[0::2] + 1j * arr[1::2]
    pw = PlaneWave(frequency=vals[1], theta=vals[3], phi=vals[4],
                   polarization=_POL_NAME[vals[5]], amplitude=vals[6])
    return u, pw, vals[2]
