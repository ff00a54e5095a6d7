"""RWG basis bookkeeping and current reconstruction.

One basis per interior edge of a closed oriented mesh.  Bases are ordered
lexicographically by their sorted vertex-index pair; the triangle with the
lower index is the plus triangle.  On the plus triangle the basis points
away from its free vertex, on the minus triangle towards it:

    f_n(r) = +(l_n / 2 A+) (r - v+)   on T+
    f_n(r) = -(l_n / 2 A-) (r - v-)   on T-
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import TriangleMesh, validate_mesh


class RwgError(ValueError):
    pass


@dataclass(frozen=True)
class RwgSet:
    mesh: TriangleMesh
    edge_vertices: np.ndarray   # (N,2) shared-edge vertex ids, sorted
    tri_plus: np.ndarray        # (N,)
    tri_minus: np.ndarray       # (N,)
    free_plus: np.ndarray       # (N,) free-vertex id on T+
    free_minus: np.ndarray      # (N,)
    lengths: np.ndarray         # (N,) shared-edge lengths
    area_plus: np.ndarray       # (N,)
    area_minus: np.ndarray      # (N,)
    tri_centroids: np.ndarray   # (F,3)
    tri_normals: np.ndarray     # (F,3) outward
    tri_areas: np.ndarray       # (F,)

    @property
    def num_bases(self) -> int:
        return len(self.lengths)

    def bases_on_triangle(self, t: int):
        """(basis index, sign) pairs hosted by triangle t."""
        out = [(int(n), +1.0) for n in np.flatnonzero(self.tri_plus == t)]
        out += [(int(n), -1.0) for n in np.flatnonzero(self.tri_minus == t)]
        return out


def build_rwg(mesh: TriangleMesh) -> RwgSet:
    report = validate_mesh(mesh)
    if not (report.is_closed and report.is_oriented):
        raise RwgError("mesh must be closed and consistently oriented")

    tris = mesh.triangles
    edge_map: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for t, (a, b, c) in enumerate(tris):
        for u, v in ((a, b), (b, c), (c, a)):
            key = (int(min(u, v)), int(max(u, v)))
            edge_map.setdefault(key, []).append((t, int(a + b + c - u - v)))

    keys = sorted(edge_map)
    n = len(keys)
    ev = np.zeros((n, 2), dtype=np.int64)
    tp = np.zeros(n, dtype=np.int64)
    tm = np.zeros(n, dtype=np.int64)
    fp = np.zeros(n, dtype=np.int64)
    fm = np.zeros(n, dtype=np.int64)
    for i, key in enumerate(keys):
        (t0, f0), (t1, f1) = edge_map[key]
        if t1 < t0:
            (t0, f0), (t1, f1) = (t1, f1), (t0, f0)
        ev[i] = key
        tp[i], tm[i] = t0, t1
        fp[i], fm[i] = f0, f1

    verts = mesh.vertices
    lengths = np.linalg.norm(verts[ev[:, 0]] - verts[ev[:, 1]], axis=1)
    areas = mesh.areas()
    return RwgSet(
        mesh=mesh,
        edge_vertices=ev,
        tri_plus=tp,
        tri_minus=tm,
        free_plus=fp,
        free_minus=fm,
        lengths=lengths,
        area_plus=areas[tp],
        area_minus=areas[tm],
        tri_centroids=mesh.centroids(),
        tri_normals=mesh.normals(),
        tri_areas=areas,
    )


def _barycentric(mesh: TriangleMesh, t: int, p: np.ndarray) -> np.ndarray:
    a, b, c = mesh.vertices[mesh.triangles[t]]
    u, v, w = b - a, c - a, np.asarray(p, dtype=np.float64) - a
    d00, d01, d11 = u @ u, u @ v, v @ v
    d20, d21 = w @ u, w @ v
    den = d00 * d11 - d01 * d01
    beta = (d11 * d20 - d01 * d21) / den
    gamma = (d00 * d21 - d01 * d20) / den
    return np.array([1.0 - beta - gamma, beta, gamma])


def eval_basis(rwg: RwgSet, n: int, t: int, p, tol: float = 1e-9) -> np.ndarray:
    """Value of basis n at point p on its support triangle t (units 1/m)."""
    p = np.asarray(p, dtype=np.float64)
    if t == rwg.tri_plus[n]:
        sign, area, free = 1.0, rwg.area_plus[n], rwg.free_plus[n]
    elif t == rwg.tri_minus[n]:
        sign, area, free = -1.0, rwg.area_minus[n], rwg.free_minus[n]
    else:
        raise RwgError(f"triangle {t} does not support basis {n}")
    bary = _barycentric(rwg.mesh, t, p)
    if bary.min() < -tol or bary.max() > 1.0 + tol:
        raise RwgError(f"point lies outside triangle {t}")
    rho = p - rwg.mesh.vertices[free]
    return sign * (rwg.lengths[n] / (2.0 * area)) * rho


def surface_divergence(rwg: RwgSet, n: int, t: int) -> float:
    """Constant surface divergence of basis n on triangle t."""
    if t == rwg.tri_plus[n]:
        return float(rwg.lengths[n] / rwg.area_plus[n])
    if t == rwg.tri_minus[n]:
        return float(-rwg.lengths[n] / rwg.area_minus[n])
    raise RwgError(f"triangle {t} does not support basis {n}")


def centroid_currents(rwg: RwgSet, u: np.ndarray) -> np.ndarray:
    """Per-triangle surface current density at the centroids, (F,3) complex."""
    u = np.asarray(u)
    if u.shape != (rwg.num_bases,):
        raise RwgError(f"coefficient vector must have length {rwg.num_bases}")
    F = len(rwg.tri_areas)
    J = np.zeros((F, 3), dtype=np.complex128)
    cent = rwg.tri_centroids
    coef_p = (rwg.lengths / (2.0 * rwg.area_plus))[:, None]
    coef_m = (rwg.lengths / (2.0 * rwg.area_minus))[:, None]
    rho_p = cent[rwg.tri_plus] - rwg.mesh.vertices[rwg.free_plus]
    rho_m = cent[rwg.tri_minus] - rwg.mesh.vertices[rwg.free_minus]
    np.add.at(J, rwg.tri_plus, u[:, None] * coef_p * rho_p)
    np.add.at(J, rwg.tri_minus, -u[:, None] * coef_m * rho_m)
    return J
