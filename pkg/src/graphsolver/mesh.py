"""Triangulated closed surfaces for the target families.

All generators return watertight, consistently oriented genus-0 meshes
with outward-facing (counterclockwise) triangles.  Units are meters.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

TRIANGLE_CAP = 50_000
_AREA_EPS = 1e-12


class MeshError(ValueError):
    """Raised for invalid shape parameters or malformed mesh input."""


@dataclass(frozen=True)
class TriangleMesh:
    """Triangle surface mesh: vertices (V,3) float64, triangles (F,3) int."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise MeshError("triangle index out of range")

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    def triangle_points(self) -> np.ndarray:
        """(F,3,3) corner coordinates."""
        return self.vertices[self.triangles]

    def areas(self) -> np.ndarray:
        p = self.triangle_points()
        return 0.5 * np.linalg.norm(
            np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1
        )

    def normals(self) -> np.ndarray:
        """Unit normals following the triangle winding."""
        p = self.triangle_points()
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def centroids(self) -> np.ndarray:
        return self.triangle_points().mean(axis=1)

    def edge_lengths(self) -> np.ndarray:
        """Lengths of the unique edges."""
        e = _unique_edges(self.triangles)
        d = self.vertices[e[:, 0]] - self.vertices[e[:, 1]]
        return np.linalg.norm(d, axis=1)


@dataclass(frozen=True)
class ShapeSpec:
    """Parametric target description.

    kind: one of "spheroid", "conical_frustum", "hexahedron", "missilehead".
    parameters (meters / degrees):
      spheroid:        Rx, Ry, Rz
      conical_frustum: Rt (top radius), Rz (base radius), H
      hexahedron:      Dt, Wt (top), Db, Wb (base), H
      missilehead:     H (total height), R (body radius), theta (cone angle)
    """

    kind: str
    parameters: dict = field(default_factory=dict)

    KINDS = ("spheroid", "conical_frustum", "hexahedron", "missilehead")
    _REQUIRED = {
        "spheroid": ("Rx", "Ry", "Rz"),
        "conical_frustum": ("Rt", "Rz", "H"),
        "hexahedron": ("Dt", "Wt", "Db", "Wb", "H"),
        "missilehead": ("H", "R", "theta"),
    }

    def validate(self):
        if self.kind not in self.KINDS:
            raise MeshError(f"unknown shape kind {self.kind!r}")
        req = self._REQUIRED[self.kind]
        missing = [k for k in req if k not in self.parameters]
        if missing:
            raise MeshError(f"{self.kind}: missing parameters {missing}")
        for k in req:
            val = float(self.parameters[k])
            if k == "theta":
                if not (0.0 < val < 90.0):
                    raise MeshError("missilehead theta must lie in (0, 90) degrees")
            elif val <= 0.0:
                raise MeshError(f"{self.kind}: parameter {k} must be positive")

    def scaled(self, s: float) -> "ShapeSpec":
        """Scale every length parameter by s (angles untouched)."""
        p = {k: (v if k == "theta" else float(v) * s) for k, v in self.parameters.items()}
        return ShapeSpec(self.kind, p)


@dataclass(frozen=True)
class MeshReport:
    is_closed: bool
    is_oriented: bool
    euler_characteristic: int
    max_edge_len: float
    min_edge_len: float
    triangle_count: int


def _unique_edges(triangles: np.ndarray) -> np.ndarray:
    t = np.asarray(triangles)
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    e = np.sort(e, axis=1)
    return np.unique(e, axis=0)


def validate_mesh(mesh: TriangleMesh) -> MeshReport:
    """Topology / orientation / size report.  Pathologies are reported, not raised."""
    t = mesh.triangles
    directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    und = np.sort(directed, axis=1)
    uniq, counts = np.unique(und, axis=0, return_counts=True)
    is_closed = bool(len(uniq) and np.all(counts == 2))

    # Oriented iff every directed edge appears at most once (shared edges are
    # then traversed in opposite directions by their two triangles).
    _, dcounts = np.unique(directed, axis=0, return_counts=True)
    is_oriented = bool(np.all(dcounts == 1))

    V = len(np.unique(t)) if t.size else 0
    E = len(uniq)
    F = len(t)
    lens = mesh.edge_lengths() if t.size else np.array([0.0])
    return MeshReport(
        is_closed=is_closed,
        is_oriented=is_oriented,
        euler_characteristic=int(V - E + F),
        max_edge_len=float(lens.max()),
        min_edge_len=float(lens.min()),
        triangle_count=F,
    )


# ---------------------------------------------------------------------------
# OBJ import / export (triangles only, v/f records)
# ---------------------------------------------------------------------------

def import_obj(source) -> TriangleMesh:
    """Parse a Wavefront-OBJ subset: v and f records, triangle faces only."""
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        data = source.read()
        text = data.decode("utf-8") if isinstance(data, bytes) else data

    verts, faces = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise MeshError(f"line {lineno}: malformed vertex record")
            try:
                verts.append([float(x) for x in parts[1:4]])
            except ValueError as exc:
                raise MeshError(f"line {lineno}: malformed vertex record") from exc
        elif tag == "f":
            idx = parts[1:]
            if len(idx) != 3:
                raise MeshError(f"line {lineno}: non-triangular face")
            tri = []
            for token in idx:
                head = token.split("/")[0]
                try:
                    i = int(head)
                except ValueError as exc:
                    raise MeshError(f"line {lineno}: malformed face index") from exc
                if i == 0:
                    raise MeshError(f"line {lineno}: face index out of range")
                tri.append(i - 1 if i > 0 else i)
            faces.append(tri)
        # other record types (vn, vt, o, g, s, usemtl ...) are ignored
    verts = np.array(verts, dtype=np.float64).reshape(-1, 3)
    faces_arr = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if faces_arr.size:
        resolved = np.where(faces_arr < 0, faces_arr + len(verts), faces_arr)
        if resolved.min() < 0 or resolved.max() >= len(verts):
            raise MeshError("face index out of range")
        faces_arr = resolved
    return TriangleMesh(verts, faces_arr)


def export_obj(mesh: TriangleMesh) -> bytes:
    buf = io.StringIO()
    for v in mesh.vertices:
        # repr of a Python float is the shortest round-trip representation
        buf.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
    for t in mesh.triangles:
        buf.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")
    return buf.getvalue().encode("utf-8")


# ---------------------------------------------------------------------------
# Primitive generators
# ---------------------------------------------------------------------------

def generate_primitive(spec: ShapeSpec, target_edge: float, wavelength: float,
                       triangle_cap: int = TRIANGLE_CAP) -> TriangleMesh:
    """Generate a closed oriented mesh with mean edge ~ target_edge*wavelength.

    target_edge is expressed as a fraction of the wavelength, in (0, 0.5].
    """
    spec.validate()
    if not (0.0 < target_edge <= 0.5):
        raise MeshError("target_edge must lie in (0, 0.5]")
    if wavelength <= 0.0:
        raise MeshError("wavelength must be positive")
    h = target_edge * wavelength

    if spec.kind == "spheroid":
        mesh = _spheroid(spec.parameters, h)
    elif spec.kind == "conical_frustum":
        p = spec.parameters
        profile = [(0.0, 0.0), (float(p["Rz"]), 0.0),
                   (float(p["Rt"]), float(p["H"])), (0.0, float(p["H"]))]
        mesh = _revolve(profile, h)
    elif spec.kind == "hexahedron":
        mesh = _hexahedron(spec.parameters, h)
    elif spec.kind == "missilehead":
        p = spec.parameters
        H, R = float(p["H"]), float(p["R"])
        theta = math.radians(float(p["theta"]))
        zc = H - R * math.tan(theta)
        if zc <= 0.0:
            raise MeshError("missilehead cone consumes the whole height (R*tan(theta) >= H)")
        profile = [(0.0, 0.0), (R, 0.0), (R, zc), (0.0, H)]
        mesh = _revolve(profile, h)
    else:  # pragma: no cover - validate() already rejects
        raise MeshError(spec.kind)

    if mesh.num_triangles > triangle_cap:
        raise MeshError(
            f"triangle count {mesh.num_triangles} exceeds cap {triangle_cap}; "
            "coarsen target_edge")
    return mesh


def _icosahedron():
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    v = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    return v, f


def _subdivide_sphere(m: int):
    """Unit sphere from an icosahedron with each face split m-ways."""
    v0, f0 = _icosahedron()
    verts = []
    vert_ids = {}

    def point_id(key, p):
        if key in vert_ids:
            return vert_ids[key]
        p = np.asarray(p)
        p = p / np.linalg.norm(p)
        vert_ids[key] = len(verts)
        verts.append(tuple(p))
        return vert_ids[key]

    faces = []
    for (a, b, c) in f0:
        # grid point (i,j): bary (m-i-j, i, j)/m over corners (a,b,c);
        # keys canonicalized so shared edges dedupe exactly.
        grid = {}
        for i in range(m + 1):
            for j in range(m + 1 - i):
                k = m - i - j
                bary = sorted([(int(k), int(a)), (int(i), int(b)), (int(j), int(c))],
                              key=lambda t: t[1])
                key = tuple(x for pair in bary if pair[0] > 0 for x in pair)
                p = (k * v0[a] + i * v0[b] + j * v0[c]) / m
                grid[(i, j)] = point_id(key, p)
        for i in range(m):
            for j in range(m - i):
                faces.append([grid[(i, j)], grid[(i + 1, j)], grid[(i, j + 1)]])
                if j < m - i - 1:
                    faces.append([grid[(i + 1, j)], grid[(i + 1, j + 1)], grid[(i, j + 1)]])
    return np.array(verts), np.array(faces, dtype=np.int64)


def _spheroid(params, h):
    Rx, Ry, Rz = (float(params[k]) for k in ("Rx", "Ry", "Rz"))
    rmean = (Rx + Ry + Rz) / 3.0
    # icosahedron edge on the unit sphere ~ 1.0515; aim slightly below the
    # target so the longest realized edge stays near it too.
    m = max(1, round(1.0515 * rmean / (0.95 * h)))

    def build(mm):
        v, f = _subdivide_sphere(mm)
        v = v * np.array([Rx, Ry, Rz])
        return _orient_outward(TriangleMesh(v, f), np.zeros(3))

    mesh = build(m)
    lens = mesh.edge_lengths()
    if lens.max() > 1.3 * h and lens.mean() * m / (m + 1) >= 0.75 * h:
        mesh = build(m + 1)
    return mesh


def _orient_outward(mesh: TriangleMesh, center) -> TriangleMesh:
    """Flip triangles so normals point away from a known interior point."""
    n = mesh.normals()
    c = mesh.centroids() - np.asarray(center)
    flip = np.einsum("ij,ij->i", n, c) < 0.0
    t = mesh.triangles.copy()
    t[flip] = t[flip][:, [0, 2, 1]]
    return TriangleMesh(mesh.vertices, t)


class _Welder:
    """Vertex dedup on exact float coordinates."""

    def __init__(self):
        self.verts = []
        self.index = {}

    def add(self, p) -> int:
        key = (float(p[0]), float(p[1]), float(p[2]))
        if key not in self.index:
            self.index[key] = len(self.verts)
            self.verts.append(key)
        return self.index[key]

    def array(self):
        return np.array(self.verts, dtype=np.float64)


def _revolve(profile, h):
    """Closed surface of revolution about z.

    profile: list of (r, z) points, r >= 0, first and last on the axis,
    traversed so the outward normal of the swept wall is correct when each
    quad is emitted counterclockwise seen from outside.
    """
    rmax = max(r for r, _ in profile)
    nseg = max(8, int(round(2.0 * math.pi * rmax / h)))
    angles = 2.0 * math.pi * np.arange(nseg) / nseg
    ca, sa = np.cos(angles), np.sin(angles)

    weld = _Welder()

    def ring(r, z):
        if r == 0.0:
            vid = weld.add((0.0, 0.0, z))
            return [vid] * nseg
        return [weld.add((r * ca[i], r * sa[i], z)) for i in range(nseg)]

    # subdivide each profile segment to the target length; generate strips
    faces = []
    for (r0, z0), (r1, z1) in zip(profile[:-1], profile[1:]):
        seglen = math.hypot(r1 - r0, z1 - z0)
        if seglen == 0.0:
            continue
        nsub = max(1, int(round(seglen / h)))
        prev = ring(r0, z0)
        for s in range(1, nsub + 1):
            t = s / nsub
            rr = (1 - t) * r0 + t * r1
            zz = (1 - t) * z0 + t * z1
            cur = ring(rr, zz)
            for i in range(nseg):
                j = (i + 1) % nseg
                a, b = prev[i], prev[j]
                c, d = cur[i], cur[j]
                # wall quad (a,b,d,c); outward orientation fixed afterwards
                if a != b:
                    faces.append([a, b, d])
                if c != d:
                    faces.append([a, d, c])
            prev = cur

    mesh = TriangleMesh(weld.array(), np.array(faces, dtype=np.int64))
    zs = [z for _, z in profile]
    interior = np.array([0.0, 0.0, 0.5 * (min(zs) + max(zs))])
    return _orient_convexish(mesh, interior)


def _orient_convexish(mesh: TriangleMesh, interior) -> TriangleMesh:
    """Orient outward w.r.t. an interior point on the symmetry axis.

    Valid for the (star-shaped about that point) revolved / box solids here.
    """
    return _orient_outward(mesh, interior)


def _hexahedron(params, h):
    Dt, Wt, Db, Wb, H = (float(params[k]) for k in ("Dt", "Wt", "Db", "Wb", "H"))

    # 8 corners: base rectangle (Db x Wb) at z=0, top (Dt x Wt) at z=H,
    # both centered on the z axis.  x = depth/2, y = width/2.
    def corner(sx, sy, top):
        d, w, z = (Dt, Wt, H) if top else (Db, Wb, 0.0)
        return np.array([sx * d / 2.0, sy * w / 2.0, z])

    c = {(sx, sy, top): corner(sx, sy, top)
         for sx in (-1, 1) for sy in (-1, 1) for top in (0, 1)}

    # consistent segment counts so shared edges weld exactly
    n_w = max(1, round(max(Wb, Wt) / h))   # along y
    n_d = max(1, round(max(Db, Dt) / h))   # along x
    slant = max(np.linalg.norm(c[(sx, sy, 1)] - c[(sx, sy, 0)])
                for sx in (-1, 1) for sy in (-1, 1))
    n_z = max(1, round(slant / h))

    weld = _Welder()
    faces = []

    def patch(p00, p10, p01, p11, nu, nv, flip=False):
        """Bilinear quad patch triangulated on an (nu x nv) grid."""
        grid = {}
        for i in range(nu + 1):
            u = i / nu
            for j in range(nv + 1):
                v = j / nv
                p = ((1 - u) * (1 - v) * p00 + u * (1 - v) * p10
                     + (1 - u) * v * p01 + u * v * p11)
                grid[(i, j)] = weld.add(p)
        for i in range(nu):
            for j in range(nv):
                a, b = grid[(i, j)], grid[(i + 1, j)]
                d, e = grid[(i, j + 1)], grid[(i + 1, j + 1)]
                if flip:
                    faces.append([a, d, b])
                    faces.append([b, d, e])
                else:
                    faces.append([a, b, d])
                    faces.append([b, e, d])

    # base (z=0, normal -z) and top (z=H, normal +z)
    patch(c[(-1, -1, 0)], c[(1, -1, 0)], c[(-1, 1, 0)], c[(1, 1, 0)], n_d, n_w, flip=True)
    patch(c[(-1, -1, 1)], c[(1, -1, 1)], c[(-1, 1, 1)], c[(1, 1, 1)], n_d, n_w)
    # four side walls
    patch(c[(-1, -1, 0)], c[(1, -1, 0)], c[(-1, -1, 1)], c[(1, -1, 1)], n_d, n_z)   # y-
    patch(c[(-1, 1, 0)], c[(1, 1, 0)], c[(-1, 1, 1)], c[(1, 1, 1)], n_d, n_z, flip=True)  # y+
    patch(c[(-1, -1, 0)], c[(-1, 1, 0)], c[(-1, -1, 1)], c[(-1, 1, 1)], n_w, n_z, flip=True)  # x-
    patch(c[(1, -1, 0)], c[(1, 1, 0)], c[(1, -1, 1)], c[(1, 1, 1)], n_w, n_z)       # x+

    mesh = TriangleMesh(weld.array(), np.array(faces, dtype=np.int64))
    return _orient_outward(mesh, np.array([0.0, 0.0, H / 2.0]))
