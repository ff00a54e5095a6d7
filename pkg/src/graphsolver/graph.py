"""Graph representation of a meshed target under plane-wave excitation.

Nodes are triangles; two nodes are connected when their triangles share a
side.  Node features are the 9 reals [Re J_inc, Im J_inc, centroid] where
J_inc = n x Z0 H_inc - n x n x E_inc at the triangle centroid.  Labels,
when attached, are the 6 reals [Re Jx, Re Jy, Re Jz, Im Jx, Im Jy, Im Jz]
of the solved surface current density.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .em import Z0, PlaneWave, plane_wave_fields
from .mesh import TriangleMesh, validate_mesh
from .rwg import RwgSet

_MAGIC = b"GSB1"
_FLAG_LABELS = 1


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class GraphSample:
    adjacency: np.ndarray            # (E,2) int64, i < j, lexicographic
    edge_vectors: np.ndarray         # (E,3) centroid(j) - centroid(i)
    features: np.ndarray             # (M,9)
    labels: np.ndarray | None = None  # (M,6)
    meta: dict = field(default_factory=dict)

    @property
    def node_count(self) -> int:
        return len(self.features)

    @property
    def edge_count(self) -> int:
        return len(self.adjacency)

    def degrees(self) -> np.ndarray:
        d = np.zeros(self.node_count, dtype=np.int64)
        np.add.at(d, self.adjacency.ravel(), 1)
        return d

    def directed_edges(self):
        """(2E,2) directed pairs and matching (2E,3) edge vectors."""
        fwd = self.adjacency
        rev = self.adjacency[:, ::-1]
        pairs = np.concatenate([fwd, rev])
        vecs = np.concatenate([self.edge_vectors, -self.edge_vectors])
        return pairs, vecs


def incident_current(pw: PlaneWave, points: np.ndarray,
                     normals: np.ndarray) -> np.ndarray:
    """J_inc = n x Z0 H - n x n x E at the given surface points (complex)."""
    E, H = plane_wave_fields(pw, points)
    return np.cross(normals, Z0 * H) - np.cross(normals, np.cross(normals, E))


def build_graph(mesh: TriangleMesh, rwg: RwgSet, pw: PlaneWave,
                edge_vector_mode: str = "centroid") -> GraphSample:
    """Transform mesh + excitation into a graph sample.

    edge_vector_mode "centroid" uses the centroid-to-centroid displacement;
    "midpoint" uses the shared-edge midpoint (ablation variant).
    """
    report = validate_mesh(mesh)
    if not (report.is_closed and report.is_oriented):
        raise GraphError("graph construction requires a closed oriented mesh")
    if edge_vector_mode not in ("centroid", "midpoint"):
        raise GraphError(f"unknown edge_vector_mode {edge_vector_mode!r}")

    cent = rwg.tri_centroids
    normals = rwg.tri_normals
    jinc = incident_current(pw, cent, normals)
    features = np.concatenate([jinc.real, jinc.imag, cent], axis=1)

    # adjacency from the RWG shared-edge table
    pairs = np.stack([np.minimum(rwg.tri_plus, rwg.tri_minus),
                      np.maximum(rwg.tri_plus, rwg.tri_minus)], axis=1)
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    pairs = pairs[order]
    if edge_vector_mode == "centroid":
        vecs = cent[pairs[:, 1]] - cent[pairs[:, 0]]
    else:
        mids = 0.5 * (mesh.vertices[rwg.edge_vertices[:, 0]]
                      + mesh.vertices[rwg.edge_vertices[:, 1]])
        vecs = mids[order]

    meta = {
        "excitation": {
            "frequency": pw.frequency, "theta": pw.theta, "phi": pw.phi,
            "polarization": pw.polarization, "amplitude": pw.amplitude,
        },
        "edge_vector_mode": edge_vector_mode,
    }
    return GraphSample(adjacency=pairs.astype(np.int64),
                       edge_vectors=vecs, features=features, meta=meta)


def attach_labels(g: GraphSample, currents: np.ndarray) -> GraphSample:
    """Attach per-triangle complex currents as [Re x,y,z, Im x,y,z] labels."""
    currents = np.asarray(currents)
    if currents.shape != (g.node_count, 3):
        raise GraphError(
            f"expected {g.node_count} x 3 currents, got {currents.shape}")
    labels = np.concatenate([currents.real, currents.imag], axis=1)
    return replace(g, labels=labels)


def labels_to_currents(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    return labels[:, 0:3] + 1j * labels[:, 3:6]


# ---------------------------------------------------------------------------
# Binary sample format (.gsb): little-endian, magic + header + arrays + meta
# ---------------------------------------------------------------------------

def sample_to_bytes(g: GraphSample) -> bytes:
    flags = _FLAG_LABELS if g.labels is not None else 0
    out = [_MAGIC, struct.pack("<III", g.node_count, g.edge_count, flags)]
    out.append(g.adjacency.astype("<u4").tobytes())
    out.append(np.ascontiguousarray(g.edge_vectors, dtype="<f8").tobytes())
    out.append(np.ascontiguousarray(g.features, dtype="<f8").tobytes())
    if g.labels is not None:
        out.append(np.ascontiguousarray(g.labels, dtype="<f8").tobytes())
    meta = json.dumps(g.meta, sort_keys=True).encode("utf-8")
    out.append(struct.pack("<I", len(meta)))
    out.append(meta)
    return b"".join(out)


def sample_from_bytes(data: bytes) -> GraphSample:
    if data[:4] != _MAGIC:
        raise GraphError("not a graph sample record")
    m, e, flags = struct.unpack("<III", data[4:16])
    off = 16

    def take(count, dtype, shape):
        nonlocal off
        nbytes = count * np.dtype(dtype).itemsize
        arr = np.frombuffer(data[off:off + nbytes], dtype=dtype).reshape(shape)
        off += nbytes
        return arr

    adjacency = take(2 * e, "<u4", (e, 2)).astype(np.int64)
    edge_vectors = take(3 * e, "<f8", (e, 3)).astype(np.float64)
    features = take(9 * m, "<f8", (m, 9)).astype(np.float64)
    labels = None
    if flags & _FLAG_LABELS:
        labels = take(6 * m, "<f8", (m, 6)).astype(np.float64)
    (meta_len,) = struct.unpack("<I", data[off:off + 4])
    off += 4
    meta = json.loads(data[off:off + meta_len].decode("utf-8"))
    return GraphSample(adjacency=adjacency, edge_vectors=edge_vectors,
                       features=features, labels=labels, meta=meta)
