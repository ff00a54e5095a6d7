"""Dataset factory: sweep geometries and incidence angles through the MoM
pipeline and persist labeled graph samples.

Layout on disk: a directory with `manifest.json` (UTF-8 JSON) and
`samples/<id>.gsb` binary graph samples.  Generation is resumable: samples
already present with matching checksums are not recomputed.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from .mesh import ShapeSpec, generate_primitive, MeshError
from .rwg import build_rwg, centroid_currents
from .em import PlaneWave, assemble_system, excitation_vector, C0
from .graph import build_graph, attach_labels, sample_to_bytes, sample_from_bytes


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class SweepSpec:
    kind: str                             # mesh primitive family
    geometry: dict                        # param -> [lo, hi, step] or [values...]
    theta: tuple = (10.0, 90.0, 10.0)     # incidence polar grid (lo, hi, step)
    phi: tuple = (90.0, 180.0, 10.0)      # incidence azimuth grid
    frequency: float = 3e8
    amplitude: float = 1.0
    polarization: str = "theta_pol"
    alpha: float = 0.5
    mesh_fraction: float = 0.1            # target edge in wavelengths
    max_samples: int | None = None

    def validate(self):
        if not self.geometry:
            raise DataError("empty geometry grid")
        for name, g in self.geometry.items():
            if len(_axis_values(g)) == 0:
                raise DataError(f"empty grid for {name}")
        for axis in (self.theta, self.phi):
            if len(axis) != 3 or axis[2] <= 0:
                raise DataError("angle grids need (lo, hi, step), step > 0")
        if self.frequency <= 0 or not (0 <= self.alpha <= 1):
            raise DataError("invalid frequency or alpha")


def _axis_values(g):
    g = list(g)
    if len(g) == 3 and g[2] > 0 and g[1] >= g[0]:
        lo, hi, step = g
        n = int(np.floor((hi - lo) / step + 1e-9)) + 1
        return [round(lo + i * step, 12) for i in range(n)]
    return g


def enumerate_sweep(sweep: SweepSpec) -> list:
    """Deterministic (ShapeSpec, theta, phi) grid, row-major over
    geometry parameters (sorted by name), then theta, then phi."""
    sweep.validate()
    names = sorted(sweep.geometry)
    axes = [_axis_values(sweep.geometry[n]) for n in names]
    thetas = _axis_values(sweep.theta)
    phis = _axis_values(sweep.phi)
    out = []
    idx = [0] * len(axes)
    while True:
        params = {n: axes[i][idx[i]] for i, n in enumerate(names)}
        spec = ShapeSpec(sweep.kind, params)
        for th in thetas:
            for ph in phis:
                out.append((spec, th, ph))
        for i in reversed(range(len(axes))):
            idx[i] += 1
            if idx[i] < len(axes[i]):
                break
            idx[i] = 0
        else:
            break
    if sweep.max_samples is not None:
        out = out[:sweep.max_samples]
    return out


@dataclass
class DatasetManifest:
    dataset_id: str
    seed: int
    sweep: dict
    samples: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    splits: dict | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        return cls(**json.loads(text))

    def save(self, path: str):
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as f:
            f.write(self.to_json())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str) -> "DatasetManifest":
        with open(path, encoding="utf-8") as f:
            return cls.from_json(f.read())


def _make_geometry_samples(args):
    """Worker: all requested incidences for one geometry.  The impedance
    matrix depends only on the mesh, so it is assembled and factorized once
    and reused across angles.  Returns a list of ("ok"/"skip", record,
    payload) tuples."""
    from scipy.linalg import lu_factor, lu_solve

    sweep, spec, angle_jobs = args
    lam = C0 / sweep.frequency
    try:
        mesh = generate_primitive(spec, sweep.mesh_fraction, lam)
    except MeshError as e:
        return [("skip", {"id": sid, "reason": str(e)}, None)
                for (_, _, sid) in angle_jobs]
    rwg = build_rwg(mesh)
    shape_rec = {"kind": spec.kind, "parameters": dict(spec.parameters)}

    Z = None
    out = []
    for theta, phi, sid in angle_jobs:
        pw = PlaneWave(frequency=sweep.frequency, theta=theta, phi=phi,
                       polarization=sweep.polarization,
                       amplitude=sweep.amplitude)
        if Z is None:
            Z = assemble_system(rwg, pw, alpha=sweep.alpha).Z
            factor = lu_factor(Z)
        b = excitation_vector(rwg, pw, sweep.alpha)
        u = lu_solve(factor, b)
        # one refinement step, then record the residual
        u += lu_solve(factor, b - Z @ u)
        residual = float(np.linalg.norm(Z @ u - b) / np.linalg.norm(b))
        g = build_graph(mesh, rwg, pw)
        g = attach_labels(g, centroid_currents(rwg, u))
        payload = sample_to_bytes(g)
        out.append(("ok", {
            "file": f"samples/{sid}.gsb",
            "shape": shape_rec,
            "theta": theta, "phi": phi,
            "M": int(g.node_count), "N_rwg": int(rwg.num_bases),
            "residual": residual,
            "checksum": hashlib.sha256(payload).hexdigest(),
        }, payload))
    return out


def generate_dataset(sweep: SweepSpec, out_dir: str, seed: int = 0,
                     workers: int = 1) -> DatasetManifest:
    """Generate (or resume) a dataset; returns the manifest.

    Sample ids are grid positions, so reruns and worker counts cannot
    change content.  The manifest is rewritten atomically as samples land.
    """
    grid = enumerate_sweep(sweep)
    os.makedirs(os.path.join(out_dir, "samples"), exist_ok=True)
    mpath = os.path.join(out_dir, "manifest.json")
    if os.path.exists(mpath):
        manifest = DatasetManifest.load(mpath)
    else:
        manifest = DatasetManifest(dataset_id=os.path.basename(
            os.path.abspath(out_dir)), seed=seed, sweep=asdict(sweep))
    known = {r["file"]: r for r in manifest.samples}

    # group missing grid points by geometry (grid order is geometry-major)
    todo = []
    for i, (spec, th, ph) in enumerate(grid):
        sid = f"s{i:05d}"
        rec = known.get(f"samples/{sid}.gsb")
        if rec is not None:
            path = os.path.join(out_dir, rec["file"])
            if os.path.exists(path) and _checksum(path) == rec["checksum"]:
                continue
        if todo and todo[-1][1] is spec:
            todo[-1][2].append((th, ph, sid))
        else:
            todo.append((sweep, spec, [(th, ph, sid)]))
    todo = [tuple(t) for t in todo]

    def consume(groups):
        for group in groups:
            for status, record, payload in group:
                if status == "skip":
                    manifest.skipped.append(record)
                    continue
                path = os.path.join(out_dir, record["file"])
                tmp = path + ".tmp"
                with open(tmp, "wb") as f:
                    f.write(payload)
                os.replace(tmp, path)
                known[record["file"]] = record
            manifest.samples = [known[k] for k in sorted(known)]
            manifest.save(mpath)

    if workers > 1 and todo:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            consume(pool.map(_make_geometry_samples, todo))
    else:
        consume(_make_geometry_samples(t) for t in todo)

    manifest.samples = [known[k] for k in sorted(known)]
    manifest.save(mpath)
    return manifest


def _checksum(path: str) -> str:
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def split_dataset(manifest: DatasetManifest, train_fraction: float = 0.8,
                  seed: int = 0):
    """Seeded disjoint, exhaustive split; recorded in the manifest."""
    if not (0.0 < train_fraction < 1.0):
        raise DataError("train_fraction must lie in (0, 1)")
    n = len(manifest.samples)
    if n < 2:
        raise DataError("need at least 2 samples to split")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_train = int(round(train_fraction * n))
    n_train = min(max(n_train, 1), n - 1)
    train_ids = sorted(manifest.samples[i]["file"] for i in order[:n_train])
    test_ids = sorted(manifest.samples[i]["file"] for i in order[n_train:])
    manifest.splits = {"seed": seed, "train_fraction": train_fraction,
                       "train": train_ids, "test": test_ids}
    pick = lambda ids: [r for r in manifest.samples if r["file"] in set(ids)]
    train_m = DatasetManifest(dataset_id=manifest.dataset_id + "-train",
                              seed=manifest.seed, sweep=manifest.sweep,
                              samples=pick(train_ids))
    test_m = DatasetManifest(dataset_id=manifest.dataset_id + "-test",
                             seed=manifest.seed, sweep=manifest.sweep,
                             samples=pick(test_ids))
    return train_m, test_m


def load_samples(manifest: DatasetManifest, base_dir: str,
                 verify: bool = True) -> list:
    """Read every sample in the manifest (checksum-verified)."""
    out = []
    for rec in manifest.samples:
        path = os.path.join(base_dir, rec["file"])
        with open(path, "rb") as f:
            data = f.read()
        if verify and hashlib.sha256(data).hexdigest() != rec["checksum"]:
            raise DataError(f"checksum mismatch for {rec['file']}")
        out.append(sample_from_bytes(data))
    return out
