"""End-to-end acceptance gates.

Ten numbered criteria covering the physics solver (Mie accuracy,
formulation consistency, mesh combinatorics), the network stack
(gradients, kernel oracle, equivariance), and the full learning pipeline
(memorization, generalization, transfer direction, CLI determinism).

This file trains several models and solves a moderately sized scattering
problem, so it dominates the suite's runtime (tens of minutes on one
core).  Session-scoped fixtures share the expensive artifacts: the
lambda/10 sphere solve feeds criteria 1 and 2, and the desk-scale model
from criterion 8 warm-starts criterion 9.
"""

import hashlib
import json
import os
import time
from dataclasses import replace

import numpy as np
import pytest

from graphsolver import (ShapeSpec, generate_primitive, build_rwg,
                         build_graph, PlaneWave, assemble_system,
                         solve_system, bistatic_rcs, mie_sphere_rcs,
                         centroid_currents, C0, SweepSpec, generate_dataset,
                         split_dataset, load_samples, ModelConfig,
                         TrainConfig, train, evaluate)
from graphsolver import nn
from graphsolver.cli import main as cli_main
from graphsolver.graph import GraphSample

WAVELENGTH = 1.0
FREQ = C0 / WAVELENGTH

# reduced architectures used by the training criteria (7-9); the default
# ModelConfig is exercised by the gradient and equivariance criteria
SMALL_ARCH = ModelConfig(hidden=32, gcn_layers=2, kernel_hidden=64,
                         head_hidden=16)
DESK_ARCH = replace(SMALL_ARCH, gcn_layers=3)


# ---------------------------------------------------------------------------
# shared artifacts
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def half_sphere():
    spec = ShapeSpec("spheroid", {"Rx": 0.5, "Ry": 0.5, "Rz": 0.5})
    mesh = generate_primitive(spec, 0.1, WAVELENGTH)
    return mesh, build_rwg(mesh)


@pytest.fixture(scope="session")
def cfie_solution(half_sphere):
    """Timed assembly + solve + RCS cut of the lambda/10 half-meter sphere."""
    _, rwg = half_sphere
    pw = PlaneWave(frequency=FREQ, theta=180.0, phi=0.0)
    t0 = time.monotonic()
    system = assemble_system(rwg, pw, alpha=0.5)
    u = solve_system(system)
    cut = bistatic_rcs(rwg, u, FREQ, step=1.0)
    elapsed = time.monotonic() - t0
    return pw, u, cut, elapsed


def _generate(sweep, base, name, workers=1):
    out = os.path.join(base, name)
    manifest = generate_dataset(sweep, out, seed=0, workers=workers)
    return out, manifest


@pytest.fixture(scope="session")
def mem_dataset(tmp_path_factory):
    """Eight solved incidence angles on one small sphere (criterion 7)."""
    sweep = SweepSpec(kind="spheroid",
                      geometry={"Rx": [0.2], "Ry": [0.2], "Rz": [0.2]},
                      theta=(10.0, 80.0, 10.0), phi=(90.0, 90.0, 10.0))
    out, manifest = _generate(sweep, str(tmp_path_factory.mktemp("accept")),
                              "mem")
    samples = load_samples(manifest, out)
    assert len(samples) == 8
    return samples


DESK_SWEEP = SweepSpec(
    kind="spheroid",
    geometry={"Rx": [0.2], "Ry": [0.2], "Rz": [0.2, 0.7, 0.1]},
    theta=(10.0, 90.0, 10.0),
    phi=(90.0, 180.0, 30.0),
    max_samples=200,
)


@pytest.fixture(scope="session")
def desk_split(tmp_path_factory):
    """200-sample spheroid dataset with an 80/20 split (criterion 8)."""
    out, manifest = _generate(DESK_SWEEP,
                              str(tmp_path_factory.mktemp("accept")), "desk")
    assert len(manifest.samples) == 200
    train_m, test_m = split_dataset(manifest, train_fraction=0.8, seed=0)
    return load_samples(train_m, out), load_samples(test_m, out)


@pytest.fixture(scope="session")
def desk_model(desk_split, tmp_path_factory):
    """Criterion 8's trained model; also the warm start for criterion 9."""
    train_set, test_set = desk_split
    tcfg = TrainConfig(epochs=100, batch_size=2, base_lr=0.002, seed=0)
    best, report, _ = train(train_set, test_set, tcfg, DESK_ARCH)
    path = str(tmp_path_factory.mktemp("accept") / "desk_model.gsp")
    with open(path, "wb") as f:
        f.write(nn.save_params(best, DESK_ARCH))
    return best, report, path


@pytest.fixture(scope="session")
def missile_dataset(tmp_path_factory):
    """100 solved missile-head samples (criterion 9)."""
    sweep = SweepSpec(
        kind="missilehead",
        geometry={"H": [0.55, 0.7, 0.05], "R": [0.2], "theta": [30.0]},
        theta=(10.0, 50.0, 10.0),
        phi=(100.0, 180.0, 20.0),
    )
    out, manifest = _generate(sweep, str(tmp_path_factory.mktemp("accept")),
                              "missile")
    samples = load_samples(manifest, out)
    assert len(samples) == 100
    return samples


# ---------------------------------------------------------------------------
# 1-2: solver accuracy
# ---------------------------------------------------------------------------

def test_criterion_1_mie_validation(cfie_solution):
    """lambda/10 sphere RCS within 1 dB of the Mie series inside the 30 dB
    window of the cut's peak, in under five minutes."""
    _, _, cut, elapsed = cfie_solution
    mie = mie_sphere_rcs(0.5, FREQ, step=1.0)
    assert np.allclose(cut.angles, mie.angles)
    db = lambda s: 10.0 * np.log10(s)
    window = db(mie.sigma) >= db(mie.sigma).max() - 30.0
    err = np.abs(db(cut.sigma) - db(mie.sigma))
    assert window.sum() > 100          # the window covers most of the cut
    assert err[window].max() <= 1.0, \
        f"max Mie error {err[window].max():.3f} dB"
    assert elapsed < 300.0, f"solve took {elapsed:.0f} s"


def test_criterion_2_efie_cfie_consistency(half_sphere, cfie_solution):
    """EFIE (alpha = 0) and CFIE (alpha = 0.5) centroid currents agree to
    2% relative L2 away from interior resonances."""
    _, rwg = half_sphere
    pw, u_cfie, _, _ = cfie_solution
    u_efie = solve_system(assemble_system(rwg, pw, alpha=0.0))
    j_cfie = centroid_currents(rwg, u_cfie)
    j_efie = centroid_currents(rwg, u_efie)
    rel = np.linalg.norm(j_efie - j_cfie) / np.linalg.norm(j_cfie)
    assert rel <= 0.02, f"relative L2 mismatch {rel:.4f}"


# ---------------------------------------------------------------------------
# 3: combinatorics
# ---------------------------------------------------------------------------

def _random_specs(count, seed):
    r = np.random.default_rng(seed)
    specs = []
    while len(specs) < count:
        kind = ("spheroid", "conical_frustum", "hexahedron",
                "missilehead")[len(specs) % 4]
        if kind == "spheroid":
            p = {k: r.uniform(0.1, 0.3) for k in ("Rx", "Ry", "Rz")}
        elif kind == "conical_frustum":
            p = {"Rt": r.uniform(0.05, 0.15), "Rz": r.uniform(0.1, 0.2),
                 "H": r.uniform(0.2, 0.4)}
        elif kind == "hexahedron":
            p = {"Dt": r.uniform(0.1, 0.2), "Wt": r.uniform(0.1, 0.2),
                 "Db": r.uniform(0.15, 0.3), "Wb": r.uniform(0.15, 0.3),
                 "H": r.uniform(0.2, 0.4)}
        else:
            p = {"H": r.uniform(0.4, 0.7), "R": r.uniform(0.1, 0.2),
                 "theta": r.uniform(15.0, 40.0)}
        specs.append(ShapeSpec(kind, p))
    return specs


def test_criterion_3_mesh_combinatorics():
    """Every closed mesh yields exactly N = 3F/2 bases and degree-3 graph
    nodes, across >= 20 random shape specifications of all four kinds."""
    pw = PlaneWave(frequency=FREQ, theta=90.0, phi=90.0)
    for spec in _random_specs(24, seed=2024):
        mesh = generate_primitive(spec, 0.1, WAVELENGTH)
        rwg = build_rwg(mesh)
        assert 2 * rwg.num_bases == 3 * mesh.num_triangles, spec
        g = build_graph(mesh, rwg, pw)
        assert np.all(g.degrees() == 3), spec


# ---------------------------------------------------------------------------
# 4-6: network oracles
# ---------------------------------------------------------------------------

def _ten_node_graph(seed=4):
    r = np.random.default_rng(seed)
    pairs = sorted({tuple(sorted(p)) for p in
                    [(i, (i + 1) % 10) for i in range(10)]
                    + [tuple(r.choice(10, 2, replace=False))
                       for _ in range(6)]})
    adj = np.array([p for p in pairs if p[0] != p[1]], dtype=np.int64)
    return GraphSample(adjacency=adj,
                       edge_vectors=r.normal(size=(len(adj), 3)),
                       features=r.normal(size=(10, 9)),
                       labels=r.normal(size=(10, 6)))


@pytest.mark.parametrize("use_bn", [False, True])
def test_criterion_4_gradient_oracle(use_bn):
    """Analytic gradients of the default architecture match central finite
    differences (h = 1e-6) to 1e-5 relative error.

    The default model carries several million parameters; exhaustive
    per-entry differencing is computationally infeasible, so coverage is
    (a) sampled entries from every tensor and (b) a directional derivative
    along a dense random direction, which touches every parameter at once.
    """
    cfg = replace(ModelConfig(), use_batch_norm=use_bn)
    g = _ten_node_graph()
    params = nn.init_params(cfg, 11)
    _, grads, _ = nn.loss_and_grads(params, cfg, g, g.labels)
    h = 1e-6
    rel = lambda a, b: abs(a - b) / max(abs(a), abs(b), 1e-4)
    r = np.random.default_rng(7)

    worst = 0.0
    for name in sorted(params):
        if nn.is_buffer(name):
            continue
        arr = params[name]
        flat = arr.reshape(-1)
        count = min(flat.size, 4)
        for j in r.choice(flat.size, count, replace=False):
            orig = flat[j]
            flat[j] = orig + h
            lp, _, _ = nn.loss_and_grads(params, cfg, g, g.labels)
            flat[j] = orig - h
            lm, _, _ = nn.loss_and_grads(params, cfg, g, g.labels)
            flat[j] = orig
            fd = (lp - lm) / (2 * h)
            an = grads[name].reshape(-1)[j]
            worst = max(worst, rel(fd, an))
            assert rel(fd, an) < 1e-5, f"{name}[{j}]: fd={fd} an={an}"

    # dense directional probe across all parameters simultaneously
    direction = {k: np.asarray(r.normal(size=params[k].shape))
                 for k in grads}
    scale = np.sqrt(sum(float((d ** 2).sum())
                        for d in direction.values()))
    direction = {k: d / scale for k, d in direction.items()}
    base = {k: params[k].copy() for k in direction}
    for sign in (+1.0, -1.0):
        for k, d in direction.items():
            params[k] = base[k] + sign * h * d
        loss, _, _ = nn.loss_and_grads(params, cfg, g, g.labels)
        if sign > 0:
            lp = loss
        else:
            lm = loss
    for k in direction:
        params[k] = base[k]
    fd = (lp - lm) / (2 * h)
    an = sum(float((grads[k] * direction[k]).sum()) for k in direction)
    assert rel(fd, an) < 1e-5, f"directional: fd={fd} an={an} (worst {worst})"


def test_criterion_5_graph_conv_oracle():
    """graph_conv equals a naive double loop to 1e-12 on 50 random graphs."""
    for trial in range(50):
        r = np.random.default_rng(1000 + trial)
        M = int(r.integers(2, 12))
        C = int(r.integers(2, 7))
        pairs = {tuple(sorted(r.choice(M, 2, replace=False)))
                 for _ in range(2 * M)} if M > 1 else set()
        adj = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
        vecs = r.normal(size=(len(adj), 3))
        feats = r.normal(size=(M, C))
        W = r.normal(size=(C, C))
        cfg = ModelConfig(in_dim=C, hidden=C, gcn_layers=1,
                          kernel_hidden=5, head_hidden=3)
        kp = nn._subparams(nn.init_params(cfg, trial), "gcn0.k_")

        got = nn.graph_conv(feats, adj, vecs, W, kp)

        want = np.zeros_like(feats)
        for i in range(M):
            want[i] = W @ feats[i]
            msgs = []
            for (a, b), v in zip(adj, vecs):
                if b == i:
                    msgs.append(feats[a] @ nn.kernel_fcn(kp, v))
                elif a == i:
                    msgs.append(feats[b] @ nn.kernel_fcn(kp, -v))
            if msgs:
                want[i] += np.mean(msgs, axis=0)
        assert np.max(np.abs(got - want)) < 1e-12, trial


def test_criterion_6_permutation_equivariance():
    """forward(P g) = P forward(g) to 1e-12 for 10 random permutations of
    the default architecture."""
    cfg = ModelConfig()
    params = nn.init_params(cfg, 6)
    g = _ten_node_graph(seed=66)
    out = nn.forward(params, cfg, g)
    r = np.random.default_rng(5)
    for _ in range(10):
        perm = r.permutation(10)
        inv = np.argsort(perm)
        adj = inv[g.adjacency]
        flip = adj[:, 0] > adj[:, 1]
        adj2 = np.where(flip[:, None], adj[:, ::-1], adj)
        vecs = np.where(flip[:, None], -g.edge_vectors, g.edge_vectors)
        order = np.lexsort((adj2[:, 1], adj2[:, 0]))
        gp = GraphSample(adjacency=adj2[order], edge_vectors=vecs[order],
                         features=g.features[perm])
        assert np.max(np.abs(nn.forward(params, cfg, gp) - out[perm])) \
            < 1e-12


# ---------------------------------------------------------------------------
# 7-9: learning behavior
# ---------------------------------------------------------------------------

def test_criterion_7_memorization(mem_dataset):
    """Eight samples, 2000 Adam steps (250 epochs x 8 single-sample
    batches) at the step-decay schedule: train MSE drops by 1000x."""
    tcfg = TrainConfig(epochs=250, batch_size=1, seed=0)
    _, report, _ = train(mem_dataset, mem_dataset, tcfg, SMALL_ARCH)
    ratio = report.train_mse[-1] / report.train_mse[0]
    assert ratio < 1e-3, f"train MSE ratio {ratio:.2e}"


def test_criterion_8_desk_scale_generalization(desk_split, desk_model):
    """200-sample spheroid set, 80/20 split, 100 epochs: test MSE within
    3x train MSE, test relative L2 current error < 0.5 and at least 10x
    better than the untrained network."""
    train_set, test_set = desk_split
    best, report, _ = desk_model

    m_train = evaluate(best, DESK_ARCH, train_set)
    m_test = evaluate(best, DESK_ARCH, test_set)
    assert m_test.mean_mse <= 3.0 * m_train.mean_mse, \
        f"overfit: test {m_test.mean_mse:.3e} train {m_train.mean_mse:.3e}"

    untrained = nn.init_params(DESK_ARCH, 0)
    for k in best:                       # same normalization, fresh weights
        if k.startswith("norm."):
            untrained[k] = best[k]
    m_un = evaluate(untrained, DESK_ARCH, test_set)

    assert m_test.mean_rel_l2 < 0.5, f"rel L2 {m_test.mean_rel_l2:.3f}"
    assert m_un.mean_rel_l2 >= 10.0 * m_test.mean_rel_l2, \
        (f"improvement only {m_un.mean_rel_l2 / m_test.mean_rel_l2:.1f}x "
         f"(trained {m_test.mean_rel_l2:.3f}, "
         f"untrained {m_un.mean_rel_l2:.3f})")


def test_criterion_9_transfer_direction(missile_dataset, desk_model,
                                        tmp_path):
    """Warm-starting from the spheroid model beats cold starts at epoch 5
    on the missile-head family (median over three seeds)."""
    _, _, warm_path = desk_model
    train_set = missile_dataset[:80]
    test_set = missile_dataset[80:]
    warm, cold = [], []
    for seed in (0, 1, 2):
        t_warm = TrainConfig(epochs=5, batch_size=4, base_lr=0.002,
                             seed=seed, warm_start=warm_path)
        _, rep_w, _ = train(train_set, test_set, t_warm, DESK_ARCH)
        warm.append(rep_w.test_mse[-1])
        t_cold = TrainConfig(epochs=5, batch_size=4, base_lr=0.002,
                             seed=seed)
        _, rep_c, _ = train(train_set, test_set, t_cold, DESK_ARCH)
        cold.append(rep_c.test_mse[-1])
    assert np.median(warm) < np.median(cold), \
        f"warm {sorted(warm)} vs cold {sorted(cold)}"


# ---------------------------------------------------------------------------
# 10: determinism
# ---------------------------------------------------------------------------

def test_criterion_10_cli_determinism(tmp_path, capsys):
    """The CLI pipeline rerun with --workers 1 and --workers 4 produces
    byte-identical samples, model containers and CSVs."""
    sweep_path = tmp_path / "sweep.json"
    sweep_path.write_text(json.dumps({
        "kind": "spheroid",
        "geometry": {"Rx": [0.15], "Ry": [0.15], "Rz": [0.15, 0.25, 0.05]},
        "theta": [30.0, 60.0, 30.0],
        "phi": [90.0, 90.0, 10.0],
        "mesh_fraction": 0.105,
    }))

    digests = []
    for workers in (1, 4):
        base = tmp_path / f"w{workers}"
        ds = str(base / "ds")
        model = str(base / "model")
        steps = [
            ["dataset-gen", "--sweep", str(sweep_path), "--out", ds,
             "--workers", str(workers)],
            ["dataset-split", "--manifest",
             os.path.join(ds, "manifest.json")],
            ["train", "--data", ds, "--epochs", "3", "--batch-size", "2",
             "--hidden", "8", "--gcn-layers", "1", "--kernel-hidden", "6",
             "--head-hidden", "4", "--workers", str(workers),
             "--out", model],
            ["predict", "--model", os.path.join(model, "model_best.gsp"),
             "--sample", os.path.join(ds, "samples", "s00000.gsb"),
             "--out", os.path.join(model, "pred.csv")],
        ]
        for argv in steps:
            assert cli_main(argv) == 0, argv
        capsys.readouterr()

        digest = {}
        for root, _, files in os.walk(base):
            for f in sorted(files):
                path = os.path.join(root, f)
                key = os.path.relpath(path, base)
                with open(path, "rb") as fh:
                    digest[key] = hashlib.sha256(fh.read()).hexdigest()
        digests.append(digest)

    assert set(digests[0]) == set(digests[1])
    for key in digests[0]:
        assert digests[0][key] == digests[1][key], key
